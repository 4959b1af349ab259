#pragma once

#include <Eigen/Dense>
#include <atomic>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "scalenet/core/tensor.hpp"

namespace scalenet::net {

/// Channel index of grid cell (i, j) in an h*w-channel correlation volume.
/// Row-major: k = i*w + j (0-based).
inline int volume_index(int i, int j, int w) { return i * w + j; }
inline int volume_row(int k, int w) { return k / w; }
inline int volume_col(int k, int w) { return k % w; }

template <typename T>
using MatX = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

namespace detail {

/// Counter for zero-norm locations replaced during feature normalization.
inline std::atomic<uint64_t>& zero_norm_replacements() {
  static std::atomic<uint64_t> n{0};
  return n;
}

}  // namespace detail

/// Exhaustive patch correlation: out(i,j,k) = <f1(i,j,:), f2(ik,jk,:)> with
/// k = volume_index(ik, jk, w). Inputs must share the shape h x w x c.
template <typename T>
Tensor<T> correlation_forward(const Tensor<T>& f1, const Tensor<T>& f2) {
  if (f1.rank() != 3 || !f1.same_shape(f2)) throw std::invalid_argument("correlation: shape mismatch");
  const int h = f1.dim(0), w = f1.dim(1), c = f1.dim(2);
  const int hw = h * w;
  Tensor<T> out({h, w, hw});
  for (int p = 0; p < hw; ++p) {
    const T* a = &f1.v[static_cast<size_t>(p) * c];
    T* orow = &out.v[static_cast<size_t>(p) * hw];
    for (int k = 0; k < hw; ++k) {
      const T* b = &f2.v[static_cast<size_t>(k) * c];
      T acc = T(0);
      for (int ch = 0; ch < c; ++ch) acc += a[ch] * b[ch];
      orow[k] = acc;
    }
  }
  return out;
}

/// Per-location max over channels (h x w x K -> h x w x 1). Optionally
/// records the winning channel per location.
template <typename T>
Tensor<T> channel_max_forward(const Tensor<T>& c, std::vector<int>* argmax = nullptr) {
  const int h = c.dim(0), w = c.dim(1), K = c.dim(2);
  Tensor<T> out({h, w, 1});
  if (argmax) argmax->assign(static_cast<size_t>(h) * w, 0);
  for (int p = 0; p < h * w; ++p) {
    const T* row = &c.v[static_cast<size_t>(p) * K];
    int best = 0;
    for (int k = 1; k < K; ++k)
      if (row[k] > row[best]) best = k;
    out.v[static_cast<size_t>(p)] = row[best];
    if (argmax) (*argmax)[static_cast<size_t>(p)] = best;
  }
  return out;
}

/// Per-channel max over all locations, reshaped onto the grid of the second
/// image (h x w x K -> h x w x 1, channel k lands at cell (k/w, k%w)).
/// Optionally records the winning location (flattened i*w+j) per channel.
template <typename T>
Tensor<T> spatial_max_grid_forward(const Tensor<T>& c, std::vector<int>* argmax = nullptr) {
  const int h = c.dim(0), w = c.dim(1), K = c.dim(2);
  if (K != h * w) throw std::invalid_argument("spatial_max_grid: channel count must equal h*w");
  Tensor<T> out({h, w, 1});
  if (argmax) argmax->assign(static_cast<size_t>(K), 0);
  for (int k = 0; k < K; ++k) {
    int best = 0;
    T bv = c.v[static_cast<size_t>(k)];
    for (int p = 1; p < h * w; ++p) {
      const T x = c.v[static_cast<size_t>(p) * K + k];
      if (x > bv) {
        bv = x;
        best = p;
      }
    }
    out.v[static_cast<size_t>(k)] = bv;  // cell (k/w, k%w) is flat index k
    if (argmax) (*argmax)[static_cast<size_t>(k)] = best;
  }
  return out;
}

/// Covisibility reweighting: out(i,j,k) = m2(ik,jk) * m1(i,j) * c(i,j,k).
/// m1 and m2 are h x w x 1 score maps; m2 is broadcast along space through
/// the volume index map, m1 along channels.
template <typename T>
Tensor<T> apply_covisibility_forward(const Tensor<T>& c, const Tensor<T>& m1, const Tensor<T>& m2) {
  const int h = c.dim(0), w = c.dim(1), K = c.dim(2);
  if (K != h * w || m1.dim(0) != h || m1.dim(1) != w || !m1.same_shape(m2))
    throw std::invalid_argument("apply_covisibility: shape mismatch");
  Tensor<T> out({h, w, K});
  for (int p = 0; p < h * w; ++p) {
    const T m1v = m1.v[static_cast<size_t>(p)];
    const T* crow = &c.v[static_cast<size_t>(p) * K];
    T* orow = &out.v[static_cast<size_t>(p) * K];
    for (int k = 0; k < K; ++k) orow[k] = m2.v[static_cast<size_t>(k)] * m1v * crow[k];
  }
  return out;
}

inline int conv_out_dim(int in, int k, int stride, int pad) { return (in + 2 * pad - k) / stride + 1; }

/// im2col for HWC input; one row per output location, columns ordered
/// (ki, kj, ic). Out-of-bounds taps are zero (zero padding).
template <typename T>
MatX<T> im2col(const Tensor<T>& x, int kh, int kw, int stride, int pad) {
  const int h = x.dim(0), w = x.dim(1), c = x.dim(2);
  const int oh = conv_out_dim(h, kh, stride, pad), ow = conv_out_dim(w, kw, stride, pad);
  MatX<T> col(oh * ow, kh * kw * c);
  col.setZero();
  for (int oi = 0; oi < oh; ++oi) {
    for (int oj = 0; oj < ow; ++oj) {
      T* dst = col.data() + (static_cast<int64_t>(oi) * ow + oj) * (kh * kw * c);
      for (int ki = 0; ki < kh; ++ki) {
        const int si = oi * stride + ki - pad;
        if (si < 0 || si >= h) continue;
        for (int kj = 0; kj < kw; ++kj) {
          const int sj = oj * stride + kj - pad;
          if (sj < 0 || sj >= w) continue;
          const T* src = &x.v[(static_cast<size_t>(si) * w + sj) * c];
          T* d = dst + (ki * kw + kj) * c;
          for (int ch = 0; ch < c; ++ch) d[ch] = src[ch];
        }
      }
    }
  }
  return col;
}

template <typename T>
void col2im_accum(const MatX<T>& dcol, int h, int w, int c, int kh, int kw, int stride, int pad, Tensor<T>& dx) {
  const int oh = conv_out_dim(h, kh, stride, pad), ow = conv_out_dim(w, kw, stride, pad);
  for (int oi = 0; oi < oh; ++oi) {
    for (int oj = 0; oj < ow; ++oj) {
      const T* src = dcol.data() + (static_cast<int64_t>(oi) * ow + oj) * (kh * kw * c);
      for (int ki = 0; ki < kh; ++ki) {
        const int si = oi * stride + ki - pad;
        if (si < 0 || si >= h) continue;
        for (int kj = 0; kj < kw; ++kj) {
          const int sj = oj * stride + kj - pad;
          if (sj < 0 || sj >= w) continue;
          T* d = &dx.v[(static_cast<size_t>(si) * w + sj) * c];
          const T* s = src + (ki * kw + kj) * c;
          for (int ch = 0; ch < c; ++ch) d[ch] += s[ch];
        }
      }
    }
  }
}

/// 2D convolution, zero padding. x: h x w x ic, w: kh x kw x ic x oc, b: oc.
template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& x, const Tensor<T>& wgt, const Tensor<T>& b, int stride, int pad) {
  const int kh = wgt.dim(0), kw = wgt.dim(1), ic = wgt.dim(2), oc = wgt.dim(3);
  if (x.dim(2) != ic) throw std::invalid_argument("conv2d: channel mismatch");
  const int oh = conv_out_dim(x.dim(0), kh, stride, pad), ow = conv_out_dim(x.dim(1), kw, stride, pad);
  if (oh <= 0 || ow <= 0) throw std::invalid_argument("conv2d: output would be empty");
  MatX<T> col = im2col(x, kh, kw, stride, pad);
  Eigen::Map<const MatX<T>> W(wgt.v.data(), kh * kw * ic, oc);
  Tensor<T> out({oh, ow, oc});
  Eigen::Map<MatX<T>> O(out.v.data(), oh * ow, oc);
  O.noalias() = col * W;
  for (int p = 0; p < oh * ow; ++p)
    for (int k = 0; k < oc; ++k) out.v[static_cast<size_t>(p) * oc + k] += b.v[static_cast<size_t>(k)];
  return out;
}

/// Gradients of conv2d_forward. Any of dx/dw/db may be null to skip.
template <typename T>
void conv2d_backward(const Tensor<T>& x, const Tensor<T>& wgt, const Tensor<T>& dout, int stride, int pad,
                     Tensor<T>* dx, Tensor<T>* dw, Tensor<T>* db) {
  const int kh = wgt.dim(0), kw = wgt.dim(1), ic = wgt.dim(2), oc = wgt.dim(3);
  const int oh = dout.dim(0), ow = dout.dim(1);
  Eigen::Map<const MatX<T>> dY(dout.v.data(), oh * ow, oc);
  if (db) {
    for (int p = 0; p < oh * ow; ++p)
      for (int k = 0; k < oc; ++k) db->v[static_cast<size_t>(k)] += dout.v[static_cast<size_t>(p) * oc + k];
  }
  if (dw) {
    MatX<T> col = im2col(x, kh, kw, stride, pad);
    Eigen::Map<MatX<T>> dW(dw->v.data(), kh * kw * ic, oc);
    dW.noalias() += col.transpose() * dY;
  }
  if (dx) {
    Eigen::Map<const MatX<T>> W(wgt.v.data(), kh * kw * ic, oc);
    MatX<T> dcol(oh * ow, kh * kw * ic);
    dcol.noalias() = dY * W.transpose();
    col2im_accum(dcol, x.dim(0), x.dim(1), ic, kh, kw, stride, pad, *dx);
  }
}

/// 2D max pooling with zero-free semantics (out-of-range taps ignored).
template <typename T>
Tensor<T> maxpool2d_forward(const Tensor<T>& x, int k, int stride, int pad, std::vector<int>* argmax = nullptr) {
  const int h = x.dim(0), w = x.dim(1), c = x.dim(2);
  const int oh = conv_out_dim(h, k, stride, pad), ow = conv_out_dim(w, k, stride, pad);
  Tensor<T> out({oh, ow, c});
  if (argmax) argmax->assign(out.v.size(), -1);
  for (int oi = 0; oi < oh; ++oi) {
    for (int oj = 0; oj < ow; ++oj) {
      for (int ch = 0; ch < c; ++ch) {
        T best = -std::numeric_limits<T>::infinity();
        int bid = -1;
        for (int ki = 0; ki < k; ++ki) {
          const int si = oi * stride + ki - pad;
          if (si < 0 || si >= h) continue;
          for (int kj = 0; kj < k; ++kj) {
            const int sj = oj * stride + kj - pad;
            if (sj < 0 || sj >= w) continue;
            const T v = x.at(si, sj, ch);
            if (v > best) {
              best = v;
              bid = (si * w + sj) * c + ch;
            }
          }
        }
        out.at(oi, oj, ch) = best;
        if (argmax) (*argmax)[(static_cast<size_t>(oi) * ow + oj) * c + ch] = bid;
      }
    }
  }
  return out;
}

/// Bilinear resize of an HWC feature map (same convention as image resize).
/// When `weights` is non-null the sampling taps are recorded for the
/// backward pass: per output location, 4 (index, weight) pairs per axis pair.
struct ResizeTap {
  int64_t src;
  double weight;
};

template <typename T>
Tensor<T> resize_bilinear_hwc(const Tensor<T>& x, int oh, int ow, std::vector<std::array<ResizeTap, 4>>* taps = nullptr) {
  const int h = x.dim(0), w = x.dim(1), c = x.dim(2);
  Tensor<T> out({oh, ow, c});
  if (taps) taps->assign(static_cast<size_t>(oh) * ow, {});
  const double sy = static_cast<double>(h) / oh;
  const double sx = static_cast<double>(w) / ow;
  for (int i = 0; i < oh; ++i) {
    double fy = (i + 0.5) * sy - 0.5;
    fy = std::clamp(fy, 0.0, static_cast<double>(h - 1));
    const int y0 = static_cast<int>(std::floor(fy));
    const int y1 = std::min(y0 + 1, h - 1);
    const T wy = static_cast<T>(fy - y0);
    for (int j = 0; j < ow; ++j) {
      double fx = (j + 0.5) * sx - 0.5;
      fx = std::clamp(fx, 0.0, static_cast<double>(w - 1));
      const int x0 = static_cast<int>(std::floor(fx));
      const int x1 = std::min(x0 + 1, w - 1);
      const T wx = static_cast<T>(fx - x0);
      const T w00 = (T(1) - wy) * (T(1) - wx), w01 = (T(1) - wy) * wx;
      const T w10 = wy * (T(1) - wx), w11 = wy * wx;
      const int64_t p00 = static_cast<int64_t>(y0) * w + x0, p01 = static_cast<int64_t>(y0) * w + x1;
      const int64_t p10 = static_cast<int64_t>(y1) * w + x0, p11 = static_cast<int64_t>(y1) * w + x1;
      T* o = &out.v[(static_cast<size_t>(i) * ow + j) * c];
      const T* s00 = &x.v[static_cast<size_t>(p00) * c];
      const T* s01 = &x.v[static_cast<size_t>(p01) * c];
      const T* s10 = &x.v[static_cast<size_t>(p10) * c];
      const T* s11 = &x.v[static_cast<size_t>(p11) * c];
      for (int ch = 0; ch < c; ++ch) o[ch] = w00 * s00[ch] + w01 * s01[ch] + w10 * s10[ch] + w11 * s11[ch];
      if (taps) {
        (*taps)[static_cast<size_t>(i) * ow + j] = {ResizeTap{p00, static_cast<double>(w00)}, ResizeTap{p01, static_cast<double>(w01)},
                                                    ResizeTap{p10, static_cast<double>(w10)}, ResizeTap{p11, static_cast<double>(w11)}};
      }
    }
  }
  return out;
}

/// Per-location L2 normalization of an h x w x c map. Zero-norm locations
/// are replaced with the uniform unit vector and counted through
/// detail::zero_norm_replacements(); `zero_mask` marks them for the backward
/// pass (their gradient is zero).
template <typename T>
Tensor<T> l2_normalize_locations(const Tensor<T>& x, std::vector<uint8_t>* zero_mask = nullptr, T eps = T(1e-12)) {
  const int h = x.dim(0), w = x.dim(1), c = x.dim(2);
  Tensor<T> out({h, w, c});
  if (zero_mask) zero_mask->assign(static_cast<size_t>(h) * w, 0);
  const T uniform = T(1) / std::sqrt(static_cast<T>(c));
  for (int p = 0; p < h * w; ++p) {
    const T* src = &x.v[static_cast<size_t>(p) * c];
    T* dst = &out.v[static_cast<size_t>(p) * c];
    T sq = T(0);
    for (int ch = 0; ch < c; ++ch) sq += src[ch] * src[ch];
    const T n = std::sqrt(sq);
    if (n < eps) {
      for (int ch = 0; ch < c; ++ch) dst[ch] = uniform;
      if (zero_mask) (*zero_mask)[static_cast<size_t>(p)] = 1;
      detail::zero_norm_replacements().fetch_add(1, std::memory_order_relaxed);
    } else {
      for (int ch = 0; ch < c; ++ch) dst[ch] = src[ch] / n;
    }
  }
  return out;
}

}  // namespace scalenet::net
