#pragma once

#include <array>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <utility>
#include <vector>

#include "scalenet/net/ops.hpp"

namespace scalenet::net {

/// Reverse-mode autodiff over Tensor<T>. Build a graph per forward pass,
/// call backward() on a scalar output; parameter leaves accumulate their
/// gradients into externally owned tensors. Single-threaded by design; use
/// one Tape per concurrent evaluation.
template <typename T>
class Tape {
 public:
  using Var = int;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  const Tensor<T>& val(Var v) const { return nodes_[static_cast<size_t>(v)].val; }

  Tensor<T>& grad(Var v) {
    Node& n = nodes_[static_cast<size_t>(v)];
    if (n.grad.v.empty()) n.grad = Tensor<T>::zeros(n.val.shape);
    return n.grad;
  }

  Var input(Tensor<T> value) { return make(std::move(value)); }

  /// Leaf bound to external parameter storage; backward() adds into *gout.
  Var param(const Tensor<T>& value, Tensor<T>* gout) {
    Var v = make(value);
    nodes_[static_cast<size_t>(v)].external_grad = gout;
    return v;
  }

  Var add(Var a, Var b) {
    if (!val(a).same_shape(val(b))) throw std::invalid_argument("tape add: shape mismatch");
    Tensor<T> out = val(a);
    for (int64_t i = 0; i < out.size(); ++i) out[i] += val(b)[i];
    Var v = make(std::move(out));
    set_back(v, [this, v, a, b] {
      accum(a, grad(v));
      accum(b, grad(v));
    });
    return v;
  }

  /// a*x + b with scalar constants.
  Var affine(Var x, T a, T b) {
    Tensor<T> out = val(x);
    for (int64_t i = 0; i < out.size(); ++i) out[i] = a * out[i] + b;
    Var v = make(std::move(out));
    set_back(v, [this, v, x, a] {
      Tensor<T>& g = grad(v);
      Tensor<T>& gx = grad(x);
      for (int64_t i = 0; i < g.size(); ++i) gx[i] += a * g[i];
    });
    return v;
  }

  /// Elementwise product of same-shape tensors.
  Var mul(Var a, Var b) {
    if (!val(a).same_shape(val(b))) throw std::invalid_argument("tape mul: shape mismatch");
    Tensor<T> out = val(a);
    for (int64_t i = 0; i < out.size(); ++i) out[i] *= val(b)[i];
    Var v = make(std::move(out));
    set_back(v, [this, v, a, b] {
      Tensor<T>& g = grad(v);
      {
        Tensor<T>& ga = grad(a);
        const Tensor<T>& vb = val(b);
        for (int64_t i = 0; i < g.size(); ++i) ga[i] += g[i] * vb[i];
      }
      {
        Tensor<T>& gb = grad(b);
        const Tensor<T>& va = val(a);
        for (int64_t i = 0; i < g.size(); ++i) gb[i] += g[i] * va[i];
      }
    });
    return v;
  }

  /// x scaled by a trainable 1-element tensor.
  Var scale_by(Var x, Var s) {
    if (val(s).size() != 1) throw std::invalid_argument("tape scale_by: scale must be a single element");
    const T sv = val(s)[0];
    Tensor<T> out = val(x);
    for (int64_t i = 0; i < out.size(); ++i) out[i] *= sv;
    Var v = make(std::move(out));
    set_back(v, [this, v, x, s, sv] {
      Tensor<T>& g = grad(v);
      Tensor<T>& gx = grad(x);
      const Tensor<T>& vx = val(x);
      T ds = T(0);
      for (int64_t i = 0; i < g.size(); ++i) {
        gx[i] += sv * g[i];
        ds += vx[i] * g[i];
      }
      grad(s)[0] += ds;
    });
    return v;
  }

  Var square(Var x) {
    Tensor<T> out = val(x);
    for (int64_t i = 0; i < out.size(); ++i) out[i] *= out[i];
    Var v = make(std::move(out));
    set_back(v, [this, v, x] {
      Tensor<T>& g = grad(v);
      Tensor<T>& gx = grad(x);
      const Tensor<T>& vx = val(x);
      for (int64_t i = 0; i < g.size(); ++i) gx[i] += T(2) * vx[i] * g[i];
    });
    return v;
  }

  Var sum_all(Var x) {
    T acc = T(0);
    for (int64_t i = 0; i < val(x).size(); ++i) acc += val(x)[i];
    Tensor<T> out({1});
    out[0] = acc;
    Var v = make(std::move(out));
    set_back(v, [this, v, x] {
      const T g = grad(v)[0];
      Tensor<T>& gx = grad(x);
      for (int64_t i = 0; i < gx.size(); ++i) gx[i] += g;
    });
    return v;
  }

  Var relu(Var x) {
    Tensor<T> out = val(x);
    for (int64_t i = 0; i < out.size(); ++i)
      if (out[i] < T(0)) out[i] = T(0);
    Var v = make(std::move(out));
    set_back(v, [this, v, x] {
      Tensor<T>& g = grad(v);
      Tensor<T>& gx = grad(x);
      const Tensor<T>& vx = val(x);
      for (int64_t i = 0; i < g.size(); ++i)
        if (vx[i] > T(0)) gx[i] += g[i];
    });
    return v;
  }

  Var sigmoid(Var x) {
    Tensor<T> out = val(x);
    for (int64_t i = 0; i < out.size(); ++i) out[i] = T(1) / (T(1) + std::exp(-out[i]));
    Var v = make(std::move(out));
    set_back(v, [this, v, x] {
      Tensor<T>& g = grad(v);
      Tensor<T>& gx = grad(x);
      const Tensor<T>& y = val(v);
      for (int64_t i = 0; i < g.size(); ++i) gx[i] += g[i] * y[i] * (T(1) - y[i]);
    });
    return v;
  }

  Var conv2d(Var x, Var w, Var b, int stride, int pad) {
    Var v = make(conv2d_forward(val(x), val(w), val(b), stride, pad));
    set_back(v, [this, v, x, w, b, stride, pad] {
      conv2d_backward(val(x), val(w), grad(v), stride, pad, &grad(x), &grad(w), &grad(b));
    });
    return v;
  }

  Var maxpool2d(Var x, int k, int stride, int pad) {
    auto argmax = std::make_shared<std::vector<int>>();
    Var v = make(maxpool2d_forward(val(x), k, stride, pad, argmax.get()));
    set_back(v, [this, v, x, argmax] {
      Tensor<T>& g = grad(v);
      Tensor<T>& gx = grad(x);
      for (int64_t i = 0; i < g.size(); ++i) {
        const int src = (*argmax)[static_cast<size_t>(i)];
        if (src >= 0) gx[src] += g[i];
      }
    });
    return v;
  }

  Var resize_bilinear(Var x, int oh, int ow) {
    auto taps = std::make_shared<std::vector<std::array<ResizeTap, 4>>>();
    Var v = make(resize_bilinear_hwc(val(x), oh, ow, taps.get()));
    set_back(v, [this, v, x, taps] {
      Tensor<T>& g = grad(v);
      Tensor<T>& gx = grad(x);
      const int c = val(v).dim(2);
      const int n = static_cast<int>(taps->size());
      for (int p = 0; p < n; ++p) {
        const T* gsrc = &g.v[static_cast<size_t>(p) * c];
        for (const ResizeTap& t : (*taps)[static_cast<size_t>(p)]) {
          if (t.weight == 0.0) continue;
          T* d = &gx.v[static_cast<size_t>(t.src) * c];
          const T tw = static_cast<T>(t.weight);
          for (int ch = 0; ch < c; ++ch) d[ch] += tw * gsrc[ch];
        }
      }
    });
    return v;
  }

  Var l2_normalize_locations(Var x) {
    auto zero_mask = std::make_shared<std::vector<uint8_t>>();
    Var v = make(net::l2_normalize_locations(val(x), zero_mask.get()));
    set_back(v, [this, v, x, zero_mask] {
      const Tensor<T>& vx = val(x);
      const Tensor<T>& y = val(v);
      Tensor<T>& g = grad(v);
      Tensor<T>& gx = grad(x);
      const int c = vx.dim(2);
      const int hw = vx.dim(0) * vx.dim(1);
      for (int p = 0; p < hw; ++p) {
        if ((*zero_mask)[static_cast<size_t>(p)]) continue;  // replaced location, treated as constant
        const T* xp = &vx.v[static_cast<size_t>(p) * c];
        const T* yp = &y.v[static_cast<size_t>(p) * c];
        const T* gp = &g.v[static_cast<size_t>(p) * c];
        T* d = &gx.v[static_cast<size_t>(p) * c];
        T sq = T(0), dot = T(0);
        for (int ch = 0; ch < c; ++ch) {
          sq += xp[ch] * xp[ch];
          dot += yp[ch] * gp[ch];
        }
        const T inv_n = T(1) / std::sqrt(sq);
        for (int ch = 0; ch < c; ++ch) d[ch] += inv_n * (gp[ch] - yp[ch] * dot);
      }
    });
    return v;
  }

  Var correlation(Var f1, Var f2) {
    Var v = make(correlation_forward(val(f1), val(f2)));
    set_back(v, [this, v, f1, f2] {
      const Tensor<T>& a = val(f1);
      const Tensor<T>& b = val(f2);
      Tensor<T>& g = grad(v);
      Tensor<T>& ga = grad(f1);
      Tensor<T>& gb = grad(f2);
      const int c = a.dim(2);
      const int hw = a.dim(0) * a.dim(1);
      for (int p = 0; p < hw; ++p) {
        const T* gp = &g.v[static_cast<size_t>(p) * hw];
        const T* ap = &a.v[static_cast<size_t>(p) * c];
        T* dap = &ga.v[static_cast<size_t>(p) * c];
        for (int k = 0; k < hw; ++k) {
          const T gk = gp[k];
          if (gk == T(0)) continue;
          const T* bk = &b.v[static_cast<size_t>(k) * c];
          T* dbk = &gb.v[static_cast<size_t>(k) * c];
          for (int ch = 0; ch < c; ++ch) {
            dap[ch] += gk * bk[ch];
            dbk[ch] += gk * ap[ch];
          }
        }
      }
    });
    return v;
  }

  Var channel_max(Var x) {
    auto argmax = std::make_shared<std::vector<int>>();
    Var v = make(channel_max_forward(val(x), argmax.get()));
    set_back(v, [this, v, x, argmax] {
      Tensor<T>& g = grad(v);
      Tensor<T>& gx = grad(x);
      const int K = val(x).dim(2);
      for (size_t p = 0; p < argmax->size(); ++p) gx.v[p * K + (*argmax)[p]] += g.v[p];
    });
    return v;
  }

  Var spatial_max_grid(Var x) {
    auto argmax = std::make_shared<std::vector<int>>();
    Var v = make(spatial_max_grid_forward(val(x), argmax.get()));
    set_back(v, [this, v, x, argmax] {
      Tensor<T>& g = grad(v);
      Tensor<T>& gx = grad(x);
      const int K = val(x).dim(2);
      for (int k = 0; k < K; ++k) gx.v[static_cast<size_t>((*argmax)[static_cast<size_t>(k)]) * K + k] += g.v[static_cast<size_t>(k)];
    });
    return v;
  }

  /// Covisibility reweighting of a correlation volume by two h x w x 1 masks.
  Var apply_covisibility(Var c, Var m1, Var m2) {
    Var v = make(apply_covisibility_forward(val(c), val(m1), val(m2)));
    set_back(v, [this, v, c, m1, m2] {
      const Tensor<T>& vc = val(c);
      const Tensor<T>& v1 = val(m1);
      const Tensor<T>& v2 = val(m2);
      Tensor<T>& g = grad(v);
      Tensor<T>& gc = grad(c);
      Tensor<T>& g1 = grad(m1);
      Tensor<T>& g2 = grad(m2);
      const int hw = vc.dim(0) * vc.dim(1);
      const int K = vc.dim(2);
      for (int p = 0; p < hw; ++p) {
        const T m1v = v1.v[static_cast<size_t>(p)];
        const T* cp = &vc.v[static_cast<size_t>(p) * K];
        const T* gp = &g.v[static_cast<size_t>(p) * K];
        T* gcp = &gc.v[static_cast<size_t>(p) * K];
        T acc1 = T(0);
        for (int k = 0; k < K; ++k) {
          const T m2v = v2.v[static_cast<size_t>(k)];
          gcp[k] += m2v * m1v * gp[k];
          acc1 += m2v * cp[k] * gp[k];
          g2.v[static_cast<size_t>(k)] += m1v * cp[k] * gp[k];
        }
        g1.v[static_cast<size_t>(p)] += acc1;
      }
    });
    return v;
  }

  /// Global average pool: h x w x c -> c.
  Var global_avg_pool(Var x) {
    const Tensor<T>& vx = val(x);
    const int hw = vx.dim(0) * vx.dim(1), c = vx.dim(2);
    Tensor<T> out({c});
    for (int p = 0; p < hw; ++p)
      for (int ch = 0; ch < c; ++ch) out[ch] += vx.v[static_cast<size_t>(p) * c + ch];
    const T inv = T(1) / static_cast<T>(hw);
    for (int ch = 0; ch < c; ++ch) out[ch] *= inv;
    Var v = make(std::move(out));
    set_back(v, [this, v, x, hw, c, inv] {
      Tensor<T>& g = grad(v);
      Tensor<T>& gx = grad(x);
      for (int p = 0; p < hw; ++p)
        for (int ch = 0; ch < c; ++ch) gx.v[static_cast<size_t>(p) * c + ch] += inv * g[ch];
    });
    return v;
  }

  /// Fully connected layer: x is a length-n vector, w is n x d, b is d.
  Var fully_connected(Var x, Var w, Var b) {
    const Tensor<T>& vx = val(x);
    const Tensor<T>& vw = val(w);
    const int n = static_cast<int>(vx.size()), d = vw.dim(1);
    if (vw.dim(0) != n || val(b).size() != d) throw std::invalid_argument("fully_connected: shape mismatch");
    Tensor<T> out({d});
    for (int j = 0; j < d; ++j) out[j] = val(b)[j];
    for (int i = 0; i < n; ++i) {
      const T xi = vx[i];
      const T* wr = &vw.v[static_cast<size_t>(i) * d];
      for (int j = 0; j < d; ++j) out[j] += xi * wr[j];
    }
    Var v = make(std::move(out));
    set_back(v, [this, v, x, w, b, n, d] {
      const Tensor<T>& g = grad(v);
      const Tensor<T>& vx2 = val(x);
      const Tensor<T>& vw2 = val(w);
      Tensor<T>& gx = grad(x);
      Tensor<T>& gw = grad(w);
      Tensor<T>& gb = grad(b);
      for (int j = 0; j < d; ++j) gb[j] += g[j];
      for (int i = 0; i < n; ++i) {
        const T* wr = &vw2.v[static_cast<size_t>(i) * d];
        T* gwr = &gw.v[static_cast<size_t>(i) * d];
        T acc = T(0);
        for (int j = 0; j < d; ++j) {
          acc += wr[j] * g[j];
          gwr[j] += vx2[i] * g[j];
        }
        gx[i] += acc;
      }
    });
    return v;
  }

  /// Runs reverse accumulation from a scalar output.
  void backward(Var out) {
    if (val(out).size() != 1) throw std::invalid_argument("backward: output must be scalar");
    grad(out)[0] = T(1);
    for (int i = out; i >= 0; --i) {
      Node& n = nodes_[static_cast<size_t>(i)];
      if (n.back && !n.grad.v.empty()) n.back();
    }
  }

 private:
  struct Node {
    Tensor<T> val;
    Tensor<T> grad;
    std::function<void()> back;
    Tensor<T>* external_grad = nullptr;
  };

  Var make(Tensor<T> v) {
    nodes_.push_back(Node{std::move(v), {}, nullptr, nullptr});
    return static_cast<Var>(nodes_.size() - 1);
  }

  void set_back(Var v, std::function<void()> f) { nodes_[static_cast<size_t>(v)].back = std::move(f); }

  // Accumulate into a node's grad buffer.
  void accum(Var x, const Tensor<T>& g) {
    Tensor<T>& gx = grad(x);
    for (int64_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  }


  std::vector<Node> nodes_;


 public:
  /// Adds every parameter leaf's accumulated gradient into its bound storage.
  /// Called once after backward().
  void export_param_grads() {
    for (Node& n : nodes_) {
      if (n.external_grad && !n.grad.v.empty()) {
        for (int64_t i = 0; i < n.grad.size(); ++i) (*n.external_grad)[i] += n.grad[i];
      }
    }
  }
};

}  // namespace scalenet::net
