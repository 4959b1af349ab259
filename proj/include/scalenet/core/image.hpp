#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "scalenet/core/tensor.hpp"

namespace scalenet {

/// RGB raster, intensities in [0,1], HWC layout.
struct Image {
  int height = 0;
  int width = 0;
  std::vector<float> px;  // height * width * 3

  Image() = default;
  Image(int h, int w, float fill = 0.f) : height(h), width(w) {
    if (h <= 0 || w <= 0) throw std::invalid_argument("Image: dimensions must be positive");
    px.assign(static_cast<size_t>(h) * w * 3, fill);
  }

  float& at(int i, int j, int c) { return px[(static_cast<size_t>(i) * width + j) * 3 + c]; }
  const float& at(int i, int j, int c) const { return px[(static_cast<size_t>(i) * width + j) * 3 + c]; }

  bool valid_intensities() const {
    for (float x : px)
      if (!(x >= 0.f && x <= 1.f)) return false;
    return true;
  }
};

enum class Rounding { half_up, down, up };

inline int round_dim(double x, Rounding policy) {
  double r;
  switch (policy) {
    case Rounding::half_up: r = std::floor(x + 0.5); break;
    case Rounding::down: r = std::floor(x); break;
    default: r = std::ceil(x); break;
  }
  return static_cast<int>(r);
}

/// Output dimension for resizing n by `factor` under the rounding policy.
inline int scaled_dim(int n, double factor, Rounding policy = Rounding::half_up) {
  int d = round_dim(static_cast<double>(n) * factor, policy);
  return std::max(d, 1);
}

/// Bilinear resize with the half-pixel-center convention
/// (src = (dst + 0.5) * in/out - 0.5, edges clamped). A factor that leaves
/// the dimensions unchanged returns the input bit-exactly.
inline Image resize_bilinear(const Image& img, int out_h, int out_w) {
  if (out_h <= 0 || out_w <= 0) throw std::invalid_argument("resize_bilinear: output dims must be positive");
  if (out_h == img.height && out_w == img.width) return img;
  Image out(out_h, out_w);
  const double sy = static_cast<double>(img.height) / out_h;
  const double sx = static_cast<double>(img.width) / out_w;
  for (int i = 0; i < out_h; ++i) {
    double fy = (i + 0.5) * sy - 0.5;
    fy = std::clamp(fy, 0.0, static_cast<double>(img.height - 1));
    const int y0 = static_cast<int>(std::floor(fy));
    const int y1 = std::min(y0 + 1, img.height - 1);
    const float wy = static_cast<float>(fy - y0);
    for (int j = 0; j < out_w; ++j) {
      double fx = (j + 0.5) * sx - 0.5;
      fx = std::clamp(fx, 0.0, static_cast<double>(img.width - 1));
      const int x0 = static_cast<int>(std::floor(fx));
      const int x1 = std::min(x0 + 1, img.width - 1);
      const float wx = static_cast<float>(fx - x0);
      for (int c = 0; c < 3; ++c) {
        const float top = img.at(y0, x0, c) * (1.f - wx) + img.at(y0, x1, c) * wx;
        const float bot = img.at(y1, x0, c) * (1.f - wx) + img.at(y1, x1, c) * wx;
        out.at(i, j, c) = top * (1.f - wy) + bot * wy;
      }
    }
  }
  return out;
}

inline Image resize_by_factor(const Image& img, double factor, Rounding policy = Rounding::half_up) {
  if (!(factor > 0.0)) throw std::invalid_argument("resize_by_factor: factor must be positive");
  return resize_bilinear(img, scaled_dim(img.height, factor, policy), scaled_dim(img.width, factor, policy));
}

struct ImagePyramid {
  Image up;    // 2x
  Image orig;  // 1x
  Image down;  // 0.5x
};

/// Three-level pyramid (2x, 1x, 0.5x) with bilinear resampling.
/// `min_down_dim` guards against degenerate inputs: the halved level must
/// keep both dimensions at or above it.
inline ImagePyramid build_three_level_pyramid(const Image& img, Rounding policy = Rounding::half_up,
                                              int min_down_dim = 32) {
  const int dh = scaled_dim(img.height, 0.5, policy);
  const int dw = scaled_dim(img.width, 0.5, policy);
  if (dh < min_down_dim || dw < min_down_dim)
    throw std::invalid_argument("build_three_level_pyramid: image smaller than " + std::to_string(min_down_dim) +
                                "px after downsampling");
  ImagePyramid p;
  p.up = resize_bilinear(img, scaled_dim(img.height, 2.0, policy), scaled_dim(img.width, 2.0, policy));
  p.orig = img;
  p.down = resize_bilinear(img, dh, dw);
  return p;
}

inline Image crop(const Image& img, int y, int x, int h, int w) {
  if (y < 0 || x < 0 || y + h > img.height || x + w > img.width)
    throw std::invalid_argument("crop: rectangle out of bounds");
  Image out(h, w);
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j)
      for (int c = 0; c < 3; ++c) out.at(i, j, c) = img.at(y + i, x + j, c);
  return out;
}

/// Pastes `src` into `dst` with its top-left corner at (y, x).
inline void paste(Image& dst, const Image& src, int y, int x) {
  if (y < 0 || x < 0 || y + src.height > dst.height || x + src.width > dst.width)
    throw std::invalid_argument("paste: source does not fit inside destination");
  for (int i = 0; i < src.height; ++i)
    for (int j = 0; j < src.width; ++j)
      for (int c = 0; c < 3; ++c) dst.at(y + i, x + j, c) = src.at(i, j, c);
}

/// HWC tensor view of the image, optionally centered around zero.
template <typename T>
Tensor<T> image_to_tensor(const Image& img, T offset = T(0)) {
  Tensor<T> t({img.height, img.width, 3});
  for (size_t i = 0; i < img.px.size(); ++i) t.v[i] = static_cast<T>(img.px[i]) + offset;
  return t;
}

}  // namespace scalenet
