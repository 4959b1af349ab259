#pragma once

#include <Eigen/Dense>
#include <array>
#include <cmath>
#include <stdexcept>

#include "scalenet/core/image.hpp"
#include "scalenet/core/rng.hpp"

namespace scalenet::training {

/// Corner displacements for a perspective jitter, in pixel units.
/// Corner order: top-left, top-right, bottom-right, bottom-left.
struct PerspectiveJitter {
  std::array<double, 4> dx{};
  std::array<double, 4> dy{};
};

namespace detail {

inline std::array<Eigen::Vector2d, 4> image_corners(int h, int w) {
  const double x1 = w - 1.0, y1 = h - 1.0;
  return {Eigen::Vector2d(0, 0), Eigen::Vector2d(x1, 0), Eigen::Vector2d(x1, y1), Eigen::Vector2d(0, y1)};
}

inline bool convex_quad(const std::array<Eigen::Vector2d, 4>& q) {
  double sign = 0.0;
  for (int i = 0; i < 4; ++i) {
    const Eigen::Vector2d a = q[(i + 1) % 4] - q[i];
    const Eigen::Vector2d b = q[(i + 2) % 4] - q[(i + 1) % 4];
    const double cross = a.x() * b.y() - a.y() * b.x();
    if (cross == 0.0) return false;
    if (sign == 0.0)
      sign = cross;
    else if (sign * cross < 0.0)
      return false;
  }
  return true;
}

}  // namespace detail

/// Uniform corner offsets within magnitude * (width, height); resampled
/// until the displaced quadrilateral is convex.
inline PerspectiveJitter sample_perspective_jitter(int h, int w, double magnitude, Rng& rng) {
  if (magnitude < 0.0 || magnitude > 0.1)
    throw std::invalid_argument("perspective jitter magnitude must lie in [0, 0.1]");
  const double mx = magnitude * w, my = magnitude * h;
  const auto corners = detail::image_corners(h, w);
  for (int attempt = 0; attempt < 64; ++attempt) {
    PerspectiveJitter j;
    for (int i = 0; i < 4; ++i) {
      j.dx[static_cast<size_t>(i)] = rng.uniform(-mx, mx);
      j.dy[static_cast<size_t>(i)] = rng.uniform(-my, my);
    }
    std::array<Eigen::Vector2d, 4> moved = corners;
    for (int i = 0; i < 4; ++i) moved[static_cast<size_t>(i)] += Eigen::Vector2d(j.dx[static_cast<size_t>(i)], j.dy[static_cast<size_t>(i)]);
    if (detail::convex_quad(moved)) return j;
  }
  return {};  // magnitude 0 or pathological draw streak: identity
}

/// Homography mapping the image corners to their displaced positions
/// (exact 4-point solve).
inline Eigen::Matrix3d homography_from_jitter(int h, int w, const PerspectiveJitter& j) {
  const auto src = detail::image_corners(h, w);
  Eigen::Matrix<double, 8, 8> A = Eigen::Matrix<double, 8, 8>::Zero();
  Eigen::Matrix<double, 8, 1> rhs;
  for (int i = 0; i < 4; ++i) {
    const double x = src[static_cast<size_t>(i)].x(), y = src[static_cast<size_t>(i)].y();
    const double u = x + j.dx[static_cast<size_t>(i)], v = y + j.dy[static_cast<size_t>(i)];
    A.row(2 * i) << x, y, 1, 0, 0, 0, -u * x, -u * y;
    A.row(2 * i + 1) << 0, 0, 0, x, y, 1, -v * x, -v * y;
    rhs(2 * i) = u;
    rhs(2 * i + 1) = v;
  }
  const Eigen::Matrix<double, 8, 1> hvec = A.fullPivLu().solve(rhs);
  Eigen::Matrix3d H;
  H << hvec(0), hvec(1), hvec(2), hvec(3), hvec(4), hvec(5), hvec(6), hvec(7), 1.0;
  return H;
}

inline Eigen::Vector2d apply_homography(const Eigen::Matrix3d& H, const Eigen::Vector2d& p) {
  const Eigen::Vector3d q = H * Eigen::Vector3d(p.x(), p.y(), 1.0);
  return {q.x() / q.z(), q.y() / q.z()};
}

/// Inverse-mapped bilinear warp; pixels pulled from outside the source are
/// black.
inline Image warp_perspective(const Image& img, const Eigen::Matrix3d& H) {
  const Eigen::Matrix3d Hinv = H.inverse();
  Image out(img.height, img.width);
  for (int i = 0; i < img.height; ++i) {
    for (int j = 0; j < img.width; ++j) {
      const Eigen::Vector2d s = apply_homography(Hinv, Eigen::Vector2d(j, i));
      const double fx = s.x(), fy = s.y();
      if (fx < 0 || fy < 0 || fx > img.width - 1 || fy > img.height - 1) continue;
      const int x0 = static_cast<int>(std::floor(fx)), y0 = static_cast<int>(std::floor(fy));
      const int x1 = std::min(x0 + 1, img.width - 1), y1 = std::min(y0 + 1, img.height - 1);
      const float wx = static_cast<float>(fx - x0), wy = static_cast<float>(fy - y0);
      for (int c = 0; c < 3; ++c) {
        const float top = img.at(y0, x0, c) * (1.f - wx) + img.at(y0, x1, c) * wx;
        const float bot = img.at(y1, x0, c) * (1.f - wx) + img.at(y1, x1, c) * wx;
        out.at(i, j, c) = top * (1.f - wy) + bot * wy;
      }
    }
  }
  return out;
}

/// Random small perspective transformation, deterministic given the seed.
/// Magnitude 0 returns the input unchanged.
inline Image random_perspective_augment(const Image& img, double magnitude, uint64_t seed) {
  if (magnitude == 0.0) return img;
  Rng rng(seed);
  const PerspectiveJitter j = sample_perspective_jitter(img.height, img.width, magnitude, rng);
  return warp_perspective(img, homography_from_jitter(img.height, img.width, j));
}

}  // namespace scalenet::training
