#pragma once

#include <algorithm>
#include <cmath>

#include "scalenet/core/image.hpp"
#include "scalenet/core/rng.hpp"

namespace scalenet::datagen {

/// Procedural stand-in for a photo corpus: multi-octave value noise plus a
/// handful of hard-edged shapes, so that structure exists across scales and
/// gradient-based detectors have something to latch onto.
inline Image make_texture_image(int h, int w, uint64_t seed) {
  Rng rng(seed);
  Image img(h, w, 0.f);

  // layered value noise, coarse to fine
  double amplitude = 1.0, total = 0.0;
  for (int cells = 4; cells <= std::max(h, w); cells *= 2) {
    Image grid(cells, cells);
    for (auto& p : grid.px) p = static_cast<float>(rng.uniform());
    const Image layer = resize_bilinear(grid, h, w);
    for (size_t i = 0; i < img.px.size(); ++i) img.px[i] += static_cast<float>(amplitude) * layer.px[i];
    total += amplitude;
    amplitude *= 0.55;
  }
  for (auto& p : img.px) p /= static_cast<float>(total);

  // hard-edged rectangles and ellipses
  const int shapes = 8 + rng.uniform_int(8);
  for (int s = 0; s < shapes; ++s) {
    const bool ellipse = rng.uniform() < 0.5;
    const int sw = std::max(3, static_cast<int>(rng.uniform(0.05, 0.35) * w));
    const int sh = std::max(3, static_cast<int>(rng.uniform(0.05, 0.35) * h));
    const int x0 = rng.uniform_int(std::max(1, w - sw));
    const int y0 = rng.uniform_int(std::max(1, h - sh));
    float col[3];
    for (float& c : col) c = static_cast<float>(rng.uniform());
    const double cx = x0 + sw / 2.0, cy = y0 + sh / 2.0;
    for (int i = y0; i < std::min(h, y0 + sh); ++i) {
      for (int j = x0; j < std::min(w, x0 + sw); ++j) {
        if (ellipse) {
          const double dx = (j - cx) / (sw / 2.0), dy = (i - cy) / (sh / 2.0);
          if (dx * dx + dy * dy > 1.0) continue;
        }
        for (int c = 0; c < 3; ++c) img.at(i, j, c) = 0.35f * img.at(i, j, c) + 0.65f * col[c];
      }
    }
  }

  for (auto& p : img.px) p = std::clamp(p, 0.f, 1.f);
  return img;
}

}  // namespace scalenet::datagen
