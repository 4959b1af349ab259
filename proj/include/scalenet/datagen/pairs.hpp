#pragma once

#include <Eigen/Dense>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "scalenet/core/image.hpp"
#include "scalenet/core/rng.hpp"
#include "scalenet/core/scale_ratio.hpp"

namespace scalenet::datagen {

enum class PairProvenance { synthetic_down, synthetic_up, annotated };

inline std::string to_string(PairProvenance p) {
  switch (p) {
    case PairProvenance::synthetic_down: return "synthetic-down";
    case PairProvenance::synthetic_up: return "synthetic-up";
    default: return "annotated";
  }
}

inline PairProvenance provenance_from_string(const std::string& s) {
  if (s == "synthetic-down") return PairProvenance::synthetic_down;
  if (s == "synthetic-up") return PairProvenance::synthetic_up;
  if (s == "annotated") return PairProvenance::annotated;
  throw std::invalid_argument("unknown provenance: " + s);
}

struct PasteRect {
  int x = 0, y = 0, w = 0, h = 0;
};

/// Everything needed to reconstruct the ground-truth correspondence of a
/// synthetic pair: where the content landed on each canvas, the original
/// content size, and (for zoom-in pairs) the center-crop window inside the
/// enlarged content.
struct PlacementMeta {
  PasteRect paste1;           // content rectangle in image 1
  PasteRect paste2;           // content rectangle in image 2
  int content_w = 0, content_h = 0;
  PasteRect crop;             // crop window in the upsampled content (zoom-in pairs)
  int up_w = 0, up_h = 0;     // upsampled content dims (zoom-in pairs)
};

struct SyntheticPair {
  Image image1;
  Image image2;
  ScaleRatio gt = ScaleRatio::identity();
  PairProvenance provenance = PairProvenance::synthetic_down;
  PlacementMeta meta;
};

namespace detail {

inline PasteRect random_placement(const Image& bg, int cw, int ch, Rng& rng) {
  if (cw > bg.width || ch > bg.height) throw std::invalid_argument("content larger than background");
  PasteRect r;
  r.w = cw;
  r.h = ch;
  r.x = rng.uniform_int(bg.width - cw + 1);
  r.y = rng.uniform_int(bg.height - ch + 1);
  return r;
}

inline void check_exponent(double m) {
  if (!(m >= 0.0 && m <= 7.0)) throw std::invalid_argument("scale exponent m must lie in [0, 7]");
}

}  // namespace detail

/// Scale pair via shrinking: the content appears at full size in one canvas
/// and at 2^-m of its size in the other. Returned order is
/// (canvas with shrunk content, canvas with full content) so that resizing
/// image 1 by the ground-truth ratio 2^m removes the scale difference.
inline SyntheticPair make_pair_downsample(const Image& content, const Image& bg1, const Image& bg2, double m,
                                          uint64_t seed) {
  detail::check_exponent(m);
  Rng rng(seed);
  const Image shrunk = resize_by_factor(content, std::exp2(-m));

  SyntheticPair out;
  out.provenance = PairProvenance::synthetic_down;
  out.gt = ScaleRatio::from_log2(m);
  out.meta.content_w = content.width;
  out.meta.content_h = content.height;

  out.image2 = bg1;
  Rng r2 = rng.derive(1);
  out.meta.paste2 = detail::random_placement(out.image2, content.width, content.height, r2);
  paste(out.image2, content, out.meta.paste2.y, out.meta.paste2.x);

  out.image1 = bg2;
  Rng r1 = rng.derive(2);
  out.meta.paste1 = detail::random_placement(out.image1, shrunk.width, shrunk.height, r1);
  paste(out.image1, shrunk, out.meta.paste1.y, out.meta.paste1.x);
  return out;
}

/// Scale pair via zooming in: the content is enlarged 2^m times and center
/// cropped back to its original pixel size. Returned order is
/// (canvas with full content, canvas with zoomed crop); the ground truth is
/// again 2^m for resizing image 1.
inline SyntheticPair make_pair_upsample(const Image& content, const Image& bg1, const Image& bg2, double m,
                                        uint64_t seed) {
  detail::check_exponent(m);
  Rng rng(seed);
  const Image up = resize_by_factor(content, std::exp2(m));
  const int cx = (up.width - content.width) / 2;
  const int cy = (up.height - content.height) / 2;
  const Image zoomed = crop(up, cy, cx, content.height, content.width);

  SyntheticPair out;
  out.provenance = PairProvenance::synthetic_up;
  out.gt = ScaleRatio::from_log2(m);
  out.meta.content_w = content.width;
  out.meta.content_h = content.height;
  out.meta.crop = {cx, cy, content.width, content.height};
  out.meta.up_w = up.width;
  out.meta.up_h = up.height;

  out.image1 = bg1;
  Rng r1 = rng.derive(1);
  out.meta.paste1 = detail::random_placement(out.image1, content.width, content.height, r1);
  paste(out.image1, content, out.meta.paste1.y, out.meta.paste1.x);

  out.image2 = bg2;
  Rng r2 = rng.derive(2);
  out.meta.paste2 = detail::random_placement(out.image2, zoomed.width, zoomed.height, r2);
  paste(out.image2, zoomed, out.meta.paste2.y, out.meta.paste2.x);
  return out;
}

/// Affine ground-truth warp from image-1 coordinates to image-2 coordinates
/// of a synthetic pair (valid inside the pasted content region).
inline Eigen::Matrix3d synthetic_gt_warp(const SyntheticPair& p) {
  const PlacementMeta& m = p.meta;
  Eigen::Matrix3d H = Eigen::Matrix3d::Identity();
  if (p.provenance == PairProvenance::synthetic_down) {
    // image1 holds the shrunk copy; growing it back onto the full content
    // inverts the resize map (src = (dst + 0.5) * in/out - 0.5)
    const double sx = static_cast<double>(m.content_w) / m.paste1.w;
    const double sy = static_cast<double>(m.content_h) / m.paste1.h;
    H(0, 0) = sx;
    H(1, 1) = sy;
    H(0, 2) = (0.5 - m.paste1.x) * sx - 0.5 + m.paste2.x;
    H(1, 2) = (0.5 - m.paste1.y) * sy - 0.5 + m.paste2.y;
  } else if (p.provenance == PairProvenance::synthetic_up) {
    // image1 holds the full content; image2 holds the center crop of the
    // enlarged content
    const double sx = static_cast<double>(m.up_w) / m.content_w;
    const double sy = static_cast<double>(m.up_h) / m.content_h;
    H(0, 0) = sx;
    H(1, 1) = sy;
    H(0, 2) = (0.5 - m.paste1.x) * sx - 0.5 - m.crop.x + m.paste2.x;
    H(1, 2) = (0.5 - m.paste1.y) * sy - 0.5 - m.crop.y + m.paste2.y;
  }
  return H;
}

/// Manifest record: image paths plus everything synthetic_gt_warp needs.
struct PairRecord {
  std::string path1;
  std::string path2;
  ScaleRatio gt = ScaleRatio::identity();
  PairProvenance provenance = PairProvenance::synthetic_down;
  PlacementMeta meta;
};

inline Eigen::Matrix3d record_gt_warp(const PairRecord& r) {
  SyntheticPair p;
  p.provenance = r.provenance;
  p.meta = r.meta;
  return synthetic_gt_warp(p);
}

inline std::string manifest_header() {
  return "# path1\tpath2\tgt_ratio\tprovenance\tp1x\tp1y\tp1w\tp1h\tp2x\tp2y\tp2w\tp2h\tcw\tch\tcropx\tcropy\tupw\tuph";
}

inline std::string to_line(const PairRecord& r) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), "%s\t%s\t%.17g\t%s\t%d\t%d\t%d\t%d\t%d\t%d\t%d\t%d\t%d\t%d\t%d\t%d\t%d\t%d",
                r.path1.c_str(), r.path2.c_str(), r.gt.value(), to_string(r.provenance).c_str(), r.meta.paste1.x,
                r.meta.paste1.y, r.meta.paste1.w, r.meta.paste1.h, r.meta.paste2.x, r.meta.paste2.y, r.meta.paste2.w,
                r.meta.paste2.h, r.meta.content_w, r.meta.content_h, r.meta.crop.x, r.meta.crop.y, r.meta.up_w,
                r.meta.up_h);
  return buf;
}

inline PairRecord parse_line(const std::string& line) {
  std::istringstream in(line);
  PairRecord r;
  std::string gt, prov;
  if (!(in >> r.path1 >> r.path2 >> gt >> prov >> r.meta.paste1.x >> r.meta.paste1.y >> r.meta.paste1.w >>
        r.meta.paste1.h >> r.meta.paste2.x >> r.meta.paste2.y >> r.meta.paste2.w >> r.meta.paste2.h >>
        r.meta.content_w >> r.meta.content_h >> r.meta.crop.x >> r.meta.crop.y >> r.meta.up_w >> r.meta.up_h))
    throw std::runtime_error("malformed manifest line: " + line);
  r.gt = ScaleRatio::from_value(std::stod(gt));
  r.provenance = provenance_from_string(prov);
  return r;
}

inline void write_manifest(const std::string& path, const std::vector<PairRecord>& records) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write manifest: " + path);
  f << manifest_header() << "\n";
  for (const auto& r : records) f << to_line(r) << "\n";
}

inline std::vector<PairRecord> read_manifest(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read manifest: " + path);
  std::vector<PairRecord> out;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty() || line[0] == '#') continue;
    out.push_back(parse_line(line));
  }
  return out;
}

/// Corpus abstraction: draws one image per call.
using CorpusSampler = std::function<Image(Rng&)>;

struct GenerateParams {
  int count = 0;
  double m_min = 0.0;
  double m_max = 7.0;
  uint64_t seed = 0;
};

/// Alternating shrink/zoom pairs (even indices shrink, odd zoom), scale
/// exponent uniform in [m_min, m_max]. Deterministic per (seed, index), so
/// generation may be distributed over disjoint index ranges.
inline std::vector<SyntheticPair> generate_pairs(const GenerateParams& p, const CorpusSampler& content_sampler,
                                                 const CorpusSampler& bg_sampler) {
  if (p.count < 0 || p.m_min < 0 || p.m_max > 7 || p.m_min > p.m_max)
    throw std::invalid_argument("generate_pairs: invalid parameters");
  std::vector<SyntheticPair> out;
  out.reserve(static_cast<size_t>(p.count));
  Rng base(p.seed);
  for (int i = 0; i < p.count; ++i) {
    Rng ri = base.derive(0xA000 + static_cast<uint64_t>(i));
    const double m = ri.uniform(p.m_min, p.m_max);
    Rng content_rng = ri.derive(1), bg_rng = ri.derive(2);
    const Image content = content_sampler(content_rng);
    const Image bg1 = bg_sampler(bg_rng);
    const Image bg2 = bg_sampler(bg_rng);
    const uint64_t pair_seed = ri.next_u64();
    out.push_back(i % 2 == 0 ? make_pair_downsample(content, bg1, bg2, m, pair_seed)
                             : make_pair_upsample(content, bg1, bg2, m, pair_seed));
  }
  return out;
}

}  // namespace scalenet::datagen
