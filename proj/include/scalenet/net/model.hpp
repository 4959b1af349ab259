#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <utility>

#include "scalenet/core/image.hpp"
#include "scalenet/core/rng.hpp"
#include "scalenet/core/scale_ratio.hpp"
#include "scalenet/net/encoder.hpp"
#include "scalenet/net/ops.hpp"
#include "scalenet/net/params.hpp"
#include "scalenet/net/tape.hpp"

namespace scalenet::net {

/// The two 5x5 covisibility attention filters with their biases (52 scalars).
template <typename T>
struct AttentionParams {
  Tensor<T> cab1_w{{5, 5, 1, 1}};
  Tensor<T> cab1_b{{1}};
  Tensor<T> cab2_w{{5, 5, 1, 1}};
  Tensor<T> cab2_b{{1}};
};

/// Covisibility score maps for both images of a pair, eager evaluation.
/// m1 refines the per-location channel max of the volume; m2 refines the
/// per-channel spatial max placed back onto the second image's grid.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> covisibility_masks(const Tensor<T>& c12, const AttentionParams<T>& p) {
  Tensor<T> s1 = channel_max_forward(c12);
  Tensor<T> m1 = conv2d_forward(s1, p.cab1_w, p.cab1_b, 1, 2);
  for (auto& x : m1.v) x = T(1) / (T(1) + std::exp(-x));
  Tensor<T> s2 = spatial_max_grid_forward(c12);
  Tensor<T> m2 = conv2d_forward(s2, p.cab2_w, p.cab2_b, 1, 2);
  for (auto& x : m2.v) x = T(1) / (T(1) + std::exp(-x));
  return {std::move(m1), std::move(m2)};
}

/// Multi-scale feature fusion over any encoder callable: encode the three
/// pyramid levels, resample the outer levels onto the original level's grid,
/// take the weighted sum and L2-normalize per location. `encode` maps
/// (tape, image) to a feature-map var; w1/w2/w3 are 1-element vars.
template <typename T, typename EncodeFn>
typename Tape<T>::Var fused_features_graph(Tape<T>& tape, const Image& img, const EncodeFn& encode,
                                           typename Tape<T>::Var w1, typename Tape<T>::Var w2,
                                           typename Tape<T>::Var w3) {
  ImagePyramid pyr = build_three_level_pyramid(img);
  auto f_hr = encode(tape, pyr.up);
  auto f_or = encode(tape, pyr.orig);
  auto f_lr = encode(tape, pyr.down);
  const int h = tape.val(f_or).dim(0), w = tape.val(f_or).dim(1);
  auto sum = tape.add(tape.add(tape.scale_by(tape.resize_bilinear(f_hr, h, w), w1), tape.scale_by(f_or, w2)),
                      tape.scale_by(tape.resize_bilinear(f_lr, h, w), w3));
  return tape.l2_normalize_locations(sum);
}

/// Scale ratio estimation network: fused multi-scale features for each
/// image, exhaustive patch correlation, covisibility attention, and a small
/// regressor emitting log2 of the predicted ratio. Immutable after
/// construction or loading; concurrent read-only inference is safe.
template <typename T>
class ScaleRatioNet {
 public:
  struct Options {
    EncoderConfig encoder;
    int input_resolution = 640;
    bool use_covisibility_attention = true;
    int regressor_conv_channels = 64;
    int regressor_fc_width = 32;
  };

  using Var = typename Tape<T>::Var;

  ScaleRatioNet() = default;

  static ScaleRatioNet create(Options opts, uint64_t seed) {
    if (opts.encoder.id == EncoderId::pretrained_deep) {
      opts.encoder.output_channels = 256;
      opts.encoder.downsampling_stride = 16;
    }
    opts.encoder.validate();
    if (opts.input_resolution < 64 || opts.input_resolution % (2 * opts.encoder.downsampling_stride) != 0)
      throw std::invalid_argument("input_resolution must be >= 64 and divisible by twice the encoder stride");

    ScaleRatioNet m;
    m.opts_ = opts;
    m.encoder_ = Encoder<T>(opts.encoder);
    Rng rng(seed);
    m.encoder_.register_params(m.params_, rng);
    for (const char* n : {"fusion.w1", "fusion.w2", "fusion.w3"}) {
      Tensor<T> w({1});
      w[0] = T(1) / T(3);
      m.params_.add(n, std::move(w));
    }
    Rng arng = rng.derive(1);
    m.params_.add("attention.cab1.w", detail::he_conv_init<T>(5, 5, 1, 1, arng));
    m.params_.add("attention.cab1.b", Tensor<T>({1}));
    m.params_.add("attention.cab2.w", detail::he_conv_init<T>(5, 5, 1, 1, arng));
    m.params_.add("attention.cab2.b", Tensor<T>({1}));

    const int hw = m.grid_size() * m.grid_size();
    const int C = opts.regressor_conv_channels, F = opts.regressor_fc_width;
    Rng rrng = rng.derive(2);
    m.params_.add("regressor.conv0.w", detail::he_conv_init<T>(3, 3, hw, C, rrng));
    m.params_.add("regressor.conv0.b", Tensor<T>({C}));
    m.params_.add("regressor.conv1.w", detail::he_conv_init<T>(3, 3, C, C, rrng));
    m.params_.add("regressor.conv1.b", Tensor<T>({C}));
    Tensor<T> fc0({C, F});
    const double fstd = std::sqrt(2.0 / C);
    for (auto& x : fc0.v) x = static_cast<T>(rrng.normal(0.0, fstd));
    m.params_.add("regressor.fc0.w", std::move(fc0));
    m.params_.add("regressor.fc0.b", Tensor<T>({F}));
    m.params_.add("regressor.fc1.w", Tensor<T>({F, 1}));  // zero init: training starts at ratio 1
    m.params_.add("regressor.fc1.b", Tensor<T>({1}));
    return m;
  }

  const Options& options() const { return opts_; }
  int input_resolution() const { return opts_.input_resolution; }
  int grid_size() const { return opts_.input_resolution / opts_.encoder.downsampling_stride; }
  ParamStore<T>& params() { return params_; }
  const ParamStore<T>& params() const { return params_; }
  const Encoder<T>& encoder() const { return encoder_; }

  AttentionParams<T> attention_params() const {
    AttentionParams<T> p;
    p.cab1_w = params_.value("attention.cab1.w");
    p.cab1_b = params_.value("attention.cab1.b");
    p.cab2_w = params_.value("attention.cab2.w");
    p.cab2_b = params_.value("attention.cab2.b");
    return p;
  }

  /// Fused feature map graph: per-level encoder features resampled to the
  /// original level's grid, weighted sum, per-location L2 normalization.
  Var features_graph(Tape<T>& tape, TapeBinding<T>& params, const Image& img) const {
    auto encode = [this, &params](Tape<T>& t, const Image& level) { return encoder_.forward(t, params, level); };
    return fused_features_graph(tape, img, encode, params("fusion.w1"), params("fusion.w2"), params("fusion.w3"));
  }

  /// Correlation + optional covisibility attention + regressor, from feature
  /// map vars to the raw log2 ratio (a 1-element var).
  Var ratio_log2_graph(Tape<T>& tape, TapeBinding<T>& params, Var f1, Var f2) const {
    auto c12 = tape.correlation(f1, f2);
    Var volume = c12;
    if (opts_.use_covisibility_attention) {
      auto m1 = tape.sigmoid(tape.conv2d(tape.channel_max(c12), params("attention.cab1.w"), params("attention.cab1.b"), 1, 2));
      auto m2 = tape.sigmoid(
          tape.conv2d(tape.spatial_max_grid(c12), params("attention.cab2.w"), params("attention.cab2.b"), 1, 2));
      volume = tape.apply_covisibility(c12, m1, m2);
    }
    return regressor_graph(tape, params, volume);
  }

  Var regressor_graph(Tape<T>& tape, TapeBinding<T>& params, Var volume) const {
    const int expect = grid_size() * grid_size();
    if (tape.val(volume).dim(2) != expect)
      throw std::invalid_argument("regressor: volume channels do not match the model's input resolution");
    auto x = tape.relu(tape.conv2d(volume, params("regressor.conv0.w"), params("regressor.conv0.b"), 2, 1));
    x = tape.relu(tape.conv2d(x, params("regressor.conv1.w"), params("regressor.conv1.b"), 2, 1));
    x = tape.global_avg_pool(x);
    x = tape.relu(tape.fully_connected(x, params("regressor.fc0.w"), params("regressor.fc0.b")));
    return tape.fully_connected(x, params("regressor.fc1.w"), params("regressor.fc1.b"));
  }

  /// Log2 ratio predictions for both orderings of a pair, sharing the two
  /// feature extractions.
  std::pair<Var, Var> dual_ratio_log2_graph(Tape<T>& tape, TapeBinding<T>& params, const Image& i1,
                                            const Image& i2) const {
    auto f1 = features_graph(tape, params, i1);
    auto f2 = features_graph(tape, params, i2);
    return {ratio_log2_graph(tape, params, f1, f2), ratio_log2_graph(tape, params, f2, f1)};
  }

  /// Eager fused features for one image.
  Tensor<T> fused_features(const Image& img) const {
    check_input(img, /*require_model_res=*/false);
    Tape<T> tape;
    auto& self = const_cast<ScaleRatioNet&>(*this);
    TapeBinding<T> bind(tape, self.params_);
    return tape.val(features_graph(tape, bind, img));
  }

  /// Eager regressor over a correlation volume, clamped to the inference
  /// range. Rejects non-finite activations.
  ScaleRatio regress(const Tensor<T>& volume) const {
    Tape<T> tape;
    auto& self = const_cast<ScaleRatioNet&>(*this);
    TapeBinding<T> bind(tape, self.params_);
    auto r = regressor_graph(tape, bind, tape.input(volume));
    const double raw = static_cast<double>(tape.val(r)[0]);
    if (!std::isfinite(raw)) throw std::runtime_error("regressor produced a non-finite activation");
    return ScaleRatio::from_log2(raw).clamped();
  }

  /// Full pipeline on an image pair: both images are resized to the model's
  /// square input resolution, then features -> correlation -> attention ->
  /// regressor. Output clamped to [2^-9, 2^9].
  ScaleRatio estimate(const Image& i1, const Image& i2) const {
    check_input(i1, false);
    check_input(i2, false);
    const int R = opts_.input_resolution;
    const Image a = resize_bilinear(i1, R, R);
    const Image b = resize_bilinear(i2, R, R);
    Tape<T> tape;
    auto& self = const_cast<ScaleRatioNet&>(*this);
    TapeBinding<T> bind(tape, self.params_);
    auto f1 = features_graph(tape, bind, a);
    auto f2 = features_graph(tape, bind, b);
    auto r = ratio_log2_graph(tape, bind, f1, f2);
    const double raw = static_cast<double>(tape.val(r)[0]);
    if (!std::isfinite(raw)) throw std::runtime_error("scale estimate produced a non-finite activation");
    return ScaleRatio::from_log2(raw).clamped();
  }

 private:
  static void check_input(const Image& img, bool require_model_res) {
    (void)require_model_res;
    if (img.height < 32 || img.width < 32) throw std::invalid_argument("input image must be at least 32x32");
  }

  Options opts_;
  Encoder<T> encoder_;
  ParamStore<T> params_;
};

/// Convenience wrapper matching the pipeline notation: ratio of (i1, i2).
template <typename T>
ScaleRatio estimate_scale_ratio(const ScaleRatioNet<T>& model, const Image& i1, const Image& i2) {
  return model.estimate(i1, i2);
}

}  // namespace scalenet::net
