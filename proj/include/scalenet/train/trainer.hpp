#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "scalenet/core/image.hpp"
#include "scalenet/core/rng.hpp"
#include "scalenet/core/scale_ratio.hpp"
#include "scalenet/net/checkpoint.hpp"
#include "scalenet/net/model.hpp"
#include "scalenet/train/augment.hpp"
#include "scalenet/train/losses.hpp"

namespace scalenet::training {

struct TrainSample {
  Image image1;
  Image image2;
  ScaleRatio gt = ScaleRatio::identity();
};

struct TrainConfig {
  double learning_rate = 3e-4;
  int epochs = 30;
  int batch_size = 48;
  int input_resolution = 640;
  double augment_magnitude = 0.05;
  LossWeights loss_weights;

  void validate() const {
    if (!(learning_rate > 0)) throw std::invalid_argument("TrainConfig: learning_rate must be positive");
    if (epochs < 0) throw std::invalid_argument("TrainConfig: epochs must be nonnegative");
    if (batch_size <= 0) throw std::invalid_argument("TrainConfig: batch_size must be positive");
    if (input_resolution <= 0) throw std::invalid_argument("TrainConfig: input_resolution must be positive");
    if (augment_magnitude < 0 || augment_magnitude > 0.1)
      throw std::invalid_argument("TrainConfig: augment_magnitude must lie in [0, 0.1]");
    loss_weights.validate();
  }
};

struct StepRecord {
  int epoch = 0;
  int step = 0;
  double dual = 0.0;
  double consistent = 0.0;
  double total = 0.0;
};

template <typename T>
class AdamOptimizer {
 public:
  explicit AdamOptimizer(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void attach(net::ParamStore<T>& params) {
    m_.clear();
    v_.clear();
    for (const auto& name : params.names()) {
      m_.emplace_back(name, Tensor<T>::zeros(params.value(name).shape));
      v_.emplace_back(name, Tensor<T>::zeros(params.value(name).shape));
    }
    t_ = 0;
  }

  void step(net::ParamStore<T>& params) {
    ++t_;
    const T bc1 = T(1) - static_cast<T>(std::pow(beta1_, static_cast<double>(t_)));
    const T bc2 = T(1) - static_cast<T>(std::pow(beta2_, static_cast<double>(t_)));
    for (size_t i = 0; i < m_.size(); ++i) {
      Tensor<T>& p = params.value(m_[i].first);
      Tensor<T>& g = params.grad(m_[i].first);
      Tensor<T>& m = m_[i].second;
      Tensor<T>& v = v_[i].second;
      for (int64_t k = 0; k < p.size(); ++k) {
        m[k] = static_cast<T>(beta1_) * m[k] + (T(1) - static_cast<T>(beta1_)) * g[k];
        v[k] = static_cast<T>(beta2_) * v[k] + (T(1) - static_cast<T>(beta2_)) * g[k] * g[k];
        const T mhat = m[k] / bc1;
        const T vhat = v[k] / bc2;
        p[k] -= static_cast<T>(lr_) * mhat / (std::sqrt(vhat) + static_cast<T>(eps_));
      }
    }
  }

  int64_t steps_taken() const { return t_; }

  net::AdamStateSnapshot<T> snapshot() const {
    net::AdamStateSnapshot<T> s;
    s.step = t_;
    for (const auto& [n, t] : m_) s.first_moment.emplace_back("adam.m." + n, t);
    for (const auto& [n, t] : v_) s.second_moment.emplace_back("adam.v." + n, t);
    return s;
  }

  void restore(const net::AdamStateSnapshot<T>& s) {
    t_ = s.step;
    if (s.first_moment.size() != m_.size() || s.second_moment.size() != v_.size())
      throw std::runtime_error("optimizer state does not match the model's parameters");
    for (size_t i = 0; i < m_.size(); ++i) m_[i].second = s.first_moment[i].second;
    for (size_t i = 0; i < v_.size(); ++i) v_[i].second = s.second_moment[i].second;
  }

 private:
  double lr_, beta1_, beta2_, eps_;
  int64_t t_ = 0;
  std::vector<std::pair<std::string, Tensor<T>>> m_, v_;
};

struct TrainResult {
  std::vector<StepRecord> history;
  std::optional<double> final_loss;  // last batch re-evaluated with the final weights
};

namespace detail {

inline uint64_t augment_seed(uint64_t base, int epoch, int64_t sample, int side) {
  return Rng::splitmix64(base ^ (static_cast<uint64_t>(epoch) << 40) ^ (static_cast<uint64_t>(sample) << 2) ^
                         static_cast<uint64_t>(side));
}

template <typename T>
Image prepare(const Image& img, int resolution, double magnitude, uint64_t seed) {
  Image r = resize_bilinear(img, resolution, resolution);
  if (magnitude > 0) r = random_perspective_augment(r, magnitude, seed);
  return r;
}

}  // namespace detail

/// Forward-only evaluation of one pair's loss terms (both orderings share
/// the feature extraction, mirroring the training step).
template <typename T>
std::pair<double, double> pair_loss_terms(const net::ScaleRatioNet<T>& model, const Image& i1, const Image& i2,
                                          ScaleRatio gt) {
  net::Tape<T> tape;
  auto& m = const_cast<net::ScaleRatioNet<T>&>(model);
  net::TapeBinding<T> bind(tape, m.params());
  auto [r12, r21] = m.dual_ratio_log2_graph(tape, bind, i1, i2);
  const double a = static_cast<double>(tape.val(r12)[0]) - gt.log2_value;
  const double b = static_cast<double>(tape.val(r21)[0]) + gt.log2_value;
  const double s = static_cast<double>(tape.val(r12)[0]) + static_cast<double>(tape.val(r21)[0]);
  return {0.5 * (a * a + b * b), s * s};
}

/// Trains the model in place. Each sample contributes both orderings per
/// step; gradients are batch means; optimization is Adam. The history
/// records the pre-update loss of every step. Deterministic given
/// (model, data order, config, seed). Resuming a run from a checkpoint is
/// exact when the caller restores the optimizer and passes the absolute
/// start_epoch: every epoch's shuffle and augmentation streams are derived
/// from (seed, absolute epoch).
template <typename T>
TrainResult train(net::ScaleRatioNet<T>& model, const std::vector<TrainSample>& data, const TrainConfig& cfg,
                  uint64_t seed, AdamOptimizer<T>* optimizer = nullptr, int start_epoch = 0) {
  cfg.validate();
  if (cfg.input_resolution != model.input_resolution())
    throw std::invalid_argument("train: config resolution does not match the model");

  TrainResult result;
  if (data.empty() || cfg.epochs == 0) return result;

  AdamOptimizer<T> local_opt(cfg.learning_rate);
  AdamOptimizer<T>* opt = optimizer ? optimizer : &local_opt;
  if (!optimizer) opt->attach(model.params());

  Rng base(seed);
  std::vector<int64_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);

  const double ld_w = cfg.loss_weights.dual, lc_w = cfg.loss_weights.consistent;
  std::vector<std::pair<int64_t, int>> last_batch;  // (sample index, epoch) of the final step

  for (int epoch = start_epoch; epoch < start_epoch + cfg.epochs; ++epoch) {
    Rng erng = base.derive(0x700 + static_cast<uint64_t>(epoch));
    for (size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[static_cast<size_t>(erng.uniform_int(static_cast<int>(i)))]);

    int step = 0;
    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(cfg.batch_size), ++step) {
      const size_t end = std::min(order.size(), start + static_cast<size_t>(cfg.batch_size));
      const int bsz = static_cast<int>(end - start);
      model.params().zero_grads();

      double ld_sum = 0.0, lc_sum = 0.0;
      std::vector<std::pair<int64_t, int>> batch_ids;
      for (size_t bi = start; bi < end; ++bi) {
        const int64_t idx = order[bi];
        batch_ids.emplace_back(idx, epoch);
        const TrainSample& s = data[static_cast<size_t>(idx)];
        const Image a = detail::prepare<T>(s.image1, cfg.input_resolution, cfg.augment_magnitude,
                                           detail::augment_seed(seed, epoch, idx, 0));
        const Image b = detail::prepare<T>(s.image2, cfg.input_resolution, cfg.augment_magnitude,
                                           detail::augment_seed(seed, epoch, idx, 1));

        net::Tape<T> tape;
        net::TapeBinding<T> bind(tape, model.params());
        auto [r12, r21] = model.dual_ratio_log2_graph(tape, bind, a, b);
        const T g = static_cast<T>(s.gt.log2_value);
        auto da = tape.square(tape.affine(r12, T(1), -g));
        auto db = tape.square(tape.affine(r21, T(1), g));
        auto ld = tape.affine(tape.add(da, db), T(0.5), T(0));
        auto lc = tape.square(tape.add(r12, r21));
        auto contribution = tape.add(tape.affine(ld, static_cast<T>(ld_w / bsz), T(0)),
                                     tape.affine(lc, static_cast<T>(lc_w / bsz), T(0)));
        ld_sum += static_cast<double>(tape.val(ld)[0]);
        lc_sum += static_cast<double>(tape.val(lc)[0]);
        tape.backward(contribution);
        tape.export_param_grads();
      }

      const double ld_mean = ld_sum / bsz, lc_mean = lc_sum / bsz;
      const double total = ld_w * ld_mean + lc_w * lc_mean;
      if (!std::isfinite(total))
        throw std::runtime_error("non-finite loss at epoch " + std::to_string(epoch) + " step " +
                                 std::to_string(step));
      opt->step(model.params());
      result.history.push_back({epoch, step, ld_mean, lc_mean, total});
      last_batch = std::move(batch_ids);
    }
  }

  // Final loss with the trained weights on the last batch's exact inputs.
  if (!last_batch.empty()) {
    double ld_sum = 0.0, lc_sum = 0.0;
    for (const auto& [idx, epoch] : last_batch) {
      const TrainSample& s = data[static_cast<size_t>(idx)];
      const Image a = detail::prepare<T>(s.image1, cfg.input_resolution, cfg.augment_magnitude,
                                         detail::augment_seed(seed, epoch, idx, 0));
      const Image b = detail::prepare<T>(s.image2, cfg.input_resolution, cfg.augment_magnitude,
                                         detail::augment_seed(seed, epoch, idx, 1));
      auto [ld, lc] = pair_loss_terms(model, a, b, s.gt);
      ld_sum += ld;
      lc_sum += lc;
    }
    const double n = static_cast<double>(last_batch.size());
    result.final_loss = ld_w * (ld_sum / n) + lc_w * (lc_sum / n);
  }
  return result;
}

/// Predicted ratios over a sample list, stored pair order.
template <typename T>
std::vector<ScaleRatio> predict_ratios(const net::ScaleRatioNet<T>& model, const std::vector<TrainSample>& samples) {
  std::vector<ScaleRatio> out;
  out.reserve(samples.size());
  for (const TrainSample& s : samples) out.push_back(model.estimate(s.image1, s.image2));
  return out;
}

}  // namespace scalenet::training
