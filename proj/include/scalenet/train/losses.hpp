#pragma once

#include <cmath>
#include <span>
#include <stdexcept>

namespace scalenet::training {

struct LossWeights {
  double dual = 1.0;
  double consistent = 1.0;

  void validate() const {
    if (dual < 0 || consistent < 0 || dual + consistent <= 0)
      throw std::invalid_argument("LossWeights: weights must be nonnegative with a positive sum");
  }
};

/// Predicted ratios for both orderings of one pair plus the ground truth.
struct RatioTriple {
  double pred = 1.0;          // ratio predicted for (I1, I2)
  double pred_swapped = 1.0;  // ratio predicted for (I2, I1)
  double gt = 1.0;
};

namespace detail {
inline void check_positive(double x, const char* what) {
  if (!(x > 0.0) || !std::isfinite(x)) throw std::invalid_argument(std::string(what) + " must be positive and finite");
}
inline constexpr double kInvLn2 = 1.4426950408889634074;  // 1/ln(2)
}  // namespace detail

/// Per-sample dual term: 1/2 [ (log2(pred/gt))^2 + (log2(pred_swapped*gt))^2 ].
inline double dual_loss_term(double pred, double pred_swapped, double gt) {
  detail::check_positive(pred, "predicted ratio");
  detail::check_positive(pred_swapped, "swapped predicted ratio");
  detail::check_positive(gt, "ground-truth ratio");
  const double a = std::log2(pred) - std::log2(gt);
  const double b = std::log2(pred_swapped) + std::log2(gt);
  return 0.5 * (a * a + b * b);
}

/// Per-sample consistency term: (log2 pred + log2 pred_swapped)^2.
inline double consistent_loss_term(double pred, double pred_swapped) {
  detail::check_positive(pred, "predicted ratio");
  detail::check_positive(pred_swapped, "swapped predicted ratio");
  const double s = std::log2(pred) + std::log2(pred_swapped);
  return s * s;
}

/// Batch mean of the dual term (the 1/2N reduction).
inline double dual_loss(std::span<const RatioTriple> batch) {
  if (batch.empty()) throw std::invalid_argument("dual_loss: empty batch");
  double acc = 0.0;
  for (const RatioTriple& t : batch) acc += dual_loss_term(t.pred, t.pred_swapped, t.gt);
  return acc / static_cast<double>(batch.size());
}

/// Batch mean of the consistency term (the 1/N reduction).
inline double consistent_loss(std::span<const RatioTriple> batch) {
  if (batch.empty()) throw std::invalid_argument("consistent_loss: empty batch");
  double acc = 0.0;
  for (const RatioTriple& t : batch) acc += consistent_loss_term(t.pred, t.pred_swapped);
  return acc / static_cast<double>(batch.size());
}

inline double total_loss(double dual, double consistent, const LossWeights& w = {}) {
  w.validate();
  if (dual < 0 || consistent < 0) throw std::invalid_argument("total_loss: loss terms must be nonnegative");
  return w.dual * dual + w.consistent * consistent;
}

struct RatioPairGrad {
  double d_pred = 0.0;
  double d_pred_swapped = 0.0;
};

/// Analytic gradient of dual_loss_term with respect to the two predictions.
inline RatioPairGrad dual_loss_term_grad(double pred, double pred_swapped, double gt) {
  const double a = std::log2(pred) - std::log2(gt);
  const double b = std::log2(pred_swapped) + std::log2(gt);
  return {a * detail::kInvLn2 / pred, b * detail::kInvLn2 / pred_swapped};
}

/// Analytic gradient of consistent_loss_term.
inline RatioPairGrad consistent_loss_term_grad(double pred, double pred_swapped) {
  const double s = std::log2(pred) + std::log2(pred_swapped);
  return {2.0 * s * detail::kInvLn2 / pred, 2.0 * s * detail::kInvLn2 / pred_swapped};
}

}  // namespace scalenet::training
