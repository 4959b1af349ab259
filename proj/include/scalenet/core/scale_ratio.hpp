#pragma once

#include <cmath>
#include <stdexcept>

namespace scalenet {

/// A strictly positive scale ratio. The base-2 logarithm is the canonical
/// internal representation; all losses and metrics operate in log2 space.
struct ScaleRatio {
  double log2_value = 0.0;

  ScaleRatio() = default;

  static constexpr double kLog2Min = -9.0;  // inference clamp, covers ratios down to 1/512
  static constexpr double kLog2Max = 9.0;

  static ScaleRatio from_log2(double l) {
    if (!std::isfinite(l)) throw std::invalid_argument("ScaleRatio: non-finite log2 value");
    ScaleRatio r;
    r.log2_value = l;
    return r;
  }

  static ScaleRatio from_value(double v) {
    if (!(v > 0.0) || !std::isfinite(v)) throw std::invalid_argument("ScaleRatio: value must be positive and finite");
    return from_log2(std::log2(v));
  }

  static ScaleRatio identity() { return from_log2(0.0); }

  double value() const { return std::exp2(log2_value); }

  /// Inverse ratio; exact in log2 space.
  ScaleRatio inverse() const { return from_log2(-log2_value); }

  /// Clamped to the inference range [2^-9, 2^9].
  ScaleRatio clamped() const {
    double l = log2_value;
    if (l < kLog2Min) l = kLog2Min;
    if (l > kLog2Max) l = kLog2Max;
    return from_log2(l);
  }

  bool operator==(const ScaleRatio& o) const { return log2_value == o.log2_value; }
};

}  // namespace scalenet
