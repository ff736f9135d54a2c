#pragma once

#include <algorithm>
#include <cmath>

#include "lanetopo/diagnostics.hpp"

namespace lanetopo {

struct FocalParams {
  double alpha = 0.25;
  double gamma = 2.0;
};

inline constexpr double kProbabilityFloor = 1e-7;

inline double sigmoid(double z) noexcept {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

/// Clamps to [1e-7, 1 - 1e-7]; reports a diagnostic when the input sits at
/// or beyond either end of (0, 1).
inline double clamp_probability(double p) {
  if (p <= 0.0 || p >= 1.0 || !std::isfinite(p)) {
    diagnose("probability_clamped", "focal input outside (0,1) was clamped");
  }
  return std::clamp(p, kProbabilityFloor, 1.0 - kProbabilityFloor);
}

/// Focal loss of one probability against a binary target:
///   target 1: -alpha (1-p)^gamma log p
///   target 0: -(1-alpha) p^gamma log(1-p)
inline double focal_loss(double p, bool target, FocalParams fp = {}) {
  p = clamp_probability(p);
  if (target) return -fp.alpha * std::pow(1.0 - p, fp.gamma) * std::log(p);
  return -(1.0 - fp.alpha) * std::pow(p, fp.gamma) * std::log(1.0 - p);
}

/// d focal_loss / d p. Zero wherever the clamp is active.
inline double focal_loss_dp(double p, bool target, FocalParams fp = {}) {
  if (!(p > kProbabilityFloor && p < 1.0 - kProbabilityFloor)) return 0.0;
  if (target) {
    const double q = 1.0 - p;
    return fp.alpha * (fp.gamma * std::pow(q, fp.gamma - 1.0) * std::log(p) -
                       std::pow(q, fp.gamma) / p);
  }
  const double q = 1.0 - p;
  return -(1.0 - fp.alpha) *
         (fp.gamma * std::pow(p, fp.gamma - 1.0) * std::log(q) - std::pow(p, fp.gamma) / q);
}

/// d focal_loss(sigmoid(z)) / d z.
inline double focal_loss_dlogit(double z, bool target, FocalParams fp = {}) {
  const double p = sigmoid(z);
  return focal_loss_dp(p, target, fp) * p * (1.0 - p);
}

/// Change in classification loss when a query flips from background to
/// foreground; the classification term of the matching costs.
inline double focal_cost(double p, FocalParams fp = {}) {
  return focal_loss(p, true, fp) - focal_loss(p, false, fp);
}

}  // namespace lanetopo
