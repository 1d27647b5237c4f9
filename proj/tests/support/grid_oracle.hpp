#pragma once

// Brute-force references for weighted-majority sets and stability
// certificates.

#include <algorithm>
#include <cmath>
#include <vector>

#include "stabsel/prediction_set.hpp"

namespace oracle {

/// Membership of y in { y : sum_i w_i 1{y in C_i} >= 1/2 }, evaluated
/// pointwise.
inline bool majority_member(const std::vector<double>& w, const std::vector<stabsel::PredictionSet>& sets, double y) {
  double total = 0.0;
  for (std::size_t i = 0; i < sets.size(); ++i) {
    if (sets[i].contains(y)) total += w[i];
  }
  return total >= 0.5 - 1e-12;
}

/// Sum of max(0, p_i - gamma b_i): the additive slack p needs at multiplier gamma.
inline double slack_needed(const std::vector<double>& p, const std::vector<double>& b, double gamma) {
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s += std::max(0.0, p[i] - gamma * b[i]);
  return s;
}

/// Smallest gamma with zero slack against b: max_i p_i / b_i.
inline double minimal_gamma(const std::vector<double>& p, const std::vector<double>& b) {
  double g = 1.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] > 0.0) g = std::max(g, p[i] / b[i]);
  }
  return g;
}

inline double objective(const std::vector<double>& p, const std::vector<double>& sizes) {
  double v = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] > 0.0) v += p[i] * sizes[i];
  }
  return v;
}

}  // namespace oracle
