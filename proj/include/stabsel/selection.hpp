#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "stabsel/error.hpp"
#include "stabsel/prediction_set.hpp"
#include "stabsel/rng.hpp"

namespace stabsel {

inline constexpr double kSimplexTol = 1e-10;
inline constexpr double kObjectiveTol = 1e-9;
inline constexpr double kCertificateTol = 1e-10;
inline constexpr double kPriorTol = 1e-12;

/// Stability parameters (eta, tau) together with the target post-selection
/// miscoverage alpha and, for the adaptive mechanism, the base level alpha'.
struct StabilityBudget {
  double eta = 0.0;
  double tau = 0.0;
  double alpha = 0.1;
  std::optional<double> alpha_prime;

  double gamma() const { return std::exp(eta); }

  /// Base miscoverage the K individual sets need so that an (eta, tau)-stable
  /// selection covers at 1 - alpha: (alpha - tau) * e^-eta.
  double adjusted_base_level() const { return (alpha - tau) * std::exp(-eta); }

  void validate() const {
    detail::require(std::isfinite(eta) && eta >= 0.0, "eta: must be finite and >= 0");
    detail::require(std::isfinite(tau) && tau >= 0.0 && tau < 1.0, "tau: must lie in [0, 1)");
    detail::require(alpha > 0.0 && alpha < 1.0, "alpha: must lie in (0, 1)");
    if (alpha_prime) {
      detail::require(*alpha_prime > 0.0 && *alpha_prime < 1.0, "alpha_prime: must lie in (0, 1)");
      detail::require(*alpha_prime <= alpha, "alpha_prime: must not exceed alpha");
    }
  }
};

/// Per-predictor set sizes at one query point, with the scale L that maps
/// them into [0, 1] for the Laplace and exponential mechanisms.
struct SizeProfile {
  std::vector<double> sizes;
  double scale = 1.0;

  std::size_t size() const { return sizes.size(); }

  void validate() const {
    detail::require(!sizes.empty(), "sizes: need at least one predictor");
    detail::require(scale > 0.0 && std::isfinite(scale), "scale: must be finite and > 0");
    for (double s : sizes) {
      detail::require(!std::isnan(s) && s >= 0.0, "sizes: entries must be >= 0");
    }
  }

  /// sizes / scale, rejecting anything outside [0, 1]. Clipping would void
  /// the sensitivity bound the mechanisms' stability rests on.
  std::vector<double> normalized() const {
    validate();
    std::vector<double> out(sizes.size());
    for (std::size_t i = 0; i < sizes.size(); ++i) {
      out[i] = sizes[i] / scale;
      if (!(out[i] >= 0.0 && out[i] <= 1.0)) {
        std::ostringstream msg;
        msg << "sizes: normalized size " << out[i] << " at index " << i << " lies outside [0, 1]";
        throw InvalidArgument(msg.str());
      }
    }
    return out;
  }
};

/// Reference distribution b on the K predictors.
class Prior {
 public:
  explicit Prior(std::vector<double> b) : b_(std::move(b)) {
    detail::require(!b_.empty(), "prior: must have at least one entry");
    double total = 0.0;
    for (double v : b_) {
      detail::require(std::isfinite(v) && v >= 0.0, "prior: entries must be finite and >= 0");
      total += v;
    }
    if (std::abs(total - 1.0) > kPriorTol) {
      std::ostringstream msg;
      msg.precision(12);
      msg << "prior: entries must sum to 1 (simplex violation, sum = " << total << ")";
      throw InvalidArgument(msg.str());
    }
  }

  static Prior uniform(std::size_t k) {
    detail::require(k >= 1, "prior: need at least one entry");
    return Prior(std::vector<double>(k, 1.0 / static_cast<double>(k)));
  }

  std::size_t size() const { return b_.size(); }
  double operator[](std::size_t i) const { return b_[i]; }
  std::span<const double> values() const { return b_; }

 private:
  std::vector<double> b_;
};

/// Multiplicative factor gamma = e^eta and additive slack tau a
/// distribution was produced under.
struct BudgetUsed {
  double gamma = 1.0;
  double tau = 0.0;

  double eta() const { return std::log(gamma); }
};

struct SelectionDistribution {
  std::vector<double> p;
  BudgetUsed budget_used;

  std::size_t size() const { return p.size(); }
  double operator[](std::size_t i) const { return p[i]; }
};

/// Expected selected size sum_i p_i * sizes_i; zero-probability entries are
/// skipped so infinite sizes with no mass do not poison the sum.
inline double expected_size(std::span<const double> p, std::span<const double> sizes) {
  detail::require(p.size() == sizes.size(), "distribution and sizes differ in length");
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] > 0.0) total += p[i] * sizes[i];
  }
  return total;
}

/// Slack a distribution needs against prior b at factor gamma:
/// sum_i max(0, p_i - gamma * b_i).
inline double certificate_excess(std::span<const double> p, const Prior& b, double gamma) {
  detail::require(p.size() == b.size(), "distribution and prior differ in length");
  double excess = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) excess += std::max(0.0, p[i] - gamma * b[i]);
  return excess;
}

inline bool satisfies_certificate(std::span<const double> p, const Prior& b, double eta, double tau) {
  return certificate_excess(p, b, std::exp(eta)) <= tau + kCertificateTol;
}

inline bool on_simplex(std::span<const double> p, double tol = kSimplexTol) {
  double total = 0.0;
  for (double v : p) {
    if (!(v >= 0.0)) return false;
    total += v;
  }
  return std::abs(total - 1.0) <= tol;
}

/// Deterministic argmin of the sizes, lowest index on ties.
inline std::size_t argmin_select(const SizeProfile& xi) {
  xi.validate();
  return static_cast<std::size_t>(std::min_element(xi.sizes.begin(), xi.sizes.end()) - xi.sizes.begin());
}

/// Report-noisy-min: argmin_i { sizes_i / scale + eps_i } with eps_i i.i.d.
/// Laplace(1/eta). eta-stable against the uniform reference.
inline std::size_t laplace_select(const SizeProfile& xi, double eta, Rng& rng) {
  const auto normalized = xi.normalized();
  detail::require(std::isfinite(eta) && eta > 0.0, "eta: Laplace mechanism needs eta > 0");
  if (normalized.size() == 1) return 0;
  const double scale = 1.0 / eta;
  std::size_t best = 0;
  double best_score = 0.0;
  for (std::size_t i = 0; i < normalized.size(); ++i) {
    const double score = normalized[i] + rng.laplace(scale);
    if (i == 0 || score < best_score) {
      best = i;
      best_score = score;
    }
  }
  return best;
}

/// Exponential mechanism p_i ∝ exp(-eta * sizes_i / scale), computed as a
/// max-shifted softmax. 2*eta-stable against the uniform reference.
inline SelectionDistribution exponential_select(const SizeProfile& xi, double eta) {
  const auto normalized = xi.normalized();
  detail::require(std::isfinite(eta) && eta >= 0.0, "eta: must be finite and >= 0");
  const std::size_t k = normalized.size();
  if (k == 1) return {{1.0}, {1.0, 0.0}};
  std::vector<double> logits(k);
  for (std::size_t i = 0; i < k; ++i) logits[i] = -eta * normalized[i];
  const double shift = *std::max_element(logits.begin(), logits.end());
  double total = 0.0;
  for (auto& v : logits) {
    v = std::exp(v - shift);
    total += v;
  }
  for (auto& v : logits) v /= total;
  return {std::move(logits), {std::exp(2.0 * eta), 0.0}};
}

namespace detail {

/// Indices sorted by size ascending; equal sizes by larger prior, then index.
inline std::vector<std::size_t> fill_order(std::span<const double> sizes, const Prior& b) {
  std::vector<std::size_t> order(sizes.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t c) {
    if (sizes[a] != sizes[c]) return sizes[a] < sizes[c];
    if (b[a] != b[c]) return b[a] > b[c];
    return a < c;
  });
  return order;
}

/// Greedy solution of the MinSE linear program for multiplicative factor
/// gamma and slack tau, walking a precomputed fill order.
inline std::vector<double> minse_fill(std::span<const std::size_t> order, const Prior& b, double gamma, double tau) {
  std::vector<double> p(b.size(), 0.0);
  double remaining = 1.0;
  double slack = tau;
  for (std::size_t idx : order) {
    if (remaining <= 0.0) break;
    const double cap = gamma * b[idx];
    const double take = std::min(remaining, cap + slack);
    if (take > cap) slack = std::max(0.0, slack - (take - cap));
    p[idx] = take;
    remaining -= take;
  }
  // Only reachable through rounding when the caps sum to exactly one.
  if (remaining > 0.0) {
    for (std::size_t idx : order) {
      if (p[idx] < gamma * b[idx]) {
        p[idx] += remaining;
        break;
      }
    }
  }
  return p;
}

}  // namespace detail

/// Minimum stable expectation: the distribution minimizing the expected
/// selected size subject to p_i <= gamma * b_i + s_i, sum s_i <= tau.
///
/// Solved exactly by filling the smallest sets first: every prefix of the
/// size-sorted order then carries the largest mass any feasible point can
/// give it, min(1, gamma * B_j + tau), which minimizes the objective.
inline SelectionDistribution minse_gamma(const SizeProfile& xi, const Prior& b, double gamma, double tau) {
  xi.validate();
  detail::require(b.size() == xi.size(), "prior: length must match the number of sizes");
  detail::require(std::isfinite(gamma) && gamma >= 1.0, "eta: must be finite and >= 0");
  detail::require(std::isfinite(tau) && tau >= 0.0, "tau: must be >= 0");
  if (xi.size() == 1) return {{1.0}, {1.0, 0.0}};
  const auto order = detail::fill_order(xi.sizes, b);
  return {detail::minse_fill(order, b, gamma, tau), {gamma, tau}};
}

inline SelectionDistribution minse(const SizeProfile& xi, const Prior& b, double eta, double tau) {
  detail::require(std::isfinite(eta) && eta >= 0.0, "eta: must be finite and >= 0");
  return minse_gamma(xi, b, std::exp(eta), tau);
}

/// Adaptive MinSE: optimizes the split of the miscoverage budget between
/// gamma = e^eta and tau under gamma * alpha' + tau <= alpha.
///
/// For fixed gamma the best slack is tau(gamma) = alpha - gamma * alpha'.
/// The prefix masses min(1, alpha + gamma * (B_j - alpha')) are concave in
/// gamma, so the objective is convex piecewise linear on [1, alpha/alpha']
/// and attains its minimum at an endpoint or at a gamma where a prefix
/// saturates. Those candidates are enumerated and the best one is returned;
/// equal objectives keep the smallest gamma.
inline SelectionDistribution ada_minse(const SizeProfile& xi, const Prior& b, double alpha, double alpha_prime) {
  xi.validate();
  detail::require(b.size() == xi.size(), "prior: length must match the number of sizes");
  detail::require(alpha > 0.0 && alpha < 1.0, "alpha: must lie in (0, 1)");
  detail::require(alpha_prime > 0.0 && alpha_prime < 1.0, "alpha_prime: must lie in (0, 1)");
  detail::require(alpha_prime <= alpha, "alpha_prime: must not exceed alpha (AdaMinSE infeasible)");
  if (xi.size() == 1) return {{1.0}, {1.0, 0.0}};

  const double gamma_max = alpha / alpha_prime;
  auto slack_at = [&](double gamma) { return std::max(0.0, alpha - gamma * alpha_prime); };

  const auto order = detail::fill_order(xi.sizes, b);
  std::vector<double> candidates{1.0, gamma_max};
  double prefix = 0.0;
  for (std::size_t j = 0; j + 1 < order.size(); ++j) {
    prefix += b[order[j]];
    if (prefix > alpha_prime) {
      const double g = (1.0 - alpha) / (prefix - alpha_prime);
      if (g > 1.0 && g < gamma_max) candidates.push_back(g);
    }
  }
  std::sort(candidates.begin(), candidates.end());

  std::vector<double> best_p;
  double best_gamma = 1.0;
  double best_obj = 0.0;
  for (double g : candidates) {
    auto p = detail::minse_fill(order, b, g, slack_at(g));
    const double obj = expected_size(p, xi.sizes);
    if (best_p.empty() || obj < best_obj - 1e-15 * (1.0 + std::abs(best_obj))) {
      best_p = std::move(p);
      best_gamma = g;
      best_obj = obj;
    }
  }
  return {std::move(best_p), {best_gamma, slack_at(best_gamma)}};
}

/// Draws index i with probability p_i by inverse CDF on the cumulative sums.
inline std::size_t sample_selection(std::span<const double> p, Rng& rng) {
  detail::require(!p.empty(), "distribution: empty");
  const double u = rng.uniform();
  double cumulative = 0.0;
  std::size_t last_positive = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] <= 0.0) continue;
    last_positive = i;
    cumulative += p[i];
    if (u < cumulative) return i;
  }
  return last_positive;
}

inline std::size_t sample_selection(const SelectionDistribution& p, Rng& rng) { return sample_selection(p.p, rng); }

/// { y : sum_i p_i 1{y in sets_i} >= 1/2 }.
inline PredictionSet derandomize(const SelectionDistribution& p, std::span<const PredictionSet> sets) {
  return weighted_majority(p.p, sets);
}

/// True iff MinSE at the competitor's certificate (b, eta, tau) has expected
/// size no larger than the competitor's. Throws if the competitor is not
/// stable under that certificate, where the comparison means nothing.
inline bool dominance_check(const SizeProfile& xi, std::span<const double> competitor, const Prior& b, double eta,
                            double tau) {
  detail::require(competitor.size() == xi.size(), "competitor: length must match the number of sizes");
  detail::require(on_simplex(competitor), "competitor: not a probability vector");
  if (!satisfies_certificate(competitor, b, eta, tau)) {
    std::ostringstream msg;
    msg.precision(12);
    msg << "competitor: violates the (eta, tau) certificate, excess " << certificate_excess(competitor, b, std::exp(eta))
        << " > tau " << tau;
    throw InvalidArgument(msg.str());
  }
  const auto best = minse(xi, b, eta, tau);
  return expected_size(best.p, xi.sizes) <= expected_size(competitor, xi.sizes) + kObjectiveTol;
}

}  // namespace stabsel
