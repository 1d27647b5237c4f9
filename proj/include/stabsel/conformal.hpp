#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "stabsel/dataset.hpp"
#include "stabsel/error.hpp"
#include "stabsel/mechanism.hpp"
#include "stabsel/prediction_set.hpp"
#include "stabsel/rng.hpp"
#include "stabsel/selection.hpp"

namespace stabsel {

using Predictor = std::function<double(Features)>;
using RawScore = std::function<double(Features, double)>;

/// Search specification for sublevel sets of scores without a closed form:
/// `points` equally spaced labels on [lo, hi].
struct LabelGrid {
  double lo = -10.0;
  double hi = 10.0;
  std::size_t points = 2001;
};

/// Nonconformity score s(x, y). The absolute residual |f(x) - y| and the
/// scaled residual |f(x) - y| / g(x) have interval sublevel sets in closed
/// form; any other score is handled numerically on a LabelGrid.
class ScoreFunction {
 public:
  enum class Family { absolute_residual, scaled_residual, custom };

  static ScoreFunction absolute_residual(Predictor f) {
    ScoreFunction s;
    s.family_ = Family::absolute_residual;
    s.predict_ = std::move(f);
    return s;
  }

  static ScoreFunction scaled_residual(Predictor f, Predictor g) {
    ScoreFunction s;
    s.family_ = Family::scaled_residual;
    s.predict_ = std::move(f);
    s.scale_ = std::move(g);
    return s;
  }

  static ScoreFunction custom(RawScore raw) {
    ScoreFunction s;
    s.family_ = Family::custom;
    s.raw_ = std::move(raw);
    return s;
  }

  Family family() const { return family_; }

  double predict(Features x) const { return predict_(x); }

  double scale(Features x) const {
    if (family_ != Family::scaled_residual) return 1.0;
    const double g = scale_(x);
    if (!(g > 0.0) || !std::isfinite(g)) throw NumericError("score: residual scale g(x) must be finite and > 0");
    return g;
  }

  double operator()(Features x, double y) const {
    switch (family_) {
      case Family::absolute_residual: return std::abs(predict_(x) - y);
      case Family::scaled_residual: return std::abs(predict_(x) - y) / scale(x);
      case Family::custom: return raw_(x, y);
    }
    return 0.0;
  }

 private:
  Family family_ = Family::absolute_residual;
  Predictor predict_;
  Predictor scale_;
  RawScore raw_;
};

/// A calibrated split conformal predictor: its score function and the
/// ascending calibration scores s_(1) <= ... <= s_(m).
struct ConformalModel {
  ScoreFunction score;
  std::vector<double> cal_scores;
  int predictor_id = 0;
  LabelGrid grid;

  std::size_t m() const { return cal_scores.size(); }

  /// Number of calibration scores <= s.
  std::size_t rank_of(double s) const {
    return static_cast<std::size_t>(std::upper_bound(cal_scores.begin(), cal_scores.end(), s) - cal_scores.begin());
  }
};

inline ConformalModel calibrate(ScoreFunction score, const Dataset& cal_data, int predictor_id = 0,
                                LabelGrid grid = {}) {
  if (cal_data.empty()) throw InvalidArgument("calibration: empty calibration set");
  ConformalModel model{std::move(score), {}, predictor_id, grid};
  model.cal_scores.reserve(cal_data.size());
  for (std::size_t i = 0; i < cal_data.size(); ++i) {
    const double s = model.score(cal_data.x(i), cal_data.y(i));
    if (std::isnan(s)) throw NumericError("calibration: score is NaN at row " + std::to_string(i));
    model.cal_scores.push_back(s);
  }
  std::sort(model.cal_scores.begin(), model.cal_scores.end());
  return model;
}

/// ceil((1 - alpha)(m + 1)), guarded against products like 0.9 * 10 landing
/// one ulp above an integer.
inline std::size_t conformal_rank(double alpha, std::size_t m) {
  detail::require(alpha > 0.0 && alpha < 1.0, "alpha: must lie in (0, 1)");
  const double v = (1.0 - alpha) * static_cast<double>(m + 1);
  return static_cast<std::size_t>(std::ceil(v - 1e-9 * std::max(1.0, v)));
}

namespace detail {

inline PredictionSet grid_sublevel_set(const RawScore& score, Features x, double threshold, const LabelGrid& grid) {
  require(grid.points >= 2 && grid.lo < grid.hi, "label grid: need at least two points and lo < hi");
  const std::size_t n = grid.points;
  const double step = (grid.hi - grid.lo) / static_cast<double>(n - 1);
  auto at = [&](std::size_t i) { return i + 1 == n ? grid.hi : grid.lo + step * static_cast<double>(i); };
  auto inside = [&](double y) { return score(x, y) <= threshold; };

  // Boundary between an inside point `in` and an outside point `out`.
  auto boundary = [&](double in, double out) {
    constexpr int kProbe = 16;
    int flips = 0;
    bool prev = true;
    for (int j = 1; j <= kProbe; ++j) {
      const bool cur = inside(in + (out - in) * j / kProbe);
      flips += (cur != prev);
      prev = cur;
    }
    if (flips > 1) throw NumericError("label grid: too coarse to bracket the sublevel set boundary");
    while (std::abs(out - in) > 1e-9) {
      const double mid = 0.5 * (in + out);
      (inside(mid) ? in : out) = mid;
    }
    return in;
  };

  std::vector<Interval> pieces;
  bool prev_in = inside(at(0));
  double start = grid.lo;
  for (std::size_t i = 1; i < n; ++i) {
    const bool cur_in = inside(at(i));
    if (cur_in && !prev_in) start = boundary(at(i), at(i - 1));
    if (!cur_in && prev_in) pieces.push_back({start, boundary(at(i - 1), at(i))});
    prev_in = cur_in;
  }
  if (prev_in) pieces.push_back({start, grid.hi});
  return PredictionSet(std::move(pieces));
}

}  // namespace detail

/// { y : s(x, y) <= s_(r) }. Closed form for residual scores; otherwise grid
/// bracketing plus bisection to 1e-9, clipped to the grid range.
inline PredictionSet set_at_rank(const ConformalModel& model, Features x, std::size_t r, const LabelGrid& grid) {
  detail::require(r >= 1 && r <= model.m(), "rank: must lie in [1, m]");
  const double threshold = model.cal_scores[r - 1];
  switch (model.score.family()) {
    case ScoreFunction::Family::absolute_residual:
    case ScoreFunction::Family::scaled_residual: {
      if (std::isinf(threshold)) return PredictionSet::real_line();
      const double center = model.score.predict(x);
      const double half = threshold * model.score.scale(x);
      return PredictionSet::interval(center - half, center + half);
    }
    case ScoreFunction::Family::custom:
      return detail::grid_sublevel_set([&](Features xx, double y) { return model.score(xx, y); }, x, threshold, grid);
  }
  return {};
}

inline PredictionSet set_at_rank(const ConformalModel& model, Features x, std::size_t r) {
  return set_at_rank(model, x, r, model.grid);
}

/// Split conformal set at rank ceil((1 - alpha)(m + 1)); the whole real
/// line when that rank exceeds m.
inline PredictionSet split_conformal_set(const ConformalModel& model, Features x, double alpha) {
  const std::size_t r = conformal_rank(alpha, model.m());
  if (r > model.m()) return PredictionSet::real_line();
  return set_at_rank(model, x, r);
}

/// Randomized selection rule x -> predictor index. `calibration_independent`
/// records whether the rule may be used for recalibration with coverage:
/// rules built from calibration-set quantiles break that precondition.
struct Selector {
  std::function<std::size_t(Features, Rng&)> choose;
  bool calibration_independent = true;

  std::size_t operator()(Features x, Rng& rng) const { return choose(x, rng); }
};

/// Per-point effective ranks with the uniform keys that order equal ranks.
struct EffectiveRankSequence {
  std::vector<std::size_t> ranks;
  std::vector<double> tiebreak_keys;

  std::size_t m() const { return ranks.size(); }

  /// The t-th smallest effective rank (1-based), equal ranks ordered by key.
  std::size_t order_statistic(std::size_t t) const {
    detail::require(t >= 1 && t <= ranks.size(), "order statistic: index out of range");
    std::vector<std::size_t> idx(ranks.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::nth_element(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(t - 1), idx.end(),
                     [&](std::size_t a, std::size_t b) {
                       return ranks[a] < ranks[b] || (ranks[a] == ranks[b] && tiebreak_keys[a] < tiebreak_keys[b]);
                     });
    return ranks[idx[t - 1]];
  }
};

/// For each calibration point i, the within-calibration rank of its score
/// under the predictor the selector picks for x_i with fresh randomness.
inline EffectiveRankSequence effective_ranks(std::span<const ConformalModel> models, const Selector& selector,
                                             const Dataset& cal_data, Rng& rng) {
  detail::require(!models.empty(), "models: need at least one model");
  for (const auto& model : models) {
    detail::require(model.m() == cal_data.size(), "models: every model must be calibrated on the given data");
  }
  EffectiveRankSequence seq;
  seq.ranks.reserve(cal_data.size());
  seq.tiebreak_keys.reserve(cal_data.size());
  for (std::size_t i = 0; i < cal_data.size(); ++i) {
    const std::size_t k = selector(cal_data.x(i), rng);
    detail::require(k < models.size(), "selector: returned an out-of-range index");
    seq.ranks.push_back(models[k].rank_of(models[k].score(cal_data.x(i), cal_data.y(i))));
    seq.tiebreak_keys.push_back(rng.uniform());
  }
  return seq;
}

struct RecalibratedPrediction {
  PredictionSet set;
  std::size_t selected = 0;
  std::size_t threshold_rank = 0;
  bool coverage_guaranteed = true;
};

/// Index tau_alpha = ceil((1 - alpha)(m + 1)) of the effective-rank order
/// statistic; requires tau_alpha <= m.
inline std::size_t recalibration_index(double alpha, std::size_t m) {
  const std::size_t t = conformal_rank(alpha, m);
  if (t > m) {
    throw InvalidArgument("alpha: recalibration needs ceil((1 - alpha)(m + 1)) <= m, got " + std::to_string(t) +
                          " > m = " + std::to_string(m));
  }
  return t;
}

inline RecalibratedPrediction recalibrated_prediction(std::span<const ConformalModel> models, const Selector& selector,
                                                      const EffectiveRankSequence& eff_ranks, Features x_test,
                                                      Rng& rng, double alpha) {
  const std::size_t t = recalibration_index(alpha, eff_ranks.m());
  const std::size_t r = eff_ranks.order_statistic(t);
  const std::size_t k = selector(x_test, rng);
  detail::require(k < models.size(), "selector: returned an out-of-range index");
  return {set_at_rank(models[k], x_test, r), k, r, selector.calibration_independent};
}

inline PredictionSet recalibrated_set(std::span<const ConformalModel> models, const Selector& selector,
                                      const EffectiveRankSequence& eff_ranks, Features x_test, Rng& rng,
                                      double alpha) {
  return recalibrated_prediction(models, selector, eff_ranks, x_test, rng, alpha).set;
}

/// Proxy set sizes at x from models calibrated on an auxiliary split, at
/// level alpha_tilde.
inline std::vector<double> proxy_sizes(std::span<const ConformalModel> aux_models, Features x, double alpha_tilde) {
  std::vector<double> sizes;
  sizes.reserve(aux_models.size());
  for (const auto& model : aux_models) sizes.push_back(split_conformal_set(model, x, alpha_tilde).measure());
  return sizes;
}

/// Selection rule driven by auxiliary-data proxy sets only, hence
/// conditionally independent of the calibration data given x.
inline Selector build_aux_selector(std::vector<ConformalModel> aux_models, double alpha_tilde,
                                   MechanismConfig mechanism) {
  detail::require(!aux_models.empty(), "aux models: need at least one model");
  auto models = std::make_shared<const std::vector<ConformalModel>>(std::move(aux_models));
  return Selector{[models, alpha_tilde, mechanism](Features x, Rng& rng) {
                    const auto sizes = proxy_sizes(*models, x, alpha_tilde);
                    return select_index(mechanism, sizes, rng);
                  },
                  true};
}

/// Selection rule that reads the calibration data itself: argmin over
/// models of the set size implied by the score of the calibration point
/// nearest to x. Allowed by the API but flagged as not calibration
/// independent; on calibration points it sees each point's own score, which
/// is exactly the dependence recalibration cannot tolerate.
inline Selector build_calibration_selector(std::vector<ConformalModel> models, Dataset cal_data) {
  auto shared_models = std::make_shared<const std::vector<ConformalModel>>(std::move(models));
  auto data = std::make_shared<const Dataset>(std::move(cal_data));
  return Selector{[shared_models, data](Features x, Rng&) {
                    std::size_t nearest = 0;
                    double best = std::numeric_limits<double>::infinity();
                    for (std::size_t i = 0; i < data->size(); ++i) {
                      double d = 0.0;
                      const auto xi = data->x(i);
                      for (std::size_t j = 0; j < xi.size(); ++j) d += (xi[j] - x[j]) * (xi[j] - x[j]);
                      if (d < best) {
                        best = d;
                        nearest = i;
                      }
                    }
                    std::size_t choice = 0;
                    double smallest = std::numeric_limits<double>::infinity();
                    for (std::size_t k = 0; k < shared_models->size(); ++k) {
                      const auto& model = (*shared_models)[k];
                      const double size =
                          2.0 * model.score(data->x(nearest), data->y(nearest)) * model.score.scale(x);
                      if (size < smallest) {
                        smallest = size;
                        choice = k;
                      }
                    }
                    return choice;
                  },
                  false};
}

}  // namespace stabsel
