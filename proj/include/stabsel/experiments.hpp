#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "stabsel/conformal.hpp"
#include "stabsel/dataset.hpp"
#include "stabsel/error.hpp"
#include "stabsel/mechanism.hpp"
#include "stabsel/predictors.hpp"
#include "stabsel/prediction_set.hpp"
#include "stabsel/rng.hpp"
#include "stabsel/scenarios.hpp"
#include "stabsel/selection.hpp"

namespace stabsel {

enum class ScenarioKind { worst_case_oracle, coin_flip, group_coin_flip, toy_regression, sin_regression, arma_stream, csv };

inline std::string_view to_string(ScenarioKind kind) {
  switch (kind) {
    case ScenarioKind::worst_case_oracle: return "worst_case_oracle";
    case ScenarioKind::coin_flip: return "coin_flip";
    case ScenarioKind::group_coin_flip: return "group_coin_flip";
    case ScenarioKind::toy_regression: return "toy_regression";
    case ScenarioKind::sin_regression: return "sin_regression";
    case ScenarioKind::arma_stream: return "arma_stream";
    case ScenarioKind::csv: return "csv";
  }
  return "?";
}

inline ScenarioKind parse_scenario(std::string_view name) {
  for (auto k : {ScenarioKind::worst_case_oracle, ScenarioKind::coin_flip, ScenarioKind::group_coin_flip,
                 ScenarioKind::toy_regression, ScenarioKind::sin_regression, ScenarioKind::arma_stream,
                 ScenarioKind::csv}) {
    if (to_string(k) == name) return k;
  }
  throw InvalidArgument("scenario.kind: unknown scenario '" + std::string(name) + "'");
}

/// Parameters of every scenario kind; each kind reads the fields it needs.
struct ScenarioParams {
  std::size_t k = 5;
  double alpha = 0.1;
  std::size_t n_train = 1000;
  std::size_t m = 400;      // calibration points
  std::size_t n_aux = 200;  // auxiliary points (recalibration selector)
  std::size_t n_test = 1000;  // test points, or trials for the set-valued scenarios
  std::size_t d = 10;
  std::size_t blocks = 5;  // quantile blocks for predictor heterogeneity
  double noise = 0.1;      // sin: noise s.d.; toy: noise variance (0.25 by default)
  std::size_t t_len = 10000;
  double ar = 0.9;
  double ma = 0.1;
  std::size_t lags = 3;

  void validate(ScenarioKind kind) const {
    detail::require(alpha > 0.0 && alpha < 1.0, "scenario.alpha: must lie in (0, 1)");
    detail::require(k >= 1, "scenario.K: must be >= 1");
    detail::require(n_test >= 1, "scenario.n_test: must be >= 1");
    detail::require(noise >= 0.0, "scenario.noise: must be >= 0");
    if (kind == ScenarioKind::worst_case_oracle) detail::require(k >= 2, "scenario.K: worst-case oracles need K >= 2");
    if (kind == ScenarioKind::sin_regression || kind == ScenarioKind::toy_regression) {
      detail::require(m >= 1, "scenario.m: must be >= 1");
      detail::require(d >= 1, "scenario.d: must be >= 1");
    }
    if (kind == ScenarioKind::toy_regression) detail::require(k <= 2, "scenario.K: toy regression has two predictors");
    if (kind == ScenarioKind::toy_regression) detail::require(n_train >= 1, "scenario.n_train: must be >= 1");
    if (kind == ScenarioKind::sin_regression) {
      detail::require(n_train >= 2, "scenario.n_train: must be >= 2");
      detail::require(blocks >= 1, "scenario.blocks: must be >= 1");
    }
    if (kind == ScenarioKind::arma_stream && !(std::abs(ar) < 1.0)) {
      throw InvalidArgument("scenario.ar: |ar| must be < 1 for a stationary stream");
    }
  }
};

struct Scenario {
  ScenarioKind kind = ScenarioKind::coin_flip;
  ScenarioParams params;
  std::optional<Dataset> data;  // csv scenarios only
};

enum class MethodKind { minse, ada_minse, exponential, laplace, derandomized, recalibrated, single_model_baseline };

inline std::string_view to_string(MethodKind kind) {
  switch (kind) {
    case MethodKind::minse: return "minse";
    case MethodKind::ada_minse: return "ada_minse";
    case MethodKind::exponential: return "exponential";
    case MethodKind::laplace: return "laplace";
    case MethodKind::derandomized: return "derandomized";
    case MethodKind::recalibrated: return "recalibrated";
    case MethodKind::single_model_baseline: return "single_model_baseline";
  }
  return "?";
}

inline MethodKind parse_method(std::string_view name) {
  for (auto k : {MethodKind::minse, MethodKind::ada_minse, MethodKind::exponential, MethodKind::laplace,
                 MethodKind::derandomized, MethodKind::recalibrated, MethodKind::single_model_baseline}) {
    if (to_string(k) == name) return k;
  }
  throw InvalidArgument("method.kind: unknown method '" + std::string(name) + "'");
}

struct MethodSpec {
  MethodKind kind = MethodKind::minse;
  double eta = 0.0;
  double tau = 0.0;
  double alpha_prime = 0.05;
  std::size_t baseline_model = 0;
  std::optional<double> alpha_base;  // overrides the per-method base level
  double scale = 0.0;                // Laplace / exponential size scale; 0 picks one from the data
  MechanismKind aux_mechanism = MechanismKind::minse;
  std::optional<double> alpha_tilde;  // proxy level of the aux selector, default alpha

  void validate(double alpha) const {
    detail::require(std::isfinite(eta) && eta >= 0.0, "method.eta: must be finite and >= 0");
    detail::require(std::isfinite(tau) && tau >= 0.0, "method.tau: must be >= 0");
    detail::require(scale >= 0.0, "method.scale: must be >= 0");
    if (kind == MethodKind::laplace) detail::require(eta > 0.0, "method.eta: Laplace mechanism needs eta > 0");
    if (kind == MethodKind::ada_minse) {
      detail::require(alpha_prime > 0.0 && alpha_prime <= alpha, "method.alpha_prime: must lie in (0, alpha]");
    }
    if (alpha_base) {
      detail::require(*alpha_base >= 0.0 && *alpha_base < 1.0, "method.alpha_base: must lie in [0, 1)");
    } else if (kind != MethodKind::recalibrated && kind != MethodKind::ada_minse) {
      detail::require(base_level(alpha) > 0.0, "method.tau: leaves no miscoverage budget for the base sets");
    }
    if (alpha_tilde) detail::require(*alpha_tilde > 0.0 && *alpha_tilde < 1.0, "method.alpha_tilde: must lie in (0, 1)");
    if (kind == MethodKind::recalibrated) {
      detail::require(aux_mechanism == MechanismKind::minse || aux_mechanism == MechanismKind::ada_minse ||
                          aux_mechanism == MechanismKind::argmin,
                      "method.aux_mechanism: must be minse, ada_minse or argmin");
    }
  }

  /// Miscoverage level of each individual set so that the selected set
  /// keeps 1 - alpha coverage.
  double base_level(double alpha) const {
    if (alpha_base) return *alpha_base;
    switch (kind) {
      case MethodKind::minse: return (alpha - tau) * std::exp(-eta);
      case MethodKind::ada_minse: return alpha_prime;
      case MethodKind::exponential: return alpha * std::exp(-2.0 * eta);
      case MethodKind::laplace: return alpha * std::exp(-eta);
      case MethodKind::derandomized: return (alpha / 2.0 - tau) * std::exp(-eta);
      case MethodKind::recalibrated:
      case MethodKind::single_model_baseline: return alpha;
    }
    return alpha;
  }
};

struct SeedResult {
  std::uint64_t seed = 0;
  double coverage = 0.0;
  double mean_length = 0.0;  // over bounded sets
  std::size_t n_test = 0;
  std::size_t n_unbounded = 0;
  std::array<std::size_t, 2> group_hits{0, 0};
  std::array<std::size_t, 2> group_counts{0, 0};
};

struct MeanSe {
  double mean = 0.0;
  double se = 0.0;
};

inline MeanSe mean_se(std::span<const double> v) {
  MeanSe out;
  if (v.empty()) return out;
  for (double x : v) out.mean += x;
  out.mean /= static_cast<double>(v.size());
  if (v.size() < 2) return out;
  double ss = 0.0;
  for (double x : v) ss += (x - out.mean) * (x - out.mean);
  out.se = std::sqrt(ss / static_cast<double>(v.size() - 1)) / std::sqrt(static_cast<double>(v.size()));
  return out;
}

struct RunMetrics {
  MeanSe coverage;
  MeanSe mean_length;
  std::vector<SeedResult> per_seed;
  std::array<double, 2> group_coverage{0.0, 0.0};  // pooled over seeds
  std::array<std::size_t, 2> group_counts{0, 0};

  std::vector<double> seed_coverages() const {
    std::vector<double> v;
    for (const auto& s : per_seed) v.push_back(s.coverage);
    return v;
  }
};

namespace detail {

struct Tally {
  SeedResult r;
  double length_sum = 0.0;
  std::size_t hits = 0;

  void add(const PredictionSet& set, double y, int group = -1) {
    const bool covered = set.contains(y);
    hits += covered;
    const double len = set.measure();
    if (std::isfinite(len)) {
      length_sum += len;
    } else {
      ++r.n_unbounded;
    }
    ++r.n_test;
    if (group >= 0) {
      r.group_hits[static_cast<std::size_t>(group)] += covered;
      r.group_counts[static_cast<std::size_t>(group)] += 1;
    }
  }

  SeedResult finish() {
    r.coverage = r.n_test ? static_cast<double>(hits) / static_cast<double>(r.n_test) : 0.0;
    const std::size_t bounded = r.n_test - r.n_unbounded;
    r.mean_length = bounded ? length_sum / static_cast<double>(bounded) : 0.0;
    return r;
  }
};

/// The set a stability method reports given the K candidate sets.
inline PredictionSet select_set(const MethodSpec& method, double alpha, double scale,
                                std::span<const PredictionSet> sets, Rng& rng) {
  const std::size_t k = sets.size();
  if (method.kind == MethodKind::single_model_baseline) {
    detail::require(method.baseline_model < k, "method.baseline_model: index out of range");
    return sets[method.baseline_model];
  }
  SizeProfile xi;
  xi.scale = scale;
  for (const auto& s : sets) xi.sizes.push_back(s.measure());
  switch (method.kind) {
    case MethodKind::minse: return sets[sample_selection(minse(xi, Prior::uniform(k), method.eta, method.tau), rng)];
    case MethodKind::ada_minse:
      return sets[sample_selection(ada_minse(xi, Prior::uniform(k), alpha, method.alpha_prime), rng)];
    case MethodKind::derandomized: return derandomize(minse(xi, Prior::uniform(k), method.eta, method.tau), sets);
    case MethodKind::exponential:
    case MethodKind::laplace: {
      // Sizes beyond the scale are clipped before the mechanism sees them.
      for (auto& s : xi.sizes) s = std::min(s, scale);
      if (method.kind == MethodKind::laplace) return sets[laplace_select(xi, method.eta, rng)];
      return sets[sample_selection(exponential_select(xi, method.eta), rng)];
    }
    default: break;
  }
  throw InvalidArgument("method.kind: not applicable to this scenario");
}

inline SeedResult run_set_scenario(const Scenario& sc, const MethodSpec& method, std::uint64_t seed) {
  const auto& p = sc.params;
  if (method.kind == MethodKind::recalibrated) {
    throw InvalidArgument("method.kind: recalibrated needs a regression scenario");
  }
  Rng data_rng(derive_seed(seed, 1));
  Rng sel_rng(derive_seed(seed, 2));
  const double base = method.base_level(p.alpha);
  const double scale = method.scale > 0.0 ? method.scale : 1.0;
  Tally tally;
  tally.r.seed = seed;
  for (std::size_t t = 0; t < p.n_test; ++t) {
    std::vector<PredictionSet> sets;
    int group = -1;
    double y;
    switch (sc.kind) {
      case ScenarioKind::worst_case_oracle:
        sets = gen_worst_case_oracles(p.k, data_rng).sets;
        y = data_rng.uniform();
        break;
      case ScenarioKind::coin_flip:
        sets = gen_coin_flips(p.k, base, data_rng);
        y = data_rng.uniform();
        break;
      default: {
        auto draw = gen_group_coin_flips(p.k, base, data_rng);
        sets = std::move(draw.sets);
        group = draw.group;
        y = draw.y;
      }
    }
    tally.add(select_set(method, p.alpha, scale, sets, sel_rng), y, group);
  }
  return tally.finish();
}

struct Splits {
  Dataset train;
  Dataset cal;
  Dataset aux;
  Dataset test;
};

inline Splits make_splits(const Scenario& sc, Rng& rng) {
  const auto& p = sc.params;
  std::size_t n_train = p.n_train;
  std::size_t m = p.m;
  std::size_t n_aux = p.n_aux;
  std::size_t n_test = p.n_test;
  Dataset all;
  switch (sc.kind) {
    case ScenarioKind::toy_regression:
      all = gen_toy_regression(n_train + m + n_aux + n_test, rng, p.noise);
      break;
    case ScenarioKind::sin_regression:
      all = gen_sin_regression(n_train + m + n_aux + n_test, p.d, rng, p.noise);
      break;
    default: {
      detail::require(sc.data.has_value(), "data: csv scenario without a loaded dataset");
      all = sc.data->shuffled(rng);
      const std::size_t n = all.size();
      detail::require(n >= 20, "data: need at least 20 rows");
      // 40% train, 30% calibration (a third of it auxiliary), 30% test.
      n_train = n * 4 / 10;
      const std::size_t cal_total = n * 3 / 10;
      n_aux = cal_total / 3;
      m = cal_total - n_aux;
      n_test = n - n_train - cal_total;
    }
  }
  Splits s;
  s.train = all.slice(0, n_train);
  s.cal = all.slice(n_train, n_train + m);
  s.aux = all.slice(n_train + m, n_train + m + n_aux);
  s.test = all.slice(n_train + m + n_aux, n_train + m + n_aux + n_test);
  return s;
}

inline Dataset concat(const Dataset& a, const Dataset& b) {
  Dataset out(a.dim());
  for (std::size_t i = 0; i < a.size(); ++i) out.add(a.x(i), a.y(i));
  for (std::size_t i = 0; i < b.size(); ++i) out.add(b.x(i), b.y(i));
  return out;
}

inline std::vector<ScoreFunction> regression_scores(const Scenario& sc, const Splits& s) {
  std::vector<ScoreFunction> scores;
  if (sc.kind == ScenarioKind::toy_regression) {
    // Fixed predictors; the training split only fits their residual scales.
    auto fs = toy_predictors();
    for (std::size_t i = 0; i < sc.params.k; ++i) {
      Predictor g = fit_residual_scale(s.train, fs[i], 20);
      scores.push_back(ScoreFunction::scaled_residual(std::move(fs[i]), std::move(g)));
    }
    return scores;
  }
  // Regressors are fit on the first 70% of the training split, residual
  // scales on the rest.
  const std::size_t cut = s.train.size() * 7 / 10;
  const Dataset fit = s.train.slice(0, cut);
  const Dataset resid = s.train.slice(cut, s.train.size());
  const auto specs = default_regressor_pool(sc.params.k);
  for (const auto& bp : base_predictors(specs, fit, resid, sc.params.blocks)) scores.push_back(bp.score());
  return scores;
}

inline SeedResult run_regression_scenario(const Scenario& sc, const MethodSpec& method, std::uint64_t seed) {
  const double alpha = sc.params.alpha;
  Rng data_rng(derive_seed(seed, 1));
  Rng sel_rng(derive_seed(seed, 2));
  const Splits s = make_splits(sc, data_rng);
  detail::require(!s.test.empty(), "data: empty test split");
  const auto scores = regression_scores(sc, s);
  Tally tally;
  tally.r.seed = seed;

  if (method.kind == MethodKind::recalibrated) {
    detail::require(!s.aux.empty() && !s.cal.empty(), "scenario.n_aux: recalibration needs aux and calibration points");
    std::vector<ConformalModel> models;
    std::vector<ConformalModel> aux_models;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      models.push_back(calibrate(scores[i], s.cal, static_cast<int>(i)));
      aux_models.push_back(calibrate(scores[i], s.aux, static_cast<int>(i)));
    }
    MechanismConfig mech;
    mech.kind = method.aux_mechanism;
    mech.eta = method.eta;
    mech.tau = method.tau;
    mech.alpha = alpha;
    mech.alpha_prime = method.alpha_prime;
    const auto selector = build_aux_selector(std::move(aux_models), method.alpha_tilde.value_or(alpha), mech);
    const auto ranks = effective_ranks(models, selector, s.cal, sel_rng);
    for (std::size_t j = 0; j < s.test.size(); ++j) {
      tally.add(recalibrated_set(models, selector, ranks, s.test.x(j), sel_rng, alpha), s.test.y(j));
    }
    return tally.finish();
  }

  const Dataset cal = concat(s.cal, s.aux);
  std::vector<ConformalModel> models;
  for (std::size_t i = 0; i < scores.size(); ++i) models.push_back(calibrate(scores[i], cal, static_cast<int>(i)));
  double scale = method.scale;
  if (scale <= 0.0) {
    // Twice the label range of the calibration data.
    const auto ys = cal.labels();
    const auto [lo, hi] = std::minmax_element(ys.begin(), ys.end());
    scale = std::max(2.0 * (*hi - *lo), 1e-12);
  }
  const double base = method.base_level(alpha);
  std::vector<PredictionSet> sets(models.size());
  for (std::size_t j = 0; j < s.test.size(); ++j) {
    for (std::size_t i = 0; i < models.size(); ++i) sets[i] = split_conformal_set(models[i], s.test.x(j), base);
    tally.add(select_set(method, alpha, scale, sets, sel_rng), s.test.y(j));
  }
  return tally.finish();
}

}  // namespace detail

/// One seed of a batch experiment. Data and selection randomness come from
/// separate streams derived from the seed, so methods run on the same seed
/// see the same data.
inline SeedResult run_seed(const Scenario& scenario, const MethodSpec& method, std::uint64_t seed) {
  scenario.params.validate(scenario.kind);
  method.validate(scenario.params.alpha);
  try {
    switch (scenario.kind) {
      case ScenarioKind::worst_case_oracle:
      case ScenarioKind::coin_flip:
      case ScenarioKind::group_coin_flip: return detail::run_set_scenario(scenario, method, seed);
      case ScenarioKind::toy_regression:
      case ScenarioKind::sin_regression:
      case ScenarioKind::csv: return detail::run_regression_scenario(scenario, method, seed);
      case ScenarioKind::arma_stream: break;
    }
  } catch (const NumericError& e) {
    throw NumericError("seed " + std::to_string(seed) + ": " + e.what());
  }
  throw InvalidArgument("scenario.kind: arma_stream runs through the online command");
}

inline RunMetrics aggregate(std::vector<SeedResult> per_seed) {
  RunMetrics out;
  std::vector<double> cov;
  std::vector<double> len;
  std::array<std::size_t, 2> hits{0, 0};
  for (const auto& r : per_seed) {
    cov.push_back(r.coverage);
    len.push_back(r.mean_length);
    for (std::size_t g = 0; g < 2; ++g) {
      hits[g] += r.group_hits[g];
      out.group_counts[g] += r.group_counts[g];
    }
  }
  out.coverage = mean_se(cov);
  out.mean_length = mean_se(len);
  for (std::size_t g = 0; g < 2; ++g) {
    out.group_coverage[g] =
        out.group_counts[g] ? static_cast<double>(hits[g]) / static_cast<double>(out.group_counts[g]) : 0.0;
  }
  out.per_seed = std::move(per_seed);
  return out;
}

/// Runs every seed (on up to `threads` worker threads) and aggregates.
/// Results are ordered as `seeds` regardless of the thread count.
inline RunMetrics run_batch_scenario(const Scenario& scenario, const MethodSpec& method,
                                     std::span<const std::uint64_t> seeds, std::size_t threads = 1) {
  detail::require(!seeds.empty(), "seeds: need at least one seed");
  scenario.params.validate(scenario.kind);
  method.validate(scenario.params.alpha);
  std::vector<SeedResult> results(seeds.size());
  threads = std::clamp<std::size_t>(threads, 1, seeds.size());
  if (threads == 1) {
    for (std::size_t i = 0; i < seeds.size(); ++i) results[i] = run_seed(scenario, method, seeds[i]);
    return aggregate(std::move(results));
  }
  std::vector<std::exception_ptr> errors(threads);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < threads; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < seeds.size(); i += threads) results[i] = run_seed(scenario, method, seeds[i]);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return aggregate(std::move(results));
}

/// Seeds 1..count.
inline std::vector<std::uint64_t> seed_range(std::size_t count, std::uint64_t first = 1) {
  std::vector<std::uint64_t> seeds(count);
  for (std::size_t i = 0; i < count; ++i) seeds[i] = first + i;
  return seeds;
}

}  // namespace stabsel
