#pragma once

#include <cmath>
#include <vector>

#include "stabsel/dataset.hpp"
#include "stabsel/error.hpp"
#include "stabsel/predictors.hpp"
#include "stabsel/prediction_set.hpp"
#include "stabsel/rng.hpp"

namespace stabsel {

/// Label space of the oracle scenarios.
inline PredictionSet unit_label_space() { return PredictionSet::interval(0.0, 1.0); }

struct OracleDraw {
  std::vector<PredictionSet> sets;
  std::size_t miscovering = 0;
};

/// K oracles: a uniformly chosen one returns the empty set, all others the
/// full label space [0, 1]. Each oracle alone miscovers with probability 1/K.
inline OracleDraw gen_worst_case_oracles(std::size_t k, Rng& rng) {
  detail::require(k >= 2, "K: worst-case oracles need K >= 2");
  OracleDraw draw;
  draw.miscovering = static_cast<std::size_t>(rng.uniform_index(k));
  draw.sets.assign(k, unit_label_space());
  draw.sets[draw.miscovering] = PredictionSet::empty();
  return draw;
}

/// K independent sets, each empty with probability alpha_base and the full
/// label space [0, 1] otherwise.
inline std::vector<PredictionSet> gen_coin_flips(std::size_t k, double alpha_base, Rng& rng) {
  detail::require(k >= 1, "K: must be >= 1");
  detail::require(alpha_base >= 0.0 && alpha_base <= 1.0, "alpha_base: must lie in [0, 1]");
  std::vector<PredictionSet> sets;
  sets.reserve(k);
  for (std::size_t i = 0; i < k; ++i) {
    sets.push_back(rng.bernoulli(alpha_base) ? PredictionSet::empty() : unit_label_space());
  }
  return sets;
}

/// Group-structured draw: feature x1 ~ N(0, 1) defines the group (x1 >= 0).
/// In the nonnegative group the sets are coin flips over [0, 1]. In the
/// negative group every set covers y with probability 1 - alpha_base, but a
/// miscovering set is a short interval just above y while a covering one is
/// wide, so size-seeking selection is pulled toward the misses. Coverage of
/// each set conditional on the group is exactly 1 - alpha_base.
struct GroupDraw {
  double x1 = 0.0;
  int group = 0;
  double y = 0.0;
  std::vector<PredictionSet> sets;
};

inline GroupDraw gen_group_coin_flips(std::size_t k, double alpha_base, Rng& rng) {
  detail::require(k >= 1, "K: must be >= 1");
  detail::require(alpha_base >= 0.0 && alpha_base <= 1.0, "alpha_base: must lie in [0, 1]");
  GroupDraw draw;
  draw.x1 = rng.normal();
  draw.group = draw.x1 >= 0.0 ? 1 : 0;
  draw.y = rng.uniform();
  if (draw.group == 1) {
    draw.sets = gen_coin_flips(k, alpha_base, rng);
    return draw;
  }
  for (std::size_t i = 0; i < k; ++i) {
    if (rng.bernoulli(alpha_base)) {
      const double gap = 0.01 + 0.09 * rng.uniform();
      const double len = 0.3 * rng.uniform();
      draw.sets.push_back(PredictionSet::interval(draw.y + gap, draw.y + gap + len));
    } else {
      const double below = 0.1 + 0.4 * rng.uniform();
      const double above = 0.1 + 0.4 * rng.uniform();
      draw.sets.push_back(PredictionSet::interval(draw.y - below, draw.y + above));
    }
  }
  return draw;
}

/// Y = |X| + N(0, noise_variance) with X ~ Uniform[-1, 1].
inline Dataset gen_toy_regression(std::size_t n, Rng& rng, double noise_variance = 0.25) {
  detail::require(n >= 1, "n: must be >= 1");
  detail::require(noise_variance >= 0.0, "noise variance: must be >= 0");
  const double sd = std::sqrt(noise_variance);
  Dataset data(1);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = -1.0 + 2.0 * rng.uniform();
    data.add(Features(&x, 1), std::abs(x) + sd * rng.normal());
  }
  return data;
}

/// The two fixed predictors of the toy regression, f1(x) = x and f2(x) = -x.
inline std::vector<Predictor> toy_predictors() {
  return {[](Features x) { return x[0]; }, [](Features x) { return -x[0]; }};
}

/// Y = sin(<beta, X>) + noise_sd * N(0, 1), X ~ N(0, I_d), beta = (1/d, ..., 1/d).
inline Dataset gen_sin_regression(std::size_t n, std::size_t d, Rng& rng, double noise_sd = 0.1) {
  detail::require(n >= 1 && d >= 1, "n, d: must be >= 1");
  Dataset data(d);
  std::vector<double> x(d);
  for (std::size_t i = 0; i < n; ++i) {
    double dot = 0.0;
    for (auto& v : x) {
      v = rng.normal();
      dot += v / static_cast<double>(d);
    }
    data.add(x, std::sin(dot) + noise_sd * rng.normal());
  }
  return data;
}

/// ARMA(1,1): y_t = ar * y_{t-1} + e_t + ma * e_{t-1}, e_t ~ N(0, noise_sd^2).
/// Row t carries the `lags` previous values (most recent first) as features.
/// The recursion starts from zero and runs `burn_in` unrecorded steps.
inline Dataset gen_arma_stream(std::size_t t_len, double ar, double ma, double noise_sd, Rng& rng,
                               std::size_t lags = 3, std::size_t burn_in = 200) {
  if (!(std::abs(ar) < 1.0)) throw InvalidArgument("ar: |ar| must be < 1 for a stationary stream");
  detail::require(noise_sd >= 0.0, "noise_sd: must be >= 0");
  detail::require(lags >= 1, "lags: must be >= 1");
  Dataset data(lags);
  std::vector<double> history(lags, 0.0);
  double y_prev = 0.0;
  double e_prev = 0.0;
  const std::size_t total = burn_in + lags + t_len;
  for (std::size_t t = 0; t < total; ++t) {
    const double e = noise_sd * rng.normal();
    const double y = ar * y_prev + e + ma * e_prev;
    if (t >= burn_in + lags) data.add(history, y);
    for (std::size_t j = lags - 1; j > 0; --j) history[j] = history[j - 1];
    history[0] = y;
    y_prev = y;
    e_prev = e;
  }
  return data;
}

}  // namespace stabsel
