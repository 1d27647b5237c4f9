#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "stabsel/dataset.hpp"
#include "stabsel/error.hpp"
#include "stabsel/predictors.hpp"
#include "stabsel/prediction_set.hpp"
#include "stabsel/rng.hpp"
#include "stabsel/selection.hpp"

namespace stabsel {

// ---------------------------------------------------------------------------
// Adaptive conformal inference
// ---------------------------------------------------------------------------

struct AciState {
  double alpha_t = 0.1;
  double gamma = 0.005;
  double target_alpha = 0.1;
  std::size_t errors = 0;
  std::size_t steps = 0;

  static AciState start(double target_alpha, double gamma) {
    detail::require(target_alpha > 0.0 && target_alpha < 1.0, "aci: target alpha must lie in (0, 1)");
    detail::require(gamma > 0.0, "aci: step size must be > 0");
    return {target_alpha, gamma, target_alpha, 0, 0};
  }

  double error_rate() const { return steps ? static_cast<double>(errors) / static_cast<double>(steps) : 0.0; }
};

/// alpha_{t+1} = alpha_t + gamma * (target - 1{not covered}).
inline AciState aci_step(AciState state, bool covered) {
  const double err = covered ? 0.0 : 1.0;
  state.alpha_t += state.gamma * (state.target_alpha - err);
  state.errors += covered ? 0 : 1;
  state.steps += 1;
  return state;
}

// ---------------------------------------------------------------------------
// Online point predictors
// ---------------------------------------------------------------------------

class OnlineLearner {
 public:
  virtual ~OnlineLearner() = default;
  virtual double predict(Features x) const = 0;
  virtual void update(Features x, double y) = 0;
  virtual std::string name() const = 0;
};

/// Linear model trained by one stochastic gradient step per observation on
/// the squared loss, with an optional L1 or L2 penalty.
class SgdRegressor final : public OnlineLearner {
 public:
  enum class Penalty { none, l1, l2 };

  SgdRegressor(std::size_t dim, double learning_rate, Penalty penalty = Penalty::none, double strength = 0.0)
      : w_(dim, 0.0), lr_(learning_rate), penalty_(penalty), strength_(strength) {
    detail::require(learning_rate > 0.0, "sgd: learning rate must be > 0");
  }

  double predict(Features x) const override {
    double v = b_;
    for (std::size_t j = 0; j < w_.size(); ++j) v += w_[j] * x[j];
    return v;
  }

  void update(Features x, double y) override {
    const double residual = predict(x) - y;
    for (std::size_t j = 0; j < w_.size(); ++j) {
      double grad = residual * x[j];
      if (penalty_ == Penalty::l2) grad += strength_ * w_[j];
      if (penalty_ == Penalty::l1) grad += strength_ * ((w_[j] > 0) - (w_[j] < 0));
      w_[j] -= lr_ * grad;
    }
    b_ -= lr_ * residual;
  }

  std::string name() const override { return "sgd(" + std::to_string(lr_) + ")"; }

 private:
  std::vector<double> w_;
  double b_ = 0.0;
  double lr_;
  Penalty penalty_;
  double strength_;
};

/// Least squares refit on the last `window` observations every `retrain`
/// updates. Predicts zero until the first fit.
class RollingOls final : public OnlineLearner {
 public:
  RollingOls(std::size_t dim, std::size_t window, std::size_t retrain, double penalty = 1e-8)
      : dim_(dim), window_(window), retrain_(retrain), penalty_(penalty) {
    detail::require(window >= 2, "rolling ols: window must be >= 2");
    detail::require(retrain >= 1, "rolling ols: retrain frequency must be >= 1");
  }

  double predict(Features x) const override { return model_ ? model_->predict(x) : 0.0; }

  void update(Features x, double y) override {
    buffer_.emplace_back(std::vector<double>(x.begin(), x.end()), y);
    if (buffer_.size() > window_) buffer_.pop_front();
    if (++since_fit_ >= retrain_ && buffer_.size() >= std::min<std::size_t>(window_, dim_ + 2)) {
      Dataset data(dim_);
      for (const auto& [xs, ys] : buffer_) data.add(xs, ys);
      model_ = fit_ridge(data, penalty_);
      since_fit_ = 0;
    }
  }

  std::string name() const override { return "rolling_ols(" + std::to_string(window_) + ")"; }

 private:
  std::size_t dim_;
  std::size_t window_;
  std::size_t retrain_;
  double penalty_;
  std::size_t since_fit_ = 0;
  std::deque<std::pair<std::vector<double>, double>> buffer_;
  std::optional<LinearModel> model_;
};

struct LearnerSpec {
  enum class Kind { sgd, rolling_ols };
  Kind kind = Kind::sgd;
  double learning_rate = 0.001;
  SgdRegressor::Penalty penalty = SgdRegressor::Penalty::none;
  double strength = 0.0;
  std::size_t window = 50;
  std::size_t retrain = 12;
};

inline std::unique_ptr<OnlineLearner> make_learner(const LearnerSpec& spec, std::size_t dim) {
  if (spec.kind == LearnerSpec::Kind::sgd) {
    return std::make_unique<SgdRegressor>(dim, spec.learning_rate, spec.penalty, spec.strength);
  }
  return std::make_unique<RollingOls>(dim, spec.window, spec.retrain);
}

/// Three learners matching the base pool used for the ARMA stream.
inline std::vector<LearnerSpec> default_learner_pool() {
  return {
      {LearnerSpec::Kind::sgd, 0.001, SgdRegressor::Penalty::none, 0.0, 0, 0},
      {LearnerSpec::Kind::sgd, 0.005, SgdRegressor::Penalty::l2, 0.1, 0, 0},
      {LearnerSpec::Kind::rolling_ols, 0.0, SgdRegressor::Penalty::none, 0.0, 50, 12},
  };
}

/// An online learner wrapped by ACI: the interval is f(x) +- q where q is
/// the ceil((1 - alpha_t) n)-th smallest of the last n absolute residuals.
/// alpha_t <= 0 gives the real line, alpha_t >= 1 the empty set.
class AciConformal {
 public:
  AciConformal(std::unique_ptr<OnlineLearner> learner, double target_alpha, double gamma, std::size_t window)
      : learner_(std::move(learner)), state_(AciState::start(target_alpha, gamma)), window_(window) {
    detail::require(window >= 1, "aci: score window must be >= 1");
  }

  PredictionSet predict_set(Features x) const {
    if (state_.alpha_t <= 0.0 || scores_.empty()) return PredictionSet::real_line();
    if (state_.alpha_t >= 1.0) return PredictionSet::empty();
    std::vector<double> sorted(scores_.begin(), scores_.end());
    const auto n = sorted.size();
    auto r = static_cast<std::size_t>(std::ceil((1.0 - state_.alpha_t) * static_cast<double>(n)));
    r = std::clamp<std::size_t>(r, 1, n);
    std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(r - 1), sorted.end());
    const double q = sorted[r - 1];
    const double f = learner_->predict(x);
    return PredictionSet::interval(f - q, f + q);
  }

  /// Records the residual and trains the learner without touching alpha_t.
  void warm_up(Features x, double y) {
    push_score(std::abs(learner_->predict(x) - y));
    learner_->update(x, y);
  }

  /// Reveals y after `shown` was issued for x.
  void observe(Features x, double y, const PredictionSet& shown) {
    state_ = aci_step(state_, shown.contains(y));
    warm_up(x, y);
  }

  const AciState& state() const { return state_; }
  const OnlineLearner& learner() const { return *learner_; }

 private:
  void push_score(double s) {
    if (!std::isfinite(s)) throw NumericError("aci: non-finite residual from " + learner_->name());
    scores_.push_back(s);
    if (scores_.size() > window_) scores_.pop_front();
  }

  std::unique_ptr<OnlineLearner> learner_;
  AciState state_;
  std::size_t window_;
  std::deque<double> scores_;
};

// ---------------------------------------------------------------------------
// COMA weights
// ---------------------------------------------------------------------------

/// Exponential weights over K predictors, driven either by AdaHedge
/// (learning rate ln K / Delta, Delta the cumulative mixability gap; uniform
/// weights while Delta = 0) or by Hedge with a fixed learning rate.
struct ComaWeights {
  enum class Rule { adahedge, hedge };

  Rule rule = Rule::adahedge;
  double hedge_eta = 0.1;
  std::vector<double> cumulative_loss;
  std::vector<double> w;
  double mixability_gap = 0.0;

  static ComaWeights start(std::size_t k, Rule rule = Rule::adahedge, double hedge_eta = 0.1) {
    detail::require(k >= 1, "weights: need at least one predictor");
    detail::require(hedge_eta >= 0.0 && std::isfinite(hedge_eta), "weights: hedge learning rate must be >= 0");
    ComaWeights cw;
    cw.rule = rule;
    cw.hedge_eta = hedge_eta;
    cw.cumulative_loss.assign(k, 0.0);
    cw.w.assign(k, 1.0 / static_cast<double>(k));
    return cw;
  }

  std::size_t size() const { return w.size(); }

  /// Current learning rate; +inf for AdaHedge before any mixability gap.
  double learning_rate() const {
    if (rule == Rule::hedge) return hedge_eta;
    if (w.size() == 1) return 0.0;
    if (mixability_gap <= 0.0) return std::numeric_limits<double>::infinity();
    return std::log(static_cast<double>(w.size())) / mixability_gap;
  }
};

namespace detail {

inline std::vector<double> exp_weights(std::span<const double> losses, double rate) {
  const double lmin = *std::min_element(losses.begin(), losses.end());
  std::vector<double> out(losses.size());
  double total = 0.0;
  for (std::size_t i = 0; i < losses.size(); ++i) {
    out[i] = std::exp(-rate * (losses[i] - lmin));
    total += out[i];
  }
  for (auto& v : out) v /= total;
  return out;
}

}  // namespace detail

inline ComaWeights coma_update(ComaWeights weights, std::span<const double> losses) {
  detail::require(losses.size() == weights.size(), "losses: length must match the number of predictors");
  for (double l : losses) {
    if (!std::isfinite(l) || l < 0.0) throw NumericError("losses: must be finite and >= 0");
  }
  const std::size_t k = weights.size();
  if (weights.rule == ComaWeights::Rule::adahedge && k > 1) {
    const double rate = weights.learning_rate();
    double mix_loss;
    if (std::isinf(rate)) {
      mix_loss = *std::min_element(losses.begin(), losses.end());
    } else {
      const double lmin = *std::min_element(losses.begin(), losses.end());
      double z = 0.0;
      for (std::size_t i = 0; i < k; ++i) z += weights.w[i] * std::exp(-rate * (losses[i] - lmin));
      mix_loss = lmin - std::log(z) / rate;
    }
    double hedge_loss = 0.0;
    for (std::size_t i = 0; i < k; ++i) hedge_loss += weights.w[i] * losses[i];
    weights.mixability_gap += std::max(0.0, hedge_loss - mix_loss);
  }
  for (std::size_t i = 0; i < k; ++i) weights.cumulative_loss[i] += losses[i];

  const double rate = weights.learning_rate();
  if (k == 1) {
    weights.w = {1.0};
  } else if (std::isinf(rate)) {
    weights.w.assign(k, 1.0 / static_cast<double>(k));
  } else {
    weights.w = detail::exp_weights(weights.cumulative_loss, rate);
  }
  // Keep every weight strictly positive even when exp underflows.
  bool renormalize = false;
  for (auto& v : weights.w) {
    if (v < 1e-300) {
      v = 1e-300;
      renormalize = true;
    }
  }
  if (renormalize) {
    double total = 0.0;
    for (double v : weights.w) total += v;
    for (auto& v : weights.w) v /= total;
  }
  return weights;
}

/// Loss of a set under scale L: measure / L capped at 1; unbounded sets cost 1.
inline double normalized_loss(const PredictionSet& set, double scale) {
  detail::require(scale > 0.0, "scale: must be > 0");
  const double m = set.measure();
  if (!std::isfinite(m)) return 1.0;
  return std::min(m, scale) / scale;
}

/// Weighted-majority COMA set.
inline PredictionSet coma_aggregate(const ComaWeights& weights, std::span<const PredictionSet> sets) {
  return weighted_majority(weights.w, sets);
}

struct AdaComaOutput {
  PredictionSet set;
  SelectionDistribution p;
  std::optional<std::size_t> chosen;
};

/// One AdaCOMA round: MinSE with the COMA weights as prior, then either the
/// weighted-majority set under p* (option 1) or a sampled predictor's set
/// (option 2). The caller feeds the losses to coma_update once y is known.
inline AdaComaOutput adacoma_step(const ComaWeights& weights, std::span<const PredictionSet> sets,
                                  const StabilityBudget& budget, int option, Rng& rng) {
  detail::require(option == 1 || option == 2, "option: must be 1 or 2");
  detail::require(sets.size() == weights.size(), "sets: length must match the number of predictors");
  SizeProfile xi;
  xi.sizes.reserve(sets.size());
  for (const auto& s : sets) xi.sizes.push_back(s.measure());
  auto p = minse(xi, Prior(weights.w), budget.eta, budget.tau);
  if (option == 1) return {weighted_majority(p.p, sets), std::move(p), std::nullopt};
  const std::size_t chosen = sample_selection(p, rng);
  return {sets[chosen], std::move(p), chosen};
}

// ---------------------------------------------------------------------------
// Online episode runner
// ---------------------------------------------------------------------------

struct OnlineConfig {
  std::vector<LearnerSpec> learners = default_learner_pool();
  std::size_t warmup = 100;
  std::size_t window = 100;
  double aci_gamma = 0.005;
  double coma_alpha = 0.1;  // ACI target of the bank COMA aggregates
  StabilityBudget budget{std::log(1.5), 0.025, 0.1, 0.05};  // alpha_prime: ACI target of the AdaCOMA bank
  ComaWeights::Rule rule = ComaWeights::Rule::adahedge;
  double hedge_eta = 0.1;
  double scale = 10.0;
};

struct OnlineStepRecord {
  std::size_t t = 0;
  bool coma_covered = false;
  double coma_length = 0.0;
  double coma_beta = 0.0;
  std::vector<double> coma_weights;
  std::size_t ada_chosen = 0;
  bool ada_covered = false;
  double ada_length = 0.0;
  bool ada_comb_covered = false;
  double ada_comb_length = 0.0;
  double ada_beta = 0.0;
  std::vector<double> ada_weights;
  std::vector<double> ada_p;
};

struct LongRun {
  double coverage = 0.0;
  double mean_length = 0.0;  // over bounded sets
  std::size_t unbounded = 0;
};

struct OnlineSummary {
  std::size_t steps = 0;
  LongRun coma;
  LongRun ada_option2;
  LongRun ada_option1;
  double coma_beta = 0.0;  // time-averaged weighted miscoverage of the COMA bank
  double ada_beta = 0.0;   // same for the AdaCOMA bank
  double gamma = 1.0;
  double tau = 0.0;

  bool empty() const { return steps == 0; }
  /// Option 2 miscoverage bound beta * e^eta + tau with the empirical beta.
  double option2_bound() const { return ada_beta * gamma + tau; }
  double option1_bound() const { return 2.0 * (ada_beta * gamma + tau); }
};

struct OnlineResult {
  std::vector<OnlineStepRecord> records;
  OnlineSummary summary;
};

namespace detail {

inline std::vector<AciConformal> make_bank(const OnlineConfig& cfg, std::size_t dim, double target) {
  std::vector<AciConformal> bank;
  for (const auto& spec : cfg.learners) bank.emplace_back(make_learner(spec, dim), target, cfg.aci_gamma, cfg.window);
  return bank;
}

inline void accumulate(LongRun& acc, bool covered, double length) {
  acc.coverage += covered ? 1.0 : 0.0;
  if (std::isfinite(length)) {
    acc.mean_length += length;
  } else {
    ++acc.unbounded;
  }
}

inline void finish(LongRun& acc, std::size_t steps) {
  if (steps == 0) return;
  acc.coverage /= static_cast<double>(steps);
  const std::size_t bounded = steps - acc.unbounded;
  acc.mean_length = bounded ? acc.mean_length / static_cast<double>(bounded) : 0.0;
}

}  // namespace detail

/// Runs COMA and AdaCOMA side by side on a stream. The first `warmup` rows
/// only train the learners and fill the residual windows; the remaining rows
/// are evaluated. COMA aggregates a bank whose ACI target is coma_alpha;
/// AdaCOMA runs MinSE(eta, tau) over a bank with ACI target alpha_prime.
inline OnlineResult run_online(const Dataset& stream, const OnlineConfig& cfg, std::uint64_t seed) {
  detail::require(!cfg.learners.empty(), "learners: need at least one learner");
  detail::require(cfg.budget.alpha_prime.has_value(), "alpha_prime: required for the AdaCOMA bank");
  cfg.budget.validate();
  detail::require(cfg.scale > 0.0, "scale: must be > 0");
  const std::size_t k = cfg.learners.size();

  auto coma_bank = detail::make_bank(cfg, stream.dim(), cfg.coma_alpha);
  auto ada_bank = detail::make_bank(cfg, stream.dim(), *cfg.budget.alpha_prime);
  auto coma_w = ComaWeights::start(k, cfg.rule, cfg.hedge_eta);
  auto ada_w = ComaWeights::start(k, cfg.rule, cfg.hedge_eta);
  Rng rng(seed);

  OnlineResult result;
  const std::size_t warm = std::min(cfg.warmup, stream.size());
  for (std::size_t t = 0; t < warm; ++t) {
    for (auto& m : coma_bank) m.warm_up(stream.x(t), stream.y(t));
    for (auto& m : ada_bank) m.warm_up(stream.x(t), stream.y(t));
  }

  std::vector<PredictionSet> coma_sets(k);
  std::vector<PredictionSet> ada_sets(k);
  std::vector<double> losses(k);
  auto& s = result.summary;
  std::size_t t = warm;
  try {
    for (; t < stream.size(); ++t) {
      const auto x = stream.x(t);
      const double y = stream.y(t);
      OnlineStepRecord rec;
      rec.t = t - warm + 1;

      for (std::size_t i = 0; i < k; ++i) {
        coma_sets[i] = coma_bank[i].predict_set(x);
        ada_sets[i] = ada_bank[i].predict_set(x);
      }

      const auto coma_set = coma_aggregate(coma_w, coma_sets);
      rec.coma_covered = coma_set.contains(y);
      rec.coma_length = coma_set.measure();
      rec.coma_weights = coma_w.w;

      SizeProfile xi;
      for (const auto& c : ada_sets) xi.sizes.push_back(c.measure());
      auto p = minse(xi, Prior(ada_w.w), cfg.budget.eta, cfg.budget.tau);
      const auto comb = weighted_majority(p.p, ada_sets);
      rec.ada_comb_covered = comb.contains(y);
      rec.ada_comb_length = comb.measure();
      rec.ada_chosen = sample_selection(p, rng);
      rec.ada_covered = ada_sets[rec.ada_chosen].contains(y);
      rec.ada_length = ada_sets[rec.ada_chosen].measure();
      rec.ada_p = p.p;
      rec.ada_weights = ada_w.w;

      for (std::size_t i = 0; i < k; ++i) {
        rec.coma_beta += coma_w.w[i] * (coma_sets[i].contains(y) ? 0.0 : 1.0);
        rec.ada_beta += ada_w.w[i] * (ada_sets[i].contains(y) ? 0.0 : 1.0);
      }

      for (std::size_t i = 0; i < k; ++i) losses[i] = normalized_loss(coma_sets[i], cfg.scale);
      coma_w = coma_update(std::move(coma_w), losses);
      for (std::size_t i = 0; i < k; ++i) losses[i] = normalized_loss(ada_sets[i], cfg.scale);
      ada_w = coma_update(std::move(ada_w), losses);

      for (std::size_t i = 0; i < k; ++i) {
        coma_bank[i].observe(x, y, coma_sets[i]);
        ada_bank[i].observe(x, y, ada_sets[i]);
      }

      detail::accumulate(s.coma, rec.coma_covered, rec.coma_length);
      detail::accumulate(s.ada_option2, rec.ada_covered, rec.ada_length);
      detail::accumulate(s.ada_option1, rec.ada_comb_covered, rec.ada_comb_length);
      s.coma_beta += rec.coma_beta;
      s.ada_beta += rec.ada_beta;
      result.records.push_back(std::move(rec));
    }
  } catch (const NumericError& e) {
    throw NumericError("step " + std::to_string(t - warm + 1) + ": " + e.what());
  }

  s.steps = result.records.size();
  s.gamma = cfg.budget.gamma();
  s.tau = cfg.budget.tau;
  detail::finish(s.coma, s.steps);
  detail::finish(s.ada_option2, s.steps);
  detail::finish(s.ada_option1, s.steps);
  if (s.steps) {
    s.coma_beta /= static_cast<double>(s.steps);
    s.ada_beta /= static_cast<double>(s.steps);
  }
  return result;
}

}  // namespace stabsel
