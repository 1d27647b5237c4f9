#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include "stabsel/conformal.hpp"
#include "stabsel/dataset.hpp"
#include "stabsel/error.hpp"

namespace stabsel {

inline constexpr double kResidualScaleFloor = 1e-6;

/// Ridge regression coefficients with an unpenalized intercept.
struct LinearModel {
  Eigen::VectorXd weights;
  double intercept = 0.0;

  double predict(Features x) const {
    double v = intercept;
    for (Eigen::Index j = 0; j < weights.size(); ++j) v += weights[j] * x[static_cast<std::size_t>(j)];
    return v;
  }
};

/// Solves (Xc'Xc + penalty I) w = Xc'yc on centered data. A design that is
/// singular at the requested penalty is retried with the penalty raised
/// tenfold (starting from 1e-8) up to six times before giving up.
inline LinearModel fit_ridge(const Dataset& data, double penalty) {
  detail::require(!data.empty(), "training data: empty");
  detail::require(penalty >= 0.0, "ridge: penalty must be >= 0");
  const auto n = static_cast<Eigen::Index>(data.size());
  const auto d = static_cast<Eigen::Index>(data.dim());
  Eigen::MatrixXd X(n, d);
  Eigen::VectorXd y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto row = data.x(static_cast<std::size_t>(i));
    for (Eigen::Index j = 0; j < d; ++j) X(i, j) = row[static_cast<std::size_t>(j)];
    y[i] = data.y(static_cast<std::size_t>(i));
  }
  const Eigen::RowVectorXd x_mean = X.colwise().mean();
  const double y_mean = y.mean();
  X.rowwise() -= x_mean;
  y.array() -= y_mean;
  const Eigen::MatrixXd gram = X.transpose() * X;
  const Eigen::VectorXd rhs = X.transpose() * y;

  double lambda = penalty;
  for (int attempt = 0; attempt < 7; ++attempt) {
    Eigen::MatrixXd a = gram;
    a.diagonal().array() += lambda;
    Eigen::LLT<Eigen::MatrixXd> llt(a);
    if (llt.info() == Eigen::Success) {
      LinearModel model{llt.solve(rhs), 0.0};
      if (model.weights.allFinite()) {
        model.intercept = y_mean - x_mean.dot(model.weights);
        return model;
      }
    }
    lambda = lambda > 0.0 ? lambda * 10.0 : 1e-8;
  }
  throw NumericError("ridge: design matrix is degenerate even after raising the penalty");
}

/// Brute-force k-nearest-neighbour regression (Euclidean distance, mean of
/// the k nearest labels).
class KnnRegressor {
 public:
  KnnRegressor(Dataset data, std::size_t k) : data_(std::move(data)), k_(k) {
    detail::require(!data_.empty(), "training data: empty");
    detail::require(k >= 1, "knn: k must be >= 1");
    k_ = std::min(k_, data_.size());
  }

  template <class LabelFn>
  double average(Features x, LabelFn label) const {
    std::vector<std::pair<double, std::size_t>> dist(data_.size());
    for (std::size_t i = 0; i < data_.size(); ++i) {
      const auto xi = data_.x(i);
      double d = 0.0;
      for (std::size_t j = 0; j < xi.size(); ++j) d += (xi[j] - x[j]) * (xi[j] - x[j]);
      dist[i] = {d, i};
    }
    if (k_ < dist.size()) {
      std::nth_element(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k_ - 1), dist.end());
    }
    double total = 0.0;
    for (std::size_t i = 0; i < k_; ++i) total += label(dist[i].second);
    return total / static_cast<double>(k_);
  }

  double predict(Features x) const {
    return average(x, [&](std::size_t i) { return data_.y(i); });
  }

  const Dataset& data() const { return data_; }

 private:
  Dataset data_;
  std::size_t k_;
};

struct RegressorSpec {
  enum class Kind { ridge, knn };
  Kind kind = Kind::ridge;
  double penalty = 1.0;
  std::size_t k = 10;

  std::string name() const {
    return kind == Kind::ridge ? "ridge(" + std::to_string(penalty) + ")" : "knn(" + std::to_string(k) + ")";
  }
};

inline Predictor fit_regressor(const RegressorSpec& spec, const Dataset& data) {
  if (spec.kind == RegressorSpec::Kind::ridge) {
    auto model = std::make_shared<const LinearModel>(fit_ridge(data, spec.penalty));
    return [model](Features x) { return model->predict(x); };
  }
  auto model = std::make_shared<const KnnRegressor>(data, spec.k);
  return [model](Features x) { return model->predict(x); };
}

/// k-NN estimate of E|f(X) - Y| given X, floored at 1e-6.
inline Predictor fit_residual_scale(const Dataset& data, const Predictor& f, std::size_t k) {
  auto residuals = std::make_shared<std::vector<double>>(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) (*residuals)[i] = std::abs(f(data.x(i)) - data.y(i));
  auto model = std::make_shared<const KnnRegressor>(data, k);
  return [model, residuals](Features x) {
    const double g = model->average(x, [&](std::size_t i) { return (*residuals)[i]; });
    return std::max(g, kResidualScaleFloor);
  };
}

/// Point predictor f paired with its residual-scale model g.
struct BasePredictor {
  std::string name;
  Predictor f;
  Predictor g;

  ScoreFunction score() const { return ScoreFunction::scaled_residual(f, g); }
};

/// Indices of `data` split into `blocks` groups by quantiles of feature 0.
inline std::vector<std::vector<std::size_t>> quantile_blocks(const Dataset& data, std::size_t blocks) {
  detail::require(blocks >= 1, "blocks: must be >= 1");
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return data.x(a)[0] < data.x(b)[0]; });
  std::vector<std::vector<std::size_t>> out(blocks);
  for (std::size_t r = 0; r < order.size(); ++r) out[r * blocks / order.size()].push_back(order[r]);
  return out;
}

/// Fits one regressor per spec. With `blocks` > 1 predictor i only sees the
/// (i mod blocks)-th quantile block of `fit_data`, so the predictors are
/// accurate on different regions. Residual scales are fit on
/// `residual_data`.
inline std::vector<BasePredictor> base_predictors(std::span<const RegressorSpec> specs, const Dataset& fit_data,
                                                  const Dataset& residual_data, std::size_t blocks = 1,
                                                  std::size_t residual_k = 20) {
  detail::require(!specs.empty(), "predictors: need at least one regressor");
  detail::require(!fit_data.empty() && !residual_data.empty(), "training data: empty");
  const auto parts = quantile_blocks(fit_data, std::max<std::size_t>(blocks, 1));
  std::vector<BasePredictor> out;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const Dataset train = blocks > 1 ? fit_data.subset(parts[i % blocks]) : fit_data;
    Predictor f = fit_regressor(specs[i], train);
    Predictor g = fit_residual_scale(residual_data, f, residual_k);
    out.push_back({specs[i].name(), std::move(f), std::move(g)});
  }
  return out;
}

/// The heterogeneous default pool: ridge and k-NN with varied settings.
inline std::vector<RegressorSpec> default_regressor_pool(std::size_t k) {
  const std::vector<RegressorSpec> cycle{
      {RegressorSpec::Kind::ridge, 0.1, 0},  {RegressorSpec::Kind::knn, 0.0, 10},
      {RegressorSpec::Kind::ridge, 1.0, 0},  {RegressorSpec::Kind::knn, 0.0, 30},
      {RegressorSpec::Kind::ridge, 10.0, 0}, {RegressorSpec::Kind::knn, 0.0, 5},
  };
  std::vector<RegressorSpec> out;
  for (std::size_t i = 0; i < k; ++i) out.push_back(cycle[i % cycle.size()]);
  return out;
}

}  // namespace stabsel
