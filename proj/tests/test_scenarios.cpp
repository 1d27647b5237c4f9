#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <vector>

#include "stabsel/predictors.hpp"
#include "stabsel/scenarios.hpp"

using namespace stabsel;

namespace {

double lag_correlation(std::span<const double> y, std::size_t lag) {
  const double n = static_cast<double>(y.size());
  const double mean = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double num = 0.0;
  double den = 0.0;
  for (std::size_t t = 0; t < y.size(); ++t) {
    den += (y[t] - mean) * (y[t] - mean);
    if (t >= lag) num += (y[t] - mean) * (y[t - lag] - mean);
  }
  return num / den;
}

}  // namespace

TEST(Generators, WorstCaseOraclesHaveExactlyOneMiss) {
  Rng rng(51);
  std::vector<int> hits(5, 0);
  const int n = 50000;
  for (int t = 0; t < n; ++t) {
    const auto draw = gen_worst_case_oracles(5, rng);
    int empties = 0;
    for (std::size_t i = 0; i < 5; ++i) {
      if (draw.sets[i].is_empty()) {
        ++empties;
        EXPECT_EQ(i, draw.miscovering);
      } else {
        EXPECT_EQ(draw.sets[i], unit_label_space());
      }
    }
    ASSERT_EQ(empties, 1);
    ++hits[draw.miscovering];
  }
  for (int h : hits) EXPECT_NEAR(h / double(n), 0.2, 0.01);
  EXPECT_THROW(gen_worst_case_oracles(1, rng), InvalidArgument);
}

TEST(Generators, CoinFlipEmptyFrequency) {
  Rng rng(52);
  int empties = 0;
  const int draws = 20000;
  for (int t = 0; t < draws; ++t) {
    for (const auto& s : gen_coin_flips(10, 0.1, rng)) empties += s.is_empty();
  }
  EXPECT_NEAR(empties / (10.0 * draws), 0.1, 0.005);
  EXPECT_THROW(gen_coin_flips(3, 1.5, rng), InvalidArgument);
}

TEST(Generators, GroupCoinFlipCoverageIsExactPerGroup) {
  Rng rng(53);
  double covered[2] = {0, 0};
  double total[2] = {0, 0};
  for (int t = 0; t < 20000; ++t) {
    const auto draw = gen_group_coin_flips(10, 0.1, rng);
    EXPECT_EQ(draw.group, draw.x1 >= 0.0 ? 1 : 0);
    for (const auto& s : draw.sets) {
      covered[draw.group] += s.contains(draw.y);
      total[draw.group] += 1.0;
    }
  }
  EXPECT_NEAR(covered[0] / total[0], 0.9, 0.006);
  EXPECT_NEAR(covered[1] / total[1], 0.9, 0.006);
}

TEST(Generators, ToyRegressionMomentsAndPredictors) {
  Rng rng(54);
  const auto data = gen_toy_regression(100000, rng);
  double resid = 0.0;
  double resid2 = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const double x = data.x(i)[0];
    ASSERT_GE(x, -1.0);
    ASSERT_LE(x, 1.0);
    const double r = data.y(i) - std::abs(x);
    resid += r;
    resid2 += r * r;
  }
  const double n = static_cast<double>(data.size());
  EXPECT_NEAR(resid / n, 0.0, 0.01);
  EXPECT_NEAR(resid2 / n, 0.25, 0.005);
  const auto f = toy_predictors();
  const double x = 0.4;
  EXPECT_DOUBLE_EQ(f[0](Features(&x, 1)), 0.4);
  EXPECT_DOUBLE_EQ(f[1](Features(&x, 1)), -0.4);
}

TEST(Generators, SinRegressionNoiseVariance) {
  Rng rng(55);
  const std::size_t d = 10;
  const auto data = gen_sin_regression(100000, d, rng);
  EXPECT_EQ(data.dim(), d);
  double ss = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto x = data.x(i);
    const double dot = std::accumulate(x.begin(), x.end(), 0.0) / d;
    const double r = data.y(i) - std::sin(dot);
    ss += r * r;
  }
  EXPECT_NEAR(ss / data.size(), 0.01, 0.001);
}

TEST(Generators, ArmaAutocorrelation) {
  Rng rng(56);
  const auto white = gen_arma_stream(50000, 0.0, 0.0, 1.0, rng);
  EXPECT_NEAR(lag_correlation(white.labels(), 1), 0.0, 0.02);
  // Pure AR(1) has rho(1) = ar.
  const auto ar = gen_arma_stream(50000, 0.9, 0.0, 1.0, rng);
  EXPECT_NEAR(lag_correlation(ar.labels(), 1), 0.9, 0.02);
}

TEST(Generators, ArmaFeaturesAreLags) {
  Rng rng(57);
  const auto data = gen_arma_stream(100, 0.5, 0.2, 1.0, rng, 3);
  ASSERT_EQ(data.size(), 100u);
  ASSERT_EQ(data.dim(), 3u);
  for (std::size_t t = 3; t < data.size(); ++t) {
    EXPECT_EQ(data.x(t)[0], data.y(t - 1));
    EXPECT_EQ(data.x(t)[1], data.y(t - 2));
    EXPECT_EQ(data.x(t)[2], data.y(t - 3));
  }
}

TEST(Generators, ArmaRejectsNonStationary) {
  Rng rng(58);
  EXPECT_THROW(gen_arma_stream(10, 1.0, 0.0, 1.0, rng), InvalidArgument);
  EXPECT_THROW(gen_arma_stream(10, -1.2, 0.0, 1.0, rng), InvalidArgument);
}

TEST(Generators, DeterministicForASeed) {
  Rng a(59);
  Rng b(59);
  const auto da = gen_sin_regression(200, 4, a);
  const auto db = gen_sin_regression(200, 4, b);
  for (std::size_t i = 0; i < da.size(); ++i) {
    ASSERT_EQ(da.y(i), db.y(i));
    for (std::size_t j = 0; j < 4; ++j) ASSERT_EQ(da.x(i)[j], db.x(i)[j]);
  }
  Rng c(60);
  EXPECT_NE(gen_sin_regression(200, 4, c).y(0), da.y(0));
}

TEST(Predictors, RidgeRecoversNoiselessCoefficients) {
  Rng rng(61);
  Dataset data(3);
  for (int i = 0; i < 200; ++i) {
    const double x[3] = {rng.normal(), rng.normal(), rng.normal()};
    data.add(Features(x, 3), 1.5 * x[0] - 2.0 * x[1] + 0.25 * x[2] + 3.0);
  }
  const auto model = fit_ridge(data, 0.0);
  EXPECT_NEAR(model.weights[0], 1.5, 1e-6);
  EXPECT_NEAR(model.weights[1], -2.0, 1e-6);
  EXPECT_NEAR(model.weights[2], 0.25, 1e-6);
  EXPECT_NEAR(model.intercept, 3.0, 1e-6);
}

TEST(Predictors, RidgeHandlesCollinearDesign) {
  Dataset data(2);
  for (int i = 0; i < 20; ++i) {
    const double x[2] = {double(i), double(i)};
    data.add(Features(x, 2), 2.0 * i);
  }
  const auto model = fit_ridge(data, 0.0);
  const double probe[2] = {5.0, 5.0};
  EXPECT_NEAR(model.predict(Features(probe, 2)), 10.0, 1e-4);
}

TEST(Predictors, KnnWithAllPointsIsTheMean) {
  Rng rng(62);
  const auto data = gen_toy_regression(50, rng);
  const double mean = std::accumulate(data.labels().begin(), data.labels().end(), 0.0) / 50.0;
  KnnRegressor knn(data, 50);
  const double x = 0.3;
  EXPECT_NEAR(knn.predict(Features(&x, 1)), mean, 1e-12);
  KnnRegressor clipped(data, 500);
  EXPECT_NEAR(clipped.predict(Features(&x, 1)), mean, 1e-12);
}

TEST(Predictors, KnnOneNeighbourReproducesTrainingLabels) {
  Rng rng(63);
  const auto data = gen_sin_regression(30, 2, rng);
  KnnRegressor knn(data, 1);
  for (std::size_t i = 0; i < data.size(); ++i) EXPECT_EQ(knn.predict(data.x(i)), data.y(i));
}

TEST(Predictors, ResidualScaleIsFloored) {
  Dataset data(1);
  for (int i = 0; i < 10; ++i) {
    const double x = i;
    data.add(Features(&x, 1), 2.0 * x);
  }
  const Predictor exact = [](Features x) { return 2.0 * x[0]; };
  const auto g = fit_residual_scale(data, exact, 3);
  const double probe = 4.0;
  EXPECT_EQ(g(Features(&probe, 1)), kResidualScaleFloor);
}

TEST(Predictors, QuantileBlocksPartitionByFirstFeature) {
  Rng rng(64);
  const auto data = gen_sin_regression(103, 2, rng);
  const auto blocks = quantile_blocks(data, 5);
  ASSERT_EQ(blocks.size(), 5u);
  std::size_t total = 0;
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    total += blocks[b].size();
    EXPECT_GE(blocks[b].size(), 20u);
    if (b == 0) continue;
    double prev_max = -INFINITY;
    for (auto i : blocks[b - 1]) prev_max = std::max(prev_max, data.x(i)[0]);
    for (auto i : blocks[b]) EXPECT_GE(data.x(i)[0], prev_max);
  }
  EXPECT_EQ(total, data.size());
}

TEST(Predictors, BasePredictorPoolCycles) {
  const auto pool = default_regressor_pool(8);
  ASSERT_EQ(pool.size(), 8u);
  EXPECT_EQ(pool[0].kind, RegressorSpec::Kind::ridge);
  EXPECT_EQ(pool[1].kind, RegressorSpec::Kind::knn);
  EXPECT_EQ(pool[6].name(), pool[0].name());
  Rng rng(65);
  const auto fit = gen_sin_regression(300, 3, rng);
  const auto resid = gen_sin_regression(100, 3, rng);
  const auto models = base_predictors(pool, fit, resid, 4);
  ASSERT_EQ(models.size(), 8u);
  for (const auto& m : models) {
    const auto x = resid.x(0);
    EXPECT_TRUE(std::isfinite(m.f(x)));
    EXPECT_GE(m.g(x), kResidualScaleFloor);
  }
}

TEST(Dataset, CsvRoundTripAndErrors) {
  const std::string path = ::testing::TempDir() + "stabsel_scenarios.csv";
  {
    std::ofstream out(path);
    out << "a,b,y\n1,2,3\n\n4.5,-1,0.25\r\n";
  }
  const auto data = read_csv_dataset(path);
  ASSERT_EQ(data.size(), 2u);
  EXPECT_EQ(data.dim(), 2u);
  EXPECT_EQ(data.x(1)[0], 4.5);
  EXPECT_EQ(data.y(1), 0.25);
  {
    std::ofstream out(path);
    out << "a,y\n1,2\n3\n";
  }
  EXPECT_THROW(read_csv_dataset(path), InvalidArgument);
  {
    std::ofstream out(path);
    out << "a,y\n1,abc\n";
  }
  EXPECT_THROW(read_csv_dataset(path), InvalidArgument);
  std::remove(path.c_str());
  EXPECT_THROW(read_csv_dataset(path), InvalidArgument);
}
