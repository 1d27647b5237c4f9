#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "grid_oracle.hpp"
#include "lp_oracle.hpp"
#include "stabsel/mechanism.hpp"
#include "stabsel/selection.hpp"

using namespace stabsel;

namespace {

SizeProfile profile(std::vector<double> sizes, double scale = 1.0) { return {std::move(sizes), scale}; }

std::vector<double> frequencies(std::size_t k, std::size_t draws, auto&& draw) {
  std::vector<double> f(k, 0.0);
  for (std::size_t t = 0; t < draws; ++t) f[draw()] += 1.0;
  for (auto& v : f) v /= static_cast<double>(draws);
  return f;
}

std::vector<double> random_simplex(std::size_t k, Rng& rng) {
  std::vector<double> b(k);
  double total = 0.0;
  for (auto& v : b) total += (v = 0.05 + rng.uniform());
  for (auto& v : b) v /= total;
  double sum = 0.0;
  for (std::size_t i = 0; i + 1 < k; ++i) sum += b[i];
  b[k - 1] = 1.0 - sum;
  return b;
}

}  // namespace

// ---------------------------------------------------------------------------
// Budget / prior validation
// ---------------------------------------------------------------------------

TEST(StabilityBudget, ValidatesRanges) {
  EXPECT_NO_THROW((StabilityBudget{0.5, 0.1, 0.1, 0.05}.validate()));
  EXPECT_THROW((StabilityBudget{-0.1, 0.0, 0.1, std::nullopt}.validate()), InvalidArgument);
  EXPECT_THROW((StabilityBudget{0.0, 1.0, 0.1, std::nullopt}.validate()), InvalidArgument);
  EXPECT_THROW((StabilityBudget{0.0, 0.0, 0.1, 0.2}.validate()), InvalidArgument);
  EXPECT_DOUBLE_EQ((StabilityBudget{std::log(2.0), 0.02, 0.1, std::nullopt}.adjusted_base_level()), 0.04);
}

TEST(Prior, RejectsSimplexViolation) {
  try {
    Prior({0.5, 0.6});
    FAIL() << "expected a simplex violation";
  } catch (const InvalidArgument& e) {
    EXPECT_NE(std::string(e.what()).find("simplex"), std::string::npos);
  }
  EXPECT_THROW(Prior({1.2, -0.2}), InvalidArgument);
  EXPECT_NO_THROW(Prior({0.25, 0.75}));
}

TEST(SizeProfile, NormalizedRejectsOutOfRange) {
  EXPECT_THROW(profile({0.5, 1.5}).normalized(), InvalidArgument);
  EXPECT_THROW(profile({0.5, -0.1}).normalized(), InvalidArgument);
  EXPECT_NO_THROW(profile({0.5, 1.5}, 2.0).normalized());
}

// ---------------------------------------------------------------------------
// Laplace mechanism
// ---------------------------------------------------------------------------

TEST(LaplaceSelect, SingleCandidate) {
  Rng rng(1);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(laplace_select(profile({0.5}), 1.0, rng), 0u);
}

TEST(LaplaceSelect, SymmetricSizesGiveEqualFrequencies) {
  Rng rng(2);
  const auto f = frequencies(2, 1000000, [&] { return laplace_select(profile({0.0, 0.0}), 1.0, rng); });
  EXPECT_NEAR(f[0], 0.5, 0.005);
  EXPECT_NEAR(f[1], 0.5, 0.005);
}

TEST(LaplaceSelect, MatchesQuadratureOracle) {
  // Quadrature of P(x_i + eps_i is minimal) with x = (0.1, 0.5, 0.9), eta = 2.
  const std::vector<double> expected{0.6160734420, 0.2716159748, 0.1123105831};
  Rng rng(3);
  const auto f = frequencies(3, 1000000, [&] { return laplace_select(profile({0.1, 0.5, 0.9}), 2.0, rng); });
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(f[i], expected[i], 0.005) << i;
}

TEST(LaplaceSelect, FrequenciesSatisfyDeclaredCertificate) {
  // eta-stable against uniform: p_i <= e^eta / K, checked within 3 s.e.
  const double eta = 0.5;
  const std::size_t draws = 1000000;
  Rng rng(4);
  const auto f = frequencies(4, draws, [&] { return laplace_select(profile({0.0, 0.2, 1.0, 1.0}), eta, rng); });
  for (double v : f) {
    const double se = std::sqrt(v * (1.0 - v) / static_cast<double>(draws));
    EXPECT_LE(v, std::exp(eta) / 4.0 + 3.0 * se);
  }
}

TEST(LaplaceSelect, Errors) {
  Rng rng(5);
  EXPECT_THROW(laplace_select(profile({0.5, 1.2}), 1.0, rng), InvalidArgument);
  EXPECT_THROW(laplace_select(profile({0.5, 0.2}), 0.0, rng), InvalidArgument);
  EXPECT_THROW(laplace_select(profile({0.5, 0.2}), -1.0, rng), InvalidArgument);
}

// ---------------------------------------------------------------------------
// Exponential mechanism
// ---------------------------------------------------------------------------

TEST(ExponentialSelect, EqualSizesAreUniform) {
  const auto p = exponential_select(profile({0.4, 0.4, 0.4}), 3.0);
  for (double v : p.p) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
}

TEST(ExponentialSelect, TwoPointValues) {
  const auto p = exponential_select(profile({0.0, 1.0}), 1.0);
  EXPECT_NEAR(p[0], 0.731058578630005, 1e-12);
  EXPECT_NEAR(p[1], 0.268941421369995, 1e-12);
  const auto flat = exponential_select(profile({0.0, 1.0}), 0.0);
  EXPECT_DOUBLE_EQ(flat[0], 0.5);
  EXPECT_DOUBLE_EQ(flat[1], 0.5);
}

TEST(ExponentialSelect, CertificateAtTwiceEta) {
  Rng rng(6);
  for (int inst = 0; inst < 200; ++inst) {
    std::vector<double> sizes(2 + rng.uniform_index(8));
    for (auto& s : sizes) s = rng.uniform();
    const double eta = 3.0 * rng.uniform();
    const auto p = exponential_select(profile(sizes), eta);
    EXPECT_TRUE(on_simplex(p.p));
    EXPECT_TRUE(satisfies_certificate(p.p, Prior::uniform(sizes.size()), 2.0 * eta, 0.0));
    EXPECT_NEAR(p.budget_used.gamma, std::exp(2.0 * eta), 1e-12);
  }
}

TEST(ExponentialSelect, LargeEtaDoesNotOverflow) {
  const auto p = exponential_select(profile({0.0, 1.0}), 1000.0);
  EXPECT_DOUBLE_EQ(p[0], 1.0);
  EXPECT_TRUE(on_simplex(p.p));
}

TEST(ExponentialSelect, RejectsUnnormalizedSizes) {
  EXPECT_THROW(exponential_select(profile({0.0, 2.0}), 1.0), InvalidArgument);
}

// ---------------------------------------------------------------------------
// MinSE
// ---------------------------------------------------------------------------

TEST(Minse, FullMultiplierReducesToArgmin) {
  const auto p = minse(profile({0.2, 0.5, 0.9}), Prior::uniform(3), std::log(3.0), 0.0);
  EXPECT_DOUBLE_EQ(p[0], 1.0);
  EXPECT_DOUBLE_EQ(p[1], 0.0);
  EXPECT_DOUBLE_EQ(p[2], 0.0);
}

TEST(Minse, NeverPicksTheLargerHalf) {
  const auto p = minse(profile({0.1, 0.2, 0.3, 0.4}), Prior::uniform(4), std::log(2.0), 0.0);
  EXPECT_NEAR(p[0], 0.5, 1e-15);
  EXPECT_NEAR(p[1], 0.5, 1e-15);
  EXPECT_EQ(p[2], 0.0);
  EXPECT_EQ(p[3], 0.0);
}

TEST(Minse, SlackGoesToTheSmallerSet) {
  const auto p = minse(profile({0.3, 0.7}), Prior({0.5, 0.5}), 0.0, 0.2);
  EXPECT_NEAR(p[0], 0.7, 1e-15);
  EXPECT_NEAR(p[1], 0.3, 1e-15);
}

TEST(Minse, ZeroBudgetReturnsThePrior) {
  Rng rng(8);
  for (int inst = 0; inst < 100; ++inst) {
    const std::size_t k = 1 + rng.uniform_index(7);
    const auto b = random_simplex(k, rng);
    std::vector<double> sizes(k);
    for (auto& s : sizes) s = rng.uniform();
    const auto p = minse(profile(sizes), Prior(b), 0.0, 0.0);
    if (k == 1) {
      EXPECT_EQ(p.p, std::vector<double>{1.0});
      continue;
    }
    for (std::size_t i = 0; i < k; ++i) EXPECT_NEAR(p[i], b[i], 1e-15);
  }
}

TEST(Minse, SingleCandidateLeavesBudgetUntouched) {
  const auto p = minse(profile({3.0}), Prior::uniform(1), 2.0, 0.3);
  EXPECT_EQ(p.p, std::vector<double>{1.0});
  EXPECT_EQ(p.budget_used.gamma, 1.0);
  EXPECT_EQ(p.budget_used.tau, 0.0);
}

TEST(Minse, TiesPreferLargerPriorThenLowerIndex) {
  const auto p = minse(profile({0.5, 0.5, 0.5}), Prior({0.2, 0.5, 0.3}), std::log(1.5), 0.0);
  // Fill order 1, 2, 0 with caps 0.75, 0.45.
  EXPECT_NEAR(p[1], 0.75, 1e-15);
  EXPECT_NEAR(p[2], 0.25, 1e-15);
  EXPECT_EQ(p[0], 0.0);
  const auto q = minse(profile({0.5, 0.5}), Prior::uniform(2), std::log(1.5), 0.0);
  EXPECT_NEAR(q[0], 0.75, 1e-15);
  EXPECT_NEAR(q[1], 0.25, 1e-15);
}

TEST(Minse, AcceptsUnboundedSizes) {
  const double inf = std::numeric_limits<double>::infinity();
  const auto p = minse(profile({inf, 2.0, inf}), Prior::uniform(3), std::log(2.0), 0.0);
  EXPECT_NEAR(p[1], 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(p[0] + p[2], 1.0 / 3.0, 1e-15);
}

TEST(Minse, MatchesLpOracleOnRandomInstances) {
  Rng rng(9);
  for (int inst = 0; inst < 2000; ++inst) {
    const std::size_t k = 2 + rng.uniform_index(9);
    const auto b = random_simplex(k, rng);
    std::vector<double> sizes(k);
    for (auto& s : sizes) s = rng.uniform_index(4) == 0 ? 0.5 : rng.uniform() * 5.0;
    const double gamma = 1.0 + 4.0 * rng.uniform();
    const double tau = rng.uniform() < 0.3 ? 0.0 : 0.5 * rng.uniform();
    const auto p = minse_gamma(profile(sizes), Prior(b), gamma, tau);
    const auto lp = oracle::minse_lp(sizes, b, gamma, tau);
    ASSERT_NEAR(expected_size(p.p, sizes), lp.objective, 1e-9) << "instance " << inst;
    ASSERT_TRUE(on_simplex(p.p));
    ASSERT_LE(oracle::slack_needed(p.p, b, gamma), tau + kCertificateTol);
  }
}

TEST(Minse, MonotoneInOwnSize) {
  Rng rng(10);
  for (int inst = 0; inst < 500; ++inst) {
    const std::size_t k = 2 + rng.uniform_index(6);
    const auto b = random_simplex(k, rng);
    std::vector<double> sizes(k);
    for (auto& s : sizes) s = rng.uniform();
    const double eta = rng.uniform();
    const double tau = 0.2 * rng.uniform();
    const std::size_t i = rng.uniform_index(k);
    const auto before = minse(profile(sizes), Prior(b), eta, tau);
    sizes[i] *= rng.uniform();
    const auto after = minse(profile(sizes), Prior(b), eta, tau);
    EXPECT_GE(after[i], before[i] - 1e-12) << "instance " << inst;
  }
}

TEST(Minse, RejectsMalformedInputs) {
  EXPECT_THROW(minse(profile({0.1, 0.2}), Prior::uniform(3), 0.0, 0.0), InvalidArgument);
  EXPECT_THROW(minse(profile({0.1, 0.2}), Prior::uniform(2), -1.0, 0.0), InvalidArgument);
  EXPECT_THROW(minse(profile({0.1, 0.2}), Prior::uniform(2), 0.0, -0.1), InvalidArgument);
  EXPECT_THROW(minse(profile({0.1, NAN}), Prior::uniform(2), 0.0, 0.0), InvalidArgument);
}

// ---------------------------------------------------------------------------
// Sampling and derandomization
// ---------------------------------------------------------------------------

TEST(SampleSelection, PointMass) {
  Rng rng(11);
  for (int i = 0; i < 1000; ++i) EXPECT_EQ(sample_selection(std::vector<double>{1.0, 0.0, 0.0}, rng), 0u);
}

TEST(SampleSelection, Frequencies) {
  Rng rng(12);
  const std::vector<double> p{0.5, 0.5};
  const auto f = frequencies(2, 1000000, [&] { return sample_selection(p, rng); });
  EXPECT_NEAR(f[0], 0.5, 0.005);
}

TEST(SampleSelection, Deterministic) {
  const std::vector<double> p{0.7, 0.3};
  Rng a(13);
  Rng b(13);
  for (int i = 0; i < 100000; ++i) ASSERT_EQ(sample_selection(p, a), sample_selection(p, b));
}

TEST(SampleSelection, NeverReturnsZeroMassIndex) {
  Rng rng(14);
  const std::vector<double> p{0.0, 0.3, 0.0, 0.7 - 1e-17, 0.0};
  for (int i = 0; i < 100000; ++i) {
    const auto k = sample_selection(p, rng);
    ASSERT_TRUE(k == 1 || k == 3);
  }
}

TEST(Derandomize, UsesSelectionWeights) {
  SelectionDistribution p{{0.6, 0.4}, {1.0, 0.0}};
  std::vector<PredictionSet> sets{PredictionSet::interval(0.0, 1.0), PredictionSet::interval(0.5, 2.0)};
  EXPECT_EQ(derandomize(p, sets), PredictionSet::interval(0.0, 1.0));
  SelectionDistribution point{{0.0, 1.0}, {1.0, 0.0}};
  EXPECT_EQ(derandomize(point, sets), sets[1]);
}

// ---------------------------------------------------------------------------
// Dominance
// ---------------------------------------------------------------------------

TEST(Dominance, SelfAndPriorAreDominated) {
  Rng rng(15);
  for (int inst = 0; inst < 500; ++inst) {
    const std::size_t k = 2 + rng.uniform_index(6);
    const auto b = random_simplex(k, rng);
    std::vector<double> sizes(k);
    for (auto& s : sizes) s = rng.uniform();
    const double eta = rng.uniform();
    const double tau = 0.3 * rng.uniform();
    const auto self = minse(profile(sizes), Prior(b), eta, tau);
    EXPECT_TRUE(dominance_check(profile(sizes), self.p, Prior(b), eta, tau));
    EXPECT_TRUE(dominance_check(profile(sizes), b, Prior(b), eta, tau));
  }
}

TEST(Dominance, ExponentialAtItsMinimalCertificate) {
  Rng rng(16);
  for (int inst = 0; inst < 1000; ++inst) {
    const std::size_t k = 2 + rng.uniform_index(8);
    std::vector<double> sizes(k);
    for (auto& s : sizes) s = rng.uniform();
    const auto comp = exponential_select(profile(sizes), 5.0 * rng.uniform());
    const auto uniform = Prior::uniform(k);
    std::vector<double> b(uniform.values().begin(), uniform.values().end());
    const double eta = std::log(oracle::minimal_gamma(comp.p, b)) + 1e-12;
    EXPECT_TRUE(dominance_check(profile(sizes), comp.p, uniform, eta, 0.0)) << "instance " << inst;
  }
}

TEST(Dominance, RejectsUnstableCompetitor) {
  EXPECT_THROW(dominance_check(profile({0.1, 0.9}), std::vector<double>{1.0, 0.0}, Prior::uniform(2), 0.0, 0.0),
               InvalidArgument);
}

// ---------------------------------------------------------------------------
// Mechanism dispatch
// ---------------------------------------------------------------------------

TEST(Mechanism, ParseAndDispatch) {
  EXPECT_EQ(parse_mechanism("ada_minse"), MechanismKind::ada_minse);
  EXPECT_THROW(parse_mechanism("nope"), InvalidArgument);
  MechanismConfig cfg;
  cfg.kind = MechanismKind::argmin;
  const std::vector<double> sizes{0.4, 0.1, 0.3};
  EXPECT_EQ(selection_distribution(cfg, sizes)->p, (std::vector<double>{0.0, 1.0, 0.0}));
  cfg.kind = MechanismKind::laplace;
  cfg.eta = 1.0;
  EXPECT_FALSE(selection_distribution(cfg, sizes).has_value());
  cfg.kind = MechanismKind::exponential;
  EXPECT_DOUBLE_EQ(certified_eta(cfg), 2.0);
  cfg.kind = MechanismKind::minse;
  cfg.eta = std::log(3.0);
  Rng rng(17);
  EXPECT_EQ(select_index(cfg, sizes, rng), 1u);
}

TEST(Mechanism, ExponentialWithZeroEtaIsUniformRegardlessOfSizes) {
  MechanismConfig cfg;
  cfg.kind = MechanismKind::exponential;
  cfg.eta = 0.0;
  const auto p = selection_distribution(cfg, std::vector<double>{0.0, 0.3, 1.0});
  for (double v : p->p) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
}
