#include "markovgen/oracle.hpp"

#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "markovgen/mrf.hpp"
#include "test_util.hpp"

namespace markovgen {
namespace {

using testing::error_code;
using testing::normal_matrix;

MRFParams random_params(GridGeometry g, VocabSpec v, double stddev, std::mt19937_64& rng) {
  MRFParams p = MRFParams::zeros(g, v);
  p.w_spatial = normal_matrix(g.n(), g.n(), stddev, rng);
  p.w_label = normal_matrix(v.size, v.size, stddev, rng);
  return p;
}

TEST(PartitionTest, ZeroInstanceCountsAssignments) {
  EXPECT_NEAR(enumerate_partition(MRFParams::zeros({1, 2}, {3}), LogitField::zeros({1, 2}, {3})), std::log(9.0),
              1e-12);
}

TEST(PartitionTest, SingleSiteIsLogSumExp) {
  LogitField f = LogitField::zeros({1, 1}, {2});
  f.values << 0.3, -1.7;
  EXPECT_NEAR(enumerate_partition(MRFParams::zeros({1, 1}, {2}), f), std::log(std::exp(0.3) + std::exp(-1.7)),
              1e-12);
}

TEST(PartitionTest, JointSumsToOne) {
  std::mt19937_64 rng(1);
  const GridGeometry g{2, 2};
  const VocabSpec v{3};
  const MRFParams p = random_params(g, v, 0.5, rng);
  const LogitField f{g, v, normal_matrix(g.n(), v.size, 1.0, rng)};
  const auto joint = exact_joint(p, f);
  ASSERT_EQ(joint.size(), 81u);
  double total = 0.0;
  for (double x : joint) total += x;
  EXPECT_NEAR(total, 1.0, 1e-9);
}

TEST(PartitionTest, HugeLogitsStayFinite) {
  LogitField f = LogitField::zeros({1, 2}, {2});
  f.values << 900, 0, 0, 900;
  const double log_z = enumerate_partition(MRFParams::zeros({1, 2}, {2}), f);
  EXPECT_NEAR(log_z, 1800.0, 1e-9);
}

TEST(PartitionTest, GuardRejectsLargeInstances) {
  EXPECT_EQ(error_code([] { require_enumerable({4, 4}, {3}); }), ErrorCode::kInstanceTooLarge);
  EXPECT_EQ(error_code([] { enumerate_partition(MRFParams::zeros({16, 16}, {2}), LogitField::zeros({16, 16}, {2})); }),
            ErrorCode::kInstanceTooLarge);
  EXPECT_NO_THROW(require_enumerable({3, 3}, {2}));
}

TEST(MarginalsTest, ZeroInstanceIsUniform) {
  const MarginalField q = exact_marginals(MRFParams::zeros({2, 2}, {3}), LogitField::zeros({2, 2}, {3}));
  EXPECT_LE((q.values.array() - 1.0 / 3.0).abs().maxCoeff(), 1e-12);
}

TEST(MarginalsTest, AttractivePairConcentratesJointOnDiagonal) {
  MRFParams p = MRFParams::zeros({1, 2}, {2});
  p.w_spatial.setOnes();
  p.w_label = 10.0 * RowMatrix::Identity(2, 2);
  const LogitField f = LogitField::zeros({1, 2}, {2});
  const MarginalField q = exact_marginals(p, f);
  EXPECT_LE((q.values.array() - 0.5).abs().maxCoeff(), 1e-12);
  const auto joint = exact_joint(p, f);
  // Odometer order: (0,0), (0,1), (1,0), (1,1).
  EXPECT_NEAR(joint[0], 0.5, 1e-8);
  EXPECT_NEAR(joint[3], 0.5, 1e-8);
  EXPECT_LT(joint[1], 1e-8);
  EXPECT_LT(joint[2], 1e-8);
}

TEST(MarginalsTest, MatchesDirectSumOverJoint) {
  std::mt19937_64 rng(2);
  const GridGeometry g{1, 3};
  const VocabSpec v{2};
  const MRFParams p = random_params(g, v, 0.8, rng);
  const LogitField f{g, v, normal_matrix(g.n(), v.size, 1.0, rng)};
  double z = 0.0;
  RowMatrix expected = RowMatrix::Zero(3, 2);
  for (int a = 0; a < 2; ++a)
    for (int b = 0; b < 2; ++b)
      for (int c = 0; c < 2; ++c) {
        const TokenGrid x{g, v, {static_cast<Label>(a), static_cast<Label>(b), static_cast<Label>(c)}};
        const double w = std::exp(-energy(p, f, x));
        z += w;
        expected(0, a) += w;
        expected(1, b) += w;
        expected(2, c) += w;
      }
  expected /= z;
  EXPECT_LE((exact_marginals(p, f).values - expected).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_NEAR(enumerate_partition(p, f), std::log(z), 1e-12);
}

TEST(MapTest, ZeroPairwiseIsPerLocationArgmax) {
  std::mt19937_64 rng(3);
  const GridGeometry g{2, 2};
  const VocabSpec v{4};
  const LogitField f{g, v, normal_matrix(g.n(), v.size, 1.0, rng)};
  TokenGrid expected = TokenGrid::filled(g, v);
  for (int i = 0; i < g.n(); ++i) {
    Eigen::Index k;
    f.values.row(i).maxCoeff(&k);
    expected.labels[static_cast<std::size_t>(i)] = static_cast<Label>(k);
  }
  EXPECT_EQ(exact_map(MRFParams::zeros(g, v), f), expected);
}

TEST(MapTest, UniformTiesGoToAllZeros) {
  EXPECT_EQ(exact_map(MRFParams::zeros({2, 2}, {3}), LogitField::zeros({2, 2}, {3})),
            TokenGrid::filled({2, 2}, {3}, 0));
}

TEST(MapTest, NotBeatenByRandomAssignments) {
  std::mt19937_64 rng(4);
  const GridGeometry g{3, 3};
  const VocabSpec v{2};
  const MRFParams p = random_params(g, v, 0.5, rng);
  const LogitField f{g, v, normal_matrix(g.n(), v.size, 1.0, rng)};
  const double best = energy(p, f, exact_map(p, f));
  for (int t = 0; t < 1000; ++t) EXPECT_LE(best, energy(p, f, testing::random_grid(g, v, rng)));
}

TEST(FreeEnergyOracleTest, MatchesClosedFormWithoutSelfPairs) {
  std::mt19937_64 rng(5);
  const GridGeometry g{2, 2};
  const VocabSpec v{3};
  MRFParams p = random_params(g, v, 0.5, rng);
  p.w_spatial.diagonal().setZero();
  const LogitField f{g, v, normal_matrix(g.n(), v.size, 1.0, rng)};
  for (int iters : {0, 2, 6}) {
    const MarginalField q = mean_field_infer(p, f, iters);
    EXPECT_NEAR(enumerate_free_energy(p, f, q), variational_free_energy(p, f, q), 1e-10);
  }
}

TEST(FreeEnergyOracleTest, SelfPairsDifferByTheDiagonalCorrection) {
  // The closed form scores the i == j pair as Q_i(k) Q_i(k'); the exact
  // expectation only sees k == k'.
  std::mt19937_64 rng(6);
  const GridGeometry g{2, 2};
  const VocabSpec v{3};
  const MRFParams p = random_params(g, v, 0.5, rng);
  const LogitField f{g, v, normal_matrix(g.n(), v.size, 1.0, rng)};
  const MarginalField q = mean_field_infer(p, f, 3);
  double correction = 0.0;
  for (int i = 0; i < g.n(); ++i) {
    const auto row = q.values.row(i);
    double exact = 0.0;
    for (int k = 0; k < v.size; ++k) exact += row(k) * p.w_label(k, k);
    correction -= p.w_spatial(i, i) * (exact - (row * p.w_label * row.transpose())(0, 0));
  }
  EXPECT_NEAR(enumerate_free_energy(p, f, q) - variational_free_energy(p, f, q), correction, 1e-10);
}

TEST(FreeEnergyOracleTest, BoundedBelowByNegativeLogZ) {
  std::mt19937_64 rng(16);
  const GridGeometry g{2, 2};
  const VocabSpec v{3};
  MRFParams p = random_params(g, v, 0.5, rng);
  p.w_spatial.diagonal().setZero();
  const LogitField f{g, v, normal_matrix(g.n(), v.size, 1.0, rng)};
  const double log_z = enumerate_partition(p, f);
  for (int iters : {0, 1, 5}) EXPECT_GE(enumerate_free_energy(p, f, mean_field_infer(p, f, iters)), -log_z - 1e-12);
}

TEST(GibbsTest, FixedSeedIsReproducible) {
  std::mt19937_64 rng(7);
  const GridGeometry g{2, 2};
  const VocabSpec v{3};
  const MRFParams p = random_params(g, v, 0.5, rng);
  const LogitField f{g, v, normal_matrix(g.n(), v.size, 1.0, rng)};
  EXPECT_EQ(gibbs_sample(p, f, 10, 50, 3), gibbs_sample(p, f, 10, 50, 3));
  EXPECT_NE(gibbs_sample(p, f, 10, 50, 3), gibbs_sample(p, f, 10, 50, 4));
  EXPECT_EQ(gibbs_sample(p, f, 10, 50, 3).size(), 50u);
}

TEST(GibbsTest, ZeroInstanceMarginalsPassChiSquare) {
  const GridGeometry g{2, 2};
  const VocabSpec v{3};
  const auto samples = gibbs_sample(MRFParams::zeros(g, v), LogitField::zeros(g, v), 100, 10000, 11);
  // Each location's label counts against uniform; df = 2, critical value at
  // alpha 0.01 is 9.2103.
  for (int i = 0; i < g.n(); ++i) {
    double counts[3] = {0, 0, 0};
    for (const auto& s : samples) counts[s.labels[static_cast<std::size_t>(i)]] += 1;
    const double expected = samples.size() / 3.0;
    double chi2 = 0.0;
    for (double c : counts) chi2 += (c - expected) * (c - expected) / expected;
    EXPECT_LT(chi2, 9.2103) << "location " << i;
  }
}

TEST(GibbsTest, EmpiricalMarginalsApproachExact) {
  std::mt19937_64 rng(8);
  const GridGeometry g{2, 2};
  const VocabSpec v{3};
  const MRFParams p = random_params(g, v, 0.5, rng);
  const LogitField f{g, v, normal_matrix(g.n(), v.size, 1.0, rng)};
  const MarginalField empirical = empirical_marginals(gibbs_sample(p, f, 1000, 100000, 9));
  EXPECT_LE((empirical.values - exact_marginals(p, f).values).cwiseAbs().maxCoeff(), 0.02);
}

TEST(GibbsTest, SelfTermEntersConditional) {
  // A strong self pair on label 1 at the only location makes label 1 dominant.
  MRFParams p = MRFParams::zeros({1, 1}, {2});
  p.w_spatial(0, 0) = 1.0;
  p.w_label(1, 1) = 5.0;
  const MarginalField empirical = empirical_marginals(gibbs_sample(p, LogitField::zeros({1, 1}, {2}), 10, 5000, 1));
  const MarginalField exact = exact_marginals(p, LogitField::zeros({1, 1}, {2}));
  EXPECT_NEAR(exact.values(0, 1), std::exp(5.0) / (1 + std::exp(5.0)), 1e-12);
  EXPECT_NEAR(empirical.values(0, 1), exact.values(0, 1), 0.01);
}

TEST(EmpiricalMarginalsTest, CountsFrequencies) {
  const std::vector<TokenGrid> samples = {TokenGrid{{1, 2}, {2}, {0, 1}}, TokenGrid{{1, 2}, {2}, {1, 1}}};
  const MarginalField q = empirical_marginals(samples);
  EXPECT_EQ(q.values, (RowMatrix(2, 2) << 0.5, 0.5, 0.0, 1.0).finished());
}

}  // namespace
}  // namespace markovgen
