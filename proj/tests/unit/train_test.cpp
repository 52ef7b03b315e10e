#include "markovgen/train.hpp"

#include <cmath>
#include <random>
#include <set>
#include <sstream>
#include <vector>

#include <gtest/gtest.h>

#include "markovgen/datagen.hpp"
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

double weighted_q(const MRFParams& p, const LogitField& f, int iters, const RowMatrix& upstream) {
  return mean_field_infer(p, f, iters).values.cwiseProduct(upstream).sum();
}

void expect_matches_finite_differences(RowMatrix& target, const RowMatrix& analytic,
                                       const std::function<double()>& loss) {
  constexpr double h = 1e-3;
  for (Eigen::Index i = 0; i < target.size(); ++i) {
    const double saved = target.data()[i];
    target.data()[i] = saved + h;
    const double up = loss();
    target.data()[i] = saved - h;
    const double down = loss();
    target.data()[i] = saved;
    const double reference = (up - down) / (2 * h);
    const double err = std::abs(analytic.data()[i] - reference);
    if (std::abs(reference) < 1e-6)
      EXPECT_LE(err, 1e-6) << "entry " << i;
    else
      EXPECT_LE(err / std::abs(reference), 1e-4) << "entry " << i;
  }
}

std::vector<TokenGrid> checkerboards(int count) {
  CorpusSpec spec;
  spec.geometry = {4, 4};
  spec.vocab = {2};
  spec.count = count;
  std::vector<TokenGrid> out;
  for (auto& g : generate(spec)) out.push_back(g.grid);
  return out;
}

TEST(MeanFieldBackwardTest, ZeroUpstreamGivesZeroGradients) {
  std::mt19937_64 rng(1);
  const GridGeometry g{2, 2};
  const VocabSpec v{3};
  const MRFParams p = random_params(g, v, 0.5, rng);
  const LogitField f{g, v, normal_matrix(g.n(), v.size, 1.0, rng)};
  const GradientBundle grads = mean_field_backward(p, f, 3, RowMatrix::Zero(g.n(), v.size));
  EXPECT_EQ(grads.d_w_spatial.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(grads.d_w_label.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(grads.d_logits.cwiseAbs().maxCoeff(), 0.0);
}

TEST(MeanFieldBackwardTest, ZeroLabelWeightsBlockSpatialGradient) {
  std::mt19937_64 rng(2);
  const GridGeometry g{2, 2};
  const VocabSpec v{3};
  MRFParams p = random_params(g, v, 0.5, rng);
  p.w_label.setZero();
  const LogitField f{g, v, normal_matrix(g.n(), v.size, 1.0, rng)};
  const GradientBundle grads = mean_field_backward(p, f, 1, normal_matrix(g.n(), v.size, 1.0, rng));
  EXPECT_EQ(grads.d_w_spatial.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_GT(grads.d_w_label.cwiseAbs().maxCoeff(), 0.0);
}

TEST(MeanFieldBackwardTest, MatchesFiniteDifferences) {
  std::mt19937_64 rng(3);
  const GridGeometry g{2, 2};
  const VocabSpec v{3};
  MRFParams p = random_params(g, v, 0.5, rng);
  LogitField f{g, v, normal_matrix(g.n(), v.size, 1.0, rng)};
  const RowMatrix upstream = normal_matrix(g.n(), v.size, 1.0, rng);
  const GradientBundle grads = mean_field_backward(p, f, 2, upstream);
  auto loss = [&] { return weighted_q(p, f, 2, upstream); };
  expect_matches_finite_differences(p.w_spatial, grads.d_w_spatial, loss);
  expect_matches_finite_differences(p.w_label, grads.d_w_label, loss);
  expect_matches_finite_differences(f.values, grads.d_logits, loss);
}

TEST(MeanFieldBackwardTest, ZeroIterationsOnlyReachLogits) {
  std::mt19937_64 rng(4);
  const GridGeometry g{1, 3};
  const VocabSpec v{2};
  const MRFParams p = random_params(g, v, 0.5, rng);
  const LogitField f{g, v, normal_matrix(g.n(), v.size, 1.0, rng)};
  const GradientBundle grads = mean_field_backward(p, f, 0, normal_matrix(g.n(), v.size, 1.0, rng));
  EXPECT_EQ(grads.d_w_spatial.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(grads.d_w_label.cwiseAbs().maxCoeff(), 0.0);
}

TEST(MeanFieldBackwardTest, ShapeMismatch) {
  const MRFParams p = MRFParams::zeros({2, 2}, {3});
  EXPECT_EQ(error_code([&] { mean_field_backward(p, LogitField::zeros({2, 2}, {3}), 1, RowMatrix::Zero(3, 3)); }),
            ErrorCode::kDimensionMismatch);
}

TEST(MaskTest, FloorRule) {
  EXPECT_EQ(masked_count(256, 0.20), 51);
  EXPECT_EQ(masked_count(16, 0.20), 3);
  EXPECT_EQ(masked_count(10, 0.0), 0);
}

TEST(MaskTest, RandomMaskHidesExactCount) {
  std::mt19937_64 rng(5);
  const TokenGrid grid = TokenGrid::filled({16, 16}, {4});
  for (int t = 0; t < 10; ++t) {
    const MaskedTokenGrid masked = random_mask(grid, 0.2, rng);
    EXPECT_EQ(masked.masked_count(), 51);
    EXPECT_EQ(masked.grid, grid);
  }
}

TEST(MaskTest, RandomMaskIsSeeded) {
  const TokenGrid grid = TokenGrid::filled({4, 4}, {2});
  std::mt19937_64 a(9), b(9);
  EXPECT_EQ(random_mask(grid, 0.5, a).mask, random_mask(grid, 0.5, b).mask);
}

TEST(ObservedUnariesTest, KappaAtObservedZeroAtMasked) {
  MaskedTokenGrid masked = MaskedTokenGrid::fully_observed(TokenGrid{{1, 3}, {3}, {2, 0, 1}});
  masked.mask[1] = true;
  const LogitField f = observed_unaries(masked, 10.0);
  RowMatrix expected = RowMatrix::Zero(3, 3);
  expected(0, 2) = 10.0;
  expected(2, 1) = 10.0;
  EXPECT_EQ(f.values, expected);
}

TEST(PretrainLossTest, AllMaskedZeroParamsIsLogV) {
  TrainConfig config;
  for (int v : {2, 5, 64}) {
    const MaskedTokenGrid masked = MaskedTokenGrid::fully_masked({3, 3}, {v});
    const LossAndGrad lg = pretrain_loss(MRFParams::zeros({3, 3}, {v}), masked, config);
    EXPECT_NEAR(lg.loss, std::log(static_cast<double>(v)), 1e-12);
  }
}

TEST(PretrainLossTest, NothingMaskedIsAnError) {
  const MaskedTokenGrid masked = MaskedTokenGrid::fully_observed(TokenGrid::filled({2, 2}, {3}));
  EXPECT_EQ(error_code([&] { pretrain_loss(MRFParams::zeros({2, 2}, {3}), masked, TrainConfig{}); }),
            ErrorCode::kInvalidArgument);
}

TEST(PretrainLossTest, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(6);
  const GridGeometry g{3, 3};
  const VocabSpec v{3};
  MRFParams p = random_params(g, v, 0.3, rng);
  TrainConfig config;
  config.num_iterations_mf = 2;
  config.unary_strength_kappa = 2.0;
  MaskedTokenGrid masked = MaskedTokenGrid::fully_observed(testing::random_grid(g, v, rng));
  for (int i : {0, 4, 7}) masked.mask[static_cast<std::size_t>(i)] = true;
  const LossAndGrad lg = pretrain_loss(p, masked, config);
  EXPECT_GE(lg.loss, 0.0);
  auto loss = [&] { return pretrain_loss(p, masked, config).loss; };
  expect_matches_finite_differences(p.w_spatial, lg.grads.d_w_spatial, loss);
  expect_matches_finite_differences(p.w_label, lg.grads.d_w_label, loss);
}

TEST(DistillLossTest, ZeroParamsEqualsCrossEntropyOfSoftmax) {
  std::mt19937_64 rng(7);
  const GridGeometry g{2, 3};
  const VocabSpec v{4};
  const LogitField f{g, v, normal_matrix(g.n(), v.size, 1.0, rng)};
  const TokenGrid target = testing::random_grid(g, v, rng);
  const RowMatrix q = softmax_rows(f.values);
  double expected = 0.0;
  for (int i = 0; i < g.n(); ++i) expected -= std::log(q(i, target.labels[static_cast<std::size_t>(i)]));
  expected /= g.n();
  EXPECT_NEAR(distill_loss(MRFParams::zeros(g, v), f, target, TrainConfig{}).loss, expected, 1e-12);
}

TEST(DistillLossTest, NearOneHotOnTargetGivesNearZero) {
  const TokenGrid target{{1, 3}, {3}, {1, 2, 0}};
  LogitField f = LogitField::zeros({1, 3}, {3});
  for (int i = 0; i < 3; ++i) f.values(i, target.labels[static_cast<std::size_t>(i)]) = 800.0;
  const LossAndGrad lg = distill_loss(MRFParams::zeros({1, 3}, {3}), f, target, TrainConfig{});
  EXPECT_NEAR(lg.loss, 0.0, 1e-12);
}

TEST(DistillLossTest, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(8);
  const GridGeometry g{2, 2};
  const VocabSpec v{4};
  MRFParams p = random_params(g, v, 0.3, rng);
  const LogitField f{g, v, normal_matrix(g.n(), v.size, 1.0, rng)};
  const TokenGrid target = testing::random_grid(g, v, rng);
  TrainConfig config;
  config.num_iterations_mf = 3;
  const LossAndGrad lg = distill_loss(p, f, target, config);
  EXPECT_GT(lg.loss, 0.0);
  auto loss = [&] { return distill_loss(p, f, target, config).loss; };
  expect_matches_finite_differences(p.w_spatial, lg.grads.d_w_spatial, loss);
  expect_matches_finite_differences(p.w_label, lg.grads.d_w_label, loss);
}

TEST(DistillLossTest, ShapeMismatch) {
  EXPECT_EQ(error_code([&] {
              distill_loss(MRFParams::zeros({2, 2}, {3}), LogitField::zeros({2, 2}, {3}),
                           TokenGrid::filled({2, 2}, {4}), TrainConfig{});
            }),
            ErrorCode::kDimensionMismatch);
}

TEST(AdamTest, ZeroGradientsLeaveParamsAndAdvanceStep) {
  std::mt19937_64 rng(9);
  const MRFParams p = random_params({2, 2}, {3}, 0.5, rng);
  const auto [next, state] = adam_step(p, GradientBundle::zeros(p), AdamState::zeros_like(p), TrainConfig{});
  EXPECT_EQ(next.w_spatial, p.w_spatial);
  EXPECT_EQ(next.w_label, p.w_label);
  EXPECT_EQ(state.step, 1);
}

TEST(AdamTest, FirstStepClosedForm) {
  std::mt19937_64 rng(10);
  const MRFParams p = random_params({2, 2}, {3}, 0.5, rng);
  GradientBundle g = GradientBundle::zeros(p);
  g.d_w_spatial = normal_matrix(4, 4, 1.0, rng);
  g.d_w_label = normal_matrix(3, 3, 1e-7, rng);
  TrainConfig config;
  config.learning_rate = 0.01;
  const auto [next, state] = adam_step(p, g, AdamState::zeros_like(p), config);
  const double eps = config.adam_epsilon;
  for (Eigen::Index i = 0; i < g.d_w_spatial.size(); ++i) {
    const double gi = g.d_w_spatial.data()[i];
    EXPECT_NEAR(next.w_spatial.data()[i] - p.w_spatial.data()[i], -0.01 * gi / (std::abs(gi) + eps), 1e-12);
  }
  for (Eigen::Index i = 0; i < g.d_w_label.size(); ++i) {
    const double gi = g.d_w_label.data()[i];
    EXPECT_NEAR(next.w_label.data()[i] - p.w_label.data()[i], -0.01 * gi / (std::abs(gi) + eps), 1e-12);
  }
}

TEST(AdamTest, QuadraticNormDecreases) {
  std::mt19937_64 rng(11);
  MRFParams p = random_params({2, 2}, {3}, 1.0, rng);
  AdamState state = AdamState::zeros_like(p);
  TrainConfig config;
  config.learning_rate = 0.01;
  double prev = p.w_spatial.squaredNorm() + p.w_label.squaredNorm();
  for (int t = 0; t < 100; ++t) {
    GradientBundle g = GradientBundle::zeros(p);
    g.d_w_spatial = 2.0 * p.w_spatial;
    g.d_w_label = 2.0 * p.w_label;
    std::tie(p, state) = adam_step(p, g, state, config);
    const double now = p.w_spatial.squaredNorm() + p.w_label.squaredNorm();
    EXPECT_LT(now, prev);
    prev = now;
  }
}

TEST(InitTest, IdentityLabelAndSmallSpatialWithZeroDiagonal) {
  const MRFParams p = init_params({4, 4}, {5}, 3);
  EXPECT_EQ(p.w_label, (0.1 * RowMatrix::Identity(5, 5)).eval());
  EXPECT_EQ(p.w_spatial.diagonal().cwiseAbs().maxCoeff(), 0.0);
  const double mean_sq = p.w_spatial.squaredNorm() / (16.0 * 15.0);
  EXPECT_NEAR(std::sqrt(mean_sq), 0.01, 0.003);
  EXPECT_EQ(init_params({4, 4}, {5}, 3).w_spatial, p.w_spatial);
  EXPECT_NE(init_params({4, 4}, {5}, 4).w_spatial, p.w_spatial);
}

TEST(MetricsTest, TabSeparatedLine) {
  const std::string line = format_metrics_line({12, Stage::kDistill, 0.5, 3.25});
  std::istringstream in(line);
  std::string step, stage, loss, ms;
  std::getline(in, step, '\t');
  std::getline(in, stage, '\t');
  std::getline(in, loss, '\t');
  std::getline(in, ms, '\t');
  EXPECT_EQ(step, "12");
  EXPECT_EQ(stage, "distill");
  EXPECT_DOUBLE_EQ(std::stod(loss), 0.5);
  EXPECT_DOUBLE_EQ(std::stod(ms), 3.25);
  EXPECT_EQ(to_string(Stage::kPretrain), "pretrain");
}

TEST(TrainTest, ZeroStepsReturnsInit) {
  const MRFParams init = init_params({4, 4}, {2}, 1);
  TrainConfig config;
  config.steps = 0;
  const auto corpus = checkerboards(4);
  const MRFParams out = train_pretrain(init, corpus, config);
  EXPECT_EQ(out.w_spatial, init.w_spatial);
  EXPECT_EQ(out.w_label, init.w_label);
}

TEST(TrainTest, EmptyCorpusIsAnError) {
  TrainConfig config;
  config.steps = 1;
  EXPECT_TRUE(error_code([&] { train_pretrain(init_params({4, 4}, {2}, 1), std::span<const TokenGrid>{}, config); }));
}

TEST(TrainTest, SeedDeterministicAndThreadIndependent) {
  const auto corpus = checkerboards(8);
  TrainConfig config;
  config.steps = 5;
  config.batch_size = 4;
  config.learning_rate = 0.01;
  config.seed = 77;
  const MRFParams init = init_params({4, 4}, {2}, 1);
  const MRFParams a = train_pretrain(init, corpus, config);
  const MRFParams b = train_pretrain(init, corpus, config);
  config.threads = 3;
  const MRFParams c = train_pretrain(init, corpus, config);
  EXPECT_EQ(a.w_spatial, b.w_spatial);
  EXPECT_EQ(a.w_label, b.w_label);
  EXPECT_EQ(a.w_spatial, c.w_spatial);
  EXPECT_EQ(a.w_label, c.w_label);
}

TEST(TrainTest, SinkSeesEveryStep) {
  const auto corpus = checkerboards(4);
  TrainConfig config;
  config.steps = 7;
  config.batch_size = 2;
  std::vector<long> steps;
  train_pretrain(init_params({4, 4}, {2}, 1), corpus, config, [&](const MetricsRecord& r) {
    EXPECT_EQ(r.stage, Stage::kPretrain);
    EXPECT_GE(r.loss, 0.0);
    steps.push_back(r.step);
  });
  EXPECT_EQ(steps, (std::vector<long>{1, 2, 3, 4, 5, 6, 7}));
}

TEST(TrainTest, PretrainLearnsCheckerboard) {
  const auto corpus = checkerboards(16);
  TrainConfig config;
  config.steps = 300;
  config.learning_rate = 0.02;
  config.seed = 5;
  const MRFParams init = init_params({4, 4}, {2}, 1);
  const double before = masked_accuracy(init, corpus, config, 4, 3);
  const MRFParams trained = train_pretrain(init, corpus, config);
  EXPECT_GE(masked_accuracy(trained, corpus, config, 4, 3), 0.9);
  EXPECT_LT(before, 0.9);
}

TEST(TrainTest, DistillReducesLossBelowZeroParamBaseline) {
  std::mt19937_64 rng(12);
  const GridGeometry g{3, 3};
  const VocabSpec v{3};
  std::vector<DistillExample> examples;
  for (int e = 0; e < 8; ++e) {
    // Targets are the checkerboard; inputs are noisy hints of it.
    TokenGrid target = TokenGrid::filled(g, v);
    for (int i = 0; i < g.n(); ++i) target.labels[static_cast<std::size_t>(i)] = static_cast<Label>((i / 3 + i % 3) % 2);
    LogitField f{g, v, normal_matrix(g.n(), v.size, 1.0, rng)};
    examples.push_back({f, target});
  }
  TrainConfig config;
  config.steps = 200;
  config.batch_size = 4;
  config.learning_rate = 0.05;
  auto mean_loss = [&](const MRFParams& p) {
    double total = 0.0;
    for (const auto& ex : examples) total += distill_loss(p, ex.mrf_input, ex.target, config).loss;
    return total / static_cast<double>(examples.size());
  };
  const MRFParams trained = train_distill(init_params(g, v, 2), examples, config);
  EXPECT_LT(mean_loss(trained), mean_loss(MRFParams::zeros(g, v)));
}

TEST(TrainConfigTest, Validation) {
  TrainConfig config;
  EXPECT_NO_THROW(validate(config));
  config.mask_fraction = 1.5;
  EXPECT_EQ(error_code([&] { validate(config); }), ErrorCode::kInvalidArgument);
  config = {};
  config.batch_size = 0;
  EXPECT_EQ(error_code([&] { validate(config); }), ErrorCode::kInvalidArgument);
}

}  // namespace
}  // namespace markovgen
