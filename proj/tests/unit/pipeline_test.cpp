#include "markovgen/pipeline.hpp"

#include <random>

#include <gtest/gtest.h>

#include "markovgen/datagen.hpp"
#include "test_util.hpp"

namespace markovgen {
namespace {

using testing::error_code;
using testing::normal_matrix;

TeacherModel untrained_teacher(GridGeometry g = {4, 4}, VocabSpec v = {5}) {
  TeacherConfig c;
  c.embed_dim = 8;
  c.hidden_dim = 16;
  c.blocks = 1;
  c.seed = 3;
  return TeacherModel(g, v, 2, c);
}

MRFParams random_params(GridGeometry g, VocabSpec v, double stddev, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  MRFParams p = MRFParams::zeros(g, v);
  p.w_spatial = normal_matrix(g.n(), g.n(), stddev, rng);
  p.w_label = normal_matrix(v.size, v.size, stddev, rng);
  return p;
}

MarkovGenOptions options_with(Precision precision) {
  MarkovGenOptions o;
  o.precision = precision;
  return o;
}

TEST(DeriveSeedTest, DistinctAndStable) {
  EXPECT_EQ(derive_seed(1, 2), derive_seed(1, 2));
  EXPECT_NE(derive_seed(1, 2), derive_seed(1, 3));
  EXPECT_NE(derive_seed(1, 2), derive_seed(2, 2));
}

TEST(MarkovGenInputTest, CommittedRowsArePinnedOthersKeepLogits) {
  const TeacherModel teacher = untrained_teacher();
  const DecodeTrace trace = progressive_decode(teacher, 0, DecodeSchedule::cosine(16, 6, 3), 1.0, 4);
  const LogitField input = markovgen_input(trace, 3, 10.0);
  const MaskedTokenGrid state = committed_state(trace, 3);
  for (int i = 0; i < 16; ++i) {
    const auto idx = static_cast<std::size_t>(i);
    if (state.mask[idx]) {
      EXPECT_EQ(input.values.row(i), trace.steps[2].logits.values.row(i));
    } else {
      RowMatrix expected = RowMatrix::Zero(1, 5);
      expected(0, state.grid.labels[idx]) = 10.0;
      EXPECT_EQ(input.values.row(i), expected);
    }
  }
  EXPECT_EQ(error_code([&] { markovgen_input(trace, 0, 10.0); }), ErrorCode::kIndexOutOfRange);
  EXPECT_EQ(error_code([&] { markovgen_input(trace, 7, 10.0); }), ErrorCode::kIndexOutOfRange);
}

TEST(MarkovGenDecodeTest, ZeroWeightsEqualEarlyExit) {
  const TeacherModel teacher = untrained_teacher();
  const MRFParams zero = MRFParams::zeros({4, 4}, {5});
  for (int k = 1; k < 8; ++k) {
    const DecodeSchedule schedule = DecodeSchedule::cosine(16, 8, k);
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      const MarkovGenResult r =
          markovgen_decode(teacher, zero, 1, schedule, options_with(Precision::kFloat64), seed);
      EXPECT_EQ(r.grid, early_exit(r.trace, k)) << "k " << k << " seed " << seed;
    }
  }
}

TEST(MarkovGenDecodeTest, FullCutReturnsFinalGrid) {
  const TeacherModel teacher = untrained_teacher();
  const DecodeSchedule schedule = DecodeSchedule::cosine(16, 6, 6);
  const MarkovGenResult r =
      markovgen_decode(teacher, random_params({4, 4}, {5}, 1.0, 1), 0, schedule, MarkovGenOptions{}, 9);
  EXPECT_EQ(r.grid, progressive_decode(teacher, 0, schedule, 1.0, 9).final_grid);
  EXPECT_EQ(r.mrf_ms, 0.0);
}

TEST(MarkovGenDecodeTest, CommittedTokensSurviveAdversarialWeights) {
  const TeacherModel teacher = untrained_teacher();
  // Strong repulsive weights would flip pinned tokens without enforcement.
  MRFParams p = MRFParams::zeros({4, 4}, {5});
  p.w_spatial.setConstant(5.0);
  p.w_label = -3.0 * RowMatrix::Identity(5, 5);
  for (Precision precision : {Precision::kFloat32, Precision::kFloat64}) {
    const MarkovGenResult r =
        markovgen_decode(teacher, p, 1, DecodeSchedule::cosine(16, 8, 4), options_with(precision), 2);
    const MaskedTokenGrid state = committed_state(r.trace, 4);
    for (std::size_t i = 0; i < 16; ++i)
      if (!state.mask[i]) EXPECT_EQ(r.grid.labels[i], state.grid.labels[i]);
  }
}

TEST(MarkovGenDecodeTest, SharesTeacherPrefixWithFullDecode) {
  const TeacherModel teacher = untrained_teacher();
  const DecodeSchedule schedule = DecodeSchedule::cosine(16, 8, 5);
  const MarkovGenResult r =
      markovgen_decode(teacher, random_params({4, 4}, {5}, 0.1, 2), 1, schedule, MarkovGenOptions{}, 11);
  const DecodeTrace full = progressive_decode(teacher, 1, schedule, 1.0, 11);
  ASSERT_EQ(r.trace.steps.size(), 5u);
  for (int s = 0; s < 5; ++s) EXPECT_EQ(r.trace.steps[s].committed_labels, full.steps[s].committed_labels);
}

TEST(MarkovGenDecodeTest, ShapeMismatch) {
  const TeacherModel teacher = untrained_teacher();
  EXPECT_EQ(error_code([&] {
              markovgen_decode(teacher, MRFParams::zeros({4, 4}, {6}), 0, DecodeSchedule::cosine(16, 4, 2),
                               MarkovGenOptions{}, 1);
            }),
            ErrorCode::kDimensionMismatch);
}

TEST(FastForwardTest, FloatAndDoubleAgreeOnWellSeparatedInputs) {
  const TeacherModel teacher = untrained_teacher();
  const MRFParams p = random_params({4, 4}, {5}, 0.05, 3);
  FastForward single(p, options_with(Precision::kFloat32));
  FastForward dbl(p, options_with(Precision::kFloat64));
  int differ = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const DecodeTrace trace = progressive_decode(teacher, 0, DecodeSchedule::cosine(16, 8, 5), 1.0, seed, 5);
    differ += disagreement(single.complete(trace, 5), dbl.complete(trace, 5)) > 0;
  }
  EXPECT_LE(differ, 1);
}

TEST(FastForwardTest, MatchesMeanFieldOnPinnedInput) {
  const TeacherModel teacher = untrained_teacher();
  const MRFParams p = random_params({4, 4}, {5}, 0.3, 4);
  const DecodeTrace trace = progressive_decode(teacher, 0, DecodeSchedule::cosine(16, 8, 3), 1.0, 5, 3);
  FastForward ff(p, options_with(Precision::kFloat64));
  const TokenGrid expected =
      enforce_committed(trace, 3, map_decode(mean_field_infer(p, markovgen_input(trace, 3, 10.0), 5)));
  EXPECT_EQ(ff.complete(trace, 3), expected);
}

TEST(DisagreementTest, FractionOfDifferingPositions) {
  const TokenGrid a{{1, 4}, {3}, {0, 1, 2, 0}};
  const TokenGrid b{{1, 4}, {3}, {0, 2, 2, 1}};
  EXPECT_EQ(disagreement(a, a), 0.0);
  EXPECT_EQ(disagreement(a, b), 0.5);
  EXPECT_EQ(error_code([&] { disagreement(a, TokenGrid::filled({2, 2}, {3})); }), ErrorCode::kDimensionMismatch);
}

TEST(DistillSetTest, TargetsAreFinalGridsOfSeededDecodes) {
  const TeacherModel teacher = untrained_teacher();
  const DecodeSchedule schedule = DecodeSchedule::cosine(16, 6, 4);
  const std::vector<int> conditions = {0, 1, 1};
  const auto set = build_distill_set(teacher, conditions, schedule, 1.0, 10.0, 21, 1);
  const auto threaded = build_distill_set(teacher, conditions, schedule, 1.0, 10.0, 21, 3);
  ASSERT_EQ(set.size(), 3u);
  for (std::size_t i = 0; i < set.size(); ++i) {
    const DecodeTrace trace = progressive_decode(teacher, conditions[i], schedule, 1.0, derive_seed(21, i));
    EXPECT_EQ(set[i].target, trace.final_grid);
    EXPECT_EQ(set[i].mrf_input.values, markovgen_input(trace, 4, 10.0).values);
    EXPECT_EQ(threaded[i].mrf_input.values, set[i].mrf_input.values);
  }
}

TEST(TrainMrfTest, DistillRequiresTeacher) {
  CorpusSpec spec;
  spec.geometry = {4, 4};
  spec.vocab = {5};
  spec.count = 2;
  const auto corpus = generate(spec);
  TrainConfig config;
  config.steps = 1;
  EXPECT_EQ(error_code([&] { train_mrf(Stage::kDistill, MRFParams::zeros({4, 4}, {5}), corpus, {}, config); }),
            ErrorCode::kInvalidArgument);
}

TEST(OptionsTest, Validation) {
  MarkovGenOptions o;
  EXPECT_NO_THROW(validate(o));
  o.mf_iterations = -1;
  EXPECT_EQ(error_code([&] { validate(o); }), ErrorCode::kInvalidArgument);
}

}  // namespace
}  // namespace markovgen
