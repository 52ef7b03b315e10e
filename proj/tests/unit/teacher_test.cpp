#include "markovgen/teacher.hpp"

#include <filesystem>
#include <vector>

#include <gtest/gtest.h>

#include "markovgen/datagen.hpp"
#include "test_util.hpp"

namespace markovgen {
namespace {

using testing::error_code;

TeacherConfig small_config(int steps, std::uint64_t seed = 1) {
  TeacherConfig c;
  c.embed_dim = 16;
  c.hidden_dim = 32;
  c.blocks = 2;
  c.learning_rate = 5e-3;
  c.batch_size = 8;
  c.steps = steps;
  c.seed = seed;
  return c;
}

std::vector<LabeledGrid> corpus_of(PatternKind kind, int vocab, int count, int condition, std::uint64_t seed) {
  CorpusSpec spec;
  spec.kind = kind;
  spec.geometry = {6, 6};
  spec.vocab = {vocab};
  spec.count = count;
  spec.condition = condition;
  spec.seed = seed;
  return generate(spec);
}

TEST(TeacherTest, PredictLogitsShapeFiniteAndDeterministic) {
  const TeacherModel model({6, 6}, {5}, 2, small_config(0));
  const MaskedTokenGrid masked = MaskedTokenGrid::fully_masked({6, 6}, {5});
  const LogitField a = model.predict_logits(masked, 1);
  EXPECT_NO_THROW(validate(a));
  EXPECT_EQ(a.values.rows(), 36);
  EXPECT_EQ(a.values.cols(), 5);
  EXPECT_EQ(a.values, model.predict_logits(masked, 1).values);
}

TEST(TeacherTest, PredictLogitsRejectsBadInputs) {
  const TeacherModel model({6, 6}, {5}, 2, small_config(0));
  EXPECT_EQ(error_code([&] { model.predict_logits(MaskedTokenGrid::fully_masked({6, 6}, {5}), 2); }),
            ErrorCode::kInvalidArgument);
  EXPECT_EQ(error_code([&] { model.predict_logits(MaskedTokenGrid::fully_masked({5, 6}, {5}), 0); }),
            ErrorCode::kDimensionMismatch);
}

TEST(TeacherTest, EmptyCorpusIsAnError) {
  EXPECT_EQ(error_code([] { train_teacher(std::span<const LabeledGrid>{}, 1, small_config(1)); }),
            ErrorCode::kInvalidArgument);
}

TEST(TeacherTest, TrainingIsSeedDeterministic) {
  const auto corpus = corpus_of(PatternKind::kStripes, 4, 16, 0, 1);
  const TeacherModel a = train_teacher(corpus, 1, small_config(3, 9));
  const TeacherModel b = train_teacher(corpus, 1, small_config(3, 9));
  const MaskedTokenGrid masked = MaskedTokenGrid::fully_masked({6, 6}, {4});
  EXPECT_EQ(a.predict_logits(masked, 0).values, b.predict_logits(masked, 0).values);
}

TEST(TeacherTest, ProgressReportsEveryStep) {
  const auto corpus = corpus_of(PatternKind::kStripes, 4, 8, 0, 1);
  int calls = 0;
  train_teacher(corpus, 1, small_config(4), [&](int step, double loss, double ms) {
    EXPECT_EQ(step, ++calls);
    EXPECT_GT(loss, 0.0);
    EXPECT_GE(ms, 0.0);
  });
  EXPECT_EQ(calls, 4);
}

TEST(TeacherTest, LearnsHeldOutCheckerboard) {
  const auto train = corpus_of(PatternKind::kCheckerboard, 2, 64, 0, 1);
  const auto held_out = corpus_of(PatternKind::kCheckerboard, 2, 16, 0, 2);
  const TeacherModel model = train_teacher(train, 1, small_config(200));
  EXPECT_GE(teacher_masked_accuracy(model, held_out, 0.5, 3), 0.95);
}

TEST(TeacherTest, MemorizesSingleGrid) {
  const auto one = corpus_of(PatternKind::kBlobs, 8, 1, 0, 4);
  const TeacherModel model = train_teacher(one, 1, small_config(300));
  EXPECT_GE(teacher_masked_accuracy(model, one, 0.3, 5), 0.95);
}

TEST(TeacherTest, FullyObservedInputIsReconstructed) {
  const auto train = corpus_of(PatternKind::kStripes, 4, 64, 0, 6);
  const TeacherModel model = train_teacher(train, 1, small_config(600));
  const TokenGrid grid = corpus_of(PatternKind::kStripes, 4, 1, 0, 7).front().grid;
  const LogitField f = model.predict_logits(MaskedTokenGrid::fully_observed(grid), 0);
  int correct = 0;
  for (int i = 0; i < 36; ++i) {
    Eigen::Index k;
    f.values.row(i).maxCoeff(&k);
    correct += k == grid.labels[static_cast<std::size_t>(i)];
  }
  EXPECT_EQ(correct, 36);
}

TEST(TeacherTest, UsesTheCondition) {
  auto corpus = corpus_of(PatternKind::kStripes, 4, 64, 0, 8);
  const auto checker = corpus_of(PatternKind::kCheckerboard, 4, 64, 1, 9);
  corpus.insert(corpus.end(), checker.begin(), checker.end());
  auto held_out = corpus_of(PatternKind::kStripes, 4, 16, 0, 10);
  const auto checker_held = corpus_of(PatternKind::kCheckerboard, 4, 16, 1, 11);
  held_out.insert(held_out.end(), checker_held.begin(), checker_held.end());
  const TeacherModel model = train_teacher(corpus, 2, small_config(300));
  // At 90% masking only the condition says which pattern to draw.
  EXPECT_GT(teacher_masked_accuracy(model, held_out, 0.9, 12),
            teacher_masked_accuracy(model, held_out, 0.9, 12, 1));
}

TEST(TeacherTest, SaveLoadRoundTrip) {
  const auto corpus = corpus_of(PatternKind::kStripes, 4, 8, 0, 1);
  const TeacherModel model = train_teacher(corpus, 1, small_config(2));
  const auto path = std::filesystem::temp_directory_path() / "markovgen_teacher_roundtrip.mgtf";
  save_teacher(path, model);
  const TeacherModel back = load_teacher(path);
  std::filesystem::remove(path);
  EXPECT_EQ(back.parameter_count(), model.parameter_count());
  EXPECT_EQ(back.blocks(), 2);
  MaskedTokenGrid masked = MaskedTokenGrid::fully_observed(corpus[3].grid);
  for (std::size_t i = 0; i < masked.mask.size(); i += 3) masked.mask[i] = true;
  EXPECT_EQ(back.predict_logits(masked, 0).values, model.predict_logits(masked, 0).values);
}

TEST(TeacherConfigTest, Validation) {
  TeacherConfig c = small_config(1);
  EXPECT_NO_THROW(validate(c));
  c.batch_size = 0;
  EXPECT_EQ(error_code([&] { validate(c); }), ErrorCode::kInvalidArgument);
}

}  // namespace
}  // namespace markovgen
