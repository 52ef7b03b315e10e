#include <random>

#include <benchmark/benchmark.h>

#include "markovgen/mrf.hpp"
#include "markovgen/pipeline.hpp"
#include "markovgen/teacher.hpp"
#include "markovgen/train.hpp"

namespace {

using namespace markovgen;

constexpr GridGeometry kGeometry{16, 16};

LogitField random_logits(GridGeometry geometry, VocabSpec vocab, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  LogitField f = LogitField::zeros(geometry, vocab);
  for (Eigen::Index i = 0; i < f.values.size(); ++i) f.values.data()[i] = normal(rng);
  return f;
}

void BM_MeanFieldDouble(benchmark::State& state) {
  const VocabSpec vocab{static_cast<int>(state.range(0))};
  const MRFParams params = init_params(kGeometry, vocab, 1);
  const LogitField f = random_logits(kGeometry, vocab, 2);
  MeanFieldEngine<double> engine(params);
  MeanFieldEngine<double>::Matrix q;
  for (auto _ : state) {
    engine.infer(f.values, kDefaultMeanFieldIterations, q);
    benchmark::DoNotOptimize(q.data());
  }
}
BENCHMARK(BM_MeanFieldDouble)->Arg(16)->Arg(64)->Unit(benchmark::kMicrosecond);

void BM_MeanFieldFloat(benchmark::State& state) {
  const VocabSpec vocab{static_cast<int>(state.range(0))};
  const MRFParams params = init_params(kGeometry, vocab, 1);
  const LogitField f = random_logits(kGeometry, vocab, 2);
  MeanFieldEngine<float> engine(params);
  const MeanFieldEngine<float>::Matrix logits = f.values.cast<float>();
  MeanFieldEngine<float>::Matrix q;
  for (auto _ : state) {
    engine.infer(logits, kDefaultMeanFieldIterations, q);
    benchmark::DoNotOptimize(q.data());
  }
}
BENCHMARK(BM_MeanFieldFloat)->Arg(16)->Arg(64)->Unit(benchmark::kMicrosecond);

void BM_MeanFieldBackward(benchmark::State& state) {
  const VocabSpec vocab{static_cast<int>(state.range(0))};
  const MRFParams params = init_params(kGeometry, vocab, 1);
  const LogitField f = random_logits(kGeometry, vocab, 2);
  const RowMatrix upstream = random_logits(kGeometry, vocab, 3).values;
  for (auto _ : state) {
    GradientBundle g = mean_field_backward(params, f, kDefaultMeanFieldIterations, upstream);
    benchmark::DoNotOptimize(g.d_w_spatial.data());
  }
}
BENCHMARK(BM_MeanFieldBackward)->Arg(16)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_TeacherStep(benchmark::State& state) {
  const VocabSpec vocab{64};
  const TeacherModel model(kGeometry, vocab, 3, TeacherConfig{});
  const MaskedTokenGrid masked = MaskedTokenGrid::fully_masked(kGeometry, vocab);
  for (auto _ : state) {
    LogitField logits = model.predict_logits(masked, 0);
    benchmark::DoNotOptimize(logits.values.data());
  }
}
BENCHMARK(BM_TeacherStep)->Unit(benchmark::kMillisecond);

void BM_FastForward(benchmark::State& state) {
  const VocabSpec vocab{64};
  const TeacherModel model(kGeometry, vocab, 3, TeacherConfig{});
  const MRFParams params = init_params(kGeometry, vocab, 1);
  const DecodeSchedule schedule = DecodeSchedule::cosine(kGeometry.n(), 8, 5);
  const DecodeTrace trace = progressive_decode(model, 0, schedule, 1.0, 7, 5);
  FastForward ff(params, MarkovGenOptions{});
  for (auto _ : state) {
    TokenGrid grid = ff.complete(trace, 5);
    benchmark::DoNotOptimize(grid.labels.data());
  }
}
BENCHMARK(BM_FastForward)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
