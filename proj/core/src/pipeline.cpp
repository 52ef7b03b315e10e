#include "markovgen/pipeline.hpp"

#include <chrono>
#include <cmath>

#include "markovgen/error.hpp"
#include "parallel.hpp"

namespace markovgen {
namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

template <typename Matrix>
TokenGrid argmax_grid(const Matrix& q, GridGeometry geometry, VocabSpec vocab) {
  TokenGrid grid = TokenGrid::filled(geometry, vocab);
  for (Eigen::Index i = 0; i < q.rows(); ++i) {
    Eigen::Index best = 0;
    q.row(i).maxCoeff(&best);
    grid.labels[static_cast<std::size_t>(i)] = static_cast<Label>(best);
  }
  return grid;
}

// Committed rows of `logits` become kappa one-hot, as in markovgen_input.
template <typename Matrix>
void pin_committed(const DecodeTrace& trace, int k, double kappa, Matrix& logits) {
  using Scalar = typename Matrix::Scalar;
  for (int s = 0; s < k; ++s) {
    const DecodeStep& step = trace.steps[static_cast<std::size_t>(s)];
    for (std::size_t j = 0; j < step.committed_positions.size(); ++j) {
      const auto row = static_cast<Eigen::Index>(step.committed_positions[j]);
      logits.row(row).setZero();
      logits(row, step.committed_labels[j]) = static_cast<Scalar>(kappa);
    }
  }
}

void restore_committed(const DecodeTrace& trace, int k, TokenGrid& grid) {
  for (int s = 0; s < k; ++s) {
    const DecodeStep& step = trace.steps[static_cast<std::size_t>(s)];
    for (std::size_t j = 0; j < step.committed_positions.size(); ++j) {
      grid.labels[static_cast<std::size_t>(step.committed_positions[j])] = step.committed_labels[j];
    }
  }
}

}  // namespace

void validate(const MarkovGenOptions& options) {
  require(options.mf_iterations >= 0, ErrorCode::kInvalidArgument, "mf_iterations must be >= 0");
  require(options.temperature >= 0.0 && std::isfinite(options.temperature), ErrorCode::kInvalidArgument,
          "temperature must be finite and >= 0");
  require(std::isfinite(options.kappa), ErrorCode::kInvalidArgument, "kappa must be finite");
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index) {
  std::uint64_t z = base + 0x9E3779B97F4A7C15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

LogitField markovgen_input(const DecodeTrace& trace, int k, double kappa) {
  require(k >= 1 && k <= static_cast<int>(trace.steps.size()), ErrorCode::kIndexOutOfRange,
          "cut step " + std::to_string(k) + " outside the recorded trace");
  LogitField input = trace.steps[static_cast<std::size_t>(k - 1)].logits;
  const MaskedTokenGrid state = committed_state(trace, k);
  for (std::size_t i = 0; i < state.mask.size(); ++i) {
    if (state.mask[i]) continue;
    const auto row = static_cast<Eigen::Index>(i);
    input.values.row(row).setZero();
    input.values(row, state.grid.labels[i]) = kappa;
  }
  return input;
}

TokenGrid enforce_committed(const DecodeTrace& trace, int k, TokenGrid grid) {
  const MaskedTokenGrid state = committed_state(trace, k);
  require(grid.geometry == state.grid.geometry && grid.vocab == state.grid.vocab, ErrorCode::kDimensionMismatch,
          "grid and trace disagree on geometry or vocab");
  for (std::size_t i = 0; i < state.mask.size(); ++i) {
    if (!state.mask[i]) grid.labels[i] = state.grid.labels[i];
  }
  return grid;
}

FastForward::FastForward(const MRFParams& params, const MarkovGenOptions& options) : options_(options) {
  validate(options);
  if (options.precision == Precision::kFloat32) {
    single_.emplace(params);
  } else {
    double_.emplace(params);
  }
}

TokenGrid FastForward::complete(const DecodeTrace& trace, int k) {
  require(k >= 1 && k <= static_cast<int>(trace.steps.size()), ErrorCode::kIndexOutOfRange,
          "cut step " + std::to_string(k) + " outside the recorded trace");
  const LogitField& logits = trace.steps[static_cast<std::size_t>(k - 1)].logits;
  const GridGeometry& geometry = single_ ? single_->geometry() : double_->geometry();
  const VocabSpec& vocab = single_ ? single_->vocab() : double_->vocab();
  require(geometry == logits.geometry && vocab == logits.vocab, ErrorCode::kDimensionMismatch,
          "teacher and MRF disagree on geometry or vocab");
  TokenGrid grid;
  if (single_) {
    logits_f_ = logits.values.cast<float>();
    pin_committed(trace, k, options_.kappa, logits_f_);
    const auto t0 = Clock::now();
    single_->infer(logits_f_, options_.mf_iterations, q_f_);
    last_inference_ms_ = ms_since(t0);
    grid = argmax_grid(q_f_, geometry, vocab);
  } else {
    logits_d_ = logits.values;
    pin_committed(trace, k, options_.kappa, logits_d_);
    const auto t0 = Clock::now();
    double_->infer(logits_d_, options_.mf_iterations, q_d_);
    last_inference_ms_ = ms_since(t0);
    grid = argmax_grid(q_d_, geometry, vocab);
  }
  restore_committed(trace, k, grid);
  return grid;
}

MarkovGenResult markovgen_decode(const TeacherModel& teacher, const MRFParams& params, int condition,
                                 const DecodeSchedule& schedule, const MarkovGenOptions& options,
                                 std::uint64_t seed) {
  validate(options);
  validate(params);
  require(params.geometry == teacher.geometry() && params.vocab == teacher.vocab(), ErrorCode::kDimensionMismatch,
          "teacher and MRF disagree on geometry or vocab");
  validate(schedule, teacher.geometry().n());
  const int k = schedule.cut_step;
  MarkovGenResult result;
  const auto t0 = Clock::now();
  result.trace = progressive_decode(teacher, condition, schedule, options.temperature, seed, k);
  result.teacher_ms = ms_since(t0);
  if (k == schedule.total_steps) {
    result.grid = result.trace.final_grid;
    return result;
  }
  FastForward ff(params, options);
  result.grid = ff.complete(result.trace, k);
  result.mrf_ms = ff.last_inference_ms();
  return result;
}

double disagreement(const TokenGrid& a, const TokenGrid& b) {
  require(a.geometry == b.geometry && a.labels.size() == b.labels.size(), ErrorCode::kDimensionMismatch,
          "grids differ in geometry");
  require(!a.labels.empty(), ErrorCode::kInvalidArgument, "empty grids");
  std::size_t differ = 0;
  for (std::size_t i = 0; i < a.labels.size(); ++i) differ += a.labels[i] != b.labels[i] ? 1 : 0;
  return static_cast<double>(differ) / static_cast<double>(a.labels.size());
}

std::vector<DistillExample> build_distill_set(const TeacherModel& teacher, std::span<const int> conditions,
                                              const DecodeSchedule& schedule, double temperature,
                                              double kappa, std::uint64_t seed, int threads) {
  validate(schedule, teacher.geometry().n());
  std::vector<DistillExample> out(conditions.size());
  parallel_for(static_cast<int>(conditions.size()), threads, [&](int i) {
    const auto slot = static_cast<std::size_t>(i);
    const DecodeTrace trace =
        progressive_decode(teacher, conditions[slot], schedule, temperature, derive_seed(seed, slot));
    out[slot] = {markovgen_input(trace, schedule.cut_step, kappa), trace.final_grid};
  });
  return out;
}

MRFParams train_mrf(Stage stage, const MRFParams& init, std::span<const LabeledGrid> corpus,
                    const DistillSource& source, const TrainConfig& config, const MetricsSink& sink) {
  require(!corpus.empty(), ErrorCode::kInvalidArgument, "training corpus is empty");
  if (stage == Stage::kPretrain) {
    std::vector<TokenGrid> grids;
    grids.reserve(corpus.size());
    for (const auto& item : corpus) grids.push_back(item.grid);
    return train_pretrain(init, grids, config, sink);
  }
  require(source.teacher != nullptr, ErrorCode::kInvalidArgument, "distillation requires a teacher");
  std::vector<int> conditions;
  conditions.reserve(corpus.size());
  for (const auto& item : corpus) conditions.push_back(item.condition);
  const std::vector<DistillExample> examples =
      build_distill_set(*source.teacher, conditions, source.schedule, source.temperature,
                        config.unary_strength_kappa, derive_seed(config.seed, 0xD157), config.threads);
  return train_distill(init, examples, config, sink);
}

}  // namespace markovgen
