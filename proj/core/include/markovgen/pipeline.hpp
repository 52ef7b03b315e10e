#pragma once

// Fast-forwarding a progressive decode: run the teacher for the first k
// steps, then replace the remaining steps with one mean-field inference.

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "markovgen/decode.hpp"
#include "markovgen/mrf.hpp"
#include "markovgen/teacher.hpp"
#include "markovgen/train.hpp"
#include "markovgen/types.hpp"

namespace markovgen {

enum class Precision { kFloat32, kFloat64 };

struct MarkovGenOptions {
  int mf_iterations = kDefaultMeanFieldIterations;
  double temperature = 1.0;
  double kappa = 10.0;
  Precision precision = Precision::kFloat32;
};

void validate(const MarkovGenOptions& options);

// splitmix64 of base + index; used to give every decode of a batch its own
// stream.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index);

// MRF unaries after step k: committed rows are kappa one-hot, all other rows
// keep the step-k teacher logits. Requires 1 <= k <= recorded steps.
LogitField markovgen_input(const DecodeTrace& trace, int k, double kappa);

// Committed tokens of `trace` through step k win over `grid`.
TokenGrid enforce_committed(const DecodeTrace& trace, int k, TokenGrid grid);

// Mean-field inference at a fixed precision with reusable scratch space.
// Not thread-safe.
class FastForward {
 public:
  FastForward(const MRFParams& params, const MarkovGenOptions& options);

  const MarkovGenOptions& options() const { return options_; }

  // map_decode(mean_field_infer(markovgen_input(trace, k))) with the
  // committed tokens re-imposed.
  TokenGrid complete(const DecodeTrace& trace, int k);

  // Wallclock of the mean-field call in the last complete(). Pinning,
  // argmax and restoring committed tokens are bookkeeping, as sampling is
  // for a teacher step.
  double last_inference_ms() const { return last_inference_ms_; }

 private:
  MarkovGenOptions options_;
  double last_inference_ms_ = 0.0;
  std::optional<MeanFieldEngine<float>> single_;
  std::optional<MeanFieldEngine<double>> double_;
  MeanFieldEngine<float>::Matrix logits_f_, q_f_;
  MeanFieldEngine<double>::Matrix logits_d_, q_d_;
};

struct MarkovGenResult {
  TokenGrid grid;
  DecodeTrace trace;  // teacher steps 1..k
  double teacher_ms = 0.0;
  double mrf_ms = 0.0;  // mean-field inference only
};

// k = schedule.cut_step. With k == total_steps the MRF is skipped and the
// trace's final grid is returned. Throws kDimensionMismatch if the teacher
// and the MRF disagree in shape.
MarkovGenResult markovgen_decode(const TeacherModel& teacher, const MRFParams& params, int condition,
                                 const DecodeSchedule& schedule, const MarkovGenOptions& options,
                                 std::uint64_t seed);

// Fraction of positions where the two grids differ.
double disagreement(const TokenGrid& a, const TokenGrid& b);

// One full teacher decode per condition (seed derive_seed(seed, i)), each
// turned into markovgen_input at schedule.cut_step and the final grid.
std::vector<DistillExample> build_distill_set(const TeacherModel& teacher, std::span<const int> conditions,
                                              const DecodeSchedule& schedule, double temperature,
                                              double kappa, std::uint64_t seed, int threads = 1);

struct DistillSource {
  const TeacherModel* teacher = nullptr;
  DecodeSchedule schedule;
  double temperature = 1.0;
};

// Pretraining uses the corpus grids; distillation decodes one teacher sample
// per corpus entry's condition and requires `source.teacher`.
MRFParams train_mrf(Stage stage, const MRFParams& init, std::span<const LabeledGrid> corpus,
                    const DistillSource& source, const TrainConfig& config, const MetricsSink& sink = {});

}  // namespace markovgen
