#pragma once

// Progressive parallel decoding with the teacher: every step predicts all
// positions, samples a candidate per masked position, and commits the most
// confident candidates according to the schedule.

#include <cstdint>
#include <filesystem>
#include <vector>

#include <nlohmann/json.hpp>

#include "markovgen/teacher.hpp"
#include "markovgen/tensor_io.hpp"
#include "markovgen/types.hpp"

namespace markovgen {

struct DecodeStep {
  int step = 0;  // 1-based
  LogitField logits;
  std::vector<int> committed_positions;
  std::vector<Label> committed_labels;
  double wallclock_ms = 0.0;
  double model_ms = 0.0;  // time inside predict_logits
};

struct DecodeTrace {
  int condition = 0;
  DecodeSchedule schedule;
  std::vector<DecodeStep> steps;
  // Committed tokens after the last recorded step; uncommitted entries are 0.
  TokenGrid final_grid;

  bool complete() const { return static_cast<int>(steps.size()) == schedule.total_steps; }
  const GridGeometry& geometry() const { return final_grid.geometry; }
  const VocabSpec& vocab() const { return final_grid.vocab; }
};

// temperature 0 picks the argmax candidate; otherwise candidates are drawn
// from softmax(logits / temperature). Confidence is the untempered softmax
// probability of the candidate; ties go to the lower position index.
// A positive stop_after_step truncates the trace after that step; the random
// stream up to that step is identical to the untruncated decode.
DecodeTrace progressive_decode(const TeacherModel& model, int condition, const DecodeSchedule& schedule,
                               double temperature, std::uint64_t seed, int stop_after_step = 0);

// Tokens committed through step k, with the mask marking everything else.
MaskedTokenGrid committed_state(const DecodeTrace& trace, int k);

// Committed tokens through step k, remaining positions filled by the argmax
// of the step-k logits.
TokenGrid early_exit(const DecodeTrace& trace, int k);

// Export as MGTF tensors ("step<s>/logits", "step<s>/positions",
// "step<s>/labels", "final") plus a JSON index mapping steps to tensor names.
TensorFile trace_to_tensor_file(const DecodeTrace& trace);
nlohmann::json trace_index(const DecodeTrace& trace);
void write_trace(const std::filesystem::path& path, const DecodeTrace& trace);
DecodeTrace read_trace(const std::filesystem::path& path);

}  // namespace markovgen
