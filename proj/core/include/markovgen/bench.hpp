#pragma once

// Speed and quality comparison of full decoding, early exit and MRF
// fast-forwarding on the same teacher traces.

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "markovgen/pipeline.hpp"
#include "markovgen/teacher.hpp"
#include "markovgen/types.hpp"

namespace markovgen {

enum class Variant { kFull, kEarlyExit, kMarkovGen };

std::string_view to_string(Variant variant);
// Accepts "full", "early-exit", "markovgen"; throws kConfig.
Variant parse_variant(std::string_view name);

struct BenchConfig {
  DecodeSchedule schedule;
  std::vector<Variant> variants{Variant::kFull, Variant::kEarlyExit, Variant::kMarkovGen};
  std::vector<int> conditions{0};
  // Timed repetitions over all conditions; one extra untimed warmup
  // repetition runs first.
  int repetitions = 3;
  MarkovGenOptions options;
  std::uint64_t seed = 0;
  // Extra cut steps evaluated for quality on the full-decode traces.
  std::vector<int> k_sweep;
  int threads = 1;
};

void validate(const BenchConfig& config);

struct Summary {
  double median = 0.0;
  double mean = 0.0;
  std::size_t samples = 0;
};

Summary summarize(std::vector<double> values);

struct VariantReport {
  Variant variant = Variant::kFull;
  Summary wallclock_ms;  // end to end, per image
  double teacher_ms = 0.0;  // mean per image
  double mrf_ms = 0.0;
  double bookkeeping_ms = 0.0;
  double disagreement_vs_full = 0.0;
  // Fraction of equal-label 4-neighbour pairs among pairs touching a
  // position still masked at the cut step, over all decodes.
  double tail_neighbor_agreement = 0.0;
  std::optional<double> speedup_vs_full;
};

struct SweepPoint {
  int k = 0;
  double early_exit_disagreement = 0.0;
  double markovgen_disagreement = 0.0;
};

struct InvariantCheck {
  std::string name;
  bool passed = true;
  std::string detail;
};

struct BenchReport {
  std::vector<VariantReport> variants;
  Summary teacher_step_ms;   // one predict_logits call
  Summary mrf_inference_ms;  // one mean-field call of a fast-forward
  std::vector<SweepPoint> sweep;
  std::vector<InvariantCheck> invariants;
  nlohmann::json config_echo;

  bool ok() const;
  const VariantReport* find(Variant variant) const;
};

// Decode i of a repetition uses condition conditions[i] and seed
// derive_seed(config.seed, i) for every variant, so all variants share the
// teacher trace up to the cut step.
BenchReport run_benchmark(const TeacherModel& teacher, const MRFParams& params, const BenchConfig& config);

nlohmann::json to_json(const BenchReport& report);
std::string format_table(const BenchReport& report);

}  // namespace markovgen
