#pragma once

// RunConfig: the JSON document every subcommand reads.
//
//   {
//     "seed": 0,
//     "output_dir": "out",
//     "corpus":   {"height", "width", "vocab", "kinds", "count_per_kind",
//                  "noise_rate"?, "gt_coupling"?, "gibbs_burn_in"?},
//     "teacher":  {"steps", "embed_dim"?, "hidden_dim"?, "blocks"?,
//                  "learning_rate"?, "batch_size"?},
//     "mrf":      {"pretrain_steps", "distill_steps", "learning_rate"?,
//                  "distill_learning_rate"?, "batch_size"?, "mf_iterations"?,
//                  "mask_fraction"?, "kappa"?, "distill_samples"?, "threads"?},
//     "schedule": {"total_steps", "cut_step", "temperature"?},
//     "bench":    {"decodes", "repetitions"?, "variants"?, "k_sweep"?,
//                  "precision"?, "threads"?}
//   }
//
// Keys marked ? are optional. Condition label c is kinds[c].

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "markovgen/bench.hpp"
#include "markovgen/datagen.hpp"
#include "markovgen/pipeline.hpp"
#include "markovgen/teacher.hpp"
#include "markovgen/train.hpp"

namespace markovgen::cli {

struct CorpusSection {
  GridGeometry geometry{16, 16};
  VocabSpec vocab{2};
  std::vector<PatternKind> kinds;
  int count_per_kind = 1;
  double noise_rate = 0.0;
  double gt_coupling = 0.5;
  int gibbs_burn_in = 50;
};

struct MrfSection {
  int pretrain_steps = 0;
  int distill_steps = 0;
  double learning_rate = 1e-3;
  double distill_learning_rate = 1e-3;
  int batch_size = 8;
  int mf_iterations = kDefaultMeanFieldIterations;
  double mask_fraction = 0.2;
  double kappa = 10.0;
  int distill_samples = 0;  // 0: one per corpus grid
  int threads = 1;
};

struct ScheduleSection {
  int total_steps = 8;
  int cut_step = 5;
  double temperature = 1.0;
};

struct BenchSection {
  int decodes = 1;
  int repetitions = 3;
  std::vector<Variant> variants{Variant::kFull, Variant::kEarlyExit, Variant::kMarkovGen};
  std::vector<int> k_sweep;
  Precision precision = Precision::kFloat32;
  int threads = 1;
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::filesystem::path output_dir;
  CorpusSection corpus;
  TeacherConfig teacher;
  MrfSection mrf;
  ScheduleSection schedule;
  BenchSection bench;

  int condition_count() const { return static_cast<int>(corpus.kinds.size()); }
  DecodeSchedule decode_schedule() const;
  TrainConfig pretrain_config() const;
  TrainConfig distill_config() const;
  MarkovGenOptions markovgen_options() const;
  // Decode i uses condition i mod condition_count().
  std::vector<int> decode_conditions(int count) const;
  std::vector<CorpusSpec> corpus_specs() const;
};

// Throws Error(kConfig) naming the full key path of the first unknown,
// missing or ill-typed key.
RunConfig parse_run_config(const nlohmann::json& doc);
RunConfig load_run_config(const std::filesystem::path& path);

// Effective configuration, defaults included. parse_run_config(to_json(c))
// reproduces c.
nlohmann::json to_json(const RunConfig& config);

}  // namespace markovgen::cli
