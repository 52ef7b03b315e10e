#pragma once

// Subcommand implementations. Each returns the process exit code and throws
// markovgen::Error on unreadable or inconsistent inputs.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "config.hpp"

namespace markovgen::cli {

struct CommandOptions {
  std::filesystem::path config;
  std::optional<std::filesystem::path> output_dir;
  std::optional<std::uint64_t> seed;
  std::optional<int> k;
  std::optional<int> mf_iters;
  std::optional<int> threads;
  std::string variant = "markovgen";
  std::filesystem::path corpus;
  std::filesystem::path teacher;
  std::filesystem::path mrf;
};

// Loads the config named by `options` and applies the command-line
// overrides, re-validating the result.
RunConfig resolve_config(const CommandOptions& options);

// Artifact names inside output_dir.
inline constexpr const char* kCorpusFile = "corpus.mgtf";
inline constexpr const char* kTeacherFile = "teacher.mgtf";
inline constexpr const char* kPretrainedMrfFile = "mrf_pretrained.mgtf";
inline constexpr const char* kDistilledMrfFile = "mrf_distilled.mgtf";

int gen_corpus(const CommandOptions& options);
int train_teacher_command(const CommandOptions& options);
int pretrain_mrf(const CommandOptions& options);
int distill_mrf(const CommandOptions& options);
int decode_command(const CommandOptions& options);
int bench_command(const CommandOptions& options);
int verify_command(const CommandOptions& options);

// Seed from which decode i of `decode` and `bench` derives its stream.
std::uint64_t decode_seed_base(const RunConfig& config);

}  // namespace markovgen::cli
