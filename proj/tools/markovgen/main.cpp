#include <cstdlib>
#include <exception>
#include <functional>
#include <string>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "commands.hpp"
#include "markovgen/error.hpp"

namespace {

using markovgen::cli::CommandOptions;

void configure_logging() {
  spdlog::set_pattern("[%H:%M:%S.%e] [%^%l%$] %v");
  const char* level = std::getenv("MARKOVGEN_LOG");
  if (level == nullptr) return;
  const std::string name(level);
  if (name == "error") {
    spdlog::set_level(spdlog::level::err);
  } else if (name == "warn") {
    spdlog::set_level(spdlog::level::warn);
  } else if (name == "info") {
    spdlog::set_level(spdlog::level::info);
  } else if (name == "debug") {
    spdlog::set_level(spdlog::level::debug);
  } else {
    spdlog::warn("ignoring MARKOVGEN_LOG={} (expected error, warn, info or debug)", name);
  }
}

// Flags shared by every subcommand.
void add_common(CLI::App* sub, CommandOptions& o) {
  sub->add_option("--config", o.config, "RunConfig JSON file")->required()->check(CLI::ExistingFile);
  sub->add_option("--output-dir", o.output_dir, "Overrides output_dir");
  sub->add_option("--seed", o.seed, "Overrides seed");
  sub->add_option("--threads", o.threads, "Worker threads")->check(CLI::PositiveNumber);
}

void add_corpus(CLI::App* sub, CommandOptions& o) {
  sub->add_option("--corpus", o.corpus, "Corpus file (default: <output_dir>/corpus.mgtf)");
}

void add_teacher(CLI::App* sub, CommandOptions& o) {
  sub->add_option("--teacher", o.teacher, "Teacher weights (default: <output_dir>/teacher.mgtf)");
}

void add_mrf(CLI::App* sub, CommandOptions& o, const std::string& fallback) {
  sub->add_option("--mrf", o.mrf, "MRF weights (default: <output_dir>/" + fallback + ")");
}

void add_decode_flags(CLI::App* sub, CommandOptions& o) {
  sub->add_option("--k", o.k, "Overrides schedule.cut_step")->check(CLI::PositiveNumber);
  sub->add_option("--mf-iters", o.mf_iters, "Overrides mrf.mf_iterations")->check(CLI::NonNegativeNumber);
}

}  // namespace

int main(int argc, char** argv) {
  configure_logging();
  CLI::App app{"Token-grid decoding with MRF fast-forwarding"};
  app.require_subcommand(1);
  CommandOptions o;
  std::function<int(const CommandOptions&)> run;

  auto* gen = app.add_subcommand("gen-corpus", "Generate the synthetic corpus");
  add_common(gen, o);
  gen->callback([&] { run = markovgen::cli::gen_corpus; });

  auto* teacher = app.add_subcommand("train-teacher", "Train the masked-token teacher");
  add_common(teacher, o);
  add_corpus(teacher, o);
  teacher->callback([&] { run = markovgen::cli::train_teacher_command; });

  auto* pretrain = app.add_subcommand("pretrain-mrf", "Masked-token pretraining of the MRF");
  add_common(pretrain, o);
  add_corpus(pretrain, o);
  add_decode_flags(pretrain, o);
  pretrain->callback([&] { run = markovgen::cli::pretrain_mrf; });

  auto* distill = app.add_subcommand("distill-mrf", "Distill the teacher's late steps into the MRF");
  add_common(distill, o);
  add_corpus(distill, o);
  add_teacher(distill, o);
  add_mrf(distill, o, markovgen::cli::kPretrainedMrfFile);
  add_decode_flags(distill, o);
  distill->callback([&] { run = markovgen::cli::distill_mrf; });

  auto* decode = app.add_subcommand("decode", "Decode grids and render them as PPM images");
  add_common(decode, o);
  add_teacher(decode, o);
  add_mrf(decode, o, markovgen::cli::kDistilledMrfFile);
  add_decode_flags(decode, o);
  decode->add_option("--variant", o.variant, "full, early-exit or markovgen")
      ->check(CLI::IsMember({"full", "early-exit", "markovgen"}));
  decode->callback([&] { run = markovgen::cli::decode_command; });

  auto* bench = app.add_subcommand("bench", "Time and compare the decode variants");
  add_common(bench, o);
  add_teacher(bench, o);
  add_mrf(bench, o, markovgen::cli::kDistilledMrfFile);
  add_decode_flags(bench, o);
  bench->callback([&] { run = markovgen::cli::bench_command; });

  auto* verify = app.add_subcommand("verify", "Run the oracle-backed property suite");
  add_common(verify, o);
  verify->callback([&] { run = markovgen::cli::verify_command; });

  CLI11_PARSE(app, argc, argv);
  try {
    return run(o);
  } catch (const markovgen::Error& e) {
    spdlog::error("{}", e.what());
  } catch (const std::exception& e) {
    spdlog::error("unexpected failure: {}", e.what());
  }
  return 1;
}
