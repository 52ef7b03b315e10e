#include "commands.hpp"

#include <fstream>
#include <iomanip>
#include <iostream>

#include <spdlog/spdlog.h>

#include "markovgen/bench.hpp"
#include "markovgen/datagen.hpp"
#include "markovgen/decode.hpp"
#include "markovgen/error.hpp"
#include "markovgen/pipeline.hpp"
#include "markovgen/teacher.hpp"
#include "markovgen/tensor_io.hpp"
#include "markovgen/train.hpp"
#include "properties.hpp"
#include "render.hpp"

namespace markovgen::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

fs::path prepare_output_dir(const RunConfig& config) {
  fs::create_directories(config.output_dir);
  return config.output_dir;
}

json echo(const RunConfig& config, const std::string& artifact) {
  return {{"format_version", kTensorFormatVersion}, {"artifact", artifact}, {"config", to_json(config)}};
}

void write_json(const fs::path& path, const json& doc) {
  std::ofstream out(path);
  require(static_cast<bool>(out), ErrorCode::kIo, "cannot write " + path.string());
  out << doc.dump(2) << '\n';
}

fs::path input_or_default(const fs::path& given, const RunConfig& config, const char* fallback) {
  return given.empty() ? config.output_dir / fallback : given;
}

// Appends one metrics line per optimizer step.
class MetricsFile {
 public:
  explicit MetricsFile(const fs::path& path) : out_(path) {
    require(static_cast<bool>(out_), ErrorCode::kIo, "cannot write " + path.string());
  }
  void write(const MetricsRecord& record) { out_ << format_metrics_line(record) << '\n'; }
  void write_teacher(int step, double loss, double ms) {
    out_ << step << "\tteacher\t" << std::setprecision(9) << loss << '\t' << std::fixed << std::setprecision(6) << ms
         << std::defaultfloat << '\n';
  }

 private:
  std::ofstream out_;
};

void log_progress(std::string_view what, long step, long total, double loss) {
  if (step == 1 || step == total || step % 100 == 0) spdlog::info("{} step {}/{} loss {:.5f}", what, step, total, loss);
}

void check_condition_count(const TeacherModel& teacher, const RunConfig& config) {
  require(teacher.condition_count() == config.condition_count(), ErrorCode::kDimensionMismatch,
          "teacher has " + std::to_string(teacher.condition_count()) + " conditions, config has " +
              std::to_string(config.condition_count()));
  require(teacher.geometry() == config.corpus.geometry && teacher.vocab() == config.corpus.vocab,
          ErrorCode::kDimensionMismatch, "teacher shape differs from the configured corpus shape");
}

}  // namespace

RunConfig resolve_config(const CommandOptions& options) {
  RunConfig config = load_run_config(options.config);
  if (options.output_dir) config.output_dir = *options.output_dir;
  if (options.seed) config.seed = *options.seed;
  if (options.k) config.schedule.cut_step = *options.k;
  if (options.mf_iters) config.mrf.mf_iterations = *options.mf_iters;
  if (options.threads) {
    config.mrf.threads = *options.threads;
    config.bench.threads = *options.threads;
  }
  // Derived seeds and range checks are recomputed from the merged document.
  return parse_run_config(to_json(config));
}

std::uint64_t decode_seed_base(const RunConfig& config) { return derive_seed(config.seed, 5); }

int gen_corpus(const CommandOptions& options) {
  const RunConfig config = resolve_config(options);
  const fs::path dir = prepare_output_dir(config);
  const int threads = options.threads.value_or(1);
  std::vector<LabeledGrid> corpus;
  for (const CorpusSpec& spec : config.corpus_specs()) {
    spdlog::info("generating {} x {} grids", spec.count, to_string(spec.kind));
    auto part = generate(spec, threads);
    corpus.insert(corpus.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
  }
  const fs::path path = dir / kCorpusFile;
  write_corpus(path, corpus, echo(config, "corpus"));
  spdlog::info("wrote {} grids to {}", corpus.size(), path.string());
  return 0;
}

int train_teacher_command(const CommandOptions& options) {
  const RunConfig config = resolve_config(options);
  const fs::path dir = prepare_output_dir(config);
  const auto corpus = read_corpus(input_or_default(options.corpus, config, kCorpusFile));
  MetricsFile metrics(dir / "teacher_metrics.tsv");
  const int total = config.teacher.steps;
  TeacherModel model = train_teacher(corpus, config.condition_count(), config.teacher,
                                     [&](int step, double loss, double ms) {
                                       metrics.write_teacher(step, loss, ms);
                                       log_progress("teacher", step, total, loss);
                                     });
  const double accuracy = teacher_masked_accuracy(model, corpus, 0.5, derive_seed(config.seed, 6));
  spdlog::info("teacher masked accuracy at 50% masking: {:.4f}", accuracy);
  const fs::path path = dir / kTeacherFile;
  save_teacher(path, model);
  json sidecar = echo(config, "teacher");
  sidecar["parameter_count"] = model.parameter_count();
  sidecar["masked_accuracy_50"] = accuracy;
  write_json(path.string() + ".json", sidecar);
  spdlog::info("wrote {}", path.string());
  return 0;
}

int pretrain_mrf(const CommandOptions& options) {
  const RunConfig config = resolve_config(options);
  const fs::path dir = prepare_output_dir(config);
  const auto corpus = read_corpus(input_or_default(options.corpus, config, kCorpusFile));
  require(corpus.front().grid.geometry == config.corpus.geometry && corpus.front().grid.vocab == config.corpus.vocab,
          ErrorCode::kDimensionMismatch, "corpus shape differs from the configured corpus shape");
  const TrainConfig train = config.pretrain_config();
  MetricsFile metrics(dir / "pretrain_metrics.tsv");
  const MRFParams init = init_params(config.corpus.geometry, config.corpus.vocab, derive_seed(config.seed, 4));
  const MRFParams params = train_mrf(Stage::kPretrain, init, corpus, {}, train, [&](const MetricsRecord& r) {
    metrics.write(r);
    log_progress("pretrain", r.step, train.steps, r.loss);
  });
  std::vector<TokenGrid> grids;
  for (const auto& item : corpus) grids.push_back(item.grid);
  const double accuracy = masked_accuracy(params, grids, train, 1, derive_seed(config.seed, 7));
  spdlog::info("MRF masked accuracy at {:.2f} masking: {:.4f}", train.mask_fraction, accuracy);
  const fs::path path = dir / kPretrainedMrfFile;
  save_mrf_params(path, params);
  json sidecar = echo(config, "mrf_pretrained");
  sidecar["masked_accuracy"] = accuracy;
  write_json(path.string() + ".json", sidecar);
  spdlog::info("wrote {}", path.string());
  return 0;
}

int distill_mrf(const CommandOptions& options) {
  const RunConfig config = resolve_config(options);
  const fs::path dir = prepare_output_dir(config);
  const TeacherModel teacher = load_teacher(input_or_default(options.teacher, config, kTeacherFile));
  check_condition_count(teacher, config);
  const MRFParams init = load_mrf_params(input_or_default(options.mrf, config, kPretrainedMrfFile));
  std::vector<int> conditions;
  if (config.mrf.distill_samples > 0) {
    conditions = config.decode_conditions(config.mrf.distill_samples);
  } else {
    for (const auto& item : read_corpus(input_or_default(options.corpus, config, kCorpusFile))) {
      conditions.push_back(item.condition);
    }
  }
  const TrainConfig train = config.distill_config();
  spdlog::info("decoding {} teacher samples for distillation", conditions.size());
  const auto examples = build_distill_set(teacher, conditions, config.decode_schedule(), config.schedule.temperature,
                                          train.unary_strength_kappa, derive_seed(config.seed, 8), train.threads);
  MetricsFile metrics(dir / "distill_metrics.tsv");
  const MRFParams params = train_distill(init, examples, train, [&](const MetricsRecord& r) {
    metrics.write(r);
    log_progress("distill", r.step, train.steps, r.loss);
  });
  const fs::path path = dir / kDistilledMrfFile;
  save_mrf_params(path, params);
  write_json(path.string() + ".json", echo(config, "mrf_distilled"));
  spdlog::info("wrote {}", path.string());
  return 0;
}

int decode_command(const CommandOptions& options) {
  const RunConfig config = resolve_config(options);
  const fs::path dir = prepare_output_dir(config);
  const Variant variant = parse_variant(options.variant);
  const TeacherModel teacher = load_teacher(input_or_default(options.teacher, config, kTeacherFile));
  check_condition_count(teacher, config);
  std::optional<MRFParams> params;
  if (variant == Variant::kMarkovGen) params = load_mrf_params(input_or_default(options.mrf, config, kDistilledMrfFile));

  const DecodeSchedule schedule = config.decode_schedule();
  const int k = schedule.cut_step;
  const MarkovGenOptions mg = config.markovgen_options();
  std::optional<FastForward> ff;
  if (params) {
    require(params->geometry == teacher.geometry() && params->vocab == teacher.vocab(), ErrorCode::kDimensionMismatch,
            "teacher and MRF disagree on geometry or vocab");
    ff.emplace(*params, mg);
  }
  const auto conditions = config.decode_conditions(config.bench.decodes);
  const auto palette = make_palette(config.corpus.vocab, config.seed);
  std::vector<LabeledGrid> grids;
  for (std::size_t i = 0; i < conditions.size(); ++i) {
    const std::uint64_t seed = derive_seed(decode_seed_base(config), i);
    TokenGrid grid;
    if (variant == Variant::kFull) {
      grid = progressive_decode(teacher, conditions[i], schedule, mg.temperature, seed).final_grid;
    } else {
      const DecodeTrace trace = progressive_decode(teacher, conditions[i], schedule, mg.temperature, seed, k);
      if (variant == Variant::kEarlyExit) {
        grid = early_exit(trace, k);
      } else {
        grid = k == schedule.total_steps ? trace.final_grid : ff->complete(trace, k);
      }
    }
    const std::string stem = "decode_" + std::string(to_string(variant)) + "_" + std::to_string(i);
    write_ppm(dir / (stem + ".ppm"), grid, palette);
    grids.push_back({std::move(grid), conditions[i]});
  }
  const fs::path path = dir / ("decode_" + std::string(to_string(variant)) + ".mgtf");
  json sidecar = echo(config, "decode");
  sidecar["variant"] = std::string(to_string(variant));
  write_corpus(path, grids, sidecar);
  spdlog::info("wrote {} grids to {}", grids.size(), path.string());
  return 0;
}

int bench_command(const CommandOptions& options) {
  const RunConfig config = resolve_config(options);
  const fs::path dir = prepare_output_dir(config);
  const TeacherModel teacher = load_teacher(input_or_default(options.teacher, config, kTeacherFile));
  check_condition_count(teacher, config);
  const MRFParams params = load_mrf_params(input_or_default(options.mrf, config, kDistilledMrfFile));
  BenchConfig bench;
  bench.schedule = config.decode_schedule();
  bench.variants = config.bench.variants;
  bench.conditions = config.decode_conditions(config.bench.decodes);
  bench.repetitions = config.bench.repetitions;
  bench.options = config.markovgen_options();
  bench.seed = decode_seed_base(config);
  bench.k_sweep = config.bench.k_sweep;
  bench.threads = config.bench.threads;
  const BenchReport report = run_benchmark(teacher, params, bench);
  json doc = to_json(report);
  doc["format_version"] = kTensorFormatVersion;
  doc["run_config"] = to_json(config);
  write_json(dir / "bench_report.json", doc);
  const std::string table = format_table(report);
  std::ofstream(dir / "bench_report.txt") << table;
  std::cout << table;
  return report.ok() ? 0 : 1;
}

int verify_command(const CommandOptions& options) {
  const RunConfig config = resolve_config(options);
  const fs::path dir = prepare_output_dir(config);
  const auto results = run_property_suite(config.seed);
  json entries = json::array();
  bool all = true;
  for (const auto& r : results) {
    std::cout << (r.passed ? "PASS " : "FAIL ") << r.name << " (" << r.detail << ")\n";
    entries.push_back({{"name", r.name}, {"passed", r.passed}, {"detail", r.detail}});
    all = all && r.passed;
  }
  json doc = echo(config, "verify");
  doc["properties"] = entries;
  doc["ok"] = all;
  write_json(dir / "verify_report.json", doc);
  return all ? 0 : 1;
}

}  // namespace markovgen::cli
