#include "markovgen/bench.hpp"

#include <algorithm>
#include <chrono>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <thread>

#include "markovgen/decode.hpp"
#include "markovgen/error.hpp"
#include "parallel.hpp"

namespace markovgen {
namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

struct Sample {
  TokenGrid grid;
  DecodeTrace trace;
  double total_ms = 0.0;
  double teacher_ms = 0.0;
  double mrf_ms = 0.0;
};

double teacher_time(const DecodeTrace& trace) {
  double ms = 0.0;
  for (const auto& step : trace.steps) ms += step.model_ms;
  return ms;
}

// Equal-label pairs and all pairs among 4-neighbour pairs touching a masked
// position.
std::pair<long, long> tail_pairs(const TokenGrid& grid, const std::vector<bool>& masked) {
  const GridGeometry& g = grid.geometry;
  long same = 0;
  long total = 0;
  auto visit = [&](int a, int b) {
    if (!masked[static_cast<std::size_t>(a)] && !masked[static_cast<std::size_t>(b)]) return;
    ++total;
    same += grid.labels[static_cast<std::size_t>(a)] == grid.labels[static_cast<std::size_t>(b)] ? 1 : 0;
  };
  for (int i = 0; i < g.n(); ++i) {
    const RowCol rc = g.to_rowcol(i);
    if (rc.col + 1 < g.width) visit(i, i + 1);
    if (rc.row + 1 < g.height) visit(i, i + g.width);
  }
  return {same, total};
}

bool same_prefix(const DecodeTrace& a, const DecodeTrace& b, int k) {
  if (static_cast<int>(a.steps.size()) < k || static_cast<int>(b.steps.size()) < k) return false;
  for (int s = 0; s < k; ++s) {
    const auto& x = a.steps[static_cast<std::size_t>(s)];
    const auto& y = b.steps[static_cast<std::size_t>(s)];
    if (x.committed_positions != y.committed_positions || x.committed_labels != y.committed_labels) return false;
  }
  return true;
}

nlohmann::json to_json(const Summary& s) {
  return {{"median", s.median}, {"mean", s.mean}, {"samples", s.samples}};
}

}  // namespace

std::string_view to_string(Variant variant) {
  switch (variant) {
    case Variant::kFull:
      return "full";
    case Variant::kEarlyExit:
      return "early-exit";
    case Variant::kMarkovGen:
      return "markovgen";
  }
  return "unknown";
}

Variant parse_variant(std::string_view name) {
  for (Variant v : {Variant::kFull, Variant::kEarlyExit, Variant::kMarkovGen}) {
    if (to_string(v) == name) return v;
  }
  fail(ErrorCode::kConfig, "unknown variant '" + std::string(name) + "' (expected full, early-exit or markovgen)");
}

void validate(const BenchConfig& config) {
  require(config.repetitions >= 3, ErrorCode::kInvalidArgument, "repetitions must be >= 3");
  require(!config.variants.empty(), ErrorCode::kInvalidArgument, "no variants requested");
  require(!config.conditions.empty(), ErrorCode::kInvalidArgument, "no conditions requested");
  require(config.threads >= 1, ErrorCode::kInvalidArgument, "threads must be >= 1");
  validate(config.options);
  for (int k : config.k_sweep) {
    require(k >= 1 && k <= config.schedule.total_steps, ErrorCode::kInvalidArgument,
            "k_sweep entry " + std::to_string(k) + " outside [1, total_steps]");
  }
}

Summary summarize(std::vector<double> values) {
  Summary s;
  s.samples = values.size();
  if (values.empty()) return s;
  std::sort(values.begin(), values.end());
  const std::size_t mid = values.size() / 2;
  s.median = values.size() % 2 == 1 ? values[mid] : 0.5 * (values[mid - 1] + values[mid]);
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  return s;
}

bool BenchReport::ok() const {
  return std::all_of(invariants.begin(), invariants.end(), [](const InvariantCheck& c) { return c.passed; });
}

const VariantReport* BenchReport::find(Variant variant) const {
  for (const auto& v : variants) {
    if (v.variant == variant) return &v;
  }
  return nullptr;
}

BenchReport run_benchmark(const TeacherModel& teacher, const MRFParams& params, const BenchConfig& config) {
  validate(config);
  validate(config.schedule, teacher.geometry().n());
  validate(params);
  require(params.geometry == teacher.geometry() && params.vocab == teacher.vocab(), ErrorCode::kDimensionMismatch,
          "teacher and MRF disagree on geometry or vocab");
  const DecodeSchedule& schedule = config.schedule;
  const int k = schedule.cut_step;
  const int count = static_cast<int>(config.conditions.size());
  const double temperature = config.options.temperature;
  auto seed_of = [&](int i) { return derive_seed(config.seed, static_cast<std::uint64_t>(i)); };

  // Untimed reference decodes for the quality metrics.
  std::vector<DecodeTrace> reference(static_cast<std::size_t>(count));
  parallel_for(count, config.threads, [&](int i) {
    reference[static_cast<std::size_t>(i)] =
        progressive_decode(teacher, config.conditions[static_cast<std::size_t>(i)], schedule, temperature, seed_of(i));
  });

  // One resident engine per worker, built outside the timers.
  const int workers = worker_count(count, config.threads);
  std::vector<FastForward> engines;
  engines.reserve(static_cast<std::size_t>(workers));
  for (int w = 0; w < workers; ++w) engines.emplace_back(params, config.options);

  // Timing accumulators for one variant.
  struct Tally {
    std::vector<Sample> samples;
    std::vector<double> totals;
    double teacher_sum = 0.0;
    double mrf_sum = 0.0;
    double total_sum = 0.0;
  };
  const std::size_t variant_count = config.variants.size();
  std::vector<Tally> tallies(variant_count);
  for (auto& t : tallies) t.samples.resize(static_cast<std::size_t>(count));

  // Each decode runs every variant back to back, so load drift on the host
  // affects all variants alike.
  std::vector<double> step_ms;
  std::vector<double> mrf_ms;
  for (int rep = 0; rep <= config.repetitions; ++rep) {
    parallel_for(count, config.threads, [&](int i) {
      const int condition = config.conditions[static_cast<std::size_t>(i)];
      FastForward& ff = engines[static_cast<std::size_t>(i % workers)];
      for (std::size_t v = 0; v < variant_count; ++v) {
        const Variant variant = config.variants[v];
        Sample& s = tallies[v].samples[static_cast<std::size_t>(i)];
        const auto t0 = Clock::now();
        if (variant == Variant::kFull) {
          s.trace = progressive_decode(teacher, condition, schedule, temperature, seed_of(i));
          s.grid = s.trace.final_grid;
        } else {
          s.trace = progressive_decode(teacher, condition, schedule, temperature, seed_of(i), k);
          if (variant == Variant::kEarlyExit) {
            s.grid = early_exit(s.trace, k);
          } else if (k == schedule.total_steps) {
            s.grid = s.trace.final_grid;
          } else {
            s.grid = ff.complete(s.trace, k);
            s.mrf_ms = ff.last_inference_ms();
          }
        }
        s.total_ms = ms_since(t0);
        s.teacher_ms = teacher_time(s.trace);
      }
    });
    if (rep == 0) continue;  // warmup
    for (std::size_t v = 0; v < variant_count; ++v) {
      Tally& t = tallies[v];
      for (const Sample& s : t.samples) {
        t.totals.push_back(s.total_ms);
        t.teacher_sum += s.teacher_ms;
        t.mrf_sum += s.mrf_ms;
        t.total_sum += s.total_ms;
        for (const auto& step : s.trace.steps) step_ms.push_back(step.model_ms);
        if (config.variants[v] == Variant::kMarkovGen && k < schedule.total_steps) mrf_ms.push_back(s.mrf_ms);
      }
    }
  }

  BenchReport report;
  for (std::size_t v = 0; v < variant_count; ++v) {
    const Variant variant = config.variants[v];
    const std::vector<Sample>& samples = tallies[v].samples;
    const std::vector<double>& totals = tallies[v].totals;
    const double teacher_sum = tallies[v].teacher_sum;
    const double mrf_sum = tallies[v].mrf_sum;
    const double total_sum = tallies[v].total_sum;

    VariantReport vr;
    vr.variant = variant;
    vr.wallclock_ms = summarize(totals);
    const double runs = static_cast<double>(totals.size());
    vr.teacher_ms = teacher_sum / runs;
    vr.mrf_ms = mrf_sum / runs;
    vr.bookkeeping_ms = std::max(0.0, (total_sum - teacher_sum - mrf_sum) / runs);

    double disagree = 0.0;
    long same = 0;
    long pairs = 0;
    bool parity = true;
    bool preserved = true;
    for (int i = 0; i < count; ++i) {
      const Sample& s = samples[static_cast<std::size_t>(i)];
      const DecodeTrace& ref = reference[static_cast<std::size_t>(i)];
      disagree += disagreement(s.grid, ref.final_grid);
      const auto [eq, all] = tail_pairs(s.grid, committed_state(ref, k).mask);
      same += eq;
      pairs += all;
      const int prefix = variant == Variant::kFull ? schedule.total_steps : k;
      parity = parity && same_prefix(s.trace, ref, prefix);
      const MaskedTokenGrid committed = committed_state(ref, prefix);
      for (std::size_t p = 0; p < committed.mask.size(); ++p) {
        if (!committed.mask[p] && committed.grid.labels[p] != s.grid.labels[p]) preserved = false;
      }
    }
    vr.disagreement_vs_full = disagree / count;
    vr.tail_neighbor_agreement = pairs > 0 ? static_cast<double>(same) / static_cast<double>(pairs) : 1.0;

    const std::string name(to_string(variant));
    report.invariants.push_back({name + ": seed parity with the full-decode trace", parity,
                                 parity ? "" : "teacher prefix differs from the reference decode"});
    report.invariants.push_back({name + ": committed tokens preserved", preserved,
                                 preserved ? "" : "a committed token was overwritten"});
    const bool positive = vr.wallclock_ms.median > 0.0 && vr.wallclock_ms.mean > 0.0;
    report.invariants.push_back({name + ": timings positive", positive, ""});
    if (variant == Variant::kFull) {
      const bool zero = vr.disagreement_vs_full == 0.0;
      report.invariants.push_back({"full: disagreement with itself is 0", zero,
                                   zero ? "" : "repeated full decodes differ"});
    }
    report.variants.push_back(vr);
  }

  report.teacher_step_ms = summarize(step_ms);
  report.mrf_inference_ms = summarize(mrf_ms);
  if (const VariantReport* full = report.find(Variant::kFull)) {
    for (auto& vr : report.variants) {
      if (vr.variant != Variant::kFull) vr.speedup_vs_full = full->wallclock_ms.median / vr.wallclock_ms.median;
    }
    const VariantReport* mg = report.find(Variant::kMarkovGen);
    if (mg != nullptr && k < schedule.total_steps && report.teacher_step_ms.samples > 0 &&
        report.mrf_inference_ms.median < (schedule.total_steps - k) * report.teacher_step_ms.median) {
      const bool faster = mg->wallclock_ms.median < full->wallclock_ms.median;
      report.invariants.push_back({"markovgen faster than full decode", faster,
                                   faster ? "" : "MRF is cheaper than the skipped steps but decode was not faster"});
    }
  }

  if (!config.k_sweep.empty()) {
    FastForward& ff = engines.front();
    for (int kk : config.k_sweep) {
      SweepPoint point{kk, 0.0, 0.0};
      for (const DecodeTrace& ref : reference) {
        point.early_exit_disagreement += disagreement(early_exit(ref, kk), ref.final_grid);
        const TokenGrid mg = kk == schedule.total_steps ? ref.final_grid : ff.complete(ref, kk);
        point.markovgen_disagreement += disagreement(mg, ref.final_grid);
      }
      point.early_exit_disagreement /= count;
      point.markovgen_disagreement /= count;
      report.sweep.push_back(point);
    }
  }

  nlohmann::json variants = nlohmann::json::array();
  for (Variant v : config.variants) variants.push_back(std::string(to_string(v)));
  report.config_echo = {{"total_steps", schedule.total_steps},
                        {"cut_step", k},
                        {"commits_per_step", schedule.commits_per_step},
                        {"variants", variants},
                        {"conditions", config.conditions},
                        {"repetitions", config.repetitions},
                        {"mf_iterations", config.options.mf_iterations},
                        {"temperature", temperature},
                        {"kappa", config.options.kappa},
                        {"precision", config.options.precision == Precision::kFloat32 ? "float32" : "float64"},
                        {"seed", config.seed},
                        {"k_sweep", config.k_sweep},
                        {"threads", config.threads}};
  return report;
}

nlohmann::json to_json(const BenchReport& report) {
  nlohmann::json variants = nlohmann::json::array();
  for (const auto& v : report.variants) {
    nlohmann::json entry = {{"variant", std::string(to_string(v.variant))},
                            {"wallclock_ms", to_json(v.wallclock_ms)},
                            {"components_ms",
                             {{"teacher", v.teacher_ms}, {"mrf", v.mrf_ms}, {"bookkeeping", v.bookkeeping_ms}}},
                            {"disagreement_vs_full", v.disagreement_vs_full},
                            {"tail_neighbor_agreement", v.tail_neighbor_agreement}};
    if (v.speedup_vs_full) entry["speedup_vs_full"] = *v.speedup_vs_full;
    variants.push_back(entry);
  }
  nlohmann::json sweep = nlohmann::json::array();
  for (const auto& p : report.sweep) {
    sweep.push_back({{"k", p.k},
                     {"early_exit_disagreement", p.early_exit_disagreement},
                     {"markovgen_disagreement", p.markovgen_disagreement}});
  }
  nlohmann::json invariants = nlohmann::json::array();
  for (const auto& c : report.invariants) {
    invariants.push_back({{"name", c.name}, {"passed", c.passed}, {"detail", c.detail}});
  }
  nlohmann::json out = {{"variants", variants},
                        {"teacher_step_ms", to_json(report.teacher_step_ms)},
                        {"mrf_inference_ms", to_json(report.mrf_inference_ms)},
                        {"k_sweep", sweep},
                        {"invariants", invariants},
                        {"ok", report.ok()},
                        {"machine", {{"hardware_concurrency", std::thread::hardware_concurrency()}}},
                        {"config", report.config_echo}};
  if (report.teacher_step_ms.median > 0.0 && report.mrf_inference_ms.samples > 0) {
    out["mrf_to_teacher_step_ratio"] = report.mrf_inference_ms.median / report.teacher_step_ms.median;
  }
  return out;
}

std::string format_table(const BenchReport& report) {
  std::ostringstream out;
  out << std::fixed;
  out << std::left << std::setw(12) << "variant" << std::right << std::setw(12) << "median_ms" << std::setw(12)
      << "mean_ms" << std::setw(12) << "teacher_ms" << std::setw(10) << "mrf_ms" << std::setw(10) << "other_ms"
      << std::setw(10) << "disagree" << std::setw(12) << "tail_agree" << std::setw(10) << "speedup" << '\n';
  for (const auto& v : report.variants) {
    out << std::left << std::setw(12) << to_string(v.variant) << std::right << std::setprecision(3) << std::setw(12)
        << v.wallclock_ms.median << std::setw(12) << v.wallclock_ms.mean << std::setw(12) << v.teacher_ms
        << std::setw(10) << v.mrf_ms << std::setw(10) << v.bookkeeping_ms << std::setprecision(4) << std::setw(10)
        << v.disagreement_vs_full << std::setw(12) << v.tail_neighbor_agreement << std::setw(10);
    if (v.speedup_vs_full) {
      out << std::setprecision(3) << *v.speedup_vs_full;
    } else {
      out << "-";
    }
    out << '\n';
  }
  out << std::setprecision(3) << "teacher step median " << report.teacher_step_ms.median << " ms, MRF inference median "
      << report.mrf_inference_ms.median << " ms\n";
  if (!report.sweep.empty()) {
    out << std::left << std::setw(6) << "k" << std::right << std::setw(14) << "early_exit" << std::setw(14)
        << "markovgen" << '\n';
    for (const auto& p : report.sweep) {
      out << std::left << std::setw(6) << p.k << std::right << std::setprecision(4) << std::setw(14)
          << p.early_exit_disagreement << std::setw(14) << p.markovgen_disagreement << '\n';
    }
  }
  for (const auto& c : report.invariants) {
    out << (c.passed ? "ok    " : "FAIL  ") << c.name;
    if (!c.detail.empty()) out << " (" << c.detail << ")";
    out << '\n';
  }
  return out.str();
}

}  // namespace markovgen
