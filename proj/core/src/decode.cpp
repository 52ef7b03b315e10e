#include "markovgen/decode.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include "markovgen/error.hpp"

namespace markovgen {
namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

std::string step_name(int step, const char* field) {
  return "step" + std::to_string(step) + "/" + field;
}

}  // namespace

DecodeTrace progressive_decode(const TeacherModel& model, int condition, const DecodeSchedule& schedule,
                               double temperature, std::uint64_t seed, int stop_after_step) {
  const GridGeometry geometry = model.geometry();
  const VocabSpec vocab = model.vocab();
  const int n = geometry.n();
  validate(schedule, n);
  require(temperature >= 0.0 && std::isfinite(temperature), ErrorCode::kInvalidArgument,
          "temperature must be finite and >= 0");
  require(stop_after_step >= 0 && stop_after_step <= schedule.total_steps, ErrorCode::kInvalidArgument,
          "stop_after_step outside the schedule");
  const int last_step = stop_after_step == 0 ? schedule.total_steps : stop_after_step;

  DecodeTrace trace;
  trace.condition = condition;
  trace.schedule = schedule;
  MaskedTokenGrid state = MaskedTokenGrid::fully_masked(geometry, vocab);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  std::vector<int> candidate(static_cast<std::size_t>(n));
  std::vector<double> confidence(static_cast<std::size_t>(n));
  std::vector<int> open;
  Eigen::RowVectorXd probs(vocab.size);
  for (int step = 1; step <= last_step; ++step) {
    const auto t0 = Clock::now();
    DecodeStep record;
    record.step = step;
    record.logits = model.predict_logits(state, condition);
    record.model_ms = ms_since(t0);

    open.clear();
    for (int i = 0; i < n; ++i) {
      if (state.mask[static_cast<std::size_t>(i)]) open.push_back(i);
    }
    for (int i : open) {
      const auto z = record.logits.values.row(i);
      const double peak = z.maxCoeff();
      probs = (z.array() - peak).exp().matrix();
      probs /= probs.sum();
      Eigen::Index pick = 0;
      if (temperature == 0.0) {
        z.maxCoeff(&pick);
      } else {
        Eigen::RowVectorXd tempered = ((z.array() - peak) / temperature).exp().matrix();
        const double u = unit(rng) * tempered.sum();
        double acc = 0.0;
        pick = vocab.size - 1;
        for (Eigen::Index k = 0; k < vocab.size; ++k) {
          acc += tempered(k);
          if (u < acc) {
            pick = k;
            break;
          }
        }
      }
      candidate[static_cast<std::size_t>(i)] = static_cast<int>(pick);
      confidence[static_cast<std::size_t>(i)] = probs(pick);
    }

    const int quota = schedule.commits_per_step[static_cast<std::size_t>(step - 1)];
    require(quota <= static_cast<int>(open.size()), ErrorCode::kDimensionMismatch,
            "schedule commits more positions than remain masked");
    std::stable_sort(open.begin(), open.end(), [&](int a, int b) {
      return confidence[static_cast<std::size_t>(a)] > confidence[static_cast<std::size_t>(b)];
    });
    open.resize(static_cast<std::size_t>(quota));
    std::sort(open.begin(), open.end());
    for (int i : open) {
      const auto k = static_cast<std::size_t>(i);
      state.mask[k] = false;
      state.grid.labels[k] = static_cast<Label>(candidate[k]);
      record.committed_positions.push_back(i);
      record.committed_labels.push_back(state.grid.labels[k]);
    }
    record.wallclock_ms = ms_since(t0);
    trace.steps.push_back(std::move(record));
  }
  trace.final_grid = state.grid;
  return trace;
}

MaskedTokenGrid committed_state(const DecodeTrace& trace, int k) {
  require(k >= 0 && k <= static_cast<int>(trace.steps.size()), ErrorCode::kIndexOutOfRange,
          "step " + std::to_string(k) + " not recorded in the trace");
  MaskedTokenGrid state = MaskedTokenGrid::fully_masked(trace.geometry(), trace.vocab());
  for (int s = 0; s < k; ++s) {
    const auto& step = trace.steps[static_cast<std::size_t>(s)];
    for (std::size_t c = 0; c < step.committed_positions.size(); ++c) {
      const auto i = static_cast<std::size_t>(step.committed_positions[c]);
      state.mask[i] = false;
      state.grid.labels[i] = step.committed_labels[c];
    }
  }
  return state;
}

TokenGrid early_exit(const DecodeTrace& trace, int k) {
  require(k >= 1 && k <= static_cast<int>(trace.steps.size()), ErrorCode::kIndexOutOfRange,
          "early exit step " + std::to_string(k) + " outside [1, " + std::to_string(trace.steps.size()) + "]");
  MaskedTokenGrid state = committed_state(trace, k);
  const RowMatrix& logits = trace.steps[static_cast<std::size_t>(k - 1)].logits.values;
  for (std::size_t i = 0; i < state.mask.size(); ++i) {
    if (!state.mask[i]) continue;
    Eigen::Index best = 0;
    logits.row(static_cast<Eigen::Index>(i)).maxCoeff(&best);
    state.grid.labels[i] = static_cast<Label>(best);
  }
  return state.grid;
}

TensorFile trace_to_tensor_file(const DecodeTrace& trace) {
  TensorFile file;
  const auto h = static_cast<std::uint32_t>(trace.geometry().height);
  const auto w = static_cast<std::uint32_t>(trace.geometry().width);
  const auto v = static_cast<std::uint32_t>(trace.vocab().size);
  for (const auto& step : trace.steps) {
    file.add(float_tensor(step_name(step.step, "logits"), {h * w, v}, step.logits.values));
    std::vector<Label> positions(step.committed_positions.begin(), step.committed_positions.end());
    file.add(label_tensor(step_name(step.step, "positions"), {static_cast<std::uint32_t>(positions.size())},
                          positions));
    file.add(label_tensor(step_name(step.step, "labels"), {static_cast<std::uint32_t>(positions.size())},
                          step.committed_labels));
  }
  file.add(label_tensor("final", {h, w}, trace.final_grid.labels));
  return file;
}

nlohmann::json trace_index(const DecodeTrace& trace) {
  nlohmann::json steps = nlohmann::json::array();
  for (const auto& step : trace.steps) {
    steps.push_back({{"step", step.step},
                     {"logits", step_name(step.step, "logits")},
                     {"positions", step_name(step.step, "positions")},
                     {"labels", step_name(step.step, "labels")},
                     {"wallclock_ms", step.wallclock_ms}});
  }
  return {{"format_version", kTensorFormatVersion},
          {"height", trace.geometry().height},
          {"width", trace.geometry().width},
          {"vocab", trace.vocab().size},
          {"condition", trace.condition},
          {"total_steps", trace.schedule.total_steps},
          {"cut_step", trace.schedule.cut_step},
          {"commits_per_step", trace.schedule.commits_per_step},
          {"final", "final"},
          {"steps", steps}};
}

void write_trace(const std::filesystem::path& path, const DecodeTrace& trace) {
  write_tensor_file(path, trace_to_tensor_file(trace));
  std::ofstream index(path.string() + ".json");
  require(static_cast<bool>(index), ErrorCode::kIo, "cannot write trace index for " + path.string());
  index << trace_index(trace).dump(2) << '\n';
}

DecodeTrace read_trace(const std::filesystem::path& path) {
  const TensorFile file = read_tensor_file(path);
  std::ifstream in(path.string() + ".json");
  require(static_cast<bool>(in), ErrorCode::kIo, "missing trace index for " + path.string());
  nlohmann::json index;
  try {
    index = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kMalformedFile, std::string("trace index: ") + e.what());
  }
  DecodeTrace trace;
  try {
    const GridGeometry geometry{index.at("height").get<int>(), index.at("width").get<int>()};
    const VocabSpec vocab{index.at("vocab").get<int>()};
    trace.condition = index.at("condition").get<int>();
    trace.schedule.total_steps = index.at("total_steps").get<int>();
    trace.schedule.cut_step = index.at("cut_step").get<int>();
    trace.schedule.commits_per_step = index.at("commits_per_step").get<std::vector<int>>();
    for (const auto& entry : index.at("steps")) {
      DecodeStep step;
      step.step = entry.at("step").get<int>();
      step.logits = {geometry, vocab,
                     to_matrix(file.get(entry.at("logits").get<std::string>()), geometry.n(), vocab.size)};
      const auto& positions = file.get(entry.at("positions").get<std::string>()).u16();
      step.committed_positions.assign(positions.begin(), positions.end());
      step.committed_labels = file.get(entry.at("labels").get<std::string>()).u16();
      step.wallclock_ms = entry.value("wallclock_ms", 0.0);
      trace.steps.push_back(std::move(step));
    }
    trace.final_grid = {geometry, vocab, file.get(index.at("final").get<std::string>()).u16()};
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kMalformedFile, std::string("trace index: ") + e.what());
  }
  validate(trace.final_grid);
  return trace;
}

}  // namespace markovgen
