#include "config.hpp"

#include <fstream>
#include <set>

#include "markovgen/error.hpp"

namespace markovgen::cli {
namespace {

using nlohmann::json;

[[noreturn]] void config_error(const std::string& message) { fail(ErrorCode::kConfig, message); }

template <typename T>
T convert(const json& value, const std::string& path);

template <>
int convert<int>(const json& value, const std::string& path) {
  if (!value.is_number_integer()) config_error("'" + path + "' must be an integer");
  const auto v = value.get<std::int64_t>();
  if (v < std::numeric_limits<int>::min() || v > std::numeric_limits<int>::max()) {
    config_error("'" + path + "' is out of range");
  }
  return static_cast<int>(v);
}

template <>
std::uint64_t convert<std::uint64_t>(const json& value, const std::string& path) {
  if (!value.is_number_unsigned()) config_error("'" + path + "' must be a non-negative integer");
  return value.get<std::uint64_t>();
}

template <>
double convert<double>(const json& value, const std::string& path) {
  if (!value.is_number()) config_error("'" + path + "' must be a number");
  return value.get<double>();
}

template <>
std::string convert<std::string>(const json& value, const std::string& path) {
  if (!value.is_string()) config_error("'" + path + "' must be a string");
  return value.get<std::string>();
}

template <>
std::vector<int> convert<std::vector<int>>(const json& value, const std::string& path) {
  if (!value.is_array()) config_error("'" + path + "' must be an array");
  std::vector<int> out;
  for (std::size_t i = 0; i < value.size(); ++i) out.push_back(convert<int>(value[i], path + "[" + std::to_string(i) + "]"));
  return out;
}

template <>
std::vector<std::string> convert<std::vector<std::string>>(const json& value, const std::string& path) {
  if (!value.is_array()) config_error("'" + path + "' must be an array");
  std::vector<std::string> out;
  for (std::size_t i = 0; i < value.size(); ++i) {
    out.push_back(convert<std::string>(value[i], path + "[" + std::to_string(i) + "]"));
  }
  return out;
}

// Tracks which keys of one JSON object were read so the rest can be
// reported as unknown.
class Section {
 public:
  Section(const json& object, std::string path) : object_(object), path_(std::move(path)) {
    if (!object_.is_object()) config_error("'" + display() + "' must be an object");
  }

  template <typename T>
  T required(const std::string& key) {
    seen_.insert(key);
    const auto it = object_.find(key);
    if (it == object_.end()) config_error("missing required key '" + full(key) + "'");
    return convert<T>(*it, full(key));
  }

  template <typename T>
  T optional(const std::string& key, T fallback) {
    seen_.insert(key);
    const auto it = object_.find(key);
    return it == object_.end() ? fallback : convert<T>(*it, full(key));
  }

  Section child(const std::string& key) {
    seen_.insert(key);
    const auto it = object_.find(key);
    if (it == object_.end()) config_error("missing required key '" + full(key) + "'");
    return Section(*it, full(key));
  }

  void finish() const {
    for (const auto& item : object_.items()) {
      if (!seen_.contains(item.key())) config_error("unknown key '" + full(item.key()) + "'");
    }
  }

 private:
  std::string full(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
  std::string display() const { return path_.empty() ? "<root>" : path_; }

  const json& object_;
  std::string path_;
  std::set<std::string> seen_;
};

void check(bool ok, const std::string& message) {
  if (!ok) config_error(message);
}

std::string precision_name(Precision p) { return p == Precision::kFloat32 ? "float32" : "float64"; }

}  // namespace

DecodeSchedule RunConfig::decode_schedule() const {
  return DecodeSchedule::cosine(corpus.geometry.n(), schedule.total_steps, schedule.cut_step);
}

TrainConfig RunConfig::pretrain_config() const {
  TrainConfig c;
  c.learning_rate = mrf.learning_rate;
  c.batch_size = mrf.batch_size;
  c.num_iterations_mf = mrf.mf_iterations;
  c.mask_fraction = mrf.mask_fraction;
  c.unary_strength_kappa = mrf.kappa;
  c.steps = mrf.pretrain_steps;
  c.seed = derive_seed(seed, 1);
  c.threads = mrf.threads;
  return c;
}

TrainConfig RunConfig::distill_config() const {
  TrainConfig c = pretrain_config();
  c.learning_rate = mrf.distill_learning_rate;
  c.steps = mrf.distill_steps;
  c.seed = derive_seed(seed, 2);
  return c;
}

MarkovGenOptions RunConfig::markovgen_options() const {
  MarkovGenOptions o;
  o.mf_iterations = mrf.mf_iterations;
  o.temperature = schedule.temperature;
  o.kappa = mrf.kappa;
  o.precision = bench.precision;
  return o;
}

std::vector<int> RunConfig::decode_conditions(int count) const {
  std::vector<int> out(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) out[static_cast<std::size_t>(i)] = i % condition_count();
  return out;
}

std::vector<CorpusSpec> RunConfig::corpus_specs() const {
  std::vector<CorpusSpec> specs;
  for (int c = 0; c < condition_count(); ++c) {
    CorpusSpec spec;
    spec.kind = corpus.kinds[static_cast<std::size_t>(c)];
    spec.geometry = corpus.geometry;
    spec.vocab = corpus.vocab;
    spec.condition = c;
    spec.count = corpus.count_per_kind;
    spec.noise_rate = corpus.noise_rate;
    spec.seed = derive_seed(seed, 100 + static_cast<std::uint64_t>(c));
    spec.gibbs_burn_in = corpus.gibbs_burn_in;
    if (spec.kind == PatternKind::kGtMrf) spec.gt_params = attractive_mrf(corpus.geometry, corpus.vocab, corpus.gt_coupling);
    specs.push_back(std::move(spec));
  }
  return specs;
}

RunConfig parse_run_config(const json& doc) {
  RunConfig config;
  Section root(doc, "");
  config.seed = root.required<std::uint64_t>("seed");
  config.output_dir = root.required<std::string>("output_dir");

  Section corpus = root.child("corpus");
  config.corpus.geometry = {corpus.required<int>("height"), corpus.required<int>("width")};
  config.corpus.vocab = {corpus.required<int>("vocab")};
  for (const auto& name : corpus.required<std::vector<std::string>>("kinds")) {
    config.corpus.kinds.push_back(parse_pattern_kind(name));
  }
  config.corpus.count_per_kind = corpus.required<int>("count_per_kind");
  config.corpus.noise_rate = corpus.optional<double>("noise_rate", 0.0);
  config.corpus.gt_coupling = corpus.optional<double>("gt_coupling", 0.5);
  config.corpus.gibbs_burn_in = corpus.optional<int>("gibbs_burn_in", 50);
  corpus.finish();

  Section teacher = root.child("teacher");
  TeacherConfig& t = config.teacher;
  t.steps = teacher.required<int>("steps");
  t.embed_dim = teacher.optional<int>("embed_dim", t.embed_dim);
  t.hidden_dim = teacher.optional<int>("hidden_dim", t.hidden_dim);
  t.blocks = teacher.optional<int>("blocks", t.blocks);
  t.learning_rate = teacher.optional<double>("learning_rate", t.learning_rate);
  t.batch_size = teacher.optional<int>("batch_size", t.batch_size);
  t.seed = derive_seed(config.seed, 3);
  teacher.finish();

  Section mrf = root.child("mrf");
  MrfSection& m = config.mrf;
  m.pretrain_steps = mrf.required<int>("pretrain_steps");
  m.distill_steps = mrf.required<int>("distill_steps");
  m.learning_rate = mrf.optional<double>("learning_rate", m.learning_rate);
  m.distill_learning_rate = mrf.optional<double>("distill_learning_rate", m.learning_rate);
  m.batch_size = mrf.optional<int>("batch_size", m.batch_size);
  m.mf_iterations = mrf.optional<int>("mf_iterations", m.mf_iterations);
  m.mask_fraction = mrf.optional<double>("mask_fraction", m.mask_fraction);
  m.kappa = mrf.optional<double>("kappa", m.kappa);
  m.distill_samples = mrf.optional<int>("distill_samples", m.distill_samples);
  m.threads = mrf.optional<int>("threads", m.threads);
  mrf.finish();

  Section schedule = root.child("schedule");
  config.schedule.total_steps = schedule.required<int>("total_steps");
  config.schedule.cut_step = schedule.required<int>("cut_step");
  config.schedule.temperature = schedule.optional<double>("temperature", 1.0);
  schedule.finish();

  Section bench = root.child("bench");
  BenchSection& b = config.bench;
  b.decodes = bench.required<int>("decodes");
  b.repetitions = bench.optional<int>("repetitions", b.repetitions);
  std::vector<std::string> variant_names;
  for (Variant v : b.variants) variant_names.emplace_back(to_string(v));
  variant_names = bench.optional<std::vector<std::string>>("variants", variant_names);
  b.variants.clear();
  for (const auto& name : variant_names) b.variants.push_back(parse_variant(name));
  b.k_sweep = bench.optional<std::vector<int>>("k_sweep", {});
  const std::string precision = bench.optional<std::string>("precision", "float32");
  check(precision == "float32" || precision == "float64", "'bench.precision' must be float32 or float64");
  b.precision = precision == "float32" ? Precision::kFloat32 : Precision::kFloat64;
  b.threads = bench.optional<int>("threads", b.threads);
  bench.finish();
  root.finish();

  check(!config.corpus.kinds.empty(), "'corpus.kinds' must not be empty");
  check(config.corpus.count_per_kind >= 1, "'corpus.count_per_kind' must be >= 1");
  check(m.pretrain_steps >= 0 && m.distill_steps >= 0, "'mrf' step counts must be >= 0");
  check(m.distill_samples >= 0, "'mrf.distill_samples' must be >= 0");
  check(b.decodes >= 1, "'bench.decodes' must be >= 1");
  check(b.threads >= 1, "'bench.threads' must be >= 1");
  validate(config.teacher);
  validate(config.pretrain_config());
  validate(config.distill_config());
  validate(config.decode_schedule(), config.corpus.geometry.n());
  validate(config.markovgen_options());
  for (const auto& spec : config.corpus_specs()) validate(spec);
  return config;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorCode::kIo, "cannot open config " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    config_error(path.string() + ": " + e.what());
  }
  return parse_run_config(doc);
}

json to_json(const RunConfig& config) {
  json kinds = json::array();
  for (PatternKind k : config.corpus.kinds) kinds.push_back(std::string(to_string(k)));
  json variants = json::array();
  for (Variant v : config.bench.variants) variants.push_back(std::string(to_string(v)));
  const auto& c = config.corpus;
  const auto& t = config.teacher;
  const auto& m = config.mrf;
  const auto& b = config.bench;
  return {{"seed", config.seed},
          {"output_dir", config.output_dir.string()},
          {"corpus",
           {{"height", c.geometry.height},
            {"width", c.geometry.width},
            {"vocab", c.vocab.size},
            {"kinds", kinds},
            {"count_per_kind", c.count_per_kind},
            {"noise_rate", c.noise_rate},
            {"gt_coupling", c.gt_coupling},
            {"gibbs_burn_in", c.gibbs_burn_in}}},
          {"teacher",
           {{"steps", t.steps},
            {"embed_dim", t.embed_dim},
            {"hidden_dim", t.hidden_dim},
            {"blocks", t.blocks},
            {"learning_rate", t.learning_rate},
            {"batch_size", t.batch_size}}},
          {"mrf",
           {{"pretrain_steps", m.pretrain_steps},
            {"distill_steps", m.distill_steps},
            {"learning_rate", m.learning_rate},
            {"distill_learning_rate", m.distill_learning_rate},
            {"batch_size", m.batch_size},
            {"mf_iterations", m.mf_iterations},
            {"mask_fraction", m.mask_fraction},
            {"kappa", m.kappa},
            {"distill_samples", m.distill_samples},
            {"threads", m.threads}}},
          {"schedule",
           {{"total_steps", config.schedule.total_steps},
            {"cut_step", config.schedule.cut_step},
            {"temperature", config.schedule.temperature}}},
          {"bench",
           {{"decodes", b.decodes},
            {"repetitions", b.repetitions},
            {"variants", variants},
            {"k_sweep", b.k_sweep},
            {"precision", precision_name(b.precision)},
            {"threads", b.threads}}}};
}

}  // namespace markovgen::cli
