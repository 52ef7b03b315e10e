#include "markovgen/datagen.hpp"

#include <array>
#include <fstream>
#include <random>

#include "markovgen/error.hpp"
#include "markovgen/oracle.hpp"
#include "markovgen/tensor_io.hpp"
#include "parallel.hpp"

namespace markovgen {
namespace {

int draw(std::mt19937_64& rng, int lo, int hi_exclusive) {
  return std::uniform_int_distribution<int>(lo, hi_exclusive - 1)(rng);
}

void fill_checkerboard(TokenGrid& grid, std::mt19937_64& rng) {
  const int v = grid.vocab.size;
  const int half = std::max(v / 2, 1);
  const auto a = static_cast<Label>(draw(rng, 0, half));
  const auto b = static_cast<Label>(draw(rng, v / 2, v));
  for (int i = 0; i < grid.geometry.n(); ++i) {
    const RowCol rc = grid.geometry.to_rowcol(i);
    grid.labels[static_cast<std::size_t>(i)] = (rc.row + rc.col) % 2 == 0 ? a : b;
  }
}

void fill_stripes(TokenGrid& grid, std::mt19937_64& rng) {
  const int w = grid.geometry.width;
  for (int row = 0; row < grid.geometry.height;) {
    const int band = draw(rng, 2, 5);
    const auto label = static_cast<Label>(draw(rng, 0, grid.vocab.size));
    for (int r = row; r < std::min(row + band, grid.geometry.height); ++r) {
      std::fill_n(grid.labels.begin() + r * w, w, label);
    }
    row += band;
  }
}

void fill_blobs(TokenGrid& grid, std::mt19937_64& rng) {
  const GridGeometry& g = grid.geometry;
  const int n = g.n();
  std::vector<int> owner(static_cast<std::size_t>(n), -1);
  std::vector<int> front;
  const int seeds = draw(rng, 3, 7);
  for (int s = 0; s < seeds; ++s) {
    const int p = draw(rng, 0, n);
    const int label = draw(rng, 0, grid.vocab.size);
    if (owner[static_cast<std::size_t>(p)] < 0) {
      owner[static_cast<std::size_t>(p)] = label;
      front.push_back(p);
    }
  }
  constexpr std::array<RowCol, 4> kSteps{{{1, 0}, {-1, 0}, {0, 1}, {0, -1}}};
  std::vector<int> open;
  while (!front.empty()) {
    const int slot = draw(rng, 0, static_cast<int>(front.size()));
    const int p = front[static_cast<std::size_t>(slot)];
    const RowCol rc = g.to_rowcol(p);
    open.clear();
    for (const RowCol& d : kSteps) {
      const int r = rc.row + d.row;
      const int c = rc.col + d.col;
      if (r < 0 || r >= g.height || c < 0 || c >= g.width) continue;
      const int q = g.to_index({r, c});
      if (owner[static_cast<std::size_t>(q)] < 0) open.push_back(q);
    }
    if (open.empty()) {
      front[static_cast<std::size_t>(slot)] = front.back();
      front.pop_back();
      continue;
    }
    const int q = open[static_cast<std::size_t>(draw(rng, 0, static_cast<int>(open.size())))];
    owner[static_cast<std::size_t>(q)] = owner[static_cast<std::size_t>(p)];
    front.push_back(q);
  }
  for (int i = 0; i < n; ++i) grid.labels[static_cast<std::size_t>(i)] = static_cast<Label>(owner[static_cast<std::size_t>(i)]);
}

void fill_gt_mrf(TokenGrid& grid, const CorpusSpec& spec, std::mt19937_64& rng) {
  const LogitField zero = LogitField::zeros(spec.geometry, spec.vocab);
  grid = gibbs_sample(*spec.gt_params, zero, spec.gibbs_burn_in, 1, rng()).front();
}

}  // namespace

std::string_view to_string(PatternKind kind) {
  switch (kind) {
    case PatternKind::kCheckerboard:
      return "checkerboard";
    case PatternKind::kStripes:
      return "stripes";
    case PatternKind::kBlobs:
      return "blobs";
    case PatternKind::kGtMrf:
      return "gt_mrf";
  }
  return "unknown";
}

PatternKind parse_pattern_kind(std::string_view name) {
  for (PatternKind kind :
       {PatternKind::kCheckerboard, PatternKind::kStripes, PatternKind::kBlobs, PatternKind::kGtMrf}) {
    if (to_string(kind) == name) return kind;
  }
  fail(ErrorCode::kConfig, "unknown corpus kind '" + std::string(name) + "'");
}

void validate(const CorpusSpec& spec) {
  validate(spec.geometry);
  validate(spec.vocab);
  require(spec.count >= 1, ErrorCode::kInvalidArgument, "corpus count must be >= 1");
  require(spec.noise_rate >= 0.0 && spec.noise_rate < 1.0, ErrorCode::kInvalidArgument,
          "noise_rate must lie in [0, 1)");
  require(spec.condition >= 0 && spec.condition <= 0xFFFF, ErrorCode::kInvalidArgument,
          "condition must fit in uint16");
  if (spec.kind == PatternKind::kCheckerboard) {
    require(spec.vocab.size >= 2, ErrorCode::kInvalidArgument, "checkerboard needs V >= 2");
  }
  if (spec.kind == PatternKind::kGtMrf) {
    require(spec.gt_params.has_value(), ErrorCode::kInvalidArgument, "gt_mrf corpus needs MRF parameters");
    validate(*spec.gt_params);
    require(spec.gt_params->geometry == spec.geometry && spec.gt_params->vocab == spec.vocab,
            ErrorCode::kDimensionMismatch, "gt_mrf parameters do not match the corpus shape");
    require(spec.gibbs_burn_in >= 0, ErrorCode::kInvalidArgument, "gibbs_burn_in must be >= 0");
  }
}

nlohmann::json to_json(const CorpusSpec& spec) {
  nlohmann::json out = {{"kind", std::string(to_string(spec.kind))},
                        {"height", spec.geometry.height},
                        {"width", spec.geometry.width},
                        {"vocab", spec.vocab.size},
                        {"condition", spec.condition},
                        {"count", spec.count},
                        {"noise_rate", spec.noise_rate},
                        {"seed", spec.seed}};
  if (spec.kind == PatternKind::kGtMrf) out["gibbs_burn_in"] = spec.gibbs_burn_in;
  return out;
}

std::vector<LabeledGrid> generate(const CorpusSpec& spec, int threads) {
  validate(spec);
  std::vector<LabeledGrid> out(static_cast<std::size_t>(spec.count));
  parallel_for(spec.count, threads, [&](int index) {
    std::seed_seq seq{static_cast<std::uint32_t>(spec.seed), static_cast<std::uint32_t>(spec.seed >> 32),
                      static_cast<std::uint32_t>(index)};
    std::mt19937_64 rng(seq);
    TokenGrid grid = TokenGrid::filled(spec.geometry, spec.vocab);
    switch (spec.kind) {
      case PatternKind::kCheckerboard:
        fill_checkerboard(grid, rng);
        break;
      case PatternKind::kStripes:
        fill_stripes(grid, rng);
        break;
      case PatternKind::kBlobs:
        fill_blobs(grid, rng);
        break;
      case PatternKind::kGtMrf:
        fill_gt_mrf(grid, spec, rng);
        break;
    }
    if (spec.noise_rate > 0.0) {
      std::uniform_real_distribution<double> unit(0.0, 1.0);
      for (auto& label : grid.labels) {
        if (unit(rng) < spec.noise_rate) label = static_cast<Label>(draw(rng, 0, spec.vocab.size));
      }
    }
    out[static_cast<std::size_t>(index)] = {std::move(grid), spec.condition};
  });
  return out;
}

MRFParams attractive_mrf(GridGeometry geometry, VocabSpec vocab, double coupling) {
  MRFParams params = MRFParams::zeros(geometry, vocab);
  params.w_label = RowMatrix::Identity(vocab.size, vocab.size) * coupling;
  for (int i = 0; i < geometry.n(); ++i) {
    const RowCol rc = geometry.to_rowcol(i);
    if (rc.col + 1 < geometry.width) {
      params.w_spatial(i, i + 1) = 1.0;
      params.w_spatial(i + 1, i) = 1.0;
    }
    if (rc.row + 1 < geometry.height) {
      params.w_spatial(i, i + geometry.width) = 1.0;
      params.w_spatial(i + geometry.width, i) = 1.0;
    }
  }
  return params;
}

double neighbor_agreement(std::span<const LabeledGrid> corpus) {
  long same = 0;
  long total = 0;
  for (const auto& item : corpus) {
    const TokenGrid& g = item.grid;
    for (int r = 0; r < g.geometry.height; ++r) {
      for (int c = 0; c < g.geometry.width; ++c) {
        if (c + 1 < g.geometry.width) {
          same += g.at({r, c}) == g.at({r, c + 1}) ? 1 : 0;
          ++total;
        }
        if (r + 1 < g.geometry.height) {
          same += g.at({r, c}) == g.at({r + 1, c}) ? 1 : 0;
          ++total;
        }
      }
    }
  }
  require(total > 0, ErrorCode::kInvalidArgument, "corpus has no neighbouring pairs");
  return static_cast<double>(same) / static_cast<double>(total);
}

void write_corpus(const std::filesystem::path& path, std::span<const LabeledGrid> corpus,
                  const nlohmann::json& echo) {
  require(!corpus.empty(), ErrorCode::kInvalidArgument, "refusing to write an empty corpus");
  const GridGeometry geometry = corpus.front().grid.geometry;
  const VocabSpec vocab = corpus.front().grid.vocab;
  std::vector<Label> labels;
  std::vector<Label> conditions;
  labels.reserve(corpus.size() * static_cast<std::size_t>(geometry.n()));
  for (const auto& item : corpus) {
    validate(item.grid);
    require(item.grid.geometry == geometry && item.grid.vocab == vocab, ErrorCode::kInvalidArgument,
            "corpus grids differ in shape");
    require(item.condition >= 0 && item.condition <= 0xFFFF, ErrorCode::kInvalidArgument,
            "condition must fit in uint16");
    labels.insert(labels.end(), item.grid.labels.begin(), item.grid.labels.end());
    conditions.push_back(static_cast<Label>(item.condition));
  }
  const auto count = static_cast<std::uint32_t>(corpus.size());
  const auto h = static_cast<std::uint32_t>(geometry.height);
  const auto w = static_cast<std::uint32_t>(geometry.width);
  TensorFile file;
  const std::vector<Label> shape = {static_cast<Label>(h), static_cast<Label>(w), static_cast<Label>(vocab.size - 1)};
  file.add(label_tensor("geometry", {3}, shape));
  file.add(label_tensor("labels", {count, h, w}, labels));
  file.add(label_tensor("conditions", {count}, conditions));
  write_tensor_file(path, file);

  nlohmann::json sidecar = {{"format_version", kTensorFormatVersion},
                            {"height", geometry.height},
                            {"width", geometry.width},
                            {"vocab", vocab.size},
                            {"count", corpus.size()},
                            {"conditions", conditions},
                            {"config", echo}};
  std::ofstream out(path.string() + ".json");
  require(static_cast<bool>(out), ErrorCode::kIo, "cannot write corpus sidecar for " + path.string());
  out << sidecar.dump(2) << '\n';
}

std::vector<LabeledGrid> read_corpus(const std::filesystem::path& path) {
  const TensorFile file = read_tensor_file(path);
  const auto& shape = file.get("geometry").u16();
  require(shape.size() == 3, ErrorCode::kMalformedFile, "geometry tensor must hold 3 values");
  const GridGeometry geometry{shape[0], shape[1]};
  const VocabSpec vocab{shape[2] + 1};
  const Tensor& labels = file.get("labels");
  const auto& conditions = file.get("conditions").u16();
  const std::size_t n = static_cast<std::size_t>(geometry.n());
  require(labels.dims.size() == 3 && labels.dims[1] == shape[0] && labels.dims[2] == shape[1] &&
              labels.dims[0] == conditions.size() && !conditions.empty(),
          ErrorCode::kMalformedFile, "labels tensor does not match the corpus shape");
  const auto& flat = labels.u16();
  std::vector<LabeledGrid> out;
  out.reserve(conditions.size());
  for (std::size_t c = 0; c < conditions.size(); ++c) {
    TokenGrid grid{geometry, vocab,
                   std::vector<Label>(flat.begin() + static_cast<std::ptrdiff_t>(c * n),
                                      flat.begin() + static_cast<std::ptrdiff_t>((c + 1) * n))};
    try {
      validate(grid);
    } catch (const Error& e) {
      fail(ErrorCode::kMalformedFile, std::string("corpus grid ") + std::to_string(c) + ": " + e.what());
    }
    out.push_back({std::move(grid), conditions[c]});
  }
  return out;
}

}  // namespace markovgen
