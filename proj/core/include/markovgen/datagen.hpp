#pragma once

// Synthetic token-grid corpora with known structure.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "markovgen/teacher.hpp"
#include "markovgen/types.hpp"

namespace markovgen {

enum class PatternKind { kCheckerboard, kStripes, kBlobs, kGtMrf };

std::string_view to_string(PatternKind kind);
// Accepts "checkerboard", "stripes", "blobs", "gt_mrf"; throws kConfig.
PatternKind parse_pattern_kind(std::string_view name);

struct CorpusSpec {
  PatternKind kind = PatternKind::kCheckerboard;
  GridGeometry geometry{16, 16};
  VocabSpec vocab{2};
  int condition = 0;
  int count = 1;
  double noise_rate = 0.0;
  std::uint64_t seed = 0;
  // Required for kGtMrf, ignored otherwise.
  std::optional<MRFParams> gt_params;
  int gibbs_burn_in = 50;
};

void validate(const CorpusSpec& spec);
nlohmann::json to_json(const CorpusSpec& spec);

// Grid i is generated from its own generator seeded with (seed, i), so the
// output is independent of `threads`.
//
//   checkerboard: a from [0, V/2) on even (row + col), b from [V/2, V) on odd
//   stripes:      horizontal bands 2..4 rows high, one random label per band
//   blobs:        3..6 random seeds grown into 4-connected regions
//   gt_mrf:       one Gibbs chain on gt_params with zero unaries
//
// Afterwards every token is independently replaced by a uniform random label
// with probability noise_rate.
std::vector<LabeledGrid> generate(const CorpusSpec& spec, int threads = 1);

// W^c = coupling * I and W^s = 1 between 4-neighbours, 0 elsewhere.
MRFParams attractive_mrf(GridGeometry geometry, VocabSpec vocab, double coupling);

// Fraction of ordered 4-neighbour pairs with equal labels, over all grids.
double neighbor_agreement(std::span<const LabeledGrid> corpus);

// MGTF tensors "labels" (uint16 [count, H, W]), "conditions" (uint16
// [count]) and "geometry" (uint16 [H, W, V - 1]), plus `path`.json holding
// the format version, shape, condition labels and `echo`. Throws
// kInvalidArgument for an empty or inhomogeneous corpus.
void write_corpus(const std::filesystem::path& path, std::span<const LabeledGrid> corpus,
                  const nlohmann::json& echo = nlohmann::json::object());
std::vector<LabeledGrid> read_corpus(const std::filesystem::path& path);

}  // namespace markovgen
