#pragma once

// Value types shared by every module: token grids, per-location score and
// probability fields, MRF parameters and decode schedules. All of them are
// plain values; operations take them by const reference and return new ones.

#include <cstdint>
#include <vector>

#include <Eigen/Core>

namespace markovgen {

using Label = std::uint16_t;

// Rows index grid locations (row-major), columns index labels.
using RowMatrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct VocabSpec {
  int size = 0;

  friend bool operator==(const VocabSpec&, const VocabSpec&) = default;
};

struct RowCol {
  int row = 0;
  int col = 0;

  friend bool operator==(const RowCol&, const RowCol&) = default;
};

struct GridGeometry {
  int height = 0;
  int width = 0;

  int n() const { return height * width; }

  // Row-major: row = i / width, col = i % width. Throws kIndexOutOfRange.
  RowCol to_rowcol(int index) const;
  int to_index(RowCol rc) const;

  friend bool operator==(const GridGeometry&, const GridGeometry&) = default;
};

struct TokenGrid {
  GridGeometry geometry;
  VocabSpec vocab;
  std::vector<Label> labels;

  static TokenGrid filled(GridGeometry geometry, VocabSpec vocab, Label value = 0);

  Label at(RowCol rc) const { return labels[geometry.to_index(rc)]; }

  friend bool operator==(const TokenGrid&, const TokenGrid&) = default;
};

// mask[i] == true marks a hidden position whose label is unknown to the model.
struct MaskedTokenGrid {
  TokenGrid grid;
  std::vector<bool> mask;

  static MaskedTokenGrid fully_masked(GridGeometry geometry, VocabSpec vocab);
  static MaskedTokenGrid fully_observed(TokenGrid grid);

  int masked_count() const;
};

// f_i(k): unnormalized per-location scores. The MRF unary is -f.
struct LogitField {
  GridGeometry geometry;
  VocabSpec vocab;
  RowMatrix values;

  static LogitField zeros(GridGeometry geometry, VocabSpec vocab);
};

// Q_i(k): per-location categorical distributions.
struct MarginalField {
  GridGeometry geometry;
  VocabSpec vocab;
  RowMatrix values;

  static MarginalField uniform(GridGeometry geometry, VocabSpec vocab);
};

// Dense spatial similarity W^s (n x n) and label compatibility W^c (V x V).
// Pairwise potential p_ij(a, b) = -w_label(a, b) * w_spatial(i, j).
struct MRFParams {
  GridGeometry geometry;
  VocabSpec vocab;
  RowMatrix w_spatial;
  RowMatrix w_label;

  static MRFParams zeros(GridGeometry geometry, VocabSpec vocab);
};

struct DecodeSchedule {
  int total_steps = 0;
  int cut_step = 0;
  std::vector<int> commits_per_step;

  // Cosine-spaced commitment counts: after step t a fraction
  // cos(pi/2 * t / total_steps) of the n positions remains masked, so early
  // steps commit few positions and late steps many.
  static DecodeSchedule cosine(int n, int total_steps, int cut_step);
  // Everything committed at step 1.
  static DecodeSchedule one_shot(int n);

  // Positions committed through step `step` (1-based, inclusive).
  int committed_through(int step) const;
};

// Validation: each overload throws markovgen::Error naming the violated
// invariant, or returns normally.
void validate(const VocabSpec& vocab);
void validate(const GridGeometry& geometry);
void validate(const TokenGrid& grid);
void validate(const MaskedTokenGrid& masked);
void validate(const LogitField& logits);
void validate(const MarginalField& marginals, double tolerance = 1e-6);
void validate(const MRFParams& params);
void validate(const DecodeSchedule& schedule, int n);

// Throws kDimensionMismatch unless geometry and vocab agree.
void require_same_shape(const MRFParams& params, const LogitField& logits);

}  // namespace markovgen
