#include "markovgen/types.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <string>

#include "markovgen/error.hpp"

namespace markovgen {

RowCol GridGeometry::to_rowcol(int index) const {
  require(index >= 0 && index < n(), ErrorCode::kIndexOutOfRange,
          "location " + std::to_string(index) + " not in [0, " + std::to_string(n()) + ")");
  return {index / width, index % width};
}

int GridGeometry::to_index(RowCol rc) const {
  require(rc.row >= 0 && rc.row < height && rc.col >= 0 && rc.col < width,
          ErrorCode::kIndexOutOfRange,
          "(" + std::to_string(rc.row) + ", " + std::to_string(rc.col) + ") outside " +
              std::to_string(height) + "x" + std::to_string(width));
  return rc.row * width + rc.col;
}

TokenGrid TokenGrid::filled(GridGeometry geometry, VocabSpec vocab, Label value) {
  return {geometry, vocab, std::vector<Label>(static_cast<size_t>(geometry.n()), value)};
}

MaskedTokenGrid MaskedTokenGrid::fully_masked(GridGeometry geometry, VocabSpec vocab) {
  return {TokenGrid::filled(geometry, vocab), std::vector<bool>(static_cast<size_t>(geometry.n()), true)};
}

MaskedTokenGrid MaskedTokenGrid::fully_observed(TokenGrid grid) {
  const auto n = grid.labels.size();
  return {std::move(grid), std::vector<bool>(n, false)};
}

int MaskedTokenGrid::masked_count() const {
  return static_cast<int>(std::count(mask.begin(), mask.end(), true));
}

LogitField LogitField::zeros(GridGeometry geometry, VocabSpec vocab) {
  return {geometry, vocab, RowMatrix::Zero(geometry.n(), vocab.size)};
}

MarginalField MarginalField::uniform(GridGeometry geometry, VocabSpec vocab) {
  return {geometry, vocab,
          RowMatrix::Constant(geometry.n(), vocab.size, 1.0 / vocab.size)};
}

MRFParams MRFParams::zeros(GridGeometry geometry, VocabSpec vocab) {
  return {geometry, vocab, RowMatrix::Zero(geometry.n(), geometry.n()),
          RowMatrix::Zero(vocab.size, vocab.size)};
}

DecodeSchedule DecodeSchedule::cosine(int n, int total_steps, int cut_step) {
  require(n > 0 && total_steps >= 1, ErrorCode::kInvalidArgument,
          "cosine schedule needs n > 0 and total_steps >= 1");
  DecodeSchedule schedule;
  schedule.total_steps = total_steps;
  schedule.cut_step = cut_step;
  int still_masked = n;
  for (int step = 1; step <= total_steps; ++step) {
    int remaining = 0;
    if (step < total_steps) {
      const double frac = std::cos(std::numbers::pi / 2.0 * step / total_steps);
      remaining = static_cast<int>(std::floor(n * frac));
    }
    schedule.commits_per_step.push_back(still_masked - remaining);
    still_masked = remaining;
  }
  validate(schedule, n);
  return schedule;
}

DecodeSchedule DecodeSchedule::one_shot(int n) { return {1, 1, {n}}; }

int DecodeSchedule::committed_through(int step) const {
  const int upto = std::clamp(step, 0, static_cast<int>(commits_per_step.size()));
  return std::accumulate(commits_per_step.begin(), commits_per_step.begin() + upto, 0);
}

void validate(const VocabSpec& vocab) {
  require(vocab.size >= 2, ErrorCode::kInvalidArgument,
          "vocabulary size must be >= 2, got " + std::to_string(vocab.size));
  require(vocab.size <= 65536, ErrorCode::kInvalidArgument,
          "vocabulary size must fit 16-bit labels");
}

void validate(const GridGeometry& geometry) {
  require(geometry.height > 0 && geometry.width > 0, ErrorCode::kInvalidArgument,
          "grid dimensions must be positive");
}

void validate(const TokenGrid& grid) {
  validate(grid.geometry);
  validate(grid.vocab);
  require(static_cast<int>(grid.labels.size()) == grid.geometry.n(),
          ErrorCode::kDimensionMismatch,
          "token grid has " + std::to_string(grid.labels.size()) + " labels for n = " +
              std::to_string(grid.geometry.n()));
  for (size_t i = 0; i < grid.labels.size(); ++i) {
    require(grid.labels[i] < grid.vocab.size, ErrorCode::kLabelOutOfRange,
            "label " + std::to_string(grid.labels[i]) + " at location " + std::to_string(i) +
                " with V = " + std::to_string(grid.vocab.size));
  }
}

void validate(const MaskedTokenGrid& masked) {
  validate(masked.grid);
  require(static_cast<int>(masked.mask.size()) == masked.grid.geometry.n(),
          ErrorCode::kDimensionMismatch, "mask length differs from n");
}

namespace {

void validate_field(const GridGeometry& geometry, const VocabSpec& vocab, const RowMatrix& values,
                    const char* what) {
  validate(geometry);
  validate(vocab);
  require(values.rows() == geometry.n() && values.cols() == vocab.size,
          ErrorCode::kDimensionMismatch,
          std::string(what) + " is " + std::to_string(values.rows()) + "x" +
              std::to_string(values.cols()) + ", expected " + std::to_string(geometry.n()) + "x" +
              std::to_string(vocab.size));
  require(values.allFinite(), ErrorCode::kNonFinite, what);
}

}  // namespace

void validate(const LogitField& logits) {
  validate_field(logits.geometry, logits.vocab, logits.values, "logit field");
}

void validate(const MarginalField& marginals, double tolerance) {
  validate_field(marginals.geometry, marginals.vocab, marginals.values, "marginal field");
  for (Eigen::Index i = 0; i < marginals.values.rows(); ++i) {
    const auto row = marginals.values.row(i);
    require(row.minCoeff() >= 0.0 && row.maxCoeff() <= 1.0, ErrorCode::kNotNormalized,
            "entry outside [0, 1] at location " + std::to_string(i));
    require(std::abs(row.sum() - 1.0) <= tolerance, ErrorCode::kNotNormalized,
            "location " + std::to_string(i) + " sums to " + std::to_string(row.sum()));
  }
}

void validate(const MRFParams& params) {
  validate(params.geometry);
  validate(params.vocab);
  const auto n = params.geometry.n();
  require(params.w_spatial.rows() == n && params.w_spatial.cols() == n,
          ErrorCode::kDimensionMismatch, "w_spatial must be n x n");
  require(params.w_label.rows() == params.vocab.size && params.w_label.cols() == params.vocab.size,
          ErrorCode::kDimensionMismatch, "w_label must be V x V");
  require(params.w_spatial.allFinite(), ErrorCode::kNonFinite, "w_spatial");
  require(params.w_label.allFinite(), ErrorCode::kNonFinite, "w_label");
}

void validate(const DecodeSchedule& schedule, int n) {
  require(schedule.total_steps >= 1, ErrorCode::kInvalidArgument, "total_steps must be >= 1");
  require(schedule.cut_step >= 1 && schedule.cut_step <= schedule.total_steps,
          ErrorCode::kInvalidArgument,
          "cut_step " + std::to_string(schedule.cut_step) + " not in [1, " +
              std::to_string(schedule.total_steps) + "]");
  require(static_cast<int>(schedule.commits_per_step.size()) == schedule.total_steps,
          ErrorCode::kDimensionMismatch, "commits_per_step length differs from total_steps");
  long total = 0;
  for (int c : schedule.commits_per_step) {
    require(c >= 0, ErrorCode::kInvalidArgument, "negative commit count");
    total += c;
  }
  require(total == n, ErrorCode::kDimensionMismatch,
          "commits sum to " + std::to_string(total) + ", expected n = " + std::to_string(n));
}

void require_same_shape(const MRFParams& params, const LogitField& logits) {
  require(params.geometry == logits.geometry && params.vocab == logits.vocab,
          ErrorCode::kDimensionMismatch, "MRF parameters and logits disagree on geometry or vocab");
}

}  // namespace markovgen
