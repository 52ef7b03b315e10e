#include "markovgen/mrf.hpp"

#include <cmath>
#include <string>

#include "markovgen/error.hpp"

namespace markovgen {
namespace {

void check_assignment(const MRFParams& params, const LogitField& logits, const TokenGrid& x) {
  validate(params);
  validate(logits);
  validate(x);
  require_same_shape(params, logits);
  require(x.geometry == params.geometry && x.vocab == params.vocab, ErrorCode::kDimensionMismatch,
          "assignment disagrees with MRF geometry or vocab");
}

// Same result as allFinite(): x * 0 is 0 for finite x and NaN otherwise.
// One vectorized reduction instead of Eigen's two comparison passes.
template <typename Derived>
bool all_finite(const Eigen::MatrixBase<Derived>& m) {
  using Scalar = typename Derived::Scalar;
  return std::isfinite((m.array() * Scalar(0)).sum());
}

}  // namespace

double energy(const MRFParams& params, const LogitField& logits, const TokenGrid& assignment) {
  check_assignment(params, logits, assignment);
  const int n = params.geometry.n();
  const auto& x = assignment.labels;
  double unary = 0.0;
  for (int i = 0; i < n; ++i) unary -= logits.values(i, x[i]);
  double pairwise = 0.0;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      pairwise -= params.w_label(x[i], x[j]) * params.w_spatial(i, j);
    }
  }
  return unary + pairwise;
}

double log_unnormalized_prob(const MRFParams& params, const LogitField& logits,
                             const TokenGrid& assignment) {
  return -energy(params, logits, assignment);
}

RowMatrix softmax_rows(const RowMatrix& m) {
  RowMatrix out = m;
  softmax_rows_inplace(out);
  return out;
}

template <typename Scalar>
MeanFieldEngine<Scalar>::MeanFieldEngine(const MRFParams& params)
    : geometry_(params.geometry), vocab_(params.vocab) {
  validate(params);
  w_spatial_ = params.w_spatial.cast<Scalar>();
  w_label_t_ = params.w_label.transpose().cast<Scalar>();
  mixed_.resize(geometry_.n(), vocab_.size);
}

template <typename Scalar>
void MeanFieldEngine<Scalar>::infer(const Matrix& logits, int num_iterations, Matrix& q) {
  require(logits.rows() == geometry_.n() && logits.cols() == vocab_.size,
          ErrorCode::kDimensionMismatch, "logits shape differs from MRF parameters");
  require(num_iterations >= 0, ErrorCode::kInvalidArgument, "num_iterations must be >= 0");
  q = logits;
  softmax_rows_inplace(q);
  for (int t = 0; t < num_iterations; ++t) {
    mixed_.noalias() = w_spatial_ * q;        // spatial mixing
    q.noalias() = mixed_ * w_label_t_;        // label compatibility
    q += logits;                              // unaries
    require(all_finite(q), ErrorCode::kNonFinite,
            "mean-field iteration " + std::to_string(t + 1) + " diverged");
    softmax_rows_inplace(q);
  }
}

template class MeanFieldEngine<float>;
template class MeanFieldEngine<double>;

MarginalField mean_field_infer(const MRFParams& params, const LogitField& logits, int num_iterations) {
  validate(logits);
  require_same_shape(params, logits);
  MeanFieldEngine<double> engine(params);
  MarginalField q{logits.geometry, logits.vocab, {}};
  engine.infer(logits.values, num_iterations, q.values);
  return q;
}

TokenGrid map_decode(const MarginalField& q) {
  validate(q);
  TokenGrid grid = TokenGrid::filled(q.geometry, q.vocab);
  for (Eigen::Index i = 0; i < q.values.rows(); ++i) {
    Eigen::Index best = 0;
    // maxCoeff returns the first maximum, i.e. the lowest label on ties.
    q.values.row(i).maxCoeff(&best);
    grid.labels[static_cast<std::size_t>(i)] = static_cast<Label>(best);
  }
  return grid;
}

double variational_free_energy(const MRFParams& params, const LogitField& logits,
                               const MarginalField& q) {
  validate(params);
  validate(logits);
  validate(q);
  require_same_shape(params, logits);
  require(q.geometry == params.geometry && q.vocab == params.vocab, ErrorCode::kDimensionMismatch,
          "marginals disagree with MRF geometry or vocab");
  const RowMatrix& Q = q.values;
  const double unary = -(Q.array() * logits.values.array()).sum();
  const RowMatrix mixed = params.w_spatial * Q * params.w_label.transpose();
  const double pairwise = -(Q.array() * mixed.array()).sum();
  double neg_entropy = 0.0;
  for (Eigen::Index i = 0; i < Q.size(); ++i) {
    const double p = Q.data()[i];
    if (p > 0.0) neg_entropy += p * std::log(p);
  }
  return unary + pairwise + neg_entropy;
}

}  // namespace markovgen
