#pragma once

// Fully-connected MRF over a token grid.
//
//   E(x) = sum_i -f_i(x_i) + sum_i sum_j -w_label(x_i, x_j) * w_spatial(i, j)
//
// Both sums run over every ordered pair (i, j), the diagonal i == j included.
// Mean-field inference uses parallel updates:
//
//   Q <- softmax(f)
//   repeat: Q <- softmax(W^s Q W^c^T + f)     (row-wise softmax)

#include <Eigen/Core>

#include "markovgen/types.hpp"

namespace markovgen {

inline constexpr int kDefaultMeanFieldIterations = 5;

double energy(const MRFParams& params, const LogitField& logits, const TokenGrid& assignment);

// -E(x). The normalizer log Z is only available from the oracle.
double log_unnormalized_prob(const MRFParams& params, const LogitField& logits,
                             const TokenGrid& assignment);

// Throws kNonFinite if an iteration produces NaN/Inf (weights too large).
MarginalField mean_field_infer(const MRFParams& params, const LogitField& logits, int num_iterations);

// Per-location argmax, ties resolved toward the lowest label.
TokenGrid map_decode(const MarginalField& q);

// F(Q) = sum Q(-f) - sum_ij sum_kk' Q_i(k) Q_j(k') c(k, k') s(i, j) - H(Q),
// with 0 log 0 = 0. The i == j pairs are scored as independent, so F equals
// E_Q[E(x)] - H(Q) exactly only when diag(W^s) = 0.
double variational_free_energy(const MRFParams& params, const LogitField& logits,
                               const MarginalField& q);

// Row-wise softmax with max subtraction.
template <typename Derived>
void softmax_rows_inplace(Eigen::MatrixBase<Derived>& m) {
  using Scalar = typename Derived::Scalar;
  using Column = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  const Column peak = m.rowwise().maxCoeff();
  m.colwise() -= peak;
  m.array() = m.array().exp();
  const Column total = m.rowwise().sum();
  m.array().colwise() /= total.array();
}

RowMatrix softmax_rows(const RowMatrix& m);

// Algorithm loop with weights cast to Scalar and scratch buffers held across
// calls. mean_field_infer is MeanFieldEngine<double>; decoding uses the
// float instantiation so the MRF runs at the teacher's precision.
template <typename Scalar>
class MeanFieldEngine {
 public:
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

  explicit MeanFieldEngine(const MRFParams& params);

  const GridGeometry& geometry() const { return geometry_; }
  const VocabSpec& vocab() const { return vocab_; }

  // `logits` and `q` are n x V. Not thread-safe: one engine per worker.
  void infer(const Matrix& logits, int num_iterations, Matrix& q);

 private:
  GridGeometry geometry_;
  VocabSpec vocab_;
  Matrix w_spatial_;
  Matrix w_label_t_;
  Matrix mixed_;
};

extern template class MeanFieldEngine<float>;
extern template class MeanFieldEngine<double>;

}  // namespace markovgen
