#include "markovgen/oracle.hpp"

#include <cmath>
#include <limits>
#include <random>

#include "markovgen/error.hpp"

namespace markovgen {
namespace {

// E(x) without validation; callers validate once up front.
double raw_energy(const MRFParams& params, const RowMatrix& f, const std::vector<int>& x) {
  const int n = static_cast<int>(x.size());
  double e = 0.0;
  for (int i = 0; i < n; ++i) {
    e -= f(i, x[static_cast<std::size_t>(i)]);
    for (int j = 0; j < n; ++j) {
      e -= params.w_label(x[static_cast<std::size_t>(i)], x[static_cast<std::size_t>(j)]) *
           params.w_spatial(i, j);
    }
  }
  return e;
}

void check(const MRFParams& params, const LogitField& logits) {
  validate(params);
  validate(logits);
  require_same_shape(params, logits);
  require_enumerable(params.geometry, params.vocab);
}

// Calls fn(x) for every assignment in lexicographic order.
template <typename Fn>
void for_each_assignment(int n, int v, Fn&& fn) {
  std::vector<int> x(static_cast<std::size_t>(n), 0);
  while (true) {
    fn(static_cast<const std::vector<int>&>(x));
    int pos = n - 1;
    while (pos >= 0 && ++x[static_cast<std::size_t>(pos)] == v) {
      x[static_cast<std::size_t>(pos)] = 0;
      --pos;
    }
    if (pos < 0) return;
  }
}

double log_sum_exp(const std::vector<double>& values) {
  double peak = -std::numeric_limits<double>::infinity();
  for (double v : values) peak = std::max(peak, v);
  double sum = 0.0;
  for (double v : values) sum += std::exp(v - peak);
  return peak + std::log(sum);
}

std::vector<double> log_weights(const MRFParams& params, const LogitField& logits) {
  std::vector<double> out;
  for_each_assignment(params.geometry.n(), params.vocab.size,
                      [&](const std::vector<int>& x) { out.push_back(-raw_energy(params, logits.values, x)); });
  return out;
}

}  // namespace

void require_enumerable(const GridGeometry& geometry, const VocabSpec& vocab) {
  const double states = std::pow(static_cast<double>(vocab.size), geometry.n());
  require(states <= kMaxEnumerationStates, ErrorCode::kInstanceTooLarge,
          "V^n = " + std::to_string(states) + " exceeds the enumeration guard");
}

double enumerate_partition(const MRFParams& params, const LogitField& logits) {
  check(params, logits);
  return log_sum_exp(log_weights(params, logits));
}

std::vector<double> exact_joint(const MRFParams& params, const LogitField& logits) {
  check(params, logits);
  std::vector<double> lw = log_weights(params, logits);
  const double log_z = log_sum_exp(lw);
  for (double& v : lw) v = std::exp(v - log_z);
  return lw;
}

MarginalField exact_marginals(const MRFParams& params, const LogitField& logits) {
  const std::vector<double> joint = exact_joint(params, logits);
  MarginalField q{params.geometry, params.vocab, RowMatrix::Zero(params.geometry.n(), params.vocab.size)};
  std::size_t idx = 0;
  for_each_assignment(params.geometry.n(), params.vocab.size, [&](const std::vector<int>& x) {
    const double p = joint[idx++];
    for (std::size_t i = 0; i < x.size(); ++i) q.values(static_cast<Eigen::Index>(i), x[i]) += p;
  });
  for (Eigen::Index i = 0; i < q.values.rows(); ++i) q.values.row(i) /= q.values.row(i).sum();
  return q;
}

TokenGrid exact_map(const MRFParams& params, const LogitField& logits) {
  check(params, logits);
  double best = std::numeric_limits<double>::infinity();
  std::vector<int> argbest;
  for_each_assignment(params.geometry.n(), params.vocab.size, [&](const std::vector<int>& x) {
    const double e = raw_energy(params, logits.values, x);
    // Strict comparison keeps the first (lexicographically smallest) minimum.
    if (e < best) {
      best = e;
      argbest = x;
    }
  });
  TokenGrid grid = TokenGrid::filled(params.geometry, params.vocab);
  for (std::size_t i = 0; i < argbest.size(); ++i) grid.labels[i] = static_cast<Label>(argbest[i]);
  return grid;
}

double enumerate_free_energy(const MRFParams& params, const LogitField& logits, const MarginalField& q) {
  check(params, logits);
  validate(q);
  double expected_energy = 0.0;
  double neg_entropy = 0.0;
  for_each_assignment(params.geometry.n(), params.vocab.size, [&](const std::vector<int>& x) {
    double qx = 1.0;
    for (std::size_t i = 0; i < x.size(); ++i) qx *= q.values(static_cast<Eigen::Index>(i), x[i]);
    if (qx <= 0.0) return;
    expected_energy += qx * raw_energy(params, logits.values, x);
    neg_entropy += qx * std::log(qx);
  });
  return expected_energy + neg_entropy;
}

std::vector<TokenGrid> gibbs_sample(const MRFParams& params, const LogitField& logits, int burn_in,
                                    int num_samples, std::uint64_t seed) {
  validate(params);
  validate(logits);
  require_same_shape(params, logits);
  require(burn_in >= 0 && num_samples >= 0, ErrorCode::kInvalidArgument,
          "burn_in and num_samples must be >= 0");
  const int n = params.geometry.n();
  const int v = params.vocab.size;
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> any_label(0, v - 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<int> x(static_cast<std::size_t>(n));
  for (auto& xi : x) xi = any_label(rng);

  Eigen::RowVectorXd score(v);
  auto sweep = [&] {
    for (int i = 0; i < n; ++i) {
      // Every term of E that involves x_i: its unary, both ordered pairs
      // (i, j) and (j, i) for j != i, and the self pair (i, i).
      for (int k = 0; k < v; ++k) {
        double s = logits.values(i, k) + params.w_label(k, k) * params.w_spatial(i, i);
        for (int j = 0; j < n; ++j) {
          if (j == i) continue;
          const int xj = x[static_cast<std::size_t>(j)];
          s += params.w_label(k, xj) * params.w_spatial(i, j) + params.w_label(xj, k) * params.w_spatial(j, i);
        }
        score(k) = s;
      }
      score = (score.array() - score.maxCoeff()).exp().matrix();
      const double u = unit(rng) * score.sum();
      double acc = 0.0;
      int pick = v - 1;
      for (int k = 0; k < v; ++k) {
        acc += score(k);
        if (u < acc) {
          pick = k;
          break;
        }
      }
      x[static_cast<std::size_t>(i)] = pick;
    }
  };

  for (int s = 0; s < burn_in; ++s) sweep();
  std::vector<TokenGrid> samples;
  samples.reserve(static_cast<std::size_t>(num_samples));
  for (int s = 0; s < num_samples; ++s) {
    sweep();
    TokenGrid grid = TokenGrid::filled(params.geometry, params.vocab);
    for (int i = 0; i < n; ++i) grid.labels[static_cast<std::size_t>(i)] = static_cast<Label>(x[static_cast<std::size_t>(i)]);
    samples.push_back(std::move(grid));
  }
  return samples;
}

MarginalField empirical_marginals(const std::vector<TokenGrid>& samples) {
  require(!samples.empty(), ErrorCode::kInvalidArgument, "no samples");
  const auto& first = samples.front();
  MarginalField q{first.geometry, first.vocab, RowMatrix::Zero(first.geometry.n(), first.vocab.size)};
  for (const auto& s : samples) {
    for (std::size_t i = 0; i < s.labels.size(); ++i) q.values(static_cast<Eigen::Index>(i), s.labels[i]) += 1.0;
  }
  q.values /= static_cast<double>(samples.size());
  return q;
}

}  // namespace markovgen
