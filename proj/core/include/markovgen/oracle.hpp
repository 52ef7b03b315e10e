#pragma once

// Brute-force ground truth for tiny instances. Every enumeration visits all
// V^n assignments and refuses instances with V^n > kMaxEnumerationStates.

#include <cstdint>
#include <vector>

#include "markovgen/types.hpp"

namespace markovgen {

inline constexpr double kMaxEnumerationStates = 1e7;

// Throws kInstanceTooLarge when V^n exceeds the guard.
void require_enumerable(const GridGeometry& geometry, const VocabSpec& vocab);

// log Z = log sum_x exp(-E(x)), accumulated in the log domain.
double enumerate_partition(const MRFParams& params, const LogitField& logits);

// P_i(k) = sum over assignments with x_i = k of P(x).
MarginalField exact_marginals(const MRFParams& params, const LogitField& logits);

// Minimum-energy assignment; ties go to the lexicographically smallest
// label sequence.
TokenGrid exact_map(const MRFParams& params, const LogitField& logits);

// sum_x Q(x) E(x) - H(Q) with Q(x) = prod_i Q_i(x_i), by enumeration.
double enumerate_free_energy(const MRFParams& params, const LogitField& logits, const MarginalField& q);

// Full joint P(x) in odometer order (location 0 varies slowest).
std::vector<double> exact_joint(const MRFParams& params, const LogitField& logits);

// Single-site Gibbs sampling, row-major sweeps starting from a uniformly
// random assignment. One sample is recorded after each sweep past burn-in.
std::vector<TokenGrid> gibbs_sample(const MRFParams& params, const LogitField& logits, int burn_in,
                                    int num_samples, std::uint64_t seed);

// Empirical per-location label frequencies of `samples`.
MarginalField empirical_marginals(const std::vector<TokenGrid>& samples);

}  // namespace markovgen
