#pragma once

// Oracle-backed property checks on randomly drawn small instances. Shared by
// the `verify` subcommand and the acceptance suite.

#include <cstdint>
#include <string>
#include <vector>

#include "markovgen/types.hpp"

namespace markovgen::cli {

struct PropertyResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

struct Instance {
  MRFParams params;
  LogitField logits;
};

// W^s and W^c entries ~ N(0, weight_std^2), logits ~ N(0, 1).
Instance random_instance(GridGeometry geometry, VocabSpec vocab, double weight_std, std::uint64_t seed);

// As random_instance, but every location's largest logit exceeds all others
// by at least `gap`.
Instance gapped_instance(GridGeometry geometry, VocabSpec vocab, double weight_std, double gap,
                         std::uint64_t seed);

// Zero MRF parameters: mean_field_infer equals softmax(f) within `tolerance`
// for every iteration count in {0, 1, 5, 10}.
PropertyResult check_zero_weight_fixed_point(int instances, GridGeometry geometry, VocabSpec vocab,
                                             double tolerance, std::uint64_t seed);

// mean_field_backward against central differences with step h. An entry
// passes when its relative error is <= rel_tol, or, where the reference
// magnitude is below abs_floor, its absolute error is <= abs_floor.
PropertyResult check_gradients(int instances, double h, double rel_tol, double abs_floor, std::uint64_t seed);

// F(Q after `iterations`) <= F(softmax(f)) + slack on at least
// `min_fraction` of the instances.
PropertyResult check_free_energy_descent(int instances, double weight_std, int iterations, double slack,
                                         double min_fraction, std::uint64_t seed);

// max |Q - exact marginals| <= tolerance on every instance.
PropertyResult check_marginal_accuracy(int instances, double weight_std, int iterations, double tolerance,
                                       std::uint64_t seed);

// map_decode(mean field) == exact_map on at least `min_fraction` of
// instances whose unary gaps are >= gap.
PropertyResult check_map_agreement(int instances, double weight_std, double gap, int iterations,
                                   double min_fraction, std::uint64_t seed);

// sum_x exp(-E(x) - log Z) == 1 within tolerance on every instance.
PropertyResult check_normalization(const std::vector<Instance>& instances, double tolerance);

// Gibbs empirical marginals within tolerance of the exact marginals.
PropertyResult check_gibbs_marginals(const std::vector<Instance>& instances, int burn_in, int samples,
                                     double tolerance, std::uint64_t seed);

// Every instance family the suite draws from, for check_normalization.
std::vector<Instance> guarded_instances(std::uint64_t seed);

// The full suite at the acceptance tolerances.
std::vector<PropertyResult> run_property_suite(std::uint64_t seed);

}  // namespace markovgen::cli
