#include "properties.hpp"

#include <cmath>
#include <random>
#include <sstream>

#include "markovgen/mrf.hpp"
#include "markovgen/oracle.hpp"
#include "markovgen/pipeline.hpp"
#include "markovgen/train.hpp"

namespace markovgen::cli {
namespace {

void fill_normal(RowMatrix& m, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, stddev);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng);
}

std::string format(const char* label, double value) {
  std::ostringstream out;
  out << label << value;
  return out.str();
}

constexpr GridGeometry kTiny{2, 2};
constexpr VocabSpec kTinyVocab{3};

}  // namespace

Instance random_instance(GridGeometry geometry, VocabSpec vocab, double weight_std, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Instance inst{MRFParams::zeros(geometry, vocab), LogitField::zeros(geometry, vocab)};
  fill_normal(inst.params.w_spatial, weight_std, rng);
  fill_normal(inst.params.w_label, weight_std, rng);
  fill_normal(inst.logits.values, 1.0, rng);
  return inst;
}

Instance gapped_instance(GridGeometry geometry, VocabSpec vocab, double weight_std, double gap,
                         std::uint64_t seed) {
  Instance inst = random_instance(geometry, vocab, weight_std, seed);
  std::mt19937_64 rng(derive_seed(seed, 1));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<int> label(0, vocab.size - 1);
  for (Eigen::Index i = 0; i < inst.logits.values.rows(); ++i) {
    auto row = inst.logits.values.row(i);
    for (Eigen::Index k = 0; k < row.size(); ++k) row(k) = unit(rng);
    row(label(rng)) = 1.0 + gap + unit(rng);
  }
  return inst;
}

PropertyResult check_zero_weight_fixed_point(int instances, GridGeometry geometry, VocabSpec vocab,
                                             double tolerance, std::uint64_t seed) {
  double worst = 0.0;
  for (int s = 0; s < instances; ++s) {
    Instance inst = random_instance(geometry, vocab, 0.0, derive_seed(seed, static_cast<std::uint64_t>(s)));
    const RowMatrix expected = softmax_rows(inst.logits.values);
    for (int iters : {0, 1, 5, 10}) {
      const MarginalField q = mean_field_infer(inst.params, inst.logits, iters);
      worst = std::max(worst, (q.values - expected).cwiseAbs().maxCoeff());
    }
  }
  return {"zero-weight fixed point", worst <= tolerance, format("max deviation ", worst)};
}

PropertyResult check_gradients(int instances, double h, double rel_tol, double abs_floor, std::uint64_t seed) {
  double worst_rel = 0.0;
  long failures = 0;
  long entries = 0;
  for (int s = 0; s < instances; ++s) {
    const std::uint64_t inst_seed = derive_seed(seed, static_cast<std::uint64_t>(s));
    const GridGeometry geometry = s % 2 == 0 ? GridGeometry{2, 2} : GridGeometry{3, 3};
    const VocabSpec vocab{3 + (s / 2) % 2};
    const int iters = 1 + s % 3;
    Instance inst = random_instance(geometry, vocab, 0.5, inst_seed);
    std::mt19937_64 rng(derive_seed(inst_seed, 7));
    RowMatrix upstream(geometry.n(), vocab.size);
    fill_normal(upstream, 1.0, rng);

    const GradientBundle g = mean_field_backward(inst.params, inst.logits, iters, upstream);
    auto loss = [&] { return (mean_field_infer(inst.params, inst.logits, iters).values.cwiseProduct(upstream)).sum(); };
    auto compare = [&](RowMatrix& target, const RowMatrix& analytic) {
      for (Eigen::Index i = 0; i < target.size(); ++i) {
        const double saved = target.data()[i];
        target.data()[i] = saved + h;
        const double up = loss();
        target.data()[i] = saved - h;
        const double down = loss();
        target.data()[i] = saved;
        const double reference = (up - down) / (2.0 * h);
        const double err = std::abs(analytic.data()[i] - reference);
        ++entries;
        if (std::abs(reference) < abs_floor) {
          if (err > abs_floor) ++failures;
        } else {
          const double rel = err / std::abs(reference);
          worst_rel = std::max(worst_rel, rel);
          if (rel > rel_tol) ++failures;
        }
      }
    };
    compare(inst.params.w_spatial, g.d_w_spatial);
    compare(inst.params.w_label, g.d_w_label);
    compare(inst.logits.values, g.d_logits);
  }
  std::ostringstream detail;
  detail << failures << " of " << entries << " entries out of tolerance, worst relative error " << worst_rel;
  return {"gradient vs finite differences", failures == 0, detail.str()};
}

PropertyResult check_free_energy_descent(int instances, double weight_std, int iterations, double slack,
                                         double min_fraction, std::uint64_t seed) {
  int decreased = 0;
  for (int s = 0; s < instances; ++s) {
    const Instance inst = random_instance(kTiny, kTinyVocab, weight_std, derive_seed(seed, static_cast<std::uint64_t>(s)));
    const MarginalField start = mean_field_infer(inst.params, inst.logits, 0);
    const MarginalField end = mean_field_infer(inst.params, inst.logits, iterations);
    const double f0 = variational_free_energy(inst.params, inst.logits, start);
    const double f1 = variational_free_energy(inst.params, inst.logits, end);
    if (f1 <= f0 + slack) ++decreased;
  }
  const double fraction = static_cast<double>(decreased) / instances;
  return {"free energy does not increase", fraction >= min_fraction, format("fraction ", fraction)};
}

PropertyResult check_marginal_accuracy(int instances, double weight_std, int iterations, double tolerance,
                                       std::uint64_t seed) {
  double worst = 0.0;
  for (int s = 0; s < instances; ++s) {
    const Instance inst = random_instance(kTiny, kTinyVocab, weight_std, derive_seed(seed, static_cast<std::uint64_t>(s)));
    const MarginalField q = mean_field_infer(inst.params, inst.logits, iterations);
    const MarginalField exact = exact_marginals(inst.params, inst.logits);
    worst = std::max(worst, (q.values - exact.values).cwiseAbs().maxCoeff());
  }
  return {"mean-field marginals vs exact", worst <= tolerance, format("max deviation ", worst)};
}

PropertyResult check_map_agreement(int instances, double weight_std, double gap, int iterations,
                                   double min_fraction, std::uint64_t seed) {
  int agree = 0;
  for (int s = 0; s < instances; ++s) {
    const Instance inst =
        gapped_instance(kTiny, kTinyVocab, weight_std, gap, derive_seed(seed, static_cast<std::uint64_t>(s)));
    const TokenGrid approx = map_decode(mean_field_infer(inst.params, inst.logits, iterations));
    if (approx == exact_map(inst.params, inst.logits)) ++agree;
  }
  const double fraction = static_cast<double>(agree) / instances;
  return {"MAP agreement vs exact", fraction >= min_fraction, format("fraction ", fraction)};
}

PropertyResult check_normalization(const std::vector<Instance>& instances, double tolerance) {
  double worst = 0.0;
  for (const auto& inst : instances) {
    const double log_z = enumerate_partition(inst.params, inst.logits);
    const std::vector<double> joint = exact_joint(inst.params, inst.logits);
    double total = 0.0;
    // Recomputed from energies so the check does not reuse exact_joint's
    // normalization.
    const int n = inst.params.geometry.n();
    const int v = inst.params.vocab.size;
    TokenGrid x = TokenGrid::filled(inst.params.geometry, inst.params.vocab);
    for (std::size_t idx = 0; idx < joint.size(); ++idx) {
      std::size_t rest = idx;
      for (int i = n - 1; i >= 0; --i) {
        x.labels[static_cast<std::size_t>(i)] = static_cast<Label>(rest % static_cast<std::size_t>(v));
        rest /= static_cast<std::size_t>(v);
      }
      total += std::exp(-energy(inst.params, inst.logits, x) - log_z);
    }
    worst = std::max(worst, std::abs(total - 1.0));
  }
  return {"partition function normalizes", worst <= tolerance, format("max |sum - 1| ", worst)};
}

PropertyResult check_gibbs_marginals(const std::vector<Instance>& instances, int burn_in, int samples,
                                     double tolerance, std::uint64_t seed) {
  double worst = 0.0;
  for (std::size_t s = 0; s < instances.size(); ++s) {
    const Instance& inst = instances[s];
    const auto draws = gibbs_sample(inst.params, inst.logits, burn_in, samples, derive_seed(seed, s));
    const MarginalField empirical = empirical_marginals(draws);
    const MarginalField exact = exact_marginals(inst.params, inst.logits);
    worst = std::max(worst, (empirical.values - exact.values).cwiseAbs().maxCoeff());
  }
  return {"Gibbs marginals vs exact", worst <= tolerance, format("max deviation ", worst)};
}

std::vector<Instance> guarded_instances(std::uint64_t seed) {
  std::vector<Instance> out;
  for (int s = 0; s < 20; ++s) {
    const auto k = static_cast<std::uint64_t>(s);
    out.push_back(random_instance(kTiny, kTinyVocab, 0.1, derive_seed(seed, k)));
    out.push_back(random_instance(kTiny, kTinyVocab, 0.01, derive_seed(seed + 1, k)));
    out.push_back(random_instance(GridGeometry{3, 3}, VocabSpec{2}, 0.5, derive_seed(seed + 2, k)));
    out.push_back(random_instance(kTiny, kTinyVocab, 1.0, derive_seed(seed + 3, k)));
  }
  return out;
}

std::vector<PropertyResult> run_property_suite(std::uint64_t seed) {
  std::vector<PropertyResult> out;
  out.push_back(check_zero_weight_fixed_point(100, GridGeometry{4, 4}, VocabSpec{8}, 1e-6, derive_seed(seed, 1)));
  out.push_back(check_gradients(20, 1e-3, 1e-4, 1e-6, derive_seed(seed, 2)));
  out.push_back(check_free_energy_descent(100, 0.1, 10, 1e-9, 0.90, derive_seed(seed, 3)));
  out.push_back(check_marginal_accuracy(100, 0.01, 10, 0.05, derive_seed(seed, 4)));
  out.push_back(check_map_agreement(100, 0.01, 5.0, 10, 0.95, derive_seed(seed, 5)));
  out.push_back(check_normalization(guarded_instances(derive_seed(seed, 6)), 1e-9));
  const std::vector<Instance> gibbs = {random_instance(kTiny, kTinyVocab, 0.5, derive_seed(seed, 7)),
                                       random_instance(GridGeometry{3, 3}, VocabSpec{2}, 0.5, derive_seed(seed, 8))};
  out.push_back(check_gibbs_marginals(gibbs, 1000, 100000, 0.02, derive_seed(seed, 9)));
  return out;
}

}  // namespace markovgen::cli
