#pragma once

// Training of MRF parameters by backpropagation through the unrolled
// mean-field iterations.

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <utility>

#include "markovgen/types.hpp"

namespace markovgen {

struct TrainConfig {
  double learning_rate = 1e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  int batch_size = 8;
  int num_iterations_mf = 5;
  double mask_fraction = 0.20;
  // Logit given to an observed (or committed) token; all other labels at
  // that location get 0.
  double unary_strength_kappa = 10.0;
  int steps = 1000;
  std::uint64_t seed = 0;
  // Workers for per-example gradients; the reduction order is fixed, so the
  // result does not depend on this value.
  int threads = 1;
};

void validate(const TrainConfig& config);

struct GradientBundle {
  RowMatrix d_w_spatial;
  RowMatrix d_w_label;
  RowMatrix d_logits;

  static GradientBundle zeros(const MRFParams& params);
  GradientBundle& operator+=(const GradientBundle& other);
  GradientBundle& operator*=(double scale);
};

// Exact reverse-mode gradient of sum(loss_grad_on_q .* Q_T) w.r.t. W^s, W^c
// and f, where Q_T is the output of mean_field_infer.
GradientBundle mean_field_backward(const MRFParams& params, const LogitField& logits,
                                   int num_iterations, const RowMatrix& loss_grad_on_q);

struct LossAndGrad {
  double loss = 0.0;
  GradientBundle grads;
};

// kappa at the observed label of every unmasked location, zero rows at
// masked locations.
LogitField observed_unaries(const MaskedTokenGrid& masked, double kappa);

// floor(fraction * n).
int masked_count(int n, double fraction);

// Masks exactly masked_count(n, fraction) positions, drawn uniformly
// without replacement from `rng`.
MaskedTokenGrid random_mask(const TokenGrid& grid, double fraction, std::mt19937_64& rng);

// Mean cross-entropy of Q at the masked positions against the hidden labels.
// Throws kInvalidArgument when nothing is masked.
LossAndGrad pretrain_loss(const MRFParams& params, const MaskedTokenGrid& masked,
                          const TrainConfig& config);

// Mean over all positions of KL(onehot(target) || Q) = -log Q_i(target_i),
// where Q = mean_field_infer(params, mrf_input).
LossAndGrad distill_loss(const MRFParams& params, const LogitField& mrf_input,
                         const TokenGrid& teacher_final, const TrainConfig& config);

struct AdamState {
  RowMatrix m_spatial;
  RowMatrix v_spatial;
  RowMatrix m_label;
  RowMatrix v_label;
  long step = 0;

  static AdamState zeros_like(const MRFParams& params);
};

// One bias-corrected ADAM update applied to w_spatial and w_label.
std::pair<MRFParams, AdamState> adam_step(const MRFParams& params, const GradientBundle& grads,
                                          const AdamState& state, const TrainConfig& config);

// W^c = 0.1 I; W^s ~ N(0, 0.01^2) off the diagonal, zero on it.
MRFParams init_params(GridGeometry geometry, VocabSpec vocab, std::uint64_t seed);

enum class Stage { kPretrain, kDistill };

std::string_view to_string(Stage stage);

struct MetricsRecord {
  long step = 0;
  Stage stage = Stage::kPretrain;
  double loss = 0.0;
  double wallclock_ms = 0.0;
};

// "step<TAB>stage<TAB>loss<TAB>wallclock_ms"
std::string format_metrics_line(const MetricsRecord& record);

using MetricsSink = std::function<void(const MetricsRecord&)>;

// One distillation pair: the MRF input built from a teacher trace at the cut
// step, and the teacher's final committed tokens.
struct DistillExample {
  LogitField mrf_input;
  TokenGrid target;
};

MRFParams train_pretrain(const MRFParams& init, std::span<const TokenGrid> corpus,
                         const TrainConfig& config, const MetricsSink& sink = {});

MRFParams train_distill(const MRFParams& init, std::span<const DistillExample> examples,
                        const TrainConfig& config, const MetricsSink& sink = {});

// Fraction of masked positions whose MAP label equals the hidden label, over
// `repeats` random masks per grid.
double masked_accuracy(const MRFParams& params, std::span<const TokenGrid> grids,
                       const TrainConfig& config, int repeats, std::uint64_t seed);

}  // namespace markovgen
