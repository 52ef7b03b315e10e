#include "markovgen/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <sstream>
#include <thread>
#include <vector>

#include "markovgen/error.hpp"
#include "markovgen/mrf.hpp"
#include "parallel.hpp"

namespace markovgen {
namespace {

// Activations of the unrolled loop, kept for the reverse pass.
struct Tape {
  std::vector<RowMatrix> q;      // q[0] = softmax(f), q[t] after iteration t
  std::vector<RowMatrix> mixed;  // W^s q[t-1] for iteration t
  RowMatrix final_pre;           // input of the last softmax
};

Tape forward_tape(const MRFParams& params, const RowMatrix& f, int iterations) {
  require(iterations >= 0, ErrorCode::kInvalidArgument, "num_iterations must be >= 0");
  Tape tape;
  tape.q.reserve(static_cast<std::size_t>(iterations) + 1);
  tape.q.push_back(softmax_rows(f));
  tape.final_pre = f;
  for (int t = 0; t < iterations; ++t) {
    RowMatrix mixed = params.w_spatial * tape.q.back();
    RowMatrix pre = mixed * params.w_label.transpose();
    pre += f;
    require(pre.allFinite(), ErrorCode::kNonFinite,
            "mean-field iteration " + std::to_string(t + 1) + " diverged");
    tape.mixed.push_back(std::move(mixed));
    tape.q.push_back(softmax_rows(pre));
    tape.final_pre = std::move(pre);
  }
  return tape;
}

// Vector-Jacobian product of a row-wise softmax with output q.
RowMatrix softmax_backward(const RowMatrix& q, const RowMatrix& grad_q) {
  const Eigen::VectorXd inner = (q.array() * grad_q.array()).rowwise().sum();
  RowMatrix out = grad_q;
  out.colwise() -= inner;
  return (out.array() * q.array()).matrix();
}

// Reverse pass given the gradient w.r.t. the last softmax input.
GradientBundle backward_from_pre(const MRFParams& params, const Tape& tape, RowMatrix grad_pre) {
  GradientBundle g = GradientBundle::zeros(params);
  const int iterations = static_cast<int>(tape.mixed.size());
  for (int t = iterations; t >= 1; --t) {
    const RowMatrix& mixed = tape.mixed[static_cast<std::size_t>(t - 1)];
    const RowMatrix& q_prev = tape.q[static_cast<std::size_t>(t - 1)];
    g.d_logits += grad_pre;
    g.d_w_label.noalias() += grad_pre.transpose() * mixed;
    const RowMatrix grad_mixed = grad_pre * params.w_label;
    g.d_w_spatial.noalias() += grad_mixed * q_prev.transpose();
    const RowMatrix grad_q = params.w_spatial.transpose() * grad_mixed;
    grad_pre = softmax_backward(q_prev, grad_q);
  }
  g.d_logits += grad_pre;
  require(g.d_w_spatial.allFinite() && g.d_w_label.allFinite() && g.d_logits.allFinite(),
          ErrorCode::kNonFinite, "gradient through the unrolled iterations");
  return g;
}

// Mean cross-entropy over `rows` with targets, fused with the last softmax.
LossAndGrad cross_entropy(const MRFParams& params, const RowMatrix& f, int iterations,
                          const std::vector<int>& rows, const std::vector<Label>& targets) {
  const Tape tape = forward_tape(params, f, iterations);
  const RowMatrix& q = tape.q.back();
  RowMatrix grad_pre = RowMatrix::Zero(q.rows(), q.cols());
  const double scale = 1.0 / static_cast<double>(rows.size());
  double loss = 0.0;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const int i = rows[r];
    const int target = targets[r];
    const auto z = tape.final_pre.row(i);
    const double peak = z.maxCoeff();
    const double log_norm = peak + std::log((z.array() - peak).exp().sum());
    loss -= (z(target) - log_norm) * scale;
    grad_pre.row(i) = q.row(i) * scale;
    grad_pre(i, target) -= scale;
  }
  return {loss, backward_from_pre(params, tape, std::move(grad_pre))};
}

template <typename Fn>
LossAndGrad batch_mean(int batch, int threads, Fn&& per_example, const MRFParams& params) {
  std::vector<LossAndGrad> parts(static_cast<std::size_t>(batch));
  parallel_for(batch, threads, [&](int b) { parts[static_cast<std::size_t>(b)] = per_example(b); });
  LossAndGrad total{0.0, GradientBundle::zeros(params)};
  for (const auto& p : parts) {
    total.loss += p.loss;
    total.grads += p.grads;
  }
  total.loss /= batch;
  total.grads *= 1.0 / batch;
  return total;
}

double elapsed_ms(std::chrono::steady_clock::time_point since) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - since).count();
}

}  // namespace

void validate(const TrainConfig& c) {
  require(c.learning_rate > 0, ErrorCode::kInvalidArgument, "learning_rate must be positive");
  require(c.adam_beta1 > 0 && c.adam_beta1 < 1, ErrorCode::kInvalidArgument, "adam_beta1 not in (0,1)");
  require(c.adam_beta2 > 0 && c.adam_beta2 < 1, ErrorCode::kInvalidArgument, "adam_beta2 not in (0,1)");
  require(c.adam_epsilon > 0, ErrorCode::kInvalidArgument, "adam_epsilon must be positive");
  require(c.batch_size > 0, ErrorCode::kInvalidArgument, "batch_size must be positive");
  require(c.num_iterations_mf > 0, ErrorCode::kInvalidArgument, "num_iterations_mf must be positive");
  require(c.mask_fraction > 0 && c.mask_fraction < 1, ErrorCode::kInvalidArgument,
          "mask_fraction not in (0,1)");
  require(c.unary_strength_kappa > 0, ErrorCode::kInvalidArgument, "kappa must be positive");
  require(c.steps >= 0, ErrorCode::kInvalidArgument, "steps must be >= 0");
  require(c.threads >= 1, ErrorCode::kInvalidArgument, "threads must be >= 1");
}

GradientBundle GradientBundle::zeros(const MRFParams& params) {
  const int n = params.geometry.n();
  const int v = params.vocab.size;
  return {RowMatrix::Zero(n, n), RowMatrix::Zero(v, v), RowMatrix::Zero(n, v)};
}

GradientBundle& GradientBundle::operator+=(const GradientBundle& other) {
  d_w_spatial += other.d_w_spatial;
  d_w_label += other.d_w_label;
  d_logits += other.d_logits;
  return *this;
}

GradientBundle& GradientBundle::operator*=(double scale) {
  d_w_spatial *= scale;
  d_w_label *= scale;
  d_logits *= scale;
  return *this;
}

GradientBundle mean_field_backward(const MRFParams& params, const LogitField& logits,
                                   int num_iterations, const RowMatrix& loss_grad_on_q) {
  validate(params);
  validate(logits);
  require_same_shape(params, logits);
  require(loss_grad_on_q.rows() == logits.values.rows() && loss_grad_on_q.cols() == logits.values.cols(),
          ErrorCode::kDimensionMismatch, "loss gradient must be n x V");
  require(loss_grad_on_q.allFinite(), ErrorCode::kNonFinite, "loss gradient");
  const Tape tape = forward_tape(params, logits.values, num_iterations);
  return backward_from_pre(params, tape, softmax_backward(tape.q.back(), loss_grad_on_q));
}

LogitField observed_unaries(const MaskedTokenGrid& masked, double kappa) {
  validate(masked);
  LogitField f = LogitField::zeros(masked.grid.geometry, masked.grid.vocab);
  for (int i = 0; i < masked.grid.geometry.n(); ++i) {
    if (!masked.mask[static_cast<std::size_t>(i)]) f.values(i, masked.grid.labels[static_cast<std::size_t>(i)]) = kappa;
  }
  return f;
}

int masked_count(int n, double fraction) {
  return static_cast<int>(std::floor(fraction * n));
}

MaskedTokenGrid random_mask(const TokenGrid& grid, double fraction, std::mt19937_64& rng) {
  const int n = grid.geometry.n();
  const int count = masked_count(n, fraction);
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  // Partial Fisher-Yates: the first `count` entries are a uniform sample.
  for (int k = 0; k < count; ++k) {
    std::uniform_int_distribution<int> pick(k, n - 1);
    std::swap(order[static_cast<std::size_t>(k)], order[static_cast<std::size_t>(pick(rng))]);
  }
  MaskedTokenGrid masked{grid, std::vector<bool>(static_cast<std::size_t>(n), false)};
  for (int k = 0; k < count; ++k) masked.mask[static_cast<std::size_t>(order[static_cast<std::size_t>(k)])] = true;
  return masked;
}

LossAndGrad pretrain_loss(const MRFParams& params, const MaskedTokenGrid& masked,
                          const TrainConfig& config) {
  validate(masked);
  require(masked.grid.geometry == params.geometry && masked.grid.vocab == params.vocab,
          ErrorCode::kDimensionMismatch, "masked grid disagrees with MRF geometry or vocab");
  std::vector<int> rows;
  std::vector<Label> targets;
  for (int i = 0; i < params.geometry.n(); ++i) {
    if (masked.mask[static_cast<std::size_t>(i)]) {
      rows.push_back(i);
      targets.push_back(masked.grid.labels[static_cast<std::size_t>(i)]);
    }
  }
  require(!rows.empty(), ErrorCode::kInvalidArgument, "no masked positions: loss undefined");
  const LogitField f = observed_unaries(masked, config.unary_strength_kappa);
  return cross_entropy(params, f.values, config.num_iterations_mf, rows, targets);
}

LossAndGrad distill_loss(const MRFParams& params, const LogitField& mrf_input,
                         const TokenGrid& teacher_final, const TrainConfig& config) {
  validate(params);
  validate(mrf_input);
  validate(teacher_final);
  require_same_shape(params, mrf_input);
  require(teacher_final.geometry == params.geometry && teacher_final.vocab == params.vocab,
          ErrorCode::kDimensionMismatch, "teacher output disagrees with MRF geometry or vocab");
  std::vector<int> rows(static_cast<std::size_t>(params.geometry.n()));
  std::iota(rows.begin(), rows.end(), 0);
  return cross_entropy(params, mrf_input.values, config.num_iterations_mf, rows, teacher_final.labels);
}

AdamState AdamState::zeros_like(const MRFParams& params) {
  const int n = params.geometry.n();
  const int v = params.vocab.size;
  return {RowMatrix::Zero(n, n), RowMatrix::Zero(n, n), RowMatrix::Zero(v, v), RowMatrix::Zero(v, v), 0};
}

std::pair<MRFParams, AdamState> adam_step(const MRFParams& params, const GradientBundle& grads,
                                          const AdamState& state, const TrainConfig& config) {
  require(state.m_spatial.rows() == params.w_spatial.rows() &&
              state.m_label.rows() == params.w_label.rows() &&
              grads.d_w_spatial.rows() == params.w_spatial.rows() &&
              grads.d_w_label.rows() == params.w_label.rows(),
          ErrorCode::kDimensionMismatch, "optimizer state or gradients do not match parameters");
  AdamState next = state;
  next.step = state.step + 1;
  const double b1 = config.adam_beta1;
  const double b2 = config.adam_beta2;
  const double correct1 = 1.0 - std::pow(b1, static_cast<double>(next.step));
  const double correct2 = 1.0 - std::pow(b2, static_cast<double>(next.step));

  auto update = [&](const RowMatrix& w, const RowMatrix& g, RowMatrix& m, RowMatrix& v) {
    m = b1 * m + (1.0 - b1) * g;
    v = b2 * v + (1.0 - b2) * g.cwiseProduct(g);
    const auto m_hat = m.array() / correct1;
    const auto v_hat = v.array() / correct2;
    RowMatrix out = (w.array() - config.learning_rate * m_hat / (v_hat.sqrt() + config.adam_epsilon)).matrix();
    require(out.allFinite(), ErrorCode::kNonFinite, "ADAM update");
    return out;
  };

  MRFParams out = params;
  out.w_spatial = update(params.w_spatial, grads.d_w_spatial, next.m_spatial, next.v_spatial);
  out.w_label = update(params.w_label, grads.d_w_label, next.m_label, next.v_label);
  return {std::move(out), std::move(next)};
}

MRFParams init_params(GridGeometry geometry, VocabSpec vocab, std::uint64_t seed) {
  validate(geometry);
  validate(vocab);
  MRFParams params = MRFParams::zeros(geometry, vocab);
  params.w_label = RowMatrix::Identity(vocab.size, vocab.size) * 0.1;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 0.01);
  for (int i = 0; i < geometry.n(); ++i) {
    for (int j = 0; j < geometry.n(); ++j) {
      params.w_spatial(i, j) = i == j ? 0.0 : normal(rng);
    }
  }
  return params;
}

std::string_view to_string(Stage stage) {
  return stage == Stage::kPretrain ? "pretrain" : "distill";
}

std::string format_metrics_line(const MetricsRecord& r) {
  std::ostringstream line;
  line.precision(9);
  line << r.step << '\t' << to_string(r.stage) << '\t' << r.loss << '\t';
  line.precision(6);
  line << std::fixed << r.wallclock_ms;
  return line.str();
}

MRFParams train_pretrain(const MRFParams& init, std::span<const TokenGrid> corpus,
                         const TrainConfig& config, const MetricsSink& sink) {
  validate(config);
  validate(init);
  require(!corpus.empty(), ErrorCode::kInvalidArgument, "empty corpus");
  require(masked_count(init.geometry.n(), config.mask_fraction) > 0, ErrorCode::kInvalidArgument,
          "mask_fraction masks no position on this grid");
  const auto start = std::chrono::steady_clock::now();
  std::mt19937_64 rng(config.seed);
  std::uniform_int_distribution<std::size_t> pick(0, corpus.size() - 1);
  MRFParams params = init;
  AdamState state = AdamState::zeros_like(params);
  for (int step = 1; step <= config.steps; ++step) {
    std::vector<MaskedTokenGrid> batch;
    batch.reserve(static_cast<std::size_t>(config.batch_size));
    for (int b = 0; b < config.batch_size; ++b) {
      batch.push_back(random_mask(corpus[pick(rng)], config.mask_fraction, rng));
    }
    const LossAndGrad lg = batch_mean(
        config.batch_size, config.threads,
        [&](int b) { return pretrain_loss(params, batch[static_cast<std::size_t>(b)], config); }, params);
    std::tie(params, state) = adam_step(params, lg.grads, state, config);
    if (sink) sink({step, Stage::kPretrain, lg.loss, elapsed_ms(start)});
  }
  return params;
}

MRFParams train_distill(const MRFParams& init, std::span<const DistillExample> examples,
                        const TrainConfig& config, const MetricsSink& sink) {
  validate(config);
  validate(init);
  require(!examples.empty(), ErrorCode::kInvalidArgument, "empty distillation set");
  const auto start = std::chrono::steady_clock::now();
  std::mt19937_64 rng(config.seed);
  std::uniform_int_distribution<std::size_t> pick(0, examples.size() - 1);
  MRFParams params = init;
  AdamState state = AdamState::zeros_like(params);
  for (int step = 1; step <= config.steps; ++step) {
    std::vector<std::size_t> batch(static_cast<std::size_t>(config.batch_size));
    for (auto& idx : batch) idx = pick(rng);
    const LossAndGrad lg = batch_mean(
        config.batch_size, config.threads,
        [&](int b) {
          const auto& ex = examples[batch[static_cast<std::size_t>(b)]];
          return distill_loss(params, ex.mrf_input, ex.target, config);
        },
        params);
    std::tie(params, state) = adam_step(params, lg.grads, state, config);
    if (sink) sink({step, Stage::kDistill, lg.loss, elapsed_ms(start)});
  }
  return params;
}

double masked_accuracy(const MRFParams& params, std::span<const TokenGrid> grids,
                       const TrainConfig& config, int repeats, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  long hits = 0;
  long total = 0;
  for (const auto& grid : grids) {
    for (int r = 0; r < repeats; ++r) {
      const MaskedTokenGrid masked = random_mask(grid, config.mask_fraction, rng);
      const LogitField f = observed_unaries(masked, config.unary_strength_kappa);
      const TokenGrid decoded = map_decode(mean_field_infer(params, f, config.num_iterations_mf));
      for (std::size_t i = 0; i < masked.mask.size(); ++i) {
        if (!masked.mask[i]) continue;
        ++total;
        hits += decoded.labels[i] == grid.labels[i] ? 1 : 0;
      }
    }
  }
  require(total > 0, ErrorCode::kInvalidArgument, "no masked positions to score");
  return static_cast<double>(hits) / static_cast<double>(total);
}

}  // namespace markovgen
