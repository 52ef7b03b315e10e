#include "markovgen/teacher.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>

#include "markovgen/error.hpp"
#include "markovgen/train.hpp"

namespace markovgen {
namespace {

using Matrix = TeacherModel::Matrix;
using Vector = Eigen::VectorXf;

constexpr float kLayerNormEps = 1e-5f;
constexpr int kNeighbourhood = 9;

Matrix normal_matrix(Eigen::Index rows, Eigen::Index cols, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<float> normal(0.0f, static_cast<float>(stddev));
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng);
  return m;
}

void layer_norm(const Matrix& x, const Matrix& gamma, const Matrix& beta, Matrix& y, Matrix* xhat,
                Vector* rstd) {
  const auto d = static_cast<float>(x.cols());
  y.resize(x.rows(), x.cols());
  if (xhat) xhat->resize(x.rows(), x.cols());
  if (rstd) rstd->resize(x.rows());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const float mean = x.row(r).sum() / d;
    const float var = (x.row(r).array() - mean).square().sum() / d;
    const float rs = 1.0f / std::sqrt(var + kLayerNormEps);
    const auto normed = (x.row(r).array() - mean) * rs;
    y.row(r) = (normed * gamma.array() + beta.array()).matrix();
    if (xhat) xhat->row(r) = normed.matrix();
    if (rstd) (*rstd)(r) = rs;
  }
}

// Adds d(loss)/dx to `dx`; accumulates gamma/beta gradients.
void layer_norm_backward(const Matrix& dy, const Matrix& xhat, const Vector& rstd, const Matrix& gamma,
                         Matrix& dx, Matrix& dgamma, Matrix& dbeta) {
  dgamma += (dy.array() * xhat.array()).colwise().sum().matrix();
  dbeta += dy.colwise().sum();
  const auto d = static_cast<float>(dy.cols());
  for (Eigen::Index r = 0; r < dy.rows(); ++r) {
    const Eigen::RowVectorXf dxhat = (dy.row(r).array() * gamma.array()).matrix();
    const float mean1 = dxhat.sum() / d;
    const float mean2 = (dxhat.array() * xhat.row(r).array()).sum() / d;
    dx.row(r) += (rstd(r) * (dxhat.array() - mean1 - xhat.row(r).array() * mean2)).matrix();
  }
}

}  // namespace

struct TeacherModel::Activations {
  int batch = 0;
  std::vector<Matrix> ln_xhat;
  std::vector<Vector> ln_rstd;
  std::vector<Matrix> cols;
  std::vector<Matrix> pre;
  std::vector<Matrix> hidden;
  Matrix final_xhat;
  Vector final_rstd;
  Matrix final_out;
};

std::vector<std::pair<std::string, Matrix*>> TeacherModel::Weights::entries() {
  std::vector<std::pair<std::string, Matrix*>> out = {
      {"token_embed", &token_embed},
      {"position_embed", &position_embed},
      {"condition_embed", &condition_embed},
  };
  for (std::size_t l = 0; l < blocks.size(); ++l) {
    const std::string prefix = "block" + std::to_string(l) + "/";
    auto& b = blocks[l];
    out.emplace_back(prefix + "ln_gamma", &b.ln_gamma);
    out.emplace_back(prefix + "ln_beta", &b.ln_beta);
    out.emplace_back(prefix + "w_in", &b.w_in);
    out.emplace_back(prefix + "b_in", &b.b_in);
    out.emplace_back(prefix + "w_out", &b.w_out);
    out.emplace_back(prefix + "b_out", &b.b_out);
  }
  out.emplace_back("final_gamma", &final_gamma);
  out.emplace_back("final_beta", &final_beta);
  out.emplace_back("head", &head);
  out.emplace_back("head_bias", &head_bias);
  return out;
}

TeacherModel::Weights TeacherModel::Weights::zeros_like() const {
  Weights z = *this;
  for (auto& [name, m] : z.entries()) m->setZero();
  return z;
}

void validate(const TeacherConfig& c) {
  require(c.embed_dim > 0 && c.hidden_dim > 0 && c.blocks >= 0, ErrorCode::kInvalidArgument,
          "teacher dimensions must be positive");
  require(c.learning_rate > 0, ErrorCode::kInvalidArgument, "teacher learning_rate must be positive");
  require(c.batch_size > 0, ErrorCode::kInvalidArgument, "teacher batch_size must be positive");
  require(c.steps >= 0, ErrorCode::kInvalidArgument, "teacher steps must be >= 0");
}

TeacherModel::TeacherModel(GridGeometry geometry, VocabSpec vocab, int condition_count,
                           const TeacherConfig& config)
    : geometry_(geometry),
      vocab_(vocab),
      condition_count_(condition_count),
      embed_dim_(config.embed_dim),
      hidden_dim_(config.hidden_dim) {
  validate(geometry);
  validate(vocab);
  validate(config);
  require(condition_count > 0, ErrorCode::kInvalidArgument, "condition_count must be positive");
  std::mt19937_64 rng(config.seed);
  const int d = embed_dim_;
  const int e = hidden_dim_;
  weights_.token_embed = normal_matrix(vocab.size + 1, d, 0.02, rng);
  weights_.position_embed = normal_matrix(geometry.n(), d, 0.02, rng);
  weights_.condition_embed = normal_matrix(condition_count, d, 0.02, rng);
  for (int l = 0; l < config.blocks; ++l) {
    Block b;
    b.ln_gamma = Matrix::Ones(1, d);
    b.ln_beta = Matrix::Zero(1, d);
    b.w_in = normal_matrix(kNeighbourhood * d, e, std::sqrt(2.0 / (kNeighbourhood * d)), rng);
    b.b_in = Matrix::Zero(1, e);
    b.w_out = normal_matrix(e, d, 0.02, rng);
    b.b_out = Matrix::Zero(1, d);
    weights_.blocks.push_back(std::move(b));
  }
  weights_.final_gamma = Matrix::Ones(1, d);
  weights_.final_beta = Matrix::Zero(1, d);
  weights_.head = normal_matrix(d, vocab.size, 0.02, rng);
  weights_.head_bias = Matrix::Zero(1, vocab.size);
}

std::size_t TeacherModel::parameter_count() const {
  std::size_t total = 0;
  for (const auto& [name, m] : const_cast<Weights&>(weights_).entries()) {
    total += static_cast<std::size_t>(m->size());
  }
  return total;
}

void TeacherModel::im2col(const Matrix& x, int batch, Matrix& cols) const {
  const int n = geometry_.n();
  const int d = embed_dim_;
  cols.setZero(static_cast<Eigen::Index>(batch) * n, kNeighbourhood * d);
  for (int b = 0; b < batch; ++b) {
    for (int p = 0; p < n; ++p) {
      const int row = p / geometry_.width;
      const int col = p % geometry_.width;
      const Eigen::Index out = static_cast<Eigen::Index>(b) * n + p;
      for (int dr = -1; dr <= 1; ++dr) {
        for (int dc = -1; dc <= 1; ++dc) {
          const int r2 = row + dr;
          const int c2 = col + dc;
          if (r2 < 0 || r2 >= geometry_.height || c2 < 0 || c2 >= geometry_.width) continue;
          const int slot = (dr + 1) * 3 + (dc + 1);
          cols.block(out, slot * d, 1, d) = x.row(static_cast<Eigen::Index>(b) * n + r2 * geometry_.width + c2);
        }
      }
    }
  }
}

void TeacherModel::col2im_add(const Matrix& cols, int batch, Matrix& x) const {
  const int n = geometry_.n();
  const int d = embed_dim_;
  for (int b = 0; b < batch; ++b) {
    for (int p = 0; p < n; ++p) {
      const int row = p / geometry_.width;
      const int col = p % geometry_.width;
      const Eigen::Index src = static_cast<Eigen::Index>(b) * n + p;
      for (int dr = -1; dr <= 1; ++dr) {
        for (int dc = -1; dc <= 1; ++dc) {
          const int r2 = row + dr;
          const int c2 = col + dc;
          if (r2 < 0 || r2 >= geometry_.height || c2 < 0 || c2 >= geometry_.width) continue;
          const int slot = (dr + 1) * 3 + (dc + 1);
          x.row(static_cast<Eigen::Index>(b) * n + r2 * geometry_.width + c2) += cols.block(src, slot * d, 1, d);
        }
      }
    }
  }
}

Matrix TeacherModel::forward(std::span<const int> tokens, std::span<const int> conditions,
                             Activations* keep) const {
  const int n = geometry_.n();
  const int batch = static_cast<int>(conditions.size());
  const Eigen::Index rows = static_cast<Eigen::Index>(batch) * n;
  Matrix h(rows, embed_dim_);
  for (Eigen::Index r = 0; r < rows; ++r) {
    h.row(r) = weights_.token_embed.row(tokens[static_cast<std::size_t>(r)]) +
               weights_.position_embed.row(r % n) +
               weights_.condition_embed.row(conditions[static_cast<std::size_t>(r / n)]);
  }
  if (keep) keep->batch = batch;

  Matrix normed, cols, pre, hidden;
  for (const auto& block : weights_.blocks) {
    Matrix xhat;
    Vector rstd;
    layer_norm(h, block.ln_gamma, block.ln_beta, normed, keep ? &xhat : nullptr, keep ? &rstd : nullptr);
    im2col(normed, batch, cols);
    pre.noalias() = cols * block.w_in;
    pre.rowwise() += block.b_in.row(0);
    hidden = pre.cwiseMax(0.0f);
    h.noalias() += hidden * block.w_out;
    h.rowwise() += block.b_out.row(0);
    if (keep) {
      keep->ln_xhat.push_back(std::move(xhat));
      keep->ln_rstd.push_back(std::move(rstd));
      keep->cols.push_back(cols);
      keep->pre.push_back(pre);
      keep->hidden.push_back(hidden);
    }
  }
  Matrix out;
  layer_norm(h, weights_.final_gamma, weights_.final_beta, out, keep ? &keep->final_xhat : nullptr,
             keep ? &keep->final_rstd : nullptr);
  Matrix logits = out * weights_.head;
  logits.rowwise() += weights_.head_bias.row(0);
  if (keep) keep->final_out = std::move(out);
  return logits;
}

void TeacherModel::backward(const Activations& acts, std::span<const int> tokens,
                            std::span<const int> conditions, const Matrix& grad_logits,
                            Weights& grads) const {
  const int n = geometry_.n();
  const Eigen::Index rows = grad_logits.rows();
  grads.head.noalias() += acts.final_out.transpose() * grad_logits;
  grads.head_bias += grad_logits.colwise().sum();
  const Matrix grad_out = grad_logits * weights_.head.transpose();
  Matrix grad_h = Matrix::Zero(rows, embed_dim_);
  layer_norm_backward(grad_out, acts.final_xhat, acts.final_rstd, weights_.final_gamma, grad_h,
                      grads.final_gamma, grads.final_beta);

  for (int l = static_cast<int>(weights_.blocks.size()) - 1; l >= 0; --l) {
    const auto idx = static_cast<std::size_t>(l);
    const Block& block = weights_.blocks[idx];
    Block& g = grads.blocks[idx];
    g.w_out.noalias() += acts.hidden[idx].transpose() * grad_h;
    g.b_out += grad_h.colwise().sum();
    Matrix grad_pre = grad_h * block.w_out.transpose();
    grad_pre = (acts.pre[idx].array() > 0.0f).select(grad_pre, 0.0f);
    g.w_in.noalias() += acts.cols[idx].transpose() * grad_pre;
    g.b_in += grad_pre.colwise().sum();
    const Matrix grad_cols = grad_pre * block.w_in.transpose();
    Matrix grad_normed = Matrix::Zero(rows, embed_dim_);
    col2im_add(grad_cols, acts.batch, grad_normed);
    layer_norm_backward(grad_normed, acts.ln_xhat[idx], acts.ln_rstd[idx], block.ln_gamma, grad_h,
                        g.ln_gamma, g.ln_beta);
  }
  for (Eigen::Index r = 0; r < rows; ++r) {
    grads.token_embed.row(tokens[static_cast<std::size_t>(r)]) += grad_h.row(r);
    grads.position_embed.row(r % n) += grad_h.row(r);
    grads.condition_embed.row(conditions[static_cast<std::size_t>(r / n)]) += grad_h.row(r);
  }
}

LogitField TeacherModel::predict_logits(const MaskedTokenGrid& masked, int condition) const {
  validate(masked);
  require(masked.grid.geometry == geometry_ && masked.grid.vocab == vocab_, ErrorCode::kDimensionMismatch,
          "grid disagrees with teacher geometry or vocab");
  require(condition >= 0 && condition < condition_count_, ErrorCode::kInvalidArgument,
          "unknown condition label " + std::to_string(condition));
  const int n = geometry_.n();
  std::vector<int> tokens(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const auto k = static_cast<std::size_t>(i);
    tokens[k] = masked.mask[k] ? vocab_.size : masked.grid.labels[k];
  }
  const int conditions[1] = {condition};
  const Matrix logits = forward(tokens, conditions, nullptr);
  return {geometry_, vocab_, logits.cast<double>()};
}

TensorFile TeacherModel::to_tensor_file() const {
  TensorFile file;
  const std::vector<Label> shape = {
      static_cast<Label>(geometry_.height), static_cast<Label>(geometry_.width),
      static_cast<Label>(vocab_.size - 1),  static_cast<Label>(condition_count_),
      static_cast<Label>(embed_dim_),       static_cast<Label>(hidden_dim_),
      static_cast<Label>(blocks())};
  file.add(label_tensor("meta/shape", {static_cast<std::uint32_t>(shape.size())}, shape));
  for (const auto& [name, m] : const_cast<Weights&>(weights_).entries()) {
    std::vector<float> data(m->data(), m->data() + m->size());
    file.add(Tensor{name, {static_cast<std::uint32_t>(m->rows()), static_cast<std::uint32_t>(m->cols())},
                    std::move(data)});
  }
  return file;
}

TeacherModel TeacherModel::from_tensor_file(const TensorFile& file) {
  const auto& shape = file.get("meta/shape").u16();
  require(shape.size() == 7, ErrorCode::kMalformedFile, "teacher meta/shape must hold 7 values");
  TeacherConfig config;
  config.embed_dim = shape[4];
  config.hidden_dim = shape[5];
  config.blocks = shape[6];
  TeacherModel model({shape[0], shape[1]}, {shape[2] + 1}, shape[3], config);
  for (auto& [name, m] : model.weights_.entries()) {
    const Tensor& t = file.get(name);
    const auto& values = t.floats();
    require(t.dims.size() == 2 && t.dims[0] == m->rows() && t.dims[1] == m->cols(), ErrorCode::kMalformedFile,
            "teacher tensor '" + name + "' has the wrong shape");
    std::copy(values.begin(), values.end(), m->data());
  }
  return model;
}

TeacherModel train_teacher(std::span<const LabeledGrid> corpus, int condition_count,
                           const TeacherConfig& config, const TeacherProgress& progress) {
  require(!corpus.empty(), ErrorCode::kInvalidArgument, "empty corpus");
  const GridGeometry geometry = corpus.front().grid.geometry;
  const VocabSpec vocab = corpus.front().grid.vocab;
  for (const auto& item : corpus) {
    validate(item.grid);
    require(item.grid.geometry == geometry && item.grid.vocab == vocab, ErrorCode::kDimensionMismatch,
            "corpus grids differ in geometry or vocab");
    require(item.condition >= 0 && item.condition < condition_count, ErrorCode::kInvalidArgument,
            "condition label out of range");
  }
  TeacherModel model(geometry, vocab, condition_count, config);
  const auto start = std::chrono::steady_clock::now();
  const int n = geometry.n();
  const int batch = config.batch_size;
  std::mt19937_64 rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
  std::uniform_int_distribution<std::size_t> pick(0, corpus.size() - 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  TeacherModel::Weights m1 = model.weights_.zeros_like();
  TeacherModel::Weights m2 = model.weights_.zeros_like();
  constexpr float kBeta1 = 0.9f;
  constexpr float kBeta2 = 0.999f;
  constexpr double kEps = 1e-8;

  std::vector<int> tokens(static_cast<std::size_t>(batch) * n);
  std::vector<int> conditions(static_cast<std::size_t>(batch));
  std::vector<int> targets(static_cast<std::size_t>(batch) * n);
  std::vector<char> is_masked(static_cast<std::size_t>(batch) * n);
  std::vector<int> order(static_cast<std::size_t>(n));

  for (int step = 1; step <= config.steps; ++step) {
    int masked_total = 0;
    for (int b = 0; b < batch; ++b) {
      const auto& item = corpus[pick(rng)];
      conditions[static_cast<std::size_t>(b)] = item.condition;
      const double ratio = std::cos(std::numbers::pi / 2.0 * unit(rng));
      const int count = std::clamp(static_cast<int>(std::ceil(ratio * n)), 1, n);
      std::iota(order.begin(), order.end(), 0);
      for (int k = 0; k < count; ++k) {
        std::uniform_int_distribution<int> swap_with(k, n - 1);
        std::swap(order[static_cast<std::size_t>(k)], order[static_cast<std::size_t>(swap_with(rng))]);
      }
      const auto base = static_cast<std::size_t>(b) * n;
      std::fill(is_masked.begin() + static_cast<long>(base), is_masked.begin() + static_cast<long>(base) + n, 0);
      for (int k = 0; k < count; ++k) is_masked[base + static_cast<std::size_t>(order[static_cast<std::size_t>(k)])] = 1;
      for (int i = 0; i < n; ++i) {
        const auto r = base + static_cast<std::size_t>(i);
        targets[r] = item.grid.labels[static_cast<std::size_t>(i)];
        tokens[r] = is_masked[r] ? vocab.size : targets[r];
      }
      masked_total += count;
    }

    TeacherModel::Activations acts;
    const TeacherModel::Matrix logits = model.forward(tokens, conditions, &acts);
    TeacherModel::Matrix grad = Matrix::Zero(logits.rows(), logits.cols());
    double loss = 0.0;
    const float scale = 1.0f / static_cast<float>(masked_total);
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
      if (!is_masked[static_cast<std::size_t>(r)]) continue;
      const auto z = logits.row(r);
      const float peak = z.maxCoeff();
      Eigen::RowVectorXf p = (z.array() - peak).exp().matrix();
      const float norm = p.sum();
      p /= norm;
      const int t = targets[static_cast<std::size_t>(r)];
      loss -= static_cast<double>(z(t) - peak - std::log(norm));
      grad.row(r) = p * scale;
      grad(r, t) -= scale;
    }
    loss /= masked_total;

    TeacherModel::Weights grads = model.weights_.zeros_like();
    model.backward(acts, tokens, conditions, grad, grads);

    const double c1 = 1.0 - std::pow(static_cast<double>(kBeta1), step);
    const double c2 = 1.0 - std::pow(static_cast<double>(kBeta2), step);
    const float step_size = static_cast<float>(config.learning_rate * std::sqrt(c2) / c1);
    auto w_entries = model.weights_.entries();
    auto g_entries = grads.entries();
    auto m_entries = m1.entries();
    auto v_entries = m2.entries();
    for (std::size_t k = 0; k < w_entries.size(); ++k) {
      auto& w = *w_entries[k].second;
      const auto& g = *g_entries[k].second;
      auto& m = *m_entries[k].second;
      auto& v = *v_entries[k].second;
      m = kBeta1 * m + (1.0f - kBeta1) * g;
      v = kBeta2 * v + (1.0f - kBeta2) * g.cwiseProduct(g);
      w.array() -= step_size * m.array() / (v.array().sqrt() + static_cast<float>(kEps));
    }
    require(std::isfinite(loss), ErrorCode::kNonFinite, "teacher training loss");
    if (progress) {
      progress(step, loss,
               std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count());
    }
  }
  return model;
}

double teacher_masked_accuracy(const TeacherModel& model, std::span<const LabeledGrid> grids,
                               double mask_fraction, std::uint64_t seed, int condition_offset) {
  std::mt19937_64 rng(seed);
  long hits = 0;
  long total = 0;
  for (const auto& item : grids) {
    const MaskedTokenGrid masked = random_mask(item.grid, mask_fraction, rng);
    const int condition = (item.condition + condition_offset) % model.condition_count();
    const LogitField logits = model.predict_logits(masked, condition);
    for (int i = 0; i < item.grid.geometry.n(); ++i) {
      if (!masked.mask[static_cast<std::size_t>(i)]) continue;
      Eigen::Index best = 0;
      logits.values.row(i).maxCoeff(&best);
      hits += best == item.grid.labels[static_cast<std::size_t>(i)] ? 1 : 0;
      ++total;
    }
  }
  require(total > 0, ErrorCode::kInvalidArgument, "no masked positions to score");
  return static_cast<double>(hits) / static_cast<double>(total);
}

void save_teacher(const std::filesystem::path& path, const TeacherModel& model) {
  write_tensor_file(path, model.to_tensor_file());
}

TeacherModel load_teacher(const std::filesystem::path& path) {
  return TeacherModel::from_tensor_file(read_tensor_file(path));
}

}  // namespace markovgen
