#pragma once

// Desk-scale masked-token predictor used as the iterative decoder.
//
// Architecture: token + position + condition embeddings (width D), then
// `blocks` residual blocks of
//
//   h <- h + W_out relu(W_in im2col3x3(LayerNorm(h)) + b_in) + b_out
//
// and a LayerNorm + linear head to V logits. Each block sees the 3x3
// neighbourhood of the previous one, so the receptive field grows by one
// cell per block. Runs in float32.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "markovgen/tensor_io.hpp"
#include "markovgen/types.hpp"

namespace markovgen {

struct LabeledGrid {
  TokenGrid grid;
  int condition = 0;
};

// Called after every optimizer step with the minibatch loss.
using TeacherProgress = std::function<void(int step, double loss, double wallclock_ms)>;

struct TeacherConfig {
  int embed_dim = 128;
  int hidden_dim = 384;
  int blocks = 3;
  double learning_rate = 2e-3;
  int batch_size = 16;
  int steps = 2000;
  std::uint64_t seed = 0;
};

void validate(const TeacherConfig& config);

class TeacherModel {
 public:
  using Matrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

  // Random initialization.
  TeacherModel(GridGeometry geometry, VocabSpec vocab, int condition_count,
               const TeacherConfig& config);

  const GridGeometry& geometry() const { return geometry_; }
  const VocabSpec& vocab() const { return vocab_; }
  int condition_count() const { return condition_count_; }
  int embed_dim() const { return embed_dim_; }
  int hidden_dim() const { return hidden_dim_; }
  int blocks() const { return static_cast<int>(weights_.blocks.size()); }
  std::size_t parameter_count() const;

  // Logits for every position, masked or not. Deterministic. Throws
  // kInvalidArgument for an unknown condition.
  LogitField predict_logits(const MaskedTokenGrid& masked, int condition) const;

  TensorFile to_tensor_file() const;
  static TeacherModel from_tensor_file(const TensorFile& file);

  friend TeacherModel train_teacher(std::span<const LabeledGrid> corpus, int condition_count,
                                    const TeacherConfig& config, const TeacherProgress& progress);

 private:
  struct Block {
    Matrix ln_gamma, ln_beta;  // 1 x D
    Matrix w_in, b_in;         // 9D x E, 1 x E
    Matrix w_out, b_out;       // E x D, 1 x D
  };
  struct Weights {
    Matrix token_embed;      // (V + 1) x D, row V is the mask token
    Matrix position_embed;   // n x D
    Matrix condition_embed;  // C x D
    std::vector<Block> blocks;
    Matrix final_gamma, final_beta;  // 1 x D
    Matrix head, head_bias;          // D x V, 1 x V

    // Every parameter matrix with its serialization name, in a fixed order.
    std::vector<std::pair<std::string, Matrix*>> entries();
    Weights zeros_like() const;
  };
  struct Activations;

  TeacherModel() = default;

  // `tokens` holds B*n entries with V for masked positions.
  Matrix forward(std::span<const int> tokens, std::span<const int> conditions, Activations* keep) const;
  void backward(const Activations& acts, std::span<const int> tokens, std::span<const int> conditions,
                const Matrix& grad_logits, Weights& grads) const;
  void im2col(const Matrix& x, int batch, Matrix& cols) const;
  void col2im_add(const Matrix& cols, int batch, Matrix& x) const;

  GridGeometry geometry_;
  VocabSpec vocab_;
  int condition_count_ = 0;
  int embed_dim_ = 0;
  int hidden_dim_ = 0;
  Weights weights_;
};

// Masked-token cross-entropy with a per-example mask ratio cos(pi/2 * u),
// u ~ U(0, 1). Throws kInvalidArgument on an empty corpus.
TeacherModel train_teacher(std::span<const LabeledGrid> corpus, int condition_count,
                           const TeacherConfig& config, const TeacherProgress& progress = {});

// Argmax accuracy at masked positions for random masks of `mask_fraction`.
// condition_offset shifts every condition (mod condition_count), for
// checking that predictions actually depend on the condition.
double teacher_masked_accuracy(const TeacherModel& model, std::span<const LabeledGrid> grids,
                               double mask_fraction, std::uint64_t seed, int condition_offset = 0);

void save_teacher(const std::filesystem::path& path, const TeacherModel& model);
TeacherModel load_teacher(const std::filesystem::path& path);

}  // namespace markovgen
