#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "rankmerge/embedding_store.hpp"

namespace rankmerge {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic>;

enum class Mode { train, eval };

/// Linear layer, optionally followed by BatchNorm and ReLU (every block but the last).
struct MlpBlock {
  Matrix weight;  // d_out × d_in
  RowVector bias;
  bool has_norm = false;
  RowVector gamma, beta, running_mean, running_var;

  std::size_t input_dim() const { return static_cast<std::size_t>(weight.cols()); }
  std::size_t output_dim() const { return static_cast<std::size_t>(weight.rows()); }
};

/// Trainable-parameter gradients of one block; gamma/beta are empty for the final block.
struct BlockGradients {
  Matrix weight;
  RowVector bias, gamma, beta;
};

struct MlpGradients {
  std::vector<BlockGradients> blocks;
  Matrix input;

  /// Same order as MlpTransform::parameters().
  std::vector<double> flatten() const;
};

struct BlockCache {
  Matrix input;
  Matrix normalized;  // x̂ after batch statistics
  RowVector inv_std;
  Matrix pre_activation;  // BatchNorm output, before ReLU
};

/// Activation record of one train-mode forward pass.
struct ForwardCache {
  std::uint64_t version = 0;
  bool from_train_mode = false;
  std::vector<BlockCache> blocks;
};

struct ForwardResult {
  Matrix output;
  ForwardCache cache;
};

struct MlpOptions {
  std::size_t input_dim = 0;
  std::size_t output_dim = 0;
  std::size_t num_blocks = 1;  // 1..5
  double bn_momentum = 0.1;
  double bn_eps = 1e-5;
  std::uint64_t seed = 0;
};

/// Small MLP used for the reverse query transform ψ and the new-side head ρ.
///
/// Hidden blocks have width max(d_in, d_out). Weights are drawn uniform(-a, a)
/// with a = sqrt(6 / (fan_in + fan_out)); biases and β start at 0, γ and the
/// running variance at 1.
class MlpTransform {
 public:
  explicit MlpTransform(const MlpOptions& options);
  MlpTransform(std::vector<MlpBlock> blocks, double bn_momentum, double bn_eps);

  /// Train mode normalizes with batch statistics (batch ≥ 2) and updates the
  /// running statistics; eval mode uses the running statistics.
  ForwardResult forward(const Matrix& batch);

  /// Eval-mode forward; never touches running statistics.
  Matrix infer(const Matrix& batch) const;

  /// Exact gradients for a train-mode cache produced by the current parameters.
  MlpGradients backward(const ForwardCache& cache, const Matrix& grad_output) const;

  /// Eval-mode transform of every row, stored as float.
  LabeledEmbeddings transform(const LabeledEmbeddings& set) const;

  void set_mode(Mode mode) { mode_ = mode; }
  Mode mode() const { return mode_; }

  std::size_t input_dim() const { return blocks_.front().input_dim(); }
  std::size_t output_dim() const { return blocks_.back().output_dim(); }
  std::size_t num_blocks() const { return blocks_.size(); }
  double bn_momentum() const { return bn_momentum_; }
  double bn_eps() const { return bn_eps_; }

  const std::vector<MlpBlock>& blocks() const { return blocks_; }
  std::vector<MlpBlock>& mutable_blocks() { return blocks_; }

  /// Views of W, b, γ, β per block in order. Writing through them must be
  /// followed by mark_updated().
  std::vector<std::span<double>> parameters();
  std::size_t parameter_count() const;

  /// Invalidates forward caches taken before this call.
  void mark_updated() { ++version_; }
  std::uint64_t version() const { return version_; }

 private:
  Matrix run(const Matrix& batch, bool use_batch_stats, ForwardCache* cache);

  std::vector<MlpBlock> blocks_;
  double bn_momentum_;
  double bn_eps_;
  Mode mode_ = Mode::train;
  std::uint64_t version_ = 0;
};

/// Rows of `set` as a double matrix.
Matrix to_matrix(const LabeledEmbeddings& set);

// Checkpoint layout, little-endian:
//   "BMCK" | u16 version=1 | f64 bn_momentum | f64 bn_eps | u32 num_blocks
//   | num_blocks × (u32 d_in | u32 d_out | u8 has_norm)
//   | per block: W (row-major f64) | b | [γ | β | running_mean | running_var]
void save_checkpoint(const MlpTransform& net, const std::filesystem::path& path);
MlpTransform load_checkpoint(const std::filesystem::path& path);

}  // namespace rankmerge
