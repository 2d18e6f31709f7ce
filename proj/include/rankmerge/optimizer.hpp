#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "rankmerge/mlp.hpp"

namespace rankmerge {

struct TrainConfig {
  std::size_t epochs = 50;
  double lr0 = 1e-4;
  std::size_t batch_size = 64;
  /// P in the P×K class-balanced sampler; K = batch_size / P.
  std::size_t classes_per_batch = 8;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double bn_momentum = 0.1;
  double bn_eps = 1e-5;
  std::size_t psi_blocks = 2;
  std::size_t rho_blocks = 2;
  std::uint64_t seed = 0;

  /// Throws ConfigError when an invariant is violated.
  void validate() const;
};

/// lr0 · ½(1 + cos(π·epoch/epochs)); reaches 0 at epoch == epochs.
double cosine_lr(double lr0, std::size_t epoch, std::size_t epochs);

/// First/second moment estimates shaped like the network's trainable parameters.
class AdamState {
 public:
  explicit AdamState(const MlpTransform& net);

  std::uint64_t steps_taken() const { return steps_; }
  const std::vector<double>& first_moment() const { return m_; }
  const std::vector<double>& second_moment() const { return v_; }

 private:
  friend void adam_step(MlpTransform&, const MlpGradients&, AdamState&, double, const TrainConfig&);
  std::vector<double> m_, v_;
  std::uint64_t steps_ = 0;
};

/// One bias-corrected Adam update at learning rate `lr`. Throws NumericError
/// (before touching any state) if a gradient is NaN or infinite.
void adam_step(MlpTransform& net, const MlpGradients& grads, AdamState& state, double lr,
               const TrainConfig& config);

}  // namespace rankmerge
