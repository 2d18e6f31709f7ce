#include "rankmerge/optimizer.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "rankmerge/common.hpp"

namespace rankmerge {

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("train.epochs must be >= 1");
  if (!(lr0 > 0.0)) throw ConfigError("train.lr0 must be > 0");
  if (batch_size < 2) throw ConfigError("train.batch_size must be >= 2");
  if (classes_per_batch < 2 || classes_per_batch > batch_size) {
    throw ConfigError("train.classes_per_batch must lie in [2, batch_size]");
  }
  if (batch_size / classes_per_batch < 2) {
    throw ConfigError("train.batch_size / classes_per_batch must be >= 2 (positives per class)");
  }
  if (psi_blocks < 1 || psi_blocks > 5 || rho_blocks < 1 || rho_blocks > 5) {
    throw ConfigError("block counts must lie in [1, 5]");
  }
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0 && adam_beta2 >= 0.0 && adam_beta2 < 1.0 && adam_eps > 0.0)) {
    throw ConfigError("invalid Adam hyperparameters");
  }
  if (!(bn_momentum > 0.0 && bn_momentum <= 1.0 && bn_eps > 0.0)) {
    throw ConfigError("invalid BatchNorm hyperparameters");
  }
}

double cosine_lr(double lr0, std::size_t epoch, std::size_t epochs) {
  const double progress = static_cast<double>(epoch) / static_cast<double>(epochs);
  return lr0 * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

AdamState::AdamState(const MlpTransform& net)
    : m_(net.parameter_count(), 0.0), v_(net.parameter_count(), 0.0) {}

void adam_step(MlpTransform& net, const MlpGradients& grads, AdamState& state, double lr,
               const TrainConfig& config) {
  const std::vector<double> g = grads.flatten();
  if (g.size() != state.m_.size()) throw std::invalid_argument("adam_step: gradient shape mismatch");
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (!std::isfinite(g[i])) {
      throw NumericError("adam_step: non-finite gradient at parameter index " + std::to_string(i));
    }
  }
  ++state.steps_;
  const auto t = static_cast<double>(state.steps_);
  const double c1 = 1.0 - std::pow(config.adam_beta1, t);
  const double c2 = 1.0 - std::pow(config.adam_beta2, t);
  std::size_t i = 0;
  for (std::span<double> p : net.parameters()) {
    for (double& x : p) {
      double& m = state.m_[i];
      double& v = state.v_[i];
      m = config.adam_beta1 * m + (1.0 - config.adam_beta1) * g[i];
      v = config.adam_beta2 * v + (1.0 - config.adam_beta2) * g[i] * g[i];
      x -= lr * (m / c1) / (std::sqrt(v / c2) + config.adam_eps);
      ++i;
    }
  }
  net.mark_updated();
}

}  // namespace rankmerge
