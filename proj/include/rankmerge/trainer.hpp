#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <vector>

#include "rankmerge/embedding_store.hpp"
#include "rankmerge/losses.hpp"
#include "rankmerge/mlp.hpp"
#include "rankmerge/optimizer.hpp"

namespace rankmerge {

struct EpochLog {
  std::size_t epoch = 0;
  double mean_loss = 0.0;
  std::size_t skipped_anchors = 0;
  double lr = 0.0;
};

struct FitResult {
  MlpTransform psi;
  std::optional<MlpTransform> rho;
  std::vector<EpochLog> history;
};

/// Trains ψ (and ρ for cmcl_with_rho) with frozen old/new embeddings.
///
/// rqt uses shuffled minibatches of batch_size; the contrastive kinds draw
/// P classes × K instances per batch (P = classes_per_batch). Each epoch runs
/// max(1, n / batch_size) batches at the cosine-annealed learning rate for that
/// epoch. ψ is initialized from derive_seed(seed, 1) and ρ from
/// derive_seed(seed, 2), so every kind sharing a seed starts from the same ψ.
/// Returned networks are in eval mode. Throws NumericError on a non-finite loss.
FitResult fit(LossKind kind, const EmbeddingPairSet& train, const TrainConfig& config, DistanceKind dist);

/// Training log CSV: `epoch,mean_loss,skipped_anchors,lr`.
std::string training_log_csv(const std::vector<EpochLog>& history);

}  // namespace rankmerge
