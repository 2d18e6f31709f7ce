#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "rankmerge/common.hpp"
#include "rankmerge/mlp.hpp"
#include "rankmerge/retrieval.hpp"

namespace rankmerge {

enum class LossKind { rqt, cl, cl_m, cmcl, cmcl_with_rho };

LossKind parse_loss_kind(std::string_view name);
std::string_view to_string(LossKind kind);

/// The two retrieval systems scored during training: backward {rev, old} and new {new, new}.
enum class System { backward, fresh };

/// Distance between a and b and its gradient with respect to a.
/// Cosine: 1 − a·b/(|a||b|), taken as 1 with a zero gradient when either vector
/// is zero. L2: |a − b|, with a zero gradient at a == b.
double distance_with_grad(std::span<const double> a, std::span<const double> b, DistanceKind kind,
                          std::span<double> grad_a);

struct MinedSets {
  std::vector<std::size_t> positives;
  std::vector<std::size_t> negatives;
};

/// Hardest half of each side for one anchor: the ceil(P/2) farthest positives
/// and the ceil(N/2) nearest negatives, ties broken by smaller index. The
/// anchor itself is never a candidate. Returns nullopt when the anchor has no
/// positive, in which case it is skipped by the caller.
std::optional<MinedSets> mine_hard(std::size_t anchor, std::span<const double> distances_from_anchor,
                                   std::span<const Label> labels);

/// Per-anchor mined sets for both systems. Entries are nullopt for skipped anchors.
struct MiningPlan {
  std::vector<std::optional<MinedSets>> backward;
  std::vector<std::optional<MinedSets>> fresh;
};

/// Embedding-level view of one batch: rows are samples.
///   rev:   ψ(φ^new) or ψ(ρ(φ^new))       (trainable)
///   old:   φ^old                          (fixed)
///   fresh: φ^new or ρ(φ^new)              (trainable only under ρ)
struct EmbeddingBatch {
  const Matrix& rev;
  const Matrix& old;
  const Matrix& fresh;
  std::span<const Label> labels;
};

struct PairwiseDistances {
  Matrix backward;  // (i, j) = dist(rev_i, old_j)
  Matrix fresh;     // (i, j) = dist(fresh_i, fresh_j)
};

PairwiseDistances pairwise_distances(const EmbeddingBatch& batch, DistanceKind kind);
MiningPlan mine_batch(const PairwiseDistances& distances, std::span<const Label> labels);

struct EmbeddingLoss {
  double loss = 0.0;
  Matrix grad_rev;
  Matrix grad_fresh;
  std::size_t scored_anchors = 0;
  std::size_t skipped_anchors = 0;
};

struct LossOptions {
  /// CMCL only: include the other system's negatives in each denominator.
  /// Disabling it turns CMCL into CL-M; tests use this to check the reduction.
  bool cross_negatives = true;
};

/// Loss and gradients with respect to rev and fresh for a fixed mining plan.
/// Throws std::invalid_argument("degenerate batch") when every anchor is skipped.
EmbeddingLoss contrastive_loss(LossKind kind, const EmbeddingBatch& batch, DistanceKind dist,
                               const MiningPlan& plan, const LossOptions& options = {});

/// Same, reusing precomputed distances for `batch`.
EmbeddingLoss contrastive_loss(LossKind kind, const EmbeddingBatch& batch, const PairwiseDistances& distances,
                               DistanceKind dist, const MiningPlan& plan, const LossOptions& options = {});

/// mean_i dist(rev_i, old_i) and its gradient with respect to rev.
EmbeddingLoss alignment_loss(const Matrix& rev, const Matrix& old, DistanceKind dist);

/// Training batch in the models' own spaces.
struct ContrastiveBatch {
  Matrix old_embeddings;  // φ^old
  Matrix new_embeddings;  // φ^new
  std::vector<Label> labels;
};

struct LossResult {
  double loss = 0.0;
  MlpGradients psi;
  std::optional<MlpGradients> rho;
  std::size_t scored_anchors = 0;
  std::size_t skipped_anchors = 0;
};

/// Train-mode forward through ψ (and ρ), loss, and backward into both networks.
/// If `plan` is null the batch is mined from the current embeddings.
LossResult evaluate_loss(LossKind kind, MlpTransform& psi, MlpTransform* rho, const ContrastiveBatch& batch,
                         DistanceKind dist, const MiningPlan* plan = nullptr, const LossOptions& options = {});

/// Mining plan the network pair would produce for `batch` right now.
MiningPlan plan_for(LossKind kind, MlpTransform& psi, MlpTransform* rho, const ContrastiveBatch& batch,
                    DistanceKind dist);

inline LossResult loss_rqt(MlpTransform& psi, const ContrastiveBatch& batch, DistanceKind dist) {
  return evaluate_loss(LossKind::rqt, psi, nullptr, batch, dist);
}
inline LossResult loss_cl(MlpTransform& psi, const ContrastiveBatch& batch, DistanceKind dist) {
  return evaluate_loss(LossKind::cl, psi, nullptr, batch, dist);
}
inline LossResult loss_cl_m(MlpTransform& psi, MlpTransform* rho, const ContrastiveBatch& batch, DistanceKind dist) {
  return evaluate_loss(LossKind::cl_m, psi, rho, batch, dist);
}
inline LossResult loss_cmcl(MlpTransform& psi, MlpTransform* rho, const ContrastiveBatch& batch, DistanceKind dist) {
  return evaluate_loss(LossKind::cmcl, psi, rho, batch, dist);
}

}  // namespace rankmerge
