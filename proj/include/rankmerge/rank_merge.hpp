#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "rankmerge/common.hpp"
#include "rankmerge/embedding_store.hpp"
#include "rankmerge/metrics.hpp"
#include "rankmerge/mlp.hpp"
#include "rankmerge/retrieval.hpp"

namespace rankmerge {

/// round(t·n) with halves rounded up. Products within 1e-9 of a half-integer
/// count as halves so decimal inputs such as t = 0.35 behave as written.
std::size_t backfilled_count(double t, std::size_t n);

/// Backfill state of one logical gallery: the first `boundary` ids of `order`
/// carry new-model embeddings, the rest old-model ones. The order depends only
/// on (ids, seed), so partitions for growing t are nested.
struct GalleryPartition {
  std::vector<Id> order;
  double t = 0.0;
  std::size_t boundary = 0;

  std::span<const Id> new_ids() const { return std::span(order).first(boundary); }
  std::span<const Id> old_ids() const { return std::span(order).subspan(boundary); }
};

/// Throws std::invalid_argument if t ∉ [0, 1] or ids repeat.
GalleryPartition make_partition(std::span<const Id> gallery_ids, double t, std::uint64_t seed);

enum class Source : std::uint8_t { old_system, new_system };

struct MergedEntry {
  Id gallery_id;
  float distance;
  Source source;
  friend bool operator==(const MergedEntry&, const MergedEntry&) = default;
};

using MergedRanking = std::vector<MergedEntry>;

/// Sorted union by raw distance; on equal distance the new-system entry comes
/// first. Throws std::invalid_argument if the lists share an id.
MergedRanking merge(const RankedList& old_list, const RankedList& new_list);

/// Old system {φ^old, φ^old} over G_old merged with new system {φ^new, φ^new} over G_new.
MergedRanking query_merged(std::span<const float> query_old_emb, std::span<const float> query_new_emb,
                           const GalleryPartition& partition, const LabeledEmbeddings& old_gallery,
                           const LabeledEmbeddings& new_gallery, DistanceKind kind);

/// Single-extraction variant. The backward query is ψ(ρ(q)) (or ψ(q) without ρ)
/// against old_gallery; the new-side query is ρ(q) (or q) against new_gallery,
/// which must already hold ρ-transformed embeddings when ρ is given.
MergedRanking query_merged_rqt(std::span<const float> query_new_emb, const MlpTransform& psi,
                               const MlpTransform* rho, const GalleryPartition& partition,
                               const LabeledEmbeddings& old_gallery, const LabeledEmbeddings& new_gallery,
                               DistanceKind kind);

/// Query-side and gallery-side embeddings of both merged systems. Both galleries
/// hold the same ids and labels in the same row order, as do both query sets.
struct CurveSetup {
  LabeledEmbeddings backward_queries;
  LabeledEmbeddings fresh_queries;
  LabeledEmbeddings old_gallery;
  LabeledEmbeddings fresh_gallery;

  void validate() const;
};

struct BackfillCurve {
  std::array<double, kNumSlices> slices{};
  std::array<double, kNumSlices> map_at{};
  std::array<double, kNumSlices> cmc_at{};
  std::array<double, kNumSlices> neg_flip_at{};
  /// Fraction of scored queries whose rank-1 item came from the new system.
  std::array<double, kNumSlices> source_new_fraction{};
  double auc_map = 0.0;
  double auc_cmc = 0.0;
  std::size_t num_queries_scored = 0;
  std::size_t num_queries_excluded = 0;
};

/// Full-ranking evaluation of one system: each query against every gallery row.
EvalReport evaluate_system(const LabeledEmbeddings& queries, const LabeledEmbeddings& gallery, DistanceKind kind,
                           Execution exec = Execution::parallel);

/// Per-(query, slice) outcome produced by the curve kernels.
struct SliceOutcome {
  double ap = 0.0;
  std::uint8_t top1_correct = 0;
  std::uint8_t top1_new = 0;
  friend bool operator==(const SliceOutcome&, const SliceOutcome&) = default;
};

struct CurveKernelOutput {
  std::size_t num_queries = 0;
  std::vector<std::uint8_t> scored;       // per query: label present in gallery
  std::vector<SliceOutcome> outcomes;     // query-major, kNumSlices per query
  friend bool operator==(const CurveKernelOutput&, const CurveKernelOutput&) = default;
};

/// Merged-ranking evaluation of every query at every slice. Each query sorts
/// both systems' distances once and walks the merge per slice; queries are
/// independent, so the parallel path writes disjoint slots and matches the
/// serial reference byte for byte.
CurveKernelOutput evaluate_curve_kernel(const CurveSetup& setup, const GalleryPartition& order,
                                        DistanceKind kind, Execution exec);

/// M_t over t = 0.0..1.0 with nested partitions from `partition_seed`.
/// `reference_top1` holds the old system's per-scored-query rank-1 correctness
/// used for negative flips.
BackfillCurve backfill_curve(const CurveSetup& setup, std::span<const std::uint8_t> reference_top1,
                             std::uint64_t partition_seed, DistanceKind kind, Execution exec = Execution::parallel);

/// Per-slice CSV rows `t,mAP,CMC1,neg_flip_rate,source_new_fraction` with header.
std::string curve_csv(const BackfillCurve& curve);

}  // namespace rankmerge
