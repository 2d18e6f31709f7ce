#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <utility>
#include <vector>

#include "rankmerge/common.hpp"

namespace rankmerge {

/// Row-major n×d float matrix with one label and one unique id per row.
///
/// Construction validates every invariant (n ≥ 1, d ≥ 1, finite entries,
/// unique ids, matching lengths) and throws std::invalid_argument otherwise,
/// so a live instance is always valid.
class LabeledEmbeddings {
 public:
  LabeledEmbeddings(std::size_t dim, std::vector<float> vectors, std::vector<Label> labels,
                    std::vector<Id> ids);

  std::size_t size() const { return ids_.size(); }
  std::size_t dim() const { return dim_; }

  std::span<const float> row(std::size_t i) const { return {vectors_.data() + i * dim_, dim_}; }
  std::span<const float> vectors() const { return vectors_; }
  std::span<const Label> labels() const { return labels_; }
  std::span<const Id> ids() const { return ids_; }

  /// Rows at `rows`, in that order.
  LabeledEmbeddings subset(std::span<const std::size_t> rows) const;

  friend bool operator==(const LabeledEmbeddings&, const LabeledEmbeddings&) = default;

 private:
  std::size_t dim_;
  std::vector<float> vectors_;
  std::vector<Label> labels_;
  std::vector<Id> ids_;
};

/// The same samples embedded by the old and the new model, paired row by row.
class EmbeddingPairSet {
 public:
  EmbeddingPairSet(LabeledEmbeddings old_side, LabeledEmbeddings new_side);

  const LabeledEmbeddings& old_side() const { return old_; }
  const LabeledEmbeddings& new_side() const { return new_; }
  std::size_t size() const { return old_.size(); }

  friend bool operator==(const EmbeddingPairSet&, const EmbeddingPairSet&) = default;

 private:
  LabeledEmbeddings old_;
  LabeledEmbeddings new_;
};

// Embedding file layout, all little-endian:
//   "BMEB" | u16 version=1 | u32 dim | u64 count | count × (u64 id | u32 label | dim × f32)
inline constexpr char kEmbeddingMagic[4] = {'B', 'M', 'E', 'B'};
inline constexpr std::uint16_t kEmbeddingVersion = 1;
inline constexpr std::size_t kEmbeddingHeaderBytes = 4 + 2 + 4 + 8;

void save(const LabeledEmbeddings& set, const std::filesystem::path& path);
LabeledEmbeddings load(const std::filesystem::path& path);

/// Debug mirror: `id,label,v0,...,v{d-1}` with a header row.
void export_csv(const LabeledEmbeddings& set, const std::filesystem::path& path);

struct QueryGallerySplit {
  LabeledEmbeddings query;
  LabeledEmbeddings gallery;
};

/// Seeded, label-stratified split.
///
/// The total query count is round(query_fraction·n) (half away from zero),
/// apportioned to labels by largest remainder with ties going to the smaller
/// label. Labels are visited in ascending order; each label's rows (in input
/// order) are Fisher-Yates shuffled from one shared stream seeded with `seed`,
/// and the first quota rows become queries. Both outputs keep input row order.
/// Throws std::invalid_argument if a part would be empty or a label would have
/// no gallery rows.
QueryGallerySplit split(const LabeledEmbeddings& set, double query_fraction, std::uint64_t seed);

}  // namespace rankmerge
