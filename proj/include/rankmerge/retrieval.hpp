#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "rankmerge/common.hpp"
#include "rankmerge/embedding_store.hpp"

namespace rankmerge {

enum class DistanceKind { cosine, l2 };

DistanceKind parse_distance_kind(std::string_view name);
std::string_view to_string(DistanceKind kind);

/// Distance accumulated in double and rounded once to float.
///
/// cosine: 1 − a·b / sqrt(|a|²|b|²), clamped to [0, 2]; zero vectors rejected.
/// l2: Euclidean norm of a − b.
float distance(std::span<const float> a, std::span<const float> b, DistanceKind kind);

struct RankedEntry {
  Id gallery_id;
  float distance;
  friend bool operator==(const RankedEntry&, const RankedEntry&) = default;
};

/// Ascending by distance; ties go to the smaller gallery id.
using RankedList = std::vector<RankedEntry>;

inline bool ranks_before(const RankedEntry& a, const RankedEntry& b) {
  return a.distance < b.distance || (a.distance == b.distance && a.gallery_id < b.gallery_id);
}

/// Exhaustive ranking of every gallery row against `query`.
RankedList rank_all(std::span<const float> query, const LabeledEmbeddings& gallery, DistanceKind kind);

/// Ranking restricted to the given gallery rows; an empty row set yields an empty list.
RankedList rank_rows(std::span<const float> query, const LabeledEmbeddings& gallery,
                     std::span<const std::size_t> rows, DistanceKind kind);

}  // namespace rankmerge
