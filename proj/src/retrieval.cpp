#include "rankmerge/retrieval.hpp"

#include <algorithm>
#include <cmath>

namespace rankmerge {

DistanceKind parse_distance_kind(std::string_view name) {
  if (name == "cosine") return DistanceKind::cosine;
  if (name == "l2") return DistanceKind::l2;
  throw ConfigError("unknown distance kind '" + std::string(name) + "'");
}

std::string_view to_string(DistanceKind kind) {
  return kind == DistanceKind::cosine ? "cosine" : "l2";
}

float distance(std::span<const float> a, std::span<const float> b, DistanceKind kind) {
  if (a.size() != b.size()) throw std::invalid_argument("distance: dimension mismatch");
  if (kind == DistanceKind::l2) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
      acc += d * d;
    }
    return static_cast<float>(std::sqrt(acc));
  }
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double x = a[i], y = b[i];
    dot += x * y;
    na += x * x;
    nb += y * y;
  }
  if (na == 0.0 || nb == 0.0) throw std::invalid_argument("cosine distance of a zero vector");
  const double d = 1.0 - dot / std::sqrt(na * nb);
  return static_cast<float>(std::clamp(d, 0.0, 2.0));
}

RankedList rank_rows(std::span<const float> query, const LabeledEmbeddings& gallery,
                     std::span<const std::size_t> rows, DistanceKind kind) {
  if (query.size() != gallery.dim()) throw std::invalid_argument("rank: query/gallery dim mismatch");
  RankedList out;
  out.reserve(rows.size());
  for (std::size_t r : rows) {
    out.push_back({gallery.ids()[r], distance(query, gallery.row(r), kind)});
  }
  std::ranges::sort(out, ranks_before);
  return out;
}

RankedList rank_all(std::span<const float> query, const LabeledEmbeddings& gallery, DistanceKind kind) {
  std::vector<std::size_t> rows(gallery.size());
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
  return rank_rows(query, gallery, rows, kind);
}

}  // namespace rankmerge
