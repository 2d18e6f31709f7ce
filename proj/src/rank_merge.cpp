#include "rankmerge/rank_merge.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "rankmerge/random.hpp"

namespace rankmerge {

namespace {

std::unordered_map<Id, std::size_t> row_index(const LabeledEmbeddings& set) {
  std::unordered_map<Id, std::size_t> index;
  index.reserve(set.size());
  for (std::size_t i = 0; i < set.size(); ++i) index.emplace(set.ids()[i], i);
  return index;
}

std::vector<std::size_t> rows_for(std::span<const Id> ids, const std::unordered_map<Id, std::size_t>& index) {
  std::vector<std::size_t> rows;
  rows.reserve(ids.size());
  for (Id id : ids) {
    auto it = index.find(id);
    if (it == index.end()) throw std::invalid_argument("partition id " + std::to_string(id) + " not in gallery");
    rows.push_back(it->second);
  }
  return rows;
}

std::span<const float> as_floats(const std::vector<float>& v) { return v; }

std::vector<float> infer_row(const MlpTransform& net, std::span<const float> x) {
  Matrix in(1, static_cast<Eigen::Index>(x.size()));
  for (std::size_t k = 0; k < x.size(); ++k) in(0, static_cast<Eigen::Index>(k)) = x[k];
  const Matrix out = net.infer(in);
  if (!out.allFinite()) throw NumericError("non-finite transformed query");
  std::vector<float> v(static_cast<std::size_t>(out.cols()));
  for (std::size_t k = 0; k < v.size(); ++k) v[k] = static_cast<float>(out(0, static_cast<Eigen::Index>(k)));
  return v;
}

// Rows of one system sorted by (distance, id).
void sort_rows(std::vector<std::size_t>& rows, std::span<const float> dist, std::span<const Id> ids) {
  std::ranges::sort(rows, [&](std::size_t a, std::size_t b) {
    return dist[a] < dist[b] || (dist[a] == dist[b] && ids[a] < ids[b]);
  });
}

// Walks the merge of the two presorted row orders restricted by `is_new`,
// calling visit(row, source) in merged order.
template <typename IsNew, typename Visit>
void merge_walk(std::span<const std::size_t> old_order, std::span<const float> old_dist,
                std::span<const std::size_t> new_order, std::span<const float> new_dist, IsNew is_new, Visit visit) {
  std::size_t i = 0, j = 0;
  const std::size_t n_old = old_order.size(), n_new = new_order.size();
  auto skip_old = [&] { while (i < n_old && is_new(old_order[i])) ++i; };
  auto skip_new = [&] { while (j < n_new && !is_new(new_order[j])) ++j; };
  skip_old();
  skip_new();
  while (i < n_old || j < n_new) {
    const bool take_new = i == n_old || (j < n_new && new_dist[new_order[j]] <= old_dist[old_order[i]]);
    if (take_new) {
      visit(new_order[j++], Source::new_system);
      skip_new();
    } else {
      visit(old_order[i++], Source::old_system);
      skip_old();
    }
  }
}

std::unordered_map<Label, std::size_t> label_counts(const LabeledEmbeddings& gallery) {
  std::unordered_map<Label, std::size_t> counts;
  for (Label l : gallery.labels()) ++counts[l];
  return counts;
}

}  // namespace

std::size_t backfilled_count(double t, std::size_t n) {
  const double x = t * static_cast<double>(n);
  const double lower = std::floor(x);
  if (std::abs(x - (lower + 0.5)) < 1e-9) return static_cast<std::size_t>(lower) + 1;
  return static_cast<std::size_t>(std::round(x));
}

GalleryPartition make_partition(std::span<const Id> gallery_ids, double t, std::uint64_t seed) {
  if (!(t >= 0.0 && t <= 1.0)) throw std::invalid_argument("backfill fraction t must lie in [0, 1]");
  std::unordered_set<Id> seen(gallery_ids.begin(), gallery_ids.end());
  if (seen.size() != gallery_ids.size()) throw std::invalid_argument("make_partition: duplicate gallery id");
  GalleryPartition p{{gallery_ids.begin(), gallery_ids.end()}, t, 0};
  Rng rng(seed);
  rng.shuffle(std::span<Id>(p.order));
  p.boundary = backfilled_count(t, p.order.size());
  return p;
}

MergedRanking merge(const RankedList& old_list, const RankedList& new_list) {
  std::unordered_set<Id> old_ids;
  old_ids.reserve(old_list.size());
  for (const auto& e : old_list) old_ids.insert(e.gallery_id);
  for (const auto& e : new_list) {
    if (old_ids.contains(e.gallery_id)) {
      throw std::invalid_argument("merge: id " + std::to_string(e.gallery_id) + " appears in both lists");
    }
  }
  MergedRanking out;
  out.reserve(old_list.size() + new_list.size());
  std::size_t i = 0, j = 0;
  while (i < old_list.size() || j < new_list.size()) {
    const bool take_new = i == old_list.size() || (j < new_list.size() && new_list[j].distance <= old_list[i].distance);
    if (take_new) {
      out.push_back({new_list[j].gallery_id, new_list[j].distance, Source::new_system});
      ++j;
    } else {
      out.push_back({old_list[i].gallery_id, old_list[i].distance, Source::old_system});
      ++i;
    }
  }
  return out;
}

MergedRanking query_merged(std::span<const float> query_old_emb, std::span<const float> query_new_emb,
                           const GalleryPartition& partition, const LabeledEmbeddings& old_gallery,
                           const LabeledEmbeddings& new_gallery, DistanceKind kind) {
  const auto old_rows = rows_for(partition.old_ids(), row_index(old_gallery));
  const auto new_rows = rows_for(partition.new_ids(), row_index(new_gallery));
  return merge(rank_rows(query_old_emb, old_gallery, old_rows, kind),
               rank_rows(query_new_emb, new_gallery, new_rows, kind));
}

MergedRanking query_merged_rqt(std::span<const float> query_new_emb, const MlpTransform& psi,
                               const MlpTransform* rho, const GalleryPartition& partition,
                               const LabeledEmbeddings& old_gallery, const LabeledEmbeddings& new_gallery,
                               DistanceKind kind) {
  if (rho && rho->input_dim() != query_new_emb.size()) throw std::invalid_argument("rho input dim mismatch");
  const std::vector<float> fresh = rho ? infer_row(*rho, query_new_emb)
                                       : std::vector<float>(query_new_emb.begin(), query_new_emb.end());
  if (psi.input_dim() != fresh.size()) throw std::invalid_argument("psi input dim mismatch");
  if (psi.output_dim() != old_gallery.dim()) throw std::invalid_argument("psi output dim != old gallery dim");
  if (fresh.size() != new_gallery.dim()) throw std::invalid_argument("new-side query dim != new gallery dim");
  const std::vector<float> backward = infer_row(psi, fresh);
  return query_merged(as_floats(backward), as_floats(fresh), partition, old_gallery, new_gallery, kind);
}

void CurveSetup::validate() const {
  if (backward_queries.dim() != old_gallery.dim()) throw std::invalid_argument("backward query/gallery dim mismatch");
  if (fresh_queries.dim() != fresh_gallery.dim()) throw std::invalid_argument("new query/gallery dim mismatch");
  if (!std::ranges::equal(old_gallery.ids(), fresh_gallery.ids()) ||
      !std::ranges::equal(old_gallery.labels(), fresh_gallery.labels())) {
    throw std::invalid_argument("old and new galleries must share ids and labels row by row");
  }
  if (!std::ranges::equal(backward_queries.labels(), fresh_queries.labels())) {
    throw std::invalid_argument("query sets of the two systems differ in labels");
  }
}

EvalReport evaluate_system(const LabeledEmbeddings& queries, const LabeledEmbeddings& gallery, DistanceKind kind,
                           Execution exec) {
  if (queries.dim() != gallery.dim()) throw std::invalid_argument("evaluate_system: dimension mismatch");
  const auto counts = label_counts(gallery);
  const auto index = row_index(gallery);
  const std::size_t nq = queries.size();
  std::vector<double> ap(nq, 0.0);
  std::vector<std::uint8_t> top1(nq, 0), scored(nq, 0);

  auto one = [&](std::size_t q) {
    const Label label = queries.labels()[q];
    const auto it = counts.find(label);
    if (it == counts.end()) return;
    const RankedList ranked = rank_all(queries.row(q), gallery, kind);
    std::vector<std::uint8_t> rel(ranked.size());
    for (std::size_t k = 0; k < ranked.size(); ++k) {
      rel[k] = gallery.labels()[index.at(ranked[k].gallery_id)] == label ? 1 : 0;
    }
    ap[q] = average_precision(rel, it->second);
    top1[q] = rel.front();
    scored[q] = 1;
  };
  if (exec == Execution::parallel) {
#pragma omp parallel for schedule(dynamic, 8)
    for (std::size_t q = 0; q < nq; ++q) one(q);
  } else {
    for (std::size_t q = 0; q < nq; ++q) one(q);
  }

  EvalReport report;
  for (std::size_t q = 0; q < nq; ++q) {
    if (!scored[q]) {
      ++report.num_queries_excluded;
      continue;
    }
    report.per_query_ap.push_back(ap[q]);
    report.per_query_top1.push_back(top1[q]);
  }
  report.num_queries_scored = report.per_query_ap.size();
  if (report.num_queries_scored > 0) {
    report.map_value = mean(report.per_query_ap);
    report.cmc_top1 = cmc_top1(report.per_query_top1);
  }
  return report;
}

CurveKernelOutput evaluate_curve_kernel(const CurveSetup& setup, const GalleryPartition& order, DistanceKind kind,
                                        Execution exec) {
  setup.validate();
  const LabeledEmbeddings& gallery = setup.old_gallery;
  const std::size_t n = gallery.size();
  const auto index = row_index(gallery);
  if (order.order.size() != n) throw std::invalid_argument("backfill order does not cover the gallery");
  // Position of each gallery row in the backfill order.
  std::vector<std::size_t> rank_of_row(n);
  for (std::size_t k = 0; k < n; ++k) rank_of_row[index.at(order.order[k])] = k;
  std::array<std::size_t, kNumSlices> boundary{};
  for (std::size_t k = 0; k < kNumSlices; ++k) boundary[k] = backfilled_count(slice_fraction(k), n);

  const auto counts = label_counts(gallery);
  const std::size_t nq = setup.backward_queries.size();
  CurveKernelOutput out;
  out.num_queries = nq;
  out.scored.assign(nq, 0);
  out.outcomes.assign(nq * kNumSlices, SliceOutcome{});

  auto one = [&](std::size_t q) {
    const Label label = setup.backward_queries.labels()[q];
    const auto it = counts.find(label);
    if (it == counts.end()) return;
    out.scored[q] = 1;
    std::vector<float> d_old(n), d_new(n);
    for (std::size_t r = 0; r < n; ++r) {
      d_old[r] = distance(setup.backward_queries.row(q), setup.old_gallery.row(r), kind);
      d_new[r] = distance(setup.fresh_queries.row(q), setup.fresh_gallery.row(r), kind);
    }
    std::vector<std::size_t> old_order(n), new_order(n);
    std::iota(old_order.begin(), old_order.end(), std::size_t{0});
    std::iota(new_order.begin(), new_order.end(), std::size_t{0});
    sort_rows(old_order, d_old, gallery.ids());
    sort_rows(new_order, d_new, gallery.ids());

    std::vector<std::uint8_t> rel;
    rel.reserve(n);
    for (std::size_t k = 0; k < kNumSlices; ++k) {
      const std::size_t m = boundary[k];
      rel.clear();
      std::uint8_t first_new = 0;
      merge_walk(old_order, d_old, new_order, d_new, [&](std::size_t r) { return rank_of_row[r] < m; },
                 [&](std::size_t r, Source s) {
                   if (rel.empty()) first_new = s == Source::new_system ? 1 : 0;
                   rel.push_back(gallery.labels()[r] == label ? 1 : 0);
                 });
      SliceOutcome& o = out.outcomes[q * kNumSlices + k];
      o.ap = average_precision(rel, it->second);
      o.top1_correct = rel.front();
      o.top1_new = first_new;
    }
  };

  if (exec == Execution::parallel) {
#pragma omp parallel for schedule(dynamic, 4)
    for (std::size_t q = 0; q < nq; ++q) one(q);
  } else {
    for (std::size_t q = 0; q < nq; ++q) one(q);
  }
  return out;
}

BackfillCurve backfill_curve(const CurveSetup& setup, std::span<const std::uint8_t> reference_top1,
                             std::uint64_t partition_seed, DistanceKind kind, Execution exec) {
  const GalleryPartition order = make_partition(setup.old_gallery.ids(), 0.0, partition_seed);
  const CurveKernelOutput k = evaluate_curve_kernel(setup, order, kind, exec);

  BackfillCurve curve;
  for (std::size_t q = 0; q < k.num_queries; ++q) {
    if (k.scored[q]) ++curve.num_queries_scored;
  }
  curve.num_queries_excluded = k.num_queries - curve.num_queries_scored;
  if (curve.num_queries_scored == 0) throw std::invalid_argument("backfill_curve: no query has a relevant gallery item");
  if (reference_top1.size() != curve.num_queries_scored) {
    throw std::invalid_argument("backfill_curve: reference flags do not match the scored queries");
  }
  std::vector<double> ap;
  std::vector<std::uint8_t> top1, from_new;
  for (std::size_t s = 0; s < kNumSlices; ++s) {
    ap.clear();
    top1.clear();
    from_new.clear();
    for (std::size_t q = 0; q < k.num_queries; ++q) {
      if (!k.scored[q]) continue;
      const SliceOutcome& o = k.outcomes[q * kNumSlices + s];
      ap.push_back(o.ap);
      top1.push_back(o.top1_correct);
      from_new.push_back(o.top1_new);
    }
    curve.slices[s] = slice_fraction(s);
    curve.map_at[s] = mean(ap);
    curve.cmc_at[s] = cmc_top1(top1);
    curve.neg_flip_at[s] = negative_flips(reference_top1, top1);
    curve.source_new_fraction[s] =
        static_cast<double>(std::ranges::count(from_new, std::uint8_t{1})) / static_cast<double>(from_new.size());
  }
  curve.auc_map = auc(curve.map_at);
  curve.auc_cmc = auc(curve.cmc_at);
  return curve;
}

std::string curve_csv(const BackfillCurve& curve) {
  std::ostringstream out;
  out.precision(17);
  out << "t,mAP,CMC1,neg_flip_rate,source_new_fraction\n";
  for (std::size_t s = 0; s < kNumSlices; ++s) {
    out << curve.slices[s] << ',' << curve.map_at[s] << ',' << curve.cmc_at[s] << ',' << curve.neg_flip_at[s] << ','
        << curve.source_new_fraction[s] << '\n';
  }
  return out.str();
}

}  // namespace rankmerge
