#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "rankmerge/metrics.hpp"
#include "rankmerge/mlp.hpp"
#include "rankmerge/rank_merge.hpp"
#include "rankmerge/synthetic.hpp"
#include "merge_oracle.hpp"
#include "support.hpp"

using namespace rankmerge;

TEST_CASE("backfilled count rounds half away from zero") {
  CHECK(backfilled_count(0.35, 10) == 4);
  CHECK(backfilled_count(0.25, 10) == 3);
  CHECK(backfilled_count(0.5, 3) == 2);
  CHECK(backfilled_count(0.0, 7) == 0);
  CHECK(backfilled_count(1.0, 7) == 7);
  CHECK(backfilled_count(0.1, 1000) == 100);
  CHECK(backfilled_count(0.7, 1000) == 700);
}

TEST_CASE("partition boundaries, disjointness and nesting") {
  std::vector<Id> ids(10);
  std::iota(ids.begin(), ids.end(), 100);
  const auto p0 = make_partition(ids, 0.0, 3);
  CHECK(p0.new_ids().empty());
  CHECK(p0.old_ids().size() == 10);
  const auto p1 = make_partition(ids, 1.0, 3);
  CHECK(p1.new_ids().size() == 10);
  CHECK(p1.old_ids().empty());
  for (std::uint64_t seed : {0u, 1u, 99u}) {
    CHECK(make_partition(ids, 0.35, seed).boundary == 4);
    std::set<Id> prev;
    for (std::size_t k = 0; k < kNumSlices; ++k) {
      const auto p = make_partition(ids, slice_fraction(k), seed);
      std::set<Id> fresh(p.new_ids().begin(), p.new_ids().end());
      std::set<Id> old(p.old_ids().begin(), p.old_ids().end());
      CHECK(fresh.size() + old.size() == ids.size());
      for (Id id : fresh) CHECK(!old.contains(id));
      CHECK(std::includes(fresh.begin(), fresh.end(), prev.begin(), prev.end()));
      prev = fresh;
    }
  }
  CHECK_THROWS(make_partition(ids, 1.5, 0));
  CHECK_THROWS(make_partition(ids, -0.1, 0));
  ids[3] = ids[4];
  CHECK_THROWS(make_partition(ids, 0.5, 0));
}

TEST_CASE("merge examples") {
  const RankedList old_list{{1, 0.2f}}, new_list{{2, 0.5f}};
  CHECK(merge(old_list, new_list) ==
        MergedRanking{{1, 0.2f, Source::old_system}, {2, 0.5f, Source::new_system}});
  CHECK(merge({}, new_list) == MergedRanking{{2, 0.5f, Source::new_system}});
  CHECK(merge({{1, 0.3f}}, {{2, 0.3f}}) ==
        MergedRanking{{2, 0.3f, Source::new_system}, {1, 0.3f, Source::old_system}});
  CHECK(merge({{1, 0.3f}}, {{0, 0.3f}}).front().source == Source::new_system);
  CHECK_THROWS(merge({{1, 0.3f}}, {{1, 0.4f}}));
}

TEST_CASE("merge result is sorted and contains both inputs") {
  Rng rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    RankedList a, b;
    for (Id id = 0; id < 30; ++id) {
      const float d = static_cast<float>(rng.uniform_index(8)) / 8.0f;
      (rng.uniform01() < 0.5 ? a : b).push_back({id, d});
    }
    std::sort(a.begin(), a.end(), ranks_before);
    std::sort(b.begin(), b.end(), ranks_before);
    const auto m = merge(a, b);
    REQUIRE(m.size() == 30);
    for (std::size_t i = 1; i < m.size(); ++i) {
      CHECK(m[i - 1].distance <= m[i].distance);
      if (m[i - 1].distance == m[i].distance && m[i - 1].source == Source::old_system) {
        CHECK(m[i].source == Source::old_system);
      }
    }
  }
}

namespace {

struct Desk {
  UpgradeDataset data = generate(UpgradeScenario{});
  const LabeledEmbeddings& qo() const { return data.query.old_side(); }
  const LabeledEmbeddings& qn() const { return data.query.new_side(); }
  const LabeledEmbeddings& go() const { return data.gallery.old_side(); }
  const LabeledEmbeddings& gn() const { return data.gallery.new_side(); }
};

const Desk& desk() {
  static const Desk d;
  return d;
}

std::vector<Id> ids_of(const MergedRanking& m) {
  std::vector<Id> out;
  for (const auto& e : m) out.push_back(e.gallery_id);
  return out;
}

std::vector<Id> ids_of(const RankedList& m) {
  std::vector<Id> out;
  for (const auto& e : m) out.push_back(e.gallery_id);
  return out;
}

}  // namespace

TEST_CASE("query_merged at the boundaries reproduces the single-system rankings") {
  const auto& d = desk();
  const auto p0 = make_partition(d.go().ids(), 0.0, 5);
  const auto p1 = make_partition(d.go().ids(), 1.0, 5);
  for (std::size_t i = 0; i < 20; ++i) {
    const auto m0 = query_merged(d.qo().row(i), d.qn().row(i), p0, d.go(), d.gn(), DistanceKind::cosine);
    CHECK(ids_of(m0) == ids_of(rank_all(d.qo().row(i), d.go(), DistanceKind::cosine)));
    CHECK(std::ranges::all_of(m0, [](auto& e) { return e.source == Source::old_system; }));
    const auto m1 = query_merged(d.qo().row(i), d.qn().row(i), p1, d.go(), d.gn(), DistanceKind::cosine);
    CHECK(ids_of(m1) == ids_of(rank_all(d.qn().row(i), d.gn(), DistanceKind::cosine)));
  }
}

TEST_CASE("desk scenario at t=0.5: merged top-1 is the minimum over both systems' distances") {
  const auto& d = desk();
  const auto p = make_partition(d.go().ids(), 0.5, 17);
  const std::set<Id> fresh(p.new_ids().begin(), p.new_ids().end());
  for (std::size_t i = 0; i < d.qo().size(); ++i) {
    Id best_id = 0;
    double best = INFINITY;
    int best_new = 0;
    for (std::size_t r = 0; r < d.go().size(); ++r) {
      const Id id = d.go().ids()[r];
      const bool is_new = fresh.contains(id);
      const float dist = is_new ? distance(d.qn().row(i), d.gn().row(r), DistanceKind::cosine)
                                : distance(d.qo().row(i), d.go().row(r), DistanceKind::cosine);
      if (dist < best || (dist == best && (is_new > best_new || (is_new == best_new && id < best_id)))) {
        best = dist;
        best_id = id;
        best_new = is_new;
      }
    }
    const auto m = query_merged(d.qo().row(i), d.qn().row(i), p, d.go(), d.gn(), DistanceKind::cosine);
    CHECK(m.front().gallery_id == best_id);
  }
}

TEST_CASE("single-extraction merge with an exact inverse map equals the two-extraction merge") {
  const auto qn = testing::random_set(15, 6, 3, 31);
  const auto gn = testing::random_set(40, 6, 3, 32, 1000);
  MlpTransform psi(MlpOptions{.input_dim = 6, .output_dim = 4, .num_blocks = 1, .seed = 9});
  psi.set_mode(Mode::eval);
  // Noiseless old model: φ^old = ψ(φ^new) exactly.
  const auto qo = psi.transform(qn);
  const auto go = psi.transform(gn);
  for (double t : {0.0, 0.3, 0.5, 1.0}) {
    const auto p = make_partition(gn.ids(), t, 2);
    for (std::size_t i = 0; i < qn.size(); ++i) {
      CHECK(query_merged_rqt(qn.row(i), psi, nullptr, p, go, gn, DistanceKind::cosine) ==
            query_merged(qo.row(i), qn.row(i), p, go, gn, DistanceKind::cosine));
    }
  }
  const auto p1 = make_partition(gn.ids(), 1.0, 2);
  for (std::size_t i = 0; i < qn.size(); ++i) {
    CHECK(ids_of(query_merged_rqt(qn.row(i), psi, nullptr, p1, go, gn, DistanceKind::l2)) ==
          ids_of(rank_all(qn.row(i), gn, DistanceKind::l2)));
  }
}

TEST_CASE("identical old and new systems give a flat curve") {
  const auto q = testing::random_set(30, 5, 4, 41);
  const auto g = testing::random_set(60, 5, 4, 42, 100);
  const CurveSetup setup{q, q, g, g};
  const auto base = evaluate_system(q, g, DistanceKind::cosine);
  const auto curve = backfill_curve(setup, base.per_query_top1, 3, DistanceKind::cosine);
  for (std::size_t k = 0; k < kNumSlices; ++k) {
    CHECK(curve.map_at[k] == base.map_value);
    CHECK(curve.cmc_at[k] == base.cmc_top1);
    CHECK(curve.neg_flip_at[k] == 0.0);
  }
  CHECK(curve.auc_map == base.map_value);
  CHECK(curve.auc_cmc == base.cmc_top1);
}


TEST_CASE("desk naive merge: boundaries equal self-tests and every slice matches the oracle") {
  const auto& d = desk();
  const CurveSetup setup{d.qo(), d.qn(), d.go(), d.gn()};
  const auto old_st = self_test(ModelSide::old_model, d.data.query, d.data.gallery, DistanceKind::cosine);
  const auto new_st = self_test(ModelSide::new_model, d.data.query, d.data.gallery, DistanceKind::cosine);
  const std::uint64_t seed = 123;
  const auto curve = backfill_curve(setup, old_st.per_query_top1, seed, DistanceKind::cosine);
  CHECK(curve.map_at[0] == old_st.map_value);
  CHECK(curve.cmc_at[0] == old_st.cmc_top1);
  CHECK(curve.map_at[10] == new_st.map_value);
  CHECK(curve.cmc_at[10] == new_st.cmc_top1);
  for (std::size_t k = 0; k < kNumSlices; k += 2) {
    const auto p = make_partition(d.go().ids(), slice_fraction(k), seed);
    const auto oracle = testing::oracle_slice(setup, p, DistanceKind::cosine);
    CHECK(std::abs(curve.map_at[k] - oracle.map) < 1e-9);
    CHECK(std::abs(curve.cmc_at[k] - oracle.cmc) < 1e-9);
    for (std::size_t i = 0; i < d.qo().size(); i += 25) {
      CHECK(ids_of(query_merged(d.qo().row(i), d.qn().row(i), p, d.go(), d.gn(), DistanceKind::cosine)) ==
            oracle.orders[i]);
    }
  }
}

TEST_CASE("serial and parallel kernels agree byte for byte") {
  const auto& d = desk();
  const CurveSetup setup{d.qo(), d.qn(), d.go(), d.gn()};
  for (auto kind : {DistanceKind::cosine, DistanceKind::l2}) {
    const auto order = make_partition(d.go().ids(), 0.0, 77);
    CHECK(evaluate_curve_kernel(setup, order, kind, Execution::serial) ==
          evaluate_curve_kernel(setup, order, kind, Execution::parallel));
    const auto s = evaluate_system(d.qo(), d.go(), kind, Execution::serial);
    const auto p = evaluate_system(d.qo(), d.go(), kind, Execution::parallel);
    CHECK(s.per_query_ap == p.per_query_ap);
    CHECK(s.per_query_top1 == p.per_query_top1);
    CHECK(s.map_value == p.map_value);
  }
}

TEST_CASE("queries with labels absent from the gallery are excluded") {
  const LabeledEmbeddings q(1, {1, -1, 1}, {0, 5, 1}, {0, 1, 2});
  const LabeledEmbeddings g(1, {1, -1}, {0, 1}, {10, 11});
  const auto r = evaluate_system(q, g, DistanceKind::l2);
  CHECK(r.num_queries_scored == 2);
  CHECK(r.num_queries_excluded == 1);
  CHECK(r.per_query_ap.size() == 2);
  const CurveSetup setup{q, q, g, g};
  const auto curve = backfill_curve(setup, r.per_query_top1, 1, DistanceKind::l2);
  CHECK(curve.num_queries_scored == 2);
  CHECK(curve.num_queries_excluded == 1);
}

TEST_CASE("curve csv has a header and eleven rows") {
  const auto q = testing::random_set(10, 3, 2, 51);
  const auto g = testing::random_set(20, 3, 2, 52, 100);
  const auto base = evaluate_system(q, g, DistanceKind::l2);
  const auto csv = curve_csv(backfill_curve({q, q, g, g}, base.per_query_top1, 1, DistanceKind::l2));
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);
  CHECK(line == "t,mAP,CMC1,neg_flip_rate,source_new_fraction");
  int rows = 0;
  while (std::getline(in, line)) ++rows;
  CHECK(rows == 11);
}
