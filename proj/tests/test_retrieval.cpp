#include <algorithm>
#include <cmath>

#include "rankmerge/retrieval.hpp"
#include "support.hpp"

using namespace rankmerge;

TEST_CASE("distance basics") {
  const std::vector<float> a{1, 0}, b{0, 1}, c{0.3f, -2.f};
  CHECK(distance(a, a, DistanceKind::cosine) == 0.0f);
  CHECK(distance(c, c, DistanceKind::l2) == 0.0f);
  CHECK(distance(a, b, DistanceKind::cosine) == 1.0f);
  CHECK(distance(a, b, DistanceKind::l2) == doctest::Approx(1.41421356).epsilon(1e-7));
  CHECK(distance(a, c, DistanceKind::cosine) == distance(c, a, DistanceKind::cosine));
  const std::vector<float> neg{-1, 0};
  CHECK(distance(a, neg, DistanceKind::cosine) == 2.0f);
}

TEST_CASE("distance errors") {
  const std::vector<float> a{1, 0}, z{0, 0}, three{1, 2, 3};
  CHECK_THROWS_AS(distance(a, z, DistanceKind::cosine), std::invalid_argument);
  CHECK_THROWS_AS(distance(a, three, DistanceKind::l2), std::invalid_argument);
  CHECK(distance(a, z, DistanceKind::l2) == 1.0f);
}

TEST_CASE("l2 satisfies the triangle inequality and cosine stays in [0, 2]") {
  const auto set = testing::random_set(30, 6, 1, 3);
  for (std::size_t i = 0; i < set.size(); ++i) {
    for (std::size_t j = 0; j < set.size(); ++j) {
      const float dc = distance(set.row(i), set.row(j), DistanceKind::cosine);
      CHECK((dc >= 0.0f && dc <= 2.0f));
      for (std::size_t k = 0; k < set.size(); k += 7) {
        CHECK(distance(set.row(i), set.row(k), DistanceKind::l2) <=
              distance(set.row(i), set.row(j), DistanceKind::l2) + distance(set.row(j), set.row(k), DistanceKind::l2) +
                  1e-5f);
      }
    }
  }
}

TEST_CASE("rank_all trivial cases") {
  const LabeledEmbeddings one(2, {1, 1}, {0}, {42});
  const std::vector<float> q{0, 1};
  const auto list = rank_all(q, one, DistanceKind::l2);
  REQUIRE(list.size() == 1);
  CHECK(list[0].gallery_id == 42);

  const auto g = testing::random_set(8, 3, 2, 5, 10);
  const auto self = rank_all(g.row(5), g, DistanceKind::cosine);
  CHECK(self.front().gallery_id == 15);
  CHECK(self.front().distance == 0.0f);

  CHECK(rank_rows(q, one, {}, DistanceKind::l2).empty());
}

namespace {

// Independent oracle: plain float-accumulated distances would differ in the
// last bit, so this recomputes in double with a different loop shape and
// stable-sorts rows pre-ordered by id.
RankedList oracle_rank(std::span<const float> q, const LabeledEmbeddings& g, DistanceKind kind) {
  std::vector<std::size_t> rows(g.size());
  std::iota(rows.begin(), rows.end(), 0);
  std::sort(rows.begin(), rows.end(), [&](auto a, auto b) { return g.ids()[a] < g.ids()[b]; });
  std::vector<float> d(g.size());
  for (std::size_t r = 0; r < g.size(); ++r) {
    double dot = 0, nq = 0, ng = 0, sq = 0;
    for (std::size_t k = 0; k < q.size(); ++k) {
      const double x = q[k], y = g.row(r)[k];
      dot += x * y;
      nq += x * x;
      ng += y * y;
      sq += (x - y) * (x - y);
    }
    d[r] = kind == DistanceKind::l2 ? static_cast<float>(std::sqrt(sq))
                                    : static_cast<float>(std::clamp(1.0 - dot / std::sqrt(nq * ng), 0.0, 2.0));
  }
  std::stable_sort(rows.begin(), rows.end(), [&](auto a, auto b) { return d[a] < d[b]; });
  RankedList out;
  for (auto r : rows) out.push_back({g.ids()[r], d[r]});
  return out;
}

}  // namespace

TEST_CASE("random 5x4 gallery matches the brute-force stable-sort oracle") {
  for (auto kind : {DistanceKind::cosine, DistanceKind::l2}) {
    const auto g = testing::random_set(5, 4, 2, 11);
    const auto q = testing::random_set(3, 4, 1, 12);
    for (std::size_t i = 0; i < q.size(); ++i) CHECK(rank_all(q.row(i), g, kind) == oracle_rank(q.row(i), g, kind));
  }
}

TEST_CASE("ties go to the smaller id regardless of row order") {
  const LabeledEmbeddings g(1, {2, 2, 1, 2}, {0, 0, 0, 0}, {9, 3, 7, 5});
  const std::vector<float> q{0};
  const auto list = rank_all(q, g, DistanceKind::l2);
  std::vector<Id> ids;
  for (const auto& e : list) ids.push_back(e.gallery_id);
  CHECK(ids == std::vector<Id>{7, 3, 5, 9});
}

TEST_CASE("larger random galleries match the oracle and form a permutation") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto g = testing::random_set(200, 8, 5, seed, 1000);
    const auto q = testing::random_set(1, 8, 1, seed + 100);
    for (auto kind : {DistanceKind::cosine, DistanceKind::l2}) {
      const auto list = rank_all(q.row(0), g, kind);
      CHECK(list == oracle_rank(q.row(0), g, kind));
      CHECK(std::is_sorted(list.begin(), list.end(), ranks_before));
    }
  }
}

TEST_CASE("appending gallery rows keeps the relative order of existing ones") {
  const auto base = testing::random_set(40, 5, 3, 21);
  const auto extra = testing::random_set(25, 5, 3, 22, 500);
  std::vector<float> v(base.vectors().begin(), base.vectors().end());
  v.insert(v.end(), extra.vectors().begin(), extra.vectors().end());
  std::vector<Label> labels(base.labels().begin(), base.labels().end());
  labels.insert(labels.end(), extra.labels().begin(), extra.labels().end());
  std::vector<Id> ids(base.ids().begin(), base.ids().end());
  ids.insert(ids.end(), extra.ids().begin(), extra.ids().end());
  const LabeledEmbeddings superset(5, v, labels, ids);
  const auto q = testing::random_set(4, 5, 1, 23);
  for (std::size_t i = 0; i < q.size(); ++i) {
    const auto small = rank_all(q.row(i), base, DistanceKind::cosine);
    RankedList filtered;
    for (const auto& e : rank_all(q.row(i), superset, DistanceKind::cosine)) {
      if (e.gallery_id < 500) filtered.push_back(e);
    }
    CHECK(filtered == small);
  }
}
