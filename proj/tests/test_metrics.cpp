#include <array>
#include <cmath>

#include "rankmerge/metrics.hpp"
#include "support.hpp"

using namespace rankmerge;

namespace {

// Exhaustive oracle: (1/R)·Σ_k Prec@k·rel_k with Prec@k recounted from scratch.
double oracle_ap(const std::vector<std::uint8_t>& flags, std::size_t r) {
  double sum = 0.0;
  for (std::size_t k = 0; k < flags.size(); ++k) {
    if (!flags[k]) continue;
    std::size_t hits = 0;
    for (std::size_t j = 0; j <= k; ++j) hits += flags[j];
    sum += static_cast<double>(hits) / static_cast<double>(k + 1);
  }
  return sum / static_cast<double>(r);
}

}  // namespace

TEST_CASE("average precision examples") {
  const std::vector<std::uint8_t> f101{1, 0, 1};
  CHECK(std::abs(average_precision(f101, 2) - 0.833333333333) < 1e-9);
  CHECK(average_precision(f101, 2) == doctest::Approx((1.0 + 2.0 / 3.0) / 2.0).epsilon(1e-15));
  const std::vector<std::uint8_t> all{1, 1, 1, 1};
  CHECK(average_precision(all, 4) == 1.0);
  const std::vector<std::uint8_t> last{0, 0, 0, 1};
  CHECK(average_precision(last, 1) == 0.25);
  const std::vector<std::uint8_t> missing{1, 0, 0};
  CHECK(average_precision(missing, 3) == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("average precision matches the exhaustive oracle on random rankings") {
  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng.uniform_index(30);
    std::vector<std::uint8_t> flags(n);
    std::size_t hits = 0;
    for (auto& f : flags) hits += (f = rng.uniform01() < 0.3);
    if (hits == 0) continue;
    const std::size_t r = hits + rng.uniform_index(3);
    CHECK(std::abs(average_precision(flags, r) - oracle_ap(flags, r)) < 1e-12);
  }
}

TEST_CASE("average precision argument errors") {
  const std::vector<std::uint8_t> f{1, 1};
  CHECK_THROWS(average_precision(f, 0));
  CHECK_THROWS(average_precision(f, 1));
}

TEST_CASE("cmc top-1") {
  CHECK(cmc_top1(std::vector<std::uint8_t>{1, 1, 1}) == 1.0);
  CHECK(cmc_top1(std::vector<std::uint8_t>{0, 0}) == 0.0);
  CHECK(cmc_top1(std::vector<std::uint8_t>{1, 0, 0, 1}) == 0.5);
  CHECK_THROWS(cmc_top1(std::vector<std::uint8_t>{}));
}

TEST_CASE("auc identities") {
  for (double c : {0.0, 0.25, 1.0, 0.7}) {
    std::array<double, kNumSlices> v;
    v.fill(c);
    CHECK(auc(v) == c);
  }
  std::array<double, kNumSlices> ramp;
  for (std::size_t k = 0; k < kNumSlices; ++k) ramp[k] = slice_fraction(k);
  CHECK(auc(ramp) == 0.5);
  std::array<double, kNumSlices> jump{};
  jump.back() = 1.0;
  CHECK(auc(jump) == doctest::Approx(0.05).epsilon(1e-15));
  CHECK_THROWS(auc(std::vector<double>(10, 0.0)));
}

TEST_CASE("auc equals the explicit trapezoid sum") {
  Rng rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    std::array<double, kNumSlices> v;
    for (auto& x : v) x = rng.uniform01();
    double expected = 0.0;
    for (std::size_t k = 0; k + 1 < kNumSlices; ++k) expected += 0.1 * (v[k] + v[k + 1]) / 2.0;
    CHECK(auc(v) == doctest::Approx(expected).epsilon(1e-14));
  }
}

TEST_CASE("negative flips") {
  using F = std::vector<std::uint8_t>;
  CHECK(negative_flips(F{1, 0, 1}, F{1, 1, 1}) == 0.0);
  CHECK(negative_flips(F{0, 0, 0}, F{0, 1, 0}) == 0.0);
  CHECK(negative_flips(F{1, 1, 0}, F{0, 1, 0}) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  CHECK_THROWS(negative_flips(F{1}, F{1, 0}));
}

TEST_CASE("mean reduces in index order") {
  CHECK(mean(std::vector<double>{1.0, 2.0, 4.0}) == doctest::Approx(7.0 / 3.0));
  CHECK(mean(std::vector<double>{}) == 0.0);
}
