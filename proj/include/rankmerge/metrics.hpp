#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace rankmerge {

inline constexpr std::size_t kNumSlices = 11;

/// Backfill fraction of slice k on the uniform 0.0..1.0 grid.
inline double slice_fraction(std::size_t k) { return static_cast<double>(k) / 10.0; }

struct EvalReport {
  double map_value = 0.0;
  double cmc_top1 = 0.0;
  std::vector<double> per_query_ap;
  /// Rank-1 correctness per scored query, in query order.
  std::vector<std::uint8_t> per_query_top1;
  std::size_t num_queries_scored = 0;
  /// Queries whose label has no gallery instance; excluded from every average.
  std::size_t num_queries_excluded = 0;
};

/// AP = (1/R)·Σ_k Prec@k·rel_k over the full ranking. Requires R ≥ 1 and at
/// most R relevant flags.
double average_precision(std::span<const std::uint8_t> relevant, std::size_t num_relevant_total);

/// Arithmetic mean in index order; the reduction every mAP in this library uses.
/// An empty span yields 0.
double mean(std::span<const double> values);

/// Fraction of queries whose rank-1 item is correct. `top1_correct` holds one
/// flag per scored query; throws on an empty set.
double cmc_top1(std::span<const std::uint8_t> top1_correct);

/// Composite trapezoid over exactly 11 values on t = 0.0, 0.1, ..., 1.0.
double auc(std::span<const double> curve_values);

/// Fraction of queries the old system answered correctly at rank 1 that the
/// merged system gets wrong.
double negative_flips(std::span<const std::uint8_t> old_top1_correct,
                      std::span<const std::uint8_t> merged_top1_correct);

}  // namespace rankmerge
