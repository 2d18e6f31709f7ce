#include "rankmerge/metrics.hpp"

#include <stdexcept>

namespace rankmerge {

double average_precision(std::span<const std::uint8_t> relevant, std::size_t num_relevant_total) {
  if (num_relevant_total == 0) throw std::invalid_argument("average_precision: R must be >= 1");
  double sum = 0.0;
  std::size_t hits = 0;
  for (std::size_t k = 0; k < relevant.size(); ++k) {
    if (!relevant[k]) continue;
    ++hits;
    sum += static_cast<double>(hits) / static_cast<double>(k + 1);
  }
  if (hits > num_relevant_total) {
    throw std::invalid_argument("average_precision: more relevant flags than R");
  }
  return sum / static_cast<double>(num_relevant_total);
}

double mean(std::span<const double> values) {
  if (values.empty()) return 0.0;
  double sum = 0.0;
  for (double v : values) sum += v;
  return sum / static_cast<double>(values.size());
}

double cmc_top1(std::span<const std::uint8_t> top1_correct) {
  if (top1_correct.empty()) throw std::invalid_argument("cmc_top1: empty query set");
  std::size_t correct = 0;
  for (auto c : top1_correct) correct += c ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(top1_correct.size());
}

double auc(std::span<const double> curve_values) {
  if (curve_values.size() != kNumSlices) {
    throw std::invalid_argument("auc: expected exactly 11 values on the 0.0..1.0 grid");
  }
  // Extended-precision accumulation keeps auc(c,...,c) == c and auc(ramp) == 0.5 exact.
  long double sum = 0.5L * curve_values.front() + 0.5L * curve_values.back();
  for (std::size_t i = 1; i + 1 < curve_values.size(); ++i) sum += curve_values[i];
  return static_cast<double>(sum / 10.0L);
}

double negative_flips(std::span<const std::uint8_t> old_top1_correct,
                      std::span<const std::uint8_t> merged_top1_correct) {
  if (old_top1_correct.size() != merged_top1_correct.size()) {
    throw std::invalid_argument("negative_flips: length mismatch");
  }
  if (old_top1_correct.empty()) return 0.0;
  std::size_t flips = 0;
  for (std::size_t i = 0; i < old_top1_correct.size(); ++i) {
    if (old_top1_correct[i] && !merged_top1_correct[i]) ++flips;
  }
  return static_cast<double>(flips) / static_cast<double>(old_top1_correct.size());
}

}  // namespace rankmerge
