#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "rankmerge/config.hpp"
#include "rankmerge/losses.hpp"
#include "rankmerge/mlp.hpp"
#include "rankmerge/optimizer.hpp"
#include "rankmerge/rank_merge.hpp"
#include "rankmerge/synthetic.hpp"

namespace rankmerge {

enum class Method { rm_naive, rm_rqt, rm_cl, rm_cl_m, rm_cmcl, rm_cmcl_rho };

Method parse_method(std::string_view name);
std::string_view to_string(Method method);
bool is_trained(Method method);
LossKind loss_kind_for(Method method);

struct ExperimentConfig {
  UpgradeScenario scenario;
  std::vector<Method> methods{Method::rm_naive};
  TrainConfig train;
  DistanceKind distance = DistanceKind::cosine;
  std::filesystem::path output_dir = "out";
  std::vector<std::uint64_t> seeds{7};

  /// Hash of every field except output_dir, over a canonical key=value dump.
  std::string config_hash() const;
  /// Hash of the scenario (without its seed), the seed list and the distance.
  std::string scenario_hash() const;
  std::string canonical_text() const;
};

/// Parses the flat config grammar (see KeyValueConfig) with keys
///   methods, distance, output_dir, seeds,
///   [scenario] num_classes per_class_gallery num_queries per_class_train d_old d_new
///              sigma_old sigma_new cross_space_map seed,
///   [train] epochs lr0 batch_size classes_per_batch adam_beta1 adam_beta2 adam_eps
///           bn_momentum bn_eps psi_blocks rho_blocks.
/// Trained methods require a [train] section. Throws ConfigError.
ExperimentConfig parse_experiment_config(std::string_view text);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

/// Scenario, training and partition seeds used for one run seed.
UpgradeScenario scenario_for_seed(const ExperimentConfig& config, std::uint64_t seed);
TrainConfig train_config_for_seed(const ExperimentConfig& config, std::uint64_t seed);
std::uint64_t partition_seed_for(std::uint64_t seed);

std::filesystem::path seed_dir(const ExperimentConfig& config, std::uint64_t seed);
std::filesystem::path method_dir(const ExperimentConfig& config, std::uint64_t seed, Method method);

/// Query-side model evaluations, counted per call.
class QueryExtractor {
 public:
  explicit QueryExtractor(const EmbeddingPairSet& queries) : queries_(queries) {}

  std::span<const float> extract_old(std::size_t i) {
    ++old_calls_;
    return queries_.old_side().row(i);
  }
  std::span<const float> extract_new(std::size_t i) {
    ++new_calls_;
    return queries_.new_side().row(i);
  }

  std::size_t old_extractions() const { return old_calls_; }
  std::size_t new_extractions() const { return new_calls_; }
  const EmbeddingPairSet& queries() const { return queries_; }

 private:
  const EmbeddingPairSet& queries_;
  std::size_t old_calls_ = 0;
  std::size_t new_calls_ = 0;
};

struct Transforms {
  std::optional<MlpTransform> psi;
  std::optional<MlpTransform> rho;
};

/// Query and gallery embeddings of both merged systems for `method`. Naive
/// extracts both query embeddings; every transform-based method extracts only
/// the new one and derives the backward query through ψ (and ρ).
CurveSetup build_curve_setup(Method method, QueryExtractor& extractor, const EmbeddingPairSet& gallery,
                             const Transforms& transforms);

struct MethodEvaluation {
  Method method;
  BackfillCurve curve;
  EvalReport backward_self_test;  // the merged backward system on the full gallery
  EvalReport fresh_self_test;     // the merged new system on the full gallery
  EvalReport old_self_test;       // {φ^old, φ^old}
  EvalReport new_self_test;       // {φ^new, φ^new}
  std::size_t num_queries = 0;
  std::size_t old_extractions = 0;
  std::size_t new_extractions = 0;
};

MethodEvaluation evaluate_method(Method method, const EmbeddingPairSet& query, const EmbeddingPairSet& gallery,
                                 const Transforms& transforms, std::uint64_t partition_seed, DistanceKind kind,
                                 Execution exec = Execution::parallel);

/// Data files of one seed: {train,query,gallery}_{old,new}.bmeb under seed_dir/data.
void write_dataset(const UpgradeDataset& data, const std::filesystem::path& dir);
UpgradeDataset read_dataset(const std::filesystem::path& dir);

void write_transforms(const Transforms& t, const std::filesystem::path& dir);
Transforms read_transforms(Method method, const std::filesystem::path& dir);

struct MethodSummary {
  Method method;
  std::size_t num_seeds = 0;
  double auc_map_mean = 0.0, auc_map_std = 0.0;
  double auc_cmc_mean = 0.0, auc_cmc_std = 0.0;
  double max_neg_flip = 0.0;
  std::array<double, kNumSlices> mean_map_at{};
  std::array<double, kNumSlices> mean_cmc_at{};
  std::array<double, kNumSlices> mean_neg_flip_at{};
};

MethodSummary summarize(Method method, const std::vector<BackfillCurve>& per_seed);

struct ExperimentReport {
  std::vector<MethodSummary> summaries;
  /// evaluations[m][s]: method m, seed s, in config order.
  std::vector<std::vector<MethodEvaluation>> evaluations;
};

/// gen → selftest → train → eval-curve for every seed and method, then
/// summary.csv and mean_curve_<method>.csv. An `INCOMPLETE` marker holding the
/// failing stage stays in output_dir if any stage throws.
ExperimentReport run(const ExperimentConfig& config, Execution exec = Execution::parallel);

/// `# config_hash=<hex>` comment line followed by `body`.
std::string with_hash_comment(const std::string& config_hash, const std::string& body);

std::string report_csv(const ExperimentConfig& config, const std::vector<MethodSummary>& summaries);
std::string selftest_csv(const std::string& config_hash, const EvalReport& old_report, const EvalReport& new_report);

/// Method × metric table over report/summary CSVs sharing one scenario hash.
/// Deltas are against the first row. Throws ConfigError on a hash mismatch.
std::string compare(const std::vector<std::filesystem::path>& reports);

}  // namespace rankmerge
