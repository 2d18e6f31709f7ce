#pragma once

#include <cstdint>
#include <string_view>

#include "rankmerge/embedding_store.hpp"
#include "rankmerge/metrics.hpp"
#include "rankmerge/retrieval.hpp"

namespace rankmerge {

/// How the old embedding space is derived from the new one.
///   rotation:      d_old orthonormal rows of a random rotation (requires d_old ≤ d_new)
///   random_linear: i.i.d. N(0, 1/d_new) entries
enum class CrossSpaceMap { rotation, random_linear };

CrossSpaceMap parse_cross_space_map(std::string_view name);
std::string_view to_string(CrossSpaceMap map);

/// A synthetic model upgrade. Noise scales are expected noise norms: each
/// coordinate draws N(0, σ²/d) before normalization.
struct UpgradeScenario {
  std::size_t num_classes = 50;
  std::size_t per_class_gallery = 20;
  std::size_t num_queries = 500;
  std::size_t per_class_train = 100;
  std::size_t d_old = 32;
  std::size_t d_new = 64;
  double sigma_old = 0.9;
  double sigma_new = 0.45;
  CrossSpaceMap cross_space_map = CrossSpaceMap::rotation;
  std::uint64_t seed = 7;

  /// Throws ConfigError on an invalid scenario.
  void validate() const;
};

struct UpgradeDataset {
  EmbeddingPairSet train;
  EmbeddingPairSet query;
  EmbeddingPairSet gallery;
};

/// Class prototypes on the unit sphere of the new space; new sample =
/// normalize(p + σ_new·ε), old sample = normalize(P·p + σ_old·ε′) with a fixed
/// seeded map P. Ids are assigned train, then gallery, then queries, so the
/// three sets are disjoint. Train and gallery rows are class-major; query i has
/// label i mod num_classes.
UpgradeDataset generate(const UpgradeScenario& scenario);

enum class ModelSide { old_model, new_model };

/// Evaluates one model against its own gallery embeddings.
EvalReport self_test(ModelSide side, const EmbeddingPairSet& query, const EmbeddingPairSet& gallery,
                     DistanceKind kind);

}  // namespace rankmerge
