#include "rankmerge/synthetic.hpp"

#include <cmath>
#include <string>
#include <vector>

#include "rankmerge/common.hpp"
#include "rankmerge/random.hpp"
#include "rankmerge/rank_merge.hpp"

namespace rankmerge {

namespace {

using Dense = std::vector<std::vector<double>>;

void normalize(std::vector<double>& v) {
  double sq = 0.0;
  for (double x : v) sq += x * x;
  const double inv = 1.0 / std::sqrt(sq);
  for (double& x : v) x *= inv;
}

std::vector<double> gaussian(Rng& rng, std::size_t d, double scale) {
  std::vector<double> v(d);
  for (double& x : v) x = scale * rng.normal();
  return v;
}

// d_old × d_new map from the new space to the old one.
Dense make_cross_map(const UpgradeScenario& s, Rng& rng) {
  Dense rows;
  if (s.cross_space_map == CrossSpaceMap::random_linear) {
    const double scale = 1.0 / std::sqrt(static_cast<double>(s.d_new));
    for (std::size_t i = 0; i < s.d_old; ++i) rows.push_back(gaussian(rng, s.d_new, scale));
    return rows;
  }
  // Modified Gram-Schmidt on Gaussian rows gives orthonormal rows.
  while (rows.size() < s.d_old) {
    auto v = gaussian(rng, s.d_new, 1.0);
    for (const auto& q : rows) {
      double dot = 0.0;
      for (std::size_t k = 0; k < v.size(); ++k) dot += v[k] * q[k];
      for (std::size_t k = 0; k < v.size(); ++k) v[k] -= dot * q[k];
    }
    double sq = 0.0;
    for (double x : v) sq += x * x;
    if (sq < 1e-12) continue;
    normalize(v);
    rows.push_back(std::move(v));
  }
  return rows;
}

struct Builder {
  std::vector<float> old_v, new_v;
  std::vector<Label> labels;
  std::vector<Id> ids;

  void add(Id id, Label label, const std::vector<double>& o, const std::vector<double>& n) {
    ids.push_back(id);
    labels.push_back(label);
    for (double x : o) old_v.push_back(static_cast<float>(x));
    for (double x : n) new_v.push_back(static_cast<float>(x));
  }

  EmbeddingPairSet finish(std::size_t d_old, std::size_t d_new) {
    return EmbeddingPairSet(LabeledEmbeddings(d_old, std::move(old_v), labels, ids),
                            LabeledEmbeddings(d_new, std::move(new_v), labels, ids));
  }
};

}  // namespace

CrossSpaceMap parse_cross_space_map(std::string_view name) {
  if (name == "rotation") return CrossSpaceMap::rotation;
  if (name == "random_linear") return CrossSpaceMap::random_linear;
  throw ConfigError("unknown cross_space_map '" + std::string(name) + "'");
}

std::string_view to_string(CrossSpaceMap map) {
  return map == CrossSpaceMap::rotation ? "rotation" : "random_linear";
}

void UpgradeScenario::validate() const {
  if (num_classes < 2) throw ConfigError("scenario.num_classes must be >= 2");
  if (per_class_gallery < 1 || num_queries < 1 || per_class_train < 1) {
    throw ConfigError("scenario counts must be >= 1");
  }
  if (d_old < 1 || d_new < 1) throw ConfigError("scenario dims must be >= 1");
  if (!(sigma_new > 0.0 && sigma_old > sigma_new)) {
    throw ConfigError("scenario requires sigma_old > sigma_new > 0");
  }
  if (cross_space_map == CrossSpaceMap::rotation && d_old > d_new) {
    throw ConfigError("cross_space_map=rotation requires d_old <= d_new");
  }
}

UpgradeDataset generate(const UpgradeScenario& s) {
  s.validate();
  Rng proto_rng(derive_seed(s.seed, 10));
  Rng map_rng(derive_seed(s.seed, 11));
  Rng noise_rng(derive_seed(s.seed, 12));

  Dense prototypes;
  for (std::size_t c = 0; c < s.num_classes; ++c) {
    auto p = gaussian(proto_rng, s.d_new, 1.0);
    normalize(p);
    prototypes.push_back(std::move(p));
  }
  const Dense cross = make_cross_map(s, map_rng);
  Dense mapped;
  for (const auto& p : prototypes) {
    std::vector<double> m(s.d_old, 0.0);
    for (std::size_t i = 0; i < s.d_old; ++i) {
      for (std::size_t k = 0; k < s.d_new; ++k) m[i] += cross[i][k] * p[k];
    }
    mapped.push_back(std::move(m));
  }

  const double new_scale = s.sigma_new / std::sqrt(static_cast<double>(s.d_new));
  const double old_scale = s.sigma_old / std::sqrt(static_cast<double>(s.d_old));
  Id next_id = 0;
  auto sample = [&](Builder& b, std::size_t c) {
    auto n = gaussian(noise_rng, s.d_new, new_scale);
    for (std::size_t k = 0; k < s.d_new; ++k) n[k] += prototypes[c][k];
    normalize(n);
    auto o = gaussian(noise_rng, s.d_old, old_scale);
    for (std::size_t k = 0; k < s.d_old; ++k) o[k] += mapped[c][k];
    normalize(o);
    b.add(next_id++, static_cast<Label>(c), o, n);
  };

  Builder train, gallery, query;
  for (std::size_t c = 0; c < s.num_classes; ++c) {
    for (std::size_t i = 0; i < s.per_class_train; ++i) sample(train, c);
  }
  for (std::size_t c = 0; c < s.num_classes; ++c) {
    for (std::size_t i = 0; i < s.per_class_gallery; ++i) sample(gallery, c);
  }
  for (std::size_t i = 0; i < s.num_queries; ++i) sample(query, i % s.num_classes);
  return {train.finish(s.d_old, s.d_new), query.finish(s.d_old, s.d_new), gallery.finish(s.d_old, s.d_new)};
}

EvalReport self_test(ModelSide side, const EmbeddingPairSet& query, const EmbeddingPairSet& gallery,
                     DistanceKind kind) {
  if (side == ModelSide::old_model) return evaluate_system(query.old_side(), gallery.old_side(), kind);
  return evaluate_system(query.new_side(), gallery.new_side(), kind);
}

}  // namespace rankmerge
