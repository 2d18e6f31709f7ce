#include <cmath>

#include "rankmerge/common.hpp"
#include "rankmerge/synthetic.hpp"
#include "rankmerge/trainer.hpp"
#include "support.hpp"

using namespace rankmerge;

namespace {

// old = normalize(A·new) for a fixed random A, no noise.
EmbeddingPairSet linear_pairs(std::size_t n, std::size_t d_new, std::size_t d_old, std::uint64_t seed) {
  Rng rng(seed);
  Matrix a(d_old, d_new);
  for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = rng.normal();
  std::vector<float> nv, ov;
  std::vector<Label> labels;
  std::vector<Id> ids;
  for (std::size_t i = 0; i < n; ++i) {
    Eigen::VectorXd x(d_new);
    for (auto& v : x) v = rng.normal();
    x.normalize();
    const Eigen::VectorXd y = (a * x).normalized();
    for (double v : x) nv.push_back(static_cast<float>(v));
    for (double v : y) ov.push_back(static_cast<float>(v));
    labels.push_back(static_cast<Label>(i % 8));
    ids.push_back(i);
  }
  return {LabeledEmbeddings(d_old, ov, labels, ids), LabeledEmbeddings(d_new, nv, labels, ids)};
}

double mean_loss(const std::vector<EpochLog>& h, std::size_t from, std::size_t count) {
  double s = 0.0;
  for (std::size_t e = from; e < from + count; ++e) s += h[e].mean_loss;
  return s / static_cast<double>(count);
}

}  // namespace

TEST_CASE("rqt recovers a noiseless linear map within 50 epochs") {
  const auto pairs = linear_pairs(512, 8, 4, 5);
  TrainConfig cfg;
  cfg.lr0 = 1e-2;
  cfg.psi_blocks = 1;
  cfg.seed = 1;
  const auto fitted = fit(LossKind::rqt, pairs, cfg, DistanceKind::cosine);
  REQUIRE(fitted.history.size() == 50);
  CHECK(fitted.history.back().mean_loss < 1e-3);
  CHECK(fitted.psi.mode() == Mode::eval);
  CHECK(!fitted.rho);
}

TEST_CASE("training is deterministic for a fixed seed") {
  const auto pairs = linear_pairs(200, 6, 4, 9);
  TrainConfig cfg;
  cfg.epochs = 5;
  cfg.lr0 = 1e-3;
  cfg.batch_size = 40;
  cfg.classes_per_batch = 4;
  cfg.seed = 3;
  for (auto kind : {LossKind::rqt, LossKind::cmcl, LossKind::cmcl_with_rho}) {
    const auto a = fit(kind, pairs, cfg, DistanceKind::cosine);
    const auto b = fit(kind, pairs, cfg, DistanceKind::cosine);
    REQUIRE(a.history.size() == b.history.size());
    for (std::size_t e = 0; e < a.history.size(); ++e) {
      CHECK(a.history[e].mean_loss == b.history[e].mean_loss);
      CHECK(a.history[e].lr == b.history[e].lr);
    }
    CHECK(a.psi.blocks()[0].weight == b.psi.blocks()[0].weight);
    CHECK(a.rho.has_value() == (kind == LossKind::cmcl_with_rho));
  }
}

TEST_CASE("kinds sharing a seed start from the same psi") {
  const auto pairs = linear_pairs(200, 6, 4, 9);
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.lr0 = 1e-300;  // below one ulp of every weight
  cfg.batch_size = 40;
  cfg.classes_per_batch = 4;
  cfg.seed = 3;
  const auto a = fit(LossKind::cl, pairs, cfg, DistanceKind::cosine);
  const auto b = fit(LossKind::cmcl, pairs, cfg, DistanceKind::cosine);
  CHECK(a.psi.blocks()[0].weight == b.psi.blocks()[0].weight);
}

TEST_CASE("loss trends down on the desk scenario") {
  const auto data = generate(UpgradeScenario{});
  TrainConfig cfg;
  cfg.epochs = 15;
  cfg.lr0 = 1e-3;
  cfg.seed = 7;
  const auto fitted = fit(LossKind::cmcl, data.train, cfg, DistanceKind::cosine);
  CHECK(mean_loss(fitted.history, 10, 5) < mean_loss(fitted.history, 0, 5));
}

TEST_CASE("a diverging run stops with a numeric error") {
  const auto pairs = linear_pairs(128, 6, 4, 2);
  TrainConfig cfg;
  cfg.epochs = 50;
  cfg.lr0 = 1e300;
  cfg.seed = 1;
  CHECK_THROWS_AS(fit(LossKind::rqt, pairs, cfg, DistanceKind::l2), NumericError);
}

TEST_CASE("training log csv") {
  const std::vector<EpochLog> h{{0, 1.5, 2, 1e-3}, {1, 0.75, 0, 5e-4}};
  const std::string csv = training_log_csv(h);
  CHECK(csv.starts_with("epoch,mean_loss,skipped_anchors,lr\n0,1.5,2,0.001"));
}
