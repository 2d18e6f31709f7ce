#include "rankmerge/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace rankmerge {

namespace {

std::span<const double> row_of(const Matrix& m, Eigen::Index i) {
  return {m.data() + i * m.cols(), static_cast<std::size_t>(m.cols())};
}

std::span<double> row_of(Matrix& m, Eigen::Index i) {
  return {m.data() + i * m.cols(), static_cast<std::size_t>(m.cols())};
}

bool needs_fresh_system(LossKind kind) {
  return kind == LossKind::cl_m || kind == LossKind::cmcl || kind == LossKind::cmcl_with_rho;
}

bool uses_cross_negatives(LossKind kind) {
  return kind == LossKind::cmcl || kind == LossKind::cmcl_with_rho;
}

// Adds one −log(A / (A + N + X)) term and its ∂/∂s contributions.
//   A: own positives, N: own negatives, X: the other system's negatives.
double add_term(std::size_t anchor, const Matrix& s_own, const MinedSets& own, Matrix& gs_own,
                const Matrix* s_cross, const MinedSets* cross, Matrix* gs_cross) {
  const auto i = static_cast<Eigen::Index>(anchor);
  double pos = 0.0, neg = 0.0, cross_neg = 0.0;
  for (std::size_t k : own.positives) pos += s_own(i, static_cast<Eigen::Index>(k));
  for (std::size_t k : own.negatives) neg += s_own(i, static_cast<Eigen::Index>(k));
  if (cross) {
    for (std::size_t k : cross->negatives) cross_neg += (*s_cross)(i, static_cast<Eigen::Index>(k));
  }
  const double denom = pos + neg + cross_neg;
  for (std::size_t k : own.positives) gs_own(i, static_cast<Eigen::Index>(k)) += 1.0 / denom - 1.0 / pos;
  for (std::size_t k : own.negatives) gs_own(i, static_cast<Eigen::Index>(k)) += 1.0 / denom;
  if (cross) {
    for (std::size_t k : cross->negatives) (*gs_cross)(i, static_cast<Eigen::Index>(k)) += 1.0 / denom;
  }
  return -std::log(pos / denom);
}

}  // namespace

LossKind parse_loss_kind(std::string_view name) {
  if (name == "rqt") return LossKind::rqt;
  if (name == "cl") return LossKind::cl;
  if (name == "cl_m") return LossKind::cl_m;
  if (name == "cmcl") return LossKind::cmcl;
  if (name == "cmcl_with_rho") return LossKind::cmcl_with_rho;
  throw ConfigError("unknown loss kind '" + std::string(name) + "'");
}

std::string_view to_string(LossKind kind) {
  switch (kind) {
    case LossKind::rqt: return "rqt";
    case LossKind::cl: return "cl";
    case LossKind::cl_m: return "cl_m";
    case LossKind::cmcl: return "cmcl";
    case LossKind::cmcl_with_rho: return "cmcl_with_rho";
  }
  return "?";
}

double distance_with_grad(std::span<const double> a, std::span<const double> b, DistanceKind kind,
                          std::span<double> grad_a) {
  if (a.size() != b.size() || grad_a.size() != a.size()) {
    throw std::invalid_argument("distance_with_grad: dimension mismatch");
  }
  if (kind == DistanceKind::l2) {
    double sq = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) sq += (a[k] - b[k]) * (a[k] - b[k]);
    const double d = std::sqrt(sq);
    for (std::size_t k = 0; k < a.size(); ++k) grad_a[k] = d > 0.0 ? (a[k] - b[k]) / d : 0.0;
    return d;
  }
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    dot += a[k] * b[k];
    na += a[k] * a[k];
    nb += b[k] * b[k];
  }
  if (na == 0.0 || nb == 0.0) {
    std::fill(grad_a.begin(), grad_a.end(), 0.0);
    return 1.0;
  }
  const double inv = 1.0 / std::sqrt(na * nb);
  const double cos = dot * inv;
  // ∂(1 − cos)/∂a = −(b/(|a||b|) − cos·a/|a|²)
  for (std::size_t k = 0; k < a.size(); ++k) grad_a[k] = -(b[k] * inv - cos * a[k] / na);
  return 1.0 - cos;
}

std::optional<MinedSets> mine_hard(std::size_t anchor, std::span<const double> distances_from_anchor,
                                   std::span<const Label> labels) {
  if (distances_from_anchor.size() != labels.size() || anchor >= labels.size()) {
    throw std::invalid_argument("mine_hard: size mismatch");
  }
  MinedSets sets;
  for (std::size_t j = 0; j < labels.size(); ++j) {
    if (j == anchor) continue;
    (labels[j] == labels[anchor] ? sets.positives : sets.negatives).push_back(j);
  }
  if (sets.positives.empty()) return std::nullopt;
  const auto d = distances_from_anchor;
  std::ranges::stable_sort(sets.positives, [&](std::size_t a, std::size_t b) { return d[a] > d[b]; });
  std::ranges::stable_sort(sets.negatives, [&](std::size_t a, std::size_t b) { return d[a] < d[b]; });
  sets.positives.resize((sets.positives.size() + 1) / 2);
  sets.negatives.resize((sets.negatives.size() + 1) / 2);
  return sets;
}

namespace {

// 1/|row|, with 0 for zero rows: a zero row has cosine 0 to everything and
// receives no gradient.
Eigen::VectorXd inverse_norms(const Matrix& m) {
  const Eigen::VectorXd n = m.rowwise().norm();
  return (n.array() > 0.0).select(n.cwiseInverse(), 0.0);
}

// All-pairs distances between rows of a and rows of b.
Matrix all_pairs(const Matrix& a, const Matrix& b, DistanceKind kind) {
  if (kind == DistanceKind::cosine) {
    const Matrix ahat = inverse_norms(a).asDiagonal() * a;
    const Matrix bhat = inverse_norms(b).asDiagonal() * b;
    return (1.0 - (ahat * bhat.transpose()).array()).matrix();
  }
  Matrix d(a.rows(), b.rows());
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    d.row(i) = (b.rowwise() - a.row(i)).rowwise().norm().transpose();
  }
  return d;
}

// Σ_j g(i, j) · ∂dist(a_i, b_j)/∂a_i for every row i.
Matrix grad_first_arg(const Matrix& a, const Matrix& b, const Matrix& d, const Matrix& g, DistanceKind kind) {
  if (kind == DistanceKind::cosine) {
    const Eigen::VectorXd ia = inverse_norms(a);
    const Matrix ahat = ia.asDiagonal() * a;
    const Matrix bhat = inverse_norms(b).asDiagonal() * b;
    const Eigen::VectorXd gc = (g.array() * (1.0 - d.array())).rowwise().sum();
    // ∂(1 − cos)/∂a = −(b̂ − cos·â)/|a|
    return -(ia.asDiagonal() * (g * bhat - gc.asDiagonal() * ahat));
  }
  const Matrix w = (d.array() > 0.0).select(g.array() / d.array(), 0.0).matrix();
  const Eigen::VectorXd wsum = w.rowwise().sum();
  return wsum.asDiagonal() * a - w * b;
}

}  // namespace

PairwiseDistances pairwise_distances(const EmbeddingBatch& batch, DistanceKind kind) {
  const Eigen::Index n = batch.rev.rows();
  if (batch.old.rows() != n || batch.fresh.rows() != n || static_cast<std::size_t>(n) != batch.labels.size()) {
    throw std::invalid_argument("pairwise_distances: batch row counts differ");
  }
  if (batch.rev.cols() != batch.old.cols()) {
    throw std::invalid_argument("pairwise_distances: reverse-transformed and old dims differ");
  }
  return {all_pairs(batch.rev, batch.old, kind), all_pairs(batch.fresh, batch.fresh, kind)};
}

MiningPlan mine_batch(const PairwiseDistances& distances, std::span<const Label> labels) {
  MiningPlan plan;
  const auto n = static_cast<Eigen::Index>(labels.size());
  for (Eigen::Index i = 0; i < n; ++i) {
    plan.backward.push_back(mine_hard(static_cast<std::size_t>(i), row_of(distances.backward, i), labels));
    plan.fresh.push_back(mine_hard(static_cast<std::size_t>(i), row_of(distances.fresh, i), labels));
  }
  return plan;
}

EmbeddingLoss contrastive_loss(LossKind kind, const EmbeddingBatch& batch, DistanceKind dist,
                               const MiningPlan& plan, const LossOptions& options) {
  return contrastive_loss(kind, batch, pairwise_distances(batch, dist), dist, plan, options);
}

EmbeddingLoss contrastive_loss(LossKind kind, const EmbeddingBatch& batch, const PairwiseDistances& d,
                               DistanceKind dist, const MiningPlan& plan, const LossOptions& options) {
  if (kind == LossKind::rqt) throw std::invalid_argument("contrastive_loss: rqt is not contrastive");
  const Eigen::Index n = batch.rev.rows();
  if (plan.backward.size() != static_cast<std::size_t>(n) || plan.fresh.size() != static_cast<std::size_t>(n)) {
    throw std::invalid_argument("contrastive_loss: mining plan does not match batch");
  }
  const Matrix s_back = (-d.backward.array()).exp().matrix();
  const Matrix s_fresh = (-d.fresh.array()).exp().matrix();
  Matrix gs_back = Matrix::Zero(n, n);
  Matrix gs_fresh = Matrix::Zero(n, n);
  const bool both = needs_fresh_system(kind);
  const bool cross = uses_cross_negatives(kind) && options.cross_negatives;

  EmbeddingLoss out;
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& pb = plan.backward[static_cast<std::size_t>(i)];
    const auto& pf = plan.fresh[static_cast<std::size_t>(i)];
    if (!pb || (both && !pf)) {
      ++out.skipped_anchors;
      continue;
    }
    ++out.scored_anchors;
    const auto a = static_cast<std::size_t>(i);
    if (!both) {
      total += add_term(a, s_back, *pb, gs_back, nullptr, nullptr, nullptr);
    } else if (!cross) {
      total += add_term(a, s_back, *pb, gs_back, nullptr, nullptr, nullptr);
      total += add_term(a, s_fresh, *pf, gs_fresh, nullptr, nullptr, nullptr);
    } else {
      total += add_term(a, s_back, *pb, gs_back, &s_fresh, &*pf, &gs_fresh);
      total += add_term(a, s_fresh, *pf, gs_fresh, &s_back, &*pb, &gs_back);
    }
  }
  if (out.scored_anchors == 0) throw std::invalid_argument("degenerate batch: every anchor was skipped");
  const double scale = 1.0 / static_cast<double>(out.scored_anchors);
  out.loss = total * scale;

  // ∂L/∂d = −s · ∂L/∂s; fresh distances depend on both of their arguments.
  const Matrix gd_back = (-scale * s_back.array() * gs_back.array()).matrix();
  const Matrix gd_fresh = (-scale * s_fresh.array() * gs_fresh.array()).matrix();
  out.grad_rev = grad_first_arg(batch.rev, batch.old, d.backward, gd_back, dist);
  const Matrix gd_fresh_t = gd_fresh.transpose();
  const Matrix d_fresh_t = d.fresh.transpose();
  out.grad_fresh = grad_first_arg(batch.fresh, batch.fresh, d.fresh, gd_fresh, dist) +
                   grad_first_arg(batch.fresh, batch.fresh, d_fresh_t, gd_fresh_t, dist);
  return out;
}

EmbeddingLoss alignment_loss(const Matrix& rev, const Matrix& old, DistanceKind dist) {
  if (rev.rows() != old.rows() || rev.cols() != old.cols()) {
    throw std::invalid_argument("alignment_loss: shape mismatch between transformed and old embeddings");
  }
  EmbeddingLoss out;
  out.grad_rev = Matrix::Zero(rev.rows(), rev.cols());
  const double scale = 1.0 / static_cast<double>(rev.rows());
  double total = 0.0;
  for (Eigen::Index i = 0; i < rev.rows(); ++i) {
    auto g = row_of(out.grad_rev, i);
    total += distance_with_grad(row_of(rev, i), row_of(old, i), dist, g);
    for (double& x : g) x *= scale;
  }
  out.loss = total * scale;
  out.scored_anchors = static_cast<std::size_t>(rev.rows());
  return out;
}

namespace {

void check_networks(LossKind kind, const MlpTransform& psi, const MlpTransform* rho, const ContrastiveBatch& batch) {
  if (kind == LossKind::cmcl_with_rho && !rho) throw std::invalid_argument("cmcl_with_rho requires a rho network");
  if (kind == LossKind::rqt && rho) throw std::invalid_argument("rqt trains psi alone");
  const auto new_dim = static_cast<std::size_t>(batch.new_embeddings.cols());
  const auto old_dim = static_cast<std::size_t>(batch.old_embeddings.cols());
  if (rho && rho->input_dim() != new_dim) throw std::invalid_argument("rho input dim != new embedding dim");
  const std::size_t psi_in = rho ? rho->output_dim() : new_dim;
  if (psi.input_dim() != psi_in) throw std::invalid_argument("psi input dim does not match its source");
  if (psi.output_dim() != old_dim) throw std::invalid_argument("psi output dim != old embedding dim");
  if (batch.old_embeddings.rows() != batch.new_embeddings.rows() ||
      static_cast<std::size_t>(batch.old_embeddings.rows()) != batch.labels.size()) {
    throw std::invalid_argument("batch row counts differ");
  }
}

}  // namespace

MiningPlan plan_for(LossKind kind, MlpTransform& psi, MlpTransform* rho, const ContrastiveBatch& batch,
                    DistanceKind dist) {
  check_networks(kind, psi, rho, batch);
  Matrix fresh = rho ? rho->forward(batch.new_embeddings).output : batch.new_embeddings;
  const Matrix rev = psi.forward(fresh).output;
  return mine_batch(pairwise_distances({rev, batch.old_embeddings, fresh, batch.labels}, dist), batch.labels);
}

LossResult evaluate_loss(LossKind kind, MlpTransform& psi, MlpTransform* rho, const ContrastiveBatch& batch,
                         DistanceKind dist, const MiningPlan* plan, const LossOptions& options) {
  check_networks(kind, psi, rho, batch);
  std::optional<ForwardResult> rho_fw;
  if (rho) rho_fw = rho->forward(batch.new_embeddings);
  const Matrix& fresh = rho ? rho_fw->output : batch.new_embeddings;
  ForwardResult psi_fw = psi.forward(fresh);

  EmbeddingLoss el;
  if (kind == LossKind::rqt) {
    el = alignment_loss(psi_fw.output, batch.old_embeddings, dist);
  } else {
    const EmbeddingBatch eb{psi_fw.output, batch.old_embeddings, fresh, batch.labels};
    const PairwiseDistances d = pairwise_distances(eb, dist);
    el = contrastive_loss(kind, eb, d, dist, plan ? *plan : mine_batch(d, batch.labels), options);
  }

  LossResult out;
  out.loss = el.loss;
  out.scored_anchors = el.scored_anchors;
  out.skipped_anchors = el.skipped_anchors;
  out.psi = psi.backward(psi_fw.cache, el.grad_rev);
  if (rho) {
    const Matrix g = el.grad_fresh + out.psi.input;
    out.rho = rho->backward(rho_fw->cache, g);
  }
  return out;
}

}  // namespace rankmerge
