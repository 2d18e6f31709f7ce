#include "rankmerge/trainer.hpp"

#include <cmath>
#include <map>
#include <sstream>
#include <string>

#include "rankmerge/random.hpp"

namespace rankmerge {

namespace {

ContrastiveBatch gather(const Matrix& old_all, const Matrix& new_all, std::span<const Label> labels,
                        std::span<const std::size_t> rows) {
  ContrastiveBatch b;
  const auto n = static_cast<Eigen::Index>(rows.size());
  b.old_embeddings.resize(n, old_all.cols());
  b.new_embeddings.resize(n, new_all.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto r = static_cast<Eigen::Index>(rows[static_cast<std::size_t>(i)]);
    b.old_embeddings.row(i) = old_all.row(r);
    b.new_embeddings.row(i) = new_all.row(r);
    b.labels.push_back(labels[static_cast<std::size_t>(r)]);
  }
  return b;
}

class BatchSampler {
 public:
  BatchSampler(LossKind kind, std::span<const Label> labels, const TrainConfig& config, std::uint64_t seed)
      : kind_(kind), config_(config), rng_(seed), n_(labels.size()) {
    std::map<Label, std::vector<std::size_t>> by_label;
    for (std::size_t i = 0; i < labels.size(); ++i) by_label[labels[i]].push_back(i);
    for (auto& [label, rows] : by_label) {
      if (rows.size() >= 2) classes_.push_back(std::move(rows));
    }
    if (kind_ != LossKind::rqt && classes_.size() < 2) {
      throw std::invalid_argument("contrastive training needs at least 2 classes with 2+ samples each");
    }
    if (n_ < 2) throw std::invalid_argument("training set needs at least 2 samples");
  }

  std::size_t batches_per_epoch() const { return std::max<std::size_t>(1, n_ / config_.batch_size); }

  /// Shuffles for a new epoch (rqt only).
  void start_epoch() {
    if (kind_ != LossKind::rqt) return;
    order_.resize(n_);
    for (std::size_t i = 0; i < n_; ++i) order_[i] = i;
    rng_.shuffle(std::span<std::size_t>(order_));
  }

  std::vector<std::size_t> batch(std::size_t index) {
    if (kind_ == LossKind::rqt) {
      const std::size_t size = std::min(config_.batch_size, n_);
      auto first = order_.begin() + static_cast<std::ptrdiff_t>(index * size);
      return {first, first + static_cast<std::ptrdiff_t>(size)};
    }
    const std::size_t p = std::min(config_.classes_per_batch, classes_.size());
    const std::size_t k = config_.batch_size / config_.classes_per_batch;
    std::vector<std::size_t> class_order(classes_.size());
    for (std::size_t i = 0; i < class_order.size(); ++i) class_order[i] = i;
    partial_shuffle(class_order, p);
    std::vector<std::size_t> rows;
    for (std::size_t c = 0; c < p; ++c) {
      std::vector<std::size_t> members = classes_[class_order[c]];
      const std::size_t take = std::min(k, members.size());
      partial_shuffle(members, take);
      rows.insert(rows.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(take));
    }
    return rows;
  }

 private:
  // Uniform sample without replacement into the first `count` slots.
  void partial_shuffle(std::vector<std::size_t>& v, std::size_t count) {
    for (std::size_t i = 0; i < count; ++i) {
      const auto j = i + static_cast<std::size_t>(rng_.uniform_index(v.size() - i));
      std::swap(v[i], v[j]);
    }
  }

  LossKind kind_;
  const TrainConfig& config_;
  Rng rng_;
  std::size_t n_;
  std::vector<std::vector<std::size_t>> classes_;
  std::vector<std::size_t> order_;
};

MlpOptions network_options(std::size_t in, std::size_t out, std::size_t blocks, const TrainConfig& c,
                           std::uint64_t seed) {
  return {.input_dim = in, .output_dim = out, .num_blocks = blocks, .bn_momentum = c.bn_momentum,
          .bn_eps = c.bn_eps, .seed = seed};
}

}  // namespace

FitResult fit(LossKind kind, const EmbeddingPairSet& train, const TrainConfig& config, DistanceKind dist) {
  config.validate();
  const std::size_t d_old = train.old_side().dim();
  const std::size_t d_new = train.new_side().dim();
  const bool with_rho = kind == LossKind::cmcl_with_rho;

  FitResult result{
      MlpTransform(network_options(d_new, d_old, config.psi_blocks, config, derive_seed(config.seed, 1))),
      std::nullopt,
      {}};
  if (with_rho) {
    result.rho.emplace(network_options(d_new, d_new, config.rho_blocks, config, derive_seed(config.seed, 2)));
  }
  MlpTransform& psi = result.psi;
  MlpTransform* rho = result.rho ? &*result.rho : nullptr;
  AdamState psi_state(psi);
  std::optional<AdamState> rho_state;
  if (rho) rho_state.emplace(*rho);

  const Matrix old_all = to_matrix(train.old_side());
  const Matrix new_all = to_matrix(train.new_side());
  BatchSampler sampler(kind, train.old_side().labels(), config, derive_seed(config.seed, 3));

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const double lr = cosine_lr(config.lr0, epoch, config.epochs);
    sampler.start_epoch();
    double loss_sum = 0.0;
    std::size_t skipped = 0;
    const std::size_t batches = sampler.batches_per_epoch();
    for (std::size_t b = 0; b < batches; ++b) {
      const auto rows = sampler.batch(b);
      const ContrastiveBatch batch = gather(old_all, new_all, train.old_side().labels(), rows);
      LossResult step = evaluate_loss(kind, psi, rho, batch, dist);
      if (!std::isfinite(step.loss)) {
        throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " + std::to_string(b));
      }
      try {
        adam_step(psi, step.psi, psi_state, lr, config);
        if (rho) adam_step(*rho, *step.rho, *rho_state, lr, config);
      } catch (const NumericError& e) {
        throw NumericError(std::string(e.what()) + " (epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(b) + ")");
      }
      loss_sum += step.loss;
      skipped += step.skipped_anchors;
    }
    result.history.push_back({epoch, loss_sum / static_cast<double>(batches), skipped, lr});
  }
  psi.set_mode(Mode::eval);
  if (rho) rho->set_mode(Mode::eval);
  return result;
}

std::string training_log_csv(const std::vector<EpochLog>& history) {
  std::ostringstream out;
  out.precision(17);
  out << "epoch,mean_loss,skipped_anchors,lr\n";
  for (const auto& e : history) out << e.epoch << ',' << e.mean_loss << ',' << e.skipped_anchors << ',' << e.lr << '\n';
  return out.str();
}

}  // namespace rankmerge
