#include "rankmerge/mlp.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "rankmerge/binary_io.hpp"
#include "rankmerge/random.hpp"

namespace rankmerge {

namespace {

constexpr char kCheckpointMagic[4] = {'B', 'M', 'C', 'K'};
constexpr std::uint16_t kCheckpointVersion = 1;

struct BatchStats {
  RowVector mean, var;
};

// Shared forward pass. With `stats` non-null, hidden blocks normalize with
// batch statistics and report them; otherwise running statistics are used.
Matrix run_blocks(const std::vector<MlpBlock>& blocks, double eps, const Matrix& batch,
                  std::vector<BatchStats>* stats, ForwardCache* cache) {
  Matrix x = batch;
  const auto n = static_cast<double>(batch.rows());
  for (const MlpBlock& b : blocks) {
    Matrix z = x * b.weight.transpose();
    z.rowwise() += b.bias;
    BlockCache bc;
    if (cache) bc.input = x;
    if (b.has_norm) {
      RowVector mu, var;
      if (stats) {
        mu = z.colwise().mean();
        var = (z.rowwise() - mu).array().square().colwise().sum().matrix() / n;
        stats->push_back({mu, var});
      } else {
        mu = b.running_mean;
        var = b.running_var;
      }
      const RowVector inv_std = (var.array() + eps).rsqrt().matrix();
      Matrix xhat = ((z.rowwise() - mu).array().rowwise() * inv_std.array()).matrix();
      Matrix y = (xhat.array().rowwise() * b.gamma.array()).matrix();
      y.rowwise() += b.beta;
      x = y.cwiseMax(0.0);
      if (cache) {
        bc.normalized = std::move(xhat);
        bc.inv_std = inv_std;
        bc.pre_activation = std::move(y);
      }
    } else {
      x = std::move(z);
    }
    if (cache) cache->blocks.push_back(std::move(bc));
  }
  return x;
}

void check_finite(const Matrix& m, const char* what) {
  if (!m.allFinite()) throw NumericError(std::string("non-finite values in ") + what);
}

}  // namespace

std::vector<double> MlpGradients::flatten() const {
  std::vector<double> out;
  auto append = [&](const auto& m) { out.insert(out.end(), m.data(), m.data() + m.size()); };
  for (const auto& g : blocks) {
    append(g.weight);
    append(g.bias);
    append(g.gamma);
    append(g.beta);
  }
  return out;
}

MlpTransform::MlpTransform(const MlpOptions& options)
    : bn_momentum_(options.bn_momentum), bn_eps_(options.bn_eps) {
  if (options.num_blocks < 1 || options.num_blocks > 5) {
    throw std::invalid_argument("MLP must have between 1 and 5 blocks");
  }
  if (options.input_dim == 0 || options.output_dim == 0) {
    throw std::invalid_argument("MLP dimensions must be >= 1");
  }
  const std::size_t hidden = std::max(options.input_dim, options.output_dim);
  Rng rng(options.seed);
  std::size_t in = options.input_dim;
  for (std::size_t k = 0; k < options.num_blocks; ++k) {
    const bool last = k + 1 == options.num_blocks;
    const std::size_t out = last ? options.output_dim : hidden;
    MlpBlock b;
    const double a = std::sqrt(6.0 / static_cast<double>(in + out));
    b.weight.resize(static_cast<Eigen::Index>(out), static_cast<Eigen::Index>(in));
    for (Eigen::Index i = 0; i < b.weight.size(); ++i) b.weight.data()[i] = rng.uniform(-a, a);
    b.bias = RowVector::Zero(static_cast<Eigen::Index>(out));
    b.has_norm = !last;
    if (b.has_norm) {
      b.gamma = RowVector::Ones(static_cast<Eigen::Index>(out));
      b.beta = RowVector::Zero(static_cast<Eigen::Index>(out));
      b.running_mean = RowVector::Zero(static_cast<Eigen::Index>(out));
      b.running_var = RowVector::Ones(static_cast<Eigen::Index>(out));
    }
    blocks_.push_back(std::move(b));
    in = out;
  }
}

MlpTransform::MlpTransform(std::vector<MlpBlock> blocks, double bn_momentum, double bn_eps)
    : blocks_(std::move(blocks)), bn_momentum_(bn_momentum), bn_eps_(bn_eps) {
  if (blocks_.empty() || blocks_.size() > 5) throw std::invalid_argument("MLP must have 1..5 blocks");
  for (std::size_t k = 0; k < blocks_.size(); ++k) {
    const MlpBlock& b = blocks_[k];
    const auto out = static_cast<Eigen::Index>(b.output_dim());
    if (b.weight.size() == 0 || b.bias.size() != out) throw std::invalid_argument("bad block shape");
    if (k > 0 && b.input_dim() != blocks_[k - 1].output_dim()) {
      throw std::invalid_argument("block dimensions do not chain");
    }
    const bool last = k + 1 == blocks_.size();
    if (b.has_norm == last) throw std::invalid_argument("only non-final blocks carry BatchNorm");
    if (b.has_norm) {
      if (b.gamma.size() != out || b.beta.size() != out || b.running_mean.size() != out ||
          b.running_var.size() != out) {
        throw std::invalid_argument("bad BatchNorm shape");
      }
      if ((b.running_var.array() <= 0.0).any()) throw std::invalid_argument("running variance must be > 0");
    }
  }
}

ForwardResult MlpTransform::forward(const Matrix& batch) {
  if (static_cast<std::size_t>(batch.cols()) != input_dim()) {
    throw std::invalid_argument("forward: batch has " + std::to_string(batch.cols()) +
                                " columns, network expects " + std::to_string(input_dim()));
  }
  ForwardResult result;
  result.cache.version = version_;
  if (mode_ == Mode::eval) {
    result.output = run_blocks(blocks_, bn_eps_, batch, nullptr, &result.cache);
    return result;
  }
  if (batch.rows() < 2) throw std::invalid_argument("forward: train mode needs a batch of at least 2");
  std::vector<BatchStats> stats;
  result.output = run_blocks(blocks_, bn_eps_, batch, &stats, &result.cache);
  result.cache.from_train_mode = true;

  const double n = static_cast<double>(batch.rows());
  std::size_t s = 0;
  for (MlpBlock& b : blocks_) {
    if (!b.has_norm) continue;
    const BatchStats& st = stats[s++];
    b.running_mean = (1.0 - bn_momentum_) * b.running_mean + bn_momentum_ * st.mean;
    b.running_var = (1.0 - bn_momentum_) * b.running_var + bn_momentum_ * (st.var * (n / (n - 1.0)));
  }
  return result;
}

Matrix MlpTransform::infer(const Matrix& batch) const {
  if (static_cast<std::size_t>(batch.cols()) != input_dim()) {
    throw std::invalid_argument("infer: dimension mismatch");
  }
  return run_blocks(blocks_, bn_eps_, batch, nullptr, nullptr);
}

MlpGradients MlpTransform::backward(const ForwardCache& cache, const Matrix& grad_output) const {
  if (!cache.from_train_mode) throw std::logic_error("backward: cache is not from a train-mode forward");
  if (cache.version != version_ || cache.blocks.size() != blocks_.size()) {
    throw std::logic_error("backward: stale cache (parameters changed since forward)");
  }
  if (static_cast<std::size_t>(grad_output.cols()) != output_dim() ||
      grad_output.rows() != cache.blocks.front().input.rows()) {
    throw std::invalid_argument("backward: grad_output shape mismatch");
  }
  MlpGradients grads;
  grads.blocks.resize(blocks_.size());
  Matrix g = grad_output;
  const double n = static_cast<double>(grad_output.rows());
  for (std::size_t k = blocks_.size(); k-- > 0;) {
    const MlpBlock& b = blocks_[k];
    const BlockCache& bc = cache.blocks[k];
    BlockGradients& out = grads.blocks[k];
    Matrix dz;
    if (b.has_norm) {
      const Matrix dy = (g.array() * (bc.pre_activation.array() > 0.0).cast<double>()).matrix();
      out.gamma = (dy.array() * bc.normalized.array()).colwise().sum().matrix();
      out.beta = dy.colwise().sum();
      const Matrix dxhat = (dy.array().rowwise() * b.gamma.array()).matrix();
      const RowVector sum_dxhat = dxhat.colwise().sum();
      const RowVector sum_dxhat_xhat = (dxhat.array() * bc.normalized.array()).colwise().sum().matrix();
      Matrix centered = n * dxhat;
      centered.rowwise() -= sum_dxhat;
      centered -= (bc.normalized.array().rowwise() * sum_dxhat_xhat.array()).matrix();
      dz = ((centered.array().rowwise() * bc.inv_std.array()) / n).matrix();
    } else {
      dz = g;
    }
    out.weight = dz.transpose() * bc.input;
    out.bias = dz.colwise().sum();
    g = dz * b.weight;
  }
  grads.input = std::move(g);
  return grads;
}

LabeledEmbeddings MlpTransform::transform(const LabeledEmbeddings& set) const {
  const Matrix out = infer(to_matrix(set));
  check_finite(out, "transformed embeddings");
  std::vector<float> v(static_cast<std::size_t>(out.size()));
  for (Eigen::Index i = 0; i < out.size(); ++i) v[static_cast<std::size_t>(i)] = static_cast<float>(out.data()[i]);
  return LabeledEmbeddings(output_dim(), std::move(v), {set.labels().begin(), set.labels().end()},
                           {set.ids().begin(), set.ids().end()});
}

std::vector<std::span<double>> MlpTransform::parameters() {
  std::vector<std::span<double>> out;
  auto view = [](auto& m) { return std::span<double>(m.data(), static_cast<std::size_t>(m.size())); };
  for (MlpBlock& b : blocks_) {
    out.push_back(view(b.weight));
    out.push_back(view(b.bias));
    if (b.has_norm) {
      out.push_back(view(b.gamma));
      out.push_back(view(b.beta));
    }
  }
  return out;
}

std::size_t MlpTransform::parameter_count() const {
  std::size_t n = 0;
  for (const MlpBlock& b : blocks_) {
    n += static_cast<std::size_t>(b.weight.size() + b.bias.size());
    if (b.has_norm) n += static_cast<std::size_t>(b.gamma.size() + b.beta.size());
  }
  return n;
}

Matrix to_matrix(const LabeledEmbeddings& set) {
  Matrix m(static_cast<Eigen::Index>(set.size()), static_cast<Eigen::Index>(set.dim()));
  const auto v = set.vectors();
  for (std::size_t i = 0; i < v.size(); ++i) m.data()[i] = v[i];
  return m;
}

void save_checkpoint(const MlpTransform& net, const std::filesystem::path& path) {
  io::LeWriter w;
  w.put_bytes({kCheckpointMagic, 4});
  w.put(kCheckpointVersion);
  w.put(net.bn_momentum());
  w.put(net.bn_eps());
  w.put(static_cast<std::uint32_t>(net.num_blocks()));
  for (const MlpBlock& b : net.blocks()) {
    w.put(static_cast<std::uint32_t>(b.input_dim()));
    w.put(static_cast<std::uint32_t>(b.output_dim()));
    w.put(static_cast<std::uint8_t>(b.has_norm ? 1 : 0));
  }
  auto put_all = [&](const auto& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) w.put(m.data()[i]);
  };
  for (const MlpBlock& b : net.blocks()) {
    put_all(b.weight);
    put_all(b.bias);
    if (b.has_norm) {
      put_all(b.gamma);
      put_all(b.beta);
      put_all(b.running_mean);
      put_all(b.running_var);
    }
  }
  io::write_file_atomic(path, w.bytes());
}

MlpTransform load_checkpoint(const std::filesystem::path& path) {
  const std::string bytes = io::read_file(path);
  io::LeReader r(bytes);
  if (r.get_bytes(4) != std::string_view(kCheckpointMagic, 4)) throw IoError(path.string() + ": bad magic");
  if (r.get<std::uint16_t>() != kCheckpointVersion) throw IoError(path.string() + ": unsupported version");
  const auto momentum = r.get<double>();
  const auto eps = r.get<double>();
  const auto count = r.get<std::uint32_t>();
  if (count < 1 || count > 5) throw IoError(path.string() + ": bad block count");
  struct Shape {
    std::uint32_t in, out;
    bool norm;
  };
  std::vector<Shape> shapes;
  for (std::uint32_t k = 0; k < count; ++k) {
    Shape s{r.get<std::uint32_t>(), r.get<std::uint32_t>(), r.get<std::uint8_t>() != 0};
    if (s.in == 0 || s.out == 0 || s.in > (1u << 16) || s.out > (1u << 16)) {
      throw IoError(path.string() + ": bad block dims");
    }
    shapes.push_back(s);
  }
  auto fill = [&](auto& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = r.get<double>();
  };
  std::vector<MlpBlock> blocks;
  for (const Shape& s : shapes) {
    MlpBlock b;
    b.weight.resize(s.out, s.in);
    b.bias.resize(s.out);
    fill(b.weight);
    fill(b.bias);
    b.has_norm = s.norm;
    if (s.norm) {
      for (RowVector* v : {&b.gamma, &b.beta, &b.running_mean, &b.running_var}) {
        v->resize(s.out);
        fill(*v);
      }
    }
    blocks.push_back(std::move(b));
  }
  if (r.remaining() != 0) throw IoError(path.string() + ": trailing bytes");
  try {
    MlpTransform net(std::move(blocks), momentum, eps);
    net.set_mode(Mode::eval);
    return net;
  } catch (const std::invalid_argument& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

}  // namespace rankmerge
