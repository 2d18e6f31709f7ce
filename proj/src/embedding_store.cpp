#include "rankmerge/embedding_store.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>
#include <string>
#include <unordered_set>

#include "rankmerge/binary_io.hpp"
#include "rankmerge/random.hpp"

namespace rankmerge {

LabeledEmbeddings::LabeledEmbeddings(std::size_t dim, std::vector<float> vectors,
                                     std::vector<Label> labels, std::vector<Id> ids)
    : dim_(dim), vectors_(std::move(vectors)), labels_(std::move(labels)), ids_(std::move(ids)) {
  if (dim_ == 0) throw std::invalid_argument("embedding dim must be >= 1");
  if (ids_.empty()) throw std::invalid_argument("embedding set must have at least one row");
  if (labels_.size() != ids_.size()) throw std::invalid_argument("labels/ids length mismatch");
  if (vectors_.size() != ids_.size() * dim_) {
    throw std::invalid_argument("vector payload size does not match count x dim");
  }
  for (std::size_t i = 0; i < vectors_.size(); ++i) {
    if (!std::isfinite(vectors_[i])) {
      throw std::invalid_argument("non-finite entry in row " + std::to_string(i / dim_));
    }
  }
  std::unordered_set<Id> seen;
  seen.reserve(ids_.size());
  for (Id id : ids_) {
    if (!seen.insert(id).second) throw std::invalid_argument("duplicate id " + std::to_string(id));
  }
}

LabeledEmbeddings LabeledEmbeddings::subset(std::span<const std::size_t> rows) const {
  std::vector<float> v;
  std::vector<Label> l;
  std::vector<Id> i;
  v.reserve(rows.size() * dim_);
  l.reserve(rows.size());
  i.reserve(rows.size());
  for (std::size_t r : rows) {
    if (r >= size()) throw std::out_of_range("subset row out of range");
    auto src = row(r);
    v.insert(v.end(), src.begin(), src.end());
    l.push_back(labels_[r]);
    i.push_back(ids_[r]);
  }
  return LabeledEmbeddings(dim_, std::move(v), std::move(l), std::move(i));
}

EmbeddingPairSet::EmbeddingPairSet(LabeledEmbeddings old_side, LabeledEmbeddings new_side)
    : old_(std::move(old_side)), new_(std::move(new_side)) {
  if (old_.size() != new_.size()) throw std::invalid_argument("paired sets differ in size");
  if (!std::ranges::equal(old_.ids(), new_.ids())) {
    throw std::invalid_argument("paired sets differ in ids or id order");
  }
  if (!std::ranges::equal(old_.labels(), new_.labels())) {
    throw std::invalid_argument("paired sets differ in labels");
  }
}

void save(const LabeledEmbeddings& set, const std::filesystem::path& path) {
  io::LeWriter w;
  w.put_bytes({kEmbeddingMagic, 4});
  w.put(kEmbeddingVersion);
  w.put(static_cast<std::uint32_t>(set.dim()));
  w.put(static_cast<std::uint64_t>(set.size()));
  for (std::size_t i = 0; i < set.size(); ++i) {
    w.put(static_cast<std::uint64_t>(set.ids()[i]));
    w.put(static_cast<std::uint32_t>(set.labels()[i]));
    for (float x : set.row(i)) w.put(x);
  }
  io::write_file_atomic(path, w.bytes());
}

LabeledEmbeddings load(const std::filesystem::path& path) {
  const std::string bytes = io::read_file(path);
  io::LeReader r(bytes);
  if (bytes.size() < kEmbeddingHeaderBytes) throw IoError(path.string() + ": truncated header");
  if (r.get_bytes(4) != std::string_view(kEmbeddingMagic, 4)) {
    throw IoError(path.string() + ": bad magic");
  }
  const auto version = r.get<std::uint16_t>();
  if (version != kEmbeddingVersion) {
    throw IoError(path.string() + ": unsupported version " + std::to_string(version));
  }
  const auto dim = r.get<std::uint32_t>();
  const auto count = r.get<std::uint64_t>();
  if (dim == 0 || count == 0) throw IoError(path.string() + ": empty dimension or count");
  const std::uint64_t record = 8 + 4 + 4ULL * dim;
  if (count > r.remaining() / record || count * record != r.remaining()) {
    throw IoError(path.string() + ": payload size mismatch");
  }

  std::vector<float> vectors;
  std::vector<Label> labels;
  std::vector<Id> ids;
  vectors.reserve(count * dim);
  labels.reserve(count);
  ids.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    ids.push_back(r.get<std::uint64_t>());
    labels.push_back(r.get<std::uint32_t>());
    for (std::uint32_t k = 0; k < dim; ++k) vectors.push_back(r.get<float>());
  }
  try {
    return LabeledEmbeddings(dim, std::move(vectors), std::move(labels), std::move(ids));
  } catch (const std::invalid_argument& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

void export_csv(const LabeledEmbeddings& set, const std::filesystem::path& path) {
  std::ostringstream out;
  out.precision(9);
  out << "id,label";
  for (std::size_t k = 0; k < set.dim(); ++k) out << ",v" << k;
  out << '\n';
  for (std::size_t i = 0; i < set.size(); ++i) {
    out << set.ids()[i] << ',' << set.labels()[i];
    for (float x : set.row(i)) out << ',' << x;
    out << '\n';
  }
  io::write_file_atomic(path, out.str());
}

QueryGallerySplit split(const LabeledEmbeddings& set, double query_fraction, std::uint64_t seed) {
  if (!(query_fraction > 0.0 && query_fraction < 1.0)) {
    throw std::invalid_argument("query_fraction must lie in (0, 1)");
  }
  std::map<Label, std::vector<std::size_t>> by_label;
  for (std::size_t i = 0; i < set.size(); ++i) by_label[set.labels()[i]].push_back(i);

  const auto n = static_cast<double>(set.size());
  const auto total = static_cast<std::size_t>(std::round(query_fraction * n));
  if (total == 0 || total >= set.size()) {
    throw std::invalid_argument("query_fraction leaves the query or gallery part empty");
  }

  // Largest-remainder apportionment of `total` across labels.
  struct Share {
    Label label;
    std::size_t quota;
    double remainder;
  };
  std::vector<Share> shares;
  std::size_t assigned = 0;
  for (const auto& [label, rows] : by_label) {
    const double exact = query_fraction * static_cast<double>(rows.size());
    const auto base = static_cast<std::size_t>(std::floor(exact));
    shares.push_back({label, base, exact - static_cast<double>(base)});
    assigned += base;
  }
  std::vector<std::size_t> order(shares.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::ranges::stable_sort(order, [&](std::size_t a, std::size_t b) {
    return shares[a].remainder > shares[b].remainder;
  });
  for (std::size_t k = 0; assigned < total; ++k) {
    ++shares[order[k % order.size()]].quota;
    ++assigned;
  }

  Rng rng(seed);
  std::vector<bool> is_query(set.size(), false);
  for (const auto& share : shares) {
    auto rows = by_label.at(share.label);
    if (share.quota >= rows.size()) {
      throw std::invalid_argument("query_fraction leaves label " + std::to_string(share.label) +
                                  " with no gallery items");
    }
    rng.shuffle(std::span<std::size_t>(rows));
    for (std::size_t k = 0; k < share.quota; ++k) is_query[rows[k]] = true;
  }

  std::vector<std::size_t> query_rows, gallery_rows;
  for (std::size_t i = 0; i < set.size(); ++i) (is_query[i] ? query_rows : gallery_rows).push_back(i);
  return {set.subset(query_rows), set.subset(gallery_rows)};
}

}  // namespace rankmerge
