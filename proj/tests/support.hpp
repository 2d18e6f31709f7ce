#pragma once

#include <doctest.h>

#include <filesystem>
#include <numeric>
#include <string>
#include <vector>

#include "rankmerge/embedding_store.hpp"
#include "rankmerge/random.hpp"

namespace testing {

inline rankmerge::LabeledEmbeddings random_set(std::size_t n, std::size_t dim, std::size_t num_labels,
                                               std::uint64_t seed, rankmerge::Id first_id = 0) {
  rankmerge::Rng rng(seed);
  std::vector<float> v(n * dim);
  for (auto& x : v) x = static_cast<float>(rng.normal());
  std::vector<rankmerge::Label> labels(n);
  std::vector<rankmerge::Id> ids(n);
  for (std::size_t i = 0; i < n; ++i) {
    labels[i] = static_cast<rankmerge::Label>(i % num_labels);
    ids[i] = first_id + i;
  }
  return {dim, std::move(v), std::move(labels), std::move(ids)};
}

/// Fresh empty directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& name)
      : path_(std::filesystem::temp_directory_path() / ("rankmerge_test_" + name)) {
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() { std::filesystem::remove_all(path_); }
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& leaf) const { return path_ / leaf; }

 private:
  std::filesystem::path path_;
};

}  // namespace testing
