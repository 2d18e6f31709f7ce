#pragma once

#include <bit>
#include <concepts>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <string_view>

#include "rankmerge/common.hpp"

namespace rankmerge::io {

/// Appends fixed-width values to a byte buffer in little-endian order.
class LeWriter {
 public:
  template <typename T>
    requires std::integral<T> || std::floating_point<T>
  void put(T value) {
    using U = std::conditional_t<sizeof(T) == 1, std::uint8_t,
              std::conditional_t<sizeof(T) == 2, std::uint16_t,
              std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>>>;
    auto bits = std::bit_cast<U>(value);
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      bytes_.push_back(static_cast<char>(bits & 0xFFu));
      if constexpr (sizeof(T) > 1) bits = static_cast<U>(bits >> 8);
    }
  }

  void put_bytes(std::string_view raw) { bytes_.append(raw); }

  const std::string& bytes() const { return bytes_; }

 private:
  std::string bytes_;
};

/// Reads little-endian values from a byte buffer; throws IoError on underrun.
class LeReader {
 public:
  explicit LeReader(std::string_view bytes) : bytes_(bytes) {}

  template <typename T>
    requires std::integral<T> || std::floating_point<T>
  T get() {
    using U = std::conditional_t<sizeof(T) == 1, std::uint8_t,
              std::conditional_t<sizeof(T) == 2, std::uint16_t,
              std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>>>;
    if (remaining() < sizeof(T)) throw IoError("unexpected end of file");
    U bits = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      bits |= static_cast<U>(static_cast<U>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i));
    }
    pos_ += sizeof(T);
    return std::bit_cast<T>(bits);
  }

  std::string_view get_bytes(std::size_t n) {
    if (remaining() < n) throw IoError("unexpected end of file");
    auto out = bytes_.substr(pos_, n);
    pos_ += n;
    return out;
  }

  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

std::string read_file(const std::filesystem::path& path);

/// Writes to a sibling temp file and renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

}  // namespace rankmerge::io
