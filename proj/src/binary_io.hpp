#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <type_traits>

#include "bopn/data_io.hpp"

namespace bopn::detail {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

template <typename T>
T byteswap_if_big(T value) {
  if constexpr (std::endian::native == std::endian::big) {
    using U = std::conditional_t<sizeof(T) == 2, std::uint16_t,
                                 std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>>;
    auto bits = std::bit_cast<U>(value);
    U swapped = 0;
    for (std::size_t k = 0; k < sizeof(U); ++k) swapped = (swapped << 8) | ((bits >> (8 * k)) & 0xff);
    return std::bit_cast<T>(swapped);
  } else {
    return value;
  }
}

class BinaryWriter {
 public:
  explicit BinaryWriter(const std::filesystem::path& path)
      : path_(path), out_(path, std::ios::binary | std::ios::trunc) {
    if (!out_) throw IoError("cannot write " + path.string());
  }

  void bytes(const void* data, std::size_t size) {
    out_.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
    if (!out_) throw IoError("write failed: " + path_.string());
  }
  template <typename T>
  void put(T value) {
    const T le = byteswap_if_big(value);
    bytes(&le, sizeof(T));
  }
  void close() {
    out_.close();
    if (!out_) throw IoError("write failed: " + path_.string());
  }

 private:
  std::filesystem::path path_;
  std::ofstream out_;
};

class BinaryReader {
 public:
  explicit BinaryReader(const std::filesystem::path& path)
      : path_(path), in_(path, std::ios::binary) {
    if (!in_) throw IoError("cannot read " + path.string());
  }

  void bytes(void* data, std::size_t size) {
    in_.read(static_cast<char*>(data), static_cast<std::streamsize>(size));
    if (static_cast<std::size_t>(in_.gcount()) != size)
      throw ValidationError(path_.string() + ": file is truncated");
  }
  template <typename T>
  T get() {
    T value;
    bytes(&value, sizeof(T));
    return byteswap_if_big(value);
  }
  bool at_end() { return in_.peek() == std::char_traits<char>::eof(); }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  std::ifstream in_;
};

}  // namespace bopn::detail
