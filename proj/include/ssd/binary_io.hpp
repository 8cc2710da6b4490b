#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ssd/error.hpp"

namespace ssd::binary {

template <typename U>
constexpr U byteswap(U v) {
  U out = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    out = static_cast<U>((out << 8) | (v & 0xFF));
    v = static_cast<U>(v >> 8);
  }
  return out;
}

/// Little-endian byte sink for the checkpoint and importance formats.
class Writer {
 public:
  void raw(std::string_view bytes) { buf_.insert(buf_.end(), bytes.begin(), bytes.end()); }

  void u32(std::uint32_t v) { put(v); }
  void u64(std::uint64_t v) { put(v); }
  void f64(double v) { put(std::bit_cast<std::uint64_t>(v)); }
  void f64s(std::span<const double> vs) {
    for (double v : vs) f64(v);
  }

  const std::vector<char>& bytes() const { return buf_; }

 private:
  template <typename U>
  void put(U v) {
    if constexpr (std::endian::native == std::endian::big) v = byteswap(v);
    char tmp[sizeof(U)];
    std::memcpy(tmp, &v, sizeof(U));
    buf_.insert(buf_.end(), tmp, tmp + sizeof(U));
  }

  std::vector<char> buf_;
};

/// Bounds-checked reader; running off the end raises Errc::malformed_file.
class Reader {
 public:
  Reader(std::span<const char> bytes, std::string what) : bytes_(bytes), what_(std::move(what)) {}

  void expect_magic(std::string_view magic) {
    need(magic.size(), "magic");
    if (std::string_view(bytes_.data() + pos_, magic.size()) != magic)
      throw Error(Errc::malformed_file, what_ + ": bad magic, expected \"" + std::string(magic) + "\"");
    pos_ += magic.size();
  }

  std::uint32_t u32(const char* field) { return get<std::uint32_t>(field); }
  std::uint64_t u64(const char* field) { return get<std::uint64_t>(field); }
  double f64(const char* field) { return std::bit_cast<double>(get<std::uint64_t>(field)); }

  std::vector<double> f64s(std::uint64_t count, const char* field) {
    if (count > remaining() / 8)
      throw Error(Errc::malformed_file, what_ + ": truncated while reading " + field + " (" +
                                            std::to_string(count) + " values declared, " +
                                            std::to_string(remaining() / 8) + " present)");
    std::vector<double> out(static_cast<std::size_t>(count));
    for (auto& v : out) v = f64(field);
    return out;
  }

  std::size_t remaining() const { return bytes_.size() - pos_; }

  void expect_end() const {
    if (remaining() != 0)
      throw Error(Errc::malformed_file, what_ + ": " + std::to_string(remaining()) + " trailing bytes");
  }

 private:
  void need(std::size_t n, const char* field) const {
    if (remaining() < n) throw Error(Errc::malformed_file, what_ + ": truncated while reading " + field);
  }

  template <typename U>
  U get(const char* field) {
    need(sizeof(U), field);
    U v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(U));
    pos_ += sizeof(U);
    if constexpr (std::endian::native == std::endian::big) v = byteswap(v);
    return v;
  }

  std::span<const char> bytes_;
  std::string what_;
  std::size_t pos_ = 0;
};

inline std::vector<char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::io_failure, "cannot open " + path.string() + " for reading");
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw Error(Errc::io_failure, "read failed for " + path.string());
  return bytes;
}

inline void write_file(const std::filesystem::path& path, std::span<const char> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::io_failure, "cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(Errc::io_failure, "write failed for " + path.string());
}

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a(std::span<const char> bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : bytes) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t fnv1a(std::string_view s) { return fnv1a(std::span<const char>(s.data(), s.size())); }

}  // namespace ssd::binary
