#pragma once

// Little-endian binary helpers and atomic file writes.

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <type_traits>

#include "svw/core/error.hpp"

namespace svw {

namespace fs = std::filesystem;

namespace io {

template <class U>
void put_le(std::string& out, U value) {
  static_assert(std::is_unsigned_v<U>);
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((value >> (8 * i)) & 0xFF));
}
inline void put_f64(std::string& out, double x) { put_le(out, std::bit_cast<std::uint64_t>(x)); }
inline void put_f32(std::string& out, float x) { put_le(out, std::bit_cast<std::uint32_t>(x)); }

class Reader {
 public:
  Reader(const std::string& bytes, std::string origin) : bytes_(bytes), origin_(std::move(origin)) {}

  template <class U>
  U get() {
    need(sizeof(U));
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      v |= static_cast<U>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(U);
    return v;
  }
  double f64() { return std::bit_cast<double>(get<std::uint64_t>()); }
  float f32() { return std::bit_cast<float>(get<std::uint32_t>()); }
  std::string raw(std::size_t n) {
    need(n);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }
  std::size_t remaining() const { return bytes_.size() - pos_; }
  const std::string& origin() const { return origin_; }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw DataError(origin_ + ": truncated file");
  }
  const std::string& bytes_;
  std::string origin_;
  std::size_t pos_ = 0;
};

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Writes through a temporary file and renames it into place.
inline void write_file_atomic(const fs::path& path, const std::string& bytes) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

}  // namespace io

}  // namespace svw
