#pragma once

// Little-endian binary encoding helpers shared by the on-disk formats.
// Values are serialized byte by byte, so the encoding is host-order
// independent.

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "t2v/errors.hpp"

namespace t2v::detail {

inline void put_bytes(std::string& out, const void* data, std::size_t n) {
  out.append(static_cast<const char*>(data), n);
}

inline void put_u8(std::string& out, std::uint8_t v) { put_bytes(out, &v, 1); }

inline void put_u16(std::string& out, std::uint16_t v) {
  const std::uint8_t b[2] = {static_cast<std::uint8_t>(v),
                             static_cast<std::uint8_t>(v >> 8)};
  put_bytes(out, b, 2);
}

inline void put_u32(std::string& out, std::uint32_t v) {
  const std::uint8_t b[4] = {
      static_cast<std::uint8_t>(v), static_cast<std::uint8_t>(v >> 8),
      static_cast<std::uint8_t>(v >> 16), static_cast<std::uint8_t>(v >> 24)};
  put_bytes(out, b, 4);
}

inline void put_f32(std::string& out, float v) {
  put_u32(out, std::bit_cast<std::uint32_t>(v));
}

inline void put_f64(std::string& out, double v) {
  const std::uint64_t u = std::bit_cast<std::uint64_t>(v);
  put_u32(out, static_cast<std::uint32_t>(u));
  put_u32(out, static_cast<std::uint32_t>(u >> 32));
}

/// Sequential reader over an in-memory byte buffer with format-error
/// reporting. `context` names the file/format in error messages.
class ByteReader {
public:
  ByteReader(const std::string& bytes, std::string context)
      : bytes_(bytes), context_(std::move(context)) {}

  std::size_t remaining() const { return bytes_.size() - pos_; }

  void read_raw(void* out, std::size_t n, const char* field) {
    if (remaining() < n)
      throw DataError(context_ + ": truncated while reading " + field);
    std::memcpy(out, bytes_.data() + pos_, n);
    pos_ += n;
  }

  std::uint8_t u8(const char* field) {
    std::uint8_t v;
    read_raw(&v, 1, field);
    return v;
  }

  std::uint16_t u16(const char* field) {
    std::uint8_t b[2];
    read_raw(b, 2, field);
    return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
  }

  std::uint32_t u32(const char* field) {
    std::uint8_t b[4];
    read_raw(b, 4, field);
    return static_cast<std::uint32_t>(b[0]) |
           (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) |
           (static_cast<std::uint32_t>(b[3]) << 24);
  }

  float f32(const char* field) { return std::bit_cast<float>(u32(field)); }

  double f64(const char* field) {
    const std::uint64_t lo = u32(field);
    const std::uint64_t hi = u32(field);
    return std::bit_cast<double>(lo | (hi << 32));
  }

  void expect_magic(const char magic[4]) {
    char got[4];
    read_raw(got, 4, "magic");
    if (std::memcmp(got, magic, 4) != 0)
      throw DataError(context_ + ": bad magic (expected \"" +
                      std::string(magic, 4) + "\")");
  }

  void expect_exhausted() {
    if (remaining() != 0)
      throw DataError(context_ + ": " + std::to_string(remaining()) +
                      " trailing bytes after payload");
  }

  const std::string& context() const { return context_; }

private:
  const std::string& bytes_;
  std::string context_;
  std::size_t pos_ = 0;
};

std::string read_file_bytes(const std::string& path);
void write_file_bytes(const std::string& path, const std::string& bytes);

inline std::string read_file_bytes(const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) throw DataError("cannot open file: " + path);
  std::string bytes;
  char buf[1 << 16];
  std::size_t n;
  while ((n = std::fread(buf, 1, sizeof buf, f)) > 0) bytes.append(buf, n);
  const bool bad = std::ferror(f);
  std::fclose(f);
  if (bad) throw DataError("read failure: " + path);
  return bytes;
}

inline void write_file_bytes(const std::string& path,
                             const std::string& bytes) {
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw DataError("cannot open file for writing: " + path);
  const std::size_t n = std::fwrite(bytes.data(), 1, bytes.size(), f);
  const bool bad = (n != bytes.size()) || std::fclose(f) != 0;
  if (bad) throw DataError("write failure: " + path);
}

}  // namespace t2v::detail
