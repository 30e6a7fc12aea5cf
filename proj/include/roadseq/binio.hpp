#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "roadseq/error.hpp"

namespace roadseq::binio {

// Little-endian primitives for the binary feature and checkpoint formats.
// Byte-wise codecs keep the files identical regardless of host endianness.

inline void put_u32(std::string& out, std::uint32_t x) {
  out.push_back(static_cast<char>(x & 0xff));
  out.push_back(static_cast<char>((x >> 8) & 0xff));
  out.push_back(static_cast<char>((x >> 16) & 0xff));
  out.push_back(static_cast<char>((x >> 24) & 0xff));
}

inline void put_f32(std::string& out, float x) {
  std::uint32_t bits;
  std::memcpy(&bits, &x, sizeof bits);
  put_u32(out, bits);
}

inline void put_f64(std::string& out, double x) {
  std::uint64_t bits;
  std::memcpy(&bits, &x, sizeof bits);
  put_u32(out, static_cast<std::uint32_t>(bits & 0xffffffffULL));
  put_u32(out, static_cast<std::uint32_t>(bits >> 32));
}

class Reader {
 public:
  Reader(std::string bytes, std::string origin)
      : bytes_(std::move(bytes)), origin_(std::move(origin)) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t x = 0;
    for (int i = 3; i >= 0; --i)
      x = (x << 8) | static_cast<std::uint8_t>(bytes_[pos_ + i]);
    pos_ += 4;
    return x;
  }

  float f32() {
    const std::uint32_t bits = u32();
    float x;
    std::memcpy(&x, &bits, sizeof x);
    return x;
  }

  double f64() {
    const std::uint64_t lo = u32();
    const std::uint64_t hi = u32();
    const std::uint64_t bits = (hi << 32) | lo;
    double x;
    std::memcpy(&x, &bits, sizeof x);
    return x;
  }

  std::string raw(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  std::size_t remaining() const { return bytes_.size() - pos_; }

  void expect_end() const {
    if (pos_ != bytes_.size())
      throw ValidationError(origin_ + ": trailing bytes");
  }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n)
      throw ValidationError(origin_ + ": truncated file");
  }

  std::string bytes_;
  std::string origin_;
  std::size_t pos_ = 0;
};

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open file: " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)),
                    std::istreambuf_iterator<char>());
  if (!in.good() && !in.eof())
    throw NumericError("read failed: " + path);
  return bytes;
}

inline void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ValidationError("cannot open file for writing: " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out.good()) throw NumericError("write failed: " + path);
}

}  // namespace roadseq::binio
