#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "regbench/error.hpp"

namespace regbench {

/// Little-endian append-only encoder.
class ByteWriter {
 public:
  void u8(std::uint8_t x) { buf_.push_back(x); }
  void u16(std::uint16_t x) { put(x, 2); }
  void u32(std::uint32_t x) { put(x, 4); }
  void u64(std::uint64_t x) { put(x, 8); }
  void i32(std::int32_t x) { put(std::uint32_t(x), 4); }
  void i64(std::int64_t x) { put(std::uint64_t(x), 8); }
  void f32(float x) { put(std::bit_cast<std::uint32_t>(x), 4); }
  void f64(double x) { put(std::bit_cast<std::uint64_t>(x), 8); }
  void bytes(std::span<const std::uint8_t> b) { buf_.insert(buf_.end(), b.begin(), b.end()); }
  void raw(std::string_view s) { buf_.insert(buf_.end(), s.begin(), s.end()); }
  void str16(std::string_view s) {
    if (s.size() > 0xFFFF) throw Error(ErrorKind::FormatError, "string longer than 65535 bytes");
    u16(std::uint16_t(s.size()));
    raw(s);
  }

  std::size_t size() const { return buf_.size(); }
  std::vector<std::uint8_t>& buffer() { return buf_; }
  std::vector<std::uint8_t> take() { return std::move(buf_); }

 private:
  void put(std::uint64_t x, int n) {
    for (int k = 0; k < n; ++k) buf_.push_back(std::uint8_t(x >> (8 * k)));
  }
  std::vector<std::uint8_t> buf_;
};

/// Little-endian bounds-checked decoder. Running past the end raises `on_short`.
class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> data, ErrorKind on_short = ErrorKind::FormatError)
      : data_(data), on_short_(on_short) {}

  std::uint8_t u8() { return std::uint8_t(get(1)); }
  std::uint16_t u16() { return std::uint16_t(get(2)); }
  std::uint32_t u32() { return std::uint32_t(get(4)); }
  std::uint64_t u64() { return get(8); }
  std::int32_t i32() { return std::int32_t(std::uint32_t(get(4))); }
  std::int64_t i64() { return std::int64_t(get(8)); }
  float f32() { return std::bit_cast<float>(std::uint32_t(get(4))); }
  double f64() { return std::bit_cast<double>(get(8)); }
  std::span<const std::uint8_t> bytes(std::size_t n) {
    require(n);
    auto out = data_.subspan(pos_, n);
    pos_ += n;
    return out;
  }
  std::string str16() {
    const auto n = u16();
    auto b = bytes(n);
    return std::string(b.begin(), b.end());
  }

  std::size_t position() const { return pos_; }
  std::size_t remaining() const { return data_.size() - pos_; }
  bool at_end() const { return pos_ == data_.size(); }
  void require(std::size_t n) const {
    if (n > remaining()) {
      throw Error(on_short_, "truncated input: need " + std::to_string(n) + " bytes, " + std::to_string(remaining()) +
                                 " left");
    }
  }

 private:
  std::uint64_t get(int n) {
    require(std::size_t(n));
    std::uint64_t x = 0;
    for (int k = 0; k < n; ++k) x |= std::uint64_t(data_[pos_ + std::size_t(k)]) << (8 * k);
    pos_ += std::size_t(n);
    return x;
  }

  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
  ErrorKind on_short_;
};

}  // namespace regbench
