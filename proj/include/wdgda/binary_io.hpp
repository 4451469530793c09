#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <string>
#include <string_view>
#include <vector>

#include "wdgda/errors.hpp"

namespace wdgda {

static_assert(std::endian::native == std::endian::little,
              "binary formats assume a little-endian host");

class ByteWriter {
 public:
  void bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    buffer_.insert(buffer_.end(), p, p + n);
  }
  void magic(std::string_view m) { bytes(m.data(), m.size()); }
  void u8(std::uint8_t v) { buffer_.push_back(v); }
  void u32(std::uint32_t v) { bytes(&v, sizeof v); }
  void f32(float v) { bytes(&v, sizeof v); }
  void f64(double v) { bytes(&v, sizeof v); }

  const std::vector<std::uint8_t>& buffer() const { return buffer_; }
  std::vector<std::uint8_t> release() { return std::move(buffer_); }

 private:
  std::vector<std::uint8_t> buffer_;
};

// Sequential reader over an in-memory file image; every failure names the
// byte offset where it happened.
class ByteReader {
 public:
  explicit ByteReader(const std::vector<std::uint8_t>& data) : data_(data) {}

  std::uint64_t offset() const { return offset_; }
  std::uint64_t remaining() const { return data_.size() - offset_; }

  void need(std::uint64_t n, const std::string& what) const {
    if (remaining() < n) {
      throw ParseError("truncated " + what + ": expected " + std::to_string(n) +
                           " more bytes, file has " + std::to_string(remaining()),
                       offset_);
    }
  }

  void expect_magic(std::string_view m) {
    need(m.size(), "magic");
    if (std::memcmp(data_.data() + offset_, m.data(), m.size()) != 0) {
      throw ParseError("bad magic, expected '" + std::string(m) + "'", offset_);
    }
    offset_ += m.size();
  }

  std::uint8_t u8(const std::string& what) {
    need(1, what);
    return data_[offset_++];
  }

  template <class T>
  T scalar(const std::string& what) {
    need(sizeof(T), what);
    T v;
    std::memcpy(&v, data_.data() + offset_, sizeof(T));
    offset_ += sizeof(T);
    return v;
  }

  std::uint32_t u32(const std::string& what) { return scalar<std::uint32_t>(what); }

  std::string string(std::uint64_t n, const std::string& what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(data_.data() + offset_), n);
    offset_ += n;
    return s;
  }

  const std::uint8_t* take(std::uint64_t n, const std::string& what) {
    need(n, what);
    const auto* p = data_.data() + offset_;
    offset_ += n;
    return p;
  }

 private:
  const std::vector<std::uint8_t>& data_;
  std::uint64_t offset_ = 0;
};

std::vector<std::uint8_t> read_file_bytes(const std::string& path);
void write_file_bytes(const std::string& path, const std::vector<std::uint8_t>& bytes);

}  // namespace wdgda
