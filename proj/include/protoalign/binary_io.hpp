#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <istream>
#include <utility>
#include <ostream>
#include <string>
#include <vector>

#include "protoalign/error.hpp"

namespace protoalign::io {

// Little-endian primitive encoding shared by the EMB1 and PHD1 formats.

class ByteWriter {
 public:
  explicit ByteWriter(std::ostream& out) : out_(out) {}

  template <typename T>
  void put_uint(T value) {
    std::array<char, sizeof(T)> bytes{};
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      bytes[i] = static_cast<char>((static_cast<std::uint64_t>(value) >> (8 * i)) & 0xFFu);
    }
    write(bytes.data(), bytes.size());
  }

  void put_i32(std::int32_t v) { put_uint(static_cast<std::uint32_t>(v)); }
  void put_f32(float v) { put_uint(std::bit_cast<std::uint32_t>(v)); }
  void put_f64(double v) { put_uint(std::bit_cast<std::uint64_t>(v)); }
  void put_bytes(const std::string& s) { write(s.data(), s.size()); }

  std::uint64_t count() const { return count_; }

 private:
  void write(const char* data, std::size_t n) {
    out_.write(data, static_cast<std::streamsize>(n));
    if (!out_) throw Error(ErrorCode::io_error, "write to sink failed");
    count_ += n;
  }

  std::ostream& out_;
  std::uint64_t count_ = 0;
};

class ByteReader {
 public:
  explicit ByteReader(std::istream& in) : in_(in) {}

  template <typename T>
  T get_uint(const char* what) {
    std::array<unsigned char, sizeof(T)> bytes{};
    read(reinterpret_cast<char*>(bytes.data()), bytes.size(), what);
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      v |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
    }
    return static_cast<T>(v);
  }

  std::int32_t get_i32(const char* what) {
    return static_cast<std::int32_t>(get_uint<std::uint32_t>(what));
  }
  float get_f32(const char* what) { return std::bit_cast<float>(get_uint<std::uint32_t>(what)); }
  double get_f64(const char* what) { return std::bit_cast<double>(get_uint<std::uint64_t>(what)); }

  std::string get_bytes(std::size_t n, const char* what) {
    std::string s(n, '\0');
    if (n > 0) read(s.data(), n, what);
    return s;
  }

  std::uint64_t offset() const { return offset_; }

 private:
  void read(char* dst, std::size_t n, const char* what) {
    in_.read(dst, static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) {
      throw Error(ErrorCode::truncated, std::string("truncated payload while reading ") + what +
                                            " at byte " + std::to_string(offset_));
    }
    offset_ += n;
  }

  std::istream& in_;
  std::uint64_t offset_ = 0;
};

/// String map that keeps insertion order so files re-serialize byte-for-byte.
class Metadata {
 public:
  using Entry = std::pair<std::string, std::string>;

  void set(const std::string& key, std::string value);
  const std::string* find(const std::string& key) const;
  std::string get_or(const std::string& key, const std::string& fallback) const;

  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  bool operator==(const Metadata&) const = default;

 private:
  std::vector<Entry> entries_;
};

// entry count u16, then per entry: key length u16, key, value length u32, value.
void write_metadata(ByteWriter& w, const Metadata& metadata);
Metadata read_metadata(ByteReader& r);

}  // namespace protoalign::io
