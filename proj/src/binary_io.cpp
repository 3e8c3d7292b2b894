#include "protoalign/binary_io.hpp"

#include <limits>

namespace protoalign::io {

void Metadata::set(const std::string& key, std::string value) {
  for (auto& [k, v] : entries_) {
    if (k == key) {
      v = std::move(value);
      return;
    }
  }
  entries_.emplace_back(key, std::move(value));
}

const std::string* Metadata::find(const std::string& key) const {
  for (const auto& [k, v] : entries_) {
    if (k == key) return &v;
  }
  return nullptr;
}

std::string Metadata::get_or(const std::string& key, const std::string& fallback) const {
  const auto* v = find(key);
  return v ? *v : fallback;
}

void write_metadata(ByteWriter& w, const Metadata& metadata) {
  w.put_uint(static_cast<std::uint16_t>(metadata.size()));
  for (const auto& [key, value] : metadata) {
    w.put_uint(static_cast<std::uint16_t>(key.size()));
    w.put_bytes(key);
    w.put_uint(static_cast<std::uint32_t>(value.size()));
    w.put_bytes(value);
  }
}

Metadata read_metadata(ByteReader& r) {
  Metadata metadata;
  const auto n = r.get_uint<std::uint16_t>("metadata entry count");
  for (std::uint16_t i = 0; i < n; ++i) {
    const auto key_len = r.get_uint<std::uint16_t>("metadata key length");
    auto key = r.get_bytes(key_len, "metadata key");
    const auto value_len = r.get_uint<std::uint32_t>("metadata value length");
    auto value = r.get_bytes(value_len, "metadata value");
    if (metadata.find(key)) {
      throw Error(ErrorCode::malformed, "duplicate metadata key '" + key + "'");
    }
    metadata.set(key, std::move(value));
  }
  return metadata;
}

}  // namespace protoalign::io
