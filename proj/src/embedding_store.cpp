#include "protoalign/embedding_store.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <unordered_set>

namespace protoalign {

namespace {

constexpr char kMagic[4] = {'E', 'M', 'B', '1'};

void check_finite(const EmbeddingRecord& record) {
  for (std::size_t i = 0; i < record.vector.size(); ++i) {
    if (!std::isfinite(record.vector[i])) {
      throw Error(ErrorCode::non_finite, "non-finite component " + std::to_string(i) +
                                             " in record '" + record.id + "'");
    }
  }
}

// Field widths of the format; checked up front so a failed write leaves the
// sink untouched.
void check_encodable(const EmbeddingStore& store) {
  constexpr auto u16_max = std::numeric_limits<std::uint16_t>::max();
  constexpr auto u32_max = std::numeric_limits<std::uint32_t>::max();
  if (store.metadata().size() > u16_max) {
    throw Error(ErrorCode::invalid_argument, "too many metadata entries");
  }
  for (const auto& [key, value] : store.metadata()) {
    if (key.size() > u16_max || value.size() > u32_max) {
      throw Error(ErrorCode::invalid_argument, "metadata entry '" + key.substr(0, 32) + "' too long");
    }
  }
  for (const auto& r : store) {
    if (r.id.size() > u16_max || r.group.size() > u16_max) {
      throw Error(ErrorCode::invalid_argument, "id or group of '" + r.id.substr(0, 32) + "' too long");
    }
  }
}

}  // namespace

std::string_view space_tag_name(SpaceTag tag) {
  switch (tag) {
    case SpaceTag::visual: return "visual";
    case SpaceTag::textual: return "textual";
    case SpaceTag::llm_target: return "llm_target";
  }
  return "unknown";
}

EmbeddingStore::EmbeddingStore(std::uint32_t dim, SpaceTag tag, Metadata metadata)
    : dim_(dim), tag_(tag), metadata_(std::move(metadata)) {
  if (dim_ == 0) throw Error(ErrorCode::invalid_argument, "store dim must be positive");
}

void EmbeddingStore::add(EmbeddingRecord record) {
  if (record.vector.size() != dim_) {
    throw Error(ErrorCode::dim_mismatch, "record '" + record.id + "' has length " +
                                             std::to_string(record.vector.size()) +
                                             ", store dim is " + std::to_string(dim_));
  }
  check_finite(record);
  if (index_.contains(record.id)) {
    throw Error(ErrorCode::duplicate_id, "duplicate id '" + record.id + "'");
  }
  index_.emplace(record.id, records_.size());
  records_.push_back(std::move(record));
}

std::ptrdiff_t EmbeddingStore::find(const std::string& id) const {
  auto it = index_.find(id);
  return it == index_.end() ? -1 : static_cast<std::ptrdiff_t>(it->second);
}

bool EmbeddingStore::operator==(const EmbeddingStore& other) const {
  if (dim_ != other.dim_ || tag_ != other.tag_ || !(metadata_ == other.metadata_) ||
      records_.size() != other.records_.size()) {
    return false;
  }
  // Compare float bit patterns, not values, so -0.0 and 0.0 differ.
  for (std::size_t i = 0; i < records_.size(); ++i) {
    const auto& a = records_[i];
    const auto& b = other.records_[i];
    if (a.id != b.id || a.label != b.label || a.group != b.group) return false;
    for (std::size_t j = 0; j < dim_; ++j) {
      if (std::bit_cast<std::uint32_t>(a.vector[j]) != std::bit_cast<std::uint32_t>(b.vector[j])) {
        return false;
      }
    }
  }
  return true;
}

std::uint64_t write_store(const EmbeddingStore& store, std::ostream& sink) {
  check_encodable(store);
  io::ByteWriter w(sink);
  w.put_bytes(std::string(kMagic, 4));
  w.put_uint(kStoreFormatVersion);
  w.put_uint(static_cast<std::uint8_t>(store.space_tag()));
  w.put_uint(store.dim());
  w.put_uint(static_cast<std::uint64_t>(store.size()));
  io::write_metadata(w, store.metadata());
  for (const auto& r : store) {
    w.put_uint(static_cast<std::uint16_t>(r.id.size()));
    w.put_bytes(r.id);
    w.put_i32(r.label);
    w.put_uint(static_cast<std::uint16_t>(r.group.size()));
    w.put_bytes(r.group);
    for (float v : r.vector) w.put_f32(v);
  }
  return w.count();
}

EmbeddingStore read_store(std::istream& source) {
  io::ByteReader r(source);
  if (r.get_bytes(4, "magic") != std::string(kMagic, 4)) {
    throw Error(ErrorCode::bad_magic, "not an EMB1 file (bad magic)");
  }
  const auto version = r.get_uint<std::uint16_t>("format version");
  if (version != kStoreFormatVersion) {
    throw Error(ErrorCode::version_mismatch, "unsupported EMB1 version " + std::to_string(version));
  }
  const auto tag = r.get_uint<std::uint8_t>("space tag");
  if (tag > 2) throw Error(ErrorCode::malformed, "invalid space tag " + std::to_string(tag));
  const auto dim = r.get_uint<std::uint32_t>("dim");
  if (dim == 0) throw Error(ErrorCode::malformed, "dim must be positive");
  const auto count = r.get_uint<std::uint64_t>("record count");
  EmbeddingStore store(dim, static_cast<SpaceTag>(tag), io::read_metadata(r));
  store.reserve(static_cast<std::size_t>(std::min<std::uint64_t>(count, 1u << 20)));

  for (std::uint64_t i = 0; i < count; ++i) {
    EmbeddingRecord rec;
    rec.id = r.get_bytes(r.get_uint<std::uint16_t>("id length"), "id");
    rec.label = r.get_i32("label");
    rec.group = r.get_bytes(r.get_uint<std::uint16_t>("group length"), "group");
    rec.vector.resize(dim);
    for (auto& v : rec.vector) v = r.get_f32("vector component");
    store.add(std::move(rec));
  }
  if (source.peek() != std::char_traits<char>::eof()) {
    throw Error(ErrorCode::malformed, "trailing bytes after last record");
  }
  return store;
}

void write_store_file(const EmbeddingStore& store, const std::filesystem::path& path) {
  check_encodable(store);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::io_error, "cannot open '" + path.string() + "' for writing");
  write_store(store, out);
  out.flush();
  if (!out) throw Error(ErrorCode::io_error, "write to '" + path.string() + "' failed");
}

EmbeddingStore read_store_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::io_error, "cannot open '" + path.string() + "'");
  return read_store(in);
}

PairedDataset make_pairs(EmbeddingStore visual, EmbeddingStore target, PairingRule rule) {
  if (visual.space_tag() == target.space_tag()) {
    throw Error(ErrorCode::invalid_argument,
                "visual and target stores share space tag '" +
                    std::string(space_tag_name(visual.space_tag())) + "'");
  }
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  pairs.reserve(visual.size());
  if (rule == PairingRule::by_order) {
    if (visual.size() != target.size()) {
      throw Error(ErrorCode::count_mismatch, "by_order pairing needs equal counts, got " +
                                                 std::to_string(visual.size()) + " and " +
                                                 std::to_string(target.size()));
    }
    for (std::size_t i = 0; i < visual.size(); ++i) pairs.emplace_back(i, i);
  } else {
    for (std::size_t i = 0; i < visual.size(); ++i) {
      const auto j = target.find(visual[i].id);
      if (j < 0) {
        throw Error(ErrorCode::unmatched_id, "target store has no record '" + visual[i].id + "'");
      }
      pairs.emplace_back(i, static_cast<std::size_t>(j));
    }
    if (target.size() != visual.size()) {
      for (const auto& rec : target) {
        if (visual.find(rec.id) < 0) {
          throw Error(ErrorCode::unmatched_id, "visual store has no record '" + rec.id + "'");
        }
      }
    }
  }
  return PairedDataset{std::move(visual), std::move(target), std::move(pairs)};
}

}  // namespace protoalign
