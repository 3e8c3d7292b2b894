#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "protoalign/binary_io.hpp"

namespace protoalign {

using io::Metadata;

inline constexpr std::int32_t kUnlabeled = -1;
inline constexpr std::uint16_t kStoreFormatVersion = 1;

enum class SpaceTag : std::uint8_t { visual = 0, textual = 1, llm_target = 2 };

std::string_view space_tag_name(SpaceTag tag);

struct EmbeddingRecord {
  std::string id;
  std::vector<float> vector;
  std::int32_t label = kUnlabeled;
  std::string group;

  bool operator==(const EmbeddingRecord&) const = default;
};

/// An ordered collection of equal-width embeddings from one space.
///
/// Appending validates width, finiteness and id uniqueness, so a store that
/// exists always satisfies its invariants.
class EmbeddingStore {
 public:
  EmbeddingStore(std::uint32_t dim, SpaceTag tag, Metadata metadata = {});

  void add(EmbeddingRecord record);
  void reserve(std::size_t n) { records_.reserve(n); }

  std::uint32_t dim() const { return dim_; }
  SpaceTag space_tag() const { return tag_; }
  const Metadata& metadata() const { return metadata_; }
  Metadata& metadata() { return metadata_; }

  std::size_t size() const { return records_.size(); }
  bool empty() const { return records_.empty(); }
  const EmbeddingRecord& operator[](std::size_t i) const { return records_[i]; }
  const std::vector<EmbeddingRecord>& records() const { return records_; }
  auto begin() const { return records_.begin(); }
  auto end() const { return records_.end(); }

  /// Index of the record with this id, or -1.
  std::ptrdiff_t find(const std::string& id) const;

  bool operator==(const EmbeddingStore& other) const;

 private:
  std::uint32_t dim_;
  SpaceTag tag_;
  Metadata metadata_;
  std::vector<EmbeddingRecord> records_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// EMB1 serialization. Both directions are bit-exact.
std::uint64_t write_store(const EmbeddingStore& store, std::ostream& sink);
EmbeddingStore read_store(std::istream& source);

void write_store_file(const EmbeddingStore& store, const std::filesystem::path& path);
EmbeddingStore read_store_file(const std::filesystem::path& path);

enum class PairingRule { by_id, by_order };

/// Visual/target stores joined one-to-one. `pairs` holds record indices into
/// the two stores, in visual store order.
struct PairedDataset {
  EmbeddingStore visual;
  EmbeddingStore target;
  std::vector<std::pair<std::size_t, std::size_t>> pairs;

  std::size_t size() const { return pairs.size(); }
};

PairedDataset make_pairs(EmbeddingStore visual, EmbeddingStore target, PairingRule rule);

}  // namespace protoalign
