#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <functional>
#include <fstream>
#include <limits>
#include <sstream>

#include "protoalign/embedding_store.hpp"
#include "protoalign/error.hpp"
#include "protoalign/sha256.hpp"
#include "test_support.hpp"

namespace pa = protoalign;
using pa::EmbeddingRecord;
using pa::EmbeddingStore;
using pa::ErrorCode;
using pa::SpaceTag;

namespace {

std::string to_bytes(const EmbeddingStore& store) {
  std::ostringstream out(std::ios::binary);
  pa::write_store(store, out);
  return out.str();
}

EmbeddingStore from_bytes(const std::string& bytes) {
  std::istringstream in(bytes, std::ios::binary);
  return pa::read_store(in);
}

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const pa::Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected an Error";
  return ErrorCode::io_error;
}

EmbeddingStore three_records() {
  EmbeddingStore s(2, SpaceTag::visual);
  s.add({"a", {1.0f, 0.0f}, 0, ""});
  s.add({"b", {0.0f, 1.0f}, 1, ""});
  s.add({"c", {0.5f, 0.5f}, pa::kUnlabeled, "clip7"});
  return s;
}

}  // namespace

TEST(EmbeddingStore, EmptyStoreIsHeaderOnly) {
  EmbeddingStore empty(4, SpaceTag::textual);
  const auto bytes = to_bytes(empty);
  // magic 4 + version 2 + tag 1 + dim 4 + count 8 + metadata count 2
  EXPECT_EQ(bytes.size(), 21u);
  EXPECT_EQ(from_bytes(bytes), empty);
}

TEST(EmbeddingStore, SmallRoundTripIsBitExact) {
  auto s = three_records();
  s.metadata().set("encoder", "ViT-B/32");
  s.metadata().set("instruction", "");
  const auto bytes = to_bytes(s);
  const auto back = from_bytes(bytes);
  EXPECT_EQ(back, s);
  EXPECT_EQ(to_bytes(back), bytes);
  EXPECT_EQ(back[2].group, "clip7");
  EXPECT_EQ(back.metadata().get_or("instruction", "x"), "");
}

TEST(EmbeddingStore, LargeRoundTripAndStableDigest) {
  std::mt19937_64 gen(42);
  const auto s = pa::testing::random_store(gen, 10000, 512, SpaceTag::llm_target, 7);
  pa::testing::TempDir dir("emb");
  pa::write_store_file(s, dir / "a.emb");
  pa::write_store_file(pa::read_store_file(dir / "a.emb"), dir / "b.emb");
  EXPECT_EQ(pa::read_store_file(dir / "b.emb"), s);
  EXPECT_EQ(pa::sha256_file_hex(dir / "a.emb"), pa::sha256_file_hex(dir / "b.emb"));
}

TEST(EmbeddingStore, AddValidates) {
  EmbeddingStore s(2, SpaceTag::visual);
  s.add({"a", {1.0f, 2.0f}, 0, ""});
  EXPECT_EQ(code_of([&] { s.add({"a", {1.0f, 2.0f}, 0, ""}); }), ErrorCode::duplicate_id);
  EXPECT_EQ(code_of([&] { s.add({"b", {1.0f}, 0, ""}); }), ErrorCode::dim_mismatch);
  EXPECT_EQ(code_of([&] { s.add({"c", {std::numeric_limits<float>::quiet_NaN(), 0.0f}, 0, ""}); }),
            ErrorCode::non_finite);
  EXPECT_EQ(code_of([&] { s.add({"d", {std::numeric_limits<float>::infinity(), 0.0f}, 0, ""}); }),
            ErrorCode::non_finite);
  EXPECT_EQ(s.size(), 1u);
  EXPECT_EQ(s.find("a"), 0);
  EXPECT_EQ(s.find("zz"), -1);
}

TEST(EmbeddingStore, TruncatedFileRejected) {
  const auto bytes = to_bytes(three_records());
  for (std::size_t cut : {bytes.size() - 1, bytes.size() - 5, std::size_t{10}, std::size_t{3}}) {
    EXPECT_EQ(code_of([&] { from_bytes(bytes.substr(0, cut)); }), ErrorCode::truncated) << "cut at " << cut;
  }
}

TEST(EmbeddingStore, NanPayloadRejected) {
  auto bytes = to_bytes(three_records());
  // Last record's last float sits at the end of the file.
  const float nan = std::numeric_limits<float>::quiet_NaN();
  std::memcpy(bytes.data() + bytes.size() - 4, &nan, 4);
  EXPECT_EQ(code_of([&] { from_bytes(bytes); }), ErrorCode::non_finite);
}

TEST(EmbeddingStore, HeaderErrors) {
  auto bytes = to_bytes(three_records());
  auto bad = bytes;
  bad[0] = 'X';
  EXPECT_EQ(code_of([&] { from_bytes(bad); }), ErrorCode::bad_magic);
  bad = bytes;
  bad[4] = 9;
  EXPECT_EQ(code_of([&] { from_bytes(bad); }), ErrorCode::version_mismatch);
  bad = bytes;
  bad[6] = 7;
  EXPECT_EQ(code_of([&] { from_bytes(bad); }), ErrorCode::malformed);
  EXPECT_EQ(code_of([&] { from_bytes(bytes + "junk"); }), ErrorCode::malformed);
}

TEST(EmbeddingStore, DuplicateIdInFileRejected) {
  EmbeddingStore s(1, SpaceTag::visual);
  s.add({"aa", {1.0f}, 0, ""});
  s.add({"ab", {2.0f}, 0, ""});
  auto bytes = to_bytes(s);
  const auto pos = bytes.rfind("ab");
  ASSERT_NE(pos, std::string::npos);
  bytes[pos + 1] = 'a';
  EXPECT_EQ(code_of([&] { from_bytes(bytes); }), ErrorCode::duplicate_id);
}

TEST(EmbeddingStore, MissingFileIsIoError) {
  EXPECT_EQ(code_of([] { pa::read_store_file("/nonexistent/dir/x.emb"); }), ErrorCode::io_error);
}

TEST(Pairing, ById) {
  EmbeddingStore v(2, SpaceTag::visual), t(3, SpaceTag::llm_target);
  for (const char* id : {"a", "b", "c"}) v.add({id, {1.0f, 0.0f}, pa::kUnlabeled, ""});
  for (const char* id : {"c", "a", "b"}) t.add({id, {1.0f, 0.0f, 0.0f}, pa::kUnlabeled, ""});
  const auto p = pa::make_pairs(v, t, pa::PairingRule::by_id);
  ASSERT_EQ(p.size(), 3u);
  EXPECT_EQ(p.pairs[0], std::make_pair(std::size_t{0}, std::size_t{1}));
  EXPECT_EQ(p.pairs[1], std::make_pair(std::size_t{1}, std::size_t{2}));
  EXPECT_EQ(p.pairs[2], std::make_pair(std::size_t{2}, std::size_t{0}));
}

TEST(Pairing, ByOrder) {
  std::mt19937_64 gen(1);
  auto v = pa::testing::random_store(gen, 5, 3, SpaceTag::visual);
  auto t = pa::testing::random_store(gen, 5, 2, SpaceTag::llm_target);
  const auto p = pa::make_pairs(v, t, pa::PairingRule::by_order);
  for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(p.pairs[i], std::make_pair(i, i));

  auto short_t = pa::testing::random_store(gen, 4, 2, SpaceTag::llm_target);
  EXPECT_EQ(code_of([&] { pa::make_pairs(v, short_t, pa::PairingRule::by_order); }), ErrorCode::count_mismatch);
}

TEST(Pairing, MissingIdIsNamed) {
  EmbeddingStore v(1, SpaceTag::visual), t(1, SpaceTag::llm_target);
  for (const char* id : {"a", "b", "c"}) v.add({id, {1.0f}, pa::kUnlabeled, ""});
  for (const char* id : {"a", "b", "d"}) t.add({id, {1.0f}, pa::kUnlabeled, ""});
  try {
    pa::make_pairs(v, t, pa::PairingRule::by_id);
    FAIL() << "expected unmatched_id";
  } catch (const pa::Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::unmatched_id);
    EXPECT_NE(std::string(e.what()).find("'c'"), std::string::npos) << e.what();
  }
}

TEST(ErrorCodes, ExitStatusClasses) {
  EXPECT_EQ(pa::exit_status(ErrorCode::truncated), 3);
  EXPECT_EQ(pa::exit_status(ErrorCode::bad_magic), 3);
  EXPECT_EQ(pa::exit_status(ErrorCode::zero_norm), 4);
  EXPECT_EQ(pa::exit_status(ErrorCode::numeric_failure), 4);
  EXPECT_EQ(pa::exit_status(ErrorCode::invalid_argument), 2);
  EXPECT_EQ(pa::error_code_name(ErrorCode::unmatched_id), "unmatched_id");
}
