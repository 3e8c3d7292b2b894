#include <gtest/gtest.h>

#include <cmath>

#include "protoalign/error.hpp"
#include "protoalign/metrics.hpp"
#include "protoalign/trainer.hpp"
#include "test_support.hpp"

namespace pa = protoalign;
using pa::EmbeddingStore;
using pa::SpaceTag;

namespace {

using Predictions = std::vector<std::pair<std::string, std::size_t>>;

void build(const std::vector<int>& truth, const std::vector<int>& predicted, pa::LabelMap& labels,
           Predictions& preds) {
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const std::string id = "s" + std::to_string(i);
    labels[id] = truth[i];
    preds.emplace_back(id, static_cast<std::size_t>(predicted[i]));
  }
}

pa::EvalReport score_of(const std::vector<int>& truth, const std::vector<int>& predicted, std::size_t u) {
  pa::LabelMap labels;
  Predictions preds;
  build(truth, predicted, labels, preds);
  return pa::score(labels, preds, u);
}

std::vector<int> repeat(int value, int times) { return std::vector<int>(static_cast<std::size_t>(times), value); }

std::vector<int> concat(std::vector<int> a, const std::vector<int>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

}  // namespace

TEST(Score, HandCases) {
  const auto perfect = score_of(concat(repeat(0, 5), repeat(1, 5)), concat(repeat(0, 5), repeat(1, 5)), 2);
  EXPECT_EQ(perfect.uar, 1.0);
  EXPECT_EQ(perfect.war, 1.0);
  EXPECT_EQ(perfect.confusion.counts, (std::vector<std::vector<std::int64_t>>{{5, 0}, {0, 5}}));

  // class 0: 9/10 correct, class 1: 1/5 correct
  const auto truth = concat(repeat(0, 10), repeat(1, 5));
  const auto pred = concat(concat(repeat(0, 9), repeat(1, 1)), concat(repeat(1, 1), repeat(0, 4)));
  const auto r = score_of(truth, pred, 2);
  EXPECT_NEAR(r.uar, 0.55, 1e-15);
  EXPECT_NEAR(r.war, 10.0 / 15.0, 1e-15);

  const auto degenerate = score_of(concat(repeat(0, 4), repeat(1, 4)), repeat(0, 8), 2);
  EXPECT_EQ(degenerate.uar, 0.5);
  EXPECT_EQ(degenerate.war, 0.5);
}

TEST(Score, EmptyClassesExcluded) {
  const auto r = score_of({0, 0, 2, 2}, {0, 2, 2, 2}, 3);
  EXPECT_EQ(r.empty_classes, std::vector<std::size_t>{1});
  EXPECT_TRUE(std::isnan(r.per_class_recall[1]));
  EXPECT_NEAR(r.uar, 0.75, 1e-15);
  const auto json = pa::eval_report_json(r);
  EXPECT_NE(json.find("\"uar\": 0.75"), std::string::npos) << json;
  EXPECT_NE(json.find("null"), std::string::npos);
}

TEST(Score, MatchesCountingOracle) {
  std::mt19937_64 gen(101);
  for (int trial = 0; trial < 200; ++trial) {
    const int u = 1 + static_cast<int>(gen() % 10);
    const int n = 1 + static_cast<int>(gen() % 60);
    std::vector<int> truth, pred;
    for (int i = 0; i < n; ++i) {
      truth.push_back(static_cast<int>(gen() % static_cast<unsigned>(u)));
      pred.push_back(static_cast<int>(gen() % static_cast<unsigned>(u)));
    }
    const auto oracle = pa::testing::oracle_score(truth, pred, u);
    const auto r = score_of(truth, pred, static_cast<std::size_t>(u));
    EXPECT_EQ(r.confusion.counts, oracle.confusion);
    EXPECT_NEAR(r.uar, oracle.uar, 1e-12);
    EXPECT_NEAR(r.war, oracle.war, 1e-12);
    EXPECT_GE(r.uar, 0.0);
    EXPECT_LE(r.uar, 1.0);
  }
}

TEST(Score, PermutationAndRebalancing) {
  const std::vector<int> truth = {0, 0, 1, 1, 1, 2};
  const std::vector<int> pred = {0, 1, 1, 1, 0, 2};
  const auto base = score_of(truth, pred, 3);
  const auto reversed = score_of({truth.rbegin(), truth.rend()}, {pred.rbegin(), pred.rend()}, 3);
  EXPECT_EQ(base.uar, reversed.uar);
  EXPECT_EQ(base.war, reversed.war);

  // Duplicating every class-1 sample keeps recall 2/3, so UAR holds.
  const auto doubled = score_of(concat(truth, {1, 1, 1}), concat(pred, {1, 1, 0}), 3);
  EXPECT_NEAR(doubled.uar, base.uar, 1e-15);
}

TEST(Score, Errors) {
  pa::LabelMap labels = {{"a", 0}, {"b", 5}};
  EXPECT_THROW(pa::score(labels, {{"zz", 0}}, 2), pa::Error);
  try {
    pa::score(labels, {{"zz", 0}}, 2);
  } catch (const pa::Error& e) {
    EXPECT_EQ(e.code(), pa::ErrorCode::unknown_id);
    EXPECT_NE(std::string(e.what()).find("zz"), std::string::npos);
  }
  try {
    pa::score(labels, {{"b", 0}}, 2);
  } catch (const pa::Error& e) {
    EXPECT_EQ(e.code(), pa::ErrorCode::label_out_of_range);
  }
  EXPECT_THROW(pa::score(labels, {}, 2), pa::Error);
}

TEST(LabelsFromStore, GroupsMustAgree) {
  EmbeddingStore s(1, SpaceTag::visual);
  s.add({"f0", {1}, 2, "clip"});
  s.add({"f1", {1}, 2, "clip"});
  s.add({"still", {1}, 0, ""});
  s.add({"nolabel", {1}, pa::kUnlabeled, ""});
  const auto by_group = pa::labels_from_store(s, true);
  EXPECT_EQ(by_group.size(), 2u);
  EXPECT_EQ(by_group.at("clip"), 2);
  EXPECT_EQ(pa::labels_from_store(s).size(), 3u);
  s.add({"f2", {1}, 1, "clip"});
  EXPECT_THROW(pa::labels_from_store(s, true), pa::Error);
}

TEST(Variance, ConstructedCases) {
  EmbeddingStore s(2, SpaceTag::visual);
  s.add({"a0", {3, 4}, 0, ""});
  s.add({"a1", {3, 4}, 0, ""});
  s.add({"b0", {1, 0}, 1, ""});
  s.add({"b1", {-1, 0}, 1, ""});
  s.add({"lonely", {0, 1}, 2, ""});
  const auto v = pa::per_class_variance(s);
  EXPECT_EQ(v.raw[0], 0.0);
  EXPECT_GT(v.raw[1], 0.0);
  EXPECT_EQ(v.normalized[0], 0.0);
  EXPECT_EQ(v.normalized[1], 1.0);
  EXPECT_EQ(v.excluded, std::vector<std::size_t>{2});
  EXPECT_TRUE(std::isnan(v.raw[2]));
}

TEST(Variance, MatchesTwoPassOracle) {
  std::mt19937_64 gen(55);
  const auto s = pa::testing::random_store(gen, 300, 12, SpaceTag::visual, 4);
  const auto identity = pa::ProjectionHead::identity(12);
  const auto v = pa::per_class_variance(s, &identity, 4);
  for (int k = 0; k < 4; ++k) {
    std::vector<Eigen::RowVectorXd> rows;
    for (const auto& r : s) {
      if (r.label == k) rows.push_back(Eigen::Map<const Eigen::RowVectorXf>(r.vector.data(), 12).cast<double>());
    }
    EXPECT_NEAR(v.raw[static_cast<std::size_t>(k)], pa::testing::oracle_class_variance(rows), 1e-10);
  }
}

TEST(Retrieval, HandCases) {
  EmbeddingStore q(2, SpaceTag::visual), d(2, SpaceTag::visual);
  q.add({"q0", {1, 0}, pa::kUnlabeled, ""});
  q.add({"q1", {0, 1}, pa::kUnlabeled, ""});
  d.add({"d0", {2, 0}, pa::kUnlabeled, ""});
  d.add({"d1", {0, 3}, pa::kUnlabeled, ""});
  const auto r = pa::precision_at_k(q, d, {{"q0", "d0"}, {"q1", "d1"}}, nullptr, 1);
  EXPECT_EQ(r.precision, 1.0);

  // One query orthogonal to three orthogonal docs: its true doc is last on ties.
  EmbeddingStore q3(4, SpaceTag::visual), d3(4, SpaceTag::visual);
  q3.add({"q", {0, 0, 0, 1}, pa::kUnlabeled, ""});
  d3.add({"a", {1, 0, 0, 0}, pa::kUnlabeled, ""});
  d3.add({"b", {0, 1, 0, 0}, pa::kUnlabeled, ""});
  d3.add({"c", {0, 0, 1, 0}, pa::kUnlabeled, ""});
  EXPECT_EQ(pa::precision_at_k(q3, d3, {{"q", "c"}}, nullptr, 3).precision, 1.0);
  EXPECT_EQ(pa::precision_at_k(q3, d3, {{"q", "c"}}, nullptr, 2).precision, 0.0);
  const auto clamped = pa::precision_at_k(q3, d3, {{"q", "c"}}, nullptr, 10);
  EXPECT_TRUE(clamped.clamped);
  EXPECT_EQ(clamped.k_used, 3u);
}

TEST(Retrieval, MatchesFullSortOracleAndIsMonotone) {
  std::mt19937_64 gen(66);
  for (int trial = 0; trial < 20; ++trial) {
    const auto q = pa::testing::random_store(gen, 100, 6);
    const auto d = pa::testing::random_store(gen, 100, 6);
    std::unordered_map<std::string, std::string> gt;
    std::vector<int> truth;
    for (std::size_t i = 0; i < q.size(); ++i) {
      const auto j = static_cast<int>(gen() % d.size());
      gt[q[i].id] = d[static_cast<std::size_t>(j)].id;
      truth.push_back(j);
    }
    const pa::Matrix qm = pa::store_matrix(q);
    const pa::Matrix dm = pa::store_matrix(d);
    double previous = 0.0;
    for (std::size_t k : {1, 5, 20}) {
      const double p = pa::precision_at_k(q, d, gt, nullptr, k).precision;
      EXPECT_EQ(p, pa::testing::oracle_precision_at_k(qm, dm, truth, k));
      EXPECT_GE(p, previous);
      previous = p;
    }
  }
}

TEST(Retrieval, Errors) {
  std::mt19937_64 gen(67);
  const auto q = pa::testing::random_store(gen, 2, 3);
  const auto d = pa::testing::random_store(gen, 2, 3);
  try {
    pa::precision_at_k(q, d, {{"rec0", "rec0"}}, nullptr, 1);
    FAIL();
  } catch (const pa::Error& e) {
    EXPECT_EQ(e.code(), pa::ErrorCode::unmatched_id);
  }
  try {
    pa::precision_at_k(q, d, {{"rec0", "nope"}, {"rec1", "rec0"}}, nullptr, 1);
    FAIL();
  } catch (const pa::Error& e) {
    EXPECT_EQ(e.code(), pa::ErrorCode::unknown_id);
  }
}
