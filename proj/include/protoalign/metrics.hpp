#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "protoalign/embedding_store.hpp"
#include "protoalign/projection_head.hpp"

namespace protoalign {

struct ConfusionMatrix {
  std::vector<std::string> class_names;
  std::vector<std::vector<std::int64_t>> counts;  // rows: true class, columns: predicted

  std::size_t num_classes() const { return counts.size(); }
};

struct EvalReport {
  ConfusionMatrix confusion;
  double uar = 0.0;
  double war = 0.0;
  std::vector<double> per_class_recall;  // NaN for classes with no samples
  std::vector<std::size_t> empty_classes;  // left out of the UAR mean
  std::int64_t n = 0;
};

using LabelMap = std::unordered_map<std::string, std::int32_t>;

/// id -> label for every labeled record. With `by_group`, frames are keyed by
/// their group id (records without a group keep their own id) and all frames
/// of a group must agree.
LabelMap labels_from_store(const EmbeddingStore& store, bool by_group = false);

EvalReport score(const LabelMap& truth, const std::vector<std::pair<std::string, std::size_t>>& predictions,
                 std::size_t num_classes, std::vector<std::string> class_names = {});

/// JSON text; UAR, WAR and recalls rounded to 4 decimal places.
std::string eval_report_json(const EvalReport& report);

struct ClassVariance {
  std::vector<double> raw;         // trace(cov) / dim per class; NaN if excluded
  std::vector<double> normalized;  // raw / max(raw)
  std::vector<std::size_t> excluded;  // classes with fewer than 2 samples
};

/// Spread of L2-normalized (optionally projected) features per class.
ClassVariance per_class_variance(const EmbeddingStore& features, const ProjectionHead* head = nullptr,
                                 std::size_t num_classes = 0);

struct RetrievalResult {
  double precision = 0.0;
  std::size_t k_used = 0;
  bool clamped = false;  // k exceeded the document count
};

/// Fraction of queries whose true document ranks within the top k by cosine.
/// Ties rank the earlier document first.
RetrievalResult precision_at_k(const EmbeddingStore& queries, const EmbeddingStore& docs,
                               const std::unordered_map<std::string, std::string>& ground_truth,
                               const ProjectionHead* head, std::size_t k);

}  // namespace protoalign
