#include "protoalign/metrics.hpp"

#include <cmath>
#include <limits>

#include "json.hpp"
#include "protoalign/error.hpp"

namespace protoalign {

namespace {

double round4(double v) { return std::round(v * 1e4) / 1e4; }

Matrix unit_rows(const EmbeddingStore& store, const ProjectionHead* head, const char* what) {
  Matrix rows(static_cast<Eigen::Index>(store.size()), store.dim());
  for (std::size_t i = 0; i < store.size(); ++i) {
    for (std::uint32_t j = 0; j < store.dim(); ++j) rows(static_cast<Eigen::Index>(i), j) = store[i].vector[j];
  }
  if (head) rows = project_rows(*head, rows);
  for (Eigen::Index i = 0; i < rows.rows(); ++i) {
    const double n = rows.row(i).norm();
    if (!(n > 0.0)) {
      throw Error(ErrorCode::zero_norm, std::string(what) + " '" + store[static_cast<std::size_t>(i)].id +
                                            "' has zero norm");
    }
    rows.row(i) /= n;
  }
  return rows;
}

}  // namespace

LabelMap labels_from_store(const EmbeddingStore& store, bool by_group) {
  LabelMap labels;
  for (const auto& rec : store) {
    if (rec.label == kUnlabeled) continue;
    const std::string& key = (by_group && !rec.group.empty()) ? rec.group : rec.id;
    auto [it, inserted] = labels.emplace(key, rec.label);
    if (!inserted && it->second != rec.label) {
      throw Error(ErrorCode::malformed, "frames of '" + key + "' carry different labels");
    }
  }
  return labels;
}

EvalReport score(const LabelMap& truth, const std::vector<std::pair<std::string, std::size_t>>& predictions,
                 std::size_t num_classes, std::vector<std::string> class_names) {
  if (num_classes < 1) throw Error(ErrorCode::invalid_argument, "need at least one class");
  if (predictions.empty()) throw Error(ErrorCode::invalid_argument, "no predictions to score");
  if (class_names.empty()) {
    for (std::size_t k = 0; k < num_classes; ++k) class_names.push_back("class_" + std::to_string(k));
  }
  if (class_names.size() != num_classes) {
    throw Error(ErrorCode::count_mismatch, "class name count does not match class count");
  }

  EvalReport report;
  report.confusion.class_names = std::move(class_names);
  report.confusion.counts.assign(num_classes, std::vector<std::int64_t>(num_classes, 0));
  for (const auto& [id, predicted] : predictions) {
    auto it = truth.find(id);
    if (it == truth.end()) throw Error(ErrorCode::unknown_id, "no label for prediction id '" + id + "'");
    if (it->second < 0 || static_cast<std::size_t>(it->second) >= num_classes) {
      throw Error(ErrorCode::label_out_of_range, "label " + std::to_string(it->second) + " of '" + id +
                                                     "' outside [0, " + std::to_string(num_classes) + ")");
    }
    if (predicted >= num_classes) {
      throw Error(ErrorCode::label_out_of_range, "predicted class " + std::to_string(predicted) + " for '" +
                                                     id + "' outside [0, " + std::to_string(num_classes) + ")");
    }
    ++report.confusion.counts[static_cast<std::size_t>(it->second)][predicted];
  }

  std::int64_t correct = 0;
  double recall_sum = 0.0;
  std::size_t populated = 0;
  for (std::size_t k = 0; k < num_classes; ++k) {
    std::int64_t row = 0;
    for (auto c : report.confusion.counts[k]) row += c;
    correct += report.confusion.counts[k][k];
    report.n += row;
    if (row == 0) {
      report.per_class_recall.push_back(std::numeric_limits<double>::quiet_NaN());
      report.empty_classes.push_back(k);
      continue;
    }
    const double recall = static_cast<double>(report.confusion.counts[k][k]) / static_cast<double>(row);
    report.per_class_recall.push_back(recall);
    recall_sum += recall;
    ++populated;
  }
  report.war = static_cast<double>(correct) / static_cast<double>(report.n);
  report.uar = recall_sum / static_cast<double>(populated);
  return report;
}

std::string eval_report_json(const EvalReport& report) {
  nlohmann::ordered_json j;
  j["class_names"] = report.confusion.class_names;
  j["confusion"] = report.confusion.counts;
  j["n"] = report.n;
  j["uar"] = round4(report.uar);
  j["war"] = round4(report.war);
  auto recalls = nlohmann::ordered_json::array();
  for (double r : report.per_class_recall) {
    if (std::isnan(r)) {
      recalls.push_back(nullptr);
    } else {
      recalls.push_back(round4(r));
    }
  }
  j["per_class_recall"] = recalls;
  j["empty_classes"] = report.empty_classes;
  return j.dump(2) + "\n";
}

ClassVariance per_class_variance(const EmbeddingStore& features, const ProjectionHead* head,
                                 std::size_t num_classes) {
  if (num_classes == 0) {
    for (const auto& rec : features) {
      if (rec.label >= 0) num_classes = std::max(num_classes, static_cast<std::size_t>(rec.label) + 1);
    }
  }
  const Matrix rows = unit_rows(features, head, "feature");
  const auto dim = rows.cols();

  // Welford accumulation of the summed squared deviation, per class.
  std::vector<Vector> mean(num_classes, Vector::Zero(dim));
  std::vector<double> m2(num_classes, 0.0);
  std::vector<std::size_t> count(num_classes, 0);
  for (std::size_t i = 0; i < features.size(); ++i) {
    const auto label = features[i].label;
    if (label == kUnlabeled) continue;
    if (label < 0 || static_cast<std::size_t>(label) >= num_classes) {
      throw Error(ErrorCode::label_out_of_range, "label " + std::to_string(label) + " of '" + features[i].id +
                                                     "' outside [0, " + std::to_string(num_classes) + ")");
    }
    const auto k = static_cast<std::size_t>(label);
    const Vector x = rows.row(static_cast<Eigen::Index>(i)).transpose();
    ++count[k];
    const Vector delta = x - mean[k];
    mean[k] += delta / static_cast<double>(count[k]);
    m2[k] += delta.dot(x - mean[k]);
  }

  ClassVariance out;
  double peak = 0.0;
  for (std::size_t k = 0; k < num_classes; ++k) {
    if (count[k] < 2) {
      out.raw.push_back(std::numeric_limits<double>::quiet_NaN());
      out.excluded.push_back(k);
      continue;
    }
    const double v = m2[k] / static_cast<double>(count[k] - 1) / static_cast<double>(dim);
    out.raw.push_back(v);
    peak = std::max(peak, v);
  }
  for (double v : out.raw) out.normalized.push_back(std::isnan(v) || peak == 0.0 ? v : v / peak);
  return out;
}

RetrievalResult precision_at_k(const EmbeddingStore& queries, const EmbeddingStore& docs,
                               const std::unordered_map<std::string, std::string>& ground_truth,
                               const ProjectionHead* head, std::size_t k) {
  if (k < 1) throw Error(ErrorCode::invalid_argument, "k must be at least 1");
  if (docs.empty() || queries.empty()) throw Error(ErrorCode::invalid_argument, "empty query or document set");
  if (queries.dim() != docs.dim()) {
    throw Error(ErrorCode::dim_mismatch, "queries have dim " + std::to_string(queries.dim()) + ", documents " +
                                             std::to_string(docs.dim()));
  }
  RetrievalResult result;
  result.k_used = k;
  if (k > docs.size()) {
    result.k_used = docs.size();
    result.clamped = true;
  }
  const Matrix q = unit_rows(queries, head, "query");
  const Matrix d = unit_rows(docs, head, "document");
  const Matrix sims = q * d.transpose();

  std::size_t hits = 0;
  for (std::size_t i = 0; i < queries.size(); ++i) {
    auto gt = ground_truth.find(queries[i].id);
    if (gt == ground_truth.end()) {
      throw Error(ErrorCode::unmatched_id, "no ground-truth document for query '" + queries[i].id + "'");
    }
    const auto target = docs.find(gt->second);
    if (target < 0) throw Error(ErrorCode::unknown_id, "ground-truth document '" + gt->second + "' not in store");
    const auto row = sims.row(static_cast<Eigen::Index>(i));
    const double s = row[target];
    // Rank of the true document: strictly better scores, plus equal scores earlier in order.
    std::size_t rank = 0;
    for (Eigen::Index j = 0; j < row.size(); ++j) {
      if (row[j] > s || (row[j] == s && j < target)) ++rank;
    }
    if (rank < result.k_used) ++hits;
  }
  result.precision = static_cast<double>(hits) / static_cast<double>(queries.size());
  return result;
}

}  // namespace protoalign
