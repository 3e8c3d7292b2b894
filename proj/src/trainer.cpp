#include "protoalign/trainer.hpp"

#include <cmath>
#include <limits>
#include <numeric>

#include "json.hpp"
#include "protoalign/error.hpp"
#include "protoalign/random.hpp"
#include "protoalign/sha256.hpp"

namespace protoalign {

namespace {

struct UnitRows {
  Matrix unit;
  Vector norms;
};

UnitRows normalize_rows(const Matrix& m, const char* what) {
  UnitRows out{Matrix(m.rows(), m.cols()), Vector(m.rows())};
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    const double n = m.row(i).norm();
    if (!(n > 0.0)) {
      throw Error(ErrorCode::zero_norm, std::string(what) + " row " + std::to_string(i) +
                                            " has zero norm; cosine undefined");
    }
    out.norms[i] = n;
    out.unit.row(i) = m.row(i) / n;
  }
  return out;
}

void check_batch(const Matrix& projected, const Matrix& targets) {
  if (projected.rows() != targets.rows() || projected.cols() != targets.cols()) {
    throw Error(ErrorCode::dim_mismatch, "projected batch is " + std::to_string(projected.rows()) + "x" +
                                             std::to_string(projected.cols()) + ", targets are " +
                                             std::to_string(targets.rows()) + "x" +
                                             std::to_string(targets.cols()));
  }
  if (!projected.allFinite() || !targets.allFinite()) {
    throw Error(ErrorCode::non_finite, "batch contains non-finite values");
  }
}

// Softmax of one row with its log-sum-exp, shifted by the row max.
double log_softmax_row(const Eigen::Ref<const Eigen::RowVectorXd>& logits, Eigen::RowVectorXd& probs) {
  const double shift = logits.maxCoeff();
  probs = (logits.array() - shift).exp();
  const double sum = probs.sum();
  probs /= sum;
  return shift + std::log(sum);
}

struct InfoNcePass {
  double loss = 0.0;
  Matrix similarity;
  Matrix d_projected;  // dL/d(projected), only when requested
};

InfoNcePass infonce_pass(const Matrix& projected, const Matrix& targets, double tau,
                         InfoNceForm form, bool want_gradient) {
  check_batch(projected, targets);
  const Eigen::Index n = projected.rows();
  if (n < 2) throw Error(ErrorCode::invalid_argument, "contrastive loss needs a batch of at least 2");
  if (!(tau > 0.0)) throw Error(ErrorCode::invalid_argument, "temperature must be positive");

  const UnitRows p = normalize_rows(projected, "projected");
  const UnitRows t = normalize_rows(targets, "target");

  InfoNcePass pass;
  pass.similarity = (p.unit * t.unit.transpose()) / tau;
  Matrix d_logits;  // dL/dS for in_batch; diagonal weights for matched_only
  Eigen::RowVectorXd probs;

  if (form == InfoNceForm::in_batch) {
    d_logits.resize(n, n);
    double total = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double lse = log_softmax_row(pass.similarity.row(i), probs);
      total += lse - pass.similarity(i, i);
      d_logits.row(i) = probs;
      d_logits(i, i) -= 1.0;
    }
    pass.loss = total / static_cast<double>(n);
    d_logits /= static_cast<double>(n);
  } else {
    // Only matched pairs appear in the denominator.
    const Eigen::RowVectorXd diag = pass.similarity.diagonal().transpose();
    const double lse = log_softmax_row(diag, probs);
    pass.loss = lse - diag.mean();
    d_logits = Matrix::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i) d_logits(i, i) = probs[i] - 1.0 / static_cast<double>(n);
  }

  if (want_gradient) {
    const Matrix d_unit = (d_logits * t.unit) / tau;
    pass.d_projected.resize(n, projected.cols());
    for (Eigen::Index i = 0; i < n; ++i) {
      const double radial = p.unit.row(i).dot(d_unit.row(i));
      pass.d_projected.row(i) = (d_unit.row(i) - radial * p.unit.row(i)) / p.norms[i];
    }
  }
  return pass;
}

void check_head_batch(const ProjectionHead& head, const Matrix& inputs, const Matrix& targets) {
  if (inputs.cols() != head.in_dim() || targets.cols() != head.out_dim() ||
      inputs.rows() != targets.rows()) {
    throw Error(ErrorCode::dim_mismatch,
                "batch shapes " + std::to_string(inputs.rows()) + "x" + std::to_string(inputs.cols()) +
                    " / " + std::to_string(targets.rows()) + "x" + std::to_string(targets.cols()) +
                    " do not fit head " + std::to_string(head.in_dim()) + "x" +
                    std::to_string(head.out_dim()));
  }
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

void TrainConfig::validate() const {
  if (!(temperature > 0.0) || !std::isfinite(temperature)) {
    throw Error(ErrorCode::invalid_argument, "temperature must be positive");
  }
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw Error(ErrorCode::invalid_argument, "learning rate must be positive");
  }
  if (batch_size < 1) throw Error(ErrorCode::invalid_argument, "batch size must be at least 1");
  if (loss == LossKind::infonce && batch_size < 2) {
    throw Error(ErrorCode::invalid_argument, "contrastive training needs batch size >= 2");
  }
  if (epochs < 0) throw Error(ErrorCode::invalid_argument, "epochs must be non-negative");
}

std::string_view loss_kind_name(LossKind kind) {
  return kind == LossKind::infonce ? "infonce" : "mse";
}

std::string canonical_config(const TrainConfig& c) {
  std::string s;
  s += "loss=" + std::string(loss_kind_name(c.loss));
  s += ";form=" + std::string(c.form == InfoNceForm::in_batch ? "in_batch" : "matched_only");
  s += ";tau=" + format_double(c.temperature);
  s += ";lr=" + format_double(c.learning_rate);
  s += ";batch=" + std::to_string(c.batch_size);
  s += ";epochs=" + std::to_string(c.epochs);
  s += ";seed=" + std::to_string(c.seed);
  s += ";shuffle=" + std::string(c.shuffle ? "1" : "0");
  return s;
}

std::string config_fingerprint(const TrainConfig& config) {
  return sha256_hex(canonical_config(config)).substr(0, 16);
}

std::string report_to_json(const TrainReport& report, const TrainConfig& config) {
  nlohmann::ordered_json j;
  j["fingerprint"] = report.fingerprint;
  j["config"] = {{"loss", loss_kind_name(config.loss)},
                 {"form", config.form == InfoNceForm::in_batch ? "in_batch" : "matched_only"},
                 {"temperature", config.temperature},
                 {"learning_rate", config.learning_rate},
                 {"batch_size", config.batch_size},
                 {"epochs", config.epochs},
                 {"seed", config.seed},
                 {"shuffle", config.shuffle}};
  j["steps"] = report.steps;
  j["epoch_losses"] = report.epoch_losses;
  if (std::isfinite(report.final_loss)) {
    j["final_loss"] = report.final_loss;
  } else {
    j["final_loss"] = nullptr;
  }
  return j.dump(2) + "\n";
}

InfoNceResult infonce_loss(const Matrix& projected, const Matrix& targets, double temperature,
                           InfoNceForm form) {
  auto pass = infonce_pass(projected, targets, temperature, form, false);
  return InfoNceResult{pass.loss, std::move(pass.similarity)};
}

double mse_loss(const Matrix& projected, const Matrix& targets) {
  check_batch(projected, targets);
  if (projected.rows() == 0) throw Error(ErrorCode::invalid_argument, "empty batch");
  return (projected - targets).rowwise().squaredNorm().mean();
}

LossAndGradient loss_and_gradient(const ProjectionHead& head, const Matrix& inputs,
                                  const Matrix& targets, const TrainConfig& config) {
  check_head_batch(head, inputs, targets);
  const Matrix projected = project_rows(head, inputs);
  LossAndGradient out;
  Matrix d_projected;
  if (config.loss == LossKind::infonce) {
    auto pass = infonce_pass(projected, targets, config.temperature, config.form, true);
    out.loss = pass.loss;
    d_projected = std::move(pass.d_projected);
  } else {
    out.loss = mse_loss(projected, targets);
    d_projected = (2.0 / static_cast<double>(inputs.rows())) * (projected - targets);
  }
  // Targets are frozen; only W receives gradient.
  out.gradient = inputs.transpose() * d_projected;
  return out;
}

Matrix loss_gradient(const ProjectionHead& head, const Matrix& inputs, const Matrix& targets,
                     const TrainConfig& config) {
  return loss_and_gradient(head, inputs, targets, config).gradient;
}

double batch_loss(const ProjectionHead& head, const Matrix& inputs, const Matrix& targets,
                  const TrainConfig& config) {
  check_head_batch(head, inputs, targets);
  const Matrix projected = project_rows(head, inputs);
  if (config.loss == LossKind::infonce) {
    return infonce_pass(projected, targets, config.temperature, config.form, false).loss;
  }
  return mse_loss(projected, targets);
}

Matrix store_matrix(const EmbeddingStore& store) {
  Matrix m(static_cast<Eigen::Index>(store.size()), store.dim());
  for (std::size_t i = 0; i < store.size(); ++i) {
    const auto& v = store[i].vector;
    for (std::uint32_t j = 0; j < store.dim(); ++j) m(static_cast<Eigen::Index>(i), j) = v[j];
  }
  return m;
}

namespace {

Matrix paired_matrix(const EmbeddingStore& store, const PairedDataset& data, bool visual_side) {
  Matrix m(static_cast<Eigen::Index>(data.size()), store.dim());
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& v = store[visual_side ? data.pairs[i].first : data.pairs[i].second].vector;
    for (std::uint32_t j = 0; j < store.dim(); ++j) m(static_cast<Eigen::Index>(i), j) = v[j];
  }
  return m;
}

}  // namespace

Matrix visual_matrix(const PairedDataset& data) { return paired_matrix(data.visual, data, true); }
Matrix target_matrix(const PairedDataset& data) { return paired_matrix(data.target, data, false); }

TrainResult train(ProjectionHead head, const PairedDataset& data, const TrainConfig& config) {
  config.validate();
  if (data.visual.dim() != head.in_dim() || data.target.dim() != head.out_dim()) {
    throw Error(ErrorCode::dim_mismatch,
                "dataset is " + std::to_string(data.visual.dim()) + "->" + std::to_string(data.target.dim()) +
                    ", head is " + std::to_string(head.in_dim()) + "x" + std::to_string(head.out_dim()));
  }
  if (data.size() == 0) throw Error(ErrorCode::invalid_argument, "empty dataset");
  if (config.loss == LossKind::infonce && data.size() < 2) {
    throw Error(ErrorCode::invalid_argument, "contrastive training needs at least 2 pairs");
  }

  const Matrix inputs = visual_matrix(data);
  const Matrix targets = target_matrix(data);
  const auto n = static_cast<std::size_t>(data.size());
  const auto batch = static_cast<std::size_t>(config.batch_size);

  TrainReport report;
  report.fingerprint = config_fingerprint(config);
  report.final_loss = std::numeric_limits<double>::quiet_NaN();

  // Separate stream from the head initializer, which the CLI seeds with the same value.
  Rng rng(config.seed ^ 0x9E3779B97F4A7C15ull);
  std::vector<Eigen::Index> order(n);
  std::iota(order.begin(), order.end(), Eigen::Index{0});

  Matrix batch_inputs;
  Matrix batch_targets;
  for (std::int64_t epoch = 0; epoch < config.epochs; ++epoch) {
    if (config.shuffle) rng.shuffle(std::span(order));
    double loss_sum = 0.0;
    std::int64_t batches = 0;
    for (std::size_t start = 0; start < n; start += batch) {
      const std::size_t rows = std::min(batch, n - start);
      if (config.loss == LossKind::infonce && rows < 2) continue;
      batch_inputs.resize(static_cast<Eigen::Index>(rows), inputs.cols());
      batch_targets.resize(static_cast<Eigen::Index>(rows), targets.cols());
      for (std::size_t r = 0; r < rows; ++r) {
        batch_inputs.row(static_cast<Eigen::Index>(r)) = inputs.row(order[start + r]);
        batch_targets.row(static_cast<Eigen::Index>(r)) = targets.row(order[start + r]);
      }
      const auto step = loss_and_gradient(head, batch_inputs, batch_targets, config);
      if (!std::isfinite(step.loss) || !step.gradient.allFinite()) {
        throw Error(ErrorCode::numeric_failure, "non-finite loss or gradient at epoch " +
                                                    std::to_string(epoch) + ", step " +
                                                    std::to_string(report.steps));
      }
      head.step(step.gradient, config.learning_rate);
      loss_sum += step.loss;
      ++batches;
      ++report.steps;
    }
    report.epoch_losses.push_back(loss_sum / static_cast<double>(batches));
    report.final_loss = report.epoch_losses.back();
  }

  head.metadata().set("train_config", canonical_config(config));
  head.metadata().set("train_config_fingerprint", report.fingerprint);
  return TrainResult{std::move(head), std::move(report)};
}

}  // namespace protoalign
