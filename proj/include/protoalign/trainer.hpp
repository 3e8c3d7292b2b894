#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "protoalign/embedding_store.hpp"
#include "protoalign/projection_head.hpp"

namespace protoalign {

enum class LossKind { infonce, mse };

/// Denominator of the contrastive loss. `in_batch` contrasts each projected
/// sample against every target in the batch; `matched_only` sums only the
/// matched pairs, kept for diagnostics.
enum class InfoNceForm { in_batch, matched_only };

struct TrainConfig {
  LossKind loss = LossKind::infonce;
  InfoNceForm form = InfoNceForm::in_batch;
  double temperature = 0.01;
  double learning_rate = 1e-3;
  std::int64_t batch_size = 512;
  std::int64_t epochs = 5;
  std::uint64_t seed = 0;
  bool shuffle = true;

  void validate() const;
};

std::string_view loss_kind_name(LossKind kind);

/// Stable text rendering of every field; hashed to form the fingerprint.
std::string canonical_config(const TrainConfig& config);
std::string config_fingerprint(const TrainConfig& config);

struct TrainReport {
  std::vector<double> epoch_losses;
  double final_loss = 0.0;  // mean loss of the last epoch; NaN when no steps ran
  std::int64_t steps = 0;
  std::string fingerprint;

  bool operator==(const TrainReport&) const = default;
};

std::string report_to_json(const TrainReport& report, const TrainConfig& config);

struct InfoNceResult {
  double loss = 0.0;
  Matrix similarity;  // N x N cosine / tau
};

/// Contrastive loss over a batch of projected rows and their targets.
/// Row i's positive is target i; the log-sum-exp is max-shifted.
InfoNceResult infonce_loss(const Matrix& projected, const Matrix& targets, double temperature,
                           InfoNceForm form = InfoNceForm::in_batch);

/// Mean over rows of the squared Euclidean distance.
double mse_loss(const Matrix& projected, const Matrix& targets);

struct LossAndGradient {
  double loss = 0.0;
  Matrix gradient;  // L x L'
};

LossAndGradient loss_and_gradient(const ProjectionHead& head, const Matrix& inputs,
                                  const Matrix& targets, const TrainConfig& config);

Matrix loss_gradient(const ProjectionHead& head, const Matrix& inputs, const Matrix& targets,
                     const TrainConfig& config);

/// Loss value only, through the same forward path as the gradient.
double batch_loss(const ProjectionHead& head, const Matrix& inputs, const Matrix& targets,
                  const TrainConfig& config);

struct TrainResult {
  ProjectionHead head;
  TrainReport report;
};

/// Plain minibatch SGD over the paired dataset for a fixed number of epochs.
/// Deterministic for a given (data, config, initial head).
TrainResult train(ProjectionHead head, const PairedDataset& data, const TrainConfig& config);

/// Stack paired vectors into float64 matrices in pairing order.
Matrix visual_matrix(const PairedDataset& data);
Matrix target_matrix(const PairedDataset& data);
Matrix store_matrix(const EmbeddingStore& store);

}  // namespace protoalign
