#pragma once

#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "protoalign/embedding_store.hpp"
#include "protoalign/projection_head.hpp"

namespace protoalign {

inline constexpr std::string_view kClassPlaceholder = "{class name}";

/// The ten expression prompt templates, in a fixed order. The last
/// one is the default single prompt.
std::span<const std::string_view> expression_templates();
std::string_view default_template();

/// Named template lists: "default" (1), "ensemble5" (first five), "ensemble10".
std::vector<std::string> template_preset(std::string_view name);

std::string render_prompt(std::string_view tmpl, std::string_view class_name);

/// Record id of the embedding for (class k, template j): "class:<k>/tpl:<j>".
std::string prompt_id(std::size_t class_index, std::size_t template_index);

/// Class names x templates with one text embedding per pair.
class PromptSet {
 public:
  PromptSet(std::vector<std::string> class_names, std::vector<std::string> templates,
            EmbeddingStore text_embeddings);

  /// Builds from a textual store alone: names and templates come from the
  /// "class_names"/"templates" metadata (JSON arrays) when present, otherwise
  /// they are inferred from the record ids.
  static PromptSet from_store(EmbeddingStore text_embeddings);

  const std::vector<std::string>& class_names() const { return class_names_; }
  const std::vector<std::string>& templates() const { return templates_; }
  const EmbeddingStore& text_embeddings() const { return store_; }
  std::size_t num_classes() const { return class_names_.size(); }
  const EmbeddingRecord& embedding(std::size_t class_index, std::size_t template_index) const;

 private:
  std::vector<std::string> class_names_;
  std::vector<std::string> templates_;
  EmbeddingStore store_;
  std::vector<std::size_t> slots_;  // class-major record indices
};

enum class Ensemble { single, embed_mean };
enum class Pooling { none, temporal_mean };

struct ClassifierConfig {
  double temperature = 0.01;
  Ensemble ensemble = Ensemble::single;
  Pooling pooling = Pooling::none;

  void validate() const;
};

/// Unit-norm class directions in the head's output space, one row per class.
struct Prototypes {
  std::vector<std::string> class_names;
  Matrix directions;

  std::size_t num_classes() const { return class_names.size(); }
};

Prototypes build_class_prototypes(const ProjectionHead& head, const PromptSet& prompts,
                                  const ClassifierConfig& config);

/// Prototypes given directly in output space (ids "class:<k>" or
/// "class:<k>/tpl:<j>"); templates are combined per `ensemble`.
Prototypes prototypes_from_store(const EmbeddingStore& store, Ensemble ensemble);
EmbeddingStore prototypes_to_store(const Prototypes& prototypes);

/// Componentwise mean of raw frame embeddings.
Vector pool_frames(std::span<const Vector> frames);

struct Prediction {
  Vector probs;
  Vector similarity;  // cosine to each prototype
  std::size_t argmax = 0;
};

/// Temperature softmax through a max-shifted log-sum-exp.
Vector softmax(const Vector& similarity, double temperature);

Prediction predict(const ProjectionHead& head, const Prototypes& prototypes, const Vector& sample,
                   const ClassifierConfig& config);
Prediction predict(const ProjectionHead& head, const Prototypes& prototypes,
                   std::span<const Vector> frames, const ClassifierConfig& config);

struct LabeledPrediction {
  std::string id;
  Prediction prediction;
};

/// One prediction per record, or per group id under temporal pooling
/// (records without a group stand alone). Output keeps first-seen order.
/// Work is split across `threads` workers; 0 reads PROTOALIGN_THREADS.
std::vector<LabeledPrediction> predict_batch(const ProjectionHead& head, const Prototypes& prototypes,
                                             const EmbeddingStore& samples,
                                             const ClassifierConfig& config, unsigned threads = 0);

/// "<id>\t<class name>\t<p_0>\t...\t<p_U-1>" with 9 significant digits.
std::string format_prediction(const LabeledPrediction& p, const Prototypes& prototypes);

}  // namespace protoalign
