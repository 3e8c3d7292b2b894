#include "protoalign/zeroshot.hpp"

#include <array>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <map>
#include <optional>
#include <thread>
#include <unordered_map>

#include "json.hpp"
#include "protoalign/error.hpp"

namespace protoalign {

namespace {

constexpr std::array<std::string_view, 10> kTemplates = {
    "{class name}.",
    "an expression of {class name}.",
    "a photo of a face exuding {class name}.",
    "a photo radiating {class name} in a person.",
    "a photo of a person embodying {class name}.",
    "a good photo capturing someone's {class name}.",
    "a photo showing someone immersed in {class name}.",
    "a photo capturing {class name} within an individual.",
    "a clean photo showcasing a person's {class name}.",
    "a photo of a face with an expression of {class name}.",
};

// Below this a mean of unit vectors is treated as having no direction.
constexpr double kDegenerateNorm = 1e-12;

Vector unit(const Vector& v, const std::string& what) {
  const double n = v.norm();
  if (!(n > kDegenerateNorm)) throw Error(ErrorCode::zero_norm, what + " has zero norm");
  return v / n;
}

// Incremental mean: identical inputs reproduce themselves bit-for-bit.
class RunningMean {
 public:
  void add(const Vector& v) {
    ++count_;
    if (count_ == 1) {
      mean_ = v;
    } else {
      mean_ += (v - mean_) / static_cast<double>(count_);
    }
  }
  const Vector& mean() const { return mean_; }
  std::size_t count() const { return count_; }

 private:
  Vector mean_;
  std::size_t count_ = 0;
};

Vector to_vector(const std::vector<float>& v) {
  Vector x(static_cast<Eigen::Index>(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i) x[static_cast<Eigen::Index>(i)] = v[i];
  return x;
}

std::optional<std::size_t> parse_index(std::string_view s) {
  std::size_t value = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) return std::nullopt;
  return value;
}

struct ParsedId {
  std::size_t class_index = 0;
  std::size_t template_index = 0;
};

// "class:<k>" or "class:<k>/tpl:<j>"
std::optional<ParsedId> parse_prompt_id(std::string_view id) {
  constexpr std::string_view kClass = "class:";
  constexpr std::string_view kTpl = "/tpl:";
  if (!id.starts_with(kClass)) return std::nullopt;
  id.remove_prefix(kClass.size());
  const auto slash = id.find(kTpl);
  ParsedId out;
  auto k = parse_index(id.substr(0, slash));
  if (!k) return std::nullopt;
  out.class_index = *k;
  if (slash != std::string_view::npos) {
    auto j = parse_index(id.substr(slash + kTpl.size()));
    if (!j) return std::nullopt;
    out.template_index = *j;
  }
  return out;
}

std::optional<std::vector<std::string>> metadata_list(const Metadata& metadata, const std::string& key) {
  const auto* raw = metadata.find(key);
  if (!raw) return std::nullopt;
  auto parsed = nlohmann::json::parse(*raw, nullptr, false);
  if (parsed.is_discarded() || !parsed.is_array()) {
    throw Error(ErrorCode::malformed, "metadata '" + key + "' is not a JSON array");
  }
  std::vector<std::string> out;
  for (const auto& item : parsed) {
    if (!item.is_string()) throw Error(ErrorCode::malformed, "metadata '" + key + "' holds a non-string");
    out.push_back(item.get<std::string>());
  }
  return out;
}

std::vector<std::string> default_class_names(std::size_t n) {
  std::vector<std::string> names;
  for (std::size_t k = 0; k < n; ++k) names.push_back("class_" + std::to_string(k));
  return names;
}

unsigned resolve_threads(unsigned requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("PROTOALIGN_THREADS")) {
    if (auto n = parse_index(env); n && *n > 0) return static_cast<unsigned>(*n);
  }
  return 1;
}

}  // namespace

std::span<const std::string_view> expression_templates() { return kTemplates; }

std::string_view default_template() { return kTemplates.back(); }

std::vector<std::string> template_preset(std::string_view name) {
  if (name == "default") return {std::string(default_template())};
  if (name == "ensemble5") return {kTemplates.begin(), kTemplates.begin() + 5};
  if (name == "ensemble10") return {kTemplates.begin(), kTemplates.end()};
  throw Error(ErrorCode::invalid_argument, "unknown template preset '" + std::string(name) + "'");
}

std::string render_prompt(std::string_view tmpl, std::string_view class_name) {
  const auto pos = tmpl.find(kClassPlaceholder);
  if (pos == std::string_view::npos) {
    throw Error(ErrorCode::invalid_argument, "template lacks the {class name} placeholder");
  }
  std::string out(tmpl.substr(0, pos));
  out += class_name;
  out += tmpl.substr(pos + kClassPlaceholder.size());
  return out;
}

std::string prompt_id(std::size_t class_index, std::size_t template_index) {
  return "class:" + std::to_string(class_index) + "/tpl:" + std::to_string(template_index);
}

PromptSet::PromptSet(std::vector<std::string> class_names, std::vector<std::string> templates,
                     EmbeddingStore text_embeddings)
    : class_names_(std::move(class_names)), templates_(std::move(templates)), store_(std::move(text_embeddings)) {
  if (class_names_.size() < 2) throw Error(ErrorCode::invalid_argument, "a prompt set needs at least 2 classes");
  if (templates_.empty()) throw Error(ErrorCode::invalid_argument, "a prompt set needs at least 1 template");
  for (const auto& t : templates_) {
    if (t.find(kClassPlaceholder) == std::string::npos) {
      throw Error(ErrorCode::invalid_argument, "template '" + t + "' lacks the {class name} placeholder");
    }
  }
  if (store_.space_tag() != SpaceTag::textual) {
    throw Error(ErrorCode::invalid_argument, "prompt embeddings must come from a textual store");
  }
  const std::size_t expected = class_names_.size() * templates_.size();
  if (store_.size() != expected) {
    throw Error(ErrorCode::count_mismatch, "prompt store has " + std::to_string(store_.size()) +
                                               " records, expected " + std::to_string(expected));
  }
  slots_.reserve(expected);
  for (std::size_t k = 0; k < class_names_.size(); ++k) {
    for (std::size_t j = 0; j < templates_.size(); ++j) {
      const auto idx = store_.find(prompt_id(k, j));
      if (idx < 0) throw Error(ErrorCode::unmatched_id, "prompt store lacks '" + prompt_id(k, j) + "'");
      slots_.push_back(static_cast<std::size_t>(idx));
    }
  }
}

PromptSet PromptSet::from_store(EmbeddingStore text_embeddings) {
  auto names = metadata_list(text_embeddings.metadata(), "class_names");
  auto templates = metadata_list(text_embeddings.metadata(), "templates");
  if (!names || !templates) {
    std::size_t classes = 0;
    std::size_t tpls = 0;
    for (const auto& rec : text_embeddings) {
      auto parsed = parse_prompt_id(rec.id);
      if (!parsed) throw Error(ErrorCode::malformed, "unexpected prompt id '" + rec.id + "'");
      classes = std::max(classes, parsed->class_index + 1);
      tpls = std::max(tpls, parsed->template_index + 1);
    }
    if (!names) names = default_class_names(classes);
    if (!templates) {
      templates.emplace();
      for (std::size_t j = 0; j < tpls; ++j) templates->push_back("template " + std::to_string(j) + ": {class name}");
    }
  }
  return PromptSet(std::move(*names), std::move(*templates), std::move(text_embeddings));
}

const EmbeddingRecord& PromptSet::embedding(std::size_t class_index, std::size_t template_index) const {
  return store_[slots_.at(class_index * templates_.size() + template_index)];
}

void ClassifierConfig::validate() const {
  if (!(temperature > 0.0) || !std::isfinite(temperature)) {
    throw Error(ErrorCode::invalid_argument, "temperature must be positive");
  }
}

Prototypes build_class_prototypes(const ProjectionHead& head, const PromptSet& prompts,
                                  const ClassifierConfig& config) {
  config.validate();
  if (prompts.text_embeddings().dim() != head.in_dim()) {
    throw Error(ErrorCode::dim_mismatch, "prompt embeddings have dim " +
                                             std::to_string(prompts.text_embeddings().dim()) +
                                             ", head in_dim is " + std::to_string(head.in_dim()));
  }
  Prototypes out{prompts.class_names(), Matrix(prompts.num_classes(), head.out_dim())};
  const std::size_t templates = config.ensemble == Ensemble::single ? 1 : prompts.templates().size();
  for (std::size_t k = 0; k < prompts.num_classes(); ++k) {
    RunningMean mean;
    for (std::size_t j = 0; j < templates; ++j) {
      const auto& rec = prompts.embedding(k, j);
      mean.add(unit(project(head, std::span<const float>(rec.vector)), "projected prompt '" + rec.id + "'"));
    }
    out.directions.row(static_cast<Eigen::Index>(k)) =
        unit(mean.mean(), "prototype of class '" + prompts.class_names()[k] + "'").transpose();
  }
  return out;
}

Prototypes prototypes_from_store(const EmbeddingStore& store, Ensemble ensemble) {
  std::map<std::size_t, std::map<std::size_t, std::size_t>> by_class;  // class -> template -> record
  for (std::size_t i = 0; i < store.size(); ++i) {
    auto parsed = parse_prompt_id(store[i].id);
    if (!parsed) throw Error(ErrorCode::malformed, "unexpected prototype id '" + store[i].id + "'");
    if (!by_class[parsed->class_index].emplace(parsed->template_index, i).second) {
      throw Error(ErrorCode::duplicate_id, "duplicate prototype for '" + store[i].id + "'");
    }
  }
  const std::size_t classes = by_class.empty() ? 0 : by_class.rbegin()->first + 1;
  if (classes < 2 || by_class.size() != classes) {
    throw Error(ErrorCode::count_mismatch, "prototype store must cover classes 0..U-1 with U >= 2");
  }
  auto names = metadata_list(store.metadata(), "class_names").value_or(default_class_names(classes));
  if (names.size() != classes) {
    throw Error(ErrorCode::count_mismatch, "class_names lists " + std::to_string(names.size()) +
                                               " names for " + std::to_string(classes) + " classes");
  }
  Prototypes out{std::move(names), Matrix(classes, store.dim())};
  for (const auto& [k, templates] : by_class) {
    RunningMean mean;
    for (const auto& [j, idx] : templates) {
      mean.add(unit(to_vector(store[idx].vector), "prototype '" + store[idx].id + "'"));
      if (ensemble == Ensemble::single) break;
    }
    out.directions.row(static_cast<Eigen::Index>(k)) = unit(mean.mean(), "prototype of class " + std::to_string(k)).transpose();
  }
  return out;
}

EmbeddingStore prototypes_to_store(const Prototypes& prototypes) {
  Metadata metadata;
  metadata.set("class_names", nlohmann::json(prototypes.class_names).dump());
  metadata.set("kind", "class_prototypes");
  EmbeddingStore store(static_cast<std::uint32_t>(prototypes.directions.cols()), SpaceTag::textual, std::move(metadata));
  for (std::size_t k = 0; k < prototypes.num_classes(); ++k) {
    EmbeddingRecord rec;
    rec.id = "class:" + std::to_string(k);
    rec.label = static_cast<std::int32_t>(k);
    const auto row = prototypes.directions.row(static_cast<Eigen::Index>(k));
    rec.vector.assign(row.begin(), row.end());
    store.add(std::move(rec));
  }
  return store;
}

Vector pool_frames(std::span<const Vector> frames) {
  if (frames.empty()) throw Error(ErrorCode::invalid_argument, "cannot pool an empty frame list");
  RunningMean mean;
  for (const auto& f : frames) {
    if (f.size() != frames.front().size()) {
      throw Error(ErrorCode::dim_mismatch, "frames differ in width: " + std::to_string(frames.front().size()) +
                                               " vs " + std::to_string(f.size()));
    }
    mean.add(f);
  }
  return mean.mean();
}

Vector softmax(const Vector& similarity, double temperature) {
  const Vector logits = similarity / temperature;
  const double shift = logits.maxCoeff();
  Vector probs = (logits.array() - shift).exp();
  probs /= probs.sum();
  return probs;
}

Prediction predict(const ProjectionHead& head, const Prototypes& prototypes, const Vector& sample,
                   const ClassifierConfig& config) {
  config.validate();
  if (prototypes.directions.cols() != head.out_dim()) {
    throw Error(ErrorCode::dim_mismatch, "prototypes have dim " + std::to_string(prototypes.directions.cols()) +
                                             ", head out_dim is " + std::to_string(head.out_dim()));
  }
  const Vector projected = unit(project(head, sample), "projected sample");
  Prediction p;
  p.similarity = prototypes.directions * projected;
  p.probs = softmax(p.similarity, config.temperature);
  // First maximum wins ties.
  for (Eigen::Index k = 1; k < p.probs.size(); ++k) {
    if (p.probs[k] > p.probs[static_cast<Eigen::Index>(p.argmax)]) p.argmax = static_cast<std::size_t>(k);
  }
  return p;
}

Prediction predict(const ProjectionHead& head, const Prototypes& prototypes,
                   std::span<const Vector> frames, const ClassifierConfig& config) {
  if (config.pooling == Pooling::none) {
    if (frames.size() != 1) {
      throw Error(ErrorCode::invalid_argument, "pooling is off but " + std::to_string(frames.size()) +
                                                   " frames were given");
    }
    return predict(head, prototypes, frames.front(), config);
  }
  return predict(head, prototypes, pool_frames(frames), config);
}

std::vector<LabeledPrediction> predict_batch(const ProjectionHead& head, const Prototypes& prototypes,
                                             const EmbeddingStore& samples,
                                             const ClassifierConfig& config, unsigned threads) {
  config.validate();
  struct Sample {
    std::string id;
    std::vector<std::size_t> records;
  };
  std::vector<Sample> units;
  if (config.pooling == Pooling::temporal_mean) {
    std::unordered_map<std::string, std::size_t> slot;
    for (std::size_t i = 0; i < samples.size(); ++i) {
      const auto& rec = samples[i];
      if (rec.group.empty()) {
        units.push_back({rec.id, {i}});
        continue;
      }
      auto [it, inserted] = slot.emplace(rec.group, units.size());
      if (inserted) units.push_back({rec.group, {}});
      units[it->second].records.push_back(i);
    }
  } else {
    for (std::size_t i = 0; i < samples.size(); ++i) units.push_back({samples[i].id, {i}});
  }

  std::vector<LabeledPrediction> out(units.size());
  auto run = [&](std::size_t u) {
    std::vector<Vector> frames;
    frames.reserve(units[u].records.size());
    for (auto r : units[u].records) frames.push_back(to_vector(samples[r].vector));
    out[u] = LabeledPrediction{units[u].id, predict(head, prototypes, std::span<const Vector>(frames), config)};
  };

  const unsigned workers = std::min<std::size_t>(resolve_threads(threads), std::max<std::size_t>(units.size(), 1));
  if (workers <= 1) {
    for (std::size_t u = 0; u < units.size(); ++u) run(u);
    return out;
  }
  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::thread> pool;
  const std::size_t chunk = (units.size() + workers - 1) / workers;
  for (unsigned w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t u = w * chunk; u < std::min(units.size(), (w + 1) * chunk); ++u) run(u);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return out;
}

std::string format_prediction(const LabeledPrediction& p, const Prototypes& prototypes) {
  std::string line = p.id;
  line += '\t';
  line += prototypes.class_names.at(p.prediction.argmax);
  char buf[32];
  for (Eigen::Index k = 0; k < p.prediction.probs.size(); ++k) {
    std::snprintf(buf, sizeof buf, "\t%.9g", p.prediction.probs[k]);
    line += buf;
  }
  return line;
}

}  // namespace protoalign
