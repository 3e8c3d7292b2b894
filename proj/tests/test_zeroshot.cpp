#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>

#include "protoalign/error.hpp"
#include "protoalign/zeroshot.hpp"
#include "test_support.hpp"

namespace pa = protoalign;
using pa::ClassifierConfig;
using pa::EmbeddingStore;
using pa::Matrix;
using pa::SpaceTag;
using pa::Vector;

namespace {

std::vector<float> as_floats(const Vector& v) {
  std::vector<float> out(static_cast<std::size_t>(v.size()));
  for (Eigen::Index i = 0; i < v.size(); ++i) out[static_cast<std::size_t>(i)] = static_cast<float>(v[i]);
  return out;
}

/// Text store with `copies` templates per class, every template holding `vectors[k]`.
pa::PromptSet repeated_prompts(const std::vector<Vector>& vectors, std::size_t copies) {
  std::vector<std::string> names, templates;
  for (std::size_t k = 0; k < vectors.size(); ++k) names.push_back("c" + std::to_string(k));
  for (std::size_t j = 0; j < copies; ++j) templates.push_back("tpl " + std::to_string(j) + " {class name}");
  EmbeddingStore store(static_cast<std::uint32_t>(vectors.front().size()), SpaceTag::textual);
  for (std::size_t k = 0; k < vectors.size(); ++k) {
    for (std::size_t j = 0; j < copies; ++j) store.add({pa::prompt_id(k, j), as_floats(vectors[k]), pa::kUnlabeled, ""});
  }
  return pa::PromptSet(names, templates, std::move(store));
}

pa::Prototypes orthonormal_prototypes(int u, int dim) {
  pa::Prototypes p;
  for (int k = 0; k < u; ++k) p.class_names.push_back("c" + std::to_string(k));
  p.directions = Matrix::Identity(u, dim);
  return p;
}

}  // namespace

TEST(Templates, Presets) {
  EXPECT_EQ(pa::expression_templates().size(), 10u);
  EXPECT_EQ(pa::default_template(), "a photo of a face with an expression of {class name}.");
  EXPECT_EQ(pa::template_preset("default").size(), 1u);
  EXPECT_EQ(pa::template_preset("ensemble5").size(), 5u);
  EXPECT_EQ(pa::template_preset("ensemble10").size(), 10u);
  EXPECT_THROW(pa::template_preset("ensemble3"), pa::Error);
  EXPECT_EQ(pa::render_prompt("a photo of {class name}.", "happy"), "a photo of happy.");
  EXPECT_EQ(pa::prompt_id(3, 1), "class:3/tpl:1");
}

TEST(PromptSetTest, Validation) {
  EmbeddingStore wrong_tag(2, SpaceTag::visual);
  wrong_tag.add({pa::prompt_id(0, 0), {1, 0}, pa::kUnlabeled, ""});
  wrong_tag.add({pa::prompt_id(1, 0), {0, 1}, pa::kUnlabeled, ""});
  EXPECT_THROW(pa::PromptSet({"a", "b"}, {"{class name}"}, wrong_tag), pa::Error);

  EmbeddingStore text(2, SpaceTag::textual);
  text.add({pa::prompt_id(0, 0), {1, 0}, pa::kUnlabeled, ""});
  EXPECT_THROW(pa::PromptSet({"a"}, {"{class name}"}, text), pa::Error);             // U < 2
  EXPECT_THROW(pa::PromptSet({"a", "b"}, {"{class name}"}, text), pa::Error);        // count
  text.add({pa::prompt_id(1, 0), {0, 1}, pa::kUnlabeled, ""});
  EXPECT_THROW(pa::PromptSet({"a", "b"}, {"no placeholder"}, text), pa::Error);
  const pa::PromptSet ok({"a", "b"}, {"{class name}"}, text);
  EXPECT_EQ(ok.embedding(1, 0).id, "class:1/tpl:0");
  EXPECT_EQ(pa::PromptSet::from_store(text).num_classes(), 2u);
}

TEST(Prototypes, EnsembleOfCopiesEqualsSingle) {
  std::mt19937_64 gen(3);
  std::vector<Vector> vectors;
  for (int k = 0; k < 4; ++k) vectors.push_back(pa::testing::random_vector(gen, 6));
  const auto head = pa::init_head(6, 5, {pa::InitKind::gaussian_scaled, 2});
  ClassifierConfig single, mean;
  mean.ensemble = pa::Ensemble::embed_mean;
  const auto one = pa::build_class_prototypes(head, repeated_prompts(vectors, 1), single);
  const auto five = pa::build_class_prototypes(head, repeated_prompts(vectors, 5), mean);
  EXPECT_EQ(one.directions, five.directions);
}

TEST(Prototypes, IdentityHeadNormalizesRawEmbedding) {
  std::vector<Vector> vectors = {Vector::Constant(3, 2.0), Vector::Unit(3, 1) * 7.0};
  const auto p = pa::build_class_prototypes(pa::ProjectionHead::identity(3), repeated_prompts(vectors, 1), {});
  for (int k = 0; k < 2; ++k) {
    const Vector raw = Vector(vectors[static_cast<std::size_t>(k)].cast<float>().cast<double>());
    EXPECT_LT((p.directions.row(k).transpose() - raw.normalized()).cwiseAbs().maxCoeff(), 1e-15);
  }
}

TEST(Prototypes, OpposingTemplatesAreZeroNorm) {
  std::vector<std::string> names = {"a", "b"}, templates = {"x {class name}", "y {class name}"};
  EmbeddingStore text(2, SpaceTag::textual);
  text.add({pa::prompt_id(0, 0), {1, 1}, pa::kUnlabeled, ""});
  text.add({pa::prompt_id(0, 1), {-1, -1}, pa::kUnlabeled, ""});
  text.add({pa::prompt_id(1, 0), {1, 0}, pa::kUnlabeled, ""});
  text.add({pa::prompt_id(1, 1), {1, 0}, pa::kUnlabeled, ""});
  ClassifierConfig c;
  c.ensemble = pa::Ensemble::embed_mean;
  try {
    pa::build_class_prototypes(pa::ProjectionHead::identity(2), pa::PromptSet(names, templates, text), c);
    FAIL() << "expected zero_norm";
  } catch (const pa::Error& e) {
    EXPECT_EQ(e.code(), pa::ErrorCode::zero_norm);
  }
}

TEST(Prototypes, StoreRoundTrip) {
  const auto p = orthonormal_prototypes(3, 4);
  const auto back = pa::prototypes_from_store(pa::prototypes_to_store(p), pa::Ensemble::single);
  EXPECT_EQ(back.class_names, p.class_names);
  EXPECT_EQ(back.directions, p.directions);
}

TEST(Pool, HandAndOracle) {
  const std::vector<Vector> same(5, Vector::Constant(3, 0.1));
  EXPECT_EQ(pa::pool_frames(same), same.front());

  const std::vector<Vector> two = {Vector::Unit(2, 0), Vector::Unit(2, 1)};
  EXPECT_EQ(pa::pool_frames(two), Vector::Constant(2, 0.5));

  std::mt19937_64 gen(8);
  std::vector<Vector> frames;
  for (int i = 0; i < 16; ++i) frames.push_back(pa::testing::random_vector(gen, 9));
  Vector sum = Vector::Zero(9);
  for (const auto& f : frames) {
    for (int j = 0; j < 9; ++j) sum[j] += f[j];
  }
  EXPECT_LT((pa::pool_frames(frames) - sum / 16.0).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Predict, HandProbabilities) {
  const auto protos = orthonormal_prototypes(3, 3);
  ClassifierConfig c;
  c.temperature = 1.0;
  const auto p = pa::predict(pa::ProjectionHead::identity(3), protos, Vector(Vector::Unit(3, 0) * 4.0), c);
  EXPECT_EQ(p.argmax, 0u);
  const double denom = std::exp(1.0) + 2.0;
  EXPECT_NEAR(p.probs[0], std::exp(1.0) / denom, 1e-15);
  EXPECT_NEAR(p.probs[1], 1.0 / denom, 1e-15);
  EXPECT_NEAR(p.probs[0], 0.5761, 1e-4);
  EXPECT_NEAR(p.probs[2], 0.2119, 1e-4);

  const auto q = pa::predict(pa::ProjectionHead::identity(3), protos, Vector(Vector::Unit(3, 2)), c);
  EXPECT_EQ(q.argmax, 2u);
}

TEST(Predict, IdenticalPrototypesTieToFirst) {
  pa::Prototypes protos;
  protos.class_names = {"a", "b", "c", "d"};
  protos.directions = Matrix::Constant(4, 2, std::sqrt(0.5));
  const auto p = pa::predict(pa::ProjectionHead::identity(2), protos, Vector(Vector::Ones(2)), {});
  EXPECT_EQ(p.argmax, 0u);
  for (int k = 0; k < 4; ++k) EXPECT_NEAR(p.probs[k], 0.25, 1e-15);
}

TEST(Predict, ScaleInvariant) {
  std::mt19937_64 gen(9);
  const auto head = pa::init_head(6, 4, {});
  pa::Prototypes protos;
  protos.class_names = {"a", "b", "c"};
  protos.directions = pa::testing::random_matrix(gen, 3, 4).rowwise().normalized();
  std::uniform_real_distribution<double> scale(1e-3, 1e3);
  for (int i = 0; i < 20; ++i) {
    const Vector v = pa::testing::random_vector(gen, 6);
    const auto a = pa::predict(head, protos, v, {});
    const auto b = pa::predict(head, protos, Vector(v * scale(gen)), {});
    EXPECT_LE((a.probs - b.probs).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_EQ(a.argmax, b.argmax);
  }
}

TEST(Predict, ZeroSampleRejected) {
  const auto protos = orthonormal_prototypes(2, 2);
  EXPECT_THROW(pa::predict(pa::ProjectionHead::identity(2), protos, Vector(Vector::Zero(2)), {}), pa::Error);
}

TEST(Softmax, ShiftInvariant) {
  std::mt19937_64 gen(10);
  for (int i = 0; i < 10; ++i) {
    const Vector s = pa::testing::random_vector(gen, 7);
    const Vector a = pa::softmax(s, 0.1);
    const Vector b = pa::softmax((s.array() + 3.5).matrix(), 0.1);
    EXPECT_LE((a - b).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_NEAR(a.sum(), 1.0, 1e-12);
  }
}

TEST(PredictBatch, SingletonsAndGroups) {
  std::mt19937_64 gen(12);
  const auto head = pa::init_head(5, 3, {pa::InitKind::gaussian_scaled, 1});
  pa::Prototypes protos;
  protos.class_names = {"a", "b", "c"};
  protos.directions = pa::testing::random_matrix(gen, 3, 3).rowwise().normalized();

  EmbeddingStore singles(5, SpaceTag::visual);
  for (int i = 0; i < 3; ++i) {
    singles.add({"s" + std::to_string(i), as_floats(pa::testing::random_vector(gen, 5)), pa::kUnlabeled,
                 "g" + std::to_string(i)});
  }
  ClassifierConfig video;
  video.pooling = pa::Pooling::temporal_mean;
  const auto out = pa::predict_batch(head, protos, singles, video, 2);
  ASSERT_EQ(out.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    const Vector v = Eigen::Map<const Eigen::VectorXf>(singles[i].vector.data(), 5).cast<double>();
    EXPECT_EQ(out[i].prediction.probs, pa::predict(head, protos, v, {}).probs);
  }

  EmbeddingStore clip(5, SpaceTag::visual);
  std::vector<Vector> frames;
  for (int i = 0; i < 16; ++i) {
    clip.add({"f" + std::to_string(i), as_floats(pa::testing::random_vector(gen, 5)), 1, "clip"});
    frames.push_back(Eigen::Map<const Eigen::VectorXf>(clip[static_cast<std::size_t>(i)].vector.data(), 5).cast<double>());
  }
  const auto pooled = pa::predict_batch(head, protos, clip, video, 3);
  ASSERT_EQ(pooled.size(), 1u);
  EXPECT_EQ(pooled[0].id, "clip");
  EXPECT_EQ(pooled[0].prediction.probs, pa::predict(head, protos, Vector(pa::pool_frames(frames)), {}).probs);

  EXPECT_TRUE(pa::predict_batch(head, protos, EmbeddingStore(5, SpaceTag::visual), {}, 1).empty());
}

TEST(PredictBatch, ThreadCountDoesNotChangeOutput) {
  std::mt19937_64 gen(13);
  const auto head = pa::init_head(8, 4, {});
  pa::Prototypes protos;
  protos.class_names = {"a", "b", "c", "d"};
  protos.directions = pa::testing::random_matrix(gen, 4, 4).rowwise().normalized();
  const auto samples = pa::testing::random_store(gen, 101, 8);
  const auto one = pa::predict_batch(head, protos, samples, {}, 1);
  const auto many = pa::predict_batch(head, protos, samples, {}, 7);
  ASSERT_EQ(one.size(), many.size());
  for (std::size_t i = 0; i < one.size(); ++i) {
    EXPECT_EQ(one[i].id, many[i].id);
    EXPECT_EQ(one[i].prediction.probs, many[i].prediction.probs);
  }
}

TEST(PredictBatch, FormatLine) {
  pa::LabeledPrediction p;
  p.id = "x";
  p.prediction.probs = Vector::Constant(2, 0.5);
  p.prediction.argmax = 1;
  const auto protos = orthonormal_prototypes(2, 2);
  EXPECT_EQ(pa::format_prediction(p, protos), "x\tc1\t0.5\t0.5");
}
