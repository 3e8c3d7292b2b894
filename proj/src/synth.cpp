#include "protoalign/synth.hpp"

#include "json.hpp"
#include "protoalign/error.hpp"
#include "protoalign/random.hpp"

namespace protoalign {

namespace {

std::vector<float> to_floats(const Vector& v) {
  std::vector<float> out(static_cast<std::size_t>(v.size()));
  for (Eigen::Index i = 0; i < v.size(); ++i) out[static_cast<std::size_t>(i)] = static_cast<float>(v[i]);
  return out;
}

Vector gaussian(Rng& rng, std::int64_t n, double scale) {
  Vector v(n);
  for (auto& x : v) x = scale * rng.normal();
  return v;
}

Metadata synth_metadata(const SynthSpec& spec, const std::string& role) {
  Metadata m;
  m.set("generator", "synth");
  m.set("role", role);
  m.set("seed", std::to_string(spec.seed));
  m.set("rotation_seed", std::to_string(spec.rotation_seed));
  return m;
}

}  // namespace

void SynthSpec::validate() const {
  if (num_classes < 2) throw Error(ErrorCode::invalid_argument, "synth needs at least 2 classes");
  if (per_class < 1 || heldout_per_class < 0) {
    throw Error(ErrorCode::invalid_argument, "sample counts must be positive");
  }
  if (visual_dim < 1 || target_dim < 1) throw Error(ErrorCode::invalid_argument, "dims must be positive");
  if (num_classes > std::min(visual_dim, target_dim)) {
    throw Error(ErrorCode::invalid_argument, "K=" + std::to_string(num_classes) + " exceeds min(L, L')=" +
                                                 std::to_string(std::min(visual_dim, target_dim)));
  }
  if (!(separation > 0.0) || !(noise >= 0.0)) {
    throw Error(ErrorCode::invalid_argument, "separation must be positive and noise non-negative");
  }
}

Matrix random_orthonormal(std::int64_t rows, std::int64_t dim, std::uint64_t seed) {
  if (rows < 1 || rows > dim) throw Error(ErrorCode::invalid_argument, "need 1 <= rows <= dim");
  Rng rng(seed);
  Eigen::MatrixXd g(dim, dim);
  for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = rng.normal();
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  Eigen::MatrixXd q = qr.householderQ();
  const Eigen::MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
  // Sign fix makes Q Haar-distributed rather than biased by the QR convention.
  for (Eigen::Index j = 0; j < dim; ++j) {
    if (r(j, j) < 0) q.col(j) *= -1.0;
  }
  return q.leftCols(rows).transpose();
}

SynthData synth_generate(const SynthSpec& spec) {
  spec.validate();
  const auto K = spec.num_classes;
  const Matrix visual_anchors = random_orthonormal(K, spec.visual_dim, spec.rotation_seed);
  const Matrix target_anchors = random_orthonormal(K, spec.target_dim, spec.rotation_seed + 1);
  const Matrix rotation = random_orthonormal(spec.target_dim, spec.target_dim, spec.rotation_seed + 2);
  const Matrix rotated = target_anchors * rotation.transpose();  // row k = (R u_k)^T

  Rng rng(spec.seed);
  auto draw_visual = [&](std::int64_t k) -> Vector {
    return spec.separation * visual_anchors.row(k).transpose() + gaussian(rng, spec.visual_dim, spec.noise);
  };

  EmbeddingStore visual(static_cast<std::uint32_t>(spec.visual_dim), SpaceTag::visual, synth_metadata(spec, "train_visual"));
  EmbeddingStore target(static_cast<std::uint32_t>(spec.target_dim), SpaceTag::llm_target, synth_metadata(spec, "train_target"));
  std::int64_t n = 0;
  for (std::int64_t k = 0; k < K; ++k) {
    for (std::int64_t i = 0; i < spec.per_class; ++i, ++n) {
      const std::string id = "train:" + std::to_string(n);
      visual.add({id, to_floats(draw_visual(k)), kUnlabeled, {}});
      const Vector t = rotated.row(k).transpose() + gaussian(rng, spec.target_dim, spec.noise);
      target.add({id, to_floats(t), kUnlabeled, {}});
    }
  }

  EmbeddingStore heldout(static_cast<std::uint32_t>(spec.visual_dim), SpaceTag::visual, synth_metadata(spec, "heldout_visual"));
  n = 0;
  for (std::int64_t k = 0; k < K; ++k) {
    for (std::int64_t i = 0; i < spec.heldout_per_class; ++i, ++n) {
      heldout.add({"heldout:" + std::to_string(n), to_floats(draw_visual(k)), static_cast<std::int32_t>(k), {}});
    }
  }

  std::vector<std::string> names;
  for (std::int64_t k = 0; k < K; ++k) names.push_back("class_" + std::to_string(k));
  std::vector<std::string> templates = {std::string(expression_templates().front())};

  Metadata prompt_meta = synth_metadata(spec, "prompts");
  prompt_meta.set("class_names", nlohmann::json(names).dump());
  prompt_meta.set("templates", nlohmann::json(templates).dump());
  EmbeddingStore prompt_store(static_cast<std::uint32_t>(spec.visual_dim), SpaceTag::textual, std::move(prompt_meta));
  for (std::int64_t k = 0; k < K; ++k) {
    prompt_store.add({prompt_id(static_cast<std::size_t>(k), 0), to_floats(visual_anchors.row(k).transpose()),
                      static_cast<std::int32_t>(k), {}});
  }

  Metadata proto_meta = synth_metadata(spec, "target_prototypes");
  proto_meta.set("class_names", nlohmann::json(names).dump());
  EmbeddingStore protos(static_cast<std::uint32_t>(spec.target_dim), SpaceTag::textual, std::move(proto_meta));
  for (std::int64_t k = 0; k < K; ++k) {
    protos.add({"class:" + std::to_string(k), to_floats(rotated.row(k).transpose()), static_cast<std::int32_t>(k), {}});
  }

  auto pairs = make_pairs(std::move(visual), std::move(target), PairingRule::by_order);
  return SynthData{std::move(pairs),
                   std::move(heldout),
                   PromptSet(names, templates, std::move(prompt_store)),
                   std::move(protos),
                   visual_anchors,
                   target_anchors,
                   rotation};
}

LinearData linear_pairs(const LinearSpec& spec) {
  if (spec.samples < 1 || spec.in_dim < 1 || spec.out_dim < 1) {
    throw Error(ErrorCode::invalid_argument, "linear_pairs needs positive sizes");
  }
  // The map gets its own stream: drawn from `seed` directly it would equal
  // init_head(in_dim, out_dim, seed) and training would start at the answer.
  Rng map_rng(spec.seed ^ 0xD1B54A32D192ED03ull);
  Matrix map(spec.in_dim, spec.out_dim);
  const double scale = 1.0 / std::sqrt(static_cast<double>(spec.in_dim));
  for (Eigen::Index i = 0; i < map.size(); ++i) map.data()[i] = scale * map_rng.normal();

  Rng rng(spec.seed);

  EmbeddingStore visual(static_cast<std::uint32_t>(spec.in_dim), SpaceTag::visual);
  EmbeddingStore target(static_cast<std::uint32_t>(spec.out_dim), SpaceTag::llm_target);
  for (std::int64_t i = 0; i < spec.samples; ++i) {
    const std::vector<float> x = to_floats(gaussian(rng, spec.in_dim, spec.input_scale));
    Vector xd(spec.in_dim);
    for (Eigen::Index j = 0; j < xd.size(); ++j) xd[j] = x[static_cast<std::size_t>(j)];
    const std::string id = "lin:" + std::to_string(i);
    visual.add({id, x, kUnlabeled, {}});
    target.add({id, to_floats(map.transpose() * xd), kUnlabeled, {}});
  }
  return LinearData{make_pairs(std::move(visual), std::move(target), PairingRule::by_order), std::move(map)};
}

}  // namespace protoalign
