#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <cmath>
#include <optional>
#include <sstream>

#include "protoalign/cli.hpp"
#include "protoalign/embedding_store.hpp"
#include "protoalign/error.hpp"
#include "protoalign/metrics.hpp"
#include "protoalign/projection_head.hpp"
#include "protoalign/synth.hpp"
#include "protoalign/trainer.hpp"
#include "protoalign/zeroshot.hpp"

namespace py = pybind11;
namespace pa = protoalign;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;
using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

py::dict metadata_dict(const pa::Metadata& m) {
  py::dict d;
  for (const auto& [k, v] : m) d[py::str(k)] = v;
  return d;
}

pa::Metadata to_metadata(const py::dict& d) {
  pa::Metadata m;
  for (const auto& [k, v] : d) m.set(py::cast<std::string>(k), py::cast<std::string>(v));
  return m;
}

pa::EmbeddingStore store_from_arrays(const std::vector<std::string>& ids, const FloatArray& vectors,
                                     pa::SpaceTag tag, const std::optional<std::vector<std::int32_t>>& labels,
                                     const std::optional<std::vector<std::string>>& groups, const py::dict& metadata) {
  if (vectors.ndim() != 2) throw pa::Error(pa::ErrorCode::invalid_argument, "vectors must be a 2-D array");
  const auto n = static_cast<std::size_t>(vectors.shape(0));
  const auto dim = static_cast<std::uint32_t>(vectors.shape(1));
  if (ids.size() != n || (labels && labels->size() != n) || (groups && groups->size() != n)) {
    throw pa::Error(pa::ErrorCode::count_mismatch, "ids, vectors, labels and groups must have equal length");
  }
  pa::EmbeddingStore store(dim, tag, to_metadata(metadata));
  store.reserve(n);
  const float* data = vectors.data();
  for (std::size_t i = 0; i < n; ++i) {
    store.add({ids[i], std::vector<float>(data + i * dim, data + (i + 1) * dim), labels ? (*labels)[i] : pa::kUnlabeled,
               groups ? (*groups)[i] : std::string()});
  }
  return store;
}

py::array_t<float> store_vectors(const pa::EmbeddingStore& store) {
  py::array_t<float> out({static_cast<py::ssize_t>(store.size()), static_cast<py::ssize_t>(store.dim())});
  auto view = out.mutable_unchecked<2>();
  for (std::size_t i = 0; i < store.size(); ++i) {
    for (std::uint32_t j = 0; j < store.dim(); ++j) view(static_cast<py::ssize_t>(i), j) = store[i].vector[j];
  }
  return out;
}

py::dict report_dict(const pa::TrainReport& r) {
  py::dict d;
  d["epoch_losses"] = r.epoch_losses;
  d["final_loss"] = std::isnan(r.final_loss) ? py::object(py::none()) : py::object(py::float_(r.final_loss));
  d["steps"] = r.steps;
  d["fingerprint"] = r.fingerprint;
  return d;
}

py::dict eval_dict(const pa::EvalReport& r) {
  py::dict d;
  d["class_names"] = r.confusion.class_names;
  d["confusion"] = r.confusion.counts;
  d["uar"] = r.uar;
  d["war"] = r.war;
  d["per_class_recall"] = r.per_class_recall;
  d["empty_classes"] = r.empty_classes;
  d["n"] = r.n;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Projection-head alignment and zero-shot classification";
  m.attr("__version__") = std::string(pa::kToolkitVersion);

  // Leaked on purpose: the type must outlive every translator call.
  static py::handle error_type = py::exception<pa::Error>(m, "ProtoalignError", PyExc_RuntimeError).release();
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const pa::Error& e) {
      py::object instance = error_type(e.what());
      instance.attr("code") = std::string(pa::error_code_name(e.code()));
      PyErr_SetObject(error_type.ptr(), instance.ptr());
    }
  });

  py::enum_<pa::SpaceTag>(m, "SpaceTag")
      .value("visual", pa::SpaceTag::visual)
      .value("textual", pa::SpaceTag::textual)
      .value("llm_target", pa::SpaceTag::llm_target);
  py::enum_<pa::LossKind>(m, "LossKind").value("infonce", pa::LossKind::infonce).value("mse", pa::LossKind::mse);
  py::enum_<pa::InfoNceForm>(m, "InfoNceForm")
      .value("in_batch", pa::InfoNceForm::in_batch)
      .value("matched_only", pa::InfoNceForm::matched_only);
  py::enum_<pa::Ensemble>(m, "Ensemble").value("single", pa::Ensemble::single).value("embed_mean", pa::Ensemble::embed_mean);
  py::enum_<pa::PairingRule>(m, "PairingRule")
      .value("by_id", pa::PairingRule::by_id)
      .value("by_order", pa::PairingRule::by_order);

  // ---- stores ----------------------------------------------------------------
  py::class_<pa::EmbeddingStore>(m, "EmbeddingStore")
      .def(py::init([](const std::vector<std::string>& ids, const FloatArray& vectors, pa::SpaceTag tag,
                       std::optional<std::vector<std::int32_t>> labels, std::optional<std::vector<std::string>> groups,
                       const py::dict& metadata) { return store_from_arrays(ids, vectors, tag, labels, groups, metadata); }),
           py::arg("ids"), py::arg("vectors"), py::arg("space_tag"), py::arg("labels") = py::none(),
           py::arg("groups") = py::none(), py::arg("metadata") = py::dict())
      .def_property_readonly("dim", &pa::EmbeddingStore::dim)
      .def_property_readonly("space_tag", &pa::EmbeddingStore::space_tag)
      .def_property_readonly("metadata", [](const pa::EmbeddingStore& s) { return metadata_dict(s.metadata()); })
      .def_property_readonly("ids", [](const pa::EmbeddingStore& s) {
        std::vector<std::string> ids;
        for (const auto& r : s) ids.push_back(r.id);
        return ids;
      })
      .def_property_readonly("labels", [](const pa::EmbeddingStore& s) {
        std::vector<std::int32_t> labels;
        for (const auto& r : s) labels.push_back(r.label);
        return labels;
      })
      .def_property_readonly("groups", [](const pa::EmbeddingStore& s) {
        std::vector<std::string> groups;
        for (const auto& r : s) groups.push_back(r.group);
        return groups;
      })
      .def_property_readonly("vectors", &store_vectors, "float32 array of shape (count, dim)")
      .def("__len__", &pa::EmbeddingStore::size)
      .def("__eq__", [](const pa::EmbeddingStore& a, const pa::EmbeddingStore& b) { return a == b; });

  m.def("read_store", &pa::read_store_file, py::arg("path"));
  m.def("write_store", &pa::write_store_file, py::arg("store"), py::arg("path"));

  // ---- heads -------------------------------------------------------------------
  py::class_<pa::ProjectionHead>(m, "ProjectionHead")
      .def(py::init([](const RowMajor& w, const py::dict& metadata) { return pa::ProjectionHead(w, to_metadata(metadata)); }),
           py::arg("weights"), py::arg("metadata") = py::dict())
      .def_property_readonly("in_dim", &pa::ProjectionHead::in_dim)
      .def_property_readonly("out_dim", &pa::ProjectionHead::out_dim)
      .def_property_readonly("weights", [](const pa::ProjectionHead& h) { return RowMajor(h.weights()); })
      .def_property_readonly("metadata", [](const pa::ProjectionHead& h) { return metadata_dict(h.metadata()); })
      .def("same_weights", &pa::ProjectionHead::same_weights);

  m.def("init_head", [](std::int64_t in_dim, std::int64_t out_dim, std::uint64_t seed) {
    return pa::init_head(in_dim, out_dim, {pa::InitKind::gaussian_scaled, seed});
  }, py::arg("in_dim"), py::arg("out_dim"), py::arg("seed") = 0);
  m.def("project", [](const pa::ProjectionHead& h, const RowMajor& rows) { return RowMajor(pa::project_rows(h, rows)); },
        py::arg("head"), py::arg("rows"), "Project an (N, L) array of row vectors to (N, L').");
  m.def("save_head", &pa::save_head_file, py::arg("head"), py::arg("path"));
  m.def("load_head", [](const std::filesystem::path& path, std::uint32_t in_dim, std::uint32_t out_dim) {
    return pa::load_head_file(path, {in_dim, out_dim});
  }, py::arg("path"), py::arg("in_dim") = 0, py::arg("out_dim") = 0);

  // ---- training ------------------------------------------------------------------
  py::class_<pa::TrainConfig>(m, "TrainConfig")
      .def(py::init<>())
      .def_readwrite("loss", &pa::TrainConfig::loss)
      .def_readwrite("form", &pa::TrainConfig::form)
      .def_readwrite("temperature", &pa::TrainConfig::temperature)
      .def_readwrite("learning_rate", &pa::TrainConfig::learning_rate)
      .def_readwrite("batch_size", &pa::TrainConfig::batch_size)
      .def_readwrite("epochs", &pa::TrainConfig::epochs)
      .def_readwrite("seed", &pa::TrainConfig::seed)
      .def_readwrite("shuffle", &pa::TrainConfig::shuffle)
      .def("fingerprint", &pa::config_fingerprint);

  m.def("infonce_loss", [](const RowMajor& p, const RowMajor& t, double tau, pa::InfoNceForm form) {
    return pa::infonce_loss(p, t, tau, form).loss;
  }, py::arg("projected"), py::arg("targets"), py::arg("temperature"), py::arg("form") = pa::InfoNceForm::in_batch);
  m.def("mse_loss", [](const RowMajor& p, const RowMajor& t) { return pa::mse_loss(p, t); }, py::arg("projected"),
        py::arg("targets"));
  m.def("loss_and_gradient", [](const pa::ProjectionHead& h, const RowMajor& x, const RowMajor& t, const pa::TrainConfig& c) {
    auto r = pa::loss_and_gradient(h, x, t, c);
    return py::make_tuple(r.loss, RowMajor(r.gradient));
  }, py::arg("head"), py::arg("inputs"), py::arg("targets"), py::arg("config"));
  m.def("train", [](const pa::ProjectionHead& head, const pa::EmbeddingStore& visual, const pa::EmbeddingStore& target,
                    const pa::TrainConfig& config, pa::PairingRule pairing) {
    const auto data = pa::make_pairs(visual, target, pairing);
    std::optional<pa::TrainResult> result;
    {
      py::gil_scoped_release release;
      result.emplace(pa::train(head, data, config));
    }
    return py::make_tuple(std::move(result->head), report_dict(result->report));
  }, py::arg("head"), py::arg("visual"), py::arg("target"), py::arg("config"), py::arg("pairing") = pa::PairingRule::by_id);

  // ---- synthetic data --------------------------------------------------------------
  m.def("synth_generate", [](std::int64_t classes, std::int64_t per_class, std::int64_t heldout_per_class,
                             std::int64_t visual_dim, std::int64_t target_dim, double separation, double noise,
                             std::uint64_t seed, std::uint64_t rotation_seed) {
    pa::SynthSpec spec{classes, per_class, heldout_per_class, visual_dim, target_dim, separation, noise, seed, rotation_seed};
    auto d = pa::synth_generate(spec);
    py::dict out;
    out["train_visual"] = d.train.visual;
    out["train_target"] = d.train.target;
    out["heldout"] = d.heldout;
    out["prompts"] = d.prompts.text_embeddings();
    out["prototypes"] = d.target_prototypes;
    return out;
  }, py::arg("classes") = 7, py::arg("per_class") = 200, py::arg("heldout_per_class") = 100, py::arg("visual_dim") = 64,
     py::arg("target_dim") = 32, py::arg("separation") = 0.5, py::arg("noise") = 0.05, py::arg("seed") = 0,
     py::arg("rotation_seed") = 1);

  // ---- zero-shot -------------------------------------------------------------------
  py::class_<pa::Prototypes>(m, "Prototypes")
      .def_readonly("class_names", &pa::Prototypes::class_names)
      .def_property_readonly("directions", [](const pa::Prototypes& p) { return RowMajor(p.directions); })
      .def("to_store", &pa::prototypes_to_store);
  m.def("prototypes_from_store", &pa::prototypes_from_store, py::arg("store"), py::arg("ensemble") = pa::Ensemble::single);
  m.def("build_class_prototypes", [](const pa::ProjectionHead& head, const pa::EmbeddingStore& prompts, pa::Ensemble e) {
    pa::ClassifierConfig c;
    c.ensemble = e;
    return pa::build_class_prototypes(head, pa::PromptSet::from_store(prompts), c);
  }, py::arg("head"), py::arg("prompts"), py::arg("ensemble") = pa::Ensemble::single);
  m.def("template_preset", &pa::template_preset, py::arg("name"));
  m.def("render_prompt", &pa::render_prompt, py::arg("template"), py::arg("class_name"));
  m.def("softmax", [](const Eigen::VectorXd& s, double tau) { return Eigen::VectorXd(pa::softmax(s, tau)); },
        py::arg("similarity"), py::arg("temperature"));
  m.def("predict", [](const pa::ProjectionHead& head, const pa::Prototypes& protos, const RowMajor& frames, double tau) {
    pa::ClassifierConfig c;
    c.temperature = tau;
    std::vector<pa::Vector> rows;
    for (Eigen::Index i = 0; i < frames.rows(); ++i) rows.push_back(frames.row(i).transpose());
    if (rows.size() > 1) c.pooling = pa::Pooling::temporal_mean;
    const auto p = rows.size() == 1 ? pa::predict(head, protos, rows.front(), c)
                                    : pa::predict(head, protos, std::span<const pa::Vector>(rows), c);
    return py::make_tuple(p.argmax, Eigen::VectorXd(p.probs));
  }, py::arg("head"), py::arg("prototypes"), py::arg("sample"), py::arg("temperature") = 0.01,
     "Classify one sample given as a (1, L) array, or a clip of frames as (T, L).");
  m.def("predict_batch", [](const pa::ProjectionHead& head, const pa::Prototypes& protos, const pa::EmbeddingStore& samples,
                            double tau, bool video, unsigned threads) {
    pa::ClassifierConfig c;
    c.temperature = tau;
    c.pooling = video ? pa::Pooling::temporal_mean : pa::Pooling::none;
    std::vector<pa::LabeledPrediction> preds;
    {
      py::gil_scoped_release release;
      preds = pa::predict_batch(head, protos, samples, c, threads);
    }
    py::list out;
    for (const auto& p : preds) out.append(py::make_tuple(p.id, p.prediction.argmax, Eigen::VectorXd(p.prediction.probs)));
    return out;
  }, py::arg("head"), py::arg("prototypes"), py::arg("samples"), py::arg("temperature") = 0.01, py::arg("video") = false,
     py::arg("threads") = 0);

  // ---- metrics -----------------------------------------------------------------------
  m.def("labels_from_store", &pa::labels_from_store, py::arg("store"), py::arg("by_group") = false);
  m.def("score", [](const pa::LabelMap& truth, const std::vector<std::pair<std::string, std::size_t>>& preds,
                    std::size_t num_classes, std::vector<std::string> names) {
    return eval_dict(pa::score(truth, preds, num_classes, std::move(names)));
  }, py::arg("truth"), py::arg("predictions"), py::arg("num_classes"), py::arg("class_names") = std::vector<std::string>{});
  m.def("per_class_variance", [](const pa::EmbeddingStore& s, const pa::ProjectionHead* head, std::size_t k) {
    const auto v = pa::per_class_variance(s, head, k);
    py::dict d;
    d["raw"] = v.raw;
    d["normalized"] = v.normalized;
    d["excluded"] = v.excluded;
    return d;
  }, py::arg("features"), py::arg("head") = nullptr, py::arg("num_classes") = 0);
  m.def("precision_at_k", [](const pa::EmbeddingStore& q, const pa::EmbeddingStore& d,
                             const std::unordered_map<std::string, std::string>& gt, const pa::ProjectionHead* head,
                             std::size_t k) {
    const auto r = pa::precision_at_k(q, d, gt, head, k);
    return py::make_tuple(r.precision, r.k_used, r.clamped);
  }, py::arg("queries"), py::arg("docs"), py::arg("ground_truth"), py::arg("head") = nullptr, py::arg("k") = 1);

  m.def("run_cli", [](std::vector<std::string> args) {
    args.insert(args.begin(), "protoalign");
    std::ostringstream out, err;
    const int status = pa::run_cli(args, out, err);
    return py::make_tuple(status, out.str(), err.str());
  }, py::arg("args"), "Run the command-line tool in-process; returns (status, stdout, stderr).");
}
