#include "protoalign/cli.hpp"

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "protoalign/embedding_store.hpp"
#include "protoalign/error.hpp"
#include "protoalign/metrics.hpp"
#include "protoalign/projection_head.hpp"
#include "protoalign/sha256.hpp"
#include "protoalign/synth.hpp"
#include "protoalign/trainer.hpp"
#include "protoalign/zeroshot.hpp"

namespace protoalign {

namespace {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

/// Collects what a run needs to be reproduced.
class Manifest {
 public:
  explicit Manifest(std::string subcommand) : subcommand_(std::move(subcommand)) {}

  template <typename T>
  void config(const std::string& key, const T& value) { config_[key] = value; }
  void input(const fs::path& path) { inputs_[path.string()] = sha256_file_hex(path); }
  void output(const fs::path& path) { outputs_.push_back(path.string()); }
  void seed(std::uint64_t s) { seed_ = s; }

  void write(const fs::path& path) const {
    json j;
    j["subcommand"] = subcommand_;
    j["toolkit_version"] = kToolkitVersion;
    j["config"] = config_;
    j["inputs"] = inputs_;
    j["outputs"] = outputs_;
    if (seed_) {
      j["seed"] = *seed_;
    } else {
      j["seed"] = nullptr;
    }
    const auto now = std::chrono::system_clock::now().time_since_epoch();
    j["created_unix"] = std::chrono::duration_cast<std::chrono::seconds>(now).count();
    write_text(path, j.dump(2) + "\n");
  }

  static void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::io_error, "cannot open '" + path.string() + "' for writing");
    out << text;
    if (!out) throw Error(ErrorCode::io_error, "write to '" + path.string() + "' failed");
  }

 private:
  std::string subcommand_;
  json config_ = json::object();
  json inputs_ = json::object();
  std::vector<std::string> outputs_;
  std::optional<std::uint64_t> seed_;
};

const std::map<std::string, LossKind> kLossNames = {{"infonce", LossKind::infonce}, {"mse", LossKind::mse}};
const std::map<std::string, PairingRule> kPairingNames = {{"by_id", PairingRule::by_id},
                                                          {"by_order", PairingRule::by_order}};
const std::map<std::string, Ensemble> kEnsembleNames = {{"single", Ensemble::single},
                                                        {"embed_mean", Ensemble::embed_mean}};

template <typename E>
std::string name_of(const std::map<std::string, E>& names, E value) {
  for (const auto& [k, v] : names) {
    if (v == value) return k;
  }
  return "?";
}

std::string with_suffix(const std::string& path, const std::string& suffix) { return path + suffix; }

struct SynthArgs {
  SynthSpec spec;
  std::string out_dir;
};

struct TrainArgs {
  std::string visual, target, out, report, manifest;
  std::string loss = "infonce";
  std::string pairing = "by_id";
  bool matched_only = false;
  bool no_shuffle = false;
  TrainConfig config;
};

struct PrototypeArgs {
  std::string head, prompts, out, manifest;
  std::string ensemble = "single";
};

struct PredictArgs {
  std::string head, prototypes, prompts, samples, out, manifest;
  std::string ensemble = "single";
  bool video = false;
  double tau = 0.01;
};

struct EvalArgs {
  std::string predictions, labels, out, manifest;
  bool video = false;
};

struct InspectArgs {
  std::string file, manifest;
};

int run_synth(const SynthArgs& a, std::ostream& out) {
  const auto data = synth_generate(a.spec);
  const fs::path dir(a.out_dir);
  fs::create_directories(dir);
  Manifest m("synth");
  m.config("classes", a.spec.num_classes);
  m.config("per_class", a.spec.per_class);
  m.config("heldout_per_class", a.spec.heldout_per_class);
  m.config("visual_dim", a.spec.visual_dim);
  m.config("target_dim", a.spec.target_dim);
  m.config("separation", a.spec.separation);
  m.config("noise", a.spec.noise);
  m.config("rotation_seed", a.spec.rotation_seed);
  m.seed(a.spec.seed);
  const std::pair<const char*, const EmbeddingStore*> files[] = {
      {"train_visual.emb", &data.train.visual},  {"train_target.emb", &data.train.target},
      {"heldout.emb", &data.heldout},            {"prompts.emb", &data.prompts.text_embeddings()},
      {"prototypes.emb", &data.target_prototypes}};
  for (const auto& [name, store] : files) {
    write_store_file(*store, dir / name);
    m.output(dir / name);
    out << (dir / name).string() << '\n';
  }
  m.write(dir / "synth.manifest.json");
  return 0;
}

int run_train(TrainArgs a, std::ostream& out) {
  a.config.loss = kLossNames.at(a.loss);
  a.config.form = a.matched_only ? InfoNceForm::matched_only : InfoNceForm::in_batch;
  a.config.shuffle = !a.no_shuffle;
  a.config.validate();

  auto data = make_pairs(read_store_file(a.visual), read_store_file(a.target), kPairingNames.at(a.pairing));
  auto head = init_head(data.visual.dim(), data.target.dim(), HeadInit{InitKind::gaussian_scaled, a.config.seed});
  auto result = train(std::move(head), data, a.config);

  if (a.report.empty()) a.report = with_suffix(a.out, ".report.json");
  if (a.manifest.empty()) a.manifest = with_suffix(a.out, ".manifest.json");
  save_head_file(result.head, a.out);
  Manifest::write_text(a.report, report_to_json(result.report, a.config));

  Manifest m("train");
  m.config("loss", a.loss);
  m.config("form", a.matched_only ? "matched_only" : "in_batch");
  m.config("temperature", a.config.temperature);
  m.config("learning_rate", a.config.learning_rate);
  m.config("batch_size", a.config.batch_size);
  m.config("epochs", a.config.epochs);
  m.config("shuffle", a.config.shuffle);
  m.config("pairing", a.pairing);
  m.config("fingerprint", result.report.fingerprint);
  m.seed(a.config.seed);
  m.input(a.visual);
  m.input(a.target);
  m.output(a.out);
  m.output(a.report);
  m.write(a.manifest);

  out << "steps " << result.report.steps << " final_loss ";
  if (std::isfinite(result.report.final_loss)) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.9g", result.report.final_loss);
    out << buf;
  } else {
    out << "none";
  }
  out << " fingerprint " << result.report.fingerprint << '\n';
  return 0;
}

int run_build_prototypes(PrototypeArgs a, std::ostream& out) {
  const auto head = load_head_file(a.head);
  const auto prompts = PromptSet::from_store(read_store_file(a.prompts));
  ClassifierConfig config;
  config.ensemble = kEnsembleNames.at(a.ensemble);
  const auto protos = build_class_prototypes(head, prompts, config);
  write_store_file(prototypes_to_store(protos), a.out);

  if (a.manifest.empty()) a.manifest = with_suffix(a.out, ".manifest.json");
  Manifest m("build-prototypes");
  m.config("ensemble", a.ensemble);
  m.input(a.head);
  m.input(a.prompts);
  m.output(a.out);
  m.write(a.manifest);
  out << "classes " << protos.num_classes() << " dim " << protos.directions.cols() << '\n';
  return 0;
}

int run_predict(PredictArgs a, std::ostream& out) {
  if (a.prototypes.empty() == a.prompts.empty()) {
    throw Error(ErrorCode::invalid_argument, "give exactly one of --prototypes or --prompts");
  }
  ClassifierConfig config;
  config.temperature = a.tau;
  config.ensemble = kEnsembleNames.at(a.ensemble);
  config.pooling = a.video ? Pooling::temporal_mean : Pooling::none;
  config.validate();

  const auto head = load_head_file(a.head);
  const auto protos = a.prompts.empty()
                          ? prototypes_from_store(read_store_file(a.prototypes), config.ensemble)
                          : build_class_prototypes(head, PromptSet::from_store(read_store_file(a.prompts)), config);
  const auto samples = read_store_file(a.samples);
  const auto predictions = predict_batch(head, protos, samples, config);

  std::ostringstream text;
  text << "#classes";
  for (const auto& name : protos.class_names) text << '\t' << name;
  text << '\n';
  for (const auto& p : predictions) text << format_prediction(p, protos) << '\n';

  if (a.out.empty()) {
    out << text.str();
  } else {
    Manifest::write_text(a.out, text.str());
  }
  if (a.manifest.empty() && !a.out.empty()) a.manifest = with_suffix(a.out, ".manifest.json");
  if (!a.manifest.empty()) {
    Manifest m("predict");
    m.config("temperature", a.tau);
    m.config("ensemble", a.ensemble);
    m.config("video", a.video);
    m.input(a.head);
    m.input(a.prompts.empty() ? a.prototypes : a.prompts);
    m.input(a.samples);
    if (!a.out.empty()) m.output(a.out);
    m.write(a.manifest);
  }
  return 0;
}

struct PredictionFile {
  std::vector<std::string> class_names;
  std::vector<std::pair<std::string, std::size_t>> rows;
};

PredictionFile read_predictions(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::io_error, "cannot open '" + path.string() + "'");
  PredictionFile file;
  std::map<std::string, std::size_t> index;
  std::string line;
  std::size_t line_no = 0;
  auto split = [](const std::string& s) {
    std::vector<std::string> fields;
    std::stringstream ss(s);
    std::string f;
    while (std::getline(ss, f, '\t')) fields.push_back(f);
    return fields;
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto fields = split(line);
    if (fields.front() == "#classes") {
      file.class_names.assign(fields.begin() + 1, fields.end());
      for (std::size_t k = 0; k < file.class_names.size(); ++k) index[file.class_names[k]] = k;
      continue;
    }
    if (file.class_names.empty()) {
      throw Error(ErrorCode::malformed, path.string() + ": missing '#classes' header");
    }
    if (fields.size() != 2 + file.class_names.size()) {
      throw Error(ErrorCode::malformed, path.string() + ":" + std::to_string(line_no) + ": expected " +
                                            std::to_string(2 + file.class_names.size()) + " fields");
    }
    auto it = index.find(fields[1]);
    if (it == index.end()) {
      throw Error(ErrorCode::malformed, path.string() + ":" + std::to_string(line_no) + ": unknown class '" +
                                            fields[1] + "'");
    }
    file.rows.emplace_back(fields[0], it->second);
  }
  return file;
}

int run_eval(EvalArgs a, std::ostream& out) {
  const auto predictions = read_predictions(a.predictions);
  const auto labels = labels_from_store(read_store_file(a.labels), a.video);
  const auto report = score(labels, predictions.rows, predictions.class_names.size(), predictions.class_names);
  const auto text = eval_report_json(report);
  if (a.out.empty()) {
    out << text;
  } else {
    Manifest::write_text(a.out, text);
  }
  if (a.manifest.empty() && !a.out.empty()) a.manifest = with_suffix(a.out, ".manifest.json");
  if (!a.manifest.empty()) {
    Manifest m("eval");
    m.config("video", a.video);
    m.input(a.predictions);
    m.input(a.labels);
    if (!a.out.empty()) m.output(a.out);
    m.write(a.manifest);
  }
  return 0;
}

void print_metadata(std::ostream& out, const Metadata& metadata) {
  out << "metadata " << metadata.size() << '\n';
  for (const auto& [k, v] : metadata) out << "  " << k << " = " << v << '\n';
}

int run_inspect(const InspectArgs& a, std::ostream& out) {
  std::ifstream in(a.file, std::ios::binary);
  if (!in) throw Error(ErrorCode::io_error, "cannot open '" + a.file + "'");
  char magic[4] = {};
  in.read(magic, 4);
  in.seekg(0);
  const std::string tag(magic, static_cast<std::size_t>(in.gcount() < 0 ? 0 : 4));
  if (tag == "PHD1") {
    const auto head = load_head(in);
    out << "format PHD1\nversion " << kHeadFormatVersion << "\nin_dim " << head.in_dim() << "\nout_dim "
        << head.out_dim() << '\n';
    print_metadata(out, head.metadata());
  } else {
    const auto store = read_store(in);
    std::size_t labeled = 0;
    std::map<std::string, std::size_t> groups;
    for (const auto& r : store) {
      if (r.label != kUnlabeled) ++labeled;
      if (!r.group.empty()) ++groups[r.group];
    }
    out << "format EMB1\nversion " << kStoreFormatVersion << "\nspace_tag " << space_tag_name(store.space_tag())
        << "\ndim " << store.dim() << "\ncount " << store.size() << "\nlabeled " << labeled << "\ngroups "
        << groups.size() << '\n';
    print_metadata(out, store.metadata());
  }
  if (!a.manifest.empty()) {
    Manifest m("inspect");
    m.input(a.file);
    m.write(a.manifest);
  }
  return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Align embedding spaces with a linear projection head and classify zero-shot", "protoalign"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kToolkitVersion));

  SynthArgs synth_args;
  auto* synth = app.add_subcommand("synth", "Write a synthetic paired dataset with prompts and prototypes");
  synth->add_option("--out-dir", synth_args.out_dir, "Output directory")->required();
  synth->add_option("--classes", synth_args.spec.num_classes, "Number of classes K")->capture_default_str();
  synth->add_option("--per-class", synth_args.spec.per_class, "Training pairs per class")->capture_default_str();
  synth->add_option("--heldout-per-class", synth_args.spec.heldout_per_class, "Labeled held-out samples per class")
      ->capture_default_str();
  synth->add_option("--visual-dim", synth_args.spec.visual_dim, "Visual dim L")->capture_default_str();
  synth->add_option("--target-dim", synth_args.spec.target_dim, "Target dim L'")->capture_default_str();
  synth->add_option("--separation", synth_args.spec.separation, "Cluster centre norm")->capture_default_str();
  synth->add_option("--noise", synth_args.spec.noise, "Per-component noise std")->capture_default_str();
  synth->add_option("--seed", synth_args.spec.seed, "Sample seed")->capture_default_str();
  synth->add_option("--rotation-seed", synth_args.spec.rotation_seed, "Anchor/rotation seed")->capture_default_str();

  TrainArgs train_args;
  auto* train_cmd = app.add_subcommand("train", "Train a projection head on paired embeddings");
  train_cmd->add_option("--visual", train_args.visual, "Visual EMB1 store")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--target", train_args.target, "Target EMB1 store")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--out", train_args.out, "Output PHD1 head")->required();
  train_cmd->add_option("--loss", train_args.loss, "infonce or mse")
      ->check(CLI::IsMember({"infonce", "mse"}))->capture_default_str();
  train_cmd->add_flag("--matched-only", train_args.matched_only, "Contrastive denominator over matched pairs only");
  train_cmd->add_option("--tau", train_args.config.temperature, "Contrastive temperature")->capture_default_str();
  train_cmd->add_option("--lr", train_args.config.learning_rate, "SGD learning rate")->capture_default_str();
  train_cmd->add_option("--batch", train_args.config.batch_size, "Mini-batch size")->capture_default_str();
  train_cmd->add_option("--epochs", train_args.config.epochs, "Epochs")->capture_default_str();
  train_cmd->add_option("--seed", train_args.config.seed, "Seed for init and shuffling")->capture_default_str();
  train_cmd->add_option("--pairing", train_args.pairing, "by_id or by_order")
      ->check(CLI::IsMember({"by_id", "by_order"}))->capture_default_str();
  train_cmd->add_flag("--no-shuffle", train_args.no_shuffle, "Keep dataset order every epoch");
  train_cmd->add_option("--report", train_args.report, "Report JSON path (default <out>.report.json)");
  train_cmd->add_option("--manifest", train_args.manifest, "Manifest path (default <out>.manifest.json)");

  PrototypeArgs proto_args;
  auto* protos = app.add_subcommand("build-prototypes", "Project prompt embeddings into class prototypes");
  protos->add_option("--head", proto_args.head, "PHD1 head")->required()->check(CLI::ExistingFile);
  protos->add_option("--prompts", proto_args.prompts, "Textual EMB1 prompt store")->required()->check(CLI::ExistingFile);
  protos->add_option("--ensemble", proto_args.ensemble, "single or embed_mean")
      ->check(CLI::IsMember({"single", "embed_mean"}))->capture_default_str();
  protos->add_option("--out", proto_args.out, "Output EMB1 prototype store")->required();
  protos->add_option("--manifest", proto_args.manifest, "Manifest path");

  PredictArgs predict_args;
  auto* predict_cmd = app.add_subcommand("predict", "Zero-shot predictions for a sample store");
  predict_cmd->add_option("--head", predict_args.head, "PHD1 head")->required()->check(CLI::ExistingFile);
  predict_cmd->add_option("--prototypes", predict_args.prototypes, "Prototype store in head output space")
      ->check(CLI::ExistingFile);
  predict_cmd->add_option("--prompts", predict_args.prompts, "Prompt store in head input space")->check(CLI::ExistingFile);
  predict_cmd->add_option("--ensemble", predict_args.ensemble, "single or embed_mean")
      ->check(CLI::IsMember({"single", "embed_mean"}))->capture_default_str();
  predict_cmd->add_option("--samples", predict_args.samples, "Visual EMB1 store")->required()->check(CLI::ExistingFile);
  predict_cmd->add_flag("--video", predict_args.video, "Average frames sharing a group id");
  predict_cmd->add_option("--tau", predict_args.tau, "Softmax temperature")->capture_default_str();
  predict_cmd->add_option("--out", predict_args.out, "Output file (default stdout)");
  predict_cmd->add_option("--manifest", predict_args.manifest, "Manifest path");

  EvalArgs eval_args;
  auto* eval_cmd = app.add_subcommand("eval", "Score predictions against labels");
  eval_cmd->add_option("--predictions", eval_args.predictions, "Prediction file")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--labels", eval_args.labels, "Labeled EMB1 store")->required()->check(CLI::ExistingFile);
  eval_cmd->add_flag("--video", eval_args.video, "Labels keyed by group id");
  eval_cmd->add_option("--out", eval_args.out, "Report JSON (default stdout)");
  eval_cmd->add_option("--manifest", eval_args.manifest, "Manifest path");

  InspectArgs inspect_args;
  auto* inspect = app.add_subcommand("inspect", "Print the header of an EMB1 or PHD1 file");
  inspect->add_option("file", inspect_args.file, "File to inspect")->required()->check(CLI::ExistingFile);
  inspect->add_option("--manifest", inspect_args.manifest, "Manifest path");

  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::CallForVersion&) {
    out << kToolkitVersion << '\n';
    return 0;
  } catch (const CLI::ParseError& e) {
    std::string msg = e.what();
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    err << "error code=usage message=" << json(msg).dump() << '\n';
    return 2;
  }

  try {
    if (*synth) return run_synth(synth_args, out);
    if (*train_cmd) return run_train(train_args, out);
    if (*protos) return run_build_prototypes(proto_args, out);
    if (*predict_cmd) return run_predict(predict_args, out);
    if (*eval_cmd) return run_eval(eval_args, out);
    if (*inspect) return run_inspect(inspect_args, out);
  } catch (const Error& e) {
    err << "error code=" << error_code_name(e.code()) << " message=" << json(std::string(e.what())).dump() << '\n';
    return exit_status(e.code());
  } catch (const fs::filesystem_error& e) {
    err << "error code=io_error message=" << json(std::string(e.what())).dump() << '\n';
    return 3;
  }
  return 2;
}

}  // namespace protoalign
