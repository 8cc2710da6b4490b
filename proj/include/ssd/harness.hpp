#pragma once

// Experiment orchestration: JSON configuration, the end-to-end unlearning
// pipeline, alpha sweeps and report serialisation.

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "ssd/dampening.hpp"
#include "ssd/data.hpp"
#include "ssd/evaluation.hpp"
#include "ssd/importance.hpp"
#include "ssd/model.hpp"
#include "ssd/training.hpp"

namespace ssd {

using Json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Configuration.

struct DataConfig {
  enum class Source { synthetic, csv } source = Source::synthetic;
  // synthetic
  BlobParams blobs;
  std::uint64_t test_seed = 0;
  std::size_t test_per_class = 100;
  // csv
  std::string train_path;
  std::string test_path;
  CsvSchema schema;
};

struct SweepConfig {
  std::vector<double> alpha_grid;
  /// A grid point is on the plateau when D_f accuracy <= forget_max and D_r
  /// accuracy >= baseline D_r - retain_drop_max.
  double forget_max = 5.0;
  double retain_drop_max = 5.0;
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::vector<std::size_t> hidden_sizes{32, 32};
  std::uint64_t init_seed = 0;
  DataConfig data;
  SplitRule scenario = FullClass{0};
  TrainConfig train;
  std::uint32_t finetune_epochs = 2;
  Method method = Method::lfssd;
  DampeningConfig dampening;
  OutputSpace output_space = OutputSpace::logits;
  MiaConfig mia;
  SweepConfig sweep;
  std::string output_dir = "ssd_out";

  LabelSource label_source() const { return training_labels(scenario); }
};

namespace detail {

[[noreturn]] inline void config_error(const std::string& msg) { throw Error(Errc::config, msg); }

template <typename T>
T get_or(const Json& j, const char* key, T fallback) {
  if (!j.contains(key) || j.at(key).is_null()) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const Json::exception& e) {
    config_error(std::string("field \"") + key + "\": " + e.what());
  }
}

inline const Json& section(const Json& j, const char* key) {
  static const Json empty = Json::object();
  if (!j.contains(key)) return empty;
  if (!j.at(key).is_object()) config_error(std::string("\"") + key + "\" must be an object");
  return j.at(key);
}

inline void reject_unknown(const Json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || it.key() == a;
    if (!ok) config_error("unknown key \"" + it.key() + "\" in " + where);
  }
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace detail

/// Parses a configuration. Seeds that are not given are derived from the
/// master seed, so the resolved config (to_json) always lists every seed.
inline ExperimentConfig config_from_json(const Json& j) {
  using detail::config_error;
  using detail::get_or;
  if (!j.is_object()) config_error("configuration must be a JSON object");
  detail::reject_unknown(j, {"seed", "model", "data", "scenario", "train", "finetune_epochs", "method", "dampening",
                             "output_space", "mia", "sweep", "output_dir"},
                         "configuration");
  ExperimentConfig c;
  c.seed = get_or<std::uint64_t>(j, "seed", 0);
  auto derived = [&](std::uint64_t tag) { return derive_seed(c.seed, tag); };

  const Json& model = detail::section(j, "model");
  detail::reject_unknown(model, {"hidden_sizes", "activation", "init_seed"}, "model");
  c.hidden_sizes = get_or<std::vector<std::size_t>>(model, "hidden_sizes", c.hidden_sizes);
  if (get_or<std::string>(model, "activation", "relu") != "relu") config_error("model.activation must be \"relu\"");
  c.init_seed = get_or<std::uint64_t>(model, "init_seed", derived(1));

  const Json& data = detail::section(j, "data");
  const auto source = get_or<std::string>(data, "source", "synthetic");
  if (source == "synthetic") {
    detail::reject_unknown(data, {"source", "n_classes", "n_per_class", "n_features", "separation", "seed",
                                  "subclasses_per_class", "test_seed", "test_per_class"},
                           "data");
    auto& b = c.data.blobs;
    b.n_classes = get_or<std::size_t>(data, "n_classes", 10);
    b.n_per_class = get_or<std::size_t>(data, "n_per_class", 100);
    b.n_features = get_or<std::size_t>(data, "n_features", 10);
    b.separation = get_or<double>(data, "separation", 6.0);
    b.seed = get_or<std::uint64_t>(data, "seed", derived(2));
    if (data.contains("subclasses_per_class") && !data.at("subclasses_per_class").is_null())
      b.subclasses_per_class = get_or<std::size_t>(data, "subclasses_per_class", 1);
    c.data.test_seed = get_or<std::uint64_t>(data, "test_seed", derived(3));
    c.data.test_per_class = get_or<std::size_t>(data, "test_per_class", b.n_per_class);
    if (c.data.test_seed == b.seed) config_error("data.test_seed must differ from data.seed");
  } else if (source == "csv") {
    detail::reject_unknown(data, {"source", "train_path", "test_path", "feature_columns", "label_column",
                                  "coarse_label_column"},
                           "data");
    c.data.source = DataConfig::Source::csv;
    c.data.train_path = get_or<std::string>(data, "train_path", "");
    c.data.test_path = get_or<std::string>(data, "test_path", "");
    if (c.data.train_path.empty() || c.data.test_path.empty())
      config_error("csv data needs train_path and test_path");
    c.data.schema.feature_columns = get_or<std::vector<std::string>>(data, "feature_columns", {});
    c.data.schema.fine_label_column = get_or<std::string>(data, "label_column", "label");
    if (data.contains("coarse_label_column") && !data.at("coarse_label_column").is_null())
      c.data.schema.coarse_label_column = get_or<std::string>(data, "coarse_label_column", "");
  } else {
    config_error("data.source must be \"synthetic\" or \"csv\"");
  }

  const Json& sc = detail::section(j, "scenario");
  detail::reject_unknown(sc, {"kind", "class", "fraction", "seed"}, "scenario");
  const auto kind = get_or<std::string>(sc, "kind", "full_class");
  if (kind == "full_class") {
    c.scenario = FullClass{get_or<std::size_t>(sc, "class", 0)};
  } else if (kind == "subclass") {
    c.scenario = SubClass{get_or<std::size_t>(sc, "class", 0)};
  } else if (kind == "random") {
    c.scenario = RandomFraction{get_or<double>(sc, "fraction", 0.02), get_or<std::uint64_t>(sc, "seed", derived(4))};
  } else {
    config_error("scenario.kind must be full_class, subclass or random");
  }

  const Json& tr = detail::section(j, "train");
  detail::reject_unknown(tr, {"epochs", "batch_size", "learning_rate", "momentum", "shuffle_seed"}, "train");
  c.train.epochs = get_or<std::uint32_t>(tr, "epochs", 20);
  c.train.batch_size = get_or<std::uint32_t>(tr, "batch_size", 32);
  c.train.learning_rate = get_or<double>(tr, "learning_rate", 0.02);
  c.train.momentum = get_or<double>(tr, "momentum", 0.9);
  c.train.shuffle_seed = get_or<std::uint64_t>(tr, "shuffle_seed", derived(5));
  c.train.label_source = c.label_source();
  c.finetune_epochs = get_or<std::uint32_t>(j, "finetune_epochs", 2);

  const auto method = get_or<std::string>(j, "method", "lfssd");
  if (method == "ssd") c.method = Method::ssd;
  else if (method == "lfssd") c.method = Method::lfssd;
  else config_error("method must be \"ssd\" or \"lfssd\"");

  const Json& dp = detail::section(j, "dampening");
  detail::reject_unknown(dp, {"alpha", "lambda"}, "dampening");
  c.dampening.alpha = get_or<double>(dp, "alpha", 10.0);
  c.dampening.lambda = get_or<double>(dp, "lambda", 1.0);

  const auto space = get_or<std::string>(j, "output_space", "logits");
  if (space == "logits") c.output_space = OutputSpace::logits;
  else if (space == "softmax") c.output_space = OutputSpace::softmax;
  else config_error("output_space must be \"logits\" or \"softmax\"");

  const Json& mia = detail::section(j, "mia");
  detail::reject_unknown(mia, {"attack_seed", "members_per_class", "lr", "iterations"}, "mia");
  c.mia.attack_seed = get_or<std::uint64_t>(mia, "attack_seed", derived(6));
  c.mia.members_per_class = get_or<std::uint32_t>(mia, "members_per_class", 500);
  c.mia.lr = get_or<double>(mia, "lr", 0.5);
  c.mia.iterations = get_or<std::uint32_t>(mia, "iterations", 2000);

  const Json& sw = detail::section(j, "sweep");
  detail::reject_unknown(sw, {"alpha_grid", "forget_max", "retain_drop_max"}, "sweep");
  c.sweep.alpha_grid = get_or<std::vector<double>>(sw, "alpha_grid", {1.0, 5.0, 10.0, 25.0, 50.0});
  c.sweep.forget_max = get_or<double>(sw, "forget_max", 5.0);
  c.sweep.retain_drop_max = get_or<double>(sw, "retain_drop_max", 5.0);

  c.output_dir = get_or<std::string>(j, "output_dir", c.output_dir);

  try {
    c.train.validate();
    c.dampening.validate();
    c.mia.validate();
  } catch (const Error& e) {
    config_error(e.message());
  }
  for (std::size_t h : c.hidden_sizes)
    if (h == 0) config_error("model.hidden_sizes entries must be positive");
  return c;
}

/// Resolved configuration. Feeding this back through config_from_json yields
/// an identical config. output_dir is left out when `with_output_dir` is false
/// (the canonical report section is location-independent).
inline Json config_to_json(const ExperimentConfig& c, bool with_output_dir = true) {
  Json j;
  j["seed"] = c.seed;
  j["model"] = {{"hidden_sizes", c.hidden_sizes}, {"activation", "relu"}, {"init_seed", c.init_seed}};
  if (c.data.source == DataConfig::Source::synthetic) {
    const auto& b = c.data.blobs;
    Json d = {{"source", "synthetic"}, {"n_classes", b.n_classes}, {"n_per_class", b.n_per_class},
              {"n_features", b.n_features}, {"separation", b.separation}, {"seed", b.seed}};
    d["subclasses_per_class"] = b.subclasses_per_class ? Json(*b.subclasses_per_class) : Json(nullptr);
    d["test_seed"] = c.data.test_seed;
    d["test_per_class"] = c.data.test_per_class;
    j["data"] = d;
  } else {
    Json d = {{"source", "csv"}, {"train_path", c.data.train_path}, {"test_path", c.data.test_path},
              {"feature_columns", c.data.schema.feature_columns}, {"label_column", c.data.schema.fine_label_column}};
    d["coarse_label_column"] = c.data.schema.coarse_label_column ? Json(*c.data.schema.coarse_label_column) : Json(nullptr);
    j["data"] = d;
  }
  if (const auto* fc = std::get_if<FullClass>(&c.scenario)) j["scenario"] = {{"kind", "full_class"}, {"class", fc->fine_class}};
  else if (const auto* sc = std::get_if<SubClass>(&c.scenario)) j["scenario"] = {{"kind", "subclass"}, {"class", sc->fine_class}};
  else {
    const auto& rf = std::get<RandomFraction>(c.scenario);
    j["scenario"] = {{"kind", "random"}, {"fraction", rf.fraction}, {"seed", rf.seed}};
  }
  j["train"] = {{"epochs", c.train.epochs}, {"batch_size", c.train.batch_size}, {"learning_rate", c.train.learning_rate},
                {"momentum", c.train.momentum}, {"shuffle_seed", c.train.shuffle_seed}};
  j["finetune_epochs"] = c.finetune_epochs;
  j["method"] = to_string(c.method);
  j["dampening"] = {{"alpha", c.dampening.alpha}, {"lambda", c.dampening.lambda}};
  j["output_space"] = to_string(c.output_space);
  j["mia"] = {{"attack_seed", c.mia.attack_seed}, {"members_per_class", c.mia.members_per_class},
              {"lr", c.mia.lr}, {"iterations", c.mia.iterations}};
  j["sweep"] = {{"alpha_grid", c.sweep.alpha_grid}, {"forget_max", c.sweep.forget_max},
                {"retain_drop_max", c.sweep.retain_drop_max}};
  if (with_output_dir) j["output_dir"] = c.output_dir;
  return j;
}

inline Json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::config, "cannot open config " + path.string());
  try {
    return Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw Error(Errc::config, path.string() + ": " + e.what());
  }
}

/// Applies "a.b.c=value" to a JSON tree; value is parsed as JSON when it
/// parses, otherwise taken as a string.
inline void apply_override(Json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw Error(Errc::config, "override \"" + assignment + "\" is not key=value");
  const std::string path = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  Json value = Json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  Json* node = &j;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (key.empty()) throw Error(Errc::config, "override \"" + assignment + "\" has an empty key");
    if (dot == std::string::npos) {
      (*node)[key] = value;
      break;
    }
    if (!node->contains(key) || !(*node)[key].is_object()) (*node)[key] = Json::object();
    node = &(*node)[key];
    start = dot + 1;
  }
}

// ---------------------------------------------------------------------------
// Pipeline pieces.

/// Data, split and model shape for a configuration.
struct Workspace {
  ExperimentConfig config;
  Dataset train;
  Dataset test;
  ForgetSplit split;
  ModelSpec spec;
  LabelSource labels = LabelSource::fine;
};

inline Workspace prepare_workspace(const ExperimentConfig& cfg) {
  Workspace ws{cfg, {}, {}, {}, {}, cfg.label_source()};
  if (cfg.data.source == DataConfig::Source::synthetic) {
    ws.train = synthesize_blobs(cfg.data.blobs);
    BlobParams tp = cfg.data.blobs;
    tp.seed = cfg.data.test_seed;
    tp.n_per_class = cfg.data.test_per_class;
    ws.test = synthesize_blobs(tp);
  } else {
    ws.train = load_csv(cfg.data.train_path, cfg.data.schema);
    ws.test = load_csv(cfg.data.test_path, cfg.data.schema);
    if (ws.test.features.cols != ws.train.features.cols)
      throw Error(Errc::schema, "train and test csv have different feature counts");
  }
  ws.train.validate();
  ws.split = make_split(ws.train, cfg.scenario);
  if (ws.labels == LabelSource::coarse && !ws.test.coarse_labels)
    throw Error(Errc::schema, "subclass scenario needs coarse labels in the test set");

  ws.spec.layer_sizes.push_back(ws.train.features.cols);
  for (std::size_t h : cfg.hidden_sizes) ws.spec.layer_sizes.push_back(h);
  const std::size_t classes = std::max(ws.train.class_count(ws.labels), ws.test.class_count(ws.labels));
  ws.spec.layer_sizes.push_back(classes);
  ws.spec.init_seed = cfg.init_seed;
  ws.spec.validate();
  return ws;
}

struct AccuracyRow {
  double retain = 0.0;
  double forget = 0.0;
  double test = 0.0;
  MiaReport mia;
};

inline AccuracyRow evaluate_model(const Workspace& ws, const ParameterVector& theta) {
  AccuracyRow row;
  row.retain = accuracy(ws.spec, theta, ws.train, ws.split.retain_indices, ws.labels);
  row.forget = accuracy(ws.spec, theta, ws.train, ws.split.forget_indices, ws.labels);
  row.test = accuracy(ws.spec, theta, ws.test, all_indices(ws.test), ws.labels);
  row.mia = mia(ws.spec, theta, ws.train, ws.split, ws.test, ws.config.mia);
  return row;
}

inline std::filesystem::path baseline_checkpoint_path(const ExperimentConfig& c) {
  return std::filesystem::path(c.output_dir) / "baseline.ckpt";
}

inline std::filesystem::path full_importance_path(const ExperimentConfig& c) {
  return std::filesystem::path(c.output_dir) /
         (std::string("importance_full_") + to_string(c.method) + "_" + to_string(c.output_space) + ".imp");
}

inline UnlearnOptions unlearn_options(const Workspace& ws) {
  UnlearnOptions o;
  o.label_source = ws.labels;
  o.output_space = ws.config.output_space;
  return o;
}

/// Full-set importance for the checkpoint: loaded from the persisted file
/// when it matches this checkpoint and estimator, otherwise computed over all
/// of D and persisted. `loaded` reports which happened.
inline ImportanceVector full_importance(const Workspace& ws, const ParameterVector& theta, bool* loaded = nullptr) {
  const auto path = full_importance_path(ws.config);
  const auto hash = checkpoint_hash(ws.spec, theta);
  const auto source = importance_source(ws.config.method);
  if (std::filesystem::exists(path)) {
    try {
      auto f = load_importance(path);
      const auto& imp = f.importance;
      if (f.checkpoint_hash == hash && imp.source == source && imp.over == ImportanceScope::full_set &&
          imp.sample_count == ws.train.size() && imp.size() == theta.size() &&
          (source == ImportanceSource::fisher_diagonal || imp.output_space == ws.config.output_space)) {
        if (loaded) *loaded = true;
        return imp;
      }
    } catch (const Error&) {
      // stale or damaged cache: recompute below
    }
  }
  auto imp = estimate_importance(ws.config.method, ws.spec, theta, ws.train, all_indices(ws.train),
                                 ImportanceScope::full_set, unlearn_options(ws));
  std::filesystem::create_directories(ws.config.output_dir);
  save_importance(path, imp, hash);
  if (loaded) *loaded = false;
  return imp;
}

// ---------------------------------------------------------------------------
// Reports.

struct ModelScores {
  double retain = 0.0;
  double forget = 0.0;
  double test = 0.0;
  double mia = 0.0;
  double mia_attack_accuracy = 0.0;
  bool mia_degenerate = false;

  bool operator==(const ModelScores&) const = default;
};

struct SelectionStats {
  std::size_t selected = 0;
  std::size_t total = 0;
  double mean_beta = 0.0;
  std::vector<BlockSelection> per_block;
};

struct UnlearnReport {
  Json config;  // resolved config without output_dir
  std::vector<std::size_t> layer_sizes;
  std::size_t forget_count = 0;
  std::size_t retain_count = 0;
  std::size_t test_count = 0;
  std::string checkpoint_hash;
  std::vector<double> baseline_losses;
  std::map<std::string, ModelScores> models;  // baseline, retrain, finetune, unlearned
  SelectionStats selection;

  // informational
  std::map<std::string, double> timings_ms;
  std::uint64_t full_importance_passes = 0;
  std::uint64_t forget_importance_passes = 0;
  bool full_importance_loaded = false;
  std::string output_dir;
};

inline ModelScores to_scores(const AccuracyRow& r) {
  return {r.retain, r.forget, r.test, r.mia.mia_score, r.mia.attack_train_accuracy, r.mia.degenerate};
}

inline Json canonical_json(const UnlearnReport& r) {
  Json c;
  c["config"] = r.config;
  c["layer_sizes"] = r.layer_sizes;
  c["split"] = {{"forget", r.forget_count}, {"retain", r.retain_count}, {"test", r.test_count}};
  c["checkpoint_hash"] = r.checkpoint_hash;
  c["baseline_losses"] = r.baseline_losses;
  Json models = Json::object();
  for (const char* name : {"baseline", "retrain", "finetune", "unlearned"}) {
    auto it = r.models.find(name);
    if (it == r.models.end()) continue;
    const auto& m = it->second;
    models[name] = {{"retain_acc", m.retain}, {"forget_acc", m.forget}, {"test_acc", m.test}, {"mia", m.mia},
                    {"mia_attack_acc", m.mia_attack_accuracy}, {"mia_degenerate", m.mia_degenerate}};
  }
  c["models"] = models;
  Json blocks = Json::array();
  for (const auto& b : r.selection.per_block)
    blocks.push_back({{"layer", b.layer}, {"kind", to_string(b.kind)}, {"selected", b.selected}, {"total", b.total}});
  c["selection"] = {{"selected", r.selection.selected}, {"total", r.selection.total},
                    {"mean_beta", r.selection.mean_beta}, {"per_block", blocks}};
  return c;
}

inline Json report_to_json(const UnlearnReport& r) {
  Json j;
  j["canonical"] = canonical_json(r);
  j["canonical_hash"] = detail::hex64(binary::fnv1a(std::string_view(j["canonical"].dump())));
  Json timings = Json::object();
  for (const auto& [k, v] : r.timings_ms) timings[k] = v;
  j["informational"] = {{"timings_ms", timings},
                        {"backward_passes",
                         {{"importance_full", r.full_importance_passes},
                          {"importance_forget", r.forget_importance_passes},
                          {"importance_full_loaded", r.full_importance_loaded}}},
                        {"output_dir", r.output_dir}};
  return j;
}

inline UnlearnReport report_from_json(const Json& j) {
  try {
    UnlearnReport r;
    const Json& c = j.at("canonical");
    r.config = c.at("config");
    r.layer_sizes = c.at("layer_sizes").get<std::vector<std::size_t>>();
    r.forget_count = c.at("split").at("forget").get<std::size_t>();
    r.retain_count = c.at("split").at("retain").get<std::size_t>();
    r.test_count = c.at("split").at("test").get<std::size_t>();
    r.checkpoint_hash = c.at("checkpoint_hash").get<std::string>();
    r.baseline_losses = c.at("baseline_losses").get<std::vector<double>>();
    for (auto it = c.at("models").begin(); it != c.at("models").end(); ++it) {
      const Json& m = it.value();
      r.models[it.key()] = {m.at("retain_acc").get<double>(), m.at("forget_acc").get<double>(),
                            m.at("test_acc").get<double>(),   m.at("mia").get<double>(),
                            m.at("mia_attack_acc").get<double>(), m.at("mia_degenerate").get<bool>()};
    }
    const Json& s = c.at("selection");
    r.selection.selected = s.at("selected").get<std::size_t>();
    r.selection.total = s.at("total").get<std::size_t>();
    r.selection.mean_beta = s.at("mean_beta").get<double>();
    for (const Json& b : s.at("per_block"))
      r.selection.per_block.push_back({b.at("layer").get<std::size_t>(),
                                       b.at("kind").get<std::string>() == "weight" ? ParamKind::weight : ParamKind::bias,
                                       b.at("selected").get<std::size_t>(), b.at("total").get<std::size_t>()});
    const Json& info = j.at("informational");
    for (auto it = info.at("timings_ms").begin(); it != info.at("timings_ms").end(); ++it)
      r.timings_ms[it.key()] = it.value().get<double>();
    const Json& bp = info.at("backward_passes");
    r.full_importance_passes = bp.at("importance_full").get<std::uint64_t>();
    r.forget_importance_passes = bp.at("importance_forget").get<std::uint64_t>();
    r.full_importance_loaded = bp.at("importance_full_loaded").get<bool>();
    r.output_dir = info.at("output_dir").get<std::string>();
    return r;
  } catch (const Json::exception& e) {
    throw Error(Errc::malformed_file, std::string("report: ") + e.what());
  }
}

/// model,retain_acc,forget_acc,test_acc,mia with doubles printed to 17
/// significant digits, so parse_scores_csv recovers them exactly.
inline std::string scores_csv(const std::map<std::string, ModelScores>& models) {
  std::ostringstream os;
  os.precision(17);
  os << "model,retain_acc,forget_acc,test_acc,mia\n";
  for (const char* name : {"baseline", "retrain", "finetune", "unlearned"}) {
    auto it = models.find(name);
    if (it == models.end()) continue;
    os << name << ',' << it->second.retain << ',' << it->second.forget << ',' << it->second.test << ','
       << it->second.mia << '\n';
  }
  return os.str();
}

inline std::map<std::string, ModelScores> parse_scores_csv(const std::string& text) {
  std::map<std::string, ModelScores> out;
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line) || line != "model,retain_acc,forget_acc,test_acc,mia")
    throw Error(Errc::malformed_file, "scores csv: unexpected header");
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto cells = detail::split_csv_line(line);
    if (cells.size() != 5) throw Error(Errc::malformed_file, "scores csv: expected 5 cells in \"" + line + "\"");
    ModelScores s;
    try {
      s.retain = std::stod(cells[1]);
      s.forget = std::stod(cells[2]);
      s.test = std::stod(cells[3]);
      s.mia = std::stod(cells[4]);
    } catch (const std::exception&) {
      throw Error(Errc::malformed_file, "scores csv: bad number in \"" + line + "\"");
    }
    out[cells[0]] = s;
  }
  return out;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  binary::write_file(path, std::span<const char>(text.data(), text.size()));
}

// ---------------------------------------------------------------------------
// run_experiment

namespace detail {

class StageClock {
 public:
  explicit StageClock(std::map<std::string, double>& sink) : sink_(sink) {}

  template <typename F>
  auto time(const std::string& stage, F&& f) {
    current_ = stage;
    const auto t0 = std::chrono::steady_clock::now();
    if constexpr (std::is_void_v<decltype(f())>) {
      f();
      record(stage, t0);
    } else {
      auto result = f();
      record(stage, t0);
      return result;
    }
  }

  const std::string& current() const { return current_; }

 private:
  void record(const std::string& stage, std::chrono::steady_clock::time_point t0) {
    sink_[stage] = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  }
  std::map<std::string, double>& sink_;
  std::string current_ = "setup";
};

inline void write_status(const std::string& dir, const Json& status) {
  try {
    std::filesystem::create_directories(dir);
    write_text(std::filesystem::path(dir) / "run_status.json", status.dump(2) + "\n");
  } catch (...) {
  }
}

}  // namespace detail

/// Rejects configurations that cannot produce a meaningful run.
inline void preflight(const Workspace& ws) {
  if (ws.split.forget_indices.empty())
    throw Error(Errc::config, "scenario selects no samples to forget (|D_f| = 0)");
  if (ws.split.retain_indices.empty()) throw Error(Errc::config, "scenario leaves no samples to retain");
}

/// data -> split -> baseline -> checkpoint + full importance -> unlearn ->
/// evaluate all models -> report files in output_dir. A failure records the
/// stage in output_dir/run_status.json and rethrows with the stage prefixed.
inline UnlearnReport run_experiment(const ExperimentConfig& cfg) {
  UnlearnReport rep;
  detail::StageClock clock(rep.timings_ms);
  const std::string dir = cfg.output_dir;
  try {
    std::filesystem::create_directories(dir);
    detail::write_status(dir, {{"status", "running"}});
    const Workspace ws = clock.time("data", [&] { return prepare_workspace(cfg); });
    clock.time("preflight", [&] { preflight(ws); });

    const TrainResult baseline = clock.time("train_baseline", [&] {
      return train(ws.spec, init_model(ws.spec), ws.train, all_indices(ws.train), cfg.train);
    });
    clock.time("checkpoint", [&] { save_checkpoint(baseline_checkpoint_path(cfg), ws.spec, baseline.params); });

    BackwardPassCounter full_counter;
    bool loaded = false;
    const ImportanceVector imp_full = clock.time("importance_full", [&] { return full_importance(ws, baseline.params, &loaded); });
    rep.full_importance_passes = full_counter.count();
    rep.full_importance_loaded = loaded;

    UnlearnOptions opts = unlearn_options(ws);
    opts.precomputed_full = imp_full;
    BackwardPassCounter forget_counter;
    const DampeningResult unlearned = clock.time("unlearn", [&] {
      return unlearn(ws.spec, baseline.params, ws.train, ws.split, cfg.method, cfg.dampening, opts);
    });
    rep.forget_importance_passes = forget_counter.count();
    save_checkpoint(std::filesystem::path(dir) / "unlearned.ckpt", ws.spec, unlearned.params);

    const TrainResult retrained = clock.time("retrain", [&] { return retrain_baseline(ws.spec, ws.train, ws.split, cfg.train); });
    TrainConfig ft = cfg.train;
    ft.epochs = cfg.finetune_epochs;
    const TrainResult finetuned =
        clock.time("finetune", [&] { return finetune_baseline(ws.spec, baseline.params, ws.train, ws.split, ft); });

    clock.time("evaluate", [&] {
      rep.models["baseline"] = to_scores(evaluate_model(ws, baseline.params));
      rep.models["retrain"] = to_scores(evaluate_model(ws, retrained.params));
      rep.models["finetune"] = to_scores(evaluate_model(ws, finetuned.params));
      rep.models["unlearned"] = to_scores(evaluate_model(ws, unlearned.params));
    });

    rep.config = config_to_json(cfg, false);
    rep.layer_sizes = ws.spec.layer_sizes;
    rep.forget_count = ws.split.forget_indices.size();
    rep.retain_count = ws.split.retain_indices.size();
    rep.test_count = ws.test.size();
    rep.checkpoint_hash = detail::hex64(checkpoint_hash(ws.spec, baseline.params));
    rep.baseline_losses = baseline.epoch_losses;
    rep.selection.selected = unlearned.report.selected_indices.size();
    rep.selection.total = baseline.params.size();
    double beta_sum = 0.0;
    for (double b : unlearned.report.betas) beta_sum += b;
    rep.selection.mean_beta = rep.selection.selected ? beta_sum / static_cast<double>(rep.selection.selected) : 0.0;
    rep.selection.per_block = unlearned.report.per_block;
    rep.output_dir = dir;

    clock.time("report", [&] {
      write_text(std::filesystem::path(dir) / "report.json", report_to_json(rep).dump(2) + "\n");
      write_text(std::filesystem::path(dir) / "report.csv", scores_csv(rep.models));
    });
    detail::write_status(dir, {{"status", "complete"}});
    return rep;
  } catch (const Error& e) {
    detail::write_status(dir, {{"status", "failed"}, {"stage", clock.current()}, {"error", e.what()}, {"partial", true}});
    throw Error(e.code(), "stage " + clock.current() + ": " + e.message());
  }
}

// ---------------------------------------------------------------------------
// sweep_alpha

struct SweepRow {
  double alpha = 0.0;
  std::size_t selected = 0;
  double retain = 0.0;
  double forget = 0.0;
  double test = 0.0;
  double mia = 0.0;
  bool plateau = false;
};

struct SweepReport {
  ModelScores baseline;
  std::vector<SweepRow> rows;
  /// Longest run of consecutive plateau points and its first index.
  std::size_t plateau_length = 0;
  std::size_t plateau_start = 0;
  /// Middle of the longest plateau run, absent when there is none.
  std::optional<double> recommended_alpha;
  std::uint64_t full_importance_passes = 0;
  std::uint64_t forget_importance_passes = 0;
};

inline void summarise_plateau(SweepReport& rep, const SweepConfig& sc) {
  std::size_t run = 0;
  rep.plateau_length = 0;
  for (std::size_t i = 0; i < rep.rows.size(); ++i) {
    auto& r = rep.rows[i];
    r.plateau = r.forget <= sc.forget_max && r.retain >= rep.baseline.retain - sc.retain_drop_max;
    run = r.plateau ? run + 1 : 0;
    if (run > rep.plateau_length) {
      rep.plateau_length = run;
      rep.plateau_start = i + 1 - run;
    }
  }
  rep.recommended_alpha.reset();
  if (rep.plateau_length > 0) rep.recommended_alpha = rep.rows[rep.plateau_start + (rep.plateau_length - 1) / 2].alpha;
}

/// One dampening + evaluation per alpha, all from the same baseline
/// checkpoint and the same pair of importance vectors.
inline SweepReport sweep_alpha(const ExperimentConfig& cfg, const std::vector<double>& grid) {
  if (grid.empty()) throw Error(Errc::config, "alpha grid is empty");
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (!(grid[i] > 0.0) || !std::isfinite(grid[i])) throw Error(Errc::config, "alpha grid values must be positive");
    if (i > 0 && !(grid[i] > grid[i - 1])) throw Error(Errc::config, "alpha grid must be strictly ascending");
  }
  const Workspace ws = prepare_workspace(cfg);
  preflight(ws);
  const TrainResult baseline = train(ws.spec, init_model(ws.spec), ws.train, all_indices(ws.train), cfg.train);
  std::filesystem::create_directories(cfg.output_dir);
  save_checkpoint(baseline_checkpoint_path(cfg), ws.spec, baseline.params);

  SweepReport rep;
  BackwardPassCounter full_counter;
  const auto imp_full = full_importance(ws, baseline.params);
  rep.full_importance_passes = full_counter.count();
  BackwardPassCounter forget_counter;
  const auto imp_forget = estimate_importance(cfg.method, ws.spec, baseline.params, ws.train, ws.split.forget_indices,
                                              ImportanceScope::forget_set, unlearn_options(ws));
  rep.forget_importance_passes = forget_counter.count();

  rep.baseline = to_scores(evaluate_model(ws, baseline.params));
  for (double alpha : grid) {
    const auto damp = apply_dampening(baseline.params, imp_full, imp_forget, {alpha, cfg.dampening.lambda});
    const auto row = evaluate_model(ws, damp.params);
    rep.rows.push_back({alpha, damp.report.selected_indices.size(), row.retain, row.forget, row.test, row.mia.mia_score, false});
  }
  summarise_plateau(rep, cfg.sweep);
  return rep;
}

inline std::string sweep_csv(const SweepReport& rep) {
  std::ostringstream os;
  os.precision(17);
  os << "alpha,selected,retain_acc,forget_acc,test_acc,mia,plateau\n";
  for (const auto& r : rep.rows)
    os << r.alpha << ',' << r.selected << ',' << r.retain << ',' << r.forget << ',' << r.test << ',' << r.mia << ','
       << (r.plateau ? 1 : 0) << '\n';
  return os.str();
}

inline std::vector<SweepRow> parse_sweep_csv(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line) || line != "alpha,selected,retain_acc,forget_acc,test_acc,mia,plateau")
    throw Error(Errc::malformed_file, "sweep csv: unexpected header");
  std::vector<SweepRow> rows;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto c = detail::split_csv_line(line);
    if (c.size() != 7) throw Error(Errc::malformed_file, "sweep csv: expected 7 cells in \"" + line + "\"");
    try {
      rows.push_back({std::stod(c[0]), std::stoul(c[1]), std::stod(c[2]), std::stod(c[3]), std::stod(c[4]),
                      std::stod(c[5]), c[6] == "1"});
    } catch (const std::exception&) {
      throw Error(Errc::malformed_file, "sweep csv: bad number in \"" + line + "\"");
    }
  }
  return rows;
}

inline Json sweep_summary_json(const SweepReport& rep) {
  Json j;
  j["baseline"] = {{"retain_acc", rep.baseline.retain}, {"forget_acc", rep.baseline.forget},
                   {"test_acc", rep.baseline.test}, {"mia", rep.baseline.mia}};
  j["plateau_length"] = rep.plateau_length;
  j["plateau_start_alpha"] = rep.plateau_length ? Json(rep.rows[rep.plateau_start].alpha) : Json(nullptr);
  j["recommended_alpha"] = rep.recommended_alpha ? Json(*rep.recommended_alpha) : Json(nullptr);
  j["backward_passes"] = {{"importance_full", rep.full_importance_passes},
                          {"importance_forget", rep.forget_importance_passes}};
  return j;
}

/// Geometric grid of n points from lo to hi inclusive.
inline std::vector<double> geometric_grid(double lo, double hi, std::size_t n) {
  if (n < 2 || !(lo > 0.0) || !(hi > lo)) throw Error(Errc::config, "geometric grid needs n >= 2 and 0 < lo < hi");
  std::vector<double> g(n);
  for (std::size_t i = 0; i < n; ++i)
    g[i] = lo * std::pow(hi / lo, static_cast<double>(i) / static_cast<double>(n - 1));
  g.front() = lo;
  g.back() = hi;
  return g;
}

}  // namespace ssd
