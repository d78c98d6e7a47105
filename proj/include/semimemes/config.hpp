#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "semimemes/binary_io.hpp"
#include "semimemes/errors.hpp"
#include "semimemes/losses.hpp"
#include "semimemes/nn.hpp"

// Experiment configuration: a JSON document layered as
//   preset defaults (dataset_tag, labeled_ratio) < config file < --set overrides
// and materialized into a snapshot with every value spelled out.
namespace semimemes::config {

using Json = nlohmann::ordered_json;

struct Paths {
  std::string features;
  /// Label manifest (JSONL); empty when the feature file carries labels.
  std::string labels;
  std::string output_dir = "out";
  std::string manifest;
  std::string stage1_checkpoint;
  std::string stage2_checkpoint;
};

struct SplitSettings {
  /// Validation ids carved from the shuffled training pool, on top of any
  /// ids tagged "dev" in the label manifest.
  std::size_t val_count = 0;
  /// Base for the labeled count; 0 means "size of the training pool".
  std::size_t original_training_size = 0;
};

struct OptimizerSettings {
  std::size_t epochs = 200;
  double lr = 1e-4;
  std::size_t batch_size = 40;
  double weight_decay = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct Stage2Settings {
  OptimizerSettings optimizer;
  double gamma_scheduler = 1.0;
  std::size_t step_size = 1;
  std::string loss = "db_focal";
  std::size_t projection_dim = 256;
  double dropout = 0.5;
  double threshold = 0.5;
  std::size_t eval_every = 1;
  bool best_on_validation = false;
  /// Ablation: zero vectors in place of the encoder latents.
  bool zero_latents = false;
  double focal_gamma = 2.0;
  double focal_lambda = 5.0;
  double focal_kappa = 0.1;
  std::string rebalance = "disabled";
  double rebalance_alpha = 0.1;
  double rebalance_beta = 10.0;
  double rebalance_mu = 0.2;
};

struct ExperimentConfig {
  std::string dataset_tag = "custom";
  std::uint64_t seed = 0;
  double labeled_ratio = 0.0;
  std::string precision = "float32";
  Paths paths;
  SplitSettings split;
  OptimizerSettings stage1;
  Stage2Settings stage2;
  /// Partition scored by evaluate and predict.
  std::string partition = "val";
  /// "weighted_f1" or "auroc"; "auto" picks AUROC for single-class labels.
  std::string primary_metric = "auto";

  std::filesystem::path output_dir() const { return paths.output_dir; }
  std::filesystem::path manifest_path() const { return paths.manifest; }
  std::filesystem::path stage1_path() const { return paths.stage1_checkpoint; }
  std::filesystem::path stage2_path() const { return paths.stage2_checkpoint; }
};

inline bool same_ratio(double a, double b) { return std::abs(a - b) < 1e-9; }

/// StepLR decay per epoch for the labeled-ratio scenarios.
inline std::optional<double> table_gamma(const std::string& tag, double ratio) {
  if (tag == "hateful_memes") {
    for (double r : {0.05, 0.10, 0.30})
      if (same_ratio(ratio, r)) return 0.96;
  }
  if (tag == "mami") {
    if (same_ratio(ratio, 0.05)) return 0.93;
    if (same_ratio(ratio, 0.10)) return 0.9;
    if (same_ratio(ratio, 0.30)) return 0.85;
  }
  return std::nullopt;
}

/// Every key with its default for the given dataset and ratio. A null
/// gamma_scheduler means no default exists and the user must set one.
inline Json preset(const std::string& tag, double ratio) {
  if (tag != "mami" && tag != "hateful_memes" && tag != "custom") {
    throw ConfigError("dataset_tag must be mami, hateful_memes, or custom, got '" + tag + "'");
  }
  auto optimizer = [](double wd) {
    return Json{{"epochs", 200}, {"lr", 1e-4},     {"batch_size", 40}, {"weight_decay", wd},
                {"beta1", 0.9},  {"beta2", 0.999}, {"eps", 1e-8}};
  };
  Json gamma = nullptr;
  if (auto g = table_gamma(tag, ratio)) gamma = *g;
  else if (tag == "custom") gamma = 1.0;

  Json stage2 = optimizer(0.0);
  stage2["gamma_scheduler"] = gamma;
  stage2["step_size"] = 1;
  stage2["loss"] = tag == "hateful_memes" ? "bce" : "db_focal";
  stage2["projection_dim"] = 256;
  stage2["dropout"] = 0.5;
  stage2["threshold"] = 0.5;
  stage2["eval_every"] = 1;
  stage2["best_on_validation"] = false;
  stage2["zero_latents"] = false;
  stage2["db_focal"] = Json{{"gamma", 2.0},
                            {"lambda", 5.0},
                            {"kappa", 0.1},
                            {"rebalance", Json{{"mode", "disabled"}, {"alpha", 0.1}, {"beta", 10.0}, {"mu", 0.2}}}};

  Json j;
  j["dataset_tag"] = tag;
  j["seed"] = 0;
  j["labeled_ratio"] = ratio;
  j["precision"] = "float32";
  j["paths"] = Json{{"features", ""},         {"labels", ""}, {"output_dir", "out"}, {"manifest", ""},
                    {"stage1_checkpoint", ""}, {"stage2_checkpoint", ""}};
  j["split"] = Json{{"val_count", tag == "mami" ? 2000 : 0}, {"original_training_size", 0}};
  j["stage1"] = optimizer(tag == "mami" ? 1e-4 : 0.0);
  j["stage2"] = stage2;
  j["evaluate"] = Json{{"partition", "val"},
                       {"primary_metric", tag == "mami" ? "weighted_f1" : tag == "hateful_memes" ? "auroc" : "auto"}};
  return j;
}

namespace detail {

/// Recursively merges `over` into `base`, rejecting keys `base` lacks.
inline void overlay(Json& base, const Json& over, const std::string& where) {
  if (!over.is_object()) throw ConfigError(where + ": expected an object");
  for (auto it = over.begin(); it != over.end(); ++it) {
    const std::string key = where.empty() ? it.key() : where + "." + it.key();
    if (!base.contains(it.key())) throw ConfigError("unknown config key '" + key + "'");
    Json& slot = base[it.key()];
    if (slot.is_object()) {
      overlay(slot, it.value(), key);
    } else {
      slot = it.value();
    }
  }
}

template <typename V>
V get(const Json& j, const char* key, const std::string& where) {
  try {
    return j.at(key).get<V>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError("config key '" + where + key + "' has the wrong type or is missing");
  }
}

inline OptimizerSettings optimizer_from(const Json& j, const std::string& where) {
  OptimizerSettings o;
  o.epochs = get<std::size_t>(j, "epochs", where);
  o.lr = get<double>(j, "lr", where);
  o.batch_size = get<std::size_t>(j, "batch_size", where);
  o.weight_decay = get<double>(j, "weight_decay", where);
  o.beta1 = get<double>(j, "beta1", where);
  o.beta2 = get<double>(j, "beta2", where);
  o.eps = get<double>(j, "eps", where);
  if (!(o.lr > 0.0)) throw ConfigError(where + "lr must be positive");
  if (o.batch_size == 0) throw ConfigError(where + "batch_size must be positive");
  if (!(o.weight_decay >= 0.0)) throw ConfigError(where + "weight_decay must be non-negative");
  if (!(o.beta1 >= 0.0 && o.beta1 < 1.0 && o.beta2 >= 0.0 && o.beta2 < 1.0)) {
    throw ConfigError(where + "beta1 and beta2 must lie in [0,1)");
  }
  if (!(o.eps > 0.0)) throw ConfigError(where + "eps must be positive");
  return o;
}

inline Json optimizer_json(const OptimizerSettings& o) {
  return Json{{"epochs", o.epochs}, {"lr", o.lr},       {"batch_size", o.batch_size}, {"weight_decay", o.weight_decay},
              {"beta1", o.beta1},   {"beta2", o.beta2}, {"eps", o.eps}};
}

/// "a.b.c" -> "/a/b/c".
inline nlohmann::json_pointer<std::string> pointer(const std::string& dotted) {
  std::string p;
  std::size_t start = 0;
  while (start <= dotted.size()) {
    const auto dot = dotted.find('.', start);
    const std::string part = dotted.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ConfigError("malformed config key '" + dotted + "'");
    p += "/" + part;
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  return nlohmann::json_pointer<std::string>(p);
}

/// Value text parsed as JSON when possible, otherwise taken as a string.
inline Json parse_value(const std::string& text) {
  try {
    return Json::parse(text);
  } catch (const nlohmann::json::exception&) {
    return Json(text);
  }
}

inline void rebase_paths(Json& j, const std::filesystem::path& base) {
  if (!j.contains("paths") || !j["paths"].is_object()) return;
  for (auto it = j["paths"].begin(); it != j["paths"].end(); ++it) {
    if (!it.value().is_string()) continue;
    const std::string s = it.value().get<std::string>();
    if (!s.empty() && std::filesystem::path(s).is_relative()) it.value() = (base / s).lexically_normal().string();
  }
}

}  // namespace detail

/// Reads a config file. Relative paths inside it resolve against its directory.
inline Json read_config_file(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw ConfigError("config file not found: " + path.string());
  Json j;
  try {
    j = Json::parse(io::read_text(path));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  if (!j.is_object()) throw ConfigError(path.string() + ": top level must be an object");
  detail::rebase_paths(j, path.parent_path());
  return j;
}

/// Sets a dotted key ("stage2.db_focal.gamma") in the user document.
inline void set_value(Json& user, const std::string& key, Json value) {
  try {
    user[detail::pointer(key)] = std::move(value);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("cannot set '" + key + "': " + e.what());
  }
}

/// Applies "key.path=value"; the value is read as JSON when it parses, else as a string.
inline void apply_override(Json& user, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override must look like key=value, got '" + assignment + "'");
  set_value(user, assignment.substr(0, eq), detail::parse_value(assignment.substr(eq + 1)));
}

/// Layers the user document over the presets and validates every field.
inline ExperimentConfig resolve(const Json& user) {
  if (!user.is_object()) throw ConfigError("config must be a JSON object");
  const std::string tag = user.contains("dataset_tag") ? detail::get<std::string>(user, "dataset_tag", "") : "custom";
  if (!user.contains("labeled_ratio")) throw ConfigError("config must set labeled_ratio");
  const double ratio = detail::get<double>(user, "labeled_ratio", "");
  Json j = preset(tag, ratio);
  detail::overlay(j, user, "");

  ExperimentConfig c;
  c.dataset_tag = tag;
  c.seed = detail::get<std::uint64_t>(j, "seed", "");
  c.labeled_ratio = ratio;
  if (!(ratio > 0.0 && ratio < 1.0)) throw ConfigError("labeled_ratio must lie in (0,1), got " + std::to_string(ratio));
  c.precision = detail::get<std::string>(j, "precision", "");
  if (c.precision != "float32" && c.precision != "float64") {
    throw ConfigError("precision must be float32 or float64, got '" + c.precision + "'");
  }

  const Json& p = j["paths"];
  c.paths.features = detail::get<std::string>(p, "features", "paths.");
  c.paths.labels = detail::get<std::string>(p, "labels", "paths.");
  c.paths.output_dir = detail::get<std::string>(p, "output_dir", "paths.");
  if (c.paths.output_dir.empty()) throw ConfigError("paths.output_dir must not be empty");
  const std::filesystem::path out = c.paths.output_dir;
  auto or_default = [&](const char* key, const char* file) {
    const auto s = detail::get<std::string>(p, key, "paths.");
    return s.empty() ? (out / file).string() : s;
  };
  c.paths.manifest = or_default("manifest", "split.json");
  c.paths.stage1_checkpoint = or_default("stage1_checkpoint", "stage1.smck");
  c.paths.stage2_checkpoint = or_default("stage2_checkpoint", "stage2.smck");

  c.split.val_count = detail::get<std::size_t>(j["split"], "val_count", "split.");
  c.split.original_training_size = detail::get<std::size_t>(j["split"], "original_training_size", "split.");
  c.stage1 = detail::optimizer_from(j["stage1"], "stage1.");

  const Json& s2 = j["stage2"];
  auto& t = c.stage2;
  t.optimizer = detail::optimizer_from(s2, "stage2.");
  if (s2["gamma_scheduler"].is_null()) {
    throw ConfigError("no default stage2.gamma_scheduler for dataset '" + tag + "' at labeled_ratio " +
                      std::to_string(ratio) + "; set it explicitly");
  }
  t.gamma_scheduler = detail::get<double>(s2, "gamma_scheduler", "stage2.");
  t.step_size = detail::get<std::size_t>(s2, "step_size", "stage2.");
  t.loss = detail::get<std::string>(s2, "loss", "stage2.");
  if (t.loss != "db_focal" && t.loss != "bce") throw ConfigError("stage2.loss must be db_focal or bce");
  t.projection_dim = detail::get<std::size_t>(s2, "projection_dim", "stage2.");
  if (t.projection_dim == 0) throw ConfigError("stage2.projection_dim must be positive");
  t.dropout = detail::get<double>(s2, "dropout", "stage2.");
  if (!(t.dropout >= 0.0 && t.dropout < 1.0)) throw ConfigError("stage2.dropout must lie in [0,1)");
  t.threshold = detail::get<double>(s2, "threshold", "stage2.");
  if (!(t.threshold >= 0.0 && t.threshold <= 1.0)) throw ConfigError("stage2.threshold must lie in [0,1]");
  t.eval_every = detail::get<std::size_t>(s2, "eval_every", "stage2.");
  t.best_on_validation = detail::get<bool>(s2, "best_on_validation", "stage2.");
  t.zero_latents = detail::get<bool>(s2, "zero_latents", "stage2.");
  const Json& f = s2["db_focal"];
  t.focal_gamma = detail::get<double>(f, "gamma", "stage2.db_focal.");
  t.focal_lambda = detail::get<double>(f, "lambda", "stage2.db_focal.");
  t.focal_kappa = detail::get<double>(f, "kappa", "stage2.db_focal.");
  const Json& rb = f["rebalance"];
  t.rebalance = detail::get<std::string>(rb, "mode", "stage2.db_focal.rebalance.");
  if (t.rebalance != "disabled" && t.rebalance != "smoothed") {
    throw ConfigError("stage2.db_focal.rebalance.mode must be disabled or smoothed");
  }
  t.rebalance_alpha = detail::get<double>(rb, "alpha", "stage2.db_focal.rebalance.");
  t.rebalance_beta = detail::get<double>(rb, "beta", "stage2.db_focal.rebalance.");
  t.rebalance_mu = detail::get<double>(rb, "mu", "stage2.db_focal.rebalance.");
  nn::StepLr{t.optimizer.lr, t.gamma_scheduler, t.step_size}.validate();

  c.partition = detail::get<std::string>(j["evaluate"], "partition", "evaluate.");
  c.primary_metric = detail::get<std::string>(j["evaluate"], "primary_metric", "evaluate.");
  if (c.primary_metric != "auto" && c.primary_metric != "weighted_f1" && c.primary_metric != "auroc") {
    throw ConfigError("evaluate.primary_metric must be auto, weighted_f1, or auroc");
  }
  return c;
}

/// Config file (optional) plus overrides, resolved.
inline ExperimentConfig load(const std::optional<std::filesystem::path>& file,
                             const std::vector<std::string>& overrides = {}) {
  Json user = file ? read_config_file(*file) : Json::object();
  for (const auto& o : overrides) apply_override(user, o);
  return resolve(user);
}

/// Every setting, in the same shape as the input document.
inline Json snapshot(const ExperimentConfig& c) {
  const auto& t = c.stage2;
  Json stage2 = detail::optimizer_json(t.optimizer);
  stage2["gamma_scheduler"] = t.gamma_scheduler;
  stage2["step_size"] = t.step_size;
  stage2["loss"] = t.loss;
  stage2["projection_dim"] = t.projection_dim;
  stage2["dropout"] = t.dropout;
  stage2["threshold"] = t.threshold;
  stage2["eval_every"] = t.eval_every;
  stage2["best_on_validation"] = t.best_on_validation;
  stage2["zero_latents"] = t.zero_latents;
  stage2["db_focal"] = Json{{"gamma", t.focal_gamma},
                            {"lambda", t.focal_lambda},
                            {"kappa", t.focal_kappa},
                            {"rebalance", Json{{"mode", t.rebalance},
                                               {"alpha", t.rebalance_alpha},
                                               {"beta", t.rebalance_beta},
                                               {"mu", t.rebalance_mu}}}};
  Json j;
  j["dataset_tag"] = c.dataset_tag;
  j["seed"] = c.seed;
  j["labeled_ratio"] = c.labeled_ratio;
  j["precision"] = c.precision;
  j["paths"] = Json{{"features", c.paths.features},
                    {"labels", c.paths.labels},
                    {"output_dir", c.paths.output_dir},
                    {"manifest", c.paths.manifest},
                    {"stage1_checkpoint", c.paths.stage1_checkpoint},
                    {"stage2_checkpoint", c.paths.stage2_checkpoint}};
  j["split"] = Json{{"val_count", c.split.val_count}, {"original_training_size", c.split.original_training_size}};
  j["stage1"] = detail::optimizer_json(c.stage1);
  j["stage2"] = stage2;
  j["evaluate"] = Json{{"partition", c.partition}, {"primary_metric", c.primary_metric}};
  return j;
}

inline nn::AdamOptions adam_options(const OptimizerSettings& o) {
  return {.lr = o.lr, .beta1 = o.beta1, .beta2 = o.beta2, .eps = o.eps, .weight_decay = o.weight_decay};
}

inline losses::DbFocalConfig db_focal_config(const Stage2Settings& t) {
  losses::DbFocalConfig f;
  f.gamma = t.focal_gamma;
  f.lambda = t.focal_lambda;
  f.kappa = t.focal_kappa;
  f.rebalance.mode = t.rebalance == "smoothed" ? losses::RebalanceMode::smoothed : losses::RebalanceMode::disabled;
  f.rebalance.alpha = t.rebalance_alpha;
  f.rebalance.beta = t.rebalance_beta;
  f.rebalance.mu = t.rebalance_mu;
  return f;
}

}  // namespace semimemes::config
