#pragma once

#include <cstdio>
#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "semimemes/binary_io.hpp"
#include "semimemes/checkpoint.hpp"
#include "semimemes/config.hpp"
#include "semimemes/cromae.hpp"
#include "semimemes/data_store.hpp"
#include "semimemes/errors.hpp"
#include "semimemes/metrics.hpp"
#include "semimemes/rawncook.hpp"

// The operator-facing commands. Each reads its inputs from files named in the
// config, writes its outputs atomically, and logs progress to `log`.
//
// Files under paths.output_dir (defaults):
//   split.json                 split manifest
//   stage1.smck                both autoencoders + manifest hash
//   stage1_loss.csv            epoch,stage,loss,lr
//   stage2.smck                frozen encoders + classifier + stage-1 hash
//   stage2_loss.csv            epoch,stage,loss,lr,val_weighted_f1,val_auroc
//   report_<partition>.json    evaluation report
//   predictions_<partition>.jsonl
//   resolved_config.json       every setting in effect
namespace semimemes::pipeline {

using config::ExperimentConfig;
using Json = nlohmann::ordered_json;

inline constexpr const char* kStage1Format = "semimemes.stage1";
inline constexpr const char* kStage2Format = "semimemes.stage2";

/// Features (with labels when available) and the tag-derived id groups.
struct Dataset {
  data::FeatureStore store;
  std::vector<std::string> pool_ids;
  std::vector<std::string> dev_ids;
  std::vector<std::string> test_ids;
  std::uint64_t features_checksum = 0;
};

inline Dataset load_dataset(const ExperimentConfig& c) {
  if (c.paths.features.empty()) throw ConfigError("paths.features is not set");
  const std::filesystem::path fpath = c.paths.features;
  if (!std::filesystem::exists(fpath)) throw DataError("feature file not found: " + fpath.string());
  Dataset ds;
  const auto bytes = io::read_file(fpath);
  ds.features_checksum = io::fnv1a64(bytes);
  auto features = data::decode_features(bytes, fpath.string());
  if (!c.paths.labels.empty()) {
    const std::filesystem::path lpath = c.paths.labels;
    if (!std::filesystem::exists(lpath)) throw DataError("label manifest not found: " + lpath.string());
    const auto labels = data::read_label_manifest(lpath);
    ds.store = data::with_labels(features, labels);
    ds.pool_ids = labels.ids_in("train");
    ds.dev_ids = labels.ids_in("dev");
    ds.test_ids = labels.ids_in("test");
  } else {
    ds.store = std::move(features);
    ds.pool_ids = ds.store.ids();
  }
  return ds;
}

namespace detail {

inline std::string hex(std::uint64_t v) { return io::hex64(v); }

inline std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

/// "1,234,567".
inline std::string grouped(std::size_t n) {
  std::string s = std::to_string(n);
  for (int i = int(s.size()) - 3; i > 0; i -= 3) s.insert(std::size_t(i), ",");
  return s;
}

inline void ensure_parent(const std::filesystem::path& p) {
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
}

inline void write_text(const std::filesystem::path& p, const std::string& text) {
  ensure_parent(p);
  io::write_text_atomic(p, text);
}

inline data::SplitManifest read_manifest(const ExperimentConfig& c, const Dataset& ds) {
  auto m = data::read_split_manifest(c.manifest_path());
  for (const auto* part : {&m.labeled_ids, &m.unlabeled_ids, &m.val_ids, &m.test_ids}) {
    for (const auto& id : *part) {
      if (!ds.store.contains(id)) {
        throw DataError("split manifest " + c.paths.manifest + " names id '" + id + "' absent from " +
                        c.paths.features);
      }
    }
  }
  return m;
}

inline std::string manifest_hash(const ExperimentConfig& c) {
  return hex(io::file_checksum(c.manifest_path()));
}

inline void write_snapshot(const ExperimentConfig& c, std::size_t original_training_size) {
  ExperimentConfig resolved = c;
  resolved.split.original_training_size = original_training_size;
  write_text(c.output_dir() / "resolved_config.json", config::snapshot(resolved).dump(2) + "\n");
}

inline void require_format(const checkpoint::Checkpoint& ck, const char* format, const std::filesystem::path& p) {
  if (!ck.header.contains("format") || ck.header["format"] != format) {
    throw DataError(p.string() + " is not a " + std::string(format) + " checkpoint");
  }
}

inline void require_hash(const Json& header, const char* key, const std::string& actual, const std::string& what,
                         const std::filesystem::path& ck_path) {
  const std::string stored = header.value(key, std::string());
  if (stored != actual) {
    throw DataError("checkpoint hash chain broken: " + ck_path.string() + " records " + what + " " + stored +
                    " but the current file hashes to " + actual);
  }
}

inline void log_parameter_counts(std::ostream& log, std::size_t dim, std::size_t proj, std::size_t classes) {
  const std::size_t s1 = rawncook::stage1_parameter_count(dim);
  const std::size_t s2 = rawncook::stage2_parameter_count(dim, proj, classes);
  log << "parameters: stage1 " << grouped(s1) << " (2 autoencoders of " << grouped(s1 / 2) << ")"
      << ", stage2 trainable " << grouped(s2) << ", total " << grouped(s1 + s2) << "\n";
}

}  // namespace detail

/// Calls f(T{}) with T = float or double per the config's precision.
template <typename F>
decltype(auto) with_precision(const ExperimentConfig& c, F&& f) {
  if (c.precision == "float64") return f(double{});
  return f(float{});
}

// ---------------------------------------------------------------------------

inline data::SplitManifest cmd_split(const ExperimentConfig& c, std::ostream& log) {
  const auto ds = load_dataset(c);
  data::SplitRequest req;
  req.pool_ids = ds.pool_ids;
  req.original_training_size = c.split.original_training_size ? c.split.original_training_size : ds.pool_ids.size();
  req.labeled_ratio = c.labeled_ratio;
  req.val_count = c.split.val_count;
  req.seed = c.seed;
  req.fixed_val_ids = ds.dev_ids;
  req.test_ids = ds.test_ids;
  req.dataset_tag = c.dataset_tag;
  auto m = data::make_split(req);
  data::check_disjoint(m);
  detail::ensure_parent(c.manifest_path());
  data::write_split_manifest(m, c.manifest_path());
  detail::write_snapshot(c, req.original_training_size);
  log << "split " << c.paths.manifest << ": val " << m.val_ids.size() << ", labeled " << m.labeled_ids.size()
      << ", unlabeled " << m.unlabeled_ids.size() << ", test " << m.test_ids.size() << "\n";
  return m;
}

template <typename T>
void cmd_pretrain(const ExperimentConfig& c, std::ostream& log) {
  const auto ds = load_dataset(c);
  const auto m = detail::read_manifest(c, ds);
  detail::write_snapshot(c, m.original_training_size);
  const std::size_t dim = ds.store.dim();
  log << "stage1: " << m.unlabeled_ids.size() << " unlabeled samples, dim " << dim << ", " << c.stage1.epochs
      << " epochs\n";
  log << "parameters: stage1 " << detail::grouped(rawncook::stage1_parameter_count(dim)) << "\n";

  cromae::Stage1Config cfg{c.stage1.epochs, c.stage1.batch_size, config::adam_options(c.stage1), c.seed};
  const std::size_t every = std::max<std::size_t>(1, c.stage1.epochs / 10);
  auto r = cromae::train_stage1<T>(ds.store, m, cfg, [&](std::size_t e, double li, double lt) {
    if ((e + 1) % every == 0 || e + 1 == c.stage1.epochs) {
      log << "stage1 epoch " << (e + 1) << "/" << c.stage1.epochs << "  mse ae_image " << li << "  ae_text " << lt
          << "\n";
    }
  });

  checkpoint::Checkpoint ck;
  ck.header["format"] = kStage1Format;
  ck.header["manifest_hash"] = detail::manifest_hash(c);
  ck.header["features_checksum"] = detail::hex(ds.features_checksum);
  ck.header["dim"] = dim;
  ck.header["precision"] = checkpoint::precision_name(checkpoint::precision_of<T>());
  ck.header["seed"] = c.seed;
  ck.header["stage1"] = config::detail::optimizer_json(c.stage1);
  ck.header["parameter_count"] = rawncook::stage1_parameter_count(dim);
  if (!r.curve_image.empty()) {
    ck.header["final_loss"] = Json{{"ae_image", r.curve_image.back().loss}, {"ae_text", r.curve_text.back().loss}};
  }
  ck.add_params(r.ae_image.params());
  ck.add_params(r.ae_text.params());
  detail::ensure_parent(c.stage1_path());
  checkpoint::write(ck, c.stage1_path());

  std::string csv = "epoch,stage,loss,lr\n";
  for (std::size_t i = 0; i < r.curve_image.size(); ++i) {
    csv += std::to_string(i) + ",stage1.ae_image," + detail::num(r.curve_image[i].loss) + "," +
           detail::num(r.curve_image[i].lr) + "\n";
    csv += std::to_string(i) + ",stage1.ae_text," + detail::num(r.curve_text[i].loss) + "," +
           detail::num(r.curve_text[i].lr) + "\n";
  }
  detail::write_text(c.output_dir() / "stage1_loss.csv", csv);
  log << "wrote " << c.paths.stage1_checkpoint << "\n";
}

/// Blank model with the checkpoint's shapes, parameters not yet loaded.
template <typename T>
rawncook::RawNCook<T> blank_model(std::size_t dim, std::size_t classes, const rawncook::RawNCookOptions& opt) {
  cromae::CromAe<T> a(cromae::Direction::image_to_text, dim);
  cromae::CromAe<T> b(cromae::Direction::text_to_image, dim);
  return rawncook::RawNCook<T>::from_autoencoders(a, b, classes, opt);
}

template <typename T>
void cmd_finetune(const ExperimentConfig& c, std::ostream& log) {
  const auto ds = load_dataset(c);
  const auto m = detail::read_manifest(c, ds);
  detail::write_snapshot(c, m.original_training_size);
  if (!ds.store.has_labels()) throw DataError("stage 2 needs labels: set paths.labels or use a labeled feature file");

  const auto ck1 = checkpoint::read(c.stage1_path());
  detail::require_format(ck1, kStage1Format, c.stage1_path());
  detail::require_hash(ck1.header, "manifest_hash", detail::manifest_hash(c), "split manifest hash", c.stage1_path());
  detail::require_hash(ck1.header, "features_checksum", detail::hex(ds.features_checksum), "feature file checksum",
                       c.stage1_path());
  const std::size_t dim = ck1.header.value("dim", std::size_t{0});
  if (dim != ds.store.dim()) {
    throw DataError(c.paths.stage1_checkpoint + " has dim " + std::to_string(dim) + ", features have " +
                    std::to_string(ds.store.dim()));
  }
  cromae::CromAe<T> ae_image(cromae::Direction::image_to_text, dim);
  cromae::CromAe<T> ae_text(cromae::Direction::text_to_image, dim);
  ck1.load_params(ae_image.params());
  ck1.load_params(ae_text.params());

  const auto& s2 = c.stage2;
  const std::size_t classes = ds.store.label_dim();
  rawncook::RawNCookOptions opt{s2.projection_dim, s2.dropout, c.seed, s2.zero_latents};
  auto model = rawncook::RawNCook<T>::from_autoencoders(ae_image, ae_text, classes, opt);
  detail::log_parameter_counts(log, dim, s2.projection_dim, classes);
  log << "stage2: " << m.labeled_ids.size() << " labeled samples, " << classes << " classes, loss " << s2.loss
      << ", gamma_scheduler " << s2.gamma_scheduler << "\n";

  rawncook::Stage2Config cfg;
  cfg.epochs = s2.optimizer.epochs;
  cfg.batch_size = s2.optimizer.batch_size;
  cfg.adam = config::adam_options(s2.optimizer);
  cfg.schedule = {s2.optimizer.lr, s2.gamma_scheduler, s2.step_size};
  cfg.loss = s2.loss == "bce" ? rawncook::LossKind::bce : rawncook::LossKind::db_focal;
  cfg.db_focal = config::db_focal_config(s2);
  cfg.threshold = s2.threshold;
  cfg.seed = c.seed;
  cfg.eval_every = s2.eval_every;
  cfg.best_on_validation = s2.best_on_validation;
  const std::size_t every = std::max<std::size_t>(1, cfg.epochs / 10);
  const auto r = rawncook::train_stage2(model, ds.store, m.labeled_ids, m.val_ids, cfg,
                                        [&](const rawncook::EpochRecord& e) {
                                          if ((e.epoch + 1) % every != 0 && e.epoch + 1 != cfg.epochs) return;
                                          log << "stage2 epoch " << (e.epoch + 1) << "/" << cfg.epochs << "  loss "
                                              << e.loss << "  lr " << e.lr;
                                          if (e.val_weighted_f1) log << "  val weighted_f1 " << *e.val_weighted_f1;
                                          if (e.val_auroc) log << "  val auroc " << *e.val_auroc;
                                          log << "\n";
                                        });

  checkpoint::Checkpoint ck;
  ck.header["format"] = kStage2Format;
  ck.header["stage1_hash"] = detail::hex(io::file_checksum(c.stage1_path()));
  ck.header["manifest_hash"] = detail::manifest_hash(c);
  ck.header["features_checksum"] = detail::hex(ds.features_checksum);
  ck.header["dim"] = dim;
  ck.header["num_classes"] = classes;
  ck.header["class_names"] = ds.store.class_names();
  ck.header["projection_dim"] = s2.projection_dim;
  ck.header["dropout"] = s2.dropout;
  ck.header["zero_latents"] = s2.zero_latents;
  ck.header["loss"] = s2.loss;
  ck.header["threshold"] = s2.threshold;
  if (cfg.loss == rawncook::LossKind::db_focal) {
    const auto& f = r.db_focal;
    ck.header["db_focal"] = Json{{"gamma", f.gamma},
                                 {"lambda", f.lambda},
                                 {"kappa", f.kappa},
                                 {"class_priors", f.class_priors},
                                 {"rebalance", s2.rebalance}};
  }
  ck.header["precision"] = checkpoint::precision_name(checkpoint::precision_of<T>());
  ck.header["seed"] = c.seed;
  ck.header["selected_epoch"] = r.selected_epoch ? Json(*r.selected_epoch) : Json(nullptr);
  ck.header["parameter_count"] = Json{{"stage1", rawncook::stage1_parameter_count(dim)},
                                      {"stage2_trainable", nn::parameter_count(model.trainable_params())}};
  ck.add_params(model.frozen_params());
  ck.add_params(model.trainable_params());
  detail::ensure_parent(c.stage2_path());
  checkpoint::write(ck, c.stage2_path());

  std::string csv = "epoch,stage,loss,lr,val_weighted_f1,val_auroc\n";
  for (const auto& e : r.history) {
    csv += std::to_string(e.epoch) + ",stage2," + detail::num(e.loss) + "," + detail::num(e.lr) + "," +
           (e.val_weighted_f1 ? detail::num(*e.val_weighted_f1) : "") + "," +
           (e.val_auroc ? detail::num(*e.val_auroc) : "") + "\n";
  }
  detail::write_text(c.output_dir() / "stage2_loss.csv", csv);
  log << "wrote " << c.paths.stage2_checkpoint << "\n";
}

/// The stage-2 model after verifying manifest -> stage 1 -> stage 2.
template <typename T>
struct LoadedModel {
  rawncook::RawNCook<T> model;
  Json header;
  std::string stage2_hash;
};

template <typename T>
LoadedModel<T> load_model(const ExperimentConfig& c, const Dataset& ds) {
  const auto ck = checkpoint::read(c.stage2_path());
  detail::require_format(ck, kStage2Format, c.stage2_path());
  detail::require_hash(ck.header, "manifest_hash", detail::manifest_hash(c), "split manifest hash", c.stage2_path());
  if (!std::filesystem::exists(c.stage1_path())) {
    throw DataError("stage-1 checkpoint not found: " + c.stage1_path().string() + " (needed to verify " +
                    c.paths.stage2_checkpoint + ")");
  }
  detail::require_hash(ck.header, "stage1_hash", detail::hex(io::file_checksum(c.stage1_path())),
                       "stage-1 checkpoint hash", c.stage2_path());
  detail::require_hash(ck.header, "features_checksum", detail::hex(ds.features_checksum), "feature file checksum",
                       c.stage2_path());
  const auto& h = ck.header;
  rawncook::RawNCookOptions opt{h.at("projection_dim").get<std::size_t>(), h.at("dropout").get<double>(),
                                h.at("seed").get<std::uint64_t>(), h.at("zero_latents").get<bool>()};
  auto model = blank_model<T>(h.at("dim").get<std::size_t>(), h.at("num_classes").get<std::size_t>(), opt);
  ck.load_params(model.frozen_params());
  ck.load_params(model.trainable_params());
  return {std::move(model), h, detail::hex(io::file_checksum(c.stage2_path()))};
}

inline Json report_json(const metrics::EvalReport& r, const std::vector<std::string>& class_names,
                        const std::string& primary, const std::string& stage2_hash) {
  Json per_class = Json::array();
  for (std::size_t i = 0; i < r.per_class.size(); ++i) {
    const auto& s = r.per_class[i];
    per_class.push_back(Json{{"class", i < class_names.size() ? class_names[i] : "class" + std::to_string(i)},
                             {"precision", s.precision},
                             {"recall", s.recall},
                             {"f1", s.f1},
                             {"support", s.support}});
  }
  Json j;
  j["partition"] = r.partition;
  j["samples"] = r.samples;
  j["threshold"] = r.threshold;
  j["primary_metric"] = primary;
  j["primary_value"] = primary == "auroc" ? Json(*r.auroc) : Json(r.weighted_f1);
  j["weighted_f1"] = r.weighted_f1;
  j["auroc"] = r.auroc ? Json(*r.auroc) : Json(nullptr);
  j["per_class"] = per_class;
  j["stage2_checkpoint_hash"] = stage2_hash;
  return j;
}

/// Scores `partition` (config default when empty) and writes report_<partition>.json.
template <typename T>
Json cmd_evaluate(const ExperimentConfig& c, std::ostream& log, std::string partition = {}) {
  if (partition.empty()) partition = c.partition;
  const auto ds = load_dataset(c);
  const auto m = detail::read_manifest(c, ds);
  detail::write_snapshot(c, m.original_training_size);
  const auto& ids = m.partition(partition);
  if (ids.empty()) throw DataError("partition '" + partition + "' is empty in " + c.paths.manifest);
  const auto loaded = load_model<T>(c, ds);
  const double threshold = loaded.header.at("threshold").template get<double>();
  const auto report = rawncook::evaluate(loaded.model, ds.store, ids, threshold, partition);

  std::string primary = c.primary_metric;
  if (primary == "auto") primary = loaded.model.num_classes() == 1 ? "auroc" : "weighted_f1";
  if (primary == "auroc" && !report.auroc) {
    throw DataError("AUROC needs a single-class task with both outcomes present in '" + partition + "'");
  }
  const Json j = report_json(report, ds.store.class_names(), primary, loaded.stage2_hash);
  detail::write_text(c.output_dir() / ("report_" + partition + ".json"), j.dump(2) + "\n");

  char line[160];
  log << "evaluate " << partition << " (" << report.samples << " samples, threshold " << threshold << ")\n";
  std::snprintf(line, sizeof line, "  %-24s %9s %9s %9s %8s\n", "class", "precision", "recall", "f1", "support");
  log << line;
  for (std::size_t i = 0; i < report.per_class.size(); ++i) {
    const auto& s = report.per_class[i];
    std::snprintf(line, sizeof line, "  %-24s %9.4f %9.4f %9.4f %8zu\n",
                  j["per_class"][i]["class"].get<std::string>().c_str(), s.precision, s.recall, s.f1, s.support);
    log << line;
  }
  std::snprintf(line, sizeof line, "  weighted_f1 %.4f", report.weighted_f1);
  log << line;
  if (report.auroc) {
    std::snprintf(line, sizeof line, "  auroc %.4f", *report.auroc);
    log << line;
  }
  log << "\n";
  return j;
}

/// Writes predictions_<partition>.jsonl: {"id", "probabilities", "decisions"} per line.
template <typename T>
std::size_t cmd_predict(const ExperimentConfig& c, std::ostream& log, std::string partition = {}) {
  if (partition.empty()) partition = c.partition;
  const auto ds = load_dataset(c);
  const auto m = detail::read_manifest(c, ds);
  detail::write_snapshot(c, m.original_training_size);
  const auto& ids = m.partition(partition);
  const auto loaded = load_model<T>(c, ds);
  const double threshold = loaded.header.at("threshold").template get<double>();
  const auto pred = rawncook::predict_from_logits(rawncook::logits_for(loaded.model, ds.store, ids), threshold);
  std::string out;
  for (std::size_t r = 0; r < ids.size(); ++r) {
    Json line;
    line["id"] = ids[r];
    Json probs = Json::array(), decisions = Json::array();
    for (std::size_t k = 0; k < pred.probabilities.cols(); ++k) {
      probs.push_back(pred.probabilities(r, k));
      decisions.push_back(pred.decisions(r, k) == T(1) ? 1 : 0);
    }
    line["probabilities"] = probs;
    line["decisions"] = decisions;
    out += line.dump() + "\n";
  }
  const auto path = c.output_dir() / ("predictions_" + partition + ".jsonl");
  detail::write_text(path, out);
  log << "predict " << partition << ": " << ids.size() << " lines -> " << path.string() << "\n";
  return ids.size();
}

/// split, pretrain, finetune, evaluate (val, and test when present), predict.
inline void run_all(const ExperimentConfig& c, std::ostream& log) {
  const auto m = cmd_split(c, log);
  with_precision(c, [&](auto tag) {
    using T = decltype(tag);
    cmd_pretrain<T>(c, log);
    cmd_finetune<T>(c, log);
    if (!m.val_ids.empty()) cmd_evaluate<T>(c, log, "val");
    if (!m.test_ids.empty()) cmd_evaluate<T>(c, log, "test");
    const auto& ids = m.partition(c.partition);
    if (!ids.empty()) cmd_predict<T>(c, log, c.partition);
  });
}

}  // namespace semimemes::pipeline
