// semimemes: split / pretrain / finetune / evaluate / predict / run-all, plus
// synth for generating synthetic feature files and validate for checking them.
//
// Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical abort.

#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "semimemes/config.hpp"
#include "semimemes/data_store.hpp"
#include "semimemes/errors.hpp"
#include "semimemes/pipeline.hpp"
#include "semimemes/synthetic.hpp"

namespace {

using namespace semimemes;

struct CommonFlags {
  std::string config_file;
  std::vector<std::string> sets;
  std::optional<std::string> features, labels, output_dir, dataset, precision, partition;
  std::optional<std::uint64_t> seed;
  std::optional<double> ratio;
};

void add_common(CLI::App* cmd, CommonFlags& f, bool with_partition) {
  cmd->add_option("-c,--config", f.config_file, "JSON config file");
  cmd->add_option("--set", f.sets, "Override a config key, e.g. --set stage2.epochs=50 (repeatable)");
  cmd->add_option("--features", f.features, "MMF1 feature file (paths.features)");
  cmd->add_option("--labels", f.labels, "Label manifest JSONL (paths.labels)");
  cmd->add_option("-o,--output-dir", f.output_dir, "Output directory (paths.output_dir)");
  cmd->add_option("--dataset", f.dataset, "Preset: mami, hateful_memes, custom (dataset_tag)");
  cmd->add_option("--seed", f.seed, "Master seed (seed)");
  cmd->add_option("--labeled-ratio", f.ratio, "Labeled fraction of the training set (labeled_ratio)");
  cmd->add_option("--precision", f.precision, "float32 or float64 (precision)");
  if (with_partition) cmd->add_option("--partition", f.partition, "val, test, labeled, unlabeled (evaluate.partition)");
}

config::ExperimentConfig resolve(const CommonFlags& f) {
  config::Json user = f.config_file.empty() ? config::Json::object() : config::read_config_file(f.config_file);
  for (const auto& s : f.sets) config::apply_override(user, s);
  if (f.features) config::set_value(user, "paths.features", *f.features);
  if (f.labels) config::set_value(user, "paths.labels", *f.labels);
  if (f.output_dir) config::set_value(user, "paths.output_dir", *f.output_dir);
  if (f.dataset) config::set_value(user, "dataset_tag", *f.dataset);
  if (f.precision) config::set_value(user, "precision", *f.precision);
  if (f.partition) config::set_value(user, "evaluate.partition", *f.partition);
  if (f.seed) config::set_value(user, "seed", *f.seed);
  if (f.ratio) config::set_value(user, "labeled_ratio", *f.ratio);
  return config::resolve(user);
}

struct SynthFlags {
  std::string kind = "separable";
  std::size_t n = 1000, dim = 32, classes = 0, factors = 4;
  double noise = 1.0, margin = 0.1;
  std::uint64_t seed = 0;
  std::string prefix = "s";
  std::string out;
  std::string labels_out;
  double test_fraction = 0.0;
};

void run_synth(const SynthFlags& f) {
  synthetic::Spec spec;
  spec.kind = synthetic::parse_kind(f.kind);
  spec.n = f.n;
  spec.dim = f.dim;
  spec.num_classes = f.classes;
  spec.factors = f.factors;
  spec.noise = f.noise;
  spec.margin = f.margin;
  spec.seed = f.seed;
  spec.id_prefix = f.prefix;
  if (!(f.test_fraction >= 0.0 && f.test_fraction < 1.0)) throw ConfigError("--test-fraction must lie in [0,1)");
  const auto store = synthetic::generate(spec);
  if (f.labels_out.empty()) {
    data::write_features(store, f.out);
    std::cout << "wrote " << store.size() << " records to " << f.out << "\n";
    return;
  }
  if (!store.has_labels()) throw ConfigError("--labels-out needs --classes > 0");
  data::LabelManifest labels;
  labels.classes = store.class_names();
  std::vector<data::FeatureRecord> bare;
  const auto n_test = static_cast<std::size_t>(f.test_fraction * double(store.size()));
  for (std::size_t i = 0; i < store.size(); ++i) {
    auto r = store.records()[i];
    labels.entries.push_back({r.id, *r.labels, i + n_test >= store.size() ? "test" : "train"});
    r.labels.reset();
    bare.push_back(std::move(r));
  }
  data::write_features(bare, f.out);
  io::write_text_atomic(f.labels_out, data::format_label_manifest(labels));
  std::cout << "wrote " << bare.size() << " records to " << f.out << " and labels to " << f.labels_out << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Two-stage semi-supervised multimodal classifier over paired image/text embeddings"};
  app.require_subcommand(1);
  CommonFlags common;
  SynthFlags synth;

  auto* split = app.add_subcommand("split", "Write the split manifest");
  auto* pretrain = app.add_subcommand("pretrain", "Stage 1: train both cross-modality autoencoders");
  auto* finetune = app.add_subcommand("finetune", "Stage 2: train the fusion classifier");
  auto* evaluate = app.add_subcommand("evaluate", "Score a partition and write report_<partition>.json");
  auto* predict = app.add_subcommand("predict", "Write predictions_<partition>.jsonl");
  auto* run_all = app.add_subcommand("run-all", "split, pretrain, finetune, evaluate, predict");
  for (auto* cmd : {split, pretrain, finetune, run_all}) add_common(cmd, common, false);
  for (auto* cmd : {evaluate, predict}) add_common(cmd, common, true);

  auto* gen = app.add_subcommand("synth", "Generate a synthetic MMF1 feature file");
  gen->add_option("--kind", synth.kind, "cross_linear, independent, separable, shared_factor")->capture_default_str();
  gen->add_option("--n", synth.n, "Record count")->capture_default_str();
  gen->add_option("--dim", synth.dim, "Feature width")->capture_default_str();
  gen->add_option("--classes", synth.classes, "Label width (0 = unlabeled)")->capture_default_str();
  gen->add_option("--factors", synth.factors, "Latent factors (shared_factor)")->capture_default_str();
  gen->add_option("--noise", synth.noise, "Noise scale (shared_factor)")->capture_default_str();
  gen->add_option("--margin", synth.margin, "Label rejection band in score sd")->capture_default_str();
  gen->add_option("--seed", synth.seed, "Generator seed")->capture_default_str();
  gen->add_option("--prefix", synth.prefix, "Id prefix")->capture_default_str();
  gen->add_option("--out", synth.out, "Output MMF1 path")->required();
  gen->add_option("--labels-out", synth.labels_out, "Write labels to this JSONL instead of the MMF1 file");
  gen->add_option("--test-fraction", synth.test_fraction, "Trailing fraction tagged \"test\" in the label file")
      ->capture_default_str();

  std::vector<std::string> to_validate;
  auto* validate = app.add_subcommand("validate", "Check MMF1 files (magic, version, shapes, finite values, checksum)");
  validate->add_option("files", to_validate, "MMF1 files")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (gen->parsed()) {
      run_synth(synth);
      return 0;
    }
    if (validate->parsed()) {
      for (const auto& f : to_validate) {
        const auto store = data::read_features(f);
        std::cout << f << ": ok, " << store.size() << " records, dim " << store.dim() << ", "
                  << (store.has_labels() ? std::to_string(store.label_dim()) + " label columns" : "unlabeled") << "\n";
      }
      return 0;
    }
    const auto cfg = resolve(common);
    if (split->parsed()) {
      pipeline::cmd_split(cfg, std::cout);
    } else if (run_all->parsed()) {
      pipeline::run_all(cfg, std::cout);
    } else {
      pipeline::with_precision(cfg, [&](auto tag) {
        using T = decltype(tag);
        if (pretrain->parsed()) pipeline::cmd_pretrain<T>(cfg, std::cout);
        if (finetune->parsed()) pipeline::cmd_finetune<T>(cfg, std::cout);
        if (evaluate->parsed()) pipeline::cmd_evaluate<T>(cfg, std::cout);
        if (predict->parsed()) pipeline::cmd_predict<T>(cfg, std::cout);
      });
    }
    return 0;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const ShapeError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
