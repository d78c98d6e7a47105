#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "semimemes/checkpoint.hpp"
#include "semimemes/cromae.hpp"
#include "semimemes/data_store.hpp"
#include "semimemes/errors.hpp"
#include "semimemes/losses.hpp"
#include "semimemes/metrics.hpp"
#include "semimemes/nn.hpp"
#include "semimemes/rng.hpp"
#include "semimemes/tensor.hpp"

namespace semimemes::rawncook {

struct RawNCookOptions {
  std::size_t projection_dim = 256;
  double dropout = 0.5;
  std::uint64_t seed = 0;
  /// Ablation: feed zero vectors to the two cooked (latent) branches.
  bool zero_latents = false;
};

/// Branch order inside the concatenated 4·P vector.
enum Branch : std::size_t { raw_image = 0, raw_text = 1, cooked_image = 2, cooked_text = 3 };
inline constexpr std::array<const char*, 4> kBranchNames = {"proj_f_image", "proj_f_text", "proj_z_image",
                                                            "proj_z_text"};

/// Fusion classifier over raw features and frozen-encoder latents:
///   Z_k = frozen_enc_k(F_k)
///   h   = [proj(F_image), proj(F_text), proj(Z_image), proj(Z_text)]
///   logits = head(h)
/// with each proj = Linear(D -> P) > ReLU > Dropout.
template <typename T>
class RawNCook {
 public:
  RawNCook() = default;

  RawNCook(cromae::Encoder<T> enc_image, cromae::Encoder<T> enc_text, std::size_t num_classes,
           const RawNCookOptions& opt)
      : opt_(opt), enc_image_(std::move(enc_image)), enc_text_(std::move(enc_text)) {
    if (enc_image_.in_dim() != enc_text_.in_dim()) throw ShapeError("frozen encoders disagree on feature width");
    if (num_classes == 0) throw ConfigError("RAW-N-COOK needs at least one output class");
    enc_image_.rename("frozen_enc_image");
    enc_text_.rename("frozen_enc_text");
    Rng init(derive_seed(opt.seed, 11));
    const std::array<std::size_t, 4> in_dims = {dim(), dim(), enc_image_.out_dim(), enc_text_.out_dim()};
    for (std::size_t k = 0; k < 4; ++k) {
      const std::string name = kBranchNames[k];
      nn::Linear<T> linear(name + ".linear", in_dims[k], opt.projection_dim);
      linear.init_uniform(init);
      proj_[k] = nn::Sequential<T>({std::move(linear), nn::Relu<T>(name + ".relu"),
                                    nn::Dropout<T>(name + ".dropout", opt.dropout, derive_seed(opt.seed, 20 + k))});
    }
    head_ = nn::Linear<T>("head", 4 * opt.projection_dim, num_classes);
    head_.init_uniform(init);
  }

  /// Builds from the two trained stage-1 autoencoders, keeping only their encoders.
  static RawNCook from_autoencoders(const cromae::CromAe<T>& ae_image, const cromae::CromAe<T>& ae_text,
                                    std::size_t num_classes, const RawNCookOptions& opt) {
    if (ae_image.direction() != cromae::Direction::image_to_text ||
        ae_text.direction() != cromae::Direction::text_to_image) {
      throw ConfigError("RAW-N-COOK expects (image->text, text->image) autoencoders");
    }
    return RawNCook(ae_image.encoder(), ae_text.encoder(), num_classes, opt);
  }

  std::size_t dim() const { return enc_image_.in_dim(); }
  std::size_t num_classes() const { return head_.out_dim(); }
  const RawNCookOptions& options() const { return opt_; }

  /// Cooked features; the frozen encoders always run with eval semantics.
  std::pair<Matrix<T>, Matrix<T>> latents(const Matrix<T>& f_image, const Matrix<T>& f_text) const {
    if (opt_.zero_latents) {
      return {Matrix<T>(f_image.rows(), enc_image_.out_dim()), Matrix<T>(f_text.rows(), enc_text_.out_dim())};
    }
    return {enc_image_.apply(f_image), enc_text_.apply(f_text)};
  }

  Matrix<T> forward(const Matrix<T>& f_image, const Matrix<T>& f_text, nn::Mode mode) {
    check_inputs(f_image, f_text);
    const auto [z_image, z_text] = latents(f_image, f_text);
    const std::array<const Matrix<T>*, 4> inputs = {&f_image, &f_text, &z_image, &z_text};
    std::array<Matrix<T>, 4> h;
    for (std::size_t k = 0; k < 4; ++k) h[k] = proj_[k].forward(*inputs[k], mode);
    const std::array<const Matrix<T>*, 4> parts = {&h[0], &h[1], &h[2], &h[3]};
    return head_.forward(hconcat<T>(parts), mode);
  }

  Matrix<T> forward(const data::Batch<T>& batch, nn::Mode mode) { return forward(batch.f_image, batch.f_text, mode); }

  /// Eval-mode logits without touching layer caches.
  Matrix<T> apply(const Matrix<T>& f_image, const Matrix<T>& f_text) const {
    check_inputs(f_image, f_text);
    const auto [z_image, z_text] = latents(f_image, f_text);
    const std::array<const Matrix<T>*, 4> inputs = {&f_image, &f_text, &z_image, &z_text};
    std::array<Matrix<T>, 4> h;
    for (std::size_t k = 0; k < 4; ++k) h[k] = proj_[k].apply(*inputs[k]);
    const std::array<const Matrix<T>*, 4> parts = {&h[0], &h[1], &h[2], &h[3]};
    return head_.apply(hconcat<T>(parts));
  }

  /// Accumulates gradients of every trainable parameter from dL/dlogits.
  void backward(const Matrix<T>& grad_logits) {
    const Matrix<T> g = head_.backward(grad_logits);
    const std::size_t p = opt_.projection_dim;
    for (std::size_t k = 0; k < 4; ++k) proj_[k].backward(column_block(g, k * p, p), false);
  }

  /// Projection blocks then head; frozen encoders excluded.
  nn::ParamRefs<T> trainable_params() {
    nn::ParamRefs<T> out;
    for (auto& s : proj_) s.collect(out);
    head_.collect(out);
    return out;
  }

  nn::ParamRefs<T> frozen_params() {
    auto out = enc_image_.params();
    for (auto* p : enc_text_.params()) out.push_back(p);
    return out;
  }

  nn::Sequential<T>& projection(std::size_t k) { return proj_[k]; }
  nn::Linear<T>& head() { return head_; }

  void freeze_dropout_masks(bool frozen) {
    for (auto& s : proj_) s.freeze_dropout_masks(frozen);
  }

 private:
  void check_inputs(const Matrix<T>& f_image, const Matrix<T>& f_text) const {
    if (f_image.cols() != dim() || f_text.cols() != dim()) {
      throw ShapeError("RAW-N-COOK: expected " + std::to_string(dim()) + "-wide features, got " + f_image.shape() +
                       " and " + f_text.shape());
    }
    if (f_image.rows() != f_text.rows()) throw ShapeError("RAW-N-COOK: modality batch sizes differ");
  }

  RawNCookOptions opt_;
  cromae::Encoder<T> enc_image_;
  cromae::Encoder<T> enc_text_;
  std::array<nn::Sequential<T>, 4> proj_;
  nn::Linear<T> head_;
};

/// Trainable parameter count: 4·(D·P + P) + (4P·C + C).
inline std::size_t stage2_parameter_count(std::size_t dim, std::size_t projection_dim, std::size_t num_classes) {
  return 4 * (dim * projection_dim + projection_dim) + (4 * projection_dim * num_classes + num_classes);
}

/// Both autoencoders: 2·(2·(D·D + D) + 1).
inline std::size_t stage1_parameter_count(std::size_t dim) { return 2 * (2 * (dim * dim + dim) + 1); }

template <typename T>
struct Prediction {
  Matrix<double> probabilities;
  Matrix<T> decisions;
};

/// σ(logits) and decisions prob ≥ threshold.
template <typename T>
Prediction<T> predict_from_logits(const Matrix<T>& logits, double threshold) {
  if (!(threshold >= 0.0 && threshold <= 1.0)) {
    throw ConfigError("threshold must lie in [0,1], got " + std::to_string(threshold));
  }
  Prediction<T> out{Matrix<double>(logits.rows(), logits.cols()), Matrix<T>(logits.rows(), logits.cols())};
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const double p = losses::sigmoid(double(logits.values()[i]));
    out.probabilities.values()[i] = p;
    out.decisions.values()[i] = p >= threshold ? T(1) : T(0);
  }
  return out;
}

template <typename T>
Prediction<T> predict(const RawNCook<T>& model, const data::Batch<T>& batch, double threshold) {
  return predict_from_logits(model.apply(batch.f_image, batch.f_text), threshold);
}

/// Eval-mode logits for `ids`, processed in chunks, in id order.
template <typename T>
Matrix<T> logits_for(const RawNCook<T>& model, const data::FeatureStore& store, const std::vector<std::string>& ids,
                     std::size_t chunk = 512) {
  Matrix<T> out(ids.size(), model.num_classes());
  for (std::size_t start = 0; start < ids.size(); start += chunk) {
    const std::size_t end = std::min(ids.size(), start + chunk);
    const std::vector<std::string> part(ids.begin() + static_cast<std::ptrdiff_t>(start),
                                        ids.begin() + static_cast<std::ptrdiff_t>(end));
    const auto batch = data::gather<T>(store, part);
    const Matrix<T> logits = model.apply(batch.f_image, batch.f_text);
    std::copy(logits.values().begin(), logits.values().end(), out.row(start).begin());
  }
  return out;
}

/// Weighted F1 at `threshold`, plus AUROC when there is one class and both
/// target values occur.
template <typename T>
metrics::EvalReport evaluate(const RawNCook<T>& model, const data::FeatureStore& store,
                             const std::vector<std::string>& ids, double threshold, const std::string& partition) {
  if (!store.has_labels()) throw DataError("evaluation needs labels for partition '" + partition + "'");
  if (ids.empty()) throw DataError("partition '" + partition + "' is empty");
  const auto pred = predict_from_logits(logits_for(model, store, ids), threshold);
  const auto targets = *data::gather<T>(store, ids).labels;
  auto report = metrics::weighted_f1(pred.decisions, targets);
  report.partition = partition;
  report.threshold = threshold;
  if (model.num_classes() == 1) {
    std::vector<double> scores(ids.size());
    std::vector<int> y(ids.size());
    std::size_t pos = 0;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      scores[i] = pred.probabilities(i, 0);
      y[i] = targets(i, 0) == T(1) ? 1 : 0;
      pos += static_cast<std::size_t>(y[i]);
    }
    if (pos > 0 && pos < ids.size()) report.auroc = metrics::auroc(scores, y);
  }
  return report;
}

enum class LossKind { db_focal, bce };

inline const char* loss_name(LossKind k) { return k == LossKind::db_focal ? "db_focal" : "bce"; }

struct Stage2Config {
  std::size_t epochs = 200;
  std::size_t batch_size = 40;
  nn::AdamOptions adam{};
  nn::StepLr schedule{};
  LossKind loss = LossKind::db_focal;
  /// Used when loss = db_focal. Priors and counts are filled from the labeled set if empty.
  losses::DbFocalConfig db_focal{};
  double threshold = 0.5;
  std::uint64_t seed = 0;
  /// Validation metrics every N epochs (0 = only after the last epoch).
  std::size_t eval_every = 1;
  /// Keep the parameters of the best validation epoch instead of the last one.
  bool best_on_validation = false;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double loss = 0.0;
  double lr = 0.0;
  std::optional<double> val_weighted_f1;
  std::optional<double> val_auroc;
};

struct Stage2Result {
  std::vector<EpochRecord> history;
  losses::DbFocalConfig db_focal;
  std::optional<std::size_t> selected_epoch;
};

using Stage2Progress = std::function<void(const EpochRecord&)>;

/// Fills priors (and rebalance counts) from the labeled ids when unset.
template <typename T>
losses::DbFocalConfig resolve_db_focal(const losses::DbFocalConfig& cfg, const data::FeatureStore& store,
                                       const std::vector<std::string>& labeled_ids) {
  if (!cfg.class_priors.empty()) {
    cfg.validate();
    return cfg;
  }
  const auto labels = *data::gather<T>(store, labeled_ids).labels;
  auto out = losses::db_focal_config_from_labels(labels, cfg.gamma, cfg.lambda, cfg.kappa, cfg.rebalance.mode);
  out.rebalance.alpha = cfg.rebalance.alpha;
  out.rebalance.beta = cfg.rebalance.beta;
  out.rebalance.mu = cfg.rebalance.mu;
  return out;
}

/// Optimizes the projections and head with Adam under a StepLR schedule.
/// The frozen encoders are checksummed after every epoch.
template <typename T>
Stage2Result train_stage2(RawNCook<T>& model, const data::FeatureStore& store,
                          const std::vector<std::string>& labeled_ids, const std::vector<std::string>& val_ids,
                          const Stage2Config& cfg, const Stage2Progress& progress = {}) {
  if (!store.has_labels()) throw DataError("stage 2 needs labeled features");
  if (labeled_ids.empty()) throw DataError("stage 2: no labeled ids");
  if (store.label_dim() != model.num_classes()) {
    throw ConfigError("stage 2: model has " + std::to_string(model.num_classes()) + " outputs, labels have " +
                      std::to_string(store.label_dim()));
  }
  cfg.schedule.validate();
  Stage2Result result;
  if (cfg.loss == LossKind::db_focal) result.db_focal = resolve_db_focal<T>(cfg.db_focal, store, labeled_ids);

  auto trainable = model.trainable_params();
  auto frozen = model.frozen_params();
  const std::uint64_t frozen_sum = checkpoint::parameter_checksum(frozen);
  nn::Adam<T> opt(cfg.adam);
  const std::uint64_t shuffle_seed = derive_seed(cfg.seed, 4);

  std::optional<std::vector<Matrix<T>>> best_params;
  double best_metric = -1.0;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = cfg.schedule.lr_at(epoch);
    opt.set_lr(lr);
    double sum = 0.0;
    std::size_t seen = 0;
    const auto plan = data::batch_plan(store, labeled_ids, cfg.batch_size, shuffle_seed, epoch);
    for (std::size_t bi = 0; bi < plan.size(); ++bi) {
      const auto batch = data::gather<T>(store, std::span<const std::size_t>(plan[bi]));
      nn::zero_grad(trainable);
      try {
        const Matrix<T> logits = model.forward(batch, nn::Mode::train);
        const auto loss = cfg.loss == LossKind::db_focal ? losses::db_focal(logits, *batch.labels, result.db_focal)
                                                         : losses::bce_with_logits(logits, *batch.labels);
        model.backward(loss.grad);
        opt.step(trainable);
        sum += loss.value * double(batch.size());
        seen += batch.size();
      } catch (const NumericalError& e) {
        throw NumericalError("stage 2 epoch " + std::to_string(epoch) + " batch " + std::to_string(bi) + ": " +
                             e.what());
      }
    }
    if (checkpoint::parameter_checksum(frozen) != frozen_sum) {
      throw NumericalError("stage 2 epoch " + std::to_string(epoch) + ": frozen encoder parameters drifted");
    }
    EpochRecord rec{epoch, sum / double(seen), lr, std::nullopt, std::nullopt};
    const bool last = epoch + 1 == cfg.epochs;
    const bool due = cfg.eval_every > 0 && (epoch + 1) % cfg.eval_every == 0;
    if (!val_ids.empty() && (due || last)) {
      const auto report = evaluate(model, store, val_ids, cfg.threshold, "val");
      rec.val_weighted_f1 = report.weighted_f1;
      rec.val_auroc = report.auroc;
      const double metric = report.auroc.value_or(report.weighted_f1);
      if (cfg.best_on_validation && metric > best_metric) {
        best_metric = metric;
        result.selected_epoch = epoch;
        best_params.emplace();
        for (const auto* p : trainable) best_params->push_back(p->value);
      }
    }
    result.history.push_back(rec);
    if (progress) progress(rec);
  }
  if (best_params) {
    for (std::size_t i = 0; i < trainable.size(); ++i) trainable[i]->value = (*best_params)[i];
  } else if (cfg.epochs > 0) {
    result.selected_epoch = cfg.epochs - 1;
  }
  return result;
}

}  // namespace semimemes::rawncook
