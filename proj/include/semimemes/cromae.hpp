#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <unordered_set>
#include <vector>

#include "semimemes/data_store.hpp"
#include "semimemes/errors.hpp"
#include "semimemes/losses.hpp"
#include "semimemes/nn.hpp"
#include "semimemes/rng.hpp"
#include "semimemes/tensor.hpp"

namespace semimemes::cromae {

/// image_to_text: F_image -> F̂_text. text_to_image: F_text -> F̂_image.
enum class Direction { image_to_text, text_to_image };

inline const char* prefix_of(Direction d) { return d == Direction::image_to_text ? "ae_image" : "ae_text"; }

template <typename T>
struct AeOutput {
  Matrix<T> reconstruction;
  /// Post-PReLU encoder output Z.
  Matrix<T> latent;
};

/// Encoder half of an autoencoder: Linear followed by PReLU. Only ever
/// evaluated, never trained, once detached from its autoencoder.
template <typename T>
class Encoder {
 public:
  Encoder() = default;
  Encoder(nn::Linear<T> linear, nn::PRelu<T> activation)
      : linear_(std::move(linear)), activation_(std::move(activation)) {}

  Matrix<T> apply(const Matrix<T>& x) const { return activation_.apply(linear_.apply(x)); }

  std::size_t in_dim() const { return linear_.in_dim(); }
  std::size_t out_dim() const { return linear_.out_dim(); }

  /// Parameters, for checksumming and checkpointing. Callers must not train them.
  nn::ParamRefs<T> params() {
    nn::ParamRefs<T> out;
    linear_.collect(out);
    activation_.collect(out);
    return out;
  }

  /// Renames parameters under a new prefix, e.g. "frozen_enc_image".
  void rename(const std::string& prefix) {
    linear_ = relabel(linear_, prefix + ".encoder");
    activation_ = nn::PRelu<T>(prefix + ".activation", activation_.slope());
  }

 private:
  static nn::Linear<T> relabel(const nn::Linear<T>& src, const std::string& name) {
    nn::Linear<T> out(name, src.in_dim(), src.out_dim());
    out.weight().value = src.weight().value;
    out.bias().value = src.bias().value;
    return out;
  }

  nn::Linear<T> linear_;
  nn::PRelu<T> activation_;
};

/// Cross-modality autoencoder: Linear > PReLU > Linear, all dim x dim.
template <typename T>
class CromAe {
 public:
  CromAe() = default;
  CromAe(Direction direction, std::size_t dim)
      : direction_(direction),
        encoder_(std::string(prefix_of(direction)) + ".encoder", dim, dim),
        activation_(std::string(prefix_of(direction)) + ".activation"),
        decoder_(std::string(prefix_of(direction)) + ".decoder", dim, dim) {}

  CromAe(Direction direction, std::size_t dim, Rng& init) : CromAe(direction, dim) {
    encoder_.init_uniform(init);
    decoder_.init_uniform(init);
  }

  Direction direction() const { return direction_; }
  std::size_t dim() const { return encoder_.in_dim(); }
  std::string prefix() const { return prefix_of(direction_); }

  AeOutput<T> forward(const Matrix<T>& source, nn::Mode mode) {
    check_width(source);
    Matrix<T> latent = activation_.forward(encoder_.forward(source, mode), mode);
    Matrix<T> recon = decoder_.forward(latent, mode);
    return {std::move(recon), std::move(latent)};
  }

  AeOutput<T> apply(const Matrix<T>& source) const {
    check_width(source);
    Matrix<T> latent = activation_.apply(encoder_.apply(source));
    Matrix<T> recon = decoder_.apply(latent);
    return {std::move(recon), std::move(latent)};
  }

  /// Accumulates parameter gradients from dL/d(reconstruction).
  void backward(const Matrix<T>& grad_reconstruction) {
    const Matrix<T> g_latent = decoder_.backward(grad_reconstruction);
    const Matrix<T> g_pre = activation_.backward(g_latent);
    encoder_.backward(g_pre, false);
  }

  nn::ParamRefs<T> params() {
    nn::ParamRefs<T> out;
    encoder_.collect(out);
    activation_.collect(out);
    decoder_.collect(out);
    return out;
  }

  Encoder<T> encoder() const { return Encoder<T>(encoder_, activation_); }

  nn::Linear<T>& encoder_layer() { return encoder_; }
  nn::PRelu<T>& activation() { return activation_; }
  nn::Linear<T>& decoder_layer() { return decoder_; }

 private:
  void check_width(const Matrix<T>& source) const {
    if (source.cols() != dim()) {
      throw ShapeError(prefix() + ": expected " + std::to_string(dim()) + "-wide input, got " + source.shape());
    }
  }

  Direction direction_ = Direction::image_to_text;
  nn::Linear<T> encoder_;
  nn::PRelu<T> activation_;
  nn::Linear<T> decoder_;
};

/// Source and target matrices for an autoencoder of the given direction.
template <typename T>
std::pair<const Matrix<T>*, const Matrix<T>*> source_target(const data::Batch<T>& b, Direction d) {
  return d == Direction::image_to_text ? std::pair{&b.f_image, &b.f_text} : std::pair{&b.f_text, &b.f_image};
}

struct EpochLoss {
  std::size_t epoch = 0;
  double loss = 0.0;
  double lr = 0.0;
};

struct Stage1Config {
  std::size_t epochs = 200;
  std::size_t batch_size = 40;
  nn::AdamOptions adam{};
  std::uint64_t seed = 0;
};

template <typename T>
struct Stage1Result {
  CromAe<T> ae_image;
  CromAe<T> ae_text;
  std::vector<EpochLoss> curve_image;
  std::vector<EpochLoss> curve_text;
};

/// Throws unless every id in `ids` is in the manifest's unlabeled partition.
inline void require_unlabeled_only(const std::vector<std::string>& ids, const data::SplitManifest& manifest) {
  const std::unordered_set<std::string> unlabeled(manifest.unlabeled_ids.begin(), manifest.unlabeled_ids.end());
  std::unordered_set<std::string> forbidden;
  for (const auto* list : {&manifest.labeled_ids, &manifest.val_ids, &manifest.test_ids})
    forbidden.insert(list->begin(), list->end());
  for (const auto& id : ids) {
    if (forbidden.count(id) || !unlabeled.count(id)) {
      throw DataError("stage-1 isolation violated: id '" + id + "' is not in the unlabeled partition");
    }
  }
}

using Stage1Progress = std::function<void(std::size_t epoch, double loss_image, double loss_text)>;

/// Trains the image->text and text->image autoencoders, each with its own
/// Adam optimizer and MSE objective, on `ids` (which must all be unlabeled).
/// Initialization streams: ae_image derive_seed(seed,1), ae_text
/// derive_seed(seed,2), batch order derive_seed(seed,3).
template <typename T>
Stage1Result<T> train_stage1(const data::FeatureStore& store, const std::vector<std::string>& ids,
                             const data::SplitManifest& manifest, const Stage1Config& cfg,
                             const Stage1Progress& progress = {}) {
  require_unlabeled_only(ids, manifest);
  if (ids.empty()) throw DataError("stage 1: no unlabeled ids to train on");
  Rng init_image(derive_seed(cfg.seed, 1));
  Rng init_text(derive_seed(cfg.seed, 2));
  const std::uint64_t shuffle_seed = derive_seed(cfg.seed, 3);

  Stage1Result<T> result{CromAe<T>(Direction::image_to_text, store.dim(), init_image),
                         CromAe<T>(Direction::text_to_image, store.dim(), init_text), {}, {}};
  nn::Adam<T> opt_image(cfg.adam);
  nn::Adam<T> opt_text(cfg.adam);
  auto params_image = result.ae_image.params();
  auto params_text = result.ae_text.params();
  const std::unordered_set<std::string> allowed(manifest.unlabeled_ids.begin(), manifest.unlabeled_ids.end());

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    double sum_image = 0.0, sum_text = 0.0;
    std::size_t seen = 0;
    const auto plan = data::batch_plan(store, ids, cfg.batch_size, shuffle_seed, epoch);
    for (std::size_t bi = 0; bi < plan.size(); ++bi) {
      const auto batch = data::gather<T>(store, std::span<const std::size_t>(plan[bi]));
      for (const auto& id : batch.ids) {
        if (!allowed.count(id)) throw DataError("stage-1 isolation violated: id '" + id + "' reached training");
      }
      auto step = [&](CromAe<T>& ae, nn::Adam<T>& opt, nn::ParamRefs<T>& params) {
        const auto [src, tgt] = source_target(batch, ae.direction());
        nn::zero_grad(params);
        try {
          const auto out = ae.forward(*src, nn::Mode::train);
          const auto loss = losses::mse(out.reconstruction, *tgt);
          ae.backward(loss.grad);
          opt.step(params);
          return loss.value;
        } catch (const NumericalError& e) {
          throw NumericalError(ae.prefix() + " epoch " + std::to_string(epoch) + " batch " + std::to_string(bi) +
                               ": " + e.what());
        }
      };
      const double n = static_cast<double>(batch.size());
      sum_image += n * step(result.ae_image, opt_image, params_image);
      sum_text += n * step(result.ae_text, opt_text, params_text);
      seen += batch.size();
    }
    const double li = sum_image / double(seen), lt = sum_text / double(seen);
    result.curve_image.push_back({epoch, li, cfg.adam.lr});
    result.curve_text.push_back({epoch, lt, cfg.adam.lr});
    if (progress) progress(epoch, li, lt);
  }
  return result;
}

/// Trains on manifest.unlabeled_ids.
template <typename T>
Stage1Result<T> train_stage1(const data::FeatureStore& store, const data::SplitManifest& manifest,
                             const Stage1Config& cfg, const Stage1Progress& progress = {}) {
  return train_stage1<T>(store, manifest.unlabeled_ids, manifest, cfg, progress);
}

}  // namespace semimemes::cromae
