#include <gtest/gtest.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "gradcheck.hpp"
#include "semimemes/checkpoint.hpp"
#include "semimemes/cromae.hpp"
#include "semimemes/losses.hpp"
#include "semimemes/rawncook.hpp"
#include "semimemes/synthetic.hpp"

using semimemes::Matrix;
using semimemes::Rng;
namespace nn = semimemes::nn;
namespace cromae = semimemes::cromae;
namespace data = semimemes::data;
namespace losses = semimemes::losses;
namespace rawncook = semimemes::rawncook;
namespace synthetic = semimemes::synthetic;

namespace {

rawncook::RawNCook<double> make_model(std::size_t dim, std::size_t classes, std::size_t proj, std::uint64_t seed,
                                      double dropout = 0.5) {
  Rng init(seed);
  cromae::CromAe<double> a(cromae::Direction::image_to_text, dim, init);
  cromae::CromAe<double> b(cromae::Direction::text_to_image, dim, init);
  rawncook::RawNCookOptions opt;
  opt.projection_dim = proj;
  opt.dropout = dropout;
  opt.seed = seed;
  return rawncook::RawNCook<double>::from_autoencoders(a, b, classes, opt);
}

std::vector<Matrix<double>> values_of(const nn::ParamRefs<double>& params) {
  std::vector<Matrix<double>> out;
  for (auto* p : params) out.push_back(p->value);
  return out;
}

}  // namespace

TEST(RawNCook, ZeroWeightsGiveZeroLogits) {
  auto model = make_model(6, 3, 8, 1);
  for (auto* p : model.trainable_params()) p->value = Matrix<double>(p->value.rows(), p->value.cols());
  Rng rng(2);
  const auto logits = model.apply(gradcheck::uniform_matrix(rng, 4, 6), gradcheck::uniform_matrix(rng, 4, 6));
  EXPECT_EQ(logits, Matrix<double>(4, 3));
}

TEST(RawNCook, EvalPassesAreDeterministic) {
  auto model = make_model(6, 4, 8, 3);
  Rng rng(4);
  const auto fi = gradcheck::uniform_matrix(rng, 5, 6), ft = gradcheck::uniform_matrix(rng, 5, 6);
  const auto a = model.forward(fi, ft, nn::Mode::eval);
  const auto b = model.forward(fi, ft, nn::Mode::eval);
  EXPECT_EQ(a, b);
  EXPECT_EQ(a, model.apply(fi, ft));
  EXPECT_NE(model.forward(fi, ft, nn::Mode::train), a);
}

TEST(RawNCook, OutputWidthIsClassCount) {
  Rng rng(5);
  const auto fi = gradcheck::uniform_matrix(rng, 2, 6), ft = gradcheck::uniform_matrix(rng, 2, 6);
  EXPECT_EQ(make_model(6, 4, 8, 6).apply(fi, ft).cols(), 4u);
  EXPECT_EQ(make_model(6, 1, 8, 6).apply(fi, ft).cols(), 1u);
}

TEST(RawNCook, LayoutAndNames) {
  auto model = make_model(768, 4, 256, 7);
  EXPECT_EQ(model.head().in_dim(), 1024u);
  std::vector<std::string> names;
  for (auto* p : model.trainable_params()) names.push_back(p->name);
  EXPECT_EQ(names, (std::vector<std::string>{"proj_f_image.linear.weight", "proj_f_image.linear.bias",
                                             "proj_f_text.linear.weight", "proj_f_text.linear.bias",
                                             "proj_z_image.linear.weight", "proj_z_image.linear.bias",
                                             "proj_z_text.linear.weight", "proj_z_text.linear.bias", "head.weight",
                                             "head.bias"}));
  for (auto* p : model.frozen_params()) EXPECT_EQ(p->name.rfind("frozen_enc_", 0), 0u) << p->name;
  EXPECT_EQ(nn::parameter_count(model.trainable_params()), 791556u);
  EXPECT_EQ(rawncook::stage2_parameter_count(768, 256, 4), 791556u);
  EXPECT_EQ(rawncook::stage2_parameter_count(768, 256, 1), 4 * (768 * 256 + 256) + 1024 + 1u);
}

TEST(RawNCook, ConcatenationOrderIsRawThenCooked) {
  // Head reads only block k; the output must equal a hand-built projection of input k.
  const std::size_t d = 4, p = 3;
  auto model = make_model(d, 1, p, 8, 0.0);
  Rng rng(9);
  const auto fi = gradcheck::uniform_matrix(rng, 2, d), ft = gradcheck::uniform_matrix(rng, 2, d);
  const auto [zi, zt] = model.latents(fi, ft);
  const std::array<const Matrix<double>*, 4> inputs = {&fi, &ft, &zi, &zt};
  for (std::size_t k = 0; k < 4; ++k) {
    auto& head = model.head();
    head.weight().value = Matrix<double>(4 * p, 1);
    head.bias().value = Matrix<double>(1, 1);
    for (std::size_t j = 0; j < p; ++j) head.weight().value(k * p + j, 0) = 1.0;
    const auto expected = model.projection(k).apply(*inputs[k]);
    const auto logits = model.apply(fi, ft);
    for (std::size_t r = 0; r < 2; ++r) {
      double sum = 0.0;
      for (std::size_t j = 0; j < p; ++j) sum += expected(r, j);
      EXPECT_DOUBLE_EQ(logits(r, 0), sum) << "block " << k;
    }
  }
}

TEST(RawNCook, ZeroLatentAblationFeedsZeros) {
  Rng init(10);
  cromae::CromAe<double> a(cromae::Direction::image_to_text, 5, init);
  cromae::CromAe<double> b(cromae::Direction::text_to_image, 5, init);
  rawncook::RawNCookOptions opt;
  opt.projection_dim = 4;
  opt.zero_latents = true;
  auto model = rawncook::RawNCook<double>::from_autoencoders(a, b, 2, opt);
  Rng rng(11);
  const auto [zi, zt] = model.latents(gradcheck::uniform_matrix(rng, 3, 5), gradcheck::uniform_matrix(rng, 3, 5));
  EXPECT_EQ(zi, Matrix<double>(3, 5));
  EXPECT_EQ(zt, Matrix<double>(3, 5));
}

TEST(RawNCook, RejectsSwappedAutoencoders) {
  cromae::CromAe<double> a(cromae::Direction::image_to_text, 3);
  cromae::CromAe<double> b(cromae::Direction::text_to_image, 3);
  EXPECT_THROW(rawncook::RawNCook<double>::from_autoencoders(b, a, 2, {}), semimemes::ConfigError);
}

TEST(RawNCook, RejectsMismatchedInputs) {
  auto model = make_model(4, 2, 3, 12);
  EXPECT_THROW(model.apply(Matrix<double>(2, 4), Matrix<double>(2, 5)), semimemes::ShapeError);
  EXPECT_THROW(model.apply(Matrix<double>(2, 4), Matrix<double>(3, 4)), semimemes::ShapeError);
}

TEST(RawNCook, GradientMatchesFiniteDifferences) {
  const std::size_t d = 6, c = 3, p = 5, b = 4;
  auto model = make_model(d, c, p, 13, 0.3);
  Rng rng(14);
  auto params = model.trainable_params();
  gradcheck::randomize(params, rng);
  gradcheck::randomize(model.frozen_params(), rng);
  const auto fi = gradcheck::uniform_matrix(rng, b, d), ft = gradcheck::uniform_matrix(rng, b, d);
  Matrix<double> y(b, c);
  for (auto& v : y.values()) v = rng.below(2) ? 1.0 : 0.0;
  losses::DbFocalConfig focal;
  focal.class_priors = {0.2, 0.45, 0.7};
  std::vector<double> nu;
  for (std::size_t i = 0; i < c; ++i) nu.push_back(focal.class_bias(i));
  const auto target = gradcheck::uniform_matrix(rng, b, c);

  model.freeze_dropout_masks(true);
  model.forward(fi, ft, nn::Mode::train);  // draws the masks reused below
  auto run = [&](auto library_loss, auto oracle_loss) {
    nn::zero_grad(params);
    model.backward(library_loss(model.forward(fi, ft, nn::Mode::train)).grad);
    const auto worst = gradcheck::check(params, [&] { return oracle_loss(model.forward(fi, ft, nn::Mode::train)); });
    EXPECT_LT(worst.rel_error, 1e-4) << worst.where << " analytic " << worst.analytic << " numeric " << worst.numeric;
    EXPECT_EQ(worst.checked, nn::parameter_count(params));
  };
  run([&](const Matrix<double>& z) { return losses::bce_with_logits(z, y); },
      [&](const Matrix<double>& z) { return gradcheck::bce(z, y); });
  run([&](const Matrix<double>& z) { return losses::db_focal(z, y, focal); },
      [&](const Matrix<double>& z) { return gradcheck::db_focal(z, y, nu, 2.0L, 5.0L); });
  run([&](const Matrix<double>& z) { return losses::mse(z, target); },
      [&](const Matrix<double>& z) { return gradcheck::mse(z, target); });
}

TEST(RawNCook, FrozenEncodersReceiveNoGradient) {
  auto model = make_model(5, 2, 4, 15);
  const auto before = values_of(model.frozen_params());
  Rng rng(16);
  const auto fi = gradcheck::uniform_matrix(rng, 3, 5), ft = gradcheck::uniform_matrix(rng, 3, 5);
  auto trainable = model.trainable_params();
  nn::zero_grad(trainable);
  model.backward(losses::bce_with_logits(model.forward(fi, ft, nn::Mode::train), Matrix<double>(3, 2, 1.0)).grad);
  nn::Adam<double> opt({.lr = 0.5});
  opt.step(trainable);
  EXPECT_EQ(values_of(model.frozen_params()), before);
}

TEST(Predict, ZeroLogitIsPositiveAtHalf) {
  const auto p = rawncook::predict_from_logits(Matrix<double>{{0.0}}, 0.5);
  EXPECT_DOUBLE_EQ(p.probabilities(0, 0), 0.5);
  EXPECT_EQ(p.decisions(0, 0), 1.0);
}

TEST(Predict, RaisingThresholdNeverTurnsZeroIntoOne) {
  Rng rng(17);
  Matrix<double> logits(50, 3);
  for (auto& v : logits.values()) v = rng.uniform(-6.0, 6.0);
  const double thresholds[] = {0.0, 0.1, 0.3, 0.5, 0.5000001, 0.8, 0.99, 1.0};
  for (std::size_t t = 1; t < std::size(thresholds); ++t) {
    const auto lo = rawncook::predict_from_logits(logits, thresholds[t - 1]);
    const auto hi = rawncook::predict_from_logits(logits, thresholds[t]);
    for (std::size_t i = 0; i < logits.size(); ++i) EXPECT_LE(hi.decisions.values()[i], lo.decisions.values()[i]);
  }
}

TEST(Predict, ProbabilitiesStayInsideOpenInterval) {
  const auto p = rawncook::predict_from_logits(Matrix<double>{{-30.0, -5.0, 0.0, 5.0, 30.0}}, 0.5);
  for (double v : p.probabilities.values()) {
    EXPECT_GT(v, 0.0);
    EXPECT_LT(v, 1.0);
  }
}

TEST(Predict, RejectsThresholdOutsideUnitInterval) {
  EXPECT_THROW(rawncook::predict_from_logits(Matrix<double>{{0.0}}, -0.01), semimemes::ConfigError);
  EXPECT_THROW(rawncook::predict_from_logits(Matrix<double>{{0.0}}, 1.5), semimemes::ConfigError);
  EXPECT_THROW(rawncook::predict_from_logits(Matrix<double>{{0.0}}, std::nan("")), semimemes::ConfigError);
}

namespace {

struct SeparableTask {
  data::FeatureStore store;
  data::SplitManifest split;
};

SeparableTask separable_task(std::size_t classes, std::uint64_t seed) {
  synthetic::Spec spec;
  spec.kind = synthetic::Kind::separable;
  spec.n = 1400;
  spec.dim = 8;
  spec.num_classes = classes;
  spec.seed = seed;
  SeparableTask t{synthetic::generate(spec), {}};
  t.split = data::make_split(t.store.ids(), 1000, 0.8, 400, seed);
  t.split.unlabeled_ids.clear();
  return t;
}

/// Independent reference: per-class logistic regression on F_image by
/// full-batch gradient descent, scored with the same metric.
double logistic_regression_f1(const SeparableTask& t) {
  const auto train = data::gather<double>(t.store, t.split.labeled_ids);
  const auto val = data::gather<double>(t.store, t.split.val_ids);
  const std::size_t d = train.f_image.cols(), c = train.labels->cols(), n = train.size();
  std::vector<double> w((d + 1) * c, 0.0);
  auto score = [&](const Matrix<double>& x, std::size_t r, std::size_t k) {
    double z = w[d * c + k];
    for (std::size_t j = 0; j < d; ++j) z += x(r, j) * w[j * c + k];
    return z;
  };
  for (int it = 0; it < 3000; ++it) {
    std::vector<double> g(w.size(), 0.0);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t k = 0; k < c; ++k) {
        const double e = 1.0 / (1.0 + std::exp(-score(train.f_image, r, k))) - (*train.labels)(r, k);
        for (std::size_t j = 0; j < d; ++j) g[j * c + k] += e * train.f_image(r, j);
        g[d * c + k] += e;
      }
    for (std::size_t i = 0; i < w.size(); ++i) w[i] -= 2.0 * g[i] / double(n);
  }
  Matrix<double> decisions(val.size(), c);
  for (std::size_t r = 0; r < val.size(); ++r)
    for (std::size_t k = 0; k < c; ++k) decisions(r, k) = score(val.f_image, r, k) >= 0.0 ? 1.0 : 0.0;
  return semimemes::metrics::weighted_f1(decisions, *val.labels).weighted_f1;
}

rawncook::RawNCook<float> float_model(std::size_t dim, std::size_t classes, std::uint64_t seed) {
  Rng init(seed);
  cromae::CromAe<float> a(cromae::Direction::image_to_text, dim, init);
  cromae::CromAe<float> b(cromae::Direction::text_to_image, dim, init);
  rawncook::RawNCookOptions opt;
  opt.seed = seed;
  return rawncook::RawNCook<float>::from_autoencoders(a, b, classes, opt);
}

}  // namespace

TEST(Stage2, SeparableTaskReachesHighF1) {
  const auto task = separable_task(4, 18);
  auto model = float_model(8, 4, 18);
  rawncook::Stage2Config cfg;
  cfg.seed = 18;
  cfg.eval_every = 50;
  const auto frozen_before = semimemes::checkpoint::parameter_checksum(model.frozen_params());
  const auto r = rawncook::train_stage2(model, task.store, task.split.labeled_ids, task.split.val_ids, cfg);
  ASSERT_EQ(r.history.size(), 200u);
  EXPECT_GT(logistic_regression_f1(task), 0.95);
  EXPECT_GT(*r.history.back().val_weighted_f1, 0.95);
  EXPECT_EQ(semimemes::checkpoint::parameter_checksum(model.frozen_params()), frozen_before);
  EXPECT_EQ(r.selected_epoch, 199u);
  EXPECT_EQ(r.db_focal.class_priors.size(), 4u);
}

TEST(Stage2, BinaryTaskWithBceReportsAuroc) {
  const auto task = separable_task(1, 19);
  auto model = float_model(8, 1, 19);
  rawncook::Stage2Config cfg;
  cfg.seed = 19;
  cfg.epochs = 40;
  cfg.loss = rawncook::LossKind::bce;
  const auto r = rawncook::train_stage2(model, task.store, task.split.labeled_ids, task.split.val_ids, cfg);
  ASSERT_TRUE(r.history.back().val_auroc.has_value());
  EXPECT_GT(*r.history.back().val_auroc, 0.95);
  EXPECT_TRUE(r.db_focal.class_priors.empty());
}

TEST(Stage2, EveryTrainableBlockReceivesGradient) {
  const auto task = separable_task(4, 20);
  auto model = float_model(8, 4, 20);
  auto trainable = model.trainable_params();
  std::vector<bool> touched(trainable.size(), false);
  rawncook::Stage2Config cfg;
  auto focal = rawncook::resolve_db_focal<float>(cfg.db_focal, task.store, task.split.labeled_ids);
  for (const auto& batch : data::batches<float>(task.store, task.split.labeled_ids, 40, 1, 0)) {
    nn::zero_grad(trainable);
    model.backward(losses::db_focal(model.forward(batch, nn::Mode::train), *batch.labels, focal).grad);
    for (std::size_t i = 0; i < trainable.size(); ++i)
      for (float g : trainable[i]->grad.values()) touched[i] = touched[i] || g != 0.0f;
  }
  for (std::size_t i = 0; i < trainable.size(); ++i) EXPECT_TRUE(touched[i]) << trainable[i]->name;
}

TEST(Stage2, SameSeedGivesIdenticalModels) {
  const auto task = separable_task(4, 21);
  rawncook::Stage2Config cfg;
  cfg.epochs = 3;
  cfg.seed = 5;
  auto a = float_model(8, 4, 21), b = float_model(8, 4, 21);
  rawncook::train_stage2(a, task.store, task.split.labeled_ids, {}, cfg);
  rawncook::train_stage2(b, task.store, task.split.labeled_ids, {}, cfg);
  EXPECT_EQ(semimemes::checkpoint::parameter_checksum(a.trainable_params()),
            semimemes::checkpoint::parameter_checksum(b.trainable_params()));
}

TEST(Stage2, BestOnValidationRestoresSelectedEpoch) {
  const auto task = separable_task(4, 22);
  auto model = float_model(8, 4, 22);
  rawncook::Stage2Config cfg;
  cfg.epochs = 6;
  cfg.best_on_validation = true;
  std::vector<double> f1;
  const auto r = rawncook::train_stage2(model, task.store, task.split.labeled_ids, task.split.val_ids, cfg,
                                        [&](const rawncook::EpochRecord& e) { f1.push_back(*e.val_weighted_f1); });
  ASSERT_TRUE(r.selected_epoch.has_value());
  EXPECT_EQ(f1[*r.selected_epoch], *std::max_element(f1.begin(), f1.end()));
  const auto report = rawncook::evaluate(model, task.store, task.split.val_ids, 0.5, "val");
  EXPECT_DOUBLE_EQ(report.weighted_f1, f1[*r.selected_epoch]);
}

TEST(Stage2, StepScheduleSetsEpochLearningRate) {
  const auto task = separable_task(4, 23);
  auto model = float_model(8, 4, 23);
  rawncook::Stage2Config cfg;
  cfg.epochs = 3;
  cfg.schedule = {1e-4, 0.9, 1};
  const auto r = rawncook::train_stage2(model, task.store, task.split.labeled_ids, {}, cfg);
  EXPECT_DOUBLE_EQ(r.history[0].lr, 1e-4);
  EXPECT_DOUBLE_EQ(r.history[2].lr, 1e-4 * 0.9 * 0.9);
}

TEST(Stage2, RejectsLabelWidthMismatch) {
  const auto task = separable_task(4, 24);
  auto model = float_model(8, 2, 24);
  EXPECT_THROW(rawncook::train_stage2(model, task.store, task.split.labeled_ids, {}, {}), semimemes::ConfigError);
}
