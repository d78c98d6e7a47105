#include <gtest/gtest.h>

#include <algorithm>
#include <string>
#include <vector>

#include "gradcheck.hpp"
#include "semimemes/checkpoint.hpp"
#include "semimemes/cromae.hpp"
#include "semimemes/losses.hpp"
#include "semimemes/synthetic.hpp"

using semimemes::Matrix;
using semimemes::Rng;
namespace nn = semimemes::nn;
namespace cromae = semimemes::cromae;
namespace data = semimemes::data;
namespace losses = semimemes::losses;
namespace synthetic = semimemes::synthetic;

namespace {

/// Every id unlabeled.
data::SplitManifest all_unlabeled(const data::FeatureStore& store) {
  data::SplitManifest m;
  m.unlabeled_ids = store.ids();
  return m;
}

data::FeatureStore make_store(synthetic::Kind kind, std::size_t n, std::size_t dim, std::uint64_t seed) {
  synthetic::Spec spec;
  spec.kind = kind;
  spec.n = n;
  spec.dim = dim;
  spec.seed = seed;
  return synthetic::generate(spec);
}

std::vector<std::uint8_t> snapshot(cromae::Stage1Result<double>& r) {
  semimemes::checkpoint::Checkpoint ck;
  ck.add_params(r.ae_image.params());
  ck.add_params(r.ae_text.params());
  return semimemes::checkpoint::encode(ck);
}

double target_variance(const data::FeatureStore& store) {
  double sum = 0.0, sq = 0.0;
  std::size_t n = 0;
  for (const auto& r : store.records())
    for (float v : r.f_text) {
      sum += v;
      sq += double(v) * v;
      ++n;
    }
  const double mean = sum / double(n);
  return sq / double(n) - mean * mean;
}

}  // namespace

TEST(CromAe, ZeroWeightsGiveZeroOutputs) {
  cromae::CromAe<double> ae(cromae::Direction::image_to_text, 5);
  Rng rng(1);
  const auto out = ae.apply(gradcheck::uniform_matrix(rng, 3, 5));
  EXPECT_EQ(out.reconstruction, Matrix<double>(3, 5));
  EXPECT_EQ(out.latent, Matrix<double>(3, 5));
}

TEST(CromAe, IdentityLayersReproduceNonNegativeInput) {
  cromae::CromAe<double> ae(cromae::Direction::text_to_image, 3);
  for (std::size_t i = 0; i < 3; ++i) {
    ae.encoder_layer().weight().value(i, i) = 1.0;
    ae.decoder_layer().weight().value(i, i) = 1.0;
  }
  const Matrix<double> x{{0.0, 1.5, 2.0}, {3.0, 0.25, 7.0}};
  const auto out = ae.apply(x);
  EXPECT_EQ(out.reconstruction, x);
  EXPECT_EQ(out.latent, x);
}

TEST(CromAe, NegativePreactivationsAreScaledBySlope) {
  cromae::CromAe<double> ae(cromae::Direction::image_to_text, 2);
  for (std::size_t i = 0; i < 2; ++i) ae.encoder_layer().weight().value(i, i) = 1.0;
  const auto out = ae.apply(Matrix<double>{{-4.0, 2.0}});
  EXPECT_EQ(out.latent, (Matrix<double>{{-1.0, 2.0}}));
  EXPECT_LT(*std::min_element(out.latent.values().begin(), out.latent.values().end()), 0.0);
}

TEST(CromAe, RejectsWrongWidth) {
  cromae::CromAe<double> ae(cromae::Direction::image_to_text, 4);
  EXPECT_THROW(ae.apply(Matrix<double>(2, 3)), semimemes::ShapeError);
}

TEST(CromAe, ParameterNamesCarryDirectionPrefix) {
  cromae::CromAe<double> a(cromae::Direction::image_to_text, 4);
  cromae::CromAe<double> b(cromae::Direction::text_to_image, 4);
  std::vector<std::string> names;
  for (auto* p : a.params()) names.push_back(p->name);
  EXPECT_EQ(names, (std::vector<std::string>{"ae_image.encoder.weight", "ae_image.encoder.bias",
                                             "ae_image.activation.slope", "ae_image.decoder.weight",
                                             "ae_image.decoder.bias"}));
  for (auto* p : b.params()) EXPECT_EQ(p->name.rfind("ae_text.", 0), 0u) << p->name;
}

TEST(CromAe, DetachedEncoderMatchesLatent) {
  Rng init(3);
  cromae::CromAe<double> ae(cromae::Direction::image_to_text, 6, init);
  Rng rng(4);
  const auto x = gradcheck::uniform_matrix(rng, 5, 6);
  EXPECT_EQ(ae.encoder().apply(x), ae.apply(x).latent);
}

TEST(CromAe, GradientMatchesFiniteDifferencesUnderEveryLoss) {
  const std::size_t d = 8, b = 5;
  Rng rng(21);
  cromae::CromAe<double> ae(cromae::Direction::image_to_text, d);
  auto params = ae.params();
  gradcheck::randomize(params, rng);
  const auto x = gradcheck::uniform_matrix(rng, b, d);
  const auto target = gradcheck::uniform_matrix(rng, b, d);
  Matrix<double> y(b, d);
  for (auto& v : y.values()) v = rng.below(2) ? 1.0 : 0.0;
  losses::DbFocalConfig focal;
  for (std::size_t i = 0; i < d; ++i) focal.class_priors.push_back(rng.uniform(0.1, 0.9));
  std::vector<double> nu;
  for (std::size_t i = 0; i < d; ++i) nu.push_back(focal.class_bias(i));

  auto run = [&](auto library_loss, auto oracle_loss) {
    nn::zero_grad(params);
    ae.backward(library_loss(ae.forward(x, nn::Mode::train).reconstruction).grad);
    const auto worst = gradcheck::check(params, [&] { return oracle_loss(ae.forward(x, nn::Mode::train).reconstruction); });
    EXPECT_LT(worst.rel_error, 1e-4) << worst.where << " analytic " << worst.analytic << " numeric " << worst.numeric;
    EXPECT_EQ(worst.checked, nn::parameter_count(params));
  };
  run([&](const Matrix<double>& r) { return losses::mse(r, target); },
      [&](const Matrix<double>& r) { return gradcheck::mse(r, target); });
  run([&](const Matrix<double>& r) { return losses::bce_with_logits(r, y); },
      [&](const Matrix<double>& r) { return gradcheck::bce(r, y); });
  run([&](const Matrix<double>& r) { return losses::db_focal(r, y, focal); },
      [&](const Matrix<double>& r) { return gradcheck::db_focal(r, y, nu, 2.0L, 5.0L); });
}

TEST(CromAe, LossesTouchOnlyTheirOwnAutoencoder) {
  Rng init(5);
  cromae::CromAe<double> ae_image(cromae::Direction::image_to_text, 6, init);
  cromae::CromAe<double> ae_text(cromae::Direction::text_to_image, 6, init);
  auto p_image = ae_image.params();
  auto p_text = ae_text.params();
  std::vector<Matrix<double>> text_before;
  for (auto* p : p_text) text_before.push_back(p->value);

  Rng rng(6);
  const auto f_image = gradcheck::uniform_matrix(rng, 4, 6);
  const auto f_text = gradcheck::uniform_matrix(rng, 4, 6);
  nn::zero_grad(p_image);
  nn::zero_grad(p_text);
  ae_image.backward(losses::mse(ae_image.forward(f_image, nn::Mode::train).reconstruction, f_text).grad);
  nn::Adam<double> opt({.lr = 0.1});
  opt.step(p_image);

  for (std::size_t i = 0; i < p_text.size(); ++i) {
    EXPECT_EQ(p_text[i]->value, text_before[i]) << p_text[i]->name;
    for (double g : p_text[i]->grad.values()) EXPECT_EQ(g, 0.0) << p_text[i]->name;
  }
  for (auto* a : p_image)
    for (auto* b : p_text) EXPECT_NE(&a->value, &b->value);
}

TEST(Stage1, LearnsCrossLinearMapping) {
  const auto store = make_store(synthetic::Kind::cross_linear, 2000, 16, 7);
  cromae::Stage1Config cfg;
  cfg.seed = 7;
  const auto r = cromae::train_stage1<double>(store, all_unlabeled(store), cfg);
  ASSERT_EQ(r.curve_image.size(), 200u);
  EXPECT_LT(r.curve_image.back().loss, 1e-3);
  EXPECT_LT(r.curve_image.back().loss, r.curve_image.front().loss);
  EXPECT_LT(r.curve_text.back().loss, r.curve_text.front().loss);
}

TEST(Stage1, CannotReconstructIndependentModality) {
  const auto store = make_store(synthetic::Kind::independent, 2000, 16, 8);
  cromae::Stage1Config cfg;
  cfg.seed = 8;
  const auto r = cromae::train_stage1<double>(store, all_unlabeled(store), cfg);
  EXPECT_GE(r.curve_image.back().loss, 0.5 * target_variance(store));
}

TEST(Stage1, SameSeedGivesBitIdenticalParameters) {
  const auto store = make_store(synthetic::Kind::cross_linear, 300, 8, 9);
  cromae::Stage1Config cfg;
  cfg.epochs = 5;
  cfg.seed = 11;
  auto a = cromae::train_stage1<double>(store, all_unlabeled(store), cfg);
  auto b = cromae::train_stage1<double>(store, all_unlabeled(store), cfg);
  EXPECT_EQ(snapshot(a), snapshot(b));
  cfg.seed = 12;
  auto c = cromae::train_stage1<double>(store, all_unlabeled(store), cfg);
  EXPECT_NE(snapshot(a), snapshot(c));
}

TEST(Stage1, RejectsIdsOutsideTheUnlabeledPartition) {
  const auto store = make_store(synthetic::Kind::cross_linear, 50, 4, 10);
  auto m = all_unlabeled(store);
  m.labeled_ids = {m.unlabeled_ids.back()};
  m.unlabeled_ids.pop_back();
  cromae::Stage1Config cfg;
  cfg.epochs = 1;
  EXPECT_THROW(cromae::train_stage1<double>(store, store.ids(), m, cfg), semimemes::DataError);
  try {
    cromae::train_stage1<double>(store, store.ids(), m, cfg);
  } catch (const semimemes::DataError& e) {
    EXPECT_NE(std::string(e.what()).find(m.labeled_ids[0]), std::string::npos);
  }
  EXPECT_NO_THROW(cromae::train_stage1<double>(store, m, cfg));
}

TEST(Stage1, NonFiniteLossAbortsWithLocation) {
  const auto store = make_store(synthetic::Kind::cross_linear, 80, 4, 13);
  cromae::Stage1Config cfg;
  cfg.epochs = 50;
  cfg.adam.lr = 1e37;
  try {
    cromae::train_stage1<float>(store, all_unlabeled(store), cfg);
    FAIL() << "expected a numerical abort";
  } catch (const semimemes::NumericalError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("epoch"), std::string::npos) << msg;
    EXPECT_NE(msg.find("batch"), std::string::npos) << msg;
  }
}

TEST(Stage1, ReportsPerEpochProgress) {
  const auto store = make_store(synthetic::Kind::cross_linear, 60, 4, 14);
  cromae::Stage1Config cfg;
  cfg.epochs = 3;
  std::vector<std::size_t> seen;
  const auto r = cromae::train_stage1<double>(store, all_unlabeled(store), cfg,
                                              [&](std::size_t e, double, double) { seen.push_back(e); });
  EXPECT_EQ(seen, (std::vector<std::size_t>{0, 1, 2}));
  EXPECT_EQ(r.curve_text.size(), 3u);
  EXPECT_DOUBLE_EQ(r.curve_image[1].lr, 1e-4);
}
