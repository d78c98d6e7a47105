#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "semimemes/data_store.hpp"
#include "semimemes/errors.hpp"
#include "semimemes/rng.hpp"
#include "semimemes/tensor.hpp"

// Generated feature sets for tests, fixtures and the semi-supervised gain
// experiment. Every generator is a pure function of its Spec.
namespace semimemes::synthetic {

// For the first three kinds, labels (when num_classes > 0) are
// c = [image·w_c ≥ t_c], and image rows closer than margin·sd to any
// threshold are rejected and redrawn.
enum class Kind {
  /// image ~ U[-1,1]^D, text = image·M with a fixed random M.
  cross_linear,
  /// image, text independent U[-1,1]^D.
  independent,
  /// As independent, but num_classes must be positive.
  separable,
  /// s ~ N(0, I_k); image = s·A + noise·ε; text = s·B + noise·ε';
  /// label c = [s·w_c > t_c].
  shared_factor,
};

inline const char* kind_name(Kind k) {
  switch (k) {
    case Kind::cross_linear: return "cross_linear";
    case Kind::independent: return "independent";
    case Kind::separable: return "separable";
    case Kind::shared_factor: return "shared_factor";
  }
  return "?";
}

inline Kind parse_kind(const std::string& s) {
  for (Kind k : {Kind::cross_linear, Kind::independent, Kind::separable, Kind::shared_factor})
    if (s == kind_name(k)) return k;
  throw ConfigError("unknown synthetic kind '" + s + "'");
}

struct Spec {
  Kind kind = Kind::separable;
  std::size_t n = 1000;
  std::size_t dim = 32;
  /// 0 produces an unlabeled store.
  std::size_t num_classes = 0;
  /// Latent factor count for shared_factor.
  std::size_t factors = 4;
  double noise = 1.0;
  /// Label rejection band, in units of each score's standard deviation.
  double margin = 0.1;
  std::uint64_t seed = 0;
  std::string id_prefix = "s";
};

/// Positive rate of class c: spread evenly over [0.15, 0.45] so classes are
/// imbalanced and distinct.
inline double class_prior(std::size_t c, std::size_t num_classes) {
  if (num_classes == 1) return 0.4;
  return 0.15 + 0.30 * double(c) / double(num_classes - 1);
}

namespace detail {

inline std::string make_id(const std::string& prefix, std::size_t i, std::size_t n) {
  const std::size_t width = std::max<std::size_t>(6, std::to_string(n).size());
  const std::string digits = std::to_string(i);
  return prefix + std::string(width - std::min(width, digits.size()), '0') + digits;
}

inline Matrix<double> gaussian(Rng& rng, std::size_t rows, std::size_t cols, double scale) {
  Matrix<double> m(rows, cols);
  for (auto& v : m.values()) v = scale * rng.normal();
  return m;
}

inline Matrix<double> uniform(Rng& rng, std::size_t rows, std::size_t cols) {
  Matrix<double> m(rows, cols);
  for (auto& v : m.values()) v = rng.uniform(-1.0, 1.0);
  return m;
}

/// Per column: the (1 − prior) quantile and the standard deviation.
inline std::vector<std::pair<double, double>> column_thresholds(const Matrix<double>& scores) {
  const std::size_t n = scores.rows(), c = scores.cols();
  std::vector<std::pair<double, double>> out;
  for (std::size_t j = 0; j < c; ++j) {
    std::vector<double> col(n);
    double sum = 0.0, sq = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      col[i] = scores(i, j);
      sum += col[i];
      sq += col[i] * col[i];
    }
    const auto k = std::min(n - 1, static_cast<std::size_t>(std::floor((1.0 - class_prior(j, c)) * double(n))));
    std::nth_element(col.begin(), col.begin() + static_cast<std::ptrdiff_t>(k), col.end());
    const double mean = sum / double(n);
    out.emplace_back(col[k], std::sqrt(std::max(0.0, sq / double(n) - mean * mean)));
  }
  return out;
}

inline std::vector<std::vector<std::uint8_t>> threshold_labels(const Matrix<double>& scores,
                                                              const std::vector<std::pair<double, double>>& t) {
  std::vector<std::vector<std::uint8_t>> out(scores.rows(), std::vector<std::uint8_t>(scores.cols(), 0));
  for (std::size_t i = 0; i < scores.rows(); ++i)
    for (std::size_t j = 0; j < scores.cols(); ++j) out[i][j] = scores(i, j) >= t[j].first ? 1 : 0;
  return out;
}

/// Draws U[-1,1]^D rows until `n` lie outside every class's margin band.
inline Matrix<double> sample_with_margin(Rng& rng, std::size_t n, const Matrix<double>& w, double margin,
                                         const std::vector<std::pair<double, double>>& t) {
  Matrix<double> out(n, w.rows());
  std::size_t filled = 0;
  while (filled < n) {
    const auto row = uniform(rng, 1, w.rows());
    const auto s = matmul(row, w);
    bool clear = true;
    for (std::size_t j = 0; j < w.cols(); ++j) clear = clear && std::abs(s(0, j) - t[j].first) >= margin * t[j].second;
    if (!clear) continue;
    std::copy(row.values().begin(), row.values().end(), out.row(filled).begin());
    ++filled;
  }
  return out;
}

}  // namespace detail

/// Class names "class0", "class1", ...
inline std::vector<std::string> class_names(std::size_t num_classes) {
  std::vector<std::string> out;
  for (std::size_t c = 0; c < num_classes; ++c) out.push_back("class" + std::to_string(c));
  return out;
}

inline data::FeatureStore generate(const Spec& spec) {
  if (spec.n == 0 || spec.dim == 0) throw ConfigError("synthetic: n and dim must be positive");
  if (spec.kind == Kind::shared_factor && spec.factors == 0) throw ConfigError("synthetic: factors must be positive");
  // Structure (maps, class directions) and samples draw from separate streams
  // so that n does not change the structure.
  Rng structure(derive_seed(spec.seed, 0));
  Rng samples(derive_seed(spec.seed, 1));
  const std::size_t d = spec.dim, c = spec.num_classes;

  Matrix<double> image, text, scores;
  std::vector<std::pair<double, double>> thresholds;
  switch (spec.kind) {
    case Kind::cross_linear:
    case Kind::independent:
    case Kind::separable: {
      if (spec.kind == Kind::separable && c == 0) throw ConfigError("synthetic: separable data needs classes");
      const auto m = detail::gaussian(structure, d, d, 1.0 / std::sqrt(double(d)));
      if (c > 0) {
        const auto w = detail::gaussian(structure, d, c, 1.0);
        // Thresholds come from a reference sample so they do not depend on n.
        thresholds = detail::column_thresholds(matmul(detail::uniform(structure, 4096, d), w));
        image = detail::sample_with_margin(samples, spec.n, w, spec.margin, thresholds);
        scores = matmul(image, w);
      } else {
        image = detail::uniform(samples, spec.n, d);
      }
      text = spec.kind == Kind::cross_linear ? matmul(image, m) : detail::uniform(samples, spec.n, d);
      break;
    }
    case Kind::shared_factor: {
      const std::size_t k = spec.factors;
      const auto a = detail::gaussian(structure, k, d, 1.0 / std::sqrt(double(k)));
      const auto b = detail::gaussian(structure, k, d, 1.0 / std::sqrt(double(k)));
      const auto w = detail::gaussian(structure, k, std::max<std::size_t>(c, 1), 1.0);
      const auto s = detail::gaussian(samples, spec.n, k, 1.0);
      image = add(matmul(s, a), detail::gaussian(samples, spec.n, d, spec.noise));
      text = add(matmul(s, b), detail::gaussian(samples, spec.n, d, spec.noise));
      if (c > 0) scores = matmul(s, w);
      break;
    }
  }

  std::vector<std::vector<std::uint8_t>> labels;
  if (c > 0) {
    if (thresholds.empty()) thresholds = detail::column_thresholds(scores);
    labels = detail::threshold_labels(scores, thresholds);
  }
  std::vector<data::FeatureRecord> records(spec.n);
  for (std::size_t i = 0; i < spec.n; ++i) {
    auto& r = records[i];
    r.id = detail::make_id(spec.id_prefix, i, spec.n);
    r.f_image.assign(image.row(i).begin(), image.row(i).end());
    r.f_text.assign(text.row(i).begin(), text.row(i).end());
    if (c > 0) r.labels = labels[i];
  }
  return data::FeatureStore(std::move(records), c > 0 ? class_names(c) : std::vector<std::string>{});
}

}  // namespace semimemes::synthetic
