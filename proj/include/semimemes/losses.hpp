#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "semimemes/errors.hpp"
#include "semimemes/tensor.hpp"

namespace semimemes::losses {

/// Scalar loss and its gradient with respect to the prediction/logit matrix.
template <typename T>
struct LossResult {
  double value = 0.0;
  Matrix<T> grad;
};

/// log(1 + e^x) without overflow.
inline double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

/// 1 / (1 + e^-x), evaluated on the side that cannot overflow.
inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

namespace detail {

/// Neumaier-compensated running sum; keeps loss totals stable enough for
/// finite-difference checks on large outputs.
class CompensatedSum {
 public:
  void add(double x) {
    const double t = sum_ + x;
    comp_ += std::abs(sum_) >= std::abs(x) ? (sum_ - t) + x : (x - t) + sum_;
    sum_ = t;
  }
  double value() const { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

template <typename T>
void require_binary_targets(const Matrix<T>& targets, const char* what) {
  for (T v : targets.values()) {
    if (v != T(0) && v != T(1)) {
      throw DataError(std::string(what) + ": targets must be 0 or 1, got " + std::to_string(double(v)));
    }
  }
}

inline void require_finite_scalar(double v, const char* what) {
  if (!std::isfinite(v)) throw NumericalError(std::string(what) + ": non-finite loss");
}

}  // namespace detail

/// Mean squared error over all elements.
template <typename T>
LossResult<T> mse(const Matrix<T>& pred, const Matrix<T>& target) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols()) {
    throw ShapeError("mse: shape mismatch " + pred.shape() + " vs " + target.shape());
  }
  const double count = static_cast<double>(pred.size());
  LossResult<T> out{0.0, Matrix<T>(pred.rows(), pred.cols())};
  auto p = pred.values();
  auto t = target.values();
  auto g = out.grad.values();
  detail::CompensatedSum sum;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double d = double(p[i]) - double(t[i]);
    sum.add(d * d);
    g[i] = static_cast<T>(2.0 * d / count);
  }
  out.value = count > 0 ? sum.value() / count : 0.0;
  detail::require_finite_scalar(out.value, "mse");
  return out;
}

/// Mean binary cross-entropy on logits, stable form
/// max(z,0) - z·y + log(1 + e^-|z|).
template <typename T>
LossResult<T> bce_with_logits(const Matrix<T>& logits, const Matrix<T>& targets) {
  if (logits.rows() != targets.rows() || logits.cols() != targets.cols()) {
    throw ShapeError("bce_with_logits: shape mismatch " + logits.shape() + " vs " + targets.shape());
  }
  detail::require_binary_targets(targets, "bce_with_logits");
  const double count = static_cast<double>(logits.size());
  LossResult<T> out{0.0, Matrix<T>(logits.rows(), logits.cols())};
  auto z = logits.values();
  auto y = targets.values();
  auto g = out.grad.values();
  detail::CompensatedSum sum;
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double zi = z[i], yi = y[i];
    sum.add(std::max(zi, 0.0) - zi * yi + std::log1p(std::exp(-std::abs(zi))));
    g[i] = static_cast<T>((sigmoid(zi) - yi) / count);
  }
  out.value = count > 0 ? sum.value() / count : 0.0;
  detail::require_finite_scalar(out.value, "bce_with_logits");
  return out;
}

enum class RebalanceMode { disabled, smoothed };

/// Per-sample, per-class re-balancing weight r̂.
///
/// smoothed: r = P^C_i / P^I_k with P^C_i = (1/C)(1/n_i) and
/// P^I_k = mean over the sample's positive classes j of 1/n_j, then
/// r̂ = alpha + sigmoid(beta·(r - mu)). Samples with no positive class get 1.
struct RebalanceConfig {
  RebalanceMode mode = RebalanceMode::disabled;
  double alpha = 0.1;
  double beta = 10.0;
  double mu = 0.2;
  /// Positive count n_i per class in the training set.
  std::vector<double> positive_counts;
};

struct DbFocalConfig {
  double gamma = 2.0;
  double lambda = 5.0;
  double kappa = 0.1;
  /// p_i: fraction of training samples positive for class i, strictly inside (0,1).
  std::vector<double> class_priors;
  RebalanceConfig rebalance;

  std::size_t num_classes() const { return class_priors.size(); }

  /// b̂_i = -log(1/p_i - 1).
  double estimated_bias(std::size_t i) const { return -std::log(1.0 / class_priors[i] - 1.0); }

  /// ν_i = κ·b̂_i.
  double class_bias(std::size_t i) const { return kappa * estimated_bias(i); }

  void validate() const {
    if (class_priors.empty()) throw ConfigError("db_focal: at least one class prior required");
    for (std::size_t i = 0; i < class_priors.size(); ++i) {
      const double p = class_priors[i];
      if (!(p > 0.0 && p < 1.0)) {
        throw ConfigError("db_focal: class prior " + std::to_string(i) + " = " + std::to_string(p) +
                          " must lie strictly inside (0,1)");
      }
    }
    if (!(gamma >= 0.0) || !std::isfinite(gamma)) throw ConfigError("db_focal: gamma must be >= 0");
    if (!(lambda > 0.0) || !std::isfinite(lambda)) throw ConfigError("db_focal: lambda must be > 0");
    if (!std::isfinite(kappa)) throw ConfigError("db_focal: kappa must be finite");
    if (rebalance.mode == RebalanceMode::smoothed) {
      if (rebalance.positive_counts.size() != class_priors.size()) {
        throw ConfigError("db_focal: rebalance needs one positive count per class");
      }
      for (double n : rebalance.positive_counts) {
        if (!(n > 0.0)) throw ConfigError("db_focal: rebalance positive counts must be > 0");
      }
    }
  }
};

/// Priors and positive counts from a 0/1 label matrix (one row per training sample).
template <typename T>
DbFocalConfig db_focal_config_from_labels(const Matrix<T>& labels, double gamma = 2.0,
                                          double lambda = 5.0, double kappa = 0.1,
                                          RebalanceMode mode = RebalanceMode::disabled) {
  if (labels.rows() == 0) throw ConfigError("db_focal: no training labels to estimate priors from");
  DbFocalConfig cfg;
  cfg.gamma = gamma;
  cfg.lambda = lambda;
  cfg.kappa = kappa;
  cfg.rebalance.mode = mode;
  const Matrix<T> counts = column_sums(labels);
  for (std::size_t i = 0; i < labels.cols(); ++i) {
    const double n = counts(0, i);
    cfg.rebalance.positive_counts.push_back(n);
    cfg.class_priors.push_back(n / static_cast<double>(labels.rows()));
  }
  cfg.validate();
  return cfg;
}

/// r̂ for every (sample, class) entry of `targets`.
template <typename T>
Matrix<double> rebalance_weights(const Matrix<T>& targets, const DbFocalConfig& cfg) {
  Matrix<double> r(targets.rows(), targets.cols(), 1.0);
  if (cfg.rebalance.mode == RebalanceMode::disabled) return r;
  const auto& rb = cfg.rebalance;
  const double c = static_cast<double>(targets.cols());
  for (std::size_t k = 0; k < targets.rows(); ++k) {
    double inv_sum = 0.0;
    std::size_t positives = 0;
    for (std::size_t j = 0; j < targets.cols(); ++j) {
      if (targets(k, j) == T(1)) {
        inv_sum += 1.0 / rb.positive_counts[j];
        ++positives;
      }
    }
    if (positives == 0) continue;
    const double instance = inv_sum / static_cast<double>(positives);
    for (std::size_t i = 0; i < targets.cols(); ++i) {
      const double per_class = (1.0 / c) * (1.0 / rb.positive_counts[i]);
      r(k, i) = rb.alpha + sigmoid(rb.beta * (per_class / instance - rb.mu));
    }
  }
  return r;
}

/// Distribution-balanced focal loss on logits (batch x C), averaged over the batch.
///
/// Per entry, with u = z - ν_i, p₊ = σ(u), p₋ = σ(λu):
///   ℓ = -(r̂/C)·[(1-p₊)^γ·y·log p₊ + (1/λ)·p₋^γ·(1-y)·log(1-p₋)]
template <typename T>
LossResult<T> db_focal(const Matrix<T>& logits, const Matrix<T>& targets, const DbFocalConfig& cfg) {
  if (logits.rows() != targets.rows() || logits.cols() != targets.cols()) {
    throw ShapeError("db_focal: shape mismatch " + logits.shape() + " vs " + targets.shape());
  }
  if (logits.cols() != cfg.num_classes()) {
    throw ShapeError("db_focal: logits have " + std::to_string(logits.cols()) + " classes, config has " +
                     std::to_string(cfg.num_classes()));
  }
  cfg.validate();
  detail::require_binary_targets(targets, "db_focal");

  const Matrix<double> weights = rebalance_weights(targets, cfg);
  const double c = static_cast<double>(cfg.num_classes());
  const double batch = static_cast<double>(logits.rows());
  const double gamma = cfg.gamma;
  const double lambda = cfg.lambda;

  std::vector<double> nu(cfg.num_classes());
  for (std::size_t i = 0; i < nu.size(); ++i) nu[i] = cfg.class_bias(i);

  LossResult<T> out{0.0, Matrix<T>(logits.rows(), logits.cols())};
  detail::CompensatedSum total;
  for (std::size_t k = 0; k < logits.rows(); ++k) {
    for (std::size_t i = 0; i < logits.cols(); ++i) {
      const double u = double(logits(k, i)) - nu[i];
      const double y = double(targets(k, i));
      const double r = weights(k, i);
      double term = 0.0;
      double dterm = 0.0;
      if (y == 1.0) {
        const double p_pos = sigmoid(u);
        const double q_pos = sigmoid(-u);  // 1 - p₊
        const double log_p = -softplus(-u);
        const double focal = std::pow(q_pos, gamma);
        term = focal * log_p;
        dterm = -gamma * p_pos * focal * log_p + focal * q_pos;
      } else {
        const double p_neg = sigmoid(lambda * u);
        const double q_neg = sigmoid(-lambda * u);  // 1 - p₋
        const double log_q = -softplus(lambda * u);
        const double focal = std::pow(p_neg, gamma);
        term = focal * log_q / lambda;
        dterm = (gamma * lambda * focal * q_neg * log_q - lambda * focal * p_neg) / lambda;
      }
      total.add(-r / c * term);
      out.grad(k, i) = static_cast<T>(-r / c * dterm / batch);
    }
  }
  out.value = logits.rows() > 0 ? total.value() / batch : 0.0;
  detail::require_finite_scalar(out.value, "db_focal");
  require_finite(out.grad, "db_focal gradient");
  return out;
}

}  // namespace semimemes::losses
