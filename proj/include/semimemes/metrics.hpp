#pragma once

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "semimemes/errors.hpp"
#include "semimemes/tensor.hpp"

namespace semimemes::metrics {

struct ClassScores {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t support = 0;
  std::size_t true_positives = 0;
  std::size_t false_positives = 0;
  std::size_t false_negatives = 0;
};

struct EvalReport {
  std::string partition;
  std::vector<ClassScores> per_class;
  double weighted_f1 = 0.0;
  std::optional<double> auroc;
  std::size_t samples = 0;
  double threshold = 0.5;
};

/// Support-weighted F1 over classes. Precision, recall, and F1 use the
/// 0/0 := 0 convention.
template <typename T>
EvalReport weighted_f1(const Matrix<T>& decisions, const Matrix<T>& targets) {
  if (decisions.rows() != targets.rows() || decisions.cols() != targets.cols()) {
    throw ShapeError("weighted_f1: shape mismatch " + decisions.shape() + " vs " + targets.shape());
  }
  if (targets.rows() == 0 || targets.cols() == 0) {
    throw DataError("weighted_f1: need at least one sample and one class");
  }
  EvalReport report;
  report.samples = targets.rows();
  report.per_class.resize(targets.cols());
  for (std::size_t r = 0; r < targets.rows(); ++r) {
    for (std::size_t c = 0; c < targets.cols(); ++c) {
      const T d = decisions(r, c), t = targets(r, c);
      if ((d != T(0) && d != T(1)) || (t != T(0) && t != T(1))) {
        throw DataError("weighted_f1: entries must be 0 or 1");
      }
      auto& s = report.per_class[c];
      if (t == T(1)) {
        ++s.support;
        if (d == T(1)) ++s.true_positives; else ++s.false_negatives;
      } else if (d == T(1)) {
        ++s.false_positives;
      }
    }
  }
  double weighted = 0.0;
  std::size_t total_support = 0;
  for (auto& s : report.per_class) {
    const double tp = double(s.true_positives);
    const std::size_t predicted = s.true_positives + s.false_positives;
    s.precision = predicted ? tp / double(predicted) : 0.0;
    s.recall = s.support ? tp / double(s.support) : 0.0;
    const double denom = s.precision + s.recall;
    s.f1 = denom > 0.0 ? 2.0 * s.precision * s.recall / denom : 0.0;
    weighted += double(s.support) * s.f1;
    total_support += s.support;
  }
  report.weighted_f1 = total_support ? weighted / double(total_support) : 0.0;
  return report;
}

namespace detail {

inline void check_auroc_inputs(std::span<const double> scores, std::span<const int> targets) {
  if (scores.size() != targets.size()) throw ShapeError("auroc: scores and targets differ in length");
  std::size_t pos = 0, neg = 0;
  for (int t : targets) {
    if (t == 1) ++pos;
    else if (t == 0) ++neg;
    else throw DataError("auroc: targets must be 0 or 1");
  }
  if (pos == 0 || neg == 0) {
    throw DataError("auroc: targets contain a single class; AUROC needs at least one positive and one negative");
  }
}

}  // namespace detail

/// Mann-Whitney AUROC: P(score of random positive > score of random
/// negative), ties counted as 1/2. Uses mid-ranks.
inline double auroc(std::span<const double> scores, std::span<const int> targets) {
  detail::check_auroc_inputs(scores, targets);
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum = 0.0;
  std::size_t pos = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double mid_rank = 0.5 * double(i + 1 + j);  // average of ranks i+1..j
    for (std::size_t k = i; k < j; ++k) {
      if (targets[order[k]] == 1) {
        rank_sum += mid_rank;
        ++pos;
      }
    }
    i = j;
  }
  const double np = double(pos), nn = double(n - pos);
  return (rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
}

/// AUROC by trapezoidal integration of the ROC curve, thresholds at every
/// distinct score.
inline double auroc_trapezoid(std::span<const double> scores, std::span<const int> targets) {
  detail::check_auroc_inputs(scores, targets);
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  double total_pos = 0.0, total_neg = 0.0;
  for (int t : targets) (t == 1 ? total_pos : total_neg) += 1.0;
  double tp = 0.0, fp = 0.0, area = 0.0;
  for (std::size_t i = 0; i < n;) {
    const double prev_tp = tp, prev_fp = fp;
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) {
      (targets[order[j]] == 1 ? tp : fp) += 1.0;
      ++j;
    }
    area += (fp - prev_fp) * (tp + prev_tp) / 2.0;
    i = j;
  }
  return area / (total_pos * total_neg);
}

}  // namespace semimemes::metrics
