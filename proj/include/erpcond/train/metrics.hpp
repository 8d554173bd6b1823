// Copyright (c) 2026 erpcond authors
// SPDX-License-Identifier: Apache-2.0
//
// Two-class evaluation metrics: Matthews correlation (the target metric),
// balanced accuracy and ROC AUC, plus the JSON metrics report emitted per
// stage and fold.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

#include "erpcond/core/errors.hpp"

namespace erpcond {

struct ConfusionCounts {
  long long tp = 0;
  long long fp = 0;
  long long tn = 0;
  long long fn = 0;

  long long total() const { return tp + fp + tn + fn; }
};

/// Thresholds probabilities at 0.5 (>= counts as a positive prediction).
inline ConfusionCounts confusion_at_threshold(const std::vector<double>& probs,
                                              const std::vector<int>& labels,
                                              double threshold = 0.5) {
  if (probs.size() != labels.size())
    throw ConfigError("confusion: " + std::to_string(probs.size()) + " scores vs " +
                      std::to_string(labels.size()) + " labels");
  ConfusionCounts c;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const bool pred = probs[i] >= threshold;
    const bool pos = labels[i] == 1;
    if (pred && pos) ++c.tp;
    else if (pred && !pos) ++c.fp;
    else if (!pred && pos) ++c.fn;
    else ++c.tn;
  }
  return c;
}

/// Matthews correlation coefficient; any zero factor in the denominator
/// yields 0 (the degenerate single-class convention).
inline double mcc(const ConfusionCounts& c) {
  if (c.total() <= 0) throw ConfigError("mcc: empty confusion matrix");
  const long double f1 = static_cast<long double>(c.tp + c.fp);
  const long double f2 = static_cast<long double>(c.tp + c.fn);
  const long double f3 = static_cast<long double>(c.tn + c.fp);
  const long double f4 = static_cast<long double>(c.tn + c.fn);
  if (f1 == 0 || f2 == 0 || f3 == 0 || f4 == 0) return 0.0;
  const long double num = static_cast<long double>(c.tp) * c.tn -
                          static_cast<long double>(c.fp) * c.fn;
  // Extended precision keeps the four-factor product exact for realistic
  // counts, so perfect confusion matrices evaluate to exactly +-1.
  return static_cast<double>(num / std::sqrt(f1 * f2 * f3 * f4));
}

/// (TPR + TNR) / 2; each class must be represented.
inline double balanced_accuracy(const ConfusionCounts& c) {
  if (c.tp + c.fn == 0 || c.tn + c.fp == 0)
    throw DataError("balanced_accuracy: a class has no items");
  const double tpr = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
  const double tnr = static_cast<double>(c.tn) / static_cast<double>(c.tn + c.fp);
  return 0.5 * (tpr + tnr);
}

/// Mann-Whitney formulation via tie-averaged ranks:
/// AUC = P(score+ > score-) + 0.5 * P(score+ = score-).
inline double roc_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size())
    throw ConfigError("roc_auc: " + std::to_string(scores.size()) + " scores vs " +
                      std::to_string(labels.size()) + " labels");
  std::size_t n_pos = 0;
  for (int y : labels) n_pos += (y == 1);
  const std::size_t n_neg = labels.size() - n_pos;
  if (n_pos == 0 || n_neg == 0)
    throw DataError("roc_auc: needs both classes, got " + std::to_string(n_pos) +
                    " positives / " + std::to_string(n_neg) + " negatives");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  std::vector<double> rank(scores.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double mean_rank = 0.5 * (static_cast<double>(i) + static_cast<double>(j - 1)) + 1.0;
    for (std::size_t k = i; k < j; ++k) rank[order[k]] = mean_rank;
    i = j;
  }
  double rank_sum_pos = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i)
    if (labels[i] == 1) rank_sum_pos += rank[i];
  const double u = rank_sum_pos - 0.5 * static_cast<double>(n_pos) * static_cast<double>(n_pos + 1);
  return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

struct MetricsReport {
  double mcc = 0.0;
  double balanced_accuracy = 0.0;
  double roc_auc = 0.0;
  ConfusionCounts confusion;
  int n_epochs_trained = 0;
  std::uint64_t seed = 0;

  nlohmann::json to_json() const {
    return {{"mcc", mcc},
            {"balanced_accuracy", balanced_accuracy},
            {"roc_auc", roc_auc},
            {"confusion",
             {{"tp", confusion.tp}, {"fp", confusion.fp}, {"tn", confusion.tn}, {"fn", confusion.fn}}},
            {"n_epochs_trained", n_epochs_trained},
            {"seed", seed}};
  }

  static MetricsReport from_json(const nlohmann::json& j) {
    MetricsReport r;
    r.mcc = j.at("mcc").get<double>();
    r.balanced_accuracy = j.at("balanced_accuracy").get<double>();
    r.roc_auc = j.at("roc_auc").get<double>();
    r.confusion.tp = j.at("confusion").at("tp").get<long long>();
    r.confusion.fp = j.at("confusion").at("fp").get<long long>();
    r.confusion.tn = j.at("confusion").at("tn").get<long long>();
    r.confusion.fn = j.at("confusion").at("fn").get<long long>();
    r.n_epochs_trained = j.at("n_epochs_trained").get<int>();
    r.seed = j.at("seed").get<std::uint64_t>();
    return r;
  }
};

/// Evaluates scores against labels in one go (threshold 0.5 for the
/// confusion-based metrics).
inline MetricsReport compute_metrics(const std::vector<double>& probs,
                                     const std::vector<int>& labels) {
  MetricsReport r;
  r.confusion = confusion_at_threshold(probs, labels);
  r.mcc = mcc(r.confusion);
  r.balanced_accuracy = balanced_accuracy(r.confusion);
  r.roc_auc = roc_auc(probs, labels);
  return r;
}

}  // namespace erpcond
