// Copyright (c) 2026 erpcond authors
// SPDX-License-Identifier: Apache-2.0
//
// Imbalance-aware objectives: weighted binary cross-entropy, focal loss, and
// non-target undersampling. Losses accept probabilities (clamped away from
// the boundaries) and return the batch-mean loss together with the gradient
// with respect to the logits, computed in logit space for stability.

#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "erpcond/core/errors.hpp"
#include "erpcond/core/rng.hpp"
#include "erpcond/dsp/preprocess.hpp"

namespace erpcond {

enum class LossKind { weighted_bce, weighted_bce_undersample, focal };

inline const char* loss_kind_name(LossKind k) {
  switch (k) {
    case LossKind::weighted_bce: return "weighted_bce";
    case LossKind::weighted_bce_undersample: return "weighted_bce_undersample";
    case LossKind::focal: return "focal";
  }
  return "?";
}

inline LossKind loss_kind_from_name(const std::string& s) {
  for (LossKind k : {LossKind::weighted_bce, LossKind::weighted_bce_undersample, LossKind::focal})
    if (s == loss_kind_name(k)) return k;
  throw ConfigError("unknown loss '" + s +
                    "' (expected weighted_bce|weighted_bce_undersample|focal)");
}

struct LossConfig {
  LossKind kind = LossKind::weighted_bce;
  double pos_weight = 9.0;        // default: the non-target:target ratio
  double focal_gamma = 2.0;
  double focal_alpha = 0.25;
  double undersample_ratio = 1.0; // NT:T after sampling

  void validate() const {
    if (!(pos_weight > 0)) throw ConfigError("loss: pos_weight must be positive");
    if (!(focal_gamma >= 0)) throw ConfigError("loss: focal_gamma must be non-negative");
    if (!(focal_alpha > 0 && focal_alpha < 1))
      throw ConfigError("loss: focal_alpha must lie in (0,1)");
    if (!(undersample_ratio >= 1)) throw ConfigError("loss: undersample_ratio must be >= 1");
  }
};

struct LossResult {
  double loss = 0.0;
  std::vector<double> dlogits;  // dL/dz per item, batch-mean scaling included
};

inline double clamp_prob(double p) {
  return std::min(1.0 - 1e-7, std::max(1e-7, p));
}

/// Mean of -[w*y*log p + (1-y)*log(1-p)]; gradient w.r.t. the logit z of
/// each item is (w*y*(p-1) + (1-y)*p)/n.
inline LossResult weighted_bce(const std::vector<double>& probs, const std::vector<int>& labels,
                               double pos_weight) {
  if (probs.size() != labels.size())
    throw ConfigError("weighted_bce: " + std::to_string(probs.size()) + " probabilities vs " +
                      std::to_string(labels.size()) + " labels");
  if (probs.empty()) throw ConfigError("weighted_bce: empty batch");
  LossResult r;
  r.dlogits.resize(probs.size());
  const double n = static_cast<double>(probs.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const double p = clamp_prob(probs[i]);
    if (labels[i] == 1) {
      acc -= pos_weight * std::log(p);
      r.dlogits[i] = pos_weight * (p - 1.0) / n;
    } else {
      acc -= std::log(1.0 - p);
      r.dlogits[i] = p / n;
    }
  }
  r.loss = acc / n;
  return r;
}

/// Focal loss, alpha-balanced: mean of -alpha_t*(1-p_t)^gamma*log(p_t) with
/// alpha_t = alpha for targets and 1-alpha otherwise.
inline LossResult focal_loss(const std::vector<double>& probs, const std::vector<int>& labels,
                             double gamma, double alpha) {
  if (probs.size() != labels.size())
    throw ConfigError("focal_loss: " + std::to_string(probs.size()) + " probabilities vs " +
                      std::to_string(labels.size()) + " labels");
  if (probs.empty()) throw ConfigError("focal_loss: empty batch");
  LossResult r;
  r.dlogits.resize(probs.size());
  const double n = static_cast<double>(probs.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const double p = clamp_prob(probs[i]);
    if (labels[i] == 1) {
      const double mod = std::pow(1.0 - p, gamma);
      acc -= alpha * mod * std::log(p);
      r.dlogits[i] = alpha * mod * (gamma * p * std::log(p) - (1.0 - p)) / n;
    } else {
      const double mod = std::pow(p, gamma);
      acc -= (1.0 - alpha) * mod * std::log(1.0 - p);
      r.dlogits[i] = (1.0 - alpha) * mod * (p - gamma * (1.0 - p) * std::log(1.0 - p)) / n;
    }
  }
  r.loss = acc / n;
  return r;
}

/// Dispatches on cfg.kind; the undersample variant uses the same objective as
/// weighted_bce (the sampling happens on the data side).
inline LossResult compute_loss(const LossConfig& cfg, const std::vector<double>& probs,
                               const std::vector<int>& labels) {
  if (cfg.kind == LossKind::focal)
    return focal_loss(probs, labels, cfg.focal_gamma, cfg.focal_alpha);
  return weighted_bce(probs, labels, cfg.pos_weight);
}

/// Keeps every target epoch and a seeded without-replacement subsample of the
/// non-targets, at most ratio*targets of them, preserving temporal order.
/// When fewer non-targets are available than requested, all are kept and
/// `warning` (if given) is filled in.
inline EpochSet undersample(const EpochSet& es, double ratio, std::uint64_t seed,
                            std::string* warning = nullptr) {
  if (!(ratio >= 1.0)) throw ConfigError("undersample: ratio must be >= 1, got " + std::to_string(ratio));
  std::vector<std::size_t> targets, nontargets;
  for (std::size_t i = 0; i < es.labels.size(); ++i)
    (es.labels[i] == 1 ? targets : nontargets).push_back(i);
  if (targets.empty()) throw DataError("undersample: no target epochs present");

  const auto want = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(targets.size())));
  std::vector<std::size_t> chosen = targets;
  if (nontargets.size() <= want) {
    if (nontargets.size() < want && warning)
      *warning = "undersample: only " + std::to_string(nontargets.size()) +
                 " non-targets available, " + std::to_string(want) + " requested; keeping all";
    chosen.insert(chosen.end(), nontargets.begin(), nontargets.end());
  } else {
    Rng rng(seed);
    for (std::size_t k : rng.sample_indices(nontargets.size(), want))
      chosen.push_back(nontargets[k]);
  }
  std::sort(chosen.begin(), chosen.end());
  std::vector<int> idx(chosen.begin(), chosen.end());
  return select_epochs(es, idx);
}

}  // namespace erpcond
