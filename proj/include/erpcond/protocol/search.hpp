// Copyright (c) 2026 erpcond authors
// SPDX-License-Identifier: Apache-2.0
//
// Hyper-parameter search over the protocol's tunable knobs, and seed-repeat
// aggregation. The sampler sits behind an interface so a smarter strategy can
// replace the seeded random default without touching the search loop.

#pragma once

#include <cmath>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "erpcond/models/architectures.hpp"
#include "erpcond/protocol/training.hpp"

namespace erpcond {

/// One sampled configuration. The kernel length is expressed as a fraction of
/// the model window so it stays valid whichever window is drawn.
struct HyperParams {
  double kernel_fraction = 0.5;
  double window_s = 0.5;
  ScalerKind scaler = ScalerKind::standard;
  LossKind loss = LossKind::weighted_bce;
  double lr_initial = 1e-3;
  double dropout = 0.25;
};

inline nlohmann::json hyper_params_to_json(const HyperParams& p) {
  return {{"kernel_fraction", p.kernel_fraction},
          {"window_s", p.window_s},
          {"scaler", p.scaler == ScalerKind::standard ? "standard" : "robust"},
          {"loss", loss_kind_name(p.loss)},
          {"lr_initial", p.lr_initial},
          {"dropout", p.dropout}};
}

inline HyperParams hyper_params_from_json(const nlohmann::json& j) {
  HyperParams p;
  p.kernel_fraction = j.at("kernel_fraction").get<double>();
  p.window_s = j.at("window_s").get<double>();
  p.scaler = j.at("scaler").get<std::string>() == "standard" ? ScalerKind::standard
                                                             : ScalerKind::robust;
  p.loss = loss_kind_from_name(j.at("loss").get<std::string>());
  p.lr_initial = j.at("lr_initial").get<double>();
  p.dropout = j.at("dropout").get<double>();
  return p;
}

/// The search domain: categorical choices are listed, continuous knobs are
/// ranges (learning rate on a log10 scale).
struct SearchSpace {
  std::vector<double> windows = {0.35, 0.5, 0.6};
  std::vector<ScalerKind> scalers = {ScalerKind::standard, ScalerKind::robust};
  std::vector<LossKind> losses = {LossKind::weighted_bce, LossKind::weighted_bce_undersample,
                                  LossKind::focal};
  double kernel_fraction_lo = 0.25;
  double kernel_fraction_hi = 0.75;
  double lr_log10_lo = -4.0;
  double lr_log10_hi = -2.0;
  double dropout_lo = 0.0;
  double dropout_hi = 0.5;

  void validate() const {
    if (windows.empty() || scalers.empty() || losses.empty())
      throw ConfigError("search space: categorical choice lists must be non-empty");
    if (!(kernel_fraction_lo > 0 && kernel_fraction_hi <= 1 &&
          kernel_fraction_lo <= kernel_fraction_hi))
      throw ConfigError("search space: kernel fraction range must satisfy 0 < lo <= hi <= 1");
    if (!(lr_log10_lo <= lr_log10_hi))
      throw ConfigError("search space: learning-rate range is inverted");
    if (!(dropout_lo >= 0 && dropout_hi < 1 && dropout_lo <= dropout_hi))
      throw ConfigError("search space: dropout range must satisfy 0 <= lo <= hi < 1");
  }
};

/// Strategy interface: yields the configuration for each trial in turn.
class Sampler {
 public:
  virtual ~Sampler() = default;
  virtual HyperParams next(const SearchSpace& space) = 0;
};

/// Seeded random search: categorical knobs drawn uniformly, learning rate
/// log-uniform, the rest uniform.
class RandomSampler : public Sampler {
 public:
  explicit RandomSampler(std::uint64_t seed) : rng_(seed) {}

  HyperParams next(const SearchSpace& space) override {
    HyperParams p;
    p.kernel_fraction =
        space.kernel_fraction_lo +
        rng_.uniform() * (space.kernel_fraction_hi - space.kernel_fraction_lo);
    p.window_s = space.windows[rng_.bounded(space.windows.size())];
    p.scaler = space.scalers[rng_.bounded(space.scalers.size())];
    p.loss = space.losses[rng_.bounded(space.losses.size())];
    p.lr_initial =
        std::pow(10.0, space.lr_log10_lo +
                           rng_.uniform() * (space.lr_log10_hi - space.lr_log10_lo));
    p.dropout = space.dropout_lo + rng_.uniform() * (space.dropout_hi - space.dropout_lo);
    return p;
  }

 private:
  Rng rng_;
};

/// Applies a sampled configuration to the architecture/training configs the
/// trial will actually run with.
inline void apply_hyper_params(const HyperParams& p, ArchitectureConfig& arch, TrainConfig& train) {
  arch.window_s = p.window_s;
  arch.kernel_length = std::max(
      1, static_cast<int>(std::lround(p.kernel_fraction *
                                      std::lround(p.window_s * arch.sfreq))));
  arch.dropout_rate = p.dropout;
  train.scaler = p.scaler;
  train.loss.kind = p.loss;
  train.lr_initial = p.lr_initial;
}

struct Trial {
  int index = 0;
  HyperParams params;
  double objective = 0.0;  // validation MCC

  nlohmann::json to_json() const {
    return {{"index", index}, {"params", hyper_params_to_json(params)}, {"objective", objective}};
  }
};

struct SearchResult {
  std::vector<Trial> trials;
  int best_index = -1;

  const Trial& best() const {
    if (best_index < 0 || best_index >= static_cast<int>(trials.size()))
      throw ConfigError("search result holds no completed trial");
    return trials[static_cast<std::size_t>(best_index)];
  }

  nlohmann::json log_to_json() const {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& t : trials) arr.push_back(t.to_json());
    return {{"trials", arr}, {"best_index", best_index}};
  }
};

/// Runs `budget` trials, maximizing the objective (validation MCC by
/// contract). Deterministic for a given seed; a custom sampler overrides the
/// seeded random default.
inline SearchResult hyper_search(const SearchSpace& space, int budget,
                                 const std::function<double(const HyperParams&)>& objective,
                                 std::uint64_t seed, Sampler* sampler = nullptr) {
  space.validate();
  if (budget < 1)
    throw ConfigError("hyper_search: budget must be at least 1, got " + std::to_string(budget));
  std::unique_ptr<RandomSampler> fallback;
  if (!sampler) {
    fallback = std::make_unique<RandomSampler>(seed);
    sampler = fallback.get();
  }
  SearchResult result;
  for (int t = 0; t < budget; ++t) {
    Trial trial;
    trial.index = t;
    trial.params = sampler->next(space);
    trial.objective = objective(trial.params);
    if (result.best_index < 0 ||
        trial.objective > result.trials[static_cast<std::size_t>(result.best_index)].objective)
      result.best_index = t;
    result.trials.push_back(std::move(trial));
  }
  return result;
}

struct SeedStats {
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation (n-1 denominator)
};

/// Reruns an experiment once per seed and aggregates each reported metric.
/// The experiment must report the same metric names for every seed.
inline std::map<std::string, SeedStats> repeat_seeds(
    const std::function<std::map<std::string, double>(std::uint64_t)>& experiment,
    const std::vector<std::uint64_t>& seeds) {
  if (seeds.size() < 2)
    throw ConfigError("repeat_seeds: need at least 2 seeds, got " + std::to_string(seeds.size()));
  std::map<std::string, std::vector<double>> values;
  for (std::size_t run = 0; run < seeds.size(); ++run) {
    const auto metrics = experiment(seeds[run]);
    if (run == 0) {
      for (const auto& [k, v] : metrics) values[k].push_back(v);
    } else {
      if (metrics.size() != values.size())
        throw ConfigError("repeat_seeds: metric names differ across seeds");
      for (const auto& [k, v] : metrics) {
        auto it = values.find(k);
        if (it == values.end())
          throw ConfigError("repeat_seeds: metric '" + k + "' appeared only under some seeds");
        it->second.push_back(v);
      }
    }
  }
  std::map<std::string, SeedStats> out;
  for (const auto& [k, vs] : values) {
    SeedStats s;
    for (double v : vs) s.mean += v;
    s.mean /= static_cast<double>(vs.size());
    double ss = 0.0;
    for (double v : vs) ss += (v - s.mean) * (v - s.mean);
    s.stddev = std::sqrt(ss / static_cast<double>(vs.size() - 1));
    out[k] = s;
  }
  return out;
}

}  // namespace erpcond
