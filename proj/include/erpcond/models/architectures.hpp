// Copyright (c) 2026 erpcond authors
// SPDX-License-Identifier: Apache-2.0
//
// The three lightweight feature extractors plus the single-dense classifier
// head. Parameter budgets are acceptance gates enforced at build time; the
// concrete recipes are fixed here so counts are reproducible.

#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "erpcond/conditioning/embedding.hpp"
#include "erpcond/core/graph.hpp"

namespace erpcond {

enum class Arch { eegnet, p300mcnn, phinet };

inline const char* arch_name(Arch a) {
  switch (a) {
    case Arch::eegnet: return "eegnet";
    case Arch::p300mcnn: return "p300mcnn";
    case Arch::phinet: return "phinet";
  }
  return "?";
}

inline Arch arch_from_name(const std::string& s) {
  for (Arch a : {Arch::eegnet, Arch::p300mcnn, Arch::phinet})
    if (s == arch_name(a)) return a;
  throw ConfigError("unknown architecture '" + s + "' (expected eegnet|p300mcnn|phinet)");
}

/// Budget center per architecture; the accepted band is +-25%.
inline int arch_budget(Arch a) {
  switch (a) {
    case Arch::eegnet: return 4500;
    case Arch::p300mcnn: return 9500;
    case Arch::phinet: return 3500;
  }
  return 0;
}

/// Canonical window per architecture (seconds).
inline double arch_default_window(Arch a) {
  switch (a) {
    case Arch::eegnet: return 0.5;
    case Arch::p300mcnn: return 0.6;
    case Arch::phinet: return 0.35;
  }
  return 0.0;
}

struct ArchitectureConfig {
  Arch arch = Arch::eegnet;
  int n_channels = 8;
  double window_s = 0.5;
  double sfreq = 125.0;
  int kernel_length = 0;  // 0 -> default: half the window's sample count
  double dropout_rate = 0.25;
  int feature_dim = 0;  // d, filled in by build()

  int window_samples() const { return static_cast<int>(std::lround(window_s * sfreq)); }

  void validate() const {
    if (n_channels <= 0) throw ConfigError("architecture: channel count must be positive");
    if (!(sfreq > 0)) throw ConfigError("architecture: sfreq must be positive");
    bool ok = false;
    for (double w : {0.35, 0.5, 0.6}) ok = ok || std::abs(window_s - w) < 1e-9;
    if (!ok)
      throw ConfigError("architecture: window must be one of 0.35 / 0.5 / 0.6 s, got " +
                        std::to_string(window_s));
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0))
      throw ConfigError("architecture: dropout rate must lie in [0, 1)");
    if (kernel_length < 0 || kernel_length > window_samples())
      throw ConfigError("architecture: kernel length must lie in [1, window samples]");
  }
};

namespace detail {

inline std::vector<LayerSpec> eegnet_specs(const ArchitectureConfig& cfg, int kl) {
  const double dr = cfg.dropout_rate;
  return {
      conv2d_spec("conv_t", 1, 8, 1, kl, /*same_w=*/true, /*bias=*/false),
      batch_norm_spec("bn1", 8),
      depthwise_spec("dw_spat", 8, 2, cfg.n_channels, 1, false),
      batch_norm_spec("bn2", 16),
      elu_spec("act1"),
      avg_pool_spec("pool1", 1, 4),
      dropout_spec("drop1", dr),
      depthwise_spec("sep_dw", 16, 1, 1, 16, true),
      conv2d_spec("sep_pw", 16, 160, 1, 1, false, false),
      batch_norm_spec("bn3", 160),
      elu_spec("act2"),
      avg_pool_spec("pool2", 1, 5),
      dropout_spec("drop2", dr),
      flatten_spec("flat"),
  };
}

inline std::vector<LayerSpec> p300mcnn_specs(const ArchitectureConfig& cfg, int kl) {
  const double dr = cfg.dropout_rate;
  return {
      conv2d_spec("conv_t1", 1, 16, 1, kl, true, false),
      batch_norm_spec("bn1", 16),
      elu_spec("act1"),
      avg_pool_spec("pool1", 1, 2),
      conv2d_spec("conv_t2", 16, 32, 1, 17, true, false),
      batch_norm_spec("bn2", 32),
      elu_spec("act2"),
      depthwise_spec("dw_spat", 32, 1, cfg.n_channels, 1, false),
      batch_norm_spec("bn3", 32),
      elu_spec("act3"),
      avg_pool_spec("pool2", 1, 4),
      dropout_spec("drop1", dr),
      flatten_spec("flat"),
  };
}

inline std::vector<LayerSpec> phinet_specs(const ArchitectureConfig& cfg, int kl) {
  const double dr = cfg.dropout_rate;
  return {
      conv2d_spec("conv_t", 1, 8, 1, kl, true, false),
      batch_norm_spec("bn1", 8),
      elu_spec("act1"),
      avg_pool_spec("pool0", 1, 2),
      depthwise_spec("dw_spat", 8, 2, cfg.n_channels, 1, false),
      batch_norm_spec("bn2", 16),
      elu_spec("act2"),
      depthwise_spec("sep1_dw", 16, 1, 1, 9, true),
      conv2d_spec("sep1_pw", 16, 32, 1, 1, false, false),
      batch_norm_spec("bn3", 32),
      elu_spec("act3"),
      avg_pool_spec("pool1", 1, 2),
      squeeze_excite_spec("se", 32, 4),
      depthwise_spec("sep2_dw", 32, 1, 1, 9, true),
      conv2d_spec("sep2_pw", 32, 32, 1, 1, false, false),
      batch_norm_spec("bn4", 32),
      elu_spec("act4"),
      avg_pool_spec("pool2", 1, 2),
      dropout_spec("drop1", dr),
      flatten_spec("flat"),
  };
}

}  // namespace detail

struct Model {
  ArchitectureConfig cfg;
  Graph<float> extractor;  // Psi: (n, 1, channels, window) -> (n, d)
  Graph<float> head;       // Theta: (n, d) -> (n, 1) logit
  std::optional<EmbeddingTable> conditioning;
  std::uint64_t init_seed = 0;

  std::size_t param_count() const {
    std::size_t n = extractor.param_count() + head.param_count();
    if (conditioning) n += conditioning->param_count();
    return n;
  }

  /// Backbone count only (extractor + head), which is what the budget bands
  /// constrain; conditioning tables scale with cohort size.
  std::size_t backbone_param_count() const {
    return extractor.param_count() + head.param_count();
  }
};

/// Builds extractor and head, checks the parameter budget, and records the
/// feature dimension in the returned config.
inline Model build(ArchitectureConfig cfg, std::uint64_t seed) {
  cfg.validate();
  const int win = cfg.window_samples();
  const int kl = cfg.kernel_length > 0 ? cfg.kernel_length : win / 2;
  if (kl < 1 || kl > win)
    throw ConfigError("architecture: kernel length " + std::to_string(kl) +
                      " outside [1, " + std::to_string(win) + "]");

  Model m;
  m.cfg = cfg;
  m.cfg.kernel_length = kl;
  m.init_seed = seed;
  std::vector<LayerSpec> specs;
  switch (cfg.arch) {
    case Arch::eegnet: specs = detail::eegnet_specs(cfg, kl); break;
    case Arch::p300mcnn: specs = detail::p300mcnn_specs(cfg, kl); break;
    case Arch::phinet: specs = detail::phinet_specs(cfg, kl); break;
  }
  m.extractor = Graph<float>(specs);
  const auto out = m.extractor.infer_output_shape({1, 1, cfg.n_channels, win});
  if (out.size() != 2) throw ConfigError("architecture: extractor must emit (n, d) features");
  m.cfg.feature_dim = out[1];
  m.head = Graph<float>({dense_spec("head", m.cfg.feature_dim, 1)});
  m.extractor.init_params(hash_combine(seed, 0xE877));
  m.head.init_params(hash_combine(seed, 0x4EAD));

  const auto count = m.backbone_param_count();
  const int budget = arch_budget(cfg.arch);
  const auto lo = static_cast<std::size_t>(budget * 0.75);
  const auto hi = static_cast<std::size_t>(budget * 1.25);
  if (count < lo || count > hi)
    throw ConfigError(std::string(arch_name(cfg.arch)) + ": parameter count " +
                      std::to_string(count) + " outside budget band [" + std::to_string(lo) +
                      ", " + std::to_string(hi) + "]");
  return m;
}

/// Eval-mode features for a batch shaped (n, channels, window samples).
inline TensorF extract_features(const Model& m, const TensorF& batch) {
  if (batch.rank() != 3 || batch.dim(1) != m.cfg.n_channels ||
      batch.dim(2) != m.cfg.window_samples())
    throw ConfigError("extract_features: expected (n, " + std::to_string(m.cfg.n_channels) +
                      ", " + std::to_string(m.cfg.window_samples()) + "), got " +
                      batch.shape_str());
  TensorF x({batch.dim(0), 1, batch.dim(1), batch.dim(2)}, batch.data);
  TensorF h = m.extractor.apply(std::move(x), {});
  if (!h.all_finite()) throw NumericError("extract_features: non-finite features");
  return h;
}

/// Head probabilities, strictly inside (0, 1).
inline std::vector<double> classify(const Model& m, const TensorF& features) {
  if (features.rank() != 2 || features.dim(1) != m.cfg.feature_dim)
    throw ConfigError("classify: expected (n, " + std::to_string(m.cfg.feature_dim) +
                      ") features, got " + features.shape_str());
  TensorF logits = m.head.apply(features, {});
  std::vector<double> out(static_cast<std::size_t>(logits.dim(0)));
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double p = 1.0 / (1.0 + std::exp(-static_cast<double>(logits.data[i])));
    out[i] = std::min(1.0 - 1e-7, std::max(1e-7, p));
  }
  return out;
}

/// Subject-conditioned probabilities. Requires a conditioning table; unknown
/// subjects surface as DataError from the table lookup.
inline std::vector<double> classify(const Model& m, const TensorF& features,
                                    const std::string& subject_id) {
  if (!m.conditioning)
    throw ConfigError("classify: model was built without subject conditioning");
  if (features.rank() != 2 || features.dim(1) != m.cfg.feature_dim)
    throw ConfigError("classify: expected (n, " + std::to_string(m.cfg.feature_dim) +
                      ") features, got " + features.shape_str());
  const TensorF& row = m.conditioning->lookup(subject_id);
  const int n = features.dim(0);
  const int d = m.cfg.feature_dim;
  TensorF cond({n, d});
  for (int i = 0; i < n; ++i)
    condition_forward_item(m.conditioning->mode(), features.ptr() + std::size_t(i) * d,
                           row.ptr(), cond.ptr() + std::size_t(i) * d, d);
  return classify(m, cond);
}

}  // namespace erpcond
