// Copyright (c) 2026 erpcond authors
// SPDX-License-Identifier: Apache-2.0
//
// Per-filter target-vs-nontarget contrast in the time-frequency domain: the
// first convolution's activations are averaged within each label class (and
// across electrodes), Morlet-transformed, and differenced.

#pragma once

#include <string>
#include <vector>

#include "erpcond/explain/morlet.hpp"
#include "erpcond/protocol/training.hpp"

namespace erpcond {

/// Per-filter class-conditional time-frequency responses. Every matrix is
/// (n_freqs, n_times); `difference` is target minus nontarget, entrywise.
struct TFResponse {
  std::vector<double> freqs;  // Hz
  std::vector<double> times;  // s after stimulus onset
  std::vector<Tensor<double>> target;
  std::vector<Tensor<double>> nontarget;
  std::vector<Tensor<double>> difference;

  std::size_t n_filters() const { return difference.size(); }
};

inline TFResponse filter_tf_difference(const Model& m, const EpochSet& es,
                                       const std::vector<double>& freqs = default_tf_freqs(),
                                       double n_cycles = 7.0) {
  es.validate();
  std::size_t n_target = 0;
  for (int y : es.labels) n_target += (y == 1);
  const std::size_t n_nontarget = es.labels.size() - n_target;
  if (n_target == 0 || n_nontarget == 0)
    throw DataError("filter_tf_difference: need both classes, got " +
                    std::to_string(n_target) + " targets and " +
                    std::to_string(n_nontarget) + " non-targets");

  if (m.extractor.specs().empty())
    throw ConfigError("filter_tf_difference: model has an empty extractor");

  // The first layer alone, with the trained weights copied in by name.
  Graph<float> first(std::vector<LayerSpec>{m.extractor.specs().front()});
  std::map<std::string, const TensorF*> trained;
  m.extractor.for_each_param(
      "", [&](const std::string& n, const TensorF& t) { trained[n] = &t; });
  first.for_each_param("", [&](const std::string& n, TensorF& t) {
    auto it = trained.find(n);
    if (it == trained.end())
      throw ConfigError("filter_tf_difference: missing weights for '" + n + "'");
    t.data = it->second->data;
  });

  std::vector<int> all(es.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int>(i);
  TensorF x3 = detail::model_window_batch(es, all, m.cfg, nullptr);
  const int n = x3.dim(0), C = x3.dim(1), W = x3.dim(2);
  TensorF x4({n, 1, C, W}, std::move(x3.data));
  const TensorF act = first.apply(std::move(x4), FwdCtx{});
  const int F = act.dim(1), H = act.dim(2), Wo = act.dim(3);

  // Class means per filter, averaged over epochs and electrodes.
  std::vector<std::vector<double>> mean_t(static_cast<std::size_t>(F),
                                          std::vector<double>(static_cast<std::size_t>(Wo), 0.0));
  auto mean_nt = mean_t;
  const float* ap = act.ptr();
  for (int e = 0; e < n; ++e) {
    const bool is_target = es.labels[static_cast<std::size_t>(e)] == 1;
    auto& acc = is_target ? mean_t : mean_nt;
    const double denom =
        static_cast<double>(is_target ? n_target : n_nontarget) * static_cast<double>(H);
    for (int f = 0; f < F; ++f)
      for (int h = 0; h < H; ++h) {
        const float* rowp = ap + ((static_cast<std::size_t>(e) * F + f) * H + h) * Wo;
        for (int w = 0; w < Wo; ++w)
          acc[static_cast<std::size_t>(f)][static_cast<std::size_t>(w)] += rowp[w] / denom;
      }
  }

  TFResponse out;
  out.freqs = freqs;
  for (int f = 0; f < F; ++f) {
    TFMatrix t_tf = morlet_tf(mean_t[static_cast<std::size_t>(f)], m.cfg.sfreq, freqs, n_cycles);
    TFMatrix nt_tf =
        morlet_tf(mean_nt[static_cast<std::size_t>(f)], m.cfg.sfreq, freqs, n_cycles);
    if (f == 0) out.times = t_tf.times;
    Tensor<double> diff(t_tf.mag.shape);
    for (std::size_t i = 0; i < diff.numel(); ++i)
      diff.data[i] = t_tf.mag.data[i] - nt_tf.mag.data[i];
    out.target.push_back(std::move(t_tf.mag));
    out.nontarget.push_back(std::move(nt_tf.mag));
    out.difference.push_back(std::move(diff));
  }
  return out;
}

}  // namespace erpcond
