// Copyright (c) 2026 erpcond authors
// SPDX-License-Identifier: Apache-2.0
//
// Per-electrode importance read off the spatial convolution: each channel's
// score is the summed squared weight ("weight energy") across all filters and
// kernel positions touching it, normalized to sum 1.

#pragma once

#include <string>
#include <vector>

#include "erpcond/models/architectures.hpp"

namespace erpcond {

struct ChannelImportance {
  std::vector<double> scores;  // one per electrode; >= 0 and summing to 1
  std::string model_id;        // architecture name
  std::string checkpoint_id;   // caller-supplied tag, may be empty
};

/// Scores each electrode by the weight energy of the first convolution whose
/// kernel spans the electrode axis (the depthwise spatial layer in
/// temporal-first architectures).
inline ChannelImportance channel_importance(const Model& m, const std::string& checkpoint_id = "") {
  const LayerSpec* spatial = nullptr;
  for (const auto& s : m.extractor.specs()) {
    const bool convlike =
        s.kind == LayerKind::conv2d || s.kind == LayerKind::depthwise_conv2d;
    if (convlike && s.kh == m.cfg.n_channels && s.kh > 1) {
      spatial = &s;
      break;
    }
  }
  if (!spatial)
    throw ConfigError(
        "channel importance: no convolution spans the electrode axis in this architecture");

  const std::string want = spatial->name + ".weight";
  const TensorF* w = nullptr;
  m.extractor.for_each_param("", [&](const std::string& n, const TensorF& t) {
    if (n == want) w = &t;
  });
  if (!w) throw ConfigError("channel importance: spatial layer '" + spatial->name +
                            "' carries no weight tensor");

  // Weight layout [a, b, channel, k]: conv2d has (out, in) leading axes,
  // depthwise (in, multiplier); both sum out the same way.
  const int A = w->dim(0), B = w->dim(1), C = w->dim(2), K = w->dim(3);
  ChannelImportance ci;
  ci.model_id = arch_name(m.cfg.arch);
  ci.checkpoint_id = checkpoint_id;
  ci.scores.assign(static_cast<std::size_t>(C), 0.0);
  const float* p = w->ptr();
  for (int a = 0; a < A; ++a)
    for (int b = 0; b < B; ++b)
      for (int c = 0; c < C; ++c)
        for (int k = 0; k < K; ++k) {
          const double v = p[((static_cast<std::size_t>(a) * B + b) * C + c) * K + k];
          ci.scores[static_cast<std::size_t>(c)] += v * v;
        }

  double total = 0.0;
  for (double v : ci.scores) total += v;
  if (!(total > 0.0))
    throw NumericError("channel importance: spatial layer has zero weight energy");
  for (double& v : ci.scores) v /= total;
  return ci;
}

}  // namespace erpcond
