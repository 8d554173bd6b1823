// Copyright (c) 2026 erpcond authors
// SPDX-License-Identifier: Apache-2.0
//
// Central finite-difference verification of the analytic gradients. The graph
// under test is re-instantiated at double precision (structure comes from the
// LayerSpecs, values are copied over) so the comparison measures the math,
// not float32 round-off: a step of 1e-3 in float32 would drown real defects
// in cancellation noise, while in double the discretization error sits near
// 1e-9 and any backward bug stands out by orders of magnitude.

#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "erpcond/core/errors.hpp"
#include "erpcond/core/graph.hpp"

namespace erpcond {

struct GradCheckOptions {
  double epsilon = 1e-3;
  FwdCtx ctx;  // train/eval mode and dropout seed, held fixed across probes
  // Fault injection for self-tests: analytic gradients of this parameter are
  // scaled before comparison, so a correct checker must report the mismatch.
  std::string corrupt_param;
  double corrupt_factor = 1.0;
};

namespace detail {

inline double sum_output(const TensorD& out) {
  double s = 0.0;
  for (double v : out.data) s += v;
  if (!std::isfinite(s)) throw NumericError("grad_check: non-finite loss");
  return s;
}

}  // namespace detail

/// Compares analytic parameter gradients of loss = sum(graph(input)) against
/// central finite differences and returns the worst relative error, where
/// rel = |a - n| / max(|a|, |n|, 1e-6).
template <typename T>
double grad_check(const Graph<T>& graph, const Tensor<T>& input, const GradCheckOptions& opts) {
  if (!(opts.epsilon > 0.0 && opts.epsilon <= 1e-1))
    throw ConfigError("grad_check: epsilon must lie in (0, 1e-1]");

  GraphD g(graph.specs());
  g.copy_state_from(graph);
  TensorD x = input.template cast<double>();

  auto trace = g.forward(x, opts.ctx);
  const double base_loss = detail::sum_output(trace.output());
  (void)base_loss;

  GradientSet<double> analytic;
  TensorD upstream = TensorD::full(trace.output().shape, 1.0);
  g.backward(trace, upstream, analytic, {}, "");

  if (!opts.corrupt_param.empty()) {
    auto it = analytic.find(opts.corrupt_param);
    if (it == analytic.end())
      throw ConfigError("grad_check: unknown parameter '" + opts.corrupt_param + "'");
    for (auto& v : it->second.data) v *= opts.corrupt_factor;
  }

  double worst = 0.0;
  g.for_each_param("", [&](const std::string& name, TensorD& param) {
    const TensorD& a = analytic.at(name);
    for (std::size_t i = 0; i < param.numel(); ++i) {
      const double keep = param.data[i];
      param.data[i] = keep + opts.epsilon;
      const double lp = detail::sum_output(g.apply(x, opts.ctx));
      param.data[i] = keep - opts.epsilon;
      const double lm = detail::sum_output(g.apply(x, opts.ctx));
      param.data[i] = keep;
      const double numeric = (lp - lm) / (2.0 * opts.epsilon);
      const double denom = std::max({std::abs(a.data[i]), std::abs(numeric), 1e-6});
      worst = std::max(worst, std::abs(a.data[i] - numeric) / denom);
    }
  });
  return worst;
}

template <typename T>
double grad_check(const Graph<T>& graph, const Tensor<T>& input, double epsilon) {
  GradCheckOptions opts;
  opts.epsilon = epsilon;
  return grad_check(graph, input, opts);
}

}  // namespace erpcond
