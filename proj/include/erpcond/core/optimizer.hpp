// Copyright (c) 2026 erpcond authors
// SPDX-License-Identifier: Apache-2.0
//
// Adam (default) and plain SGD. Only parameters named in the gradient set are
// touched, which is how partial freezing composes with the update rule.

#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "erpcond/core/errors.hpp"
#include "erpcond/core/graph.hpp"

namespace erpcond {

enum class OptKind { adam, sgd };

struct OptimizerConfig {
  OptKind kind = OptKind::adam;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename T>
class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig cfg) : cfg_(cfg) {
    if (!(cfg_.lr > 0.0)) throw ConfigError("optimizer: learning rate must be positive");
  }

  const OptimizerConfig& config() const { return cfg_; }
  void set_lr(double lr) {
    if (!(lr > 0.0)) throw ConfigError("optimizer: learning rate must be positive");
    cfg_.lr = lr;
  }
  std::int64_t step_count() const { return t_; }

  /// Applies one update. `params` maps full parameter names to live tensors;
  /// every key of `grads` must resolve. Parameters absent from `grads` are
  /// left untouched, including their moment state.
  void step(const std::map<std::string, Tensor<T>*>& params, const GradientSet<T>& grads) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (const auto& [name, grad] : grads) {
      auto pit = params.find(name);
      if (pit == params.end())
        throw ConfigError("optimizer: gradient for unknown parameter '" + name + "'");
      Tensor<T>& p = *pit->second;
      if (!same_shape(p.shape, grad.shape))
        throw ConfigError("optimizer: gradient shape mismatch for '" + name + "'");
      if (!grad.all_finite())
        throw NumericError("optimizer: non-finite gradient for parameter '" + name + "'");
      if (cfg_.kind == OptKind::sgd) {
        for (std::size_t i = 0; i < p.numel(); ++i)
          p.data[i] = static_cast<T>(static_cast<double>(p.data[i]) -
                                     cfg_.lr * static_cast<double>(grad.data[i]));
        continue;
      }
      auto& st = state_[name];
      if (st.m.numel() == 0) {
        st.m = Tensor<double>(grad.shape);
        st.v = Tensor<double>(grad.shape);
      }
      for (std::size_t i = 0; i < p.numel(); ++i) {
        const double gi = static_cast<double>(grad.data[i]);
        st.m.data[i] = cfg_.beta1 * st.m.data[i] + (1.0 - cfg_.beta1) * gi;
        st.v.data[i] = cfg_.beta2 * st.v.data[i] + (1.0 - cfg_.beta2) * gi * gi;
        const double mhat = st.m.data[i] / bc1;
        const double vhat = st.v.data[i] / bc2;
        p.data[i] = static_cast<T>(static_cast<double>(p.data[i]) -
                                   cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps));
      }
    }
  }

  void reset_state() {
    state_.clear();
    t_ = 0;
  }

 private:
  struct MomentState {
    Tensor<double> m, v;
  };
  OptimizerConfig cfg_;
  std::map<std::string, MomentState> state_;
  std::int64_t t_ = 0;
};

}  // namespace erpcond
