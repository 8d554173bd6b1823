// Copyright (c) 2026 erpcond authors
// SPDX-License-Identifier: Apache-2.0
//
// A Graph is an ordered chain of layers built from LayerSpecs. Because the
// structure lives in plain specs, a graph can be serialized, rebuilt, and
// re-instantiated at a different scalar type (float for production, double
// for finite-difference verification).

#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "erpcond/core/errors.hpp"
#include "erpcond/core/layers.hpp"

namespace erpcond {

/// Full parameter name -> gradient. std::map keeps iteration deterministic.
template <typename T>
using GradientSet = std::map<std::string, Tensor<T>>;

template <typename T>
struct ForwardTrace {
  Tensor<T> input;
  std::vector<NodeCache<T>> nodes;
  FwdCtx ctx;

  const Tensor<T>& output() const {
    if (nodes.empty()) throw NumericError("forward trace is empty");
    return nodes.back().out;
  }
};

template <typename T>
class Graph {
 public:
  Graph() = default;

  explicit Graph(std::vector<LayerSpec> specs) : specs_(std::move(specs)) {
    std::set<std::string> seen;
    for (const auto& s : specs_) {
      if (s.name.empty()) throw ConfigError("graph node with empty name");
      if (!seen.insert(s.name).second)
        throw ConfigError("duplicate graph node name '" + s.name + "'");
      layers_.push_back(make_layer<T>(s));
    }
  }

  Graph(const Graph& other) : Graph(other.specs_) { copy_state_from(other); }

  Graph& operator=(const Graph& other) {
    if (this != &other) {
      Graph tmp(other);
      *this = std::move(tmp);
    }
    return *this;
  }

  Graph(Graph&&) noexcept = default;
  Graph& operator=(Graph&&) noexcept = default;

  const std::vector<LayerSpec>& specs() const { return specs_; }
  std::size_t size() const { return layers_.size(); }
  bool empty() const { return layers_.empty(); }

  void init_params(std::uint64_t seed) {
    Rng rng(seed);
    for (auto& l : layers_) l->init_params(rng);
  }

  /// Validates `in` through every node; throws ConfigError naming the first
  /// offending node. Returns the final output shape.
  std::vector<int> infer_output_shape(std::vector<int> in) const {
    for (const auto& l : layers_) in = l->out_shape(in);
    return in;
  }

  ForwardTrace<T> forward(Tensor<T> input, const FwdCtx& ctx) const {
    ForwardTrace<T> trace;
    trace.ctx = ctx;
    trace.input = std::move(input);
    trace.nodes.reserve(layers_.size());
    const Tensor<T>* cur = &trace.input;
    for (const auto& l : layers_) {
      l->out_shape(cur->shape);  // shape check, names the node on mismatch
      trace.nodes.emplace_back();
      l->forward(*cur, trace.nodes.back(), ctx);
      cur = &trace.nodes.back().out;
    }
    return trace;
  }

  /// Convenience forward that only returns the final output.
  Tensor<T> apply(Tensor<T> input, const FwdCtx& ctx) const {
    if (layers_.empty()) return input;
    auto trace = forward(std::move(input), ctx);
    return std::move(trace.nodes.back().out);
  }

  /// Backpropagates `upstream` (dL/d output) through the trace. Gradients for
  /// parameters named in `frozen` (full names, i.e. prefix + node + "." +
  /// local) are neither computed when the whole node is frozen nor emitted.
  /// Every trainable, unfrozen parameter gets an entry in `grads`, so the key
  /// set of `grads` matches the unfrozen set exactly.
  Tensor<T> backward(const ForwardTrace<T>& trace, const Tensor<T>& upstream, GradientSet<T>& grads,
                     const std::set<std::string>& frozen, const std::string& prefix) const {
    if (trace.nodes.size() != layers_.size())
      throw NumericError("stale activations: trace has " + std::to_string(trace.nodes.size()) +
                         " nodes, graph has " + std::to_string(layers_.size()));
    Tensor<T> dy = upstream;
    for (std::size_t li = layers_.size(); li-- > 0;) {
      auto& layer = *layers_[li];
      const Tensor<T>& x = li == 0 ? trace.input : trace.nodes[li - 1].out;
      const NodeCache<T>& cache = trace.nodes[li];
      if (!same_shape(dy.shape, cache.out.shape))
        throw NumericError("stale activations at node '" + layer.name() + "': gradient shape " +
                           dy.shape_str() + " vs output shape " + cache.out.shape_str());
      auto plist = layer.params();
      std::vector<std::string> full_names;
      full_names.reserve(plist.size());
      bool any_unfrozen = false;
      for (const auto& p : plist) {
        full_names.push_back(prefix + layer.name() + "." + p.name);
        if (!frozen.count(full_names.back())) any_unfrozen = true;
      }
      if (any_unfrozen) {
        ParamGradList<T> pg;
        pg.reserve(plist.size());
        for (const auto& p : plist) pg.emplace_back(p.tensor->shape);
        dy = layer.backward(x, cache, dy, trace.ctx, &pg);
        for (std::size_t pi = 0; pi < plist.size(); ++pi) {
          if (frozen.count(full_names[pi])) continue;
          auto [it, inserted] = grads.emplace(full_names[pi], std::move(pg[pi]));
          if (!inserted) {
            for (std::size_t k = 0; k < it->second.numel(); ++k)
              it->second.data[k] += pg[pi].data[k];
          }
        }
      } else {
        dy = layer.backward(x, cache, dy, trace.ctx, nullptr);
      }
    }
    return dy;
  }

  /// Visits every trainable parameter as (full name, tensor).
  template <typename Fn>
  void for_each_param(const std::string& prefix, Fn&& fn) {
    for (auto& l : layers_)
      for (auto& p : l->params()) fn(prefix + l->name() + "." + p.name, *p.tensor);
  }

  template <typename Fn>
  void for_each_param(const std::string& prefix, Fn&& fn) const {
    for (const auto& l : layers_)
      for (auto& p : const_cast<Layer<T>&>(*l).params())
        fn(prefix + l->name() + "." + p.name, static_cast<const Tensor<T>&>(*p.tensor));
  }

  /// Visits every non-trainable buffer (batch-norm running stats).
  template <typename Fn>
  void for_each_buffer(const std::string& prefix, Fn&& fn) {
    for (auto& l : layers_)
      for (auto& p : l->buffers()) fn(prefix + l->name() + "." + p.name, *p.tensor);
  }

  template <typename Fn>
  void for_each_buffer(const std::string& prefix, Fn&& fn) const {
    for (const auto& l : layers_)
      for (auto& p : const_cast<Layer<T>&>(*l).buffers())
        fn(prefix + l->name() + "." + p.name, static_cast<const Tensor<T>&>(*p.tensor));
  }

  std::size_t param_count() const {
    std::size_t n = 0;
    for_each_param("", [&](const std::string&, const Tensor<T>& t) { n += t.numel(); });
    return n;
  }

  /// Copies parameter and buffer values from a graph with identical specs,
  /// converting scalar type if needed.
  template <typename U>
  void copy_state_from(const Graph<U>& other) {
    if (other.specs().size() != specs_.size())
      throw ConfigError("copy_state_from: graph structures differ");
    std::map<std::string, Tensor<T>> values;
    other.for_each_param("", [&](const std::string& n, const Tensor<U>& t) {
      values.emplace(n, t.template cast<T>());
    });
    other.for_each_buffer("", [&](const std::string& n, const Tensor<U>& t) {
      values.emplace(n, t.template cast<T>());
    });
    auto assign = [&](const std::string& n, Tensor<T>& dst) {
      auto it = values.find(n);
      if (it == values.end()) throw ConfigError("copy_state_from: missing value for '" + n + "'");
      if (!same_shape(it->second.shape, dst.shape))
        throw ConfigError("copy_state_from: shape mismatch for '" + n + "'");
      dst.data = it->second.data;
    };
    for_each_param("", assign);
    for_each_buffer("", assign);
  }

 private:
  std::vector<LayerSpec> specs_;
  std::vector<std::unique_ptr<Layer<T>>> layers_;
};

using GraphF = Graph<float>;
using GraphD = Graph<double>;

}  // namespace erpcond
