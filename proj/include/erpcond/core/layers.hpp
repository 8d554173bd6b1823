// Copyright (c) 2026 erpcond authors
// SPDX-License-Identifier: Apache-2.0
//
// Layer set for the feed-forward graphs: convolutions, dense, batch norm,
// ELU, sigmoid, average pooling, dropout, flatten and a squeeze-excitation
// gate. Forward caches whatever backward needs; inner loops are written
// saxpy-style (contiguous runs, scalar coefficient) so they vectorize
// without -ffast-math and stay bit-deterministic.

#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "erpcond/core/errors.hpp"
#include "erpcond/core/layer_spec.hpp"
#include "erpcond/core/rng.hpp"
#include "erpcond/core/tensor.hpp"

namespace erpcond {

struct FwdCtx {
  bool train = false;
  std::uint64_t dropout_seed = 0;
};

template <typename T>
struct NodeCache {
  Tensor<T> out;
  std::vector<Tensor<T>> aux;
};

template <typename T>
using ParamGradList = std::vector<Tensor<T>>;

template <typename T>
struct NamedParam {
  std::string name;  // local to the layer, e.g. "weight"
  Tensor<T>* tensor;
};

namespace detail {

inline void require(bool cond, const std::string& node, const std::string& what) {
  if (!cond) throw ConfigError("node '" + node + "': " + what);
}

}  // namespace detail

template <typename T>
class Layer {
 public:
  explicit Layer(LayerSpec spec) : spec_(std::move(spec)) {}
  virtual ~Layer() = default;

  const LayerSpec& spec() const { return spec_; }
  const std::string& name() const { return spec_.name; }

  /// Validates the input shape and returns the output shape.
  virtual std::vector<int> out_shape(const std::vector<int>& in) const = 0;

  virtual void forward(const Tensor<T>& x, NodeCache<T>& cache, const FwdCtx& ctx) const = 0;

  /// Returns dL/dx. If `param_grads` is non-null it holds one pre-zeroed
  /// tensor per entry of params(), in order, to be accumulated into.
  virtual Tensor<T> backward(const Tensor<T>& x, const NodeCache<T>& cache, const Tensor<T>& dy,
                             const FwdCtx& ctx, ParamGradList<T>* param_grads) const = 0;

  virtual std::vector<NamedParam<T>> params() { return {}; }
  virtual std::vector<NamedParam<T>> buffers() { return {}; }
  virtual void init_params(Rng&) {}

 protected:
  LayerSpec spec_;
};

// ---------------------------------------------------------------------------
// Conv2d: full convolution (stride 1). Height is always "valid"; width is
// "same" (zero pad) or "valid" per spec.pad_same_w.
// ---------------------------------------------------------------------------

template <typename T>
class Conv2dLayer final : public Layer<T> {
 public:
  explicit Conv2dLayer(LayerSpec spec) : Layer<T>(std::move(spec)) {
    const auto& s = this->spec_;
    detail::require(s.in_maps > 0 && s.out_maps > 0 && s.kh > 0 && s.kw > 0, s.name,
                    "invalid conv2d geometry");
    weight_ = Tensor<T>({s.out_maps, s.in_maps, s.kh, s.kw});
    if (s.bias) bias_ = Tensor<T>({s.out_maps});
  }

  std::vector<int> out_shape(const std::vector<int>& in) const override {
    const auto& s = this->spec_;
    detail::require(in.size() == 4, s.name, "conv2d expects rank-4 input, got rank " +
                                                std::to_string(in.size()));
    detail::require(in[1] == s.in_maps, s.name,
                    "expected " + std::to_string(s.in_maps) + " input maps, got " +
                        std::to_string(in[1]));
    detail::require(in[2] >= s.kh, s.name, "input height smaller than kernel");
    const int ow = s.pad_same_w ? in[3] : in[3] - s.kw + 1;
    detail::require(ow > 0, s.name, "input width smaller than kernel");
    return {in[0], s.out_maps, in[2] - s.kh + 1, ow};
  }

  void forward(const Tensor<T>& x, NodeCache<T>& cache, const FwdCtx&) const override {
    const auto& s = this->spec_;
    const int n = x.dim(0), h = x.dim(2), w = x.dim(3);
    const int oh = h - s.kh + 1;
    const int ow = s.pad_same_w ? w : w - s.kw + 1;
    const int padl = s.pad_same_w ? (s.kw - 1) / 2 : 0;
    cache.out = Tensor<T>({n, s.out_maps, oh, ow});
    const T* xp = x.ptr();
    T* yp = cache.out.ptr();
    const T* wp = weight_.ptr();
    for (int b = 0; b < n; ++b) {
      for (int f = 0; f < s.out_maps; ++f) {
        T* omap = yp + (static_cast<std::size_t>(b) * s.out_maps + f) * oh * ow;
        if (s.bias) {
          const T bv = bias_.data[f];
          for (int i = 0; i < oh * ow; ++i) omap[i] = bv;
        }
        for (int ci = 0; ci < s.in_maps; ++ci) {
          const T* imap = xp + (static_cast<std::size_t>(b) * s.in_maps + ci) * h * w;
          for (int kh = 0; kh < s.kh; ++kh) {
            for (int kw = 0; kw < s.kw; ++kw) {
              const T wv = wp[((static_cast<std::size_t>(f) * s.in_maps + ci) * s.kh + kh) * s.kw + kw];
              const int off = kw - padl;
              const int lo = off < 0 ? -off : 0;
              const int hi = std::min(ow, w - off);
              for (int r = 0; r < oh; ++r) {
                const T* xr = imap + static_cast<std::size_t>(r + kh) * w + off;
                T* orow = omap + static_cast<std::size_t>(r) * ow;
                for (int c = lo; c < hi; ++c) orow[c] += wv * xr[c];
              }
            }
          }
        }
      }
    }
  }

  Tensor<T> backward(const Tensor<T>& x, const NodeCache<T>& cache, const Tensor<T>& dy,
                     const FwdCtx&, ParamGradList<T>* pg) const override {
    const auto& s = this->spec_;
    const int n = x.dim(0), h = x.dim(2), w = x.dim(3);
    const int oh = cache.out.dim(2), ow = cache.out.dim(3);
    const int padl = s.pad_same_w ? (s.kw - 1) / 2 : 0;
    Tensor<T> dx(x.shape);
    const T* xp = x.ptr();
    const T* gp = dy.ptr();
    const T* wp = weight_.ptr();
    T* dxp = dx.ptr();
    Tensor<T>* dw = pg ? &(*pg)[0] : nullptr;
    Tensor<T>* db = (pg && s.bias) ? &(*pg)[1] : nullptr;
    for (int b = 0; b < n; ++b) {
      for (int f = 0; f < s.out_maps; ++f) {
        const T* gmap = gp + (static_cast<std::size_t>(b) * s.out_maps + f) * oh * ow;
        if (db) {
          double acc = 0.0;
          for (int i = 0; i < oh * ow; ++i) acc += static_cast<double>(gmap[i]);
          db->data[f] += static_cast<T>(acc);
        }
        for (int ci = 0; ci < s.in_maps; ++ci) {
          const T* imap = xp + (static_cast<std::size_t>(b) * s.in_maps + ci) * h * w;
          T* dimap = dxp + (static_cast<std::size_t>(b) * s.in_maps + ci) * h * w;
          for (int kh = 0; kh < s.kh; ++kh) {
            T* dwrow = dw ? dw->ptr() + ((static_cast<std::size_t>(f) * s.in_maps + ci) * s.kh + kh) * s.kw
                          : nullptr;
            for (int r = 0; r < oh; ++r) {
              const T* grow = gmap + static_cast<std::size_t>(r) * ow;
              const T* xr = imap + static_cast<std::size_t>(r + kh) * w;
              T* dxr = dimap + static_cast<std::size_t>(r + kh) * w;
              if (dwrow) {
                for (int c = 0; c < ow; ++c) {
                  const T g = grow[c];
                  const int base = c - padl;
                  const int klo = base < 0 ? -base : 0;
                  const int khi = std::min(s.kw, w - base);
                  const T* xseg = xr + base;
                  for (int k = klo; k < khi; ++k) dwrow[k] += g * xseg[k];
                }
              }
              for (int kw = 0; kw < s.kw; ++kw) {
                const T wv = wp[((static_cast<std::size_t>(f) * s.in_maps + ci) * s.kh + kh) * s.kw + kw];
                const int off = kw - padl;
                const int lo = off < 0 ? -off : 0;
                const int hi = std::min(ow, w - off);
                T* dseg = dxr + off;
                for (int c = lo; c < hi; ++c) dseg[c] += wv * grow[c];
              }
            }
          }
        }
      }
    }
    return dx;
  }

  std::vector<NamedParam<T>> params() override {
    std::vector<NamedParam<T>> out{{"weight", &weight_}};
    if (this->spec_.bias) out.push_back({"bias", &bias_});
    return out;
  }

  void init_params(Rng& rng) override {
    const auto& s = this->spec_;
    const double fan_in = static_cast<double>(s.in_maps) * s.kh * s.kw;
    const double std = std::sqrt(2.0 / fan_in);
    for (auto& v : weight_.data) v = static_cast<T>(rng.normal() * std);
    if (s.bias) bias_.fill(T(0));
  }

 private:
  Tensor<T> weight_;
  Tensor<T> bias_;
};

// ---------------------------------------------------------------------------
// DepthwiseConv2d: each input map convolved with depth_mult kernels.
// Output map index = ci * depth_mult + d.
// ---------------------------------------------------------------------------

template <typename T>
class DepthwiseConv2dLayer final : public Layer<T> {
 public:
  explicit DepthwiseConv2dLayer(LayerSpec spec) : Layer<T>(std::move(spec)) {
    const auto& s = this->spec_;
    detail::require(s.in_maps > 0 && s.depth_mult > 0 && s.kh > 0 && s.kw > 0, s.name,
                    "invalid depthwise geometry");
    weight_ = Tensor<T>({s.in_maps, s.depth_mult, s.kh, s.kw});
  }

  std::vector<int> out_shape(const std::vector<int>& in) const override {
    const auto& s = this->spec_;
    detail::require(in.size() == 4, s.name, "depthwise conv expects rank-4 input");
    detail::require(in[1] == s.in_maps, s.name,
                    "expected " + std::to_string(s.in_maps) + " input maps, got " +
                        std::to_string(in[1]));
    detail::require(in[2] >= s.kh, s.name, "input height smaller than kernel");
    const int ow = s.pad_same_w ? in[3] : in[3] - s.kw + 1;
    detail::require(ow > 0, s.name, "input width smaller than kernel");
    return {in[0], s.in_maps * s.depth_mult, in[2] - s.kh + 1, ow};
  }

  void forward(const Tensor<T>& x, NodeCache<T>& cache, const FwdCtx&) const override {
    const auto& s = this->spec_;
    const int n = x.dim(0), h = x.dim(2), w = x.dim(3);
    const int oh = h - s.kh + 1;
    const int ow = s.pad_same_w ? w : w - s.kw + 1;
    const int padl = s.pad_same_w ? (s.kw - 1) / 2 : 0;
    const int fout = s.in_maps * s.depth_mult;
    cache.out = Tensor<T>({n, fout, oh, ow});
    const T* xp = x.ptr();
    T* yp = cache.out.ptr();
    for (int b = 0; b < n; ++b) {
      for (int ci = 0; ci < s.in_maps; ++ci) {
        const T* imap = xp + (static_cast<std::size_t>(b) * s.in_maps + ci) * h * w;
        for (int d = 0; d < s.depth_mult; ++d) {
          T* omap = yp + (static_cast<std::size_t>(b) * fout + ci * s.depth_mult + d) * oh * ow;
          const T* wk = weight_.ptr() + (static_cast<std::size_t>(ci) * s.depth_mult + d) * s.kh * s.kw;
          for (int kh = 0; kh < s.kh; ++kh) {
            for (int kw = 0; kw < s.kw; ++kw) {
              const T wv = wk[kh * s.kw + kw];
              const int off = kw - padl;
              const int lo = off < 0 ? -off : 0;
              const int hi = std::min(ow, w - off);
              for (int r = 0; r < oh; ++r) {
                const T* xr = imap + static_cast<std::size_t>(r + kh) * w + off;
                T* orow = omap + static_cast<std::size_t>(r) * ow;
                for (int c = lo; c < hi; ++c) orow[c] += wv * xr[c];
              }
            }
          }
        }
      }
    }
  }

  Tensor<T> backward(const Tensor<T>& x, const NodeCache<T>& cache, const Tensor<T>& dy,
                     const FwdCtx&, ParamGradList<T>* pg) const override {
    const auto& s = this->spec_;
    const int n = x.dim(0), h = x.dim(2), w = x.dim(3);
    const int oh = cache.out.dim(2), ow = cache.out.dim(3);
    const int padl = s.pad_same_w ? (s.kw - 1) / 2 : 0;
    const int fout = s.in_maps * s.depth_mult;
    Tensor<T> dx(x.shape);
    Tensor<T>* dw = pg ? &(*pg)[0] : nullptr;
    for (int b = 0; b < n; ++b) {
      for (int ci = 0; ci < s.in_maps; ++ci) {
        const T* imap = x.ptr() + (static_cast<std::size_t>(b) * s.in_maps + ci) * h * w;
        T* dimap = dx.ptr() + (static_cast<std::size_t>(b) * s.in_maps + ci) * h * w;
        for (int d = 0; d < s.depth_mult; ++d) {
          const T* gmap =
              dy.ptr() + (static_cast<std::size_t>(b) * fout + ci * s.depth_mult + d) * oh * ow;
          const T* wk =
              weight_.ptr() + (static_cast<std::size_t>(ci) * s.depth_mult + d) * s.kh * s.kw;
          T* dwk = dw ? dw->ptr() + (static_cast<std::size_t>(ci) * s.depth_mult + d) * s.kh * s.kw
                      : nullptr;
          for (int kh = 0; kh < s.kh; ++kh) {
            for (int r = 0; r < oh; ++r) {
              const T* grow = gmap + static_cast<std::size_t>(r) * ow;
              const T* xr = imap + static_cast<std::size_t>(r + kh) * w;
              T* dxr = dimap + static_cast<std::size_t>(r + kh) * w;
              if (dwk) {
                T* dwrow = dwk + kh * s.kw;
                for (int c = 0; c < ow; ++c) {
                  const T g = grow[c];
                  const int base = c - padl;
                  const int klo = base < 0 ? -base : 0;
                  const int khi = std::min(s.kw, w - base);
                  const T* xseg = xr + base;
                  for (int k = klo; k < khi; ++k) dwrow[k] += g * xseg[k];
                }
              }
              for (int kw = 0; kw < s.kw; ++kw) {
                const T wv = wk[kh * s.kw + kw];
                const int off = kw - padl;
                const int lo = off < 0 ? -off : 0;
                const int hi = std::min(ow, w - off);
                T* dseg = dxr + off;
                for (int c = lo; c < hi; ++c) dseg[c] += wv * grow[c];
              }
            }
          }
        }
      }
    }
    return dx;
  }

  std::vector<NamedParam<T>> params() override { return {{"weight", &weight_}}; }

  void init_params(Rng& rng) override {
    const auto& s = this->spec_;
    const double std = std::sqrt(2.0 / (static_cast<double>(s.kh) * s.kw));
    for (auto& v : weight_.data) v = static_cast<T>(rng.normal() * std);
  }

 private:
  Tensor<T> weight_;
};

// ---------------------------------------------------------------------------
// Dense
// ---------------------------------------------------------------------------

template <typename T>
class DenseLayer final : public Layer<T> {
 public:
  explicit DenseLayer(LayerSpec spec) : Layer<T>(std::move(spec)) {
    const auto& s = this->spec_;
    detail::require(s.in_dim > 0 && s.out_dim > 0, s.name, "invalid dense geometry");
    weight_ = Tensor<T>({s.out_dim, s.in_dim});
    if (s.bias) bias_ = Tensor<T>({s.out_dim});
  }

  std::vector<int> out_shape(const std::vector<int>& in) const override {
    const auto& s = this->spec_;
    detail::require(in.size() == 2, s.name, "dense expects rank-2 input (flatten first)");
    detail::require(in[1] == s.in_dim, s.name,
                    "expected input dim " + std::to_string(s.in_dim) + ", got " +
                        std::to_string(in[1]));
    return {in[0], s.out_dim};
  }

  void forward(const Tensor<T>& x, NodeCache<T>& cache, const FwdCtx&) const override {
    const auto& s = this->spec_;
    const int n = x.dim(0);
    cache.out = Tensor<T>({n, s.out_dim});
    for (int b = 0; b < n; ++b) {
      const T* xr = x.ptr() + static_cast<std::size_t>(b) * s.in_dim;
      T* yr = cache.out.ptr() + static_cast<std::size_t>(b) * s.out_dim;
      for (int o = 0; o < s.out_dim; ++o) {
        const T* wr = weight_.ptr() + static_cast<std::size_t>(o) * s.in_dim;
        double acc = s.bias ? static_cast<double>(bias_.data[o]) : 0.0;
        for (int i = 0; i < s.in_dim; ++i) acc += static_cast<double>(wr[i]) * xr[i];
        yr[o] = static_cast<T>(acc);
      }
    }
  }

  Tensor<T> backward(const Tensor<T>& x, const NodeCache<T>&, const Tensor<T>& dy, const FwdCtx&,
                     ParamGradList<T>* pg) const override {
    const auto& s = this->spec_;
    const int n = x.dim(0);
    Tensor<T> dx(x.shape);
    Tensor<T>* dw = pg ? &(*pg)[0] : nullptr;
    Tensor<T>* db = (pg && s.bias) ? &(*pg)[1] : nullptr;
    for (int b = 0; b < n; ++b) {
      const T* xr = x.ptr() + static_cast<std::size_t>(b) * s.in_dim;
      const T* gr = dy.ptr() + static_cast<std::size_t>(b) * s.out_dim;
      T* dxr = dx.ptr() + static_cast<std::size_t>(b) * s.in_dim;
      for (int o = 0; o < s.out_dim; ++o) {
        const T g = gr[o];
        if (g == T(0)) continue;
        const T* wr = weight_.ptr() + static_cast<std::size_t>(o) * s.in_dim;
        for (int i = 0; i < s.in_dim; ++i) dxr[i] += g * wr[i];
        if (dw) {
          T* dwr = dw->ptr() + static_cast<std::size_t>(o) * s.in_dim;
          for (int i = 0; i < s.in_dim; ++i) dwr[i] += g * xr[i];
        }
        if (db) db->data[o] += g;
      }
    }
    return dx;
  }

  std::vector<NamedParam<T>> params() override {
    std::vector<NamedParam<T>> out{{"weight", &weight_}};
    if (this->spec_.bias) out.push_back({"bias", &bias_});
    return out;
  }

  void init_params(Rng& rng) override {
    const double std = std::sqrt(2.0 / this->spec_.in_dim);
    for (auto& v : weight_.data) v = static_cast<T>(rng.normal() * std);
    if (this->spec_.bias) bias_.fill(T(0));
  }

 private:
  Tensor<T> weight_;
  Tensor<T> bias_;
};

// ---------------------------------------------------------------------------
// BatchNorm over the map axis of [N, C, H, W].
// Train mode uses batch statistics and updates the running buffers (the only
// state mutated during forward; training is single-writer). Eval mode uses
// the running buffers, so per-item output is independent of batch company.
// ---------------------------------------------------------------------------

template <typename T>
class BatchNormLayer final : public Layer<T> {
 public:
  explicit BatchNormLayer(LayerSpec spec) : Layer<T>(std::move(spec)) {
    const auto& s = this->spec_;
    detail::require(s.in_maps > 0, s.name, "invalid batch_norm width");
    gamma_ = Tensor<T>::full({s.in_maps}, T(1));
    beta_ = Tensor<T>({s.in_maps});
    running_mean_ = Tensor<T>({s.in_maps});
    running_var_ = Tensor<T>::full({s.in_maps}, T(1));
  }

  std::vector<int> out_shape(const std::vector<int>& in) const override {
    const auto& s = this->spec_;
    detail::require(in.size() == 4, s.name, "batch_norm expects rank-4 input");
    detail::require(in[1] == s.in_maps, s.name,
                    "expected " + std::to_string(s.in_maps) + " maps, got " + std::to_string(in[1]));
    return in;
  }

  void forward(const Tensor<T>& x, NodeCache<T>& cache, const FwdCtx& ctx) const override {
    const auto& s = this->spec_;
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    const std::size_t m = static_cast<std::size_t>(n) * plane;
    cache.out = Tensor<T>(x.shape);
    if (ctx.train) {
      Tensor<T> xhat(x.shape);
      Tensor<T> inv_std({c});
      Tensor<T> mean({c});
      for (int ci = 0; ci < c; ++ci) {
        double sum = 0.0, sum2 = 0.0;
        for (int b = 0; b < n; ++b) {
          const T* p = x.ptr() + (static_cast<std::size_t>(b) * c + ci) * plane;
          for (std::size_t i = 0; i < plane; ++i) {
            const double v = static_cast<double>(p[i]);
            sum += v;
            sum2 += v * v;
          }
        }
        const double mu = sum / static_cast<double>(m);
        double var = sum2 / static_cast<double>(m) - mu * mu;
        if (var < 0.0) var = 0.0;
        const double istd = 1.0 / std::sqrt(var + s.eps);
        mean.data[ci] = static_cast<T>(mu);
        inv_std.data[ci] = static_cast<T>(istd);
        const T g = gamma_.data[ci], bta = beta_.data[ci];
        for (int b = 0; b < n; ++b) {
          const T* p = x.ptr() + (static_cast<std::size_t>(b) * c + ci) * plane;
          T* xh = xhat.ptr() + (static_cast<std::size_t>(b) * c + ci) * plane;
          T* y = cache.out.ptr() + (static_cast<std::size_t>(b) * c + ci) * plane;
          for (std::size_t i = 0; i < plane; ++i) {
            const T z = static_cast<T>((static_cast<double>(p[i]) - mu) * istd);
            xh[i] = z;
            y[i] = g * z + bta;
          }
        }
        const double unbias = m > 1 ? var * static_cast<double>(m) / static_cast<double>(m - 1) : var;
        running_mean_.data[ci] =
            static_cast<T>((1.0 - s.momentum) * static_cast<double>(running_mean_.data[ci]) +
                           s.momentum * mu);
        running_var_.data[ci] =
            static_cast<T>((1.0 - s.momentum) * static_cast<double>(running_var_.data[ci]) +
                           s.momentum * unbias);
      }
      cache.aux = {std::move(xhat), std::move(inv_std), std::move(mean)};
    } else {
      for (int ci = 0; ci < c; ++ci) {
        const double istd = 1.0 / std::sqrt(static_cast<double>(running_var_.data[ci]) + s.eps);
        const double mu = static_cast<double>(running_mean_.data[ci]);
        const double g = static_cast<double>(gamma_.data[ci]);
        const double bta = static_cast<double>(beta_.data[ci]);
        const double a = g * istd;
        const double b0 = bta - g * istd * mu;
        for (int b = 0; b < n; ++b) {
          const T* p = x.ptr() + (static_cast<std::size_t>(b) * c + ci) * plane;
          T* y = cache.out.ptr() + (static_cast<std::size_t>(b) * c + ci) * plane;
          for (std::size_t i = 0; i < plane; ++i)
            y[i] = static_cast<T>(a * static_cast<double>(p[i]) + b0);
        }
      }
    }
  }

  Tensor<T> backward(const Tensor<T>& x, const NodeCache<T>& cache, const Tensor<T>& dy,
                     const FwdCtx& ctx, ParamGradList<T>* pg) const override {
    const auto& s = this->spec_;
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    const std::size_t m = static_cast<std::size_t>(n) * plane;
    Tensor<T> dx(x.shape);
    Tensor<T>* dgamma = pg ? &(*pg)[0] : nullptr;
    Tensor<T>* dbeta = pg ? &(*pg)[1] : nullptr;
    if (ctx.train) {
      if (cache.aux.size() != 3) throw NumericError("batch_norm: stale activations");
      const Tensor<T>& xhat = cache.aux[0];
      const Tensor<T>& inv_std = cache.aux[1];
      for (int ci = 0; ci < c; ++ci) {
        double sum_dy = 0.0, sum_dy_xhat = 0.0;
        for (int b = 0; b < n; ++b) {
          const std::size_t base = (static_cast<std::size_t>(b) * c + ci) * plane;
          const T* g = dy.ptr() + base;
          const T* xh = xhat.ptr() + base;
          for (std::size_t i = 0; i < plane; ++i) {
            sum_dy += static_cast<double>(g[i]);
            sum_dy_xhat += static_cast<double>(g[i]) * xh[i];
          }
        }
        if (dgamma) dgamma->data[ci] += static_cast<T>(sum_dy_xhat);
        if (dbeta) dbeta->data[ci] += static_cast<T>(sum_dy);
        const double gm = static_cast<double>(gamma_.data[ci]);
        const double istd = static_cast<double>(inv_std.data[ci]);
        const double k = gm * istd / static_cast<double>(m);
        for (int b = 0; b < n; ++b) {
          const std::size_t base = (static_cast<std::size_t>(b) * c + ci) * plane;
          const T* g = dy.ptr() + base;
          const T* xh = xhat.ptr() + base;
          T* d = dx.ptr() + base;
          for (std::size_t i = 0; i < plane; ++i) {
            d[i] = static_cast<T>(k * (static_cast<double>(m) * g[i] - sum_dy -
                                       static_cast<double>(xh[i]) * sum_dy_xhat));
          }
        }
      }
    } else {
      for (int ci = 0; ci < c; ++ci) {
        const double istd = 1.0 / std::sqrt(static_cast<double>(running_var_.data[ci]) + s.eps);
        const double mu = static_cast<double>(running_mean_.data[ci]);
        const double gm = static_cast<double>(gamma_.data[ci]);
        double sum_dy = 0.0, sum_dy_xhat = 0.0;
        for (int b = 0; b < n; ++b) {
          const std::size_t base = (static_cast<std::size_t>(b) * c + ci) * plane;
          const T* g = dy.ptr() + base;
          const T* p = x.ptr() + base;
          T* d = dx.ptr() + base;
          for (std::size_t i = 0; i < plane; ++i) {
            const double xh = (static_cast<double>(p[i]) - mu) * istd;
            sum_dy += static_cast<double>(g[i]);
            sum_dy_xhat += static_cast<double>(g[i]) * xh;
            d[i] = static_cast<T>(gm * istd * static_cast<double>(g[i]));
          }
        }
        if (dgamma) dgamma->data[ci] += static_cast<T>(sum_dy_xhat);
        if (dbeta) dbeta->data[ci] += static_cast<T>(sum_dy);
      }
    }
    return dx;
  }

  std::vector<NamedParam<T>> params() override {
    return {{"gamma", &gamma_}, {"beta", &beta_}};
  }

  std::vector<NamedParam<T>> buffers() override {
    return {{"running_mean", &running_mean_}, {"running_var", &running_var_}};
  }

 private:
  Tensor<T> gamma_, beta_;
  mutable Tensor<T> running_mean_, running_var_;
};

// ---------------------------------------------------------------------------
// Elementwise layers
// ---------------------------------------------------------------------------

template <typename T>
class EluLayer final : public Layer<T> {
 public:
  explicit EluLayer(LayerSpec spec) : Layer<T>(std::move(spec)) {}

  std::vector<int> out_shape(const std::vector<int>& in) const override { return in; }

  void forward(const Tensor<T>& x, NodeCache<T>& cache, const FwdCtx&) const override {
    cache.out = Tensor<T>(x.shape);
    const T* p = x.ptr();
    T* y = cache.out.ptr();
    for (std::size_t i = 0; i < x.numel(); ++i)
      y[i] = p[i] > T(0) ? p[i] : static_cast<T>(std::expm1(static_cast<double>(p[i])));
  }

  Tensor<T> backward(const Tensor<T>& x, const NodeCache<T>& cache, const Tensor<T>& dy,
                     const FwdCtx&, ParamGradList<T>*) const override {
    Tensor<T> dx(x.shape);
    const T* p = x.ptr();
    const T* y = cache.out.ptr();
    const T* g = dy.ptr();
    T* d = dx.ptr();
    for (std::size_t i = 0; i < x.numel(); ++i)
      d[i] = p[i] > T(0) ? g[i] : g[i] * (y[i] + T(1));
    return dx;
  }
};

template <typename T>
class SigmoidLayer final : public Layer<T> {
 public:
  explicit SigmoidLayer(LayerSpec spec) : Layer<T>(std::move(spec)) {}

  std::vector<int> out_shape(const std::vector<int>& in) const override { return in; }

  void forward(const Tensor<T>& x, NodeCache<T>& cache, const FwdCtx&) const override {
    cache.out = Tensor<T>(x.shape);
    const T* p = x.ptr();
    T* y = cache.out.ptr();
    for (std::size_t i = 0; i < x.numel(); ++i)
      y[i] = static_cast<T>(1.0 / (1.0 + std::exp(-static_cast<double>(p[i]))));
  }

  Tensor<T> backward(const Tensor<T>& x, const NodeCache<T>& cache, const Tensor<T>& dy,
                     const FwdCtx&, ParamGradList<T>*) const override {
    Tensor<T> dx(x.shape);
    const T* y = cache.out.ptr();
    const T* g = dy.ptr();
    T* d = dx.ptr();
    for (std::size_t i = 0; i < x.numel(); ++i) d[i] = g[i] * y[i] * (T(1) - y[i]);
    return dx;
  }
};

// ---------------------------------------------------------------------------
// AvgPool with window == stride; remainder rows/columns are dropped.
// ---------------------------------------------------------------------------

template <typename T>
class AvgPoolLayer final : public Layer<T> {
 public:
  explicit AvgPoolLayer(LayerSpec spec) : Layer<T>(std::move(spec)) {
    detail::require(this->spec_.ph > 0 && this->spec_.pw > 0, this->spec_.name,
                    "invalid pool window");
  }

  std::vector<int> out_shape(const std::vector<int>& in) const override {
    const auto& s = this->spec_;
    detail::require(in.size() == 4, s.name, "avg_pool expects rank-4 input");
    const int oh = in[2] / s.ph, ow = in[3] / s.pw;
    detail::require(oh > 0 && ow > 0, s.name, "input smaller than pool window");
    return {in[0], in[1], oh, ow};
  }

  void forward(const Tensor<T>& x, NodeCache<T>& cache, const FwdCtx&) const override {
    const auto& s = this->spec_;
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const int oh = h / s.ph, ow = w / s.pw;
    cache.out = Tensor<T>({n, c, oh, ow});
    const double inv = 1.0 / (static_cast<double>(s.ph) * s.pw);
    for (int bc = 0; bc < n * c; ++bc) {
      const T* im = x.ptr() + static_cast<std::size_t>(bc) * h * w;
      T* om = cache.out.ptr() + static_cast<std::size_t>(bc) * oh * ow;
      for (int r = 0; r < oh; ++r) {
        for (int cidx = 0; cidx < ow; ++cidx) {
          double acc = 0.0;
          for (int pr = 0; pr < s.ph; ++pr) {
            const T* xr = im + static_cast<std::size_t>(r * s.ph + pr) * w + cidx * s.pw;
            for (int pc = 0; pc < s.pw; ++pc) acc += static_cast<double>(xr[pc]);
          }
          om[static_cast<std::size_t>(r) * ow + cidx] = static_cast<T>(acc * inv);
        }
      }
    }
  }

  Tensor<T> backward(const Tensor<T>& x, const NodeCache<T>& cache, const Tensor<T>& dy,
                     const FwdCtx&, ParamGradList<T>*) const override {
    const auto& s = this->spec_;
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const int oh = cache.out.dim(2), ow = cache.out.dim(3);
    Tensor<T> dx(x.shape);
    const T inv = static_cast<T>(1.0 / (static_cast<double>(s.ph) * s.pw));
    for (int bc = 0; bc < n * c; ++bc) {
      const T* gm = dy.ptr() + static_cast<std::size_t>(bc) * oh * ow;
      T* dm = dx.ptr() + static_cast<std::size_t>(bc) * h * w;
      for (int r = 0; r < oh; ++r) {
        for (int cidx = 0; cidx < ow; ++cidx) {
          const T g = gm[static_cast<std::size_t>(r) * ow + cidx] * inv;
          for (int pr = 0; pr < s.ph; ++pr) {
            T* dr = dm + static_cast<std::size_t>(r * s.ph + pr) * w + cidx * s.pw;
            for (int pc = 0; pc < s.pw; ++pc) dr[pc] += g;
          }
        }
      }
    }
    return dx;
  }
};

// ---------------------------------------------------------------------------
// Dropout: inverted scaling, counter-based mask so a (seed, node, index)
// triple fully determines every mask bit.
// ---------------------------------------------------------------------------

template <typename T>
class DropoutLayer final : public Layer<T> {
 public:
  explicit DropoutLayer(LayerSpec spec) : Layer<T>(std::move(spec)), salt_(hash_str(this->spec_.name)) {
    detail::require(this->spec_.rate >= 0.0 && this->spec_.rate < 1.0, this->spec_.name,
                    "dropout rate must be in [0, 1)");
  }

  std::vector<int> out_shape(const std::vector<int>& in) const override { return in; }

  void forward(const Tensor<T>& x, NodeCache<T>& cache, const FwdCtx& ctx) const override {
    const double rate = this->spec_.rate;
    if (!ctx.train || rate == 0.0) {
      cache.out = x;
      return;
    }
    const double keep = 1.0 - rate;
    const T scale = static_cast<T>(1.0 / keep);
    Tensor<T> mask(x.shape);
    cache.out = Tensor<T>(x.shape);
    const std::uint64_t base = hash_combine(ctx.dropout_seed, salt_);
    for (std::size_t i = 0; i < x.numel(); ++i) {
      const double u = static_cast<double>(splitmix64(base + i) >> 11) * 0x1.0p-53;
      const T m = u < keep ? scale : T(0);
      mask.data[i] = m;
      cache.out.data[i] = x.data[i] * m;
    }
    cache.aux = {std::move(mask)};
  }

  Tensor<T> backward(const Tensor<T>& x, const NodeCache<T>& cache, const Tensor<T>& dy,
                     const FwdCtx& ctx, ParamGradList<T>*) const override {
    if (!ctx.train || this->spec_.rate == 0.0) return dy;
    if (cache.aux.size() != 1) throw NumericError("dropout: stale activations");
    const Tensor<T>& mask = cache.aux[0];
    Tensor<T> dx(x.shape);
    for (std::size_t i = 0; i < x.numel(); ++i) dx.data[i] = dy.data[i] * mask.data[i];
    return dx;
  }

 private:
  std::uint64_t salt_;
};

// ---------------------------------------------------------------------------
// Flatten
// ---------------------------------------------------------------------------

template <typename T>
class FlattenLayer final : public Layer<T> {
 public:
  explicit FlattenLayer(LayerSpec spec) : Layer<T>(std::move(spec)) {}

  std::vector<int> out_shape(const std::vector<int>& in) const override {
    detail::require(!in.empty(), this->spec_.name, "flatten needs input");
    int d = 1;
    for (std::size_t i = 1; i < in.size(); ++i) d *= in[i];
    return {in[0], d};
  }

  void forward(const Tensor<T>& x, NodeCache<T>& cache, const FwdCtx&) const override {
    cache.out = Tensor<T>(out_shape(x.shape), x.data);
  }

  Tensor<T> backward(const Tensor<T>& x, const NodeCache<T>&, const Tensor<T>& dy, const FwdCtx&,
                     ParamGradList<T>*) const override {
    return Tensor<T>(x.shape, dy.data);
  }
};

// ---------------------------------------------------------------------------
// SqueezeExcite: global average pool -> bottleneck (ReLU) -> expand ->
// sigmoid gate, applied multiplicatively per map.
// ---------------------------------------------------------------------------

template <typename T>
class SqueezeExciteLayer final : public Layer<T> {
 public:
  explicit SqueezeExciteLayer(LayerSpec spec) : Layer<T>(std::move(spec)) {
    const auto& s = this->spec_;
    detail::require(s.in_maps > 0 && s.reduction > 0 && s.in_maps % s.reduction == 0, s.name,
                    "maps must be divisible by the reduction");
    const int cr = s.in_maps / s.reduction;
    w1_ = Tensor<T>({cr, s.in_maps});
    b1_ = Tensor<T>({cr});
    w2_ = Tensor<T>({s.in_maps, cr});
    b2_ = Tensor<T>({s.in_maps});
  }

  std::vector<int> out_shape(const std::vector<int>& in) const override {
    const auto& s = this->spec_;
    detail::require(in.size() == 4, s.name, "squeeze_excite expects rank-4 input");
    detail::require(in[1] == s.in_maps, s.name,
                    "expected " + std::to_string(s.in_maps) + " maps, got " + std::to_string(in[1]));
    return in;
  }

  void forward(const Tensor<T>& x, NodeCache<T>& cache, const FwdCtx&) const override {
    const auto& s = this->spec_;
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const int cr = c / s.reduction;
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    Tensor<T> pooled({n, c}), pre({n, cr}), mid({n, cr}), gate({n, c});
    cache.out = Tensor<T>(x.shape);
    for (int b = 0; b < n; ++b) {
      T* sv = pooled.ptr() + static_cast<std::size_t>(b) * c;
      for (int ci = 0; ci < c; ++ci) {
        const T* p = x.ptr() + (static_cast<std::size_t>(b) * c + ci) * plane;
        double acc = 0.0;
        for (std::size_t i = 0; i < plane; ++i) acc += static_cast<double>(p[i]);
        sv[ci] = static_cast<T>(acc / static_cast<double>(plane));
      }
      T* uv = pre.ptr() + static_cast<std::size_t>(b) * cr;
      T* rv = mid.ptr() + static_cast<std::size_t>(b) * cr;
      for (int o = 0; o < cr; ++o) {
        const T* wr = w1_.ptr() + static_cast<std::size_t>(o) * c;
        double acc = static_cast<double>(b1_.data[o]);
        for (int ci = 0; ci < c; ++ci) acc += static_cast<double>(wr[ci]) * sv[ci];
        uv[o] = static_cast<T>(acc);
        rv[o] = uv[o] > T(0) ? uv[o] : T(0);
      }
      T* gv = gate.ptr() + static_cast<std::size_t>(b) * c;
      for (int ci = 0; ci < c; ++ci) {
        const T* wr = w2_.ptr() + static_cast<std::size_t>(ci) * cr;
        double acc = static_cast<double>(b2_.data[ci]);
        for (int o = 0; o < cr; ++o) acc += static_cast<double>(wr[o]) * rv[o];
        gv[ci] = static_cast<T>(1.0 / (1.0 + std::exp(-acc)));
      }
      for (int ci = 0; ci < c; ++ci) {
        const T* p = x.ptr() + (static_cast<std::size_t>(b) * c + ci) * plane;
        T* y = cache.out.ptr() + (static_cast<std::size_t>(b) * c + ci) * plane;
        const T g = gv[ci];
        for (std::size_t i = 0; i < plane; ++i) y[i] = p[i] * g;
      }
    }
    cache.aux = {std::move(pooled), std::move(pre), std::move(mid), std::move(gate)};
  }

  Tensor<T> backward(const Tensor<T>& x, const NodeCache<T>& cache, const Tensor<T>& dy,
                     const FwdCtx&, ParamGradList<T>* pg) const override {
    const auto& s = this->spec_;
    if (cache.aux.size() != 4) throw NumericError("squeeze_excite: stale activations");
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const int cr = c / s.reduction;
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    const Tensor<T>& pooled = cache.aux[0];
    const Tensor<T>& pre = cache.aux[1];
    const Tensor<T>& mid = cache.aux[2];
    const Tensor<T>& gate = cache.aux[3];
    Tensor<T> dx(x.shape);
    Tensor<T>* dw1 = pg ? &(*pg)[0] : nullptr;
    Tensor<T>* db1 = pg ? &(*pg)[1] : nullptr;
    Tensor<T>* dw2 = pg ? &(*pg)[2] : nullptr;
    Tensor<T>* db2 = pg ? &(*pg)[3] : nullptr;
    std::vector<double> dg(c), dv(c), dr(cr), du(cr), ds(c);
    for (int b = 0; b < n; ++b) {
      const T* sv = pooled.ptr() + static_cast<std::size_t>(b) * c;
      const T* uv = pre.ptr() + static_cast<std::size_t>(b) * cr;
      const T* rv = mid.ptr() + static_cast<std::size_t>(b) * cr;
      const T* gv = gate.ptr() + static_cast<std::size_t>(b) * c;
      for (int ci = 0; ci < c; ++ci) {
        const std::size_t base = (static_cast<std::size_t>(b) * c + ci) * plane;
        const T* p = x.ptr() + base;
        const T* g = dy.ptr() + base;
        T* d = dx.ptr() + base;
        double acc = 0.0;
        const T gv_ci = gv[ci];
        for (std::size_t i = 0; i < plane; ++i) {
          acc += static_cast<double>(g[i]) * p[i];
          d[i] = g[i] * gv_ci;
        }
        dg[ci] = acc;
        const double sg = static_cast<double>(gv_ci);
        dv[ci] = dg[ci] * sg * (1.0 - sg);
      }
      for (int o = 0; o < cr; ++o) {
        double acc = 0.0;
        for (int ci = 0; ci < c; ++ci) acc += dv[ci] * static_cast<double>(w2_.data[static_cast<std::size_t>(ci) * cr + o]);
        dr[o] = acc;
        du[o] = uv[o] > T(0) ? dr[o] : 0.0;
      }
      if (dw2) {
        for (int ci = 0; ci < c; ++ci) {
          T* row = dw2->ptr() + static_cast<std::size_t>(ci) * cr;
          for (int o = 0; o < cr; ++o) row[o] += static_cast<T>(dv[ci] * static_cast<double>(rv[o]));
          db2->data[ci] += static_cast<T>(dv[ci]);
        }
      }
      for (int ci = 0; ci < c; ++ci) {
        double acc = 0.0;
        for (int o = 0; o < cr; ++o) acc += du[o] * static_cast<double>(w1_.data[static_cast<std::size_t>(o) * c + ci]);
        ds[ci] = acc;
      }
      if (dw1) {
        for (int o = 0; o < cr; ++o) {
          T* row = dw1->ptr() + static_cast<std::size_t>(o) * c;
          for (int ci = 0; ci < c; ++ci) row[ci] += static_cast<T>(du[o] * static_cast<double>(sv[ci]));
          db1->data[o] += static_cast<T>(du[o]);
        }
      }
      for (int ci = 0; ci < c; ++ci) {
        const T add = static_cast<T>(ds[ci] / static_cast<double>(plane));
        T* d = dx.ptr() + (static_cast<std::size_t>(b) * c + ci) * plane;
        for (std::size_t i = 0; i < plane; ++i) d[i] += add;
      }
    }
    return dx;
  }

  std::vector<NamedParam<T>> params() override {
    return {{"w1", &w1_}, {"b1", &b1_}, {"w2", &w2_}, {"b2", &b2_}};
  }

  void init_params(Rng& rng) override {
    const auto& s = this->spec_;
    const int cr = s.in_maps / s.reduction;
    const double std1 = std::sqrt(2.0 / s.in_maps);
    const double std2 = std::sqrt(2.0 / cr);
    for (auto& v : w1_.data) v = static_cast<T>(rng.normal() * std1);
    for (auto& v : w2_.data) v = static_cast<T>(rng.normal() * std2);
    b1_.fill(T(0));
    b2_.fill(T(0));
  }

 private:
  Tensor<T> w1_, b1_, w2_, b2_;
};

// ---------------------------------------------------------------------------

template <typename T>
std::unique_ptr<Layer<T>> make_layer(const LayerSpec& spec) {
  switch (spec.kind) {
    case LayerKind::conv2d: return std::make_unique<Conv2dLayer<T>>(spec);
    case LayerKind::depthwise_conv2d: return std::make_unique<DepthwiseConv2dLayer<T>>(spec);
    case LayerKind::dense: return std::make_unique<DenseLayer<T>>(spec);
    case LayerKind::batch_norm: return std::make_unique<BatchNormLayer<T>>(spec);
    case LayerKind::elu: return std::make_unique<EluLayer<T>>(spec);
    case LayerKind::sigmoid: return std::make_unique<SigmoidLayer<T>>(spec);
    case LayerKind::avg_pool: return std::make_unique<AvgPoolLayer<T>>(spec);
    case LayerKind::dropout: return std::make_unique<DropoutLayer<T>>(spec);
    case LayerKind::flatten: return std::make_unique<FlattenLayer<T>>(spec);
    case LayerKind::squeeze_excite: return std::make_unique<SqueezeExciteLayer<T>>(spec);
  }
  throw ConfigError("unknown layer kind");
}

}  // namespace erpcond
