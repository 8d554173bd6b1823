// Copyright (c) 2026 erpcond authors
// SPDX-License-Identifier: Apache-2.0
//
// Subject embedding table and the two conditioning mechanisms. Projection
// rescales the feature vector by its alignment with the subject vector,
// h~ = (h.e) h; FiLM modulates per dimension, h~ = gamma*h + beta with the
// row split into halves. Rows are free parameters during optimization and
// are re-projected to unit norm (per half for FiLM) after every step, so a
// forward pass always sees normalized rows.

#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "erpcond/core/rng.hpp"
#include "erpcond/core/tensor.hpp"

namespace erpcond {

enum class CondMode { projection, film };

inline const char* cond_mode_name(CondMode m) {
  return m == CondMode::projection ? "projection" : "film";
}

inline CondMode cond_mode_from_name(const std::string& s) {
  if (s == "projection") return CondMode::projection;
  if (s == "film") return CondMode::film;
  throw ConfigError("unknown conditioning mode '" + s + "' (expected projection|film)");
}

/// Row length for feature dimension d.
inline int cond_row_len(CondMode mode, int d) { return mode == CondMode::film ? 2 * d : d; }

// ---------------------------------------------------------------------------
// Mechanism math (templated so finite-difference checks can run in double).
// ---------------------------------------------------------------------------

template <typename T>
void condition_forward_item(CondMode mode, const T* h, const T* e, T* out, int d) {
  if (mode == CondMode::projection) {
    double lambda = 0.0;
    for (int i = 0; i < d; ++i) lambda += static_cast<double>(h[i]) * e[i];
    for (int i = 0; i < d; ++i) out[i] = static_cast<T>(lambda * h[i]);
  } else {
    const T* gamma = e;
    const T* beta = e + d;
    for (int i = 0; i < d; ++i) out[i] = gamma[i] * h[i] + beta[i];
  }
}

/// dh is overwritten; de is accumulated (so one subject's row can gather
/// gradients from many items in a batch).
template <typename T>
void condition_backward_item(CondMode mode, const T* h, const T* e, const T* dy, T* dh, T* de,
                             int d) {
  if (mode == CondMode::projection) {
    double lambda = 0.0, dyh = 0.0;
    for (int i = 0; i < d; ++i) {
      lambda += static_cast<double>(h[i]) * e[i];
      dyh += static_cast<double>(dy[i]) * h[i];
    }
    for (int i = 0; i < d; ++i) {
      dh[i] = static_cast<T>(lambda * dy[i] + dyh * e[i]);
      if (de) de[i] += static_cast<T>(dyh * h[i]);
    }
  } else {
    const T* gamma = e;
    for (int i = 0; i < d; ++i) {
      dh[i] = gamma[i] * dy[i];
      if (de) {
        de[i] += dy[i] * h[i];  // d/dgamma
        de[d + i] += dy[i];     // d/dbeta
      }
    }
  }
}

template <typename T>
std::vector<T> condition_projection(const std::vector<T>& h, const std::vector<T>& e) {
  if (h.size() != e.size())
    throw ConfigError("condition_projection: feature dim " + std::to_string(h.size()) +
                      " vs embedding dim " + std::to_string(e.size()));
  std::vector<T> out(h.size());
  condition_forward_item(CondMode::projection, h.data(), e.data(), out.data(),
                         static_cast<int>(h.size()));
  return out;
}

template <typename T>
std::vector<T> condition_film(const std::vector<T>& h, const std::vector<T>& e) {
  if (e.size() % 2 != 0)
    throw ConfigError("condition_film: embedding length must be even, got " +
                      std::to_string(e.size()));
  if (e.size() != 2 * h.size())
    throw ConfigError("condition_film: embedding length " + std::to_string(e.size()) +
                      " must be twice the feature dim " + std::to_string(h.size()));
  std::vector<T> out(h.size());
  condition_forward_item(CondMode::film, h.data(), e.data(), out.data(),
                         static_cast<int>(h.size()));
  return out;
}

// ---------------------------------------------------------------------------
// EmbeddingTable
// ---------------------------------------------------------------------------

class EmbeddingTable {
 public:
  EmbeddingTable() = default;

  /// Random unit rows for the given subjects, deterministic in seed.
  EmbeddingTable(CondMode mode, int d, const std::vector<std::string>& subject_ids,
                 std::uint64_t seed)
      : mode_(mode), d_(d) {
    if (d <= 0) throw ConfigError("embedding table: feature dim must be positive");
    Rng rng(seed);
    for (const auto& id : subject_ids) {
      if (index_.count(id)) throw ConfigError("embedding table: duplicate subject '" + id + "'");
      TensorF row({cond_row_len(mode, d)});
      for (auto& v : row.data) v = static_cast<float>(rng.normal());
      index_[id] = static_cast<int>(rows_.size());
      subjects_.push_back(id);
      rows_.push_back(std::move(row));
    }
    normalize();
  }

  CondMode mode() const { return mode_; }
  int feature_dim() const { return d_; }
  int row_len() const { return cond_row_len(mode_, d_); }
  std::size_t size() const { return rows_.size(); }
  const std::vector<std::string>& subjects() const { return subjects_; }
  bool has_subject(const std::string& id) const { return index_.count(id) != 0; }

  const TensorF& lookup(const std::string& id) const {
    auto it = index_.find(id);
    if (it == index_.end())
      throw DataError("embedding table: unknown subject '" + id +
                      "' (no silent default; register it with add_subject)");
    return rows_[static_cast<std::size_t>(it->second)];
  }

  TensorF& row_mut(const std::string& id) {
    auto it = index_.find(id);
    if (it == index_.end()) throw DataError("embedding table: unknown subject '" + id + "'");
    return rows_[static_cast<std::size_t>(it->second)];
  }

  /// Re-projects every row (per half in film mode) to unit L2 norm.
  void normalize() {
    for (auto& row : rows_) normalize_row(row);
  }

  /// Re-projects one subject's row, leaving every other row bit-identical —
  /// required when only that row is trainable.
  void normalize_subject(const std::string& id) { normalize_row(row_mut(id)); }

  void add_subject(const std::string& id, const std::string& strategy, std::uint64_t seed = 0) {
    if (index_.count(id)) throw ConfigError("embedding table: subject '" + id + "' already exists");
    TensorF row({row_len()});
    if (strategy == "mean") {
      if (rows_.empty()) throw DataError("embedding table: mean strategy needs existing rows");
      for (const auto& r : rows_)
        for (std::size_t i = 0; i < row.numel(); ++i) row.data[i] += r.data[i];
      for (auto& v : row.data) v /= static_cast<float>(rows_.size());
    } else if (strategy == "random") {
      Rng rng(hash_combine(seed, hash_str(id)));
      for (auto& v : row.data) v = static_cast<float>(rng.normal());
    } else {
      throw ConfigError("embedding table: unknown add strategy '" + strategy +
                        "' (expected mean|random)");
    }
    normalize_row(row);
    index_[id] = static_cast<int>(rows_.size());
    subjects_.push_back(id);
    rows_.push_back(std::move(row));
  }

  std::size_t param_count() const {
    return rows_.size() * static_cast<std::size_t>(row_len());
  }

  /// Full parameter names ("cond.row.<subject>") with live tensors, for the
  /// optimizer and the freeze rules.
  template <typename Fn>
  void for_each_row(Fn&& fn) {
    for (std::size_t i = 0; i < rows_.size(); ++i) fn("cond.row." + subjects_[i], rows_[i]);
  }

  template <typename Fn>
  void for_each_row(Fn&& fn) const {
    for (std::size_t i = 0; i < rows_.size(); ++i)
      fn("cond.row." + subjects_[i], static_cast<const TensorF&>(rows_[i]));
  }

  /// Checks the unit-norm invariant (1e-6 tolerance).
  bool is_normalized() const {
    for (const auto& row : rows_)
      for (double n : half_norms(row))
        if (std::abs(n - 1.0) > 1e-6) return false;
    return true;
  }

 private:
  std::vector<double> half_norms(const TensorF& row) const {
    std::vector<double> out;
    const int halves = mode_ == CondMode::film ? 2 : 1;
    const int len = row_len() / halves;
    for (int h = 0; h < halves; ++h) {
      double ss = 0.0;
      for (int i = 0; i < len; ++i) {
        const double v = row.data[static_cast<std::size_t>(h * len + i)];
        ss += v * v;
      }
      out.push_back(std::sqrt(ss));
    }
    return out;
  }

  void normalize_row(TensorF& row) const {
    const int halves = mode_ == CondMode::film ? 2 : 1;
    const int len = row_len() / halves;
    for (int h = 0; h < halves; ++h) {
      double ss = 0.0;
      for (int i = 0; i < len; ++i) {
        const double v = row.data[static_cast<std::size_t>(h * len + i)];
        ss += v * v;
      }
      const double norm = std::sqrt(ss);
      if (!(norm > 1e-12))
        throw NumericError("embedding table: zero-norm row (half " + std::to_string(h) +
                           ") cannot be normalized");
      const float inv = static_cast<float>(1.0 / norm);
      for (int i = 0; i < len; ++i) row.data[static_cast<std::size_t>(h * len + i)] *= inv;
    }
  }

  CondMode mode_ = CondMode::projection;
  int d_ = 0;
  std::vector<std::string> subjects_;
  std::vector<TensorF> rows_;
  std::map<std::string, int> index_;
};

}  // namespace erpcond
