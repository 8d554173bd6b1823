// Copyright (c) 2026 erpcond authors
// SPDX-License-Identifier: Apache-2.0
//
// Two-dimensional view of the subject-embedding table: rows are centered,
// projected onto the top two principal components, and clustered with seeded
// k-means. PCA (deterministic, dependency-free) stands in for the paper's
// stochastic neighborhood projection; the substitution is recorded in the
// export metadata.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "erpcond/conditioning/embedding.hpp"

namespace erpcond {

struct EmbeddingProjection {
  std::vector<std::string> subjects;
  std::vector<std::array<double, 2>> coords;   // PCA scores, zero-mean
  std::vector<int> clusters;                   // k-means label per subject
  std::array<double, 2> variance_explained{};  // fraction per component
};

namespace detail {

/// Cyclic Jacobi eigendecomposition of a symmetric matrix (row-major n x n).
/// Eigenvalues land in `vals`, the matching eigenvectors in the columns of
/// `vecs`, unsorted.
inline void jacobi_eigen(std::vector<double> a, int n, std::vector<double>& vals,
                         std::vector<double>& vecs) {
  vecs.assign(static_cast<std::size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i) vecs[static_cast<std::size_t>(i) * n + i] = 1.0;
  auto at = [&](std::vector<double>& m, int r, int c) -> double& {
    return m[static_cast<std::size_t>(r) * n + c];
  };
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0, diag = 0.0;
    for (int p = 0; p < n; ++p) {
      diag += std::abs(at(a, p, p));
      for (int q = p + 1; q < n; ++q) off += std::abs(at(a, p, q));
    }
    if (off <= 1e-14 * (diag + 1e-300)) break;
    for (int p = 0; p < n; ++p)
      for (int q = p + 1; q < n; ++q) {
        const double apq = at(a, p, q);
        if (std::abs(apq) <= 1e-300) continue;
        const double theta = (at(a, q, q) - at(a, p, p)) / (2.0 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (int i = 0; i < n; ++i) {
          const double aip = at(a, i, p), aiq = at(a, i, q);
          at(a, i, p) = c * aip - s * aiq;
          at(a, i, q) = s * aip + c * aiq;
        }
        for (int i = 0; i < n; ++i) {
          const double api = at(a, p, i), aqi = at(a, q, i);
          at(a, p, i) = c * api - s * aqi;
          at(a, q, i) = s * api + c * aqi;
        }
        for (int i = 0; i < n; ++i) {
          const double vip = at(vecs, i, p), viq = at(vecs, i, q);
          at(vecs, i, p) = c * vip - s * viq;
          at(vecs, i, q) = s * vip + c * viq;
        }
      }
  }
  vals.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) vals[static_cast<std::size_t>(i)] = at(a, i, i);
}

/// One seeded Lloyd run; returns the inertia and fills `labels`.
inline double kmeans_once(const std::vector<std::array<double, 2>>& pts, int k, Rng& rng,
                          std::vector<int>& labels) {
  const std::size_t n = pts.size();
  const auto pick = rng.sample_indices(n, static_cast<std::size_t>(k));
  std::vector<std::array<double, 2>> centroids;
  for (std::size_t idx : pick) centroids.push_back(pts[idx]);

  labels.assign(n, 0);
  auto dist2 = [](const std::array<double, 2>& a, const std::array<double, 2>& b) {
    const double dx = a[0] - b[0], dy = a[1] - b[1];
    return dx * dx + dy * dy;
  };

  for (int iter = 0; iter < 100; ++iter) {
    bool changed = false;
    for (std::size_t i = 0; i < n; ++i) {
      int best = 0;
      double bd = dist2(pts[i], centroids[0]);
      for (int c = 1; c < k; ++c) {
        const double d = dist2(pts[i], centroids[static_cast<std::size_t>(c)]);
        if (d < bd) {
          bd = d;
          best = c;
        }
      }
      if (labels[i] != best) {
        labels[i] = best;
        changed = true;
      }
    }
    std::vector<std::array<double, 2>> sums(static_cast<std::size_t>(k), {0.0, 0.0});
    std::vector<std::size_t> counts(static_cast<std::size_t>(k), 0);
    for (std::size_t i = 0; i < n; ++i) {
      sums[static_cast<std::size_t>(labels[i])][0] += pts[i][0];
      sums[static_cast<std::size_t>(labels[i])][1] += pts[i][1];
      ++counts[static_cast<std::size_t>(labels[i])];
    }
    for (int c = 0; c < k; ++c) {
      if (counts[static_cast<std::size_t>(c)] == 0) {
        // Re-seed an emptied cluster at the point farthest from its centroid.
        std::size_t far = 0;
        double fd = -1.0;
        for (std::size_t i = 0; i < n; ++i) {
          const double d = dist2(pts[i], centroids[static_cast<std::size_t>(labels[i])]);
          if (d > fd) {
            fd = d;
            far = i;
          }
        }
        centroids[static_cast<std::size_t>(c)] = pts[far];
        changed = true;
      } else {
        centroids[static_cast<std::size_t>(c)] = {
            sums[static_cast<std::size_t>(c)][0] /
                static_cast<double>(counts[static_cast<std::size_t>(c)]),
            sums[static_cast<std::size_t>(c)][1] /
                static_cast<double>(counts[static_cast<std::size_t>(c)])};
      }
    }
    if (!changed) break;
  }

  double inertia = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    inertia += dist2(pts[i], centroids[static_cast<std::size_t>(labels[i])]);
  return inertia;
}

}  // namespace detail

inline EmbeddingProjection embedding_projection(const EmbeddingTable& table, int k,
                                                std::uint64_t seed) {
  const int n = static_cast<int>(table.size());
  if (k < 1) throw ConfigError("embedding projection: cluster count must be at least 1");
  if (k > n)
    throw ConfigError("embedding projection: " + std::to_string(k) + " clusters exceed " +
                      std::to_string(n) + " subjects");

  EmbeddingProjection out;
  const int L = table.row_len();
  std::vector<double> X;
  X.reserve(static_cast<std::size_t>(n) * L);
  table.for_each_row([&](const std::string& name, const TensorF& row) {
    out.subjects.push_back(name.substr(std::string("cond.row.").size()));
    for (std::size_t i = 0; i < row.numel(); ++i) X.push_back(row.data[i]);
  });

  // Center columns.
  for (int j = 0; j < L; ++j) {
    double mean = 0.0;
    for (int i = 0; i < n; ++i) mean += X[static_cast<std::size_t>(i) * L + j];
    mean /= static_cast<double>(n);
    for (int i = 0; i < n; ++i) X[static_cast<std::size_t>(i) * L + j] -= mean;
  }

  // PCA through the Gram matrix (n x n), fine for cohort-sized tables.
  std::vector<double> gram(static_cast<std::size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i)
    for (int j = i; j < n; ++j) {
      double dot = 0.0;
      for (int c = 0; c < L; ++c)
        dot += X[static_cast<std::size_t>(i) * L + c] * X[static_cast<std::size_t>(j) * L + c];
      gram[static_cast<std::size_t>(i) * n + j] = dot;
      gram[static_cast<std::size_t>(j) * n + i] = dot;
    }
  std::vector<double> vals, vecs;
  detail::jacobi_eigen(gram, n, vals, vecs);

  std::vector<int> order(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  std::sort(order.begin(), order.end(),
            [&](int a, int b) { return vals[static_cast<std::size_t>(a)] >
                                       vals[static_cast<std::size_t>(b)]; });

  double total_var = 0.0;
  for (double v : vals) total_var += std::max(0.0, v);

  out.coords.assign(static_cast<std::size_t>(n), {0.0, 0.0});
  for (int comp = 0; comp < 2 && comp < n; ++comp) {
    const int e = order[static_cast<std::size_t>(comp)];
    const double lambda = std::max(0.0, vals[static_cast<std::size_t>(e)]);
    const double scale = std::sqrt(lambda);
    // Scores = eigenvector * singular value; fix the sign by the largest
    // coordinate so the output is reproducible.
    std::vector<double> score(static_cast<std::size_t>(n));
    double peak = 0.0;
    for (int i = 0; i < n; ++i) {
      score[static_cast<std::size_t>(i)] =
          vecs[static_cast<std::size_t>(i) * n + e] * scale;
      if (std::abs(score[static_cast<std::size_t>(i)]) > std::abs(peak))
        peak = score[static_cast<std::size_t>(i)];
    }
    const double sign = peak < 0 ? -1.0 : 1.0;
    for (int i = 0; i < n; ++i)
      out.coords[static_cast<std::size_t>(i)][static_cast<std::size_t>(comp)] =
          sign * score[static_cast<std::size_t>(i)];
    out.variance_explained[static_cast<std::size_t>(comp)] =
        total_var > 0.0 ? lambda / total_var : 0.0;
  }

  // Seeded k-means with restarts; the best inertia wins, first hit on ties.
  Rng rng(seed);
  double best_inertia = -1.0;
  std::vector<int> labels;
  for (int restart = 0; restart < 50; ++restart) {
    std::vector<int> trial;
    const double inertia = detail::kmeans_once(out.coords, k, rng, trial);
    if (best_inertia < 0.0 || inertia < best_inertia) {
      best_inertia = inertia;
      labels = std::move(trial);
    }
  }
  out.clusters = std::move(labels);
  return out;
}

}  // namespace erpcond
