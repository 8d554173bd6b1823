// Copyright (c) 2026 erpcond authors
// SPDX-License-Identifier: Apache-2.0
//
// Complex Morlet time-frequency transform. Each frequency row is the
// magnitude of the signal correlated with a Gaussian-windowed complex
// exponential (sigma_t = n_cycles / (2 pi f), support +-4 sigma_t), with
// symmetric reflection at the edges so the output keeps the input length.
// Wavelets are L1-normalized, so a matched unit sine responds near 0.5
// regardless of frequency and magnitude is linear in input amplitude.

#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "erpcond/core/errors.hpp"
#include "erpcond/core/tensor.hpp"

namespace erpcond {

/// Time-frequency magnitude matrix: row i is frequency freqs[i], column j is
/// time times[j].
struct TFMatrix {
  std::vector<double> freqs;  // Hz
  std::vector<double> times;  // s
  Tensor<double> mag;         // (n_freqs, n_times)
};

/// The pipeline's passband sampled at 0.5 Hz: 2, 2.5, ..., 15.
inline std::vector<double> default_tf_freqs() {
  std::vector<double> f;
  for (int i = 0; i <= 26; ++i) f.push_back(2.0 + 0.5 * i);
  return f;
}

namespace detail {

/// Whole-sample symmetric reflection of an out-of-range index (handles pads
/// wider than the signal).
inline int reflect_index(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  i = ((i % period) + period) % period;
  return i < n ? i : period - i;
}

}  // namespace detail

inline TFMatrix morlet_tf(const std::vector<double>& signal, double sfreq,
                          const std::vector<double>& freqs, double n_cycles = 7.0) {
  if (signal.empty()) throw DataError("morlet_tf: empty signal");
  if (!(sfreq > 0)) throw ConfigError("morlet_tf: sfreq must be positive");
  if (!(n_cycles >= 3))
    throw ConfigError("morlet_tf: n_cycles must be at least 3, got " + std::to_string(n_cycles));
  if (freqs.empty()) throw ConfigError("morlet_tf: empty frequency grid");
  for (double f : freqs)
    if (!(f > 0.0) || f >= sfreq / 2.0)
      throw ConfigError("morlet_tf: frequency " + std::to_string(f) +
                        " Hz outside (0, Nyquist) for sfreq " + std::to_string(sfreq));

  const int n = static_cast<int>(signal.size());
  TFMatrix out;
  out.freqs = freqs;
  out.times.resize(static_cast<std::size_t>(n));
  for (int t = 0; t < n; ++t) out.times[static_cast<std::size_t>(t)] = t / sfreq;
  out.mag = Tensor<double>({static_cast<int>(freqs.size()), n});

  for (std::size_t fi = 0; fi < freqs.size(); ++fi) {
    const double f = freqs[fi];
    const double sigma_t = n_cycles / (2.0 * M_PI * f);
    const int L = static_cast<int>(std::ceil(4.0 * sigma_t * sfreq));
    std::vector<double> wre(static_cast<std::size_t>(2 * L + 1));
    std::vector<double> wim(wre.size());
    double env_sum = 0.0;
    for (int k = -L; k <= L; ++k) {
      const double t = k / sfreq;
      const double env = std::exp(-t * t / (2.0 * sigma_t * sigma_t));
      wre[static_cast<std::size_t>(k + L)] = env * std::cos(2.0 * M_PI * f * t);
      wim[static_cast<std::size_t>(k + L)] = env * std::sin(2.0 * M_PI * f * t);
      env_sum += env;
    }
    for (std::size_t k = 0; k < wre.size(); ++k) {
      wre[k] /= env_sum;
      wim[k] /= env_sum;
    }

    double* row = out.mag.ptr() + fi * static_cast<std::size_t>(n);
    for (int t = 0; t < n; ++t) {
      double re = 0.0, im = 0.0;
      for (int k = -L; k <= L; ++k) {
        const double x = signal[static_cast<std::size_t>(detail::reflect_index(t + k, n))];
        re += x * wre[static_cast<std::size_t>(k + L)];
        im += x * wim[static_cast<std::size_t>(k + L)];
      }
      row[t] = std::sqrt(re * re + im * im);
    }
  }
  return out;
}

}  // namespace erpcond
