// Copyright (c) 2026 erpcond authors
// SPDX-License-Identifier: Apache-2.0
//
// IIR filter design and zero-phase application. Filters are cascades of
// biquad sections (transposed direct form II). Butterworth designs go the
// classical route: analog prototype poles, frequency prewarp, LP->BP or
// LP->LP transform, bilinear mapping, conjugate pairing into sections, and a
// final numeric gain normalization at the design frequency.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>
#include <vector>

#include "erpcond/core/errors.hpp"

namespace erpcond {

struct Biquad {
  // y[n] = b0 x[n] + b1 x[n-1] + b2 x[n-2] - a1 y[n-1] - a2 y[n-2]
  double b0 = 1, b1 = 0, b2 = 0, a1 = 0, a2 = 0;
};

using Sos = std::vector<Biquad>;

/// |H(e^{j 2 pi f / fs})| of the cascade.
inline double sos_response_mag(const Sos& sos, double f, double fs) {
  const double w = 2.0 * std::numbers::pi * f / fs;
  const std::complex<double> z1 = std::exp(std::complex<double>(0.0, -w));
  const std::complex<double> z2 = z1 * z1;
  std::complex<double> h(1.0, 0.0);
  for (const auto& s : sos)
    h *= (s.b0 + s.b1 * z1 + s.b2 * z2) / (1.0 + s.a1 * z1 + s.a2 * z2);
  return std::abs(h);
}

/// Second-order notch (constrained band-reject) at f0 with quality factor q.
inline Sos design_notch(double f0, double fs, double q) {
  if (!(f0 > 0) || !(f0 < fs / 2))
    throw ConfigError("notch frequency " + std::to_string(f0) + " Hz must lie below Nyquist " +
                      std::to_string(fs / 2) + " Hz");
  if (!(q > 0)) throw ConfigError("notch Q must be positive");
  const double w0 = 2.0 * std::numbers::pi * f0 / fs;
  const double alpha = std::sin(w0) / (2.0 * q);
  const double c = std::cos(w0);
  const double a0 = 1.0 + alpha;
  Biquad s;
  s.b0 = 1.0 / a0;
  s.b1 = -2.0 * c / a0;
  s.b2 = 1.0 / a0;
  s.a1 = -2.0 * c / a0;
  s.a2 = (1.0 - alpha) / a0;
  return {s};
}

namespace detail {

/// Butterworth analog prototype poles in the upper half-plane (order must be
/// even; all poles are then strictly complex and come in conjugate pairs).
inline std::vector<std::complex<double>> butter_proto_upper(int order) {
  if (order <= 0 || order % 2 != 0)
    throw ConfigError("Butterworth design here supports positive even orders only");
  std::vector<std::complex<double>> poles;
  for (int m = 0; m < order / 2; ++m) {
    const double theta =
        std::numbers::pi / 2.0 + std::numbers::pi * (2.0 * m + 1.0) / (2.0 * order);
    poles.emplace_back(std::cos(theta), std::sin(theta));
  }
  return poles;
}

inline std::complex<double> bilinear_pole(std::complex<double> s, double fs) {
  return (2.0 * fs + s) / (2.0 * fs - s);
}

}  // namespace detail

/// Butterworth band-pass of the given analog prototype order (the digital
/// filter has twice as many poles). Unity gain at the warped center frequency.
inline Sos design_butter_bandpass(double low, double high, double fs, int order = 4) {
  if (!(0 < low && low < high && high < fs / 2))
    throw ConfigError("band-pass edges must satisfy 0 < low < high < Nyquist; got [" +
                      std::to_string(low) + ", " + std::to_string(high) + "] at fs " +
                      std::to_string(fs));
  const double w1 = 2.0 * fs * std::tan(std::numbers::pi * low / fs);
  const double w2 = 2.0 * fs * std::tan(std::numbers::pi * high / fs);
  const double bw = w2 - w1;
  const double w0sq = w1 * w2;
  Sos sos;
  for (const auto& p : detail::butter_proto_upper(order)) {
    // LP->BP: prototype pole p becomes the two roots of s^2 - p*bw*s + w0sq.
    const std::complex<double> pb = p * bw;
    const std::complex<double> disc = std::sqrt(pb * pb - 4.0 * w0sq);
    for (const auto& sp : {(pb + disc) / 2.0, (pb - disc) / 2.0}) {
      const std::complex<double> zp = detail::bilinear_pole(sp, fs);
      Biquad sec;
      sec.b0 = 1.0;
      sec.b1 = 0.0;
      sec.b2 = -1.0;  // one zero at z=+1, one at z=-1 per section
      sec.a1 = -2.0 * zp.real();
      sec.a2 = std::norm(zp);
      sos.push_back(sec);
    }
  }
  const double fc = fs / std::numbers::pi * std::atan(std::sqrt(w0sq) / (2.0 * fs));
  const double g = sos_response_mag(sos, fc, fs);
  if (!(g > 0)) throw NumericError("band-pass design produced zero gain");
  sos.front().b0 /= g;
  sos.front().b1 /= g;
  sos.front().b2 /= g;
  return sos;
}

/// Butterworth low-pass (even order), unity gain at DC.
inline Sos design_butter_lowpass(double cutoff, double fs, int order = 8) {
  if (!(0 < cutoff && cutoff < fs / 2))
    throw ConfigError("low-pass cutoff must lie in (0, Nyquist); got " + std::to_string(cutoff) +
                      " at fs " + std::to_string(fs));
  const double wc = 2.0 * fs * std::tan(std::numbers::pi * cutoff / fs);
  Sos sos;
  for (const auto& p : detail::butter_proto_upper(order)) {
    const std::complex<double> zp = detail::bilinear_pole(p * wc, fs);
    Biquad sec;
    sec.b0 = 1.0;
    sec.b1 = 2.0;
    sec.b2 = 1.0;  // two zeros at z=-1 per section
    sec.a1 = -2.0 * zp.real();
    sec.a2 = std::norm(zp);
    sos.push_back(sec);
  }
  const double g = sos_response_mag(sos, 0.0, fs);
  sos.front().b0 /= g;
  sos.front().b1 /= g;
  sos.front().b2 /= g;
  return sos;
}

namespace detail {

/// Per-section steady-state (unit-step) initial conditions, scaled by the
/// cumulative DC gain of the preceding sections.
inline std::vector<std::array<double, 2>> sos_step_zi(const Sos& sos) {
  std::vector<std::array<double, 2>> zi(sos.size());
  double carry = 1.0;
  for (std::size_t k = 0; k < sos.size(); ++k) {
    const auto& s = sos[k];
    const double den = 1.0 + s.a1 + s.a2;
    const double g = (s.b0 + s.b1 + s.b2) / den;
    zi[k][0] = (g - s.b0) * carry;
    zi[k][1] = (s.b2 - s.a2 * g) * carry;
    carry *= g;
  }
  return zi;
}

inline void sosfilt_inplace(const Sos& sos, std::vector<double>& x,
                            std::vector<std::array<double, 2>> state) {
  for (std::size_t k = 0; k < sos.size(); ++k) {
    const auto& s = sos[k];
    double z1 = state[k][0], z2 = state[k][1];
    for (double& v : x) {
      const double in = v;
      const double out = s.b0 * in + z1;
      z1 = s.b1 * in - s.a1 * out + z2;
      z2 = s.b2 * in - s.a2 * out;
      v = out;
    }
  }
}

}  // namespace detail

inline int filtfilt_padlen(const Sos& sos) {
  return 3 * (2 * static_cast<int>(sos.size()) + 1);
}

/// Forward-backward filtering with odd-reflection edge padding and step
/// initial conditions; cancels phase and squares the magnitude response.
inline std::vector<double> filtfilt(const Sos& sos, const std::vector<double>& x) {
  const int padlen = filtfilt_padlen(sos);
  const std::int64_t n = static_cast<std::int64_t>(x.size());
  if (n <= padlen)
    throw DataError("filtfilt: signal length " + std::to_string(n) +
                    " must exceed padding length " + std::to_string(padlen));
  std::vector<double> ext;
  ext.reserve(x.size() + 2 * padlen);
  for (int i = padlen; i >= 1; --i) ext.push_back(2.0 * x[0] - x[i]);
  ext.insert(ext.end(), x.begin(), x.end());
  for (int i = 1; i <= padlen; ++i) ext.push_back(2.0 * x[n - 1] - x[n - 1 - i]);

  auto zi = detail::sos_step_zi(sos);
  auto scaled = [&](double v) {
    auto z = zi;
    for (auto& st : z) {
      st[0] *= v;
      st[1] *= v;
    }
    return z;
  };
  detail::sosfilt_inplace(sos, ext, scaled(ext.front()));
  std::reverse(ext.begin(), ext.end());
  detail::sosfilt_inplace(sos, ext, scaled(ext.front()));
  std::reverse(ext.begin(), ext.end());
  return std::vector<double>(ext.begin() + padlen, ext.begin() + padlen + n);
}

}  // namespace erpcond
