// Copyright (c) 2026 erpcond authors
// SPDX-License-Identifier: Apache-2.0
//
// Synthetic multi-subject ERP cohorts with known ground truth. Targets carry
// a Gaussian-windowed positive deflection whose latency, amplitude and scalp
// projection vary per subject; the background is 1/f noise plus 50 Hz line
// interference so the notch and band-pass stages have real work to do.

#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include "erpcond/core/rng.hpp"
#include "erpcond/dsp/types.hpp"

namespace erpcond {

inline constexpr int kSynthChannels = 8;
inline constexpr double kSynthSfreq = 250.0;
inline constexpr int kEventsPerSession = 600;
inline constexpr int kTargetsPerSession = 60;
inline constexpr double kErpSigmaS = 0.05;  // Gaussian bump width

struct SubjectProfile {
  std::string subject_id;
  double erp_latency = 0.3;    // s, peak of the target deflection
  double erp_amplitude = 10.0; // microvolts
  std::vector<double> spatial_weights;  // unit sum of squares, one per channel
  double noise_scale = 20.0;   // microvolts RMS of the 1/f background
  double drift_per_session = 1.0;

  void validate() const {
    if (!(erp_latency >= 0.2 && erp_latency <= 0.5))
      throw DataError("subject profile: latency must lie in [0.2, 0.5] s");
    if (!(erp_amplitude >= 0)) throw DataError("subject profile: amplitude must be >= 0");
    if (spatial_weights.size() != kSynthChannels)
      throw DataError("subject profile: expected 8 spatial weights");
    double ss = 0.0;
    for (double w : spatial_weights) ss += w * w;
    if (std::abs(ss - 1.0) > 1e-6)
      throw DataError("subject profile: spatial weights must have unit sum of squares");
  }
};

namespace detail {

/// Economy pink-noise filter (Kellet): shapes white noise to ~1/f.
inline std::vector<double> pink_noise(std::size_t n, Rng& rng) {
  std::vector<double> out(n);
  double s0 = 0, s1 = 0, s2 = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double white = rng.normal();
    s0 = 0.99765 * s0 + white * 0.0990460;
    s1 = 0.96300 * s1 + white * 0.2965164;
    s2 = 0.57000 * s2 + white * 1.0526913;
    out[i] = s0 + s1 + s2 + white * 0.1848;
  }
  return out;
}

inline double rms(const std::vector<double>& x) {
  double ss = 0.0;
  for (double v : x) ss += v * v;
  return std::sqrt(ss / static_cast<double>(x.empty() ? 1 : x.size()));
}

}  // namespace detail

/// One calibration-style session: 600 stimuli 0.8 s apart (2 s lead-in and
/// tail), exactly 60 targets in shuffled positions. Deterministic in
/// (profile, session_idx, seed).
inline Recording generate_session(const SubjectProfile& profile, int session_idx,
                                  std::uint64_t seed) {
  profile.validate();
  const double isi = 0.8, lead = 2.0, tail = 2.0;
  const auto n_samples =
      static_cast<std::int64_t>(std::lround((lead + isi * kEventsPerSession + tail) * kSynthSfreq));
  Rng rng(seed);

  std::vector<int> labels(kEventsPerSession, 0);
  for (int i = 0; i < kTargetsPerSession; ++i) labels[i] = 1;
  rng.shuffle(labels);

  Recording rec;
  rec.sfreq = kSynthSfreq;
  rec.subject_id = profile.subject_id;
  rec.session_id = "sess" + std::to_string(session_idx);
  rec.stage = Stage::raw;
  rec.data = Tensor<double>({kSynthChannels, static_cast<int>(n_samples)});
  for (int k = 0; k < kEventsPerSession; ++k) {
    EventMark e;
    e.sample = std::lround((lead + isi * k) * kSynthSfreq);
    e.label = labels[k];
    rec.events.push_back(e);
  }

  const double line_amp = 0.2 * profile.noise_scale;
  for (int c = 0; c < kSynthChannels; ++c) {
    const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    auto noise = detail::pink_noise(static_cast<std::size_t>(n_samples), rng);
    const double r = detail::rms(noise);
    const double k = (profile.noise_scale > 0 && r > 0) ? profile.noise_scale / r : 0.0;
    double* row = rec.data.ptr() + static_cast<std::size_t>(c) * n_samples;
    const double w_line = 2.0 * std::numbers::pi * 50.0 / kSynthSfreq;
    for (std::int64_t i = 0; i < n_samples; ++i)
      row[i] = k * noise[static_cast<std::size_t>(i)] +
               line_amp * std::sin(w_line * static_cast<double>(i) + phase);
  }

  const double amp_eff =
      profile.erp_amplitude * std::pow(profile.drift_per_session, static_cast<double>(session_idx));
  const auto half_support = static_cast<std::int64_t>(std::lround(4.0 * kErpSigmaS * kSynthSfreq));
  for (const auto& e : rec.events) {
    if (e.label != 1) continue;
    const double center = static_cast<double>(e.sample) + profile.erp_latency * kSynthSfreq;
    const auto c0 = static_cast<std::int64_t>(std::lround(center));
    for (std::int64_t i = std::max<std::int64_t>(0, c0 - half_support);
         i <= std::min(n_samples - 1, c0 + half_support); ++i) {
      const double dt = (static_cast<double>(i) - center) / kSynthSfreq;
      const double bump = amp_eff * std::exp(-dt * dt / (2.0 * kErpSigmaS * kErpSigmaS));
      for (int c = 0; c < kSynthChannels; ++c)
        rec.data.ptr()[static_cast<std::size_t>(c) * n_samples + i] +=
            profile.spatial_weights[c] * bump;
    }
  }
  return rec;
}

/// Draws subject profiles from fixed distributions; difficulty scales the
/// background noise (0 means noise-free).
inline std::vector<SubjectProfile> draw_profiles(int n_subjects, std::uint64_t master_seed,
                                                 double difficulty) {
  if (n_subjects < 2) throw ConfigError("cohort needs at least 2 subjects");
  if (difficulty < 0) throw ConfigError("difficulty must be >= 0");
  // P300-like template: weight grows toward centro-parietal channels.
  const std::array<double, kSynthChannels> base{0.1, 0.15, 0.2, 0.3, 0.45, 0.5, 0.45, 0.3};
  double base_ss = 0.0;
  for (double b : base) base_ss += b * b;
  const double base_norm = std::sqrt(base_ss);

  std::vector<SubjectProfile> profiles;
  for (int s = 0; s < n_subjects; ++s) {
    Rng rng(hash_combine(master_seed, hash_combine(0x5EEDu, static_cast<std::uint64_t>(s))));
    SubjectProfile p;
    p.subject_id = (s + 1 < 10 ? "S0" : "S") + std::to_string(s + 1);
    p.erp_latency = rng.uniform(0.25, 0.42);
    p.erp_amplitude = rng.uniform(13.0, 19.0);
    p.spatial_weights.resize(kSynthChannels);
    double ss = 0.0;
    for (int c = 0; c < kSynthChannels; ++c) {
      p.spatial_weights[c] = base[static_cast<std::size_t>(c)] / base_norm + 0.3 * rng.normal();
      ss += p.spatial_weights[c] * p.spatial_weights[c];
    }
    // A minority of subjects project the deflection with inverted polarity,
    // as happens under referencing/dipole-orientation differences. This keeps
    // subject identity genuinely informative: a subject-agnostic reader pays
    // for the sign ambiguity, while per-subject calibration can resolve it
    // from very little data.
    const double inv =
        (rng.uniform(0.0, 1.0) < 0.3 ? -1.0 : 1.0) / std::sqrt(ss);
    for (auto& w : p.spatial_weights) w *= inv;
    p.noise_scale = 20.0 * difficulty * rng.uniform(0.85, 1.15);
    p.drift_per_session = rng.uniform(0.88, 1.0);
    p.validate();
    profiles.push_back(std::move(p));
  }
  return profiles;
}

inline std::uint64_t session_seed(std::uint64_t master_seed, int subject_idx, int session_idx) {
  return hash_combine(master_seed, hash_combine(static_cast<std::uint64_t>(subject_idx) * 0x9E3779B1u,
                                                static_cast<std::uint64_t>(session_idx)));
}

struct Cohort {
  std::vector<SubjectProfile> profiles;
  std::vector<Recording> recordings;  // subject-major, session-minor
  int sessions_per_subject = 0;
  double difficulty = 1.0;
  std::uint64_t master_seed = 0;
};

inline Cohort generate_cohort(int n_subjects, int sessions_per_subject, std::uint64_t master_seed,
                              double difficulty) {
  if (sessions_per_subject < 1) throw ConfigError("cohort needs at least 1 session per subject");
  Cohort cohort;
  cohort.profiles = draw_profiles(n_subjects, master_seed, difficulty);
  cohort.sessions_per_subject = sessions_per_subject;
  cohort.difficulty = difficulty;
  cohort.master_seed = master_seed;
  for (int s = 0; s < n_subjects; ++s)
    for (int k = 0; k < sessions_per_subject; ++k)
      cohort.recordings.push_back(
          generate_session(cohort.profiles[static_cast<std::size_t>(s)], k,
                           session_seed(master_seed, s, k)));
  return cohort;
}

}  // namespace erpcond
