// Copyright (c) 2026 erpcond authors
// SPDX-License-Identifier: Apache-2.0
//
// The preprocessing pipeline: notch -> band-pass -> epoch -> resample ->
// scale. Order is enforced through stage tags; every operation returns a new
// value and leaves its input untouched.

#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "erpcond/dsp/filters.hpp"
#include "erpcond/dsp/types.hpp"

namespace erpcond {

/// Zero-phase notch (one second-order section per frequency).
inline Recording apply_notch(const Recording& rec, const std::vector<double>& freqs,
                             double q = 30.0) {
  require_stage_before(rec.stage, Stage::notched, "apply_notch");
  rec.validate();
  Recording out = rec;
  for (double f : freqs) {
    if (!(f < rec.sfreq / 2))
      throw ConfigError("apply_notch: frequency " + std::to_string(f) +
                        " Hz is at or above Nyquist " + std::to_string(rec.sfreq / 2) + " Hz");
    const Sos sos = design_notch(f, rec.sfreq, q);
    for (int c = 0; c < out.channels(); ++c) {
      std::vector<double> row(out.data.ptr() + static_cast<std::size_t>(c) * out.samples(),
                              out.data.ptr() + static_cast<std::size_t>(c + 1) * out.samples());
      row = filtfilt(sos, row);
      std::copy(row.begin(), row.end(),
                out.data.ptr() + static_cast<std::size_t>(c) * out.samples());
    }
  }
  out.stage = Stage::notched;
  return out;
}

/// Zero-phase Butterworth band-pass.
inline Recording apply_bandpass(const Recording& rec, double low, double high, int order = 4) {
  require_stage_before(rec.stage, Stage::bandpassed, "apply_bandpass");
  rec.validate();
  const Sos sos = design_butter_bandpass(low, high, rec.sfreq, order);
  Recording out = rec;
  for (int c = 0; c < out.channels(); ++c) {
    std::vector<double> row(out.data.ptr() + static_cast<std::size_t>(c) * out.samples(),
                            out.data.ptr() + static_cast<std::size_t>(c + 1) * out.samples());
    row = filtfilt(sos, row);
    std::copy(row.begin(), row.end(), out.data.ptr() + static_cast<std::size_t>(c) * out.samples());
  }
  out.stage = Stage::bandpassed;
  return out;
}

struct EpochResult {
  EpochSet set;
  int dropped_events = 0;
};

/// Cuts [tmin, tmax] (inclusive sample grid, rounded half away from zero)
/// around each event and subtracts the per-channel baseline mean. Events
/// whose window leaves the recording are dropped and counted.
inline EpochResult epoch(const Recording& rec, double tmin, double tmax,
                         std::pair<double, double> baseline) {
  require_stage_before(rec.stage, Stage::epoched, "epoch");
  rec.validate();
  if (!(tmin < 0 && 0 <= tmax)) throw ConfigError("epoch: window must satisfy tmin < 0 <= tmax");
  if (!(baseline.first >= tmin && baseline.second <= tmax && baseline.first < baseline.second))
    throw ConfigError("epoch: baseline window must lie inside [tmin, tmax]");
  if (rec.events.empty()) throw DataError("epoch: recording has no events");

  const std::int64_t rel_lo = std::lround(tmin * rec.sfreq);
  const std::int64_t rel_hi = std::lround(tmax * rec.sfreq);
  const int n_samp = static_cast<int>(rel_hi - rel_lo + 1);
  const int b_lo = static_cast<int>(std::lround(baseline.first * rec.sfreq) - rel_lo);
  const int b_hi = static_cast<int>(std::lround(baseline.second * rec.sfreq) - rel_lo);
  const int n_chan = rec.channels();

  std::vector<const EventMark*> kept;
  int dropped = 0;
  for (const auto& e : rec.events) {
    if (e.sample + rel_lo < 0 || e.sample + rel_hi >= rec.samples())
      ++dropped;
    else
      kept.push_back(&e);
  }
  if (kept.empty()) throw DataError("epoch: no events survive the window bounds");

  EpochResult res;
  res.dropped_events = dropped;
  EpochSet& es = res.set;
  es.epochs = Tensor<double>({static_cast<int>(kept.size()), n_chan, n_samp});
  es.sfreq = rec.sfreq;
  es.t0_offset = -tmin;
  es.stage = Stage::epoched;
  for (std::size_t i = 0; i < kept.size(); ++i) {
    const EventMark& e = *kept[i];
    es.labels.push_back(e.label);
    es.subject_ids.push_back(rec.subject_id);
    es.session_ids.push_back(rec.session_id);
    for (int c = 0; c < n_chan; ++c) {
      const double* src =
          rec.data.ptr() + static_cast<std::size_t>(c) * rec.samples() + e.sample + rel_lo;
      double* dst = es.epochs.ptr() + (i * n_chan + c) * static_cast<std::size_t>(n_samp);
      double base = 0.0;
      for (int k = b_lo; k <= b_hi; ++k) base += src[k];
      base /= static_cast<double>(b_hi - b_lo + 1);
      for (int k = 0; k < n_samp; ++k) dst[k] = src[k] - base;
    }
  }
  return res;
}

/// Anti-alias low-pass (0.8 x new Nyquist) plus decimation by two.
inline EpochSet resample_half(const EpochSet& es) {
  require_stage_before(es.stage, Stage::resampled, "resample_half");
  es.validate();
  const auto sf = static_cast<std::int64_t>(es.sfreq);
  if (static_cast<double>(sf) != es.sfreq || sf % 2 != 0)
    throw ConfigError("resample_half: sampling rate must be an even integer, got " +
                      std::to_string(es.sfreq));
  const double new_sfreq = es.sfreq / 2.0;
  const double cutoff = 0.8 * (new_sfreq / 2.0);
  const Sos sos = design_butter_lowpass(cutoff, es.sfreq, 8);

  const int n = es.epochs.dim(0), n_chan = es.channels(), old_len = es.samples();
  const int new_len = (old_len + 1) / 2;
  EpochSet out = es;
  out.sfreq = new_sfreq;
  out.stage = Stage::resampled;
  out.epochs = Tensor<double>({n, n_chan, new_len});
  std::vector<double> row(old_len);
  for (int i = 0; i < n * n_chan; ++i) {
    const double* src = es.epochs.ptr() + static_cast<std::size_t>(i) * old_len;
    row.assign(src, src + old_len);
    row = filtfilt(sos, row);
    double* dst = out.epochs.ptr() + static_cast<std::size_t>(i) * new_len;
    for (int k = 0; k < new_len; ++k) dst[k] = row[2 * k];
  }
  return out;
}

namespace detail {

inline double quantile_sorted(const std::vector<double>& sorted, double q) {
  if (sorted.empty()) throw DataError("quantile of empty data");
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(pos);
  if (lo + 1 >= sorted.size()) return sorted.back();
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

}  // namespace detail

/// Fits per-channel location/scale over every sample of the training epochs.
/// Constant channels get scale 1 and are recorded on the scaler.
inline Scaler fit_scaler(ScalerKind kind, const EpochSet& train, const std::string& fold_id = "") {
  require_stage_before(train.stage, Stage::scaled, "fit_scaler");
  train.validate();
  const int n = train.epochs.dim(0), n_chan = train.channels(), len = train.samples();
  if (n == 0) throw DataError("fit_scaler: empty training set");
  Scaler s;
  s.kind = kind;
  s.fold_id = fold_id;
  std::vector<double> chan;
  chan.reserve(static_cast<std::size_t>(n) * len);
  for (int c = 0; c < n_chan; ++c) {
    chan.clear();
    for (int e = 0; e < n; ++e) {
      const double* src = train.epochs.ptr() + (static_cast<std::size_t>(e) * n_chan + c) * len;
      chan.insert(chan.end(), src, src + len);
    }
    double loc, scale;
    if (kind == ScalerKind::standard) {
      double sum = 0.0;
      for (double v : chan) sum += v;
      loc = sum / static_cast<double>(chan.size());
      double ss = 0.0;
      for (double v : chan) ss += (v - loc) * (v - loc);
      scale = std::sqrt(ss / static_cast<double>(chan.size()));
    } else {
      std::sort(chan.begin(), chan.end());
      loc = detail::quantile_sorted(chan, 0.5);
      scale = detail::quantile_sorted(chan, 0.75) - detail::quantile_sorted(chan, 0.25);
    }
    if (!(scale > 0)) {
      scale = 1.0;
      s.constant_channels.push_back(c);
    }
    s.location.push_back(loc);
    s.scale.push_back(scale);
  }
  s.validate();
  return s;
}

/// Applies stored parameters unchanged.
inline EpochSet apply_scaler(const Scaler& s, const EpochSet& es) {
  require_stage_before(es.stage, Stage::scaled, "apply_scaler");
  es.validate();
  s.validate();
  if (static_cast<int>(s.location.size()) != es.channels())
    throw DataError("apply_scaler: scaler has " + std::to_string(s.location.size()) +
                    " channels, epochs have " + std::to_string(es.channels()));
  EpochSet out = es;
  out.stage = Stage::scaled;
  const int n = es.epochs.dim(0), n_chan = es.channels(), len = es.samples();
  for (int e = 0; e < n; ++e)
    for (int c = 0; c < n_chan; ++c) {
      double* p = out.epochs.ptr() + (static_cast<std::size_t>(e) * n_chan + c) * len;
      const double loc = s.location[c], inv = 1.0 / s.scale[c];
      for (int k = 0; k < len; ++k) p[k] = (p[k] - loc) * inv;
    }
  return out;
}

/// Concatenates epoch sets with identical geometry (same channels, samples,
/// sfreq, t0_offset, stage).
inline EpochSet concat_epochs(const std::vector<const EpochSet*>& parts) {
  if (parts.empty()) throw DataError("concat_epochs: nothing to concatenate");
  const EpochSet& head = *parts.front();
  int total = 0;
  for (const auto* p : parts) {
    p->validate();
    if (p->channels() != head.channels() || p->samples() != head.samples() ||
        p->sfreq != head.sfreq || p->t0_offset != head.t0_offset || p->stage != head.stage)
      throw DataError("concat_epochs: geometry mismatch between parts");
    total += p->epochs.dim(0);
  }
  EpochSet out;
  out.sfreq = head.sfreq;
  out.t0_offset = head.t0_offset;
  out.stage = head.stage;
  out.epochs = Tensor<double>({total, head.channels(), head.samples()});
  double* dst = out.epochs.ptr();
  for (const auto* p : parts) {
    std::copy(p->epochs.data.begin(), p->epochs.data.end(), dst);
    dst += p->epochs.numel();
    out.labels.insert(out.labels.end(), p->labels.begin(), p->labels.end());
    out.subject_ids.insert(out.subject_ids.end(), p->subject_ids.begin(), p->subject_ids.end());
    out.session_ids.insert(out.session_ids.end(), p->session_ids.begin(), p->session_ids.end());
  }
  return out;
}

/// Copies the selected epochs (indices into es) into a new set.
inline EpochSet select_epochs(const EpochSet& es, const std::vector<int>& idx) {
  es.validate();
  EpochSet out;
  out.sfreq = es.sfreq;
  out.t0_offset = es.t0_offset;
  out.stage = es.stage;
  const int n_chan = es.channels(), len = es.samples();
  out.epochs = Tensor<double>({static_cast<int>(idx.size()), n_chan, len});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const int e = idx[i];
    if (e < 0 || e >= es.epochs.dim(0)) throw DataError("select_epochs: index out of range");
    std::copy(es.epochs.ptr() + static_cast<std::size_t>(e) * n_chan * len,
              es.epochs.ptr() + static_cast<std::size_t>(e + 1) * n_chan * len,
              out.epochs.ptr() + i * n_chan * len);
    out.labels.push_back(es.labels[e]);
    out.subject_ids.push_back(es.subject_ids[e]);
    out.session_ids.push_back(es.session_ids[e]);
  }
  return out;
}

}  // namespace erpcond
