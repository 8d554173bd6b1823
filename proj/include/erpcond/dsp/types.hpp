// Copyright (c) 2026 erpcond authors
// SPDX-License-Identifier: Apache-2.0
//
// Domain types for the preprocessing pipeline. Every container carries a
// stage tag; each operation refuses inputs already at or past its own output
// stage, which makes double-filtering a hard error instead of a silent bug.

#pragma once

#include <string>
#include <vector>

#include "erpcond/core/errors.hpp"
#include "erpcond/core/tensor.hpp"

namespace erpcond {

enum class Stage { raw = 0, notched, bandpassed, epoched, resampled, scaled };

inline const char* stage_name(Stage s) {
  switch (s) {
    case Stage::raw: return "raw";
    case Stage::notched: return "notched";
    case Stage::bandpassed: return "bandpassed";
    case Stage::epoched: return "epoched";
    case Stage::resampled: return "resampled";
    case Stage::scaled: return "scaled";
  }
  return "?";
}

inline Stage stage_from_name(const std::string& s) {
  for (Stage st : {Stage::raw, Stage::notched, Stage::bandpassed, Stage::epoched, Stage::resampled,
                   Stage::scaled})
    if (s == stage_name(st)) return st;
  throw DataError("unknown preprocessing stage '" + s + "'");
}

inline void require_stage_before(Stage have, Stage produce, const std::string& op) {
  if (static_cast<int>(have) >= static_cast<int>(produce))
    throw ConfigError(op + ": input already at stage '" + stage_name(have) +
                      "', refusing to re-apply (produces '" + stage_name(produce) + "')");
}

struct EventMark {
  std::int64_t sample = 0;
  int label = 0;  // 1 = Target, 0 = NonTarget
};

/// Continuous multichannel signal in microvolts, channels x samples row-major.
struct Recording {
  Tensor<double> data;  // [channels, samples]
  double sfreq = 0.0;
  std::vector<EventMark> events;
  std::string subject_id;
  std::string session_id;
  Stage stage = Stage::raw;

  int channels() const { return data.dim(0); }
  std::int64_t samples() const { return data.dim(1); }

  void validate() const {
    if (!(sfreq > 0)) throw DataError("recording: sfreq must be positive");
    if (data.rank() != 2) throw DataError("recording: data must be channels x samples");
    for (const auto& e : events)
      if (e.sample < 0 || e.sample >= samples())
        throw DataError("recording: event sample " + std::to_string(e.sample) +
                        " outside data bounds");
  }
};

/// Stack of fixed-length trials cut around stimulus onsets.
struct EpochSet {
  Tensor<double> epochs;  // [n, channels, samples]
  std::vector<int> labels;
  std::vector<std::string> subject_ids;
  std::vector<std::string> session_ids;
  double sfreq = 0.0;
  double t0_offset = 0.0;  // seconds from epoch start to stimulus onset
  Stage stage = Stage::epoched;

  std::size_t size() const { return labels.size(); }
  int channels() const { return epochs.dim(1); }
  int samples() const { return epochs.dim(2); }

  void validate() const {
    if (epochs.rank() != 3) throw DataError("epoch set: tensor must be n x channels x samples");
    const std::size_t n = static_cast<std::size_t>(epochs.dim(0));
    if (labels.size() != n || subject_ids.size() != n || session_ids.size() != n)
      throw DataError("epoch set: label/id arrays must match epoch count");
    if (!(sfreq > 0)) throw DataError("epoch set: sfreq must be positive");
  }
};

enum class ScalerKind { standard, robust };

inline const char* scaler_kind_name(ScalerKind k) {
  return k == ScalerKind::standard ? "standard" : "robust";
}

inline ScalerKind scaler_kind_from_name(const std::string& s) {
  if (s == "standard") return ScalerKind::standard;
  if (s == "robust") return ScalerKind::robust;
  throw ConfigError("unknown scaler kind '" + s + "' (expected standard|robust)");
}

/// Per-channel location/scale fitted on one fold's training epochs only; the
/// fold id travels with the scaler so leakage is auditable.
struct Scaler {
  ScalerKind kind = ScalerKind::standard;
  std::vector<double> location;
  std::vector<double> scale;
  std::string fold_id;
  std::vector<int> constant_channels;  // channels whose scale was substituted with 1

  void validate() const {
    if (location.size() != scale.size()) throw DataError("scaler: parameter count mismatch");
    for (double s : scale)
      if (!(s > 0)) throw DataError("scaler: scale parameters must be strictly positive");
  }
};

}  // namespace erpcond
