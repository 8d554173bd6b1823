// Copyright (c) 2026 erpcond authors
// SPDX-License-Identifier: Apache-2.0
//
// On-disk container for epoch sets and raw recordings: a directory holding
// `meta.json` (shape, rates, ids, labels/events, stage tag) and `epochs.f32`
// (little-endian 32-bit floats, row-major). Values are stored in float32;
// in-memory processing uses doubles.

#pragma once

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "erpcond/dsp/types.hpp"

namespace erpcond {

static_assert(std::endian::native == std::endian::little,
              "on-disk format assumes a little-endian host");

namespace detail {

inline void write_f32(const std::filesystem::path& path, const std::vector<double>& values) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  std::vector<float> buf(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) buf[i] = static_cast<float>(values[i]);
  out.write(reinterpret_cast<const char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(float)));
  if (!out) throw DataError("short write to " + path.string());
}

inline std::vector<double> read_f32(const std::filesystem::path& path, std::size_t expect) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw DataError("cannot read " + path.string());
  const auto bytes = static_cast<std::size_t>(in.tellg());
  if (bytes != expect * sizeof(float))
    throw DataError(path.string() + ": expected " + std::to_string(expect * sizeof(float)) +
                    " bytes, found " + std::to_string(bytes));
  in.seekg(0);
  std::vector<float> buf(expect);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(bytes));
  if (!in) throw DataError("short read from " + path.string());
  return std::vector<double>(buf.begin(), buf.end());
}

inline nlohmann::json load_meta(const std::filesystem::path& dir) {
  const auto path = dir / "meta.json";
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

inline void store_meta(const std::filesystem::path& dir, const nlohmann::json& meta) {
  std::filesystem::create_directories(dir);
  std::ofstream out(dir / "meta.json");
  if (!out) throw DataError("cannot write " + (dir / "meta.json").string());
  out << meta.dump(2) << "\n";
}

}  // namespace detail

inline void save_epochs(const std::filesystem::path& dir, const EpochSet& es) {
  es.validate();
  nlohmann::json meta{
      {"schema_version", 1},
      {"kind", "epochs"},
      {"shape", es.epochs.shape},
      {"sfreq", es.sfreq},
      {"t0_offset", es.t0_offset},
      {"stage", stage_name(es.stage)},
      {"labels", es.labels},
      {"subject_ids", es.subject_ids},
      {"session_ids", es.session_ids},
  };
  detail::store_meta(dir, meta);
  detail::write_f32(dir / "epochs.f32", es.epochs.data);
}

inline EpochSet load_epochs(const std::filesystem::path& dir) {
  const auto meta = detail::load_meta(dir);
  try {
    if (meta.at("kind").get<std::string>() != "epochs")
      throw DataError(dir.string() + ": not an epoch container");
    EpochSet es;
    const auto shape = meta.at("shape").get<std::vector<int>>();
    if (shape.size() != 3) throw DataError(dir.string() + ": epoch shape must have rank 3");
    std::size_t numel = 1;
    for (int d : shape) numel *= static_cast<std::size_t>(d);
    es.epochs = Tensor<double>(shape, detail::read_f32(dir / "epochs.f32", numel));
    es.sfreq = meta.at("sfreq").get<double>();
    es.t0_offset = meta.at("t0_offset").get<double>();
    es.stage = stage_from_name(meta.at("stage").get<std::string>());
    es.labels = meta.at("labels").get<std::vector<int>>();
    es.subject_ids = meta.at("subject_ids").get<std::vector<std::string>>();
    es.session_ids = meta.at("session_ids").get<std::vector<std::string>>();
    es.validate();
    return es;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(dir.string() + ": malformed epoch metadata: " + e.what());
  }
}

inline void save_recording(const std::filesystem::path& dir, const Recording& rec) {
  rec.validate();
  nlohmann::json events = nlohmann::json::array();
  for (const auto& e : rec.events) events.push_back({{"sample", e.sample}, {"label", e.label}});
  nlohmann::json meta{
      {"schema_version", 1},
      {"kind", "recording"},
      {"shape", rec.data.shape},
      {"sfreq", rec.sfreq},
      {"stage", stage_name(rec.stage)},
      {"subject_id", rec.subject_id},
      {"session_id", rec.session_id},
      {"events", events},
  };
  detail::store_meta(dir, meta);
  detail::write_f32(dir / "epochs.f32", rec.data.data);
}

inline Recording load_recording(const std::filesystem::path& dir) {
  const auto meta = detail::load_meta(dir);
  try {
    if (meta.at("kind").get<std::string>() != "recording")
      throw DataError(dir.string() + ": not a raw-recording container");
    Recording rec;
    const auto shape = meta.at("shape").get<std::vector<int>>();
    if (shape.size() != 2) throw DataError(dir.string() + ": recording shape must have rank 2");
    std::size_t numel = 1;
    for (int d : shape) numel *= static_cast<std::size_t>(d);
    rec.data = Tensor<double>(shape, detail::read_f32(dir / "epochs.f32", numel));
    rec.sfreq = meta.at("sfreq").get<double>();
    rec.stage = stage_from_name(meta.at("stage").get<std::string>());
    rec.subject_id = meta.at("subject_id").get<std::string>();
    rec.session_id = meta.at("session_id").get<std::string>();
    for (const auto& e : meta.at("events")) {
      EventMark m;
      m.sample = e.at("sample").get<std::int64_t>();
      m.label = e.at("label").get<int>();
      rec.events.push_back(m);
    }
    rec.validate();
    return rec;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(dir.string() + ": malformed recording metadata: " + e.what());
  }
}

}  // namespace erpcond
