// Copyright (c) 2026 erpcond authors
// SPDX-License-Identifier: Apache-2.0
//
// Model checkpoints: a text header (magic + version, then one JSON document
// describing the architecture, layer specs, parameter names/shapes, seeds,
// conditioning table, scaler and training provenance) followed by the raw
// little-endian float32 parameter and buffer blocks in header order.
// load(save(x)) is bit-exact.

#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "erpcond/dsp/types.hpp"
#include "erpcond/models/architectures.hpp"

namespace erpcond {

inline constexpr const char* kCheckpointMagic = "ERPCOND-CKPT";
inline constexpr int kCheckpointVersion = 1;

// ---------------------------------------------------------------------------
// JSON conversions for the declarative pieces.
// ---------------------------------------------------------------------------

inline nlohmann::json layer_spec_to_json(const LayerSpec& s) {
  return {{"kind", layer_kind_name(s.kind)},
          {"name", s.name},
          {"in_maps", s.in_maps},
          {"out_maps", s.out_maps},
          {"kh", s.kh},
          {"kw", s.kw},
          {"depth_mult", s.depth_mult},
          {"pad_same_w", s.pad_same_w},
          {"bias", s.bias},
          {"in_dim", s.in_dim},
          {"out_dim", s.out_dim},
          {"ph", s.ph},
          {"pw", s.pw},
          {"rate", s.rate},
          {"momentum", s.momentum},
          {"eps", s.eps},
          {"reduction", s.reduction}};
}

inline LayerKind layer_kind_from_name(const std::string& n) {
  for (LayerKind k :
       {LayerKind::conv2d, LayerKind::depthwise_conv2d, LayerKind::dense, LayerKind::batch_norm,
        LayerKind::elu, LayerKind::sigmoid, LayerKind::avg_pool, LayerKind::dropout,
        LayerKind::flatten, LayerKind::squeeze_excite})
    if (n == layer_kind_name(k)) return k;
  throw NumericError("checkpoint: unknown layer kind '" + n + "'");
}

inline LayerSpec layer_spec_from_json(const nlohmann::json& j) {
  LayerSpec s;
  s.kind = layer_kind_from_name(j.at("kind").get<std::string>());
  s.name = j.at("name").get<std::string>();
  s.in_maps = j.at("in_maps").get<int>();
  s.out_maps = j.at("out_maps").get<int>();
  s.kh = j.at("kh").get<int>();
  s.kw = j.at("kw").get<int>();
  s.depth_mult = j.at("depth_mult").get<int>();
  s.pad_same_w = j.at("pad_same_w").get<bool>();
  s.bias = j.at("bias").get<bool>();
  s.in_dim = j.at("in_dim").get<int>();
  s.out_dim = j.at("out_dim").get<int>();
  s.ph = j.at("ph").get<int>();
  s.pw = j.at("pw").get<int>();
  s.rate = j.at("rate").get<double>();
  s.momentum = j.at("momentum").get<double>();
  s.eps = j.at("eps").get<double>();
  s.reduction = j.at("reduction").get<int>();
  return s;
}

inline nlohmann::json arch_config_to_json(const ArchitectureConfig& c) {
  return {{"arch", arch_name(c.arch)},
          {"n_channels", c.n_channels},
          {"window_s", c.window_s},
          {"sfreq", c.sfreq},
          {"kernel_length", c.kernel_length},
          {"dropout_rate", c.dropout_rate},
          {"feature_dim", c.feature_dim}};
}

inline ArchitectureConfig arch_config_from_json(const nlohmann::json& j) {
  ArchitectureConfig c;
  c.arch = arch_from_name(j.at("arch").get<std::string>());
  c.n_channels = j.at("n_channels").get<int>();
  c.window_s = j.at("window_s").get<double>();
  c.sfreq = j.at("sfreq").get<double>();
  c.kernel_length = j.at("kernel_length").get<int>();
  c.dropout_rate = j.at("dropout_rate").get<double>();
  c.feature_dim = j.at("feature_dim").get<int>();
  return c;
}

inline nlohmann::json scaler_to_json(const Scaler& s) {
  return {{"kind", s.kind == ScalerKind::standard ? "standard" : "robust"},
          {"location", s.location},
          {"scale", s.scale},
          {"fold_id", s.fold_id},
          {"constant_channels", s.constant_channels}};
}

inline Scaler scaler_from_json(const nlohmann::json& j) {
  Scaler s;
  s.kind = j.at("kind").get<std::string>() == "standard" ? ScalerKind::standard
                                                         : ScalerKind::robust;
  s.location = j.at("location").get<std::vector<double>>();
  s.scale = j.at("scale").get<std::vector<double>>();
  s.fold_id = j.at("fold_id").get<std::string>();
  s.constant_channels = j.at("constant_channels").get<std::vector<int>>();
  return s;
}

// ---------------------------------------------------------------------------
// Checkpoint
// ---------------------------------------------------------------------------

struct Checkpoint {
  Model model;
  double best_val_mcc = 0.0;
  int epoch_of_best = -1;
  std::vector<double> val_history;      // per-epoch validation MCC
  std::map<std::string, std::uint64_t> seeds;
  nlohmann::json config_snapshot = nlohmann::json::object();
  std::optional<Scaler> scaler;         // the fold's fitted scaler travels along
};

namespace detail {

/// Enumerates every float block of the model in the canonical header order:
/// extractor params, extractor buffers, head params, head buffers,
/// conditioning rows.
template <typename Fn>
void for_each_block(Model& m, Fn&& fn) {
  m.extractor.for_each_param("extractor/", fn);
  m.extractor.for_each_buffer("extractor/", fn);
  m.head.for_each_param("head/", fn);
  m.head.for_each_buffer("head/", fn);
  if (m.conditioning)
    m.conditioning->for_each_row([&](const std::string& name, TensorF& t) { fn(name, t); });
}

template <typename Fn>
void for_each_block(const Model& m, Fn&& fn) {
  m.extractor.for_each_param("extractor/", fn);
  m.extractor.for_each_buffer("extractor/", fn);
  m.head.for_each_param("head/", fn);
  m.head.for_each_buffer("head/", fn);
  if (m.conditioning)
    m.conditioning->for_each_row(
        [&](const std::string& name, const TensorF& t) { fn(name, t); });
}

}  // namespace detail

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  nlohmann::json header;
  header["format_version"] = kCheckpointVersion;
  header["arch"] = arch_name(ckpt.model.cfg.arch);
  header["config"] = arch_config_to_json(ckpt.model.cfg);
  header["extractor_specs"] = nlohmann::json::array();
  for (const auto& s : ckpt.model.extractor.specs())
    header["extractor_specs"].push_back(layer_spec_to_json(s));
  header["head_specs"] = nlohmann::json::array();
  for (const auto& s : ckpt.model.head.specs())
    header["head_specs"].push_back(layer_spec_to_json(s));

  nlohmann::json blocks = nlohmann::json::array();
  detail::for_each_block(ckpt.model, [&](const std::string& name, const TensorF& t) {
    blocks.push_back({{"name", name}, {"shape", t.shape}});
  });
  header["blocks"] = blocks;

  if (ckpt.model.conditioning) {
    header["conditioning"] = {{"mode", cond_mode_name(ckpt.model.conditioning->mode())},
                              {"feature_dim", ckpt.model.conditioning->feature_dim()},
                              {"subjects", ckpt.model.conditioning->subjects()}};
  } else {
    header["conditioning"] = nullptr;
  }

  header["init_seed"] = ckpt.model.init_seed;
  header["seeds"] = nlohmann::json::object();
  for (const auto& [k, v] : ckpt.seeds) header["seeds"][k] = v;
  header["best_val_mcc"] = ckpt.best_val_mcc;
  header["epoch_of_best"] = ckpt.epoch_of_best;
  header["val_history"] = ckpt.val_history;
  header["config_snapshot"] = ckpt.config_snapshot;
  header["scaler"] = ckpt.scaler ? scaler_to_json(*ckpt.scaler) : nlohmann::json(nullptr);

  const std::string text = header.dump();
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw DataError("cannot write checkpoint " + path.string());
    out << kCheckpointMagic << " " << kCheckpointVersion << "\n";
    out << text.size() << "\n";
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    out << "\n";
    detail::for_each_block(ckpt.model, [&](const std::string&, const TensorF& t) {
      out.write(reinterpret_cast<const char*>(t.ptr()),
                static_cast<std::streamsize>(t.numel() * sizeof(float)));
    });
    if (!out) throw DataError("short write to checkpoint " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read checkpoint " + path.string());

  std::string magic_line;
  if (!std::getline(in, magic_line) ||
      magic_line != std::string(kCheckpointMagic) + " " + std::to_string(kCheckpointVersion))
    throw NumericError("malformed checkpoint magic in " + path.string());
  std::string len_line;
  if (!std::getline(in, len_line)) throw NumericError("truncated checkpoint " + path.string());
  std::size_t header_len = 0;
  try {
    header_len = static_cast<std::size_t>(std::stoull(len_line));
  } catch (const std::exception&) {
    throw NumericError("malformed checkpoint header length in " + path.string());
  }
  std::string text(header_len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(header_len));
  if (!in || in.get() != '\n')
    throw NumericError("truncated checkpoint header in " + path.string());

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw NumericError("malformed checkpoint header in " + path.string() + ": " + e.what());
  }

  Checkpoint ckpt;
  try {
    if (header.at("format_version").get<int>() != kCheckpointVersion)
      throw NumericError("unsupported checkpoint version in " + path.string());

    ckpt.model.cfg = arch_config_from_json(header.at("config"));
    std::vector<LayerSpec> ext_specs, head_specs;
    for (const auto& j : header.at("extractor_specs")) ext_specs.push_back(layer_spec_from_json(j));
    for (const auto& j : header.at("head_specs")) head_specs.push_back(layer_spec_from_json(j));
    ckpt.model.extractor = Graph<float>(std::move(ext_specs));
    ckpt.model.head = Graph<float>(std::move(head_specs));
    ckpt.model.init_seed = header.at("init_seed").get<std::uint64_t>();

    if (!header.at("conditioning").is_null()) {
      const auto& c = header.at("conditioning");
      ckpt.model.conditioning.emplace(cond_mode_from_name(c.at("mode").get<std::string>()),
                                      c.at("feature_dim").get<int>(),
                                      c.at("subjects").get<std::vector<std::string>>(),
                                      /*seed=*/0);
    }

    for (const auto& [k, v] : header.at("seeds").items())
      ckpt.seeds[k] = v.get<std::uint64_t>();
    ckpt.best_val_mcc = header.at("best_val_mcc").get<double>();
    ckpt.epoch_of_best = header.at("epoch_of_best").get<int>();
    ckpt.val_history = header.at("val_history").get<std::vector<double>>();
    ckpt.config_snapshot = header.at("config_snapshot");
    if (!header.at("scaler").is_null()) ckpt.scaler = scaler_from_json(header.at("scaler"));

    // Stream the blocks back in header order, verifying names and shapes
    // against the freshly rebuilt graphs.
    auto block_it = header.at("blocks").begin();
    const auto block_end = header.at("blocks").end();
    detail::for_each_block(ckpt.model, [&](const std::string& name, TensorF& t) {
      if (block_it == block_end)
        throw NumericError("checkpoint " + path.string() + ": missing block for '" + name + "'");
      const auto& meta = *block_it++;
      if (meta.at("name").get<std::string>() != name)
        throw NumericError("checkpoint " + path.string() + ": block order mismatch, expected '" +
                           name + "', header says '" + meta.at("name").get<std::string>() + "'");
      if (meta.at("shape").get<std::vector<int>>() != t.shape)
        throw NumericError("checkpoint " + path.string() + ": shape mismatch for '" + name + "'");
      in.read(reinterpret_cast<char*>(t.ptr()),
              static_cast<std::streamsize>(t.numel() * sizeof(float)));
      if (!in) throw NumericError("checkpoint " + path.string() + ": truncated data for '" + name + "'");
    });
    if (block_it != block_end)
      throw NumericError("checkpoint " + path.string() + ": unconsumed header blocks");
  } catch (const nlohmann::json::exception& e) {
    throw NumericError("malformed checkpoint header in " + path.string() + ": " + e.what());
  }
  return ckpt;
}

}  // namespace erpcond
