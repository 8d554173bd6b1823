// Copyright (c) 2026 erpcond authors
// SPDX-License-Identifier: Apache-2.0
//
// File exports for the explainability analyses: channel importance as JSON,
// per-filter time-frequency differences as CSV matrices (header row = time
// grid, first column = frequency grid), the embedding projection as JSON, and
// optional schematic SVG renders.

#pragma once

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "erpcond/explain/importance.hpp"
#include "erpcond/explain/projection.hpp"
#include "erpcond/explain/tf_difference.hpp"
#include "erpcond/models/checkpoint.hpp"

namespace erpcond {

inline nlohmann::json channel_importance_to_json(const ChannelImportance& ci) {
  return {{"model", ci.model_id},
          {"checkpoint", ci.checkpoint_id},
          {"scores", ci.scores},
          {"definition", "per-channel sum of squared spatial-convolution weights, normalized"}};
}

inline nlohmann::json embedding_projection_to_json(const EmbeddingProjection& p) {
  nlohmann::json coords = nlohmann::json::array();
  for (const auto& c : p.coords) coords.push_back({c[0], c[1]});
  return {{"subjects", p.subjects},
          {"coords", coords},
          {"clusters", p.clusters},
          {"variance_explained", {p.variance_explained[0], p.variance_explained[1]}},
          {"method", "pca"},
          {"method_note",
           "deterministic PCA projection; substituted for the stochastic neighborhood "
           "embedding used in the source figures"}};
}

namespace detail {

inline void write_text_file(const std::filesystem::path& file, const std::string& text) {
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open '" + file.string() + "' for writing");
  out << text;
  if (!out) throw DataError("failed writing '" + file.string() + "'");
}

inline std::string format_number(double v) {
  std::ostringstream os;
  os << std::setprecision(9) << v;
  return os.str();
}

}  // namespace detail

inline void write_channel_importance_json(const std::filesystem::path& file,
                                          const ChannelImportance& ci) {
  detail::write_text_file(file, channel_importance_to_json(ci).dump(2) + "\n");
}

inline void write_embedding_projection_json(const std::filesystem::path& file,
                                            const EmbeddingProjection& p) {
  detail::write_text_file(file, embedding_projection_to_json(p).dump(2) + "\n");
}

/// CSV layout: header row carries the time grid under a corner label, each
/// following row starts with its frequency and continues with the difference
/// magnitudes for that row.
inline void write_tf_difference_csv(const std::filesystem::path& file, const TFResponse& r,
                                    std::size_t filter_index) {
  if (filter_index >= r.n_filters())
    throw ConfigError("tf export: filter index " + std::to_string(filter_index) +
                      " out of range");
  std::ostringstream os;
  os << "freq_hz";
  for (double t : r.times) os << ',' << detail::format_number(t);
  os << '\n';
  const Tensor<double>& mat = r.difference[filter_index];
  for (std::size_t fi = 0; fi < r.freqs.size(); ++fi) {
    os << detail::format_number(r.freqs[fi]);
    const double* row = mat.ptr() + fi * r.times.size();
    for (std::size_t ti = 0; ti < r.times.size(); ++ti)
      os << ',' << detail::format_number(row[ti]);
    os << '\n';
  }
  detail::write_text_file(file, os.str());
}

// ---------------------------------------------------------------------------
// Schematic SVG renders (convenience only; the electrode layout is generic
// because the montage geometry is not part of the data format).
// ---------------------------------------------------------------------------

inline void write_topomap_svg(const std::filesystem::path& file, const ChannelImportance& ci) {
  const int n = static_cast<int>(ci.scores.size());
  double peak = 0.0;
  for (double v : ci.scores) peak = std::max(peak, v);
  std::ostringstream os;
  os << "<svg xmlns='http://www.w3.org/2000/svg' width='220' height='240'>\n"
     << "<circle cx='110' cy='110' r='95' fill='none' stroke='#444'/>\n";
  for (int i = 0; i < n; ++i) {
    const double ang = -M_PI / 2.0 + 2.0 * M_PI * i / n;
    const double x = 110 + 70 * std::cos(ang), y = 110 + 70 * std::sin(ang);
    const double s = peak > 0 ? ci.scores[static_cast<std::size_t>(i)] / peak : 0.0;
    const int red = static_cast<int>(255 * s);
    os << "<circle cx='" << x << "' cy='" << y << "' r='14' fill='rgb(" << red << ","
       << (255 - red) / 3 << "," << (255 - red) << ")'/>\n"
       << "<text x='" << x << "' y='" << y + 4 << "' font-size='9' fill='#fff' "
       << "text-anchor='middle'>" << i << "</text>\n";
  }
  os << "<text x='110' y='228' font-size='10' text-anchor='middle'>schematic layout, "
     << "not a measured montage</text>\n</svg>\n";
  detail::write_text_file(file, os.str());
}

inline void write_tf_heatmap_svg(const std::filesystem::path& file, const TFResponse& r,
                                 std::size_t filter_index) {
  if (filter_index >= r.n_filters())
    throw ConfigError("tf export: filter index " + std::to_string(filter_index) +
                      " out of range");
  const Tensor<double>& mat = r.difference[filter_index];
  const std::size_t nf = r.freqs.size(), nt = r.times.size();
  double peak = 1e-300;
  for (double v : mat.data) peak = std::max(peak, std::abs(v));
  const double cw = 6.0, ch = 6.0;
  std::ostringstream os;
  os << "<svg xmlns='http://www.w3.org/2000/svg' width='" << nt * cw + 40 << "' height='"
     << nf * ch + 20 << "'>\n";
  for (std::size_t fi = 0; fi < nf; ++fi)
    for (std::size_t ti = 0; ti < nt; ++ti) {
      const double v = mat.data[fi * nt + ti] / peak;  // [-1, 1]
      const int warm = static_cast<int>(127 + 127 * v);
      os << "<rect x='" << 30 + ti * cw << "' y='" << 5 + (nf - 1 - fi) * ch << "' width='"
         << cw << "' height='" << ch << "' fill='rgb(" << warm << "," << 255 - std::abs(warm - 127)
         << "," << 255 - warm << ")'/>\n";
    }
  os << "</svg>\n";
  detail::write_text_file(file, os.str());
}

// ---------------------------------------------------------------------------
// Orchestration
// ---------------------------------------------------------------------------

struct ExplainOptions {
  std::vector<double> freqs = default_tf_freqs();
  double n_cycles = 7.0;
  int clusters = 2;  // clamped to the subject count
  std::uint64_t seed = 0;
  bool svg = false;
  std::string checkpoint_id;
};

/// Writes every applicable export into `dir` and returns the file names.
/// Conditioned checkpoints get three analyses (importance, TF difference,
/// embedding projection); unconditioned ones skip the projection. The
/// checkpoint's scaler, when present, is applied to the epochs first.
inline std::vector<std::string> export_explain(const std::filesystem::path& dir,
                                               const Checkpoint& ckpt, const EpochSet& es,
                                               const ExplainOptions& opt = {}) {
  std::filesystem::create_directories(dir);
  std::vector<std::string> written;

  const ChannelImportance ci = channel_importance(ckpt.model, opt.checkpoint_id);
  write_channel_importance_json(dir / "channel_importance.json", ci);
  written.push_back("channel_importance.json");
  if (opt.svg) {
    write_topomap_svg(dir / "channel_importance.svg", ci);
    written.push_back("channel_importance.svg");
  }

  const EpochSet* source = &es;
  EpochSet scaled;
  if (ckpt.scaler) {
    scaled = apply_scaler(*ckpt.scaler, es);
    source = &scaled;
  }
  const TFResponse tf = filter_tf_difference(ckpt.model, *source, opt.freqs, opt.n_cycles);
  for (std::size_t f = 0; f < tf.n_filters(); ++f) {
    const std::string name = "tf_difference_" + std::to_string(f) + ".csv";
    write_tf_difference_csv(dir / name, tf, f);
    written.push_back(name);
    if (opt.svg) {
      const std::string svg_name = "tf_difference_" + std::to_string(f) + ".svg";
      write_tf_heatmap_svg(dir / svg_name, tf, f);
      written.push_back(svg_name);
    }
  }

  if (ckpt.model.conditioning && ckpt.model.conditioning->size() > 0) {
    const int n = static_cast<int>(ckpt.model.conditioning->size());
    const int k = std::max(1, std::min(opt.clusters, n));
    const EmbeddingProjection proj =
        embedding_projection(*ckpt.model.conditioning, k, opt.seed);
    write_embedding_projection_json(dir / "embedding_projection.json", proj);
    written.push_back("embedding_projection.json");
  }
  return written;
}

}  // namespace erpcond
