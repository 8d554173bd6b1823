// Copyright (c) 2026 erpcond authors
// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "erpcond/explain/exports.hpp"
#include "erpcond/explain/importance.hpp"
#include "erpcond/explain/morlet.hpp"
#include "erpcond/explain/projection.hpp"
#include "erpcond/explain/tf_difference.hpp"

using namespace erpcond;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

Model phinet_model(std::uint64_t seed = 21) {
  ArchitectureConfig cfg;
  cfg.arch = Arch::phinet;
  cfg.window_s = 0.35;
  return build(cfg, seed);
}

/// The first convolution whose kernel spans the electrode axis.
const LayerSpec& spatial_spec(const Model& m) {
  for (const auto& s : m.extractor.specs()) {
    const bool convlike =
        s.kind == LayerKind::conv2d || s.kind == LayerKind::depthwise_conv2d;
    if (convlike && s.kh == m.cfg.n_channels && s.kh > 1) return s;
  }
  FAIL("model has no spatial layer");
  throw std::logic_error("unreachable");
}

TensorF* spatial_weight(Model& m) {
  const std::string want = spatial_spec(m).name + ".weight";
  TensorF* w = nullptr;
  m.extractor.for_each_param("", [&](const std::string& n, TensorF& t) {
    if (n == want) w = &t;
  });
  REQUIRE(w != nullptr);
  return w;
}

/// Epochs shaped for the phinet window (57 samples at 125 Hz, onset at 13).
/// Targets carry `target_signal(t_seconds)` on every channel; non-targets
/// carry `nontarget_signal`.
template <typename FnT, typename FnNT>
EpochSet signal_epochs(int n_target, int n_nontarget, FnT target_signal, FnNT nontarget_signal) {
  const int C = 8, S = 13 + 44;
  EpochSet es;
  es.epochs = Tensor<double>({n_target + n_nontarget, C, S});
  es.sfreq = 125.0;
  es.t0_offset = 0.1;
  es.stage = Stage::resampled;
  for (int e = 0; e < n_target + n_nontarget; ++e) {
    const bool is_target = e < n_target;
    for (int c = 0; c < C; ++c)
      for (int t = 0; t < S; ++t) {
        const double sec = (t - 13) / 125.0;
        es.epochs.data[static_cast<std::size_t>((e * C + c) * S + t)] =
            is_target ? target_signal(sec) : nontarget_signal(sec);
      }
    es.labels.push_back(is_target ? 1 : 0);
    es.subject_ids.push_back("s01");
    es.session_ids.push_back("0");
  }
  return es;
}

std::filesystem::path temp_dir() {
  const auto dir = std::filesystem::temp_directory_path() / "erpcond_explain_test";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

}  // namespace

// ---------------------------------------------------------------------------
// Channel importance
// ---------------------------------------------------------------------------

TEST_CASE("channel importance is one-hot when a single electrode carries weight") {
  Model m = phinet_model();
  TensorF* w = spatial_weight(m);
  w->fill(0.0f);
  // Weight layout (a, b, channel, k): put energy only on channel 3.
  const int A = w->dim(0), B = w->dim(1), C = w->dim(2), K = w->dim(3);
  for (int a = 0; a < A; ++a)
    for (int b = 0; b < B; ++b)
      for (int k = 0; k < K; ++k)
        w->data[((static_cast<std::size_t>(a) * B + b) * C + 3) * K + k] = 0.7f;

  const ChannelImportance ci = channel_importance(m, "ck1");
  REQUIRE(ci.scores.size() == 8);
  REQUIRE(ci.model_id == "phinet");
  REQUIRE(ci.checkpoint_id == "ck1");
  for (int c = 0; c < 8; ++c)
    REQUIRE_THAT(ci.scores[static_cast<std::size_t>(c)], WithinAbs(c == 3 ? 1.0 : 0.0, 1e-12));
}

TEST_CASE("channel importance is uniform for equal weight energy") {
  Model m = phinet_model();
  TensorF* w = spatial_weight(m);
  // Alternate signs to confirm only the square matters.
  for (std::size_t i = 0; i < w->numel(); ++i) w->data[i] = (i % 2 == 0) ? 0.4f : -0.4f;
  const ChannelImportance ci = channel_importance(m);
  double sum = 0.0;
  for (double v : ci.scores) {
    REQUIRE_THAT(v, WithinAbs(0.125, 1e-9));
    sum += v;
  }
  REQUIRE_THAT(sum, WithinAbs(1.0, 1e-9));
}

TEST_CASE("channel importance matches a brute-force loop on random weights") {
  for (auto arch : {Arch::eegnet, Arch::p300mcnn, Arch::phinet}) {
    ArchitectureConfig cfg;
    cfg.arch = arch;
    cfg.window_s = arch_default_window(arch);
    Model m = build(cfg, 99);

    TensorF* w = spatial_weight(m);
    const int A = w->dim(0), B = w->dim(1), C = w->dim(2), K = w->dim(3);
    std::vector<double> expect(static_cast<std::size_t>(C), 0.0);
    double total = 0.0;
    for (int a = 0; a < A; ++a)
      for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c)
          for (int k = 0; k < K; ++k) {
            const double v = w->data[((static_cast<std::size_t>(a) * B + b) * C + c) * K + k];
            expect[static_cast<std::size_t>(c)] += v * v;
            total += v * v;
          }
    for (double& v : expect) v /= total;

    const ChannelImportance ci = channel_importance(m);
    REQUIRE(ci.scores.size() == expect.size());
    for (std::size_t c = 0; c < expect.size(); ++c)
      REQUIRE_THAT(ci.scores[c], WithinAbs(expect[c], 1e-12));
  }
}

TEST_CASE("channel importance ignores filter order and weight signs") {
  Model m = phinet_model(5);
  const ChannelImportance before = channel_importance(m);

  TensorF* w = spatial_weight(m);
  const int A = w->dim(0), B = w->dim(1), C = w->dim(2), K = w->dim(3);
  REQUIRE(A >= 2);
  // Swap two filter slices along the leading axis and flip every sign.
  const std::size_t slice = static_cast<std::size_t>(B) * C * K;
  for (std::size_t i = 0; i < slice; ++i) std::swap(w->data[i], w->data[slice + i]);
  for (auto& v : w->data) v = -v;

  const ChannelImportance after = channel_importance(m);
  for (std::size_t c = 0; c < before.scores.size(); ++c)
    REQUIRE_THAT(after.scores[c], WithinAbs(before.scores[c], 1e-12));
}

TEST_CASE("channel importance rejects unsupported or degenerate models") {
  Model bare;
  bare.cfg.arch = Arch::eegnet;
  bare.cfg.n_channels = 8;
  bare.extractor = Graph<float>(std::vector<LayerSpec>{conv2d_spec("c", 1, 4, 1, 5, true)});
  REQUIRE_THROWS_AS(channel_importance(bare), ConfigError);

  Model zeroed = phinet_model();
  spatial_weight(zeroed)->fill(0.0f);
  REQUIRE_THROWS_AS(channel_importance(zeroed), NumericError);
}

// ---------------------------------------------------------------------------
// Morlet transform
// ---------------------------------------------------------------------------

TEST_CASE("a pure sine localizes to its own frequency row") {
  const double sfreq = 125.0;
  std::vector<double> x(500);
  for (std::size_t t = 0; t < x.size(); ++t)
    x[t] = std::sin(2.0 * M_PI * 8.0 * static_cast<double>(t) / sfreq);

  const TFMatrix tf = morlet_tf(x, sfreq, default_tf_freqs(), 7.0);
  REQUIRE(tf.freqs.size() == 27);
  REQUIRE(tf.times.size() == 500);
  REQUIRE_THAT(tf.times[125], WithinAbs(1.0, 1e-12));

  const std::size_t row8 = 12;  // 2 + 12 * 0.5 = 8 Hz
  REQUIRE_THAT(tf.freqs[row8], WithinAbs(8.0, 1e-12));
  int hits = 0, interior = 0;
  for (int t = 125; t < 375; ++t) {  // central 2 s
    std::size_t best = 0;
    for (std::size_t f = 1; f < tf.freqs.size(); ++f)
      if (tf.mag.data[f * 500 + static_cast<std::size_t>(t)] >
          tf.mag.data[best * 500 + static_cast<std::size_t>(t)])
        best = f;
    ++interior;
    hits += (best == row8);
  }
  REQUIRE(hits >= interior * 9 / 10);

  // L1-normalized wavelets put a matched sine near one half.
  REQUIRE_THAT(tf.mag.data[row8 * 500 + 250], WithinAbs(0.5, 0.05));
}

TEST_CASE("a zero signal transforms to a zero matrix") {
  const std::vector<double> x(200, 0.0);
  const TFMatrix tf = morlet_tf(x, 125.0, default_tf_freqs());
  for (double v : tf.mag.data) REQUIRE(v == 0.0);
}

TEST_CASE("an impulse concentrates each row's energy within two envelope widths") {
  const double sfreq = 125.0;
  std::vector<double> x(500, 0.0);
  const int t0 = 250;
  x[t0] = 1.0;

  const TFMatrix tf = morlet_tf(x, sfreq, default_tf_freqs(), 7.0);
  for (std::size_t fi = 0; fi < tf.freqs.size(); ++fi) {
    const double sigma_t = 7.0 / (2.0 * M_PI * tf.freqs[fi]);
    const int half = static_cast<int>(std::ceil(2.0 * sigma_t * sfreq));
    double inside = 0.0, total = 0.0;
    for (int t = 0; t < 500; ++t) {
      const double e = tf.mag.data[fi * 500 + static_cast<std::size_t>(t)];
      total += e * e;
      if (std::abs(t - t0) <= half) inside += e * e;
    }
    REQUIRE(inside >= 0.8 * total);
  }
}

TEST_CASE("morlet magnitude is linear in input amplitude") {
  Rng rng(3121);
  std::vector<double> x(300);
  for (auto& v : x) v = rng.normal();
  auto y = x;
  for (auto& v : y) v *= 3.0;

  const TFMatrix a = morlet_tf(x, 125.0, {4.0, 9.0, 14.0});
  const TFMatrix b = morlet_tf(y, 125.0, {4.0, 9.0, 14.0});
  for (std::size_t i = 0; i < a.mag.numel(); ++i) {
    if (a.mag.data[i] < 1e-12) continue;
    REQUIRE_THAT(b.mag.data[i], WithinRel(3.0 * a.mag.data[i], 1e-6));
  }
}

TEST_CASE("morlet validates its inputs") {
  const std::vector<double> x(100, 1.0);
  REQUIRE_THROWS_AS(morlet_tf(x, 125.0, {70.0}), ConfigError);   // >= Nyquist
  REQUIRE_THROWS_AS(morlet_tf(x, 125.0, {62.5}), ConfigError);   // == Nyquist
  REQUIRE_THROWS_AS(morlet_tf(x, 125.0, {0.0}), ConfigError);
  REQUIRE_THROWS_AS(morlet_tf(x, 125.0, {8.0}, 2.0), ConfigError);  // too few cycles
  REQUIRE_THROWS_AS(morlet_tf(x, 125.0, {}), ConfigError);
  REQUIRE_THROWS_AS(morlet_tf({}, 125.0, {8.0}), DataError);
}

// ---------------------------------------------------------------------------
// Filter TF difference
// ---------------------------------------------------------------------------

TEST_CASE("identical class signals give a vanishing difference") {
  const auto wave = [](double sec) { return std::sin(2.0 * M_PI * 6.0 * sec) + 0.3; };
  const EpochSet es = signal_epochs(5, 15, wave, wave);
  const Model m = phinet_model();

  const TFResponse r = filter_tf_difference(m, es);
  REQUIRE(r.n_filters() == 8);  // first convolution's filter count
  REQUIRE(r.freqs.size() == 27);
  REQUIRE(r.times.size() == 44);
  REQUIRE_THAT(r.times.front(), WithinAbs(0.0, 1e-12));
  for (const auto& mat : r.difference)
    for (double v : mat.data) REQUIRE(std::abs(v) < 1e-5);
}

TEST_CASE("swapping labels negates the difference exactly") {
  Rng rng(88);
  EpochSet es = signal_epochs(
      6, 14, [&](double sec) { return std::sin(2.0 * M_PI * 5.0 * sec); },
      [](double) { return 0.0; });
  // Add per-epoch noise so the two classes differ nontrivially.
  for (auto& v : es.epochs.data) v += 0.1 * rng.normal();

  const Model m = phinet_model();
  const TFResponse fwd = filter_tf_difference(m, es);
  EpochSet flipped = es;
  for (auto& y : flipped.labels) y = 1 - y;
  const TFResponse rev = filter_tf_difference(m, flipped);

  REQUIRE(fwd.n_filters() == rev.n_filters());
  for (std::size_t f = 0; f < fwd.n_filters(); ++f)
    for (std::size_t i = 0; i < fwd.difference[f].numel(); ++i)
      REQUIRE(rev.difference[f].data[i] == -fwd.difference[f].data[i]);
}

TEST_CASE("a 5 Hz target tone concentrates difference energy in the low rows") {
  const EpochSet es = signal_epochs(
      8, 24, [](double sec) { return std::sin(2.0 * M_PI * 5.0 * sec); },
      [](double) { return 0.0; });
  const Model m = phinet_model();
  const TFResponse r = filter_tf_difference(m, es);

  double low = 0.0, total = 0.0;
  for (const auto& mat : r.difference)
    for (std::size_t fi = 0; fi < r.freqs.size(); ++fi)
      for (std::size_t ti = 0; ti < r.times.size(); ++ti) {
        const double v = mat.data[fi * r.times.size() + ti];
        total += v * v;
        if (r.freqs[fi] <= 10.0) low += v * v;
      }
  REQUIRE(total > 0.0);
  REQUIRE(low >= 0.8 * total);
}

TEST_CASE("difference equals target minus nontarget and needs both classes") {
  const EpochSet es = signal_epochs(
      4, 12, [](double sec) { return std::cos(2.0 * M_PI * 7.0 * sec); },
      [](double sec) { return 0.2 * sec; });
  const Model m = phinet_model();
  const TFResponse r = filter_tf_difference(m, es);
  for (std::size_t f = 0; f < r.n_filters(); ++f)
    for (std::size_t i = 0; i < r.difference[f].numel(); ++i)
      REQUIRE_THAT(r.difference[f].data[i],
                   WithinAbs(r.target[f].data[i] - r.nontarget[f].data[i], 1e-15));

  EpochSet single = es;
  for (auto& y : single.labels) y = 1;
  REQUIRE_THROWS_AS(filter_tf_difference(m, single), DataError);
}

// ---------------------------------------------------------------------------
// Embedding projection
// ---------------------------------------------------------------------------

namespace {

EmbeddingTable planted_table(const std::vector<std::vector<float>>& rows, CondMode mode,
                             int feature_dim) {
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    char buf[8];
    std::snprintf(buf, sizeof buf, "s%02zu", i);
    ids.push_back(buf);
  }
  EmbeddingTable t(mode, feature_dim, ids, 1);
  std::size_t i = 0;
  t.for_each_row([&](const std::string&, TensorF& row) {
    REQUIRE(row.numel() == rows[i].size());
    std::copy(rows[i].begin(), rows[i].end(), row.data.begin());
    ++i;
  });
  return t;
}

}  // namespace

TEST_CASE("identical embedding rows collapse to the origin in one cluster") {
  const std::vector<float> same = {0.5f, -0.25f, 0.1f, 0.8f, 0.0f, 0.3f, -0.6f, 0.2f};
  const EmbeddingTable t =
      planted_table({same, same, same, same}, CondMode::projection, 8);
  const EmbeddingProjection p = embedding_projection(t, 2, 7);
  REQUIRE(p.coords.size() == 4);
  for (const auto& c : p.coords) {
    REQUIRE_THAT(c[0], WithinAbs(0.0, 1e-6));
    REQUIRE_THAT(c[1], WithinAbs(0.0, 1e-6));
  }
  for (int lab : p.clusters) REQUIRE(lab == p.clusters.front());
  REQUIRE_THAT(p.variance_explained[0] + p.variance_explained[1], WithinAbs(0.0, 1e-9));
}

TEST_CASE("well-separated row groups are recovered exactly by two clusters") {
  Rng rng(515);
  std::vector<std::vector<float>> rows;
  for (int g = 0; g < 2; ++g)
    for (int i = 0; i < 5; ++i) {
      std::vector<float> r(12);
      for (std::size_t j = 0; j < r.size(); ++j) {
        const double base = (g == 0 ? 1.0 : -1.0) * (j < 6 ? 1.0 : 0.4);
        r[j] = static_cast<float>(base + 0.05 * rng.normal());  // 10x separation vs jitter
      }
      rows.push_back(r);
    }
  const EmbeddingTable t = planted_table(rows, CondMode::film, 6);
  const EmbeddingProjection p = embedding_projection(t, 2, 99);

  for (int i = 1; i < 5; ++i) REQUIRE(p.clusters[static_cast<std::size_t>(i)] == p.clusters[0]);
  for (int i = 6; i < 10; ++i) REQUIRE(p.clusters[static_cast<std::size_t>(i)] == p.clusters[5]);
  REQUIRE(p.clusters[0] != p.clusters[5]);
  REQUIRE(p.subjects.front() == "s00");
}

TEST_CASE("projection output is centered and preserves rank-2 geometry") {
  // Rows live exactly in a 2-D plane, so the top-2 projection is an isometry.
  std::vector<double> u(10, 0.0), v(10, 0.0);
  u[1] = 1.0;
  v[4] = 1.0;
  Rng rng(9);
  std::vector<std::vector<float>> rows;
  std::vector<std::array<double, 2>> ab;
  for (int i = 0; i < 6; ++i) {
    const double a = 2.0 * rng.uniform() - 1.0, b = 2.0 * rng.uniform() - 1.0;
    ab.push_back({a, b});
    std::vector<float> r(10);
    for (int j = 0; j < 10; ++j) r[static_cast<std::size_t>(j)] = static_cast<float>(a * u[static_cast<std::size_t>(j)] + b * v[static_cast<std::size_t>(j)]);
    rows.push_back(r);
  }
  const EmbeddingTable t = planted_table(rows, CondMode::film, 5);
  const EmbeddingProjection p = embedding_projection(t, 1, 3);

  double mx = 0.0, my = 0.0;
  for (const auto& c : p.coords) {
    mx += c[0];
    my += c[1];
  }
  REQUIRE_THAT(mx / 6.0, WithinAbs(0.0, 1e-9));
  REQUIRE_THAT(my / 6.0, WithinAbs(0.0, 1e-9));

  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = i + 1; j < rows.size(); ++j) {
      const double dorig = std::hypot(ab[i][0] - ab[j][0], ab[i][1] - ab[j][1]);
      const double dproj = std::hypot(p.coords[i][0] - p.coords[j][0],
                                      p.coords[i][1] - p.coords[j][1]);
      REQUIRE_THAT(dproj, WithinAbs(dorig, 1e-5));
    }

  // Rank-2 rows leave no variance beyond the first two components.
  REQUIRE_THAT(p.variance_explained[0] + p.variance_explained[1], WithinAbs(1.0, 1e-9));
  REQUIRE(p.variance_explained[0] >= p.variance_explained[1]);
}

TEST_CASE("projection validates the cluster count and is seed-deterministic") {
  const EmbeddingTable t(CondMode::projection, 8, {"a", "b", "c"}, 77);
  REQUIRE_THROWS_AS(embedding_projection(t, 4, 1), ConfigError);
  REQUIRE_THROWS_AS(embedding_projection(t, 0, 1), ConfigError);

  const EmbeddingProjection a = embedding_projection(t, 2, 42);
  const EmbeddingProjection b = embedding_projection(t, 2, 42);
  REQUIRE(a.coords == b.coords);
  REQUIRE(a.clusters == b.clusters);
  REQUIRE(a.subjects == b.subjects);
}

// ---------------------------------------------------------------------------
// Exports
// ---------------------------------------------------------------------------

TEST_CASE("export bundle gates the embedding projection on conditioning") {
  const auto dir = temp_dir();
  const EpochSet es = signal_epochs(
      5, 15, [](double sec) { return std::sin(2.0 * M_PI * 5.0 * sec); },
      [](double) { return 0.0; });

  Checkpoint plain;
  plain.model = phinet_model();
  const auto plain_files = export_explain(dir / "plain", plain, es);
  REQUIRE(std::count(plain_files.begin(), plain_files.end(), "channel_importance.json") == 1);
  REQUIRE(std::count(plain_files.begin(), plain_files.end(), "embedding_projection.json") == 0);
  REQUIRE(std::filesystem::exists(dir / "plain" / "tf_difference_0.csv"));
  REQUIRE(std::filesystem::exists(dir / "plain" / "tf_difference_7.csv"));
  REQUIRE_FALSE(std::filesystem::exists(dir / "plain" / "embedding_projection.json"));

  Checkpoint cond;
  cond.model = phinet_model();
  cond.model.conditioning.emplace(CondMode::film, cond.model.cfg.feature_dim,
                                  std::vector<std::string>{"s01", "s02", "s03"}, 5);
  const auto cond_files = export_explain(dir / "cond", cond, es);
  REQUIRE(std::count(cond_files.begin(), cond_files.end(), "embedding_projection.json") == 1);

  const auto parsed = nlohmann::json::parse(slurp(dir / "cond" / "embedding_projection.json"));
  REQUIRE(parsed.at("method").get<std::string>() == "pca");
  REQUIRE(parsed.at("subjects").size() == 3);
  REQUIRE(parsed.at("coords").size() == 3);
  REQUIRE(parsed.at("clusters").size() == 3);

  const auto ci = nlohmann::json::parse(slurp(dir / "cond" / "channel_importance.json"));
  double sum = 0.0;
  for (double v : ci.at("scores")) sum += v;
  REQUIRE_THAT(sum, WithinAbs(1.0, 1e-9));
}

TEST_CASE("tf difference CSV carries the grids in its frame") {
  const auto dir = temp_dir();
  const EpochSet es = signal_epochs(
      4, 12, [](double sec) { return std::sin(2.0 * M_PI * 6.0 * sec); },
      [](double) { return 0.0; });
  Checkpoint ck;
  ck.model = phinet_model();
  export_explain(dir, ck, es);

  std::istringstream csv(slurp(dir / "tf_difference_0.csv"));
  std::string line;
  REQUIRE(std::getline(csv, line));
  REQUIRE(line.rfind("freq_hz,0,", 0) == 0);
  REQUIRE(static_cast<std::size_t>(std::count(line.begin(), line.end(), ',')) == 44);

  std::size_t rows = 0;
  double first_freq = 0.0, last_freq = 0.0;
  while (std::getline(csv, line)) {
    if (line.empty()) continue;
    const double f = std::stod(line.substr(0, line.find(',')));
    if (rows == 0) first_freq = f;
    last_freq = f;
    ++rows;
  }
  REQUIRE(rows == 27);
  REQUIRE_THAT(first_freq, WithinAbs(2.0, 1e-9));
  REQUIRE_THAT(last_freq, WithinAbs(15.0, 1e-9));
}

TEST_CASE("exports are deterministic and can emit schematic SVG renders") {
  const auto dir = temp_dir();
  const EpochSet es = signal_epochs(
      3, 9, [](double sec) { return std::sin(2.0 * M_PI * 4.0 * sec); },
      [](double) { return 0.1; });
  Checkpoint ck;
  ck.model = phinet_model();
  ck.model.conditioning.emplace(CondMode::projection, ck.model.cfg.feature_dim,
                                std::vector<std::string>{"s01", "s02"}, 6);

  ExplainOptions opt;
  opt.svg = true;
  const auto files_a = export_explain(dir / "a", ck, es, opt);
  const auto files_b = export_explain(dir / "b", ck, es, opt);
  REQUIRE(files_a == files_b);
  for (const auto& name : files_a)
    REQUIRE(slurp(dir / "a" / name) == slurp(dir / "b" / name));
  REQUIRE(std::filesystem::exists(dir / "a" / "channel_importance.svg"));
  REQUIRE(std::filesystem::exists(dir / "a" / "tf_difference_0.svg"));
}
