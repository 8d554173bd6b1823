// Copyright (c) 2026 erpcond authors
// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>

#include <chrono>
#include <cmath>
#include <cstring>
#include <vector>

#include "erpcond/models/architectures.hpp"

using namespace erpcond;

namespace {

ArchitectureConfig default_cfg(Arch a) {
  ArchitectureConfig cfg;
  cfg.arch = a;
  cfg.window_s = arch_default_window(a);
  return cfg;
}

std::vector<float> flatten_params(const Graph<float>& g) {
  std::vector<float> out;
  g.for_each_param("", [&](const std::string&, const TensorF& t) {
    out.insert(out.end(), t.data.begin(), t.data.end());
  });
  return out;
}

TensorF random_batch(int n, int channels, int window, std::uint64_t seed) {
  Rng rng(seed);
  TensorF x({n, channels, window});
  for (auto& v : x.data) v = static_cast<float>(rng.normal());
  return x;
}

}  // namespace

TEST_CASE("build: parameter counts sit inside the budget bands") {
  struct Row {
    Arch arch;
    std::size_t lo, hi, exact;
  };
  // Exact counts are regression anchors for the concrete recipes; the bands
  // are the actual contract.
  const Row rows[] = {
      {Arch::eegnet, 3375, 5625, 4041},
      {Arch::p300mcnn, 7125, 11875, 10001},
      {Arch::phinet, 2625, 4375, 3161},
  };
  for (const auto& r : rows) {
    INFO(arch_name(r.arch));
    Model m = build(default_cfg(r.arch), 11);
    REQUIRE(m.backbone_param_count() >= r.lo);
    REQUIRE(m.backbone_param_count() <= r.hi);
    REQUIRE(m.backbone_param_count() == r.exact);
    REQUIRE(m.param_count() == m.backbone_param_count());
    REQUIRE(m.cfg.feature_dim > 0);
  }
}

TEST_CASE("build: budget violation reports the offending count") {
  auto cfg = default_cfg(Arch::eegnet);
  cfg.n_channels = 120;  // inflates the spatial depthwise conv far past the band
  try {
    build(cfg, 1);
    FAIL("expected a budget error");
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    REQUIRE(msg.find("budget") != std::string::npos);
    bool has_digits = false;
    for (char c : msg) has_digits = has_digits || (c >= '0' && c <= '9');
    REQUIRE(has_digits);
  }
}

TEST_CASE("build: config validation") {
  auto cfg = default_cfg(Arch::eegnet);
  cfg.window_s = 0.45;
  REQUIRE_THROWS_AS(build(cfg, 1), ConfigError);
  cfg = default_cfg(Arch::eegnet);
  cfg.dropout_rate = 1.0;
  REQUIRE_THROWS_AS(build(cfg, 1), ConfigError);
  cfg = default_cfg(Arch::eegnet);
  cfg.kernel_length = 1000;
  REQUIRE_THROWS_AS(build(cfg, 1), ConfigError);
  cfg = default_cfg(Arch::eegnet);
  cfg.n_channels = 0;
  REQUIRE_THROWS_AS(build(cfg, 1), ConfigError);
}

TEST_CASE("build: same config and seed give bit-identical parameters") {
  for (Arch a : {Arch::eegnet, Arch::p300mcnn, Arch::phinet}) {
    Model m1 = build(default_cfg(a), 77);
    Model m2 = build(default_cfg(a), 77);
    Model m3 = build(default_cfg(a), 78);
    auto p1 = flatten_params(m1.extractor), p2 = flatten_params(m2.extractor),
         p3 = flatten_params(m3.extractor);
    REQUIRE(p1.size() == p2.size());
    REQUIRE(std::memcmp(p1.data(), p2.data(), p1.size() * sizeof(float)) == 0);
    REQUIRE(std::memcmp(p1.data(), p3.data(), p1.size() * sizeof(float)) != 0);
    auto h1 = flatten_params(m1.head), h2 = flatten_params(m2.head);
    REQUIRE(std::memcmp(h1.data(), h2.data(), h1.size() * sizeof(float)) == 0);
  }
}

TEST_CASE("extract_features: batch of 60 maps to (60, d) finite features") {
  for (Arch a : {Arch::eegnet, Arch::p300mcnn, Arch::phinet}) {
    INFO(arch_name(a));
    Model m = build(default_cfg(a), 5);
    const int win = m.cfg.window_samples();
    TensorF batch = random_batch(60, 8, win, 99);
    TensorF h = extract_features(m, batch);
    REQUIRE(h.shape == std::vector<int>{60, m.cfg.feature_dim});
    REQUIRE(h.all_finite());
  }
}

TEST_CASE("extract_features: expected window lengths per architecture") {
  REQUIRE(build(default_cfg(Arch::eegnet), 1).cfg.window_samples() == 63);
  REQUIRE(build(default_cfg(Arch::p300mcnn), 1).cfg.window_samples() == 75);
  REQUIRE(build(default_cfg(Arch::phinet), 1).cfg.window_samples() == 44);
}

TEST_CASE("extract_features: duplicated epoch gives identical feature rows") {
  Model m = build(default_cfg(Arch::phinet), 5);
  const int win = m.cfg.window_samples();
  TensorF one = random_batch(1, 8, win, 42);
  TensorF batch({4, 8, win});
  for (int i = 0; i < 4; ++i)
    std::memcpy(batch.ptr() + std::size_t(i) * one.numel(), one.ptr(),
                one.numel() * sizeof(float));
  TensorF h = extract_features(m, batch);
  const std::size_t d = static_cast<std::size_t>(m.cfg.feature_dim);
  for (int i = 1; i < 4; ++i)
    REQUIRE(std::memcmp(h.ptr(), h.ptr() + std::size_t(i) * d, d * sizeof(float)) == 0);
}

TEST_CASE("extract_features: all-zero input stays finite") {
  for (Arch a : {Arch::eegnet, Arch::p300mcnn, Arch::phinet}) {
    Model m = build(default_cfg(a), 3);
    TensorF batch({2, 8, m.cfg.window_samples()});
    TensorF h = extract_features(m, batch);
    REQUIRE(h.all_finite());
  }
}

TEST_CASE("extract_features: shape mismatch is a configuration error") {
  Model m = build(default_cfg(Arch::eegnet), 3);
  REQUIRE_THROWS_AS(extract_features(m, TensorF({2, 8, 50})), ConfigError);
  REQUIRE_THROWS_AS(extract_features(m, TensorF({2, 7, 63})), ConfigError);
  REQUIRE_THROWS_AS(extract_features(m, TensorF({16, 63})), ConfigError);
}

TEST_CASE("classify: zero head yields probability one half") {
  Model m = build(default_cfg(Arch::eegnet), 3);
  m.head.for_each_param("", [](const std::string&, TensorF& t) { t.fill(0.0f); });
  TensorF h({3, m.cfg.feature_dim});
  Rng rng(1);
  for (auto& v : h.data) v = static_cast<float>(rng.normal());
  for (double p : classify(m, h)) REQUIRE(p == 0.5);
}

TEST_CASE("classify: probabilities lie strictly inside (0,1)") {
  Model m = build(default_cfg(Arch::p300mcnn), 3);
  TensorF h({2, m.cfg.feature_dim});
  h.fill(1e6f);  // saturating logits must still clamp inside the open interval
  for (double p : classify(m, h)) {
    REQUIRE(p > 0.0);
    REQUIRE(p < 1.0);
  }
}

TEST_CASE("classify: increasing a positive-weight feature raises the probability") {
  Model m = build(default_cfg(Arch::eegnet), 3);
  int pos_idx = -1;
  m.head.for_each_param("", [&](const std::string& name, const TensorF& t) {
    if (name == "head.weight")
      for (std::size_t i = 0; i < t.numel(); ++i)
        if (t.data[i] > 0.0f && pos_idx < 0) pos_idx = static_cast<int>(i);
  });
  REQUIRE(pos_idx >= 0);
  TensorF h({1, m.cfg.feature_dim});
  const double p0 = classify(m, h)[0];
  h.data[static_cast<std::size_t>(pos_idx)] = 2.0f;
  const double p1 = classify(m, h)[0];
  REQUIRE(p1 > p0);
}

TEST_CASE("classify: agrees with a hand-computed sigmoid within 1e-6") {
  Model m = build(default_cfg(Arch::phinet), 21);
  const int d = m.cfg.feature_dim;
  TensorF h({2, d});
  Rng rng(9);
  for (auto& v : h.data) v = static_cast<float>(rng.normal());

  std::vector<double> w;
  double b = 0.0;
  m.head.for_each_param("", [&](const std::string& name, const TensorF& t) {
    if (name == "head.weight") w.assign(t.data.begin(), t.data.end());
    if (name == "head.bias") b = t.data[0];
  });
  REQUIRE(static_cast<int>(w.size()) == d);

  auto probs = classify(m, h);
  for (int i = 0; i < 2; ++i) {
    double z = b;
    for (int j = 0; j < d; ++j)
      z += w[static_cast<std::size_t>(j)] *
           static_cast<double>(h.data[std::size_t(i) * d + std::size_t(j)]);
    const double expect = 1.0 / (1.0 + std::exp(-z));
    REQUIRE_THAT(probs[static_cast<std::size_t>(i)],
                 Catch::Matchers::WithinAbs(expect, 1e-6));
  }
}

TEST_CASE("param_count: empty graph is zero, dense head is d+1") {
  REQUIRE(Graph<float>(std::vector<LayerSpec>{}).param_count() == 0);
  REQUIRE(Graph<float>({dense_spec("head", 16, 1)}).param_count() == 17);
}

TEST_CASE("param_count: conditioning rows are included when attached") {
  Model m = build(default_cfg(Arch::phinet), 4);
  const std::size_t backbone = m.param_count();
  m.conditioning.emplace(CondMode::projection, m.cfg.feature_dim,
                         std::vector<std::string>{"s01", "s02"}, 8);
  REQUIRE(m.param_count() == backbone + 2 * static_cast<std::size_t>(m.cfg.feature_dim));
  Model f = build(default_cfg(Arch::phinet), 4);
  f.conditioning.emplace(CondMode::film, f.cfg.feature_dim,
                         std::vector<std::string>{"s01", "s02", "s03"}, 8);
  REQUIRE(f.param_count() == backbone + 6 * static_cast<std::size_t>(f.cfg.feature_dim));
}

TEST_CASE("classify with subject conditioning matches the manual pipeline") {
  Model m = build(default_cfg(Arch::eegnet), 4);
  m.conditioning.emplace(CondMode::film, m.cfg.feature_dim,
                         std::vector<std::string>{"s01", "s02"}, 8);
  const int d = m.cfg.feature_dim;
  TensorF h({3, d});
  Rng rng(2);
  for (auto& v : h.data) v = static_cast<float>(rng.normal());

  auto got = classify(m, h, "s02");
  const TensorF& row = m.conditioning->lookup("s02");
  TensorF manual({3, d});
  for (int i = 0; i < 3; ++i)
    condition_forward_item(CondMode::film, h.ptr() + std::size_t(i) * d, row.ptr(),
                           manual.ptr() + std::size_t(i) * d, d);
  auto expect = classify(m, manual);
  for (int i = 0; i < 3; ++i) REQUIRE(got[static_cast<std::size_t>(i)] == expect[static_cast<std::size_t>(i)]);

  REQUIRE_THROWS_AS(classify(m, h, "s99"), DataError);
  Model bare = build(default_cfg(Arch::eegnet), 4);
  REQUIRE_THROWS_AS(classify(bare, h, "s01"), ConfigError);
}

TEST_CASE("backward through each architecture matches a directional derivative") {
  for (Arch a : {Arch::eegnet, Arch::p300mcnn, Arch::phinet}) {
    INFO(arch_name(a));
    Model m = build(default_cfg(a), 31);
    Graph<double> g(m.extractor.specs());
    g.copy_state_from(m.extractor);

    TensorD x({2, 1, 8, m.cfg.window_samples()});
    Rng rng(6);
    for (auto& v : x.data) v = rng.normal();
    FwdCtx ctx;
    ctx.train = true;
    ctx.dropout_seed = 417;

    auto trace = g.forward(x, ctx);
    TensorD ones(trace.output().shape);
    ones.fill(1.0);
    GradientSet<double> grads;
    g.backward(trace, ones, grads, {}, "");

    // Random direction v over all parameters; compare g.v with the
    // symmetric difference of the summed output along v.
    std::map<std::string, TensorD> dir;
    double gdotv = 0.0;
    for (auto& kv : grads) {
      TensorD v(kv.second.shape);
      for (auto& d : v.data) d = rng.normal();
      for (std::size_t i = 0; i < v.numel(); ++i) gdotv += v.data[i] * kv.second.data[i];
      dir.emplace(kv.first, std::move(v));
    }
    auto loss_at = [&](double t) {
      Graph<double> gg(m.extractor.specs());
      gg.copy_state_from(m.extractor);
      gg.for_each_param("", [&](const std::string& name, TensorD& p) {
        const auto& v = dir.at(name);
        for (std::size_t i = 0; i < p.numel(); ++i) p.data[i] += t * v.data[i];
      });
      TensorD out = gg.apply(x, ctx);
      double s = 0.0;
      for (double u : out.data) s += u;
      return s;
    };
    const double eps = 1e-6;
    const double fd = (loss_at(eps) - loss_at(-eps)) / (2 * eps);
    REQUIRE_THAT(fd, Catch::Matchers::WithinRel(gdotv, 1e-5));
  }
}

TEST_CASE("eval-mode single-epoch inference is fast enough for embedded use") {
  Model m = build(default_cfg(Arch::p300mcnn), 3);  // largest of the three
  TensorF batch = random_batch(1, 8, m.cfg.window_samples(), 4);
  // Warm-up, then take the fastest of several runs to dodge scheduler noise.
  extract_features(m, batch);
  double best_ms = 1e9;
  for (int rep = 0; rep < 20; ++rep) {
    const auto t0 = std::chrono::steady_clock::now();
    TensorF h = extract_features(m, batch);
    auto p = classify(m, h);
    const auto t1 = std::chrono::steady_clock::now();
    REQUIRE(p[0] > 0.0);
    best_ms = std::min(best_ms, std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  REQUIRE(best_ms < 10.0);
}
