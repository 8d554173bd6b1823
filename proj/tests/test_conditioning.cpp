// Copyright (c) 2026 erpcond authors
// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstring>
#include <vector>

#include "erpcond/conditioning/embedding.hpp"

using namespace erpcond;

namespace {

double vnorm(const std::vector<double>& v) {
  double ss = 0.0;
  for (double x : v) ss += x * x;
  return std::sqrt(ss);
}

double vdot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

TEST_CASE("projection: self-aligned embedding rescales by the feature norm") {
  std::vector<double> h = {1.0, -2.0, 2.0};  // norm 3
  std::vector<double> e = {1.0 / 3, -2.0 / 3, 2.0 / 3};
  auto out = condition_projection(h, e);
  for (std::size_t i = 0; i < h.size(); ++i)
    REQUIRE_THAT(out[i], Catch::Matchers::WithinAbs(3.0 * h[i], 1e-12));
}

TEST_CASE("projection: orthogonal embedding zeroes the output") {
  std::vector<double> h = {2.0, 0.0, 0.0};
  std::vector<double> e = {0.0, 0.6, 0.8};
  auto out = condition_projection(h, e);
  for (double v : out) REQUIRE_THAT(v, Catch::Matchers::WithinAbs(0.0, 1e-12));
}

TEST_CASE("projection: hand arithmetic h=(3,4), e=(1,0)") {
  auto out = condition_projection<double>({3.0, 4.0}, {1.0, 0.0});
  REQUIRE_THAT(out[0], Catch::Matchers::WithinAbs(9.0, 1e-12));
  REQUIRE_THAT(out[1], Catch::Matchers::WithinAbs(12.0, 1e-12));
}

TEST_CASE("projection: dimension mismatch is a configuration error") {
  REQUIRE_THROWS_AS(condition_projection<double>({1.0, 2.0}, {1.0, 0.0, 0.0}), ConfigError);
}

TEST_CASE("projection: output stays colinear with the feature vector") {
  Rng rng(801);
  for (int rep = 0; rep < 20; ++rep) {
    const int d = 2 + static_cast<int>(rng.bounded(14));
    std::vector<double> h(d), e(d);
    for (auto& v : h) v = rng.normal();
    for (auto& v : e) v = rng.normal();
    const double en = vnorm(e);
    for (auto& v : e) v /= en;
    auto out = condition_projection(h, e);
    const double lambda = vdot(h, e);
    double resid = 0.0;
    for (int i = 0; i < d; ++i) {
      const double r = out[static_cast<std::size_t>(i)] - lambda * h[static_cast<std::size_t>(i)];
      resid += r * r;
    }
    REQUIRE(std::sqrt(resid) < 1e-6 * vnorm(h));
  }
}

TEST_CASE("projection: scaling the input by c scales the output by c^2") {
  Rng rng(802);
  const int d = 7;
  std::vector<double> h(d), e(d);
  for (auto& v : h) v = rng.normal();
  for (auto& v : e) v = rng.normal();
  for (double c : {0.5, 2.0, -3.0}) {
    std::vector<double> ch(h);
    for (auto& v : ch) v *= c;
    auto base = condition_projection(h, e);
    auto scaled = condition_projection(ch, e);
    for (int i = 0; i < d; ++i)
      REQUIRE_THAT(scaled[static_cast<std::size_t>(i)],
                   Catch::Matchers::WithinRel(c * c * base[static_cast<std::size_t>(i)], 1e-12));
  }
}

TEST_CASE("film: unit-mask gamma with zero beta keeps only the first dimension") {
  std::vector<double> h = {5.0, -3.0, 2.0, 7.0};
  std::vector<double> e = {1.0, 0.0, 0.0, 0.0, /*beta*/ 0.0, 0.0, 0.0, 0.0};
  auto out = condition_film(h, e);
  REQUIRE_THAT(out[0], Catch::Matchers::WithinAbs(5.0, 1e-12));
  for (int i = 1; i < 4; ++i)
    REQUIRE_THAT(out[static_cast<std::size_t>(i)], Catch::Matchers::WithinAbs(0.0, 1e-12));
}

TEST_CASE("film: zero gamma makes the output equal beta for any input") {
  std::vector<double> beta = {0.6, 0.0, 0.8};
  std::vector<double> e = {0.0, 0.0, 0.0, beta[0], beta[1], beta[2]};
  auto a = condition_film<double>({1.0, 2.0, 3.0}, e);
  auto b = condition_film<double>({-9.0, 0.5, 100.0}, e);
  for (int i = 0; i < 3; ++i) {
    REQUIRE_THAT(a[static_cast<std::size_t>(i)],
                 Catch::Matchers::WithinAbs(beta[static_cast<std::size_t>(i)], 1e-12));
    REQUIRE(a[static_cast<std::size_t>(i)] == b[static_cast<std::size_t>(i)]);
  }
}

TEST_CASE("film: hand arithmetic gamma=(0.6,0.8), beta=(0,1), h=(1,1)") {
  auto out = condition_film<double>({1.0, 1.0}, {0.6, 0.8, 0.0, 1.0});
  REQUIRE_THAT(out[0], Catch::Matchers::WithinAbs(0.6, 1e-12));
  REQUIRE_THAT(out[1], Catch::Matchers::WithinAbs(1.8, 1e-12));
}

TEST_CASE("film: odd embedding length is a configuration error") {
  REQUIRE_THROWS_AS(condition_film<double>({1.0}, {1.0, 2.0, 3.0}), ConfigError);
  REQUIRE_THROWS_AS(condition_film<double>({1.0, 2.0}, {1.0, 0.0}), ConfigError);
}

TEST_CASE("film: perturbing one gamma entry changes only that output dimension") {
  Rng rng(803);
  const int d = 6;
  std::vector<double> h(d), e(2 * d);
  for (auto& v : h) v = rng.normal();
  for (auto& v : e) v = rng.normal();
  auto base = condition_film(h, e);
  for (int j = 0; j < d; ++j) {
    auto e2 = e;
    e2[static_cast<std::size_t>(j)] += 0.37;
    auto out = condition_film(h, e2);
    for (int i = 0; i < d; ++i) {
      const double diff = out[static_cast<std::size_t>(i)] - base[static_cast<std::size_t>(i)];
      if (i == j)
        REQUIRE_THAT(diff,
                     Catch::Matchers::WithinAbs(0.37 * h[static_cast<std::size_t>(i)], 1e-12));
      else
        REQUIRE(diff == 0.0);
    }
  }
}

TEST_CASE("conditioning gradients match finite differences") {
  Rng rng(804);
  for (CondMode mode : {CondMode::projection, CondMode::film}) {
    const int d = 9;
    const int el = cond_row_len(mode, d);
    std::vector<double> h(d), e(el), w(d);
    for (auto& v : h) v = rng.normal();
    for (auto& v : e) v = rng.normal();
    for (auto& v : w) v = rng.normal();

    auto loss = [&](const std::vector<double>& hh, const std::vector<double>& ee) {
      std::vector<double> out(static_cast<std::size_t>(d));
      condition_forward_item(mode, hh.data(), ee.data(), out.data(), d);
      double s = 0.0;
      for (int i = 0; i < d; ++i)
        s += w[static_cast<std::size_t>(i)] * out[static_cast<std::size_t>(i)];
      return s;
    };

    std::vector<double> dh(static_cast<std::size_t>(d), 0.0), de(static_cast<std::size_t>(el), 0.0);
    condition_backward_item(mode, h.data(), e.data(), w.data(), dh.data(), de.data(), d);

    const double eps = 1e-6;
    for (int i = 0; i < d; ++i) {
      auto hp = h, hm = h;
      hp[static_cast<std::size_t>(i)] += eps;
      hm[static_cast<std::size_t>(i)] -= eps;
      const double fd = (loss(hp, e) - loss(hm, e)) / (2 * eps);
      const double denom = std::max({std::abs(fd), std::abs(dh[static_cast<std::size_t>(i)]), 1e-6});
      REQUIRE(std::abs(fd - dh[static_cast<std::size_t>(i)]) / denom < 1e-4);
    }
    for (int i = 0; i < el; ++i) {
      auto ep = e, em = e;
      ep[static_cast<std::size_t>(i)] += eps;
      em[static_cast<std::size_t>(i)] -= eps;
      const double fd = (loss(h, ep) - loss(h, em)) / (2 * eps);
      const double denom = std::max({std::abs(fd), std::abs(de[static_cast<std::size_t>(i)]), 1e-6});
      REQUIRE(std::abs(fd - de[static_cast<std::size_t>(i)]) / denom < 1e-4);
    }
  }
}

TEST_CASE("table: construction yields unit rows, deterministic in seed") {
  EmbeddingTable a(CondMode::projection, 12, {"s01", "s02", "s03"}, 99);
  EmbeddingTable b(CondMode::projection, 12, {"s01", "s02", "s03"}, 99);
  EmbeddingTable c(CondMode::projection, 12, {"s01", "s02", "s03"}, 100);
  REQUIRE(a.is_normalized());
  REQUIRE(a.size() == 3);
  REQUIRE(a.param_count() == 36);
  bool all_same = true, any_diff = false;
  for (const auto& id : a.subjects()) {
    const auto& ra = a.lookup(id);
    all_same = all_same && std::memcmp(ra.ptr(), b.lookup(id).ptr(),
                                       ra.numel() * sizeof(float)) == 0;
    any_diff = any_diff || std::memcmp(ra.ptr(), c.lookup(id).ptr(),
                                       ra.numel() * sizeof(float)) != 0;
  }
  REQUIRE(all_same);
  REQUIRE(any_diff);
}

TEST_CASE("table: film rows are twice the feature dim and unit per half") {
  EmbeddingTable t(CondMode::film, 5, {"a", "b"}, 7);
  REQUIRE(t.row_len() == 10);
  REQUIRE(t.param_count() == 20);
  REQUIRE(t.is_normalized());
  for (const auto& id : t.subjects()) {
    const auto& r = t.lookup(id);
    double g = 0.0, bta = 0.0;
    for (int i = 0; i < 5; ++i) {
      g += double(r.data[static_cast<std::size_t>(i)]) * r.data[static_cast<std::size_t>(i)];
      bta += double(r.data[static_cast<std::size_t>(5 + i)]) * r.data[static_cast<std::size_t>(5 + i)];
    }
    REQUIRE_THAT(std::sqrt(g), Catch::Matchers::WithinAbs(1.0, 1e-6));
    REQUIRE_THAT(std::sqrt(bta), Catch::Matchers::WithinAbs(1.0, 1e-6));
  }
}

TEST_CASE("table: normalize maps (3,4) to (0.6,0.8) and is idempotent") {
  EmbeddingTable t(CondMode::projection, 2, {"a"}, 1);
  auto& row = t.row_mut("a");
  row.data = {3.0f, 4.0f};
  t.normalize();
  REQUIRE_THAT(double(row.data[0]), Catch::Matchers::WithinAbs(0.6, 1e-6));
  REQUIRE_THAT(double(row.data[1]), Catch::Matchers::WithinAbs(0.8, 1e-6));
  const float before[2] = {row.data[0], row.data[1]};
  t.normalize();
  REQUIRE(std::abs(row.data[0] - before[0]) < 1e-7f);
  REQUIRE(std::abs(row.data[1] - before[1]) < 1e-7f);
}

TEST_CASE("table: film normalization is per half") {
  EmbeddingTable t(CondMode::film, 2, {"a"}, 1);
  auto& row = t.row_mut("a");
  row.data = {2.0f, 0.0f, 0.0f, 5.0f};
  t.normalize();
  REQUIRE_THAT(double(row.data[0]), Catch::Matchers::WithinAbs(1.0, 1e-6));
  REQUIRE_THAT(double(row.data[1]), Catch::Matchers::WithinAbs(0.0, 1e-6));
  REQUIRE_THAT(double(row.data[2]), Catch::Matchers::WithinAbs(0.0, 1e-6));
  REQUIRE_THAT(double(row.data[3]), Catch::Matchers::WithinAbs(1.0, 1e-6));
}

TEST_CASE("table: normalization preserves direction") {
  EmbeddingTable t(CondMode::projection, 8, {"a"}, 5);
  auto& row = t.row_mut("a");
  Rng rng(42);
  for (auto& v : row.data) v = static_cast<float>(3.0 * rng.normal());
  std::vector<double> before(row.data.begin(), row.data.end());
  t.normalize();
  std::vector<double> after(row.data.begin(), row.data.end());
  const double cosine = vdot(before, after) / (vnorm(before) * vnorm(after));
  REQUIRE_THAT(cosine, Catch::Matchers::WithinAbs(1.0, 1e-6));
}

TEST_CASE("table: zero row cannot be normalized") {
  EmbeddingTable t(CondMode::projection, 4, {"a"}, 5);
  t.row_mut("a").fill(0.0f);
  REQUIRE_THROWS_AS(t.normalize(), NumericError);
}

TEST_CASE("table: lookup of an unknown subject is an explicit error") {
  EmbeddingTable t(CondMode::projection, 4, {"s01"}, 5);
  REQUIRE_NOTHROW(t.lookup("s01"));
  REQUIRE_THROWS_AS(t.lookup("s99"), DataError);
  REQUIRE_THROWS_WITH(t.lookup("s99"), Catch::Matchers::ContainsSubstring("s99"));
}

TEST_CASE("table: mean-strategy add of (1,0) and (0,1) gives the diagonal unit vector") {
  EmbeddingTable t(CondMode::projection, 2, {"a", "b"}, 5);
  t.row_mut("a").data = {1.0f, 0.0f};
  t.row_mut("b").data = {0.0f, 1.0f};
  t.add_subject("c", "mean");
  const auto& r = t.lookup("c");
  const double s2 = std::sqrt(2.0) / 2.0;
  REQUIRE_THAT(double(r.data[0]), Catch::Matchers::WithinAbs(s2, 1e-6));
  REQUIRE_THAT(double(r.data[1]), Catch::Matchers::WithinAbs(s2, 1e-6));
  REQUIRE(t.has_subject("c"));
  REQUIRE(t.size() == 3);
}

TEST_CASE("table: add_subject leaves existing rows bit-identical") {
  EmbeddingTable t(CondMode::film, 6, {"a", "b", "c"}, 17);
  std::vector<std::vector<float>> before;
  for (const auto& id : t.subjects()) before.push_back(t.lookup(id).data);
  t.add_subject("d", "mean");
  for (std::size_t i = 0; i < 3; ++i) {
    const auto& now = t.lookup(t.subjects()[i]).data;
    REQUIRE(std::memcmp(now.data(), before[i].data(), now.size() * sizeof(float)) == 0);
  }
}

TEST_CASE("table: random-strategy add is reproducible and unit norm") {
  EmbeddingTable t1(CondMode::projection, 10, {"a"}, 3);
  EmbeddingTable t2(CondMode::projection, 10, {"a"}, 3);
  t1.add_subject("z", "random", 77);
  t2.add_subject("z", "random", 77);
  REQUIRE(std::memcmp(t1.lookup("z").ptr(), t2.lookup("z").ptr(), 10 * sizeof(float)) == 0);
  REQUIRE(t1.is_normalized());

  EmbeddingTable t3(CondMode::projection, 10, {"a"}, 3);
  t3.add_subject("z", "random", 78);
  REQUIRE(std::memcmp(t1.lookup("z").ptr(), t3.lookup("z").ptr(), 10 * sizeof(float)) != 0);
}

TEST_CASE("table: duplicate subject registration is rejected") {
  EmbeddingTable t(CondMode::projection, 4, {"a"}, 5);
  REQUIRE_THROWS_AS(t.add_subject("a", "random", 1), ConfigError);
  REQUIRE_THROWS_AS(t.add_subject("b", "centroid", 1), ConfigError);
  REQUIRE_THROWS_AS(EmbeddingTable(CondMode::projection, 4, {"a", "a"}, 5), ConfigError);
}

TEST_CASE("table: renormalization restores the invariant after a raw update") {
  EmbeddingTable t(CondMode::film, 7, {"a", "b"}, 23);
  Rng rng(5);
  t.for_each_row([&](const std::string& name, TensorF& row) {
    REQUIRE(name.rfind("cond.row.", 0) == 0);
    for (auto& v : row.data) v += static_cast<float>(0.1 * rng.normal());
  });
  REQUIRE_FALSE(t.is_normalized());
  t.normalize();
  REQUIRE(t.is_normalized());
}
