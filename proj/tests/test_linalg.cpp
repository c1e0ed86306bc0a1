#include <cmath>

#include <doctest.h>

#include "fmms/error.hpp"
#include "fmms/linalg.hpp"
#include "fmms/rng.hpp"

using namespace fmms;

namespace {
Embedding emb(Vec v) { return Embedding{std::move(v), false}; }
}  // namespace

TEST_CASE("normalize: 3-4-5 triangle") {
  const Embedding out = normalize(emb({3.0, 4.0}));
  CHECK(out.values[0] == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(out.values[1] == doctest::Approx(0.8).epsilon(1e-15));
  CHECK(out.unit_norm);
}

TEST_CASE("normalize: already unit vector") {
  const Embedding out = normalize(emb({1.0, 0.0, 0.0}));
  CHECK(out.values == Vec{1.0, 0.0, 0.0});
}

TEST_CASE("normalize: zero vector raises") {
  CHECK_THROWS_AS(normalize(emb({0.0, 0.0})), ZeroVectorError);
}

TEST_CASE("normalize is idempotent to 1e-12") {
  Rng rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    Vec v(5);
    for (auto& x : v) x = rng.normal() * 10.0;
    const Embedding once = normalize(emb(v));
    const Embedding twice = normalize(once);
    for (size_t i = 0; i < v.size(); ++i)
      CHECK(std::abs(once.values[i] - twice.values[i]) <= 1e-12);
  }
}

TEST_CASE("cosine: self similarity is 1") {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    Vec v(4);
    for (auto& x : v) x = rng.normal();
    const Embedding e = emb(v);
    CHECK(cosine(e, e) == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("cosine: orthogonal and analytic values") {
  CHECK(cosine(emb({1.0, 0.0}), emb({0.0, 1.0})) == 0.0);
  CHECK(cosine(emb({1.0, 0.0}), emb({1.0, 1.0})) ==
        doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-12));
  CHECK_THROWS_AS(cosine(emb({0.0, 0.0}), emb({1.0, 0.0})), ZeroVectorError);
}

TEST_CASE("cosine: symmetric and scale invariant to 1e-9") {
  Rng rng(13);
  for (int trial = 0; trial < 50; ++trial) {
    Vec a(6), b(6);
    for (auto& x : a) x = rng.normal();
    for (auto& x : b) x = rng.normal();
    const double alpha = rng.unit() * 10.0 + 0.01;
    const double beta = rng.unit() * 10.0 + 0.01;
    Vec sa = a, sb = b;
    for (auto& x : sa) x *= alpha;
    for (auto& x : sb) x *= beta;
    const double base = cosine(emb(a), emb(b));
    CHECK(std::abs(base - cosine(emb(b), emb(a))) <= 1e-15);
    CHECK(std::abs(base - cosine(emb(sa), emb(sb))) <= 1e-9);
  }
}

TEST_CASE("cosine output stays in [-1, 1]") {
  Rng rng(17);
  for (int trial = 0; trial < 200; ++trial) {
    Vec a(3), b(3);
    for (auto& x : a) x = rng.normal() * 1e8;
    for (auto& x : b) x = rng.normal() * 1e-8;
    const double c = cosine(emb(a), emb(b));
    CHECK(c <= 1.0);
    CHECK(c >= -1.0);
  }
}

TEST_CASE("finite_diff_grad: squared norm has gradient 2x") {
  const auto f = [](const Vec& x) { return dot(x, x); };
  const Vec g = finite_diff_grad(f, {1.0, 2.0}, 1e-5);
  CHECK(g[0] == doctest::Approx(2.0).epsilon(1e-8));
  CHECK(g[1] == doctest::Approx(4.0).epsilon(1e-8));
}

TEST_CASE("finite_diff_grad: constant function has zero gradient") {
  const auto f = [](const Vec&) { return 3.25; };
  const Vec g = finite_diff_grad(f, {0.4, -0.7, 2.0}, 1e-5);
  for (double x : g) CHECK(x == 0.0);
}

TEST_CASE("finite_diff_grad matches the analytic cosine gradient") {
  // d cos(x, c) / dx = (c_hat - cos * x_hat) / ||x||
  Rng rng(23);
  for (int trial = 0; trial < 20; ++trial) {
    Vec x(4), c(4);
    for (auto& v : x) v = rng.normal() + 0.1;
    for (auto& v : c) v = rng.normal() + 0.1;
    const Embedding ce = emb(c);
    const auto f = [&](const Vec& p) { return cosine(emb(p), ce); };
    const Vec num = finite_diff_grad(f, x, 1e-5);

    const double nx = norm2(x);
    const double nc = norm2(c);
    const double cos_xc = dot(x, c) / (nx * nc);
    double max_rel = 0.0;
    double scale = 0.0;
    for (size_t i = 0; i < x.size(); ++i) {
      const double analytic = (c[i] / nc - cos_xc * x[i] / nx) / nx;
      max_rel = std::max(max_rel, std::abs(analytic - num[i]));
      scale = std::max(scale, std::abs(analytic));
    }
    CHECK(max_rel <= 1e-6 * std::max(scale, 1e-6));
  }
}

TEST_CASE("finite_diff_grad recovers a linear functional's weights") {
  Rng rng(29);
  Vec w(8), x(8);
  for (auto& v : w) v = rng.normal();
  for (auto& v : x) v = rng.normal();
  const auto f = [&](const Vec& p) { return dot(w, p); };
  const Vec g = finite_diff_grad(f, x, 1e-5);
  for (size_t i = 0; i < w.size(); ++i)
    CHECK(std::abs(g[i] - w[i]) <= 1e-6 * std::max(1.0, std::abs(w[i])));
}

TEST_CASE("finite_diff_grad flags non-finite evaluations") {
  const auto f = [](const Vec& x) { return std::log(x[0]); };
  CHECK_THROWS_AS(finite_diff_grad(f, {0.0}, 1e-3), NonFiniteError);
}
