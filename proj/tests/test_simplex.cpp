#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "oracles.hpp"
#include "salab/error.hpp"
#include "salab/rng.hpp"
#include "salab/simplex.hpp"

using namespace salab;
using namespace salab::simplex;

namespace {

std::vector<double> random_logits(CounterRng& rng, std::size_t n, double sd = 3.0) {
  std::vector<double> z(n);
  for (double& v : z) v = rng.normal(0.0, sd);
  return z;
}

std::vector<MappingKind> all_kinds() {
  return {MappingKind::softmax(), MappingKind::sparsemax(), MappingKind::entmax15(),
          MappingKind::entmax(1.3)};
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST_CASE("softmax worked examples") {
  auto p = softmax(std::vector<double>{0, 0, 0});
  for (double v : p) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));

  p = softmax(std::vector<double>{std::log(2.0), 0.0});
  CHECK(p[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-14));
  CHECK(p[1] == doctest::Approx(1.0 / 3.0).epsilon(1e-14));

  p = softmax(std::vector<double>{1.0, 0.0});
  const auto ref = oracle::softmax_long_double({1.0, 0.0});
  CHECK(std::abs(p[0] - 0.7311) <= 1e-4);
  CHECK(std::abs(p[1] - 0.2689) <= 1e-4);
  CHECK(max_abs_diff(p, ref) <= 1e-15);

  CHECK_THROWS_AS(softmax(std::vector<double>{}), Error);
}

TEST_CASE("sparsemax worked examples") {
  auto r = sparsemax(std::vector<double>{0, 0});
  CHECK(r.p == std::vector<double>{0.5, 0.5});
  CHECK(r.support.threshold == doctest::Approx(-0.5));
  CHECK(r.support.support_size == 2);

  r = sparsemax(std::vector<double>{2, 0});
  CHECK(r.p == std::vector<double>{1.0, 0.0});
  CHECK(r.support.threshold == doctest::Approx(1.0));
  CHECK(r.support.support_size == 1);
  CHECK(r.support.support_mask == std::vector<bool>{true, false});
  CHECK(max_abs_diff(r.p, oracle::simplex_projection({2, 0})) == 0.0);

  r = sparsemax(std::vector<double>{1.0, 0.5});
  CHECK(r.p[0] == doctest::Approx(0.75).epsilon(1e-14));
  CHECK(r.p[1] == doctest::Approx(0.25).epsilon(1e-14));
  CHECK(r.support.threshold == doctest::Approx(0.25));
  CHECK(r.support.support_size == 2);

  r = sparsemax(std::vector<double>{0.5, 0.2, -0.1});
  CHECK(r.support.support_size == 3);
  CHECK(std::abs(r.p[0] - 0.6333) <= 1e-4);
  CHECK(std::abs(r.p[1] - 0.3333) <= 1e-4);
  CHECK(std::abs(r.p[2] - 0.0333) <= 1e-4);
  CHECK(max_abs_diff(r.p, oracle::simplex_projection({0.5, 0.2, -0.1})) <= 1e-15);

  CHECK_THROWS_AS(sparsemax(std::vector<double>{}), Error);
}

TEST_CASE("entmax15 worked examples") {
  auto r = entmax15(std::vector<double>{0, 0});
  CHECK(r.p[0] == doctest::Approx(0.5).epsilon(1e-14));
  CHECK(r.p[1] == doctest::Approx(0.5).epsilon(1e-14));

  r = entmax15(std::vector<double>{1, 0});
  const auto ref = oracle::entmax_by_bisection({1, 0}, 1.5);
  CHECK(std::abs(r.p[0] - 0.8307) <= 1e-3);
  CHECK(std::abs(r.p[1] - 0.1693) <= 1e-3);
  CHECK(max_abs_diff(r.p, ref) <= 1e-12);

  // softmax < entmax15 < sparsemax on the max entry.
  const double soft = softmax(std::vector<double>{1, 0})[0];
  const double sparse = sparsemax(std::vector<double>{1, 0}).p[0];
  CHECK(soft < r.p[0]);
  CHECK(r.p[0] < sparse);
  CHECK(sparse == 1.0);

  CHECK_THROWS_AS(entmax15(std::vector<double>{}), Error);
}

TEST_CASE("entmax_bisect agrees with the exact mappings") {
  auto p = entmax_bisect(std::vector<double>{1.0, 0.5}, 2.0);
  CHECK(std::abs(p[0] - 0.75) <= 1e-6);
  CHECK(std::abs(p[1] - 0.25) <= 1e-6);

  p = entmax_bisect(std::vector<double>{1.0, 0.0}, 1.5);
  const auto exact = entmax15(std::vector<double>{1.0, 0.0}).p;
  CHECK(max_abs_diff(p, exact) <= 1e-5);

  p = entmax_bisect(std::vector<double>{1.0, 0.0}, 1.001);
  CHECK(max_abs_diff(p, softmax(std::vector<double>{1.0, 0.0})) <= 1e-2);

  CHECK_THROWS_AS(entmax_bisect(std::vector<double>{1.0}, 1.0), Error);
  CHECK_THROWS_AS(entmax_bisect(std::vector<double>{1.0}, 0.5), Error);
  CHECK_THROWS_AS(entmax_bisect(std::vector<double>{1.0}, 1.5, 0), Error);
}

TEST_CASE("entmax_bisect sums to one after the default iterations") {
  CounterRng rng(11);
  for (int trial = 0; trial < 500; ++trial) {
    const auto z = random_logits(rng, 2 + rng.below(40));
    const double alpha = 1.05 + 2.9 * rng.uniform();
    const auto p = entmax_bisect(z, alpha);
    CHECK(std::abs(std::accumulate(p.begin(), p.end(), 0.0) - 1.0) <= 1e-6);
    CHECK(max_abs_diff(p, oracle::entmax_by_bisection(z, alpha)) <= 1e-6);
  }
}

TEST_CASE("mapping kind parsing") {
  CHECK(MappingKind::parse("softmax") == MappingKind::softmax());
  CHECK(MappingKind::parse("sparsemax") == MappingKind::sparsemax());
  CHECK(MappingKind::parse("entmax15") == MappingKind::entmax15());
  CHECK(MappingKind::parse("entmax") == MappingKind::entmax15());
  CHECK(MappingKind::parse("entmax:1.25").effective_alpha() == 1.25);
  CHECK(MappingKind::parse(MappingKind::entmax(1.7).to_string()) == MappingKind::entmax(1.7));
  CHECK_THROWS_AS(MappingKind::parse("entmax:abc"), Error);
  CHECK_THROWS_AS(MappingKind::parse("entmax:1.0"), Error);
  CHECK_THROWS_AS(MappingKind::parse("entmax:4.5"), Error);
  CHECK_THROWS_AS(MappingKind::parse("dense"), Error);
}

TEST_CASE("mapping_backward worked examples") {
  const auto s = MappingKind::sparsemax();
  auto dz = mapping_backward(std::vector<double>{1.0, 0.0}, std::vector<double>{0.3, -2.0}, s);
  CHECK(dz == std::vector<double>{0.0, 0.0});

  dz = mapping_backward(std::vector<double>{0.75, 0.25}, std::vector<double>{1.0, 0.0}, s);
  CHECK(dz[0] == doctest::Approx(0.5));
  CHECK(dz[1] == doctest::Approx(-0.5));
  const auto fd = oracle::vjp_finite_difference(
      [](const std::vector<double>& z) { return sparsemax(z).p; }, {1.0, 0.5}, {1.0, 0.0});
  CHECK(max_abs_diff(dz, fd) <= 1e-8);

  dz = mapping_backward(std::vector<double>{1.0 / 3, 1.0 / 3, 1.0 / 3},
                        std::vector<double>{1, 1, 1}, MappingKind::softmax());
  for (double v : dz) CHECK(std::abs(v) <= 1e-15);

  CHECK_THROWS_AS(mapping_backward(std::vector<double>{1.0}, std::vector<double>{1.0, 2.0}, s),
                  Error);
}

TEST_CASE("mapping_backward matches finite differences") {
  CounterRng rng(5);
  for (const auto& kind : all_kinds()) {
    CAPTURE(kind.to_string());
    int done = 0;
    while (done < 200) {
      const auto z = random_logits(rng, 2 + rng.below(10));
      const auto fwd = simplex::apply(kind, z);
      if (fwd.boundary_margin < 1e-3) continue;  // too close to a support change
      std::vector<double> u(z.size());
      for (double& v : u) v = rng.normal();
      const auto dz = mapping_backward(fwd.p, u, kind);
      const auto fd = oracle::vjp_finite_difference(
          [&](const std::vector<double>& x) { return simplex::apply(kind, x).p; }, z, u);
      for (std::size_t i = 0; i < z.size(); ++i) {
        const double denom = std::max({std::abs(dz[i]), std::abs(fd[i]), 1e-3});
        CHECK(std::abs(dz[i] - fd[i]) / denom <= 1e-4);
      }
      ++done;
    }
  }
}

TEST_CASE("simplex invariants hold on random inputs") {
  CounterRng rng(1);
  for (const auto& kind : all_kinds()) {
    CAPTURE(kind.to_string());
    for (int trial = 0; trial < 2000; ++trial) {
      const auto z = random_logits(rng, 2 + rng.below(63));
      const auto p = simplex::apply(kind, z).p;
      double total = 0.0;
      for (double v : p) {
        REQUIRE(v >= 0.0);
        total += v;
      }
      REQUIRE(std::abs(total - 1.0) <= 1e-8);

      // translation
      const double c = rng.uniform(-10.0, 10.0);
      std::vector<double> shifted = z;
      for (double& v : shifted) v += c;
      REQUIRE(max_abs_diff(simplex::apply(kind, shifted).p, p) <= 1e-9);

      // permutation: reverse plus a rotation
      std::vector<std::size_t> perm(z.size());
      std::iota(perm.begin(), perm.end(), 0);
      std::reverse(perm.begin(), perm.end());
      std::rotate(perm.begin(), perm.begin() + static_cast<long>(rng.below(z.size())), perm.end());
      std::vector<double> zp(z.size());
      for (std::size_t i = 0; i < z.size(); ++i) zp[i] = z[perm[i]];
      const auto pp = simplex::apply(kind, zp).p;
      for (std::size_t i = 0; i < z.size(); ++i) REQUIRE(pp[i] == p[perm[i]]);

      // monotone
      for (std::size_t i = 0; i < z.size(); ++i)
        for (std::size_t j = 0; j < z.size(); ++j)
          if (z[i] >= z[j]) REQUIRE(p[i] >= p[j]);
    }
  }
}

TEST_CASE("sparsity and scale limit") {
  const auto r = sparsemax(std::vector<double>{2, 0, 0});
  CHECK(std::count_if(r.p.begin(), r.p.end(), [](double v) { return v != 0.0; }) == 1);

  CounterRng rng(3);
  for (int t = 0; t < 200; ++t) {
    const auto z = random_logits(rng, 2 + rng.below(30));
    for (double v : softmax(z)) CHECK(v > 0.0);
    std::vector<double> big = z;
    for (double& v : big) v *= 1e6;
    const auto p = sparsemax(big).p;
    const auto arg = std::max_element(z.begin(), z.end()) - z.begin();
    CHECK(p[static_cast<std::size_t>(arg)] == 1.0);
  }
}

TEST_CASE("sparsemax and entmax15 match their oracles") {
  CounterRng rng(7);
  for (int t = 0; t < 1000; ++t) {
    const auto z = random_logits(rng, 1 + rng.below(4));
    CHECK(max_abs_diff(sparsemax(z).p, oracle::simplex_projection(z)) <= 1e-6);
    CHECK(max_abs_diff(entmax15(z).p, oracle::entmax_by_bisection(z, 1.5)) <= 1e-5);
  }
}

TEST_CASE("mask fill keeps thresholds finite") {
  std::vector<double> z{0.3, -1e9, 0.1, -1e9};
  for (const auto& kind : all_kinds()) {
    const auto r = simplex::apply(kind, z);
    CHECK(r.p[1] == 0.0);
    CHECK(r.p[3] == 0.0);
    CHECK(std::abs(r.p[0] + r.p[2] - 1.0) <= 1e-9);
    std::vector<double> real{0.3, 0.1};
    const auto ref = simplex::apply(kind, real).p;
    CHECK(std::abs(r.p[0] - ref[0]) <= 1e-9);
  }
}
