#include <catch2/catch_amalgamated.hpp>
#include <cmath>
#include <vector>

#include "cfsurv/rng.hpp"

using cfsurv::RngStream;

TEST_CASE("streams are reproducible and distinct", "[rng]") {
  RngStream a(42, 7), b(42, 7), c(42, 8), d(43, 7);
  bool same_ab = true, same_ac = true, same_ad = true;
  for (int i = 0; i < 1000; ++i) {
    const double ua = a.uniform();
    same_ab &= (ua == b.uniform());
    same_ac &= (ua == c.uniform());
    same_ad &= (ua == d.uniform());
  }
  CHECK(same_ab);
  CHECK_FALSE(same_ac);
  CHECK_FALSE(same_ad);
}

TEST_CASE("uniform stays inside the open interval", "[rng]") {
  RngStream r(1, 0);
  for (int i = 0; i < 100000; ++i) {
    const double u = r.uniform();
    REQUIRE(u > 0.0);
    REQUIRE(u < 1.0);
  }
}

namespace {
struct Moments {
  double mean, var;
};
template <class F>
Moments sample_moments(F&& draw, int n) {
  double s = 0.0, s2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double x = draw();
    s += x;
    s2 += x * x;
  }
  const double m = s / n;
  return {m, s2 / n - m * m};
}
}  // namespace

TEST_CASE("inverse-cdf draws have the right moments", "[rng]") {
  const int n = 400000;
  {
    RngStream r(99, 1);
    auto m = sample_moments([&] { return r.normal(); }, n);
    CHECK(m.mean == Catch::Approx(0.0).margin(0.01));
    CHECK(m.var == Catch::Approx(1.0).margin(0.02));
  }
  {
    RngStream r(99, 2);
    auto m = sample_moments([&] { return r.logistic(); }, n);
    CHECK(m.mean == Catch::Approx(0.0).margin(0.02));
    CHECK(m.var == Catch::Approx(cfsurv::pi * cfsurv::pi / 3.0).margin(0.05));
  }
  {
    RngStream r(99, 3);
    auto m = sample_moments([&] { return r.gumbel(); }, n);
    CHECK(m.mean == Catch::Approx(0.5772156649).margin(0.01));
    CHECK(m.var == Catch::Approx(cfsurv::pi * cfsurv::pi / 6.0).margin(0.05));
  }
  {
    RngStream r(99, 4);
    auto m = sample_moments([&] { return r.chisq3(); }, n);
    CHECK(m.mean == Catch::Approx(3.0).margin(0.02));
    CHECK(m.var == Catch::Approx(6.0).margin(0.1));
  }
  {
    RngStream r(99, 5);
    auto m = sample_moments([&] { return r.uniform(2.0, 5.0); }, n);
    CHECK(m.mean == Catch::Approx(3.5).margin(0.01));
    CHECK(m.var == Catch::Approx(9.0 / 12.0).margin(0.01));
  }
  {
    RngStream r(99, 6);
    double s = 0.0;
    for (int i = 0; i < n; ++i) s += r.bernoulli(0.3);
    CHECK(s / n == Catch::Approx(0.3).margin(0.005));
  }
}

TEST_CASE("normal tail probabilities match", "[rng]") {
  RngStream r(7, 0);
  const int n = 400000;
  int below = 0;
  for (int i = 0; i < n; ++i)
    if (r.normal() < 1.959963984540054) ++below;
  CHECK(static_cast<double>(below) / n == Catch::Approx(0.975).margin(0.002));
}
