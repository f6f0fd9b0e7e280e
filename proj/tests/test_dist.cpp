#include <catch2/catch_amalgamated.hpp>
#include <cmath>
#include <random>

#include "cfsurv/dist.hpp"
#include "oracles.hpp"

using namespace cfsurv;

TEST_CASE("normal cdf/sf basics", "[dist]") {
  CHECK(norm_cdf(0.0) == Catch::Approx(0.5).margin(1e-16));
  CHECK(norm_cdf(1.959963984540054) == Catch::Approx(0.975).margin(1e-12));
  CHECK(norm_sf(10.0) == Catch::Approx(7.619853024160527e-24).epsilon(1e-12));
  for (double x : {-6.0, -2.2, -0.5, 0.0, 0.7, 3.1, 8.0}) {
    CHECK(norm_cdf(x) + norm_sf(x) == Catch::Approx(1.0).margin(1e-15));
    CHECK(norm_cdf(-x) == Catch::Approx(norm_sf(x)).epsilon(1e-14));
    CHECK(norm_pdf(x) == Catch::Approx(std::exp(norm_logpdf(x))).epsilon(1e-14));
  }
}

TEST_CASE("normal quantile inverts the cdf", "[dist]") {
  CHECK(norm_quantile(0.975) == Catch::Approx(1.959963984540054).epsilon(1e-14));
  CHECK(norm_quantile(0.5) == 0.0);
  for (double u : {1e-300, 1e-30, 1e-10, 0.001, 0.2, 0.5, 0.77, 0.999, 1 - 1e-12}) {
    const double z = norm_quantile(u);
    CHECK(std::isfinite(z));
    CHECK(norm_cdf(z) == Catch::Approx(u).epsilon(1e-12));
  }
  for (double z : {-9.0, -3.3, -0.4, 0.0, 1.1, 5.5}) {
    CHECK(norm_quantile(norm_cdf(z)) == Catch::Approx(z).margin(1e-9));
  }
  CHECK_THROWS_AS(norm_quantile(-0.1), std::invalid_argument);
  CHECK_THROWS_AS(norm_quantile(1.1), std::invalid_argument);
}

TEST_CASE("correlation type clamps away from unity", "[dist]") {
  CHECK(Corr(0.3).value() == 0.3);
  CHECK(Corr(1.0).value() == Catch::Approx(1.0 - 1e-6));
  CHECK(Corr(-1.0).value() == Catch::Approx(-(1.0 - 1e-6)));
  CHECK_THROWS_AS(Corr(1.2), std::invalid_argument);
  CHECK_THROWS_AS(Corr(std::nan("")), std::invalid_argument);
}

TEST_CASE("bivariate tail closed forms", "[dist]") {
  // P(X>0, Y>0) = 1/4 + asin(rho)/(2 pi)
  for (double r : {-0.95, -0.5, 0.0, 0.3, 0.75, 0.9, 0.99}) {
    const double expect = 0.25 + std::asin(r) / (2.0 * pi);
    CHECK(bvn_tail(0.0, 0.0, r) == Catch::Approx(expect).margin(1e-12));
  }
  CHECK(bvn_tail(0.0, 0.0, 0.0) == Catch::Approx(0.25).margin(1e-14));
  // independence factorises
  for (double h : {-2.0, 0.3, 1.7})
    for (double k : {-1.1, 0.0, 2.5})
      CHECK(bvn_tail(h, k, 0.0) ==
            Catch::Approx(norm_sf(h) * norm_sf(k)).margin(1e-14));
}

TEST_CASE("bivariate tail against quadrature reference", "[dist]") {
  std::mt19937 gen(777);
  std::uniform_real_distribution<double> uh(-4.0, 4.0);
  std::uniform_real_distribution<double> ur(-0.999, 0.999);
  std::uniform_real_distribution<double> uhi(0.925, 0.999999);
  for (int trial = 0; trial < 140; ++trial) {
    const double h = uh(gen), k = uh(gen);
    double r = ur(gen);
    if (trial >= 80) r = (trial % 2 ? -1.0 : 1.0) * uhi(gen);  // stress |r|>=0.925
    const double got = bvn_tail(h, k, r);
    const double want = oracles::bvn_tail_ref(h, k, r);
    INFO("h=" << h << " k=" << k << " r=" << r);
    CHECK(got == Catch::Approx(want).margin(1e-10));
    CHECK(got >= 0.0);
    CHECK(got <= 1.0);
  }
}

TEST_CASE("bivariate tail identities", "[dist]") {
  for (double h : {-2.5, -0.4, 0.9, 3.0})
    for (double k : {-3.0, 0.0, 1.4})
      for (double r : {-0.98, -0.6, 0.2, 0.93}) {
        // symmetry in the arguments
        CHECK(bvn_tail(h, k, r) == Catch::Approx(bvn_tail(k, h, r)).margin(1e-13));
        // splitting on the second variable recovers the marginal
        CHECK(bvn_tail(h, k, r) + bvn_tail(h, -k, -r) ==
              Catch::Approx(norm_sf(h)).margin(1e-12));
      }
}

TEST_CASE("partial correlation", "[dist]") {
  CHECK(partial_corr(0.4, 0.3, 0.5) ==
        Catch::Approx((0.4 - 0.15) / std::sqrt((1 - 0.09) * (1 - 0.25))).epsilon(1e-14));
  CHECK(partial_corr(0.0, 0.0, 0.0) == 0.0);
  CHECK_THROWS_AS(partial_corr(0.5, 1.0, 0.2), std::invalid_argument);
  // agrees with the Schur complement of a PD correlation matrix
  Eigen::Matrix3d R;
  R << 1.0, 0.3, 0.5, 0.3, 1.0, 0.4, 0.5, 0.4, 1.0;
  Eigen::Matrix2d S =
      R.block<2, 2>(1, 1) - R.block<2, 1>(1, 0) * R.block<1, 2>(0, 1);
  const double want = S(0, 1) / std::sqrt(S(0, 0) * S(1, 1));
  CHECK(partial_corr(R(1, 2), R(0, 1), R(0, 2)) == Catch::Approx(want).epsilon(1e-14));
}

TEST_CASE("trivariate tail special cases", "[dist]") {
  // independence
  CHECK(tvn_tail(0.5, -0.2, 1.1, 0.0, 0.0, 0.0) ==
        Catch::Approx(norm_sf(0.5) * norm_sf(-0.2) * norm_sf(1.1)).margin(1e-10));
  // equicorrelated orthant: 1/8 + 3 asin(rho) / (4 pi)
  for (double r : {-0.3, 0.2, 0.5, 0.8}) {
    const double expect = 0.125 + 3.0 * std::asin(r) / (4.0 * pi);
    CHECK(tvn_tail(0.0, 0.0, 0.0, r, r, r) == Catch::Approx(expect).margin(1e-9));
  }
  // a very low third threshold reduces to the bivariate tail
  CHECK(tvn_tail(0.4, -0.7, -8.5, 0.55, 0.3, 0.2) ==
        Catch::Approx(bvn_tail(0.4, -0.7, 0.55)).margin(1e-9));
}

TEST_CASE("trivariate tail is conditioning-order invariant", "[dist]") {
  // integrate over X1 vs over X2: completely different integrands must agree
  std::mt19937 gen(2024);
  std::uniform_real_distribution<double> ua(-2.5, 2.5);
  std::uniform_real_distribution<double> ur(-0.85, 0.85);
  int accepted = 0;
  while (accepted < 25) {
    const double a1 = ua(gen), a2 = ua(gen), a3 = ua(gen);
    const double r12 = ur(gen), r13 = ur(gen), r23 = ur(gen);
    Eigen::Matrix3d R;
    R << 1, r12, r13, r12, 1, r23, r13, r23, 1;
    if (Eigen::LLT<Eigen::Matrix3d>(R).info() != Eigen::Success) continue;
    ++accepted;
    const double p1 = tvn_tail(a1, a2, a3, r12, r13, r23);
    const double p2 = tvn_tail(a2, a1, a3, r12, r23, r13);
    const double p3 = tvn_tail(a3, a1, a2, r13, r23, r12);
    CHECK(p1 == Catch::Approx(p2).margin(5e-10));
    CHECK(p1 == Catch::Approx(p3).margin(5e-10));
  }
}

TEST_CASE("covariance matrix validation", "[dist]") {
  Eigen::VectorXd s3 = Eigen::VectorXd::Ones(3);
  Eigen::MatrixXd good(3, 3);
  good << 1, 0.3, 0.5, 0.3, 1, 0.4, 0.5, 0.4, 1;
  CHECK_NOTHROW(CovMatrix(s3, good));
  CHECK(CovMatrix(s3, good).rho(0, 2) == 0.5);

  Eigen::MatrixXd not_pd(3, 3);
  not_pd << 1, 0.9, 0.9, 0.9, 1, -0.9, 0.9, -0.9, 1;
  CHECK_THROWS_AS(CovMatrix(s3, not_pd), std::invalid_argument);

  Eigen::MatrixXd bad_diag = good;
  bad_diag(1, 1) = 0.9;
  CHECK_THROWS_AS(CovMatrix(s3, bad_diag), std::invalid_argument);

  Eigen::VectorXd bad_sigma = s3;
  bad_sigma[0] = -1.0;
  CHECK_THROWS_AS(CovMatrix(bad_sigma, good), std::invalid_argument);

  CHECK_THROWS_AS(CovMatrix(Eigen::VectorXd::Ones(2), good), std::invalid_argument);
}

TEST_CASE("quadrature utilities", "[dist]") {
  // adaptive GK15 on known integrals
  CHECK(quad::integrate([](double x) { return std::exp(-x); }, 0.0, 30.0) ==
        Catch::Approx(1.0 - std::exp(-30.0)).epsilon(1e-12));
  CHECK(quad::integrate([](double x) { return norm_pdf(x); }, -9.0, 9.0) ==
        Catch::Approx(1.0).margin(1e-11));
  // Gauss-Legendre rule integrates polynomials of degree 2n-1 exactly
  std::vector<double> x, w;
  quad::gauss_legendre(8, x, w);
  double s = 0.0, s14 = 0.0;
  for (int i = 0; i < 8; ++i) {
    s += w[i];
    s14 += w[i] * std::pow(x[i], 14);
  }
  CHECK(s == Catch::Approx(2.0).epsilon(1e-14));
  CHECK(s14 == Catch::Approx(2.0 / 15.0).epsilon(1e-12));
  quad::gauss_legendre(512, x, w);
  double c = 0.0;
  for (int i = 0; i < 512; ++i) c += w[i] * std::cos(x[i]);
  CHECK(c == Catch::Approx(2.0 * std::sin(1.0)).epsilon(1e-14));
}
