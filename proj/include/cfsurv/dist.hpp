#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "cfsurv/common.hpp"

namespace cfsurv {

inline double norm_pdf(double x) { return inv_sqrt_2pi * std::exp(-0.5 * x * x); }
inline double norm_logpdf(double x) { return -0.5 * x * x - 0.91893853320467274178; }

// erfc keeps full relative accuracy deep into the lower tail.
inline double norm_cdf(double x) { return 0.5 * std::erfc(-x / sqrt_2); }
inline double norm_sf(double x) { return 0.5 * std::erfc(x / sqrt_2); }

// ALGORITHM AS241 (Wichura 1988), the PPND16 variant: normal deviate for a
// given lower tail area, accurate to ~1e-16 relative.
inline double norm_quantile(double u) {
  if (!(u > 0.0 && u < 1.0)) {
    if (u == 0.0) return -std::numeric_limits<double>::infinity();
    if (u == 1.0) return std::numeric_limits<double>::infinity();
    throw std::invalid_argument("norm_quantile: u outside [0, 1]");
  }
  const double q = u - 0.5;
  if (std::fabs(q) <= 0.425) {
    const double r = 0.180625 - q * q;
    return q *
           (((((((2.5090809287301226727e+3 * r + 3.3430575583588128105e+4) * r +
                 6.7265770927008700853e+4) * r + 4.5921953931549871457e+4) * r +
               1.3731693765509461125e+4) * r + 1.9715909503065514427e+3) * r +
             1.3314166789178437745e+2) * r + 3.3871328727963666080e0) /
           (((((((5.2264952788528545610e+3 * r + 2.8729085735721942674e+4) * r +
                 3.9307895800092710610e+4) * r + 2.1213794301586595867e+4) * r +
               5.3941960214247511077e+3) * r + 6.8718700749205790830e+2) * r +
             4.2313330701600911252e+1) * r + 1.0);
  }
  double r = q < 0.0 ? u : 1.0 - u;
  r = std::sqrt(-std::log(r));
  double z;
  if (r <= 5.0) {
    r -= 1.6;
    z = (((((((7.74545014278341407640e-4 * r + 2.27238449892691845833e-2) * r +
              2.41780725177450611770e-1) * r + 1.27045825245236838258e0) * r +
            3.64784832476320460504e0) * r + 5.76949722146069140550e0) * r +
          4.63033784615654529590e0) * r + 1.42343711074968357734e0) /
        (((((((1.05075007164441684324e-9 * r + 5.47593808499534494600e-4) * r +
              1.51986665636164571966e-2) * r + 1.48103976427480074590e-1) * r +
            6.89767334985100004550e-1) * r + 1.67638483018380384940e0) * r +
          2.05319162663775882187e0) * r + 1.0);
  } else {
    r -= 5.0;
    z = (((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r +
              1.24266094738807843860e-3) * r + 2.65321895265761230930e-2) * r +
            2.96560571828504891230e-1) * r + 1.78482653991729133580e0) * r +
          5.46378491116411436990e0) * r + 6.65790464350110377720e0) /
        (((((((2.04426310338993978564e-15 * r + 1.42151175831644588870e-7) * r +
              1.84631831751005468180e-5) * r + 7.86869131145613259100e-4) * r +
            1.48753612908506148525e-2) * r + 1.36929880922735805310e-1) * r +
          5.99832206555887937690e-1) * r + 1.0);
  }
  return q < 0.0 ? -z : z;
}

// Correlation coefficient clamped away from +-1 so conditional variances
// stay positive.  Rejects NaN and values outside [-1, 1].
class Corr {
 public:
  static constexpr double limit = 1.0 - 1e-6;

  explicit Corr(double r) {
    if (!(r >= -1.0 && r <= 1.0))
      throw std::invalid_argument("Corr must lie in [-1, 1]");
    r_ = std::clamp(r, -limit, limit);
  }
  double value() const { return r_; }

 private:
  double r_;
};

namespace detail {

// Gauss-Legendre half nodes/weights used by the bivariate routine.
inline constexpr double bvn_w[3][10] = {
    {0.1713244923791705, 0.3607615730481384, 0.4679139345726904, 0, 0, 0, 0, 0, 0, 0},
    {0.04717533638651177, 0.1069393259953183, 0.1600783285433464,
     0.2031674267230659, 0.2334925365383547, 0.2491470458134029, 0, 0, 0, 0},
    {0.01761400713915212, 0.04060142980038694, 0.06267204833410906,
     0.08327674157670475, 0.1019301198172404, 0.1181945319615184,
     0.1316886384491766, 0.1420961093183821, 0.1491729864726037,
     0.1527533871307259}};
inline constexpr double bvn_x[3][10] = {
    {0.9324695142031522, 0.6612093864662647, 0.2386191860831970, 0, 0, 0, 0, 0, 0, 0},
    {0.9815606342467191, 0.9041172563704750, 0.7699026741943050,
     0.5873179542866171, 0.3678314989981802, 0.1252334085114692, 0, 0, 0, 0},
    {0.9931285991850949, 0.9639719272779138, 0.9122344282513259,
     0.8391169718222188, 0.7463319064601508, 0.6360536807265150,
     0.5108670019508271, 0.3737060887154196, 0.2277858511416451,
     0.07652652113349733}};

}  // namespace detail

// P(X > h, Y > k) for standard bivariate normal (X, Y) with correlation r.
// Drezner & Wesolowsky's reduction for |r| < 0.925, Genz's tail expansion
// otherwise; see Genz (2004), "Numerical computation of rectangular
// bivariate and trivariate normal and t probabilities".
inline double bvn_tail(double h, double k, const Corr& rho) {
  // The strong-negative-correlation branch computes the probability as a
  // difference of cdf values; cancellation can leave an O(1e-17) negative
  // residue, so the result is clamped into [0, 1] on return.
  const double r = rho.value();
  const int ng = std::fabs(r) < 0.3 ? 0 : (std::fabs(r) < 0.75 ? 1 : 2);
  const int lg = ng == 0 ? 3 : (ng == 1 ? 6 : 10);
  double hk = h * k;
  double bvn = 0.0;
  if (std::fabs(r) < 0.925) {
    if (std::fabs(r) > 0.0) {
      const double hs = 0.5 * (h * h + k * k);
      const double asr = std::asin(r);
      for (int i = 0; i < lg; ++i) {
        for (int is = -1; is <= 1; is += 2) {
          const double sn = std::sin(0.5 * asr * (is * detail::bvn_x[ng][i] + 1.0));
          bvn += detail::bvn_w[ng][i] *
                 std::exp((sn * hk - hs) / (1.0 - sn * sn));
        }
      }
      bvn *= asr / (4.0 * pi);
    }
    return std::clamp(bvn + norm_sf(h) * norm_sf(k), 0.0, 1.0);
  }
  double kk = k;
  if (r < 0.0) {
    kk = -kk;
    hk = -hk;
  }
  if (std::fabs(r) < 1.0) {
    const double as = (1.0 - r) * (1.0 + r);
    double a = std::sqrt(as);
    const double bs = (h - kk) * (h - kk);
    const double c = (4.0 - hk) / 8.0;
    const double d = (12.0 - hk) / 16.0;
    double asr = -0.5 * (bs / as + hk);
    if (asr > -100.0)
      bvn = a * std::exp(asr) *
            (1.0 - c * (bs - as) * (1.0 - d * bs / 5.0) / 3.0 + c * d * as * as / 5.0);
    if (-hk < 100.0) {
      const double b = std::sqrt(bs);
      bvn -= std::exp(-0.5 * hk) * std::sqrt(2.0 * pi) * norm_cdf(-b / a) * b *
             (1.0 - c * bs * (1.0 - d * bs / 5.0) / 3.0);
    }
    a *= 0.5;
    for (int i = 0; i < lg; ++i) {
      for (int is = -1; is <= 1; is += 2) {
        const double xs = std::pow(a * (is * detail::bvn_x[ng][i] + 1.0), 2);
        const double rs = std::sqrt(1.0 - xs);
        asr = -0.5 * (bs / xs + hk);
        if (asr > -100.0)
          bvn += a * detail::bvn_w[ng][i] * std::exp(asr) *
                 (std::exp(-hk * (1.0 - rs) / (2.0 * (1.0 + rs))) / rs -
                  (1.0 + c * xs * (1.0 + d * xs)));
      }
    }
    bvn = -bvn / (2.0 * pi);
  }
  if (r > 0.0) return std::clamp(bvn + norm_sf(std::max(h, kk)), 0.0, 1.0);
  bvn = -bvn;
  if (kk > h) bvn += norm_cdf(kk) - norm_cdf(h);
  return std::clamp(bvn, 0.0, 1.0);
}

inline double bvn_tail(double h, double k, double rho) {
  return bvn_tail(h, k, Corr(rho));
}

// Partial correlation of components j and q given component 1.
inline double partial_corr(double r_jq, double r_1j, double r_1q) {
  const double denom = (1.0 - r_1j * r_1j) * (1.0 - r_1q * r_1q);
  if (!(denom > 0.0))
    throw std::invalid_argument("partial_corr: degenerate conditioning");
  return (r_jq - r_1j * r_1q) / std::sqrt(denom);
}

// P(X1 > a1, X2 > a2, X3 > a3) for standard trivariate normal, computed by
// conditioning on X1 and integrating the conditional bivariate tail.
inline double tvn_tail(double a1, double a2, double a3, double r12, double r13,
                       double r23) {
  const double s2 = std::sqrt(std::max(1.0 - r12 * r12, 1e-12));
  const double s3 = std::sqrt(std::max(1.0 - r13 * r13, 1e-12));
  const Corr r23_1(std::clamp(partial_corr(r23, r12, r13), -1.0, 1.0));
  // Beyond 9.5 the conditioning density is below 2e-20.
  const double ub = std::max(a1 + 5.0, 9.5);
  auto f = [&](double x) {
    return norm_pdf(x) *
           bvn_tail((a2 - r12 * x) / s2, (a3 - r13 * x) / s3, r23_1);
  };
  return std::clamp(quad::integrate(f, a1, ub, 1e-12), 0.0, 1.0);
}

// Covariance structure for the competing-risks errors: per-cause scales and
// a positive-definite correlation matrix.
class CovMatrix {
 public:
  CovMatrix(Eigen::VectorXd sigma, Eigen::MatrixXd corr)
      : sigma_(std::move(sigma)), corr_(std::move(corr)) {
    const auto r = sigma_.size();
    if (r < 1 || corr_.rows() != r || corr_.cols() != r)
      throw std::invalid_argument("CovMatrix: dimension mismatch");
    for (Eigen::Index i = 0; i < r; ++i) {
      if (!(sigma_[i] > 0.0))
        throw std::invalid_argument("CovMatrix: scales must be positive");
      if (std::fabs(corr_(i, i) - 1.0) > 1e-12)
        throw std::invalid_argument("CovMatrix: diagonal must be 1");
      for (Eigen::Index j = 0; j < i; ++j)
        if (std::fabs(corr_(i, j) - corr_(j, i)) > 1e-12)
          throw std::invalid_argument("CovMatrix: correlation not symmetric");
    }
    Eigen::LLT<Eigen::MatrixXd> llt(corr_);
    if (llt.info() != Eigen::Success)
      throw std::invalid_argument("CovMatrix: correlation not positive definite");
  }

  Eigen::Index dim() const { return sigma_.size(); }
  double sigma(Eigen::Index i) const { return sigma_[i]; }
  double rho(Eigen::Index i, Eigen::Index j) const { return corr_(i, j); }
  const Eigen::MatrixXd& corr() const { return corr_; }
  const Eigen::VectorXd& sigmas() const { return sigma_; }

 private:
  Eigen::VectorXd sigma_;
  Eigen::MatrixXd corr_;
};

}  // namespace cfsurv
