#pragma once

#include <cmath>
#include <stdexcept>

#include "cfsurv/common.hpp"

namespace cfsurv {

// Transform-family parameter, restricted to [0, 2] so both tails of the
// Yeo-Johnson family stay well defined.
class Theta {
 public:
  explicit Theta(double v) : v_(v) {
    if (!(v >= 0.0 && v <= 2.0))
      throw std::invalid_argument("Theta must lie in [0, 2]");
  }
  double value() const { return v_; }

 private:
  double v_;
};

namespace yj {

// Treat theta within eps of a log-branch point as exactly on it, so the
// power branches never divide by a tiny exponent.
inline constexpr double branch_eps = 1e-12;

inline bool log_branch_pos(double th) { return std::fabs(th) < branch_eps; }
inline bool log_branch_neg(double th) { return std::fabs(th - 2.0) < branch_eps; }

// Yeo-Johnson transform evaluated from a = log1p(|t|) and the sign of t.
// This form is what the likelihood uses: a is precomputed once per row.
inline double value_pre(double th, double a, bool neg) {
  if (!neg) return log_branch_pos(th) ? a : std::expm1(th * a) / th;
  const double q = 2.0 - th;
  return log_branch_neg(th) ? -a : -std::expm1(q * a) / q;
}

// log of the derivative d/dt, again from precomputed a = log1p(|t|).
inline double log_deriv_pre(double th, double a, bool neg) {
  return neg ? (1.0 - th) * a : (th - 1.0) * a;
}

}  // namespace yj

// Yeo-Johnson transform of t.  For every theta in [0, 2] this is a strictly
// increasing bijection of the real line (log on one side never pairs with a
// bounded power on the other within these bounds).
inline double yj_value(const Theta& theta, double t) {
  return yj::value_pre(theta.value(), std::log1p(std::fabs(t)), t < 0.0);
}

// Derivative of the transform in t: (t+1)^(theta-1) for t>=0,
// (-t+1)^(1-theta) for t<0.  Continuous and positive everywhere.
inline double yj_deriv(const Theta& theta, double t) {
  return std::exp(yj::log_deriv_pre(theta.value(), std::log1p(std::fabs(t)), t < 0.0));
}

inline double yj_log_deriv(const Theta& theta, double t) {
  return yj::log_deriv_pre(theta.value(), std::log1p(std::fabs(t)), t < 0.0);
}

// Closed-form inverse, defined on all of R for theta in [0, 2].
inline double yj_inverse(const Theta& theta, double s) {
  const double th = theta.value();
  if (s >= 0.0) {
    if (yj::log_branch_pos(th)) return std::expm1(s);
    return std::expm1(std::log1p(th * s) / th);
  }
  const double q = 2.0 - th;
  if (yj::log_branch_neg(th)) return -std::expm1(-s);
  return -std::expm1(std::log1p(-q * s) / q);
}

}  // namespace cfsurv
