#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace cfsurv {

// Thrown when an iterative fit fails to reach its tolerance.
class convergence_error : public std::runtime_error {
 public:
  explicit convergence_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Thrown when variance estimation is requested but cannot be produced
// (singular Hessian, non-invertible first-stage information, ...).
class inference_error : public std::runtime_error {
 public:
  explicit inference_error(const std::string& msg) : std::runtime_error(msg) {}
};

inline constexpr double pi = 3.141592653589793238462643383279502884;
inline constexpr double inv_sqrt_2pi = 0.3989422804014326779399460599343818685;
inline constexpr double sqrt_2 = 1.4142135623730950488016887242096980786;

// Smallest value we allow inside a log() in likelihood code.
inline constexpr double log_floor = 1e-300;

inline double safe_log(double x) { return std::log(x < log_floor ? log_floor : x); }

// Kahan (compensated) summation.  Used for sample log-likelihoods so the
// result does not depend on how the loop is chunked.
class KahanSum {
 public:
  void add(double x) {
    double y = x - c_;
    double t = s_ + y;
    c_ = (t - s_) - y;
    s_ = t;
  }
  double value() const { return s_; }

 private:
  double s_ = 0.0;
  double c_ = 0.0;
};

// ---------------------------------------------------------------------------
// Quadrature
// ---------------------------------------------------------------------------

namespace quad {

// Gauss-Kronrod 15(7) node/weight pairs on [-1,1]; positive half listed.
struct GK15 {
  static constexpr std::array<double, 8> xk = {
      0.991455371120813, 0.949107912342759, 0.864864423359769,
      0.741531185599394, 0.586087235467691, 0.405845151377397,
      0.207784955007898, 0.000000000000000};
  static constexpr std::array<double, 8> wk = {
      0.022935322010529, 0.063092092629979, 0.104790010322250,
      0.140653259715525, 0.169004726639267, 0.190350578064785,
      0.204432940075298, 0.209482141084728};
  // Gauss-7 weights on xk[1], xk[3], xk[5], xk[7].
  static constexpr std::array<double, 4> wg = {
      0.129484966168870, 0.279705391489277, 0.381830050505119,
      0.417959183673469};
};

struct GKResult {
  double value;
  double error;  // |K15 - G7| based estimate on the evaluated panels
};

namespace detail {

template <class F>
GKResult gk15_panel(const F& f, double a, double b) {
  const double h = 0.5 * (b - a);
  const double m = 0.5 * (a + b);
  double resk = 0.0, resg = 0.0;
  for (std::size_t i = 0; i < 8; ++i) {
    const double x = h * GK15::xk[i];
    double fv;
    if (i == 7) {
      fv = f(m);
      resk += GK15::wk[i] * fv;
      resg += GK15::wg[3] * fv;
    } else {
      const double f1 = f(m - x);
      const double f2 = f(m + x);
      resk += GK15::wk[i] * (f1 + f2);
      if (i % 2 == 1) resg += GK15::wg[i / 2] * (f1 + f2);
    }
  }
  return {resk * h, std::fabs(resk - resg) * h};
}

template <class F>
void gk15_adaptive(const F& f, double a, double b, double tol, int depth,
                   KahanSum& acc, double& err_acc) {
  GKResult r = detail::gk15_panel(f, a, b);
  if (r.error <= tol || depth >= 24) {
    acc.add(r.value);
    err_acc += r.error;
    return;
  }
  const double m = 0.5 * (a + b);
  gk15_adaptive(f, a, m, 0.5 * tol, depth + 1, acc, err_acc);
  gk15_adaptive(f, m, b, 0.5 * tol, depth + 1, acc, err_acc);
}

}  // namespace detail

// Adaptive Gauss-Kronrod 15(7) on a finite interval.
template <class F>
double integrate(const F& f, double a, double b, double abstol = 1e-11) {
  if (!(a < b)) return 0.0;
  KahanSum acc;
  double err = 0.0;
  detail::gk15_adaptive(f, a, b, abstol, 0, acc, err);
  return acc.value();
}

// Gauss-Legendre nodes/weights on [-1,1] via Newton iteration on P_n.
inline void gauss_legendre(int n, std::vector<double>& x, std::vector<double>& w) {
  x.assign(n, 0.0);
  w.assign(n, 0.0);
  const int m = (n + 1) / 2;
  for (int i = 0; i < m; ++i) {
    // Chebyshev-based initial guess.
    double z = std::cos(pi * (i + 0.75) / (n + 0.5));
    double pp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0, p1 = 0.0;
      for (int j = 0; j < n; ++j) {
        const double p2 = p1;
        p1 = p0;
        p0 = ((2.0 * j + 1.0) * z * p1 - j * p2) / (j + 1.0);
      }
      pp = n * (z * p0 - p1) / (z * z - 1.0);
      const double dz = p0 / pp;
      z -= dz;
      if (std::fabs(dz) < 1e-15) break;
    }
    x[i] = -z;
    x[n - 1 - i] = z;
    w[i] = 2.0 / ((1.0 - z * z) * pp * pp);
    w[n - 1 - i] = w[i];
  }
}

}  // namespace quad

}  // namespace cfsurv
