#pragma once

#include <Eigen/Core>
#include <cmath>
#include <functional>
#include <limits>

#include "cfsurv/common.hpp"

namespace cfsurv {

// Central finite-difference gradient with per-coordinate relative steps.
template <class F>
Eigen::VectorXd fd_gradient(const F& f, const Eigen::VectorXd& x,
                            double rel_step = 1e-6) {
  const int p = static_cast<int>(x.size());
  Eigen::VectorXd g(p), xp = x;
  for (int j = 0; j < p; ++j) {
    const double h = rel_step * std::max(1.0, std::fabs(x[j]));
    const double xj = x[j];
    xp[j] = xj + h;
    const double fp = f(xp);
    xp[j] = xj - h;
    const double fm = f(xp);
    xp[j] = xj;
    g[j] = (fp - fm) / (2.0 * h);
  }
  return g;
}

// Central finite-difference Hessian; step h = cbrt(eps) * max(1, |x_j|).
template <class F>
Eigen::MatrixXd fd_hessian(const F& f, const Eigen::VectorXd& x) {
  const int p = static_cast<int>(x.size());
  const double base = std::cbrt(std::numeric_limits<double>::epsilon());
  Eigen::VectorXd h(p);
  for (int j = 0; j < p; ++j) h[j] = base * std::max(1.0, std::fabs(x[j]));

  Eigen::MatrixXd H(p, p);
  Eigen::VectorXd xp = x;
  const double f0 = f(x);
  for (int j = 0; j < p; ++j) {
    const double xj = x[j];
    xp[j] = xj + h[j];
    const double fp = f(xp);
    xp[j] = xj - h[j];
    const double fm = f(xp);
    xp[j] = xj;
    H(j, j) = (fp - 2.0 * f0 + fm) / (h[j] * h[j]);
  }
  for (int j = 0; j < p; ++j)
    for (int k = j + 1; k < p; ++k) {
      const double xj = x[j], xk = x[k];
      xp[j] = xj + h[j];
      xp[k] = xk + h[k];
      const double fpp = f(xp);
      xp[k] = xk - h[k];
      const double fpm = f(xp);
      xp[j] = xj - h[j];
      const double fmm = f(xp);
      xp[k] = xk + h[k];
      const double fmp = f(xp);
      xp[j] = xj;
      xp[k] = xk;
      H(j, k) = H(k, j) = (fpp - fpm - fmp + fmm) / (4.0 * h[j] * h[k]);
    }
  return H;
}

struct OptimResult {
  Eigen::VectorXd x;
  double f = -std::numeric_limits<double>::infinity();
  int n_iter = 0;
  bool converged = false;
};

struct OptimOptions {
  double grad_tol = 1e-7;  // infinity norm of the gradient
  int max_iter = 500;
  double fd_step = 1e-6;
};

// BFGS maximization with finite-difference gradients and a backtracking
// (Armijo) line search on the inverse-Hessian direction.  The objective is
// expected to be a mean log-likelihood: smooth, bounded above.
template <class F>
OptimResult bfgs_maximize(const F& f, const Eigen::VectorXd& x0,
                          const OptimOptions& opt = {}) {
  const int p = static_cast<int>(x0.size());
  OptimResult res;
  res.x = x0;
  res.f = f(x0);
  if (!std::isfinite(res.f)) return res;

  Eigen::MatrixXd Hinv = Eigen::MatrixXd::Identity(p, p);
  Eigen::VectorXd g = fd_gradient(f, res.x, opt.fd_step);
  for (res.n_iter = 0; res.n_iter < opt.max_iter; ++res.n_iter) {
    if (g.lpNorm<Eigen::Infinity>() < opt.grad_tol) {
      res.converged = true;
      return res;
    }
    Eigen::VectorXd dir = Hinv * g;  // ascent direction
    double slope = dir.dot(g);
    if (!(slope > 0.0)) {  // curvature information unusable; restart
      Hinv.setIdentity();
      dir = g;
      slope = g.squaredNorm();
    }

    double t = 1.0;
    double f_new = -std::numeric_limits<double>::infinity();
    Eigen::VectorXd x_new;
    bool accepted = false;
    for (int bt = 0; bt < 60; ++bt) {
      x_new = res.x + t * dir;
      f_new = f(x_new);
      if (std::isfinite(f_new) && f_new >= res.f + 1e-4 * t * slope) {
        accepted = true;
        break;
      }
      t *= 0.5;
    }
    if (!accepted) {
      // no progress along the steepest feasible direction: flat to rounding
      res.converged = g.lpNorm<Eigen::Infinity>() < 1e3 * opt.grad_tol;
      return res;
    }

    const Eigen::VectorXd g_new = fd_gradient(f, x_new, opt.fd_step);
    const Eigen::VectorXd s = x_new - res.x;
    const Eigen::VectorXd yv = g - g_new;  // gradient-of-(-f) difference
    const double sy = s.dot(yv);
    if (sy > 1e-12 * s.norm() * yv.norm()) {
      const Eigen::VectorXd Hy = Hinv * yv;
      const double yHy = yv.dot(Hy);
      Hinv.noalias() += ((sy + yHy) / (sy * sy)) * (s * s.transpose());
      Hinv.noalias() -= (Hy * s.transpose() + s * Hy.transpose()) / sy;
    }
    res.x = x_new;
    res.f = f_new;
    g = g_new;
  }
  res.converged = g.lpNorm<Eigen::Infinity>() < opt.grad_tol;
  return res;
}

}  // namespace cfsurv
