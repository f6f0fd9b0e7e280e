#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "cfsurv/data.hpp"
#include "cfsurv/dist.hpp"

namespace cfsurv {

enum class FirstStageKind {
  continuous_linear,
  binary_logit,
  binary_probit,
  binary_one_sided_logit,
};

struct FirstStageSpec {
  FirstStageKind kind = FirstStageKind::binary_logit;
};

// Output of the first estimation step: gamma, fitted control values, the
// per-observation estimating-equation rows h_m and their mean Jacobian M.
struct FirstStageResult {
  Eigen::VectorXd gamma_hat;
  Eigen::VectorXd v_hat;
  Eigen::MatrixXd score_rows;  // n x dim(gamma)
  Eigen::MatrixXd m_hat;       // n^{-1} sum of d h_m / d gamma
  int n_iter = 0;
};

namespace detail {

// E[nu | nu > c] for standard logistic nu.  Exact for moderate c, series
// beyond exp() range.
inline double logistic_upper_mean(double c) {
  if (c > 30.0) return c + 1.0 + 0.5 * std::exp(-c);
  if (c >= 0.0) return c + (1.0 + std::exp(c)) * std::log1p(std::exp(-c));
  // rewrite log1p(e^{-c}) = -c + log1p(e^c) to avoid overflow for c << 0
  return (1.0 + std::exp(c)) * std::log1p(std::exp(c)) - c * std::exp(c);
}

// phi(c) / (1 - Phi(c)), the inverse Mills ratio of the upper tail.
inline double probit_upper_mean(double c) {
  if (c > 34.0) {
    // asymptotic: c + 1/c - 2/c^3 + 10/c^5 (next term ~ c^-7)
    const double ic = 1.0 / c;
    return c + ic * (1.0 - ic * ic * (2.0 - 10.0 * ic * ic));
  }
  return norm_pdf(c) / norm_sf(c);
}

inline double logistic_cdf(double c) {
  return c >= 0.0 ? 1.0 / (1.0 + std::exp(-c)) : std::exp(c) / (1.0 + std::exp(c));
}

}  // namespace detail

// Control value g_gamma(z, w): the conditional mean of the first-stage error
// given the observed treatment.  For binary kinds, z = 1 reveals nu < w.gamma
// and z = 0 reveals nu >= w.gamma.
inline double control_value(const FirstStageSpec& spec,
                            const Eigen::VectorXd& gamma,
                            const Eigen::VectorXd& w, double z) {
  if (!w.allFinite() || !gamma.allFinite())
    throw std::invalid_argument("control_value: non-finite input");
  switch (spec.kind) {
    case FirstStageKind::continuous_linear:
      return z - w.dot(gamma);
    case FirstStageKind::binary_logit: {
      const double c = w.dot(gamma);
      return z > 0.5 ? -detail::logistic_upper_mean(-c)
                     : detail::logistic_upper_mean(c);
    }
    case FirstStageKind::binary_probit: {
      const double c = w.dot(gamma);
      return z > 0.5 ? -detail::probit_upper_mean(-c)
                     : detail::probit_upper_mean(c);
    }
    case FirstStageKind::binary_one_sided_logit: {
      // gamma is indexed against w minus its trailing compliance indicator;
      // w_tilde = 0 subjects take the z = 0 branch.
      const Eigen::VectorXd x = w.head(w.size() - 1);
      const double c = x.dot(gamma);
      const double wt = w[w.size() - 1];
      if (wt < 0.5 || z < 0.5) return detail::logistic_upper_mean(c);
      return -detail::logistic_upper_mean(-c);
    }
  }
  throw std::invalid_argument("control_value: unknown kind");
}

namespace detail {

// Newton iterations with step-halving for a binary-choice MLE.
// loglik/grad/neg_hess are computed by the caller-provided functor over the
// active design rows.
template <class Model>
Eigen::VectorXd newton_mle(const Model& model, int dim, int max_iter,
                           double gtol, int& n_iter) {
  Eigen::VectorXd gamma = Eigen::VectorXd::Zero(dim);
  double ll = model.loglik(gamma);
  for (n_iter = 0; n_iter < max_iter; ++n_iter) {
    Eigen::VectorXd g(dim);
    Eigen::MatrixXd neg_h(dim, dim);
    model.grad_neg_hess(gamma, g, neg_h);
    if (g.lpNorm<Eigen::Infinity>() < gtol) return gamma;
    Eigen::VectorXd step = neg_h.ldlt().solve(g);
    double scale = 1.0;
    bool moved = false;
    for (int half = 0; half < 40; ++half) {
      const Eigen::VectorXd cand = gamma + scale * step;
      const double cand_ll = model.loglik(cand);
      // accept non-decreasing up to rounding at the loglik's magnitude
      if (cand_ll >= ll - 1e-12 * (1.0 + std::fabs(ll))) {
        gamma = cand;
        ll = cand_ll;
        moved = true;
        break;
      }
      scale *= 0.5;
    }
    if (!moved) {
      std::ostringstream os;
      os << "first stage: step-halving stalled at iterate ["
         << gamma.transpose() << "]";
      throw convergence_error(os.str());
    }
  }
  std::ostringstream os;
  os << "first stage: no convergence after " << max_iter
     << " iterations; last iterate [" << gamma.transpose() << "]";
  throw convergence_error(os.str());
}

struct LogitModel {
  const Eigen::MatrixXd& W;
  const Eigen::VectorXd& z;
  const std::vector<int>& rows;

  double loglik(const Eigen::VectorXd& gamma) const {
    double ll = 0.0;
    for (int i : rows) {
      const double c = W.row(i).dot(gamma);
      // log sigma(c) if z=1 else log sigma(-c), in the stable softplus form
      const double sp = c > 0.0 ? c + std::log1p(std::exp(-c)) : std::log1p(std::exp(c));
      ll += (z[i] > 0.5 ? c : 0.0) - sp;
    }
    return ll;
  }
  void grad_neg_hess(const Eigen::VectorXd& gamma, Eigen::VectorXd& g,
                     Eigen::MatrixXd& neg_h) const {
    g.setZero();
    neg_h.setZero();
    for (int i : rows) {
      const double p = logistic_cdf(W.row(i).dot(gamma));
      g.noalias() += (z[i] - p) * W.row(i).transpose();
      neg_h.noalias() += p * (1.0 - p) * W.row(i).transpose() * W.row(i);
    }
  }
};

struct ProbitModel {
  const Eigen::MatrixXd& W;
  const Eigen::VectorXd& z;
  const std::vector<int>& rows;

  double loglik(const Eigen::VectorXd& gamma) const {
    double ll = 0.0;
    for (int i : rows) {
      const double c = W.row(i).dot(gamma);
      ll += safe_log(z[i] > 0.5 ? norm_cdf(c) : norm_sf(c));
    }
    return ll;
  }
  void grad_neg_hess(const Eigen::VectorXd& gamma, Eigen::VectorXd& g,
                     Eigen::MatrixXd& neg_h) const {
    // Fisher scoring: expected information keeps the step matrix PD.
    g.setZero();
    neg_h.setZero();
    for (int i : rows) {
      const double c = W.row(i).dot(gamma);
      const double P = norm_cdf(c), Q = norm_sf(c), f = norm_pdf(c);
      const double denom = std::max(P * Q, 1e-300);
      g.noalias() += f * (z[i] - P) / denom * W.row(i).transpose();
      neg_h.noalias() += f * f / denom * W.row(i).transpose() * W.row(i);
    }
  }
};

// Derivative in c of the probit generalized residual q(c, z).
inline double probit_q_deriv(double c, double z) {
  if (z > 0.5) {
    const double m = norm_pdf(c) / std::max(norm_cdf(c), 1e-300);
    return -m * (c + m);
  }
  const double m = probit_upper_mean(c);
  return m * (c - m);
}

}  // namespace detail

// First-step estimation of gamma and the control values.
inline FirstStageResult fit_first_stage(const Dataset& data,
                                        const FirstStageSpec& spec) {
  const int n = static_cast<int>(data.W.rows());
  const int wcols = static_cast<int>(data.W.cols());
  if (data.z.size() != n)
    throw std::invalid_argument("fit_first_stage: z / W length mismatch");
  const bool one_sided = spec.kind == FirstStageKind::binary_one_sided_logit;
  const int dim = one_sided ? wcols - 1 : wcols;
  if (n <= dim + 1)
    throw std::invalid_argument("fit_first_stage: more parameters than data");
  if (spec.kind != FirstStageKind::continuous_linear) {
    for (int i = 0; i < n; ++i)
      if (data.z[i] != 0.0 && data.z[i] != 1.0)
        throw std::invalid_argument("fit_first_stage: binary kind needs z in {0,1}");
  }

  FirstStageResult out;
  out.score_rows = Eigen::MatrixXd::Zero(n, dim);
  out.m_hat = Eigen::MatrixXd::Zero(dim, dim);

  std::vector<int> rows;
  rows.reserve(n);
  if (one_sided) {
    for (int i = 0; i < n; ++i)
      if (data.W(i, wcols - 1) > 0.5) rows.push_back(i);
    if (rows.empty())
      throw std::invalid_argument("fit_first_stage: no compliance subgroup");
  } else {
    for (int i = 0; i < n; ++i) rows.push_back(i);
  }
  const Eigen::MatrixXd design =
      one_sided ? Eigen::MatrixXd(data.W.leftCols(dim)) : data.W;

  switch (spec.kind) {
    case FirstStageKind::continuous_linear: {
      Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design);
      if (qr.rank() < dim)
        throw std::invalid_argument("fit_first_stage: rank-deficient design");
      out.gamma_hat = qr.solve(data.z);
      break;
    }
    case FirstStageKind::binary_logit:
    case FirstStageKind::binary_one_sided_logit: {
      detail::LogitModel model{design, data.z, rows};
      out.gamma_hat = detail::newton_mle(model, dim, 200, 1e-9 * rows.size(),
                                         out.n_iter);
      break;
    }
    case FirstStageKind::binary_probit: {
      detail::ProbitModel model{design, data.z, rows};
      out.gamma_hat = detail::newton_mle(model, dim, 200, 1e-9 * rows.size(),
                                         out.n_iter);
      break;
    }
  }

  out.v_hat.resize(n);
  for (int i = 0; i < n; ++i)
    out.v_hat[i] = control_value(spec, out.gamma_hat, data.W.row(i), data.z[i]);

  // h_m rows and their mean Jacobian.
  for (int idx : rows) {
    const auto w = design.row(idx);
    const double c = w.dot(out.gamma_hat);
    double resid = 0.0, dresid = 0.0;
    switch (spec.kind) {
      case FirstStageKind::continuous_linear:
        resid = data.z[idx] - c;
        dresid = -1.0;
        break;
      case FirstStageKind::binary_logit:
      case FirstStageKind::binary_one_sided_logit: {
        const double p = detail::logistic_cdf(c);
        resid = data.z[idx] - p;
        dresid = -p * (1.0 - p);
        break;
      }
      case FirstStageKind::binary_probit:
        resid = data.z[idx] > 0.5
                    ? norm_pdf(c) / std::max(norm_cdf(c), 1e-300)
                    : -detail::probit_upper_mean(c);
        dresid = detail::probit_q_deriv(c, data.z[idx]);
        break;
    }
    out.score_rows.row(idx) = resid * w;
    out.m_hat.noalias() += dresid * w.transpose() * w;
  }
  out.m_hat /= static_cast<double>(n);

  Eigen::FullPivLU<Eigen::MatrixXd> lu(out.m_hat);
  if (!lu.isInvertible())
    throw inference_error("fit_first_stage: singular M matrix");
  return out;
}

}  // namespace cfsurv
