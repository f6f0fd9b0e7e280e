#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "cfsurv/estimator.hpp"
#include "cfsurv/rng.hpp"

namespace cfsurv {

// r-variate extension: up to three dependent latent times (k of which are
// competing failure causes, the rest dependent censoring), each with its own
// coefficient block and transform index, coupled through a full correlation
// matrix.
struct CmprskParams {
  std::vector<Eigen::VectorXd> beta;  // one block per latent time
  std::vector<double> alpha;
  std::vector<double> lambda;
  std::vector<double> theta;
  CovMatrix sigma =
      CovMatrix(Eigen::VectorXd::Ones(1), Eigen::MatrixXd::Identity(1, 1));
  int k = 1;  // causes 1..k are competing risks

  int r() const { return static_cast<int>(sigma.dim()); }

  void validate(int p) const {
    const int rr = r();
    if (rr < 1 || rr > 3)
      throw std::invalid_argument("CmprskParams: need 1 <= r <= 3");
    if (k < 1 || k > rr)
      throw std::invalid_argument("CmprskParams: need 1 <= k <= r");
    if (static_cast<int>(beta.size()) != rr ||
        static_cast<int>(alpha.size()) != rr ||
        static_cast<int>(lambda.size()) != rr ||
        static_cast<int>(theta.size()) != rr)
      throw std::invalid_argument("CmprskParams: block count != r");
    for (int j = 0; j < rr; ++j) {
      if (beta[j].size() != p)
        throw std::invalid_argument("CmprskParams: coefficient length mismatch");
      (void)Theta(theta[j]);
    }
  }
};

// Sample for the r-variate model.  cause[i] = j in 1..r marks latent time j
// as the observed one; cause[i] = 0 marks administrative censoring.  The
// one-hot indicator vector of the record is available via delta_star.
struct CmprskData {
  int r = 2;
  Eigen::VectorXd y;  // log follow-up
  std::vector<int> cause;
  Eigen::MatrixXd X;
  Eigen::VectorXd z;
  Eigen::MatrixXd W;

  int n() const { return static_cast<int>(y.size()); }
  int p() const { return static_cast<int>(X.cols()); }

  // one-hot over {risk 1..r, admin}; slot r flags administrative censoring
  std::vector<std::uint8_t> delta_star(int i) const {
    std::vector<std::uint8_t> d(r + 1, 0);
    d[cause[i] == 0 ? r : cause[i] - 1] = 1;
    return d;
  }

  void validate() const {
    const int m = n();
    if (m == 0) throw std::invalid_argument("CmprskData: empty sample");
    if (r < 1 || r > 3)
      throw std::invalid_argument("CmprskData: need 1 <= r <= 3");
    if (static_cast<int>(cause.size()) != m || X.rows() != m ||
        z.size() != m || W.rows() != m)
      throw std::invalid_argument("CmprskData: column lengths differ");
    if (X.cols() < 1 || W.cols() < 1)
      throw std::invalid_argument("CmprskData: empty design matrix");
    for (int i = 0; i < m; ++i) {
      if (!std::isfinite(y[i]))
        throw std::invalid_argument("CmprskData: non-finite y");
      if (cause[i] < 0 || cause[i] > r)
        throw std::invalid_argument("CmprskData: cause label out of range");
    }
    if (!X.allFinite() || !z.allFinite() || !W.allFinite())
      throw std::invalid_argument("CmprskData: non-finite covariate");
  }
};

// Conditional law of the other latent times' transformed scales given that
// cause j is observed at y: normal with mean m_q = tau_q + rho_jq sigma_q u_j
// and sd s_q = sigma_q sqrt(1 - rho_jq^2), coupled through the partial
// correlations given component j.
struct ConditionalParams {
  std::vector<int> others;  // 1-based labels q != j, ascending
  Eigen::VectorXd m, s;
  Eigen::MatrixXd partial;
};

inline ConditionalParams conditional_params(const CmprskParams& par,
                                            int cause_j, double y,
                                            const Eigen::VectorXd& x, double z,
                                            double v) {
  par.validate(static_cast<int>(x.size()));
  const int r = par.r();
  if (cause_j < 1 || cause_j > r)
    throw std::invalid_argument("conditional_params: bad cause");
  const int j = cause_j - 1;
  Eigen::VectorXd tau(r);
  for (int q = 0; q < r; ++q)
    tau[q] = x.dot(par.beta[q]) + z * par.alpha[q] + v * par.lambda[q];
  const double u_j = (yj_value(Theta(par.theta[j]), y) - tau[j]) / par.sigma.sigma(j);

  ConditionalParams out;
  for (int q = 0; q < r; ++q)
    if (q != j) out.others.push_back(q + 1);
  const int m = static_cast<int>(out.others.size());
  out.m.resize(m);
  out.s.resize(m);
  out.partial = Eigen::MatrixXd::Identity(m, m);
  for (int a = 0; a < m; ++a) {
    const int q = out.others[a] - 1;
    const double rjq = par.sigma.rho(j, q);
    out.m[a] = tau[q] + rjq * par.sigma.sigma(q) * u_j;
    out.s[a] = par.sigma.sigma(q) * std::sqrt(1.0 - rjq * rjq);
    for (int b = 0; b < a; ++b) {
      const int q2 = out.others[b] - 1;
      const double pr = partial_corr(par.sigma.rho(q, q2), par.sigma.rho(j, q),
                                     par.sigma.rho(j, q2));
      out.partial(a, b) = out.partial(b, a) = pr;
    }
  }
  return out;
}

namespace detail {

// Unvalidated parameter bundle for objective evaluation; pd reports whether
// the implied correlation matrix is positive definite.
struct CmEval {
  std::vector<Eigen::VectorXd> beta;
  std::vector<double> alpha, lambda, theta;
  Eigen::VectorXd sig;
  Eigen::MatrixXd corr;
  bool pd = true;

  int r() const { return static_cast<int>(sig.size()); }
};

inline CmEval make_eval(const CmprskParams& par) {
  CmEval e;
  e.beta = par.beta;
  e.alpha = par.alpha;
  e.lambda = par.lambda;
  e.theta = par.theta;
  e.sig = par.sigma.sigmas();
  e.corr = par.sigma.corr();
  return e;
}

// log sub-density of one record; tau holds the r linear predictors.
inline double cm_row_loglik(const CmEval& e, double y, int cause,
                            const Eigen::VectorXd& tau) {
  const int r = e.r();
  if (cause == 0) {  // administrative: every latent time exceeds y
    double w[3];
    for (int q = 0; q < r; ++q)
      w[q] = (yj_value(Theta(e.theta[q]), y) - tau[q]) / e.sig[q];
    if (r == 1) return safe_log(norm_sf(w[0]));
    if (r == 2) return safe_log(bvn_tail(w[0], w[1], Corr(e.corr(0, 1))));
    return safe_log(tvn_tail(w[0], w[1], w[2], Corr(e.corr(0, 1)).value(),
                             Corr(e.corr(0, 2)).value(),
                             Corr(e.corr(1, 2)).value()));
  }
  const int j = cause - 1;
  const Theta th_j(e.theta[j]);
  const double u_j = (yj_value(th_j, y) - tau[j]) / e.sig[j];
  double ll = -std::log(e.sig[j]) + norm_logpdf(u_j) + yj_log_deriv(th_j, y);
  double a[2];
  int na = 0;
  int others[2];
  for (int q = 0; q < r; ++q) {
    if (q == j) continue;
    const double w_q = (yj_value(Theta(e.theta[q]), y) - tau[q]) / e.sig[q];
    const double rjq = Corr(e.corr(j, q)).value();
    others[na] = q;
    a[na++] = (w_q - rjq * u_j) / std::sqrt(1.0 - rjq * rjq);
  }
  if (na == 1) {
    ll += safe_log(norm_sf(a[0]));
  } else if (na == 2) {
    const double pr = partial_corr(Corr(e.corr(others[0], others[1])).value(),
                                   Corr(e.corr(j, others[0])).value(),
                                   Corr(e.corr(j, others[1])).value());
    ll += safe_log(bvn_tail(a[0], a[1], Corr(std::clamp(pr, -1.0, 1.0))));
  }
  return ll;
}

template <class Sink>
void cm_loglik_scan(const CmEval& e, const CmprskData& data,
                    const Eigen::VectorXd& v, Sink&& sink) {
  const int n = data.n();
  const int r = e.r();
  Eigen::MatrixXd tau(n, r);
  for (int q = 0; q < r; ++q)
    tau.col(q) = data.X * e.beta[q] + e.alpha[q] * data.z +
                 (e.lambda[q] != 0.0 ? (e.lambda[q] * v).eval()
                                     : Eigen::VectorXd::Zero(n).eval());
  Eigen::VectorXd tau_i(r);
  for (int i = 0; i < n; ++i) {
    tau_i = tau.row(i);
    sink(i, cm_row_loglik(e, data.y[i], data.cause[i], tau_i));
  }
}

}  // namespace detail

// Mean log-likelihood per observation (the administrative-censoring factors
// carry no parameters and are dropped, as in the two-equation model).
inline double cmprsk_loglik(const CmprskParams& par, const CmprskData& data,
                            const Eigen::VectorXd& v) {
  data.validate();
  par.validate(data.p());
  if (par.r() != data.r)
    throw std::invalid_argument("cmprsk_loglik: r mismatch");
  if (v.size() != data.n())
    throw std::invalid_argument("cmprsk_loglik: control values length");
  const detail::CmEval e = detail::make_eval(par);
  KahanSum acc;
  detail::cm_loglik_scan(e, data, v, [&](int, double t) { acc.add(t); });
  return acc.value() / double(data.n());
}

inline void cmprsk_loglik_rows(const CmprskParams& par, const CmprskData& data,
                               const Eigen::VectorXd& v, Eigen::VectorXd& out) {
  const detail::CmEval e = detail::make_eval(par);
  out.resize(data.n());
  detail::cm_loglik_scan(e, data, v, [&](int i, double t) { out[i] = t; });
}

// Unconstrained parameterization of the r-variate model: raw coefficient
// blocks, log scales, atanh correlations in pair order (1,2),(1,3),(2,3),
// and the scaled theta logit.  The atanh map keeps each correlation in
// (-1,1); joint positive definiteness is enforced by the objective, which
// rejects non-PD proposals.
class CmprskLayout {
 public:
  CmprskLayout(int p, int r, const FitConfig& cfg)
      : p_(p),
        r_(r),
        has_lambda_(cfg.variant != Variant::naive),
        has_rho_(cfg.variant != Variant::independent),
        has_theta_(!cfg.theta_fixed) {}

  int p() const { return p_; }
  int r() const { return r_; }
  bool has_lambda() const { return has_lambda_; }
  bool has_rho() const { return has_rho_; }
  bool has_theta() const { return has_theta_; }
  int n_pairs() const { return r_ * (r_ - 1) / 2; }

  int dim() const {
    return r_ * (p_ + 1) + r_ * has_lambda_ + r_ + n_pairs() * has_rho_ +
           r_ * has_theta_;
  }

  Eigen::VectorXd pack(const detail::CmEval& e) const {
    Eigen::VectorXd u(dim());
    int t = 0;
    for (int j = 0; j < r_; ++j) {
      for (int c = 0; c < p_; ++c) u[t++] = e.beta[j][c];
      u[t++] = e.alpha[j];
      if (has_lambda_) u[t++] = e.lambda[j];
    }
    for (int j = 0; j < r_; ++j) u[t++] = std::log(e.sig[j]);
    if (has_rho_)
      for (int j = 0; j < r_; ++j)
        for (int q = j + 1; q < r_; ++q) u[t++] = std::atanh(Corr(e.corr(j, q)).value());
    if (has_theta_)
      for (int j = 0; j < r_; ++j) u[t++] = ParamLayout::theta_to_u(e.theta[j]);
    return u;
  }

  detail::CmEval unpack(const Eigen::VectorXd& u, const FitConfig& cfg) const {
    detail::CmEval e;
    e.beta.resize(r_);
    e.alpha.resize(r_);
    e.lambda.resize(r_);
    e.theta.resize(r_);
    e.sig.resize(r_);
    e.corr = Eigen::MatrixXd::Identity(r_, r_);
    int t = 0;
    for (int j = 0; j < r_; ++j) {
      e.beta[j].resize(p_);
      for (int c = 0; c < p_; ++c) e.beta[j][c] = u[t++];
      e.alpha[j] = u[t++];
      e.lambda[j] = has_lambda_ ? u[t++] : 0.0;
    }
    for (int j = 0; j < r_; ++j) e.sig[j] = std::exp(u[t++]);
    if (has_rho_) {
      for (int j = 0; j < r_; ++j)
        for (int q = j + 1; q < r_; ++q)
          e.corr(j, q) = e.corr(q, j) = std::tanh(u[t++]);
      if (r_ > 2) {
        Eigen::LLT<Eigen::MatrixXd> llt(e.corr);
        e.pd = llt.info() == Eigen::Success;
      } else {
        e.pd = std::fabs(e.corr(0, 1)) < 1.0;
      }
    }
    for (int j = 0; j < r_; ++j)
      e.theta[j] = has_theta_ ? ParamLayout::u_to_theta(u[t++])
                              : (j == 0 ? cfg.theta1_fixed : cfg.theta2_fixed);
    return e;
  }

  Eigen::VectorXd jacobian_diag(const detail::CmEval& e) const {
    Eigen::VectorXd j = Eigen::VectorXd::Ones(dim());
    int t = r_ * (p_ + 1) + r_ * has_lambda_;
    for (int q = 0; q < r_; ++q) j[t++] = e.sig[q];
    if (has_rho_)
      for (int a = 0; a < r_; ++a)
        for (int b = a + 1; b < r_; ++b) {
          const double rr = Corr(e.corr(a, b)).value();
          j[t++] = 1.0 - rr * rr;
        }
    if (has_theta_)
      for (int q = 0; q < r_; ++q)
        j[t++] = e.theta[q] * (2.0 - e.theta[q]) / 2.0;
    return j;
  }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    for (int j = 0; j < r_; ++j) {
      const std::string tag = std::to_string(j + 1);
      for (int c = 0; c < p_; ++c)
        out.push_back("beta" + tag + "_" + std::to_string(c));
      out.push_back("alpha" + tag);
      if (has_lambda_) out.push_back("lambda" + tag);
    }
    for (int j = 0; j < r_; ++j)
      out.push_back("sigma" + std::to_string(j + 1));
    if (has_rho_)
      for (int j = 0; j < r_; ++j)
        for (int q = j + 1; q < r_; ++q)
          out.push_back("rho" + std::to_string(j + 1) + std::to_string(q + 1));
    if (has_theta_)
      for (int j = 0; j < r_; ++j)
        out.push_back("theta" + std::to_string(j + 1));
    return out;
  }

  Eigen::VectorXd values(const detail::CmEval& e) const {
    Eigen::VectorXd v(dim());
    int t = 0;
    for (int j = 0; j < r_; ++j) {
      for (int c = 0; c < p_; ++c) v[t++] = e.beta[j][c];
      v[t++] = e.alpha[j];
      if (has_lambda_) v[t++] = e.lambda[j];
    }
    for (int j = 0; j < r_; ++j) v[t++] = e.sig[j];
    if (has_rho_)
      for (int j = 0; j < r_; ++j)
        for (int q = j + 1; q < r_; ++q) v[t++] = e.corr(j, q);
    if (has_theta_)
      for (int j = 0; j < r_; ++j) v[t++] = e.theta[j];
    return v;
  }

 private:
  int p_, r_;
  bool has_lambda_, has_rho_, has_theta_;
};

struct CmprskFitResult {
  CmprskParams params;
  Eigen::VectorXd gamma_hat;
  double loglik = 0.0;
  bool converged = false;
  int n_iter = 0;

  bool vcov_ok = false;
  std::string vcov_message;
  Eigen::MatrixXd vcov;
  Eigen::VectorXd se, ci_lower, ci_upper, p_value;
  std::vector<std::string> param_names;

  FitConfig cfg;
  FirstStageSpec fs_spec;
  FirstStageResult first_stage;
  Eigen::VectorXd v_used;
};

namespace detail {

// Start values: per-cause OLS among that cause's rows, residual-sd scales,
// zero correlations, theta = 1.
inline CmEval cm_crude_init(const CmprskData& data, const Eigen::VectorXd& v,
                            bool use_v) {
  const int n = data.n();
  const int p = data.p();
  const int q = p + 1 + (use_v ? 1 : 0);
  CmEval e;
  const int r = data.r;
  e.beta.assign(r, Eigen::VectorXd::Zero(p));
  e.alpha.assign(r, 0.0);
  e.lambda.assign(r, 0.0);
  e.theta.assign(r, 1.0);
  e.sig = Eigen::VectorXd::Ones(r);
  e.corr = Eigen::MatrixXd::Identity(r, r);
  for (int j = 0; j < r; ++j) {
    std::vector<int> rows;
    for (int i = 0; i < n; ++i)
      if (data.cause[i] == j + 1) rows.push_back(i);
    Eigen::MatrixXd A(rows.size(), q);
    Eigen::VectorXd b(rows.size());
    for (std::size_t t = 0; t < rows.size(); ++t) {
      const int i = rows[t];
      A.row(t).head(p) = data.X.row(i);
      A(t, p) = data.z[i];
      if (use_v) A(t, p + 1) = v[i];
      b[t] = data.y[i];
    }
    const Eigen::VectorXd coef = ols_or_mean(A, b);
    e.beta[j] = coef.head(p);
    e.alpha[j] = coef[p];
    e.lambda[j] = use_v ? coef[p + 1] : 0.0;
    if (rows.size() > static_cast<std::size_t>(q) + 1) {
      const Eigen::VectorXd resid = b - A * coef;
      e.sig[j] = std::max(
          0.05, std::sqrt(resid.squaredNorm() / (double(rows.size()) - q)));
    }
  }
  return e;
}

}  // namespace detail

// Two-step estimation of the r-variate model; mirrors fit().  oracle_v
// supplies true control values for the oracle variant; k tags how many of
// the causes are competing risks in the returned parameter set (defaults to
// all of them).
inline CmprskFitResult fit_cmprsk(const CmprskData& data,
                                  const FirstStageSpec& fs_spec,
                                  const FitConfig& cfg,
                                  const Eigen::VectorXd* oracle_v = nullptr,
                                  int k = 0) {
  data.validate();
  const int n = data.n();
  const int r = data.r;
  for (int j = 1; j <= r; ++j) {
    if (std::count(data.cause.begin(), data.cause.end(), j) == 0)
      throw std::invalid_argument("fit_cmprsk: latent time " +
                                  std::to_string(j) + " never observed");
  }

  CmprskFitResult out;
  out.cfg = cfg;
  out.fs_spec = fs_spec;

  Eigen::VectorXd v = Eigen::VectorXd::Zero(n);
  const bool uses_v = cfg.variant != Variant::naive;
  bool has_first_stage = false;
  switch (cfg.variant) {
    case Variant::two_step:
    case Variant::independent: {
      Dataset fsd;  // the first step only reads W and z
      fsd.W = data.W;
      fsd.z = data.z;
      out.first_stage = fit_first_stage(fsd, fs_spec);
      out.gamma_hat = out.first_stage.gamma_hat;
      v = out.first_stage.v_hat;
      has_first_stage = true;
      break;
    }
    case Variant::oracle:
      if (oracle_v == nullptr || oracle_v->size() != n)
        throw std::invalid_argument(
            "fit_cmprsk: oracle variant needs true control values");
      v = *oracle_v;
      break;
    case Variant::naive:
      break;
  }
  out.v_used = v;

  const CmprskLayout layout(data.p(), r, cfg);
  auto eval_loglik = [&](const detail::CmEval& e, const Eigen::VectorXd& vv) {
    if (!e.pd) return -std::numeric_limits<double>::infinity();
    KahanSum acc;
    detail::cm_loglik_scan(e, data, vv, [&](int, double t) { acc.add(t); });
    return acc.value() / double(n);
  };
  auto objective = [&](const Eigen::VectorXd& u) {
    return eval_loglik(layout.unpack(u, cfg), v);
  };
  const OptimOptions oo{cfg.grad_tol, cfg.max_iter, cfg.fd_step};

  detail::CmEval start = detail::cm_crude_init(data, v, uses_v);
  if (cfg.theta_fixed)
    for (int j = 0; j < r; ++j)
      start.theta[j] = j == 0 ? cfg.theta1_fixed : cfg.theta2_fixed;
  if (cfg.variant != Variant::independent) {
    // correlation-free pre-fit from the crude start
    const CmprskLayout il(data.p(), r, [&] {
      FitConfig c = cfg;
      c.variant = Variant::independent;
      return c;
    }());
    auto iobj = [&](const Eigen::VectorXd& u) {
      detail::CmEval e = il.unpack(u, cfg);
      if (!layout.has_lambda())
        std::fill(e.lambda.begin(), e.lambda.end(), 0.0);
      return eval_loglik(e, v);
    };
    OptimOptions ioo = oo;
    ioo.max_iter = std::min(cfg.max_iter, 300);
    const OptimResult ir = bfgs_maximize(iobj, il.pack(start), ioo);
    start = il.unpack(ir.x, cfg);
    if (!layout.has_lambda())
      std::fill(start.lambda.begin(), start.lambda.end(), 0.0);
    start.corr = Eigen::MatrixXd::Identity(r, r);
  }

  // multistart: vary the common transform index, keep correlations at zero
  // so every start is safely positive definite
  std::vector<detail::CmEval> starts{start};
  if (!cfg.theta_fixed)
    for (double th : {0.5, 1.5, 0.25, 1.75}) {
      if (static_cast<int>(starts.size()) >= cfg.multistart) break;
      detail::CmEval e = start;
      std::fill(e.theta.begin(), e.theta.end(), th);
      starts.push_back(e);
    }

  bool any = false;
  OptimResult best;
  std::string diagnostics;
  for (std::size_t s = 0; s < starts.size(); ++s) {
    const OptimResult rr = bfgs_maximize(objective, layout.pack(starts[s]), oo);
    if (rr.converged && (!any || rr.f > best.f)) {
      best = rr;
      any = true;
    }
    if (!rr.converged)
      diagnostics += "start " + std::to_string(s) + ": stopped at iter " +
                     std::to_string(rr.n_iter) + "; ";
  }
  if (!any)
    throw convergence_error("fit_cmprsk: no multistart converged (" +
                            diagnostics + ")");

  const detail::CmEval e_hat = layout.unpack(best.x, cfg);
  Eigen::MatrixXd corr_hat = e_hat.corr;
  for (int a = 0; a < r; ++a)
    for (int b = 0; b < r; ++b)
      if (a != b) corr_hat(a, b) = Corr(corr_hat(a, b)).value();
  out.params.beta = e_hat.beta;
  out.params.alpha = e_hat.alpha;
  out.params.lambda = e_hat.lambda;
  out.params.theta = e_hat.theta;
  out.params.sigma = CovMatrix(e_hat.sig, corr_hat);
  out.params.k = k > 0 ? k : r;
  out.loglik = best.f;
  out.converged = true;
  out.n_iter = best.n_iter;
  out.param_names = layout.names();

  if (cfg.compute_vcov) {
    try {
      auto mean_ll = [&](const Eigen::VectorXd& u, const Eigen::VectorXd& vv) {
        return eval_loglik(layout.unpack(u, cfg), vv);
      };
      auto row_ll = [&](const Eigen::VectorXd& u, const Eigen::VectorXd& vv,
                        Eigen::VectorXd& rows) {
        const detail::CmEval e = layout.unpack(u, cfg);
        rows.resize(n);
        detail::cm_loglik_scan(e, data, vv,
                               [&](int i, double t) { rows[i] = t; });
      };
      const Eigen::MatrixXd sigma_u = detail::sandwich_u_scale(
          n, best.x, mean_ll, row_ll, v,
          has_first_stage ? &out.first_stage : nullptr, fs_spec, data.W,
          data.z, cfg.fd_step);
      const Eigen::VectorXd jd = layout.jacobian_diag(e_hat);
      out.vcov = jd.asDiagonal() * sigma_u * jd.asDiagonal();
      const IntervalTable t =
          interval_table(layout.values(e_hat), out.param_names, out.vcov);
      out.se = t.se;
      out.ci_lower = t.lower;
      out.ci_upper = t.upper;
      out.p_value = t.p_value;
      out.vcov_ok = true;
    } catch (const inference_error& ex) {
      out.vcov_ok = false;
      out.vcov_message = ex.what();
    }
  }
  return out;
}

// Cumulative incidence of cause j before log-time t at covariates (x, z, v):
// the event-density integral with the joint survivor of the OTHER COMPETING
// risks only (dependent-censoring latents are marginalized out).  Computed
// on the standardized scale s = (Lambda_{theta_j}(e) - tau_j) / sigma_j,
// which flattens the integrand for any transform index.
inline double cif(const CmprskParams& par, int cause_j, double t,
                  const Eigen::VectorXd& x, double z, double v) {
  par.validate(static_cast<int>(x.size()));
  if (cause_j < 1 || cause_j > par.k)
    throw std::invalid_argument("cif: cause must be a competing risk");
  const int r = par.r();
  const int j = cause_j - 1;
  Eigen::VectorXd tau(r);
  for (int q = 0; q < r; ++q)
    tau[q] = x.dot(par.beta[q]) + z * par.alpha[q] + v * par.lambda[q];
  const Theta th_j(par.theta[j]);
  const double sig_j = par.sigma.sigma(j);
  const double s_t = (yj_value(th_j, t) - tau[j]) / sig_j;
  const double lo = -9.0;  // below this the standard-normal mass is < 1e-18
  if (s_t <= lo) return 0.0;

  int others[2];
  int na = 0;
  for (int q = 0; q < par.k; ++q)
    if (q != j) others[na++] = q;

  auto integrand = [&](double s) {
    const double phi = norm_pdf(s);
    if (na == 0) return phi;
    const double e_log = yj_inverse(th_j, tau[j] + sig_j * s);
    double a[2];
    for (int c = 0; c < na; ++c) {
      const int q = others[c];
      const double w_q =
          (yj_value(Theta(par.theta[q]), e_log) - tau[q]) / par.sigma.sigma(q);
      const double rjq = par.sigma.rho(j, q);
      a[c] = (w_q - rjq * s) / std::sqrt(1.0 - rjq * rjq);
    }
    if (na == 1) return phi * norm_sf(a[0]);
    const double pr = partial_corr(par.sigma.rho(others[0], others[1]),
                                   par.sigma.rho(j, others[0]),
                                   par.sigma.rho(j, others[1]));
    return phi * bvn_tail(a[0], a[1], Corr(std::clamp(pr, -1.0, 1.0)));
  };
  const double hi = std::min(s_t, 9.0);
  return std::clamp(quad::integrate(integrand, lo, hi, 1e-7), 0.0, 1.0);
}

// Right-continuous step function on the observed event times.
struct CifCurve {
  std::vector<double> times;
  std::vector<double> values;

  double eval(double t) const {
    const auto it = std::upper_bound(times.begin(), times.end(), t);
    if (it == times.begin()) return 0.0;
    return values[static_cast<std::size_t>(it - times.begin()) - 1];
  }
};

// Aalen-Johansen cumulative incidence: at each event time the cause-specific
// increment d_j / N is weighted by the overall Kaplan-Meier survival just
// before that time.  Labels: 1..k = cause, 0 = censored (administratively or
// by any latent time outside the competing set).
inline std::vector<CifCurve> nonparametric_cif(const std::vector<double>& times,
                                               const std::vector<int>& labels,
                                               int k) {
  const std::size_t n = times.size();
  if (n == 0) throw std::invalid_argument("nonparametric_cif: empty sample");
  if (labels.size() != n)
    throw std::invalid_argument("nonparametric_cif: label length mismatch");
  for (int lab : labels)
    if (lab < 0 || lab > k)
      throw std::invalid_argument("nonparametric_cif: label out of range");

  std::vector<std::size_t> ord(n);
  for (std::size_t i = 0; i < n; ++i) ord[i] = i;
  std::sort(ord.begin(), ord.end(),
            [&](std::size_t a, std::size_t b) { return times[a] < times[b]; });

  std::vector<CifCurve> out(k);
  std::vector<double> cum(k, 0.0);
  double surv = 1.0;
  double at_risk = double(n);
  std::size_t i = 0;
  while (i < n) {
    const double t = times[ord[i]];
    std::vector<int> d(k, 0);
    int d_tot = 0, m = 0;
    for (; i < n && times[ord[i]] == t; ++i, ++m) {
      const int lab = labels[ord[i]];
      if (lab > 0) {
        ++d[lab - 1];
        ++d_tot;
      }
    }
    if (d_tot > 0) {
      for (int j = 0; j < k; ++j) {
        if (d[j] == 0) continue;
        cum[j] += surv * double(d[j]) / at_risk;
      }
      surv *= 1.0 - double(d_tot) / at_risk;
      for (int j = 0; j < k; ++j) {
        out[j].times.push_back(t);
        out[j].values.push_back(cum[j]);
      }
    }
    at_risk -= double(m);
  }
  return out;
}

// ---------------------------------------------------------------------------
// r = 3 simulation design: two competing risks plus one dependent censoring
// time, endogenous binary Z with a logistic first stage, administrative
// window on the log scale.

inline constexpr double kCmprskAmax = 7.0;  // ~15% administrative share

struct CmprskDgpSpec {
  int n = 1000;
  Eigen::VectorXd gamma = (Eigen::VectorXd(3) << -1.0, 0.6, 2.3).finished();
  std::optional<double> a_max = kCmprskAmax;
  std::uint64_t seed = 1;
  std::uint64_t stream = 0;
};

inline CmprskParams cmprsk_r3_truth() {
  CmprskParams par;
  par.beta = {(Eigen::VectorXd(2) << 1.5, 1.0).finished(),
              (Eigen::VectorXd(2) << 2.0, -0.5).finished(),
              (Eigen::VectorXd(2) << 2.6, 0.3).finished()};
  par.alpha = {1.0, 0.5, -0.5};
  par.lambda = {1.0, -1.0, 0.8};
  par.theta = {1.0, 0.5, 1.0};
  Eigen::MatrixXd corr(3, 3);
  corr << 1.0, 0.3, 0.5, 0.3, 1.0, 0.4, 0.5, 0.4, 1.0;
  par.sigma = CovMatrix(Eigen::VectorXd::Ones(3), corr);
  par.k = 2;
  return par;
}

struct CmprskSimulated {
  CmprskData data;
  Eigen::VectorXd v_true;
  Eigen::MatrixXd t_log;  // latent log times, n x r
};

inline CmprskSimulated generate_cmprsk(const CmprskDgpSpec& spec,
                                       const CmprskParams& truth =
                                           cmprsk_r3_truth()) {
  if (spec.n < 50)
    throw std::invalid_argument("generate_cmprsk: n too small");
  if (spec.gamma.size() != 3)
    throw std::invalid_argument("generate_cmprsk: gamma must have length 3");
  truth.validate(2);
  const int n = spec.n;
  const int r = truth.r();
  RngStream rng(spec.seed, spec.stream);
  const FirstStageSpec fs{FirstStageKind::binary_logit};

  CmprskSimulated sim;
  CmprskData& d = sim.data;
  d.r = r;
  d.y.resize(n);
  d.cause.resize(n);
  d.X.resize(n, 2);
  d.z.resize(n);
  d.W.resize(n, 3);
  sim.v_true.resize(n);
  sim.t_log.resize(n, r);

  Eigen::MatrixXd cov = truth.sigma.corr();
  for (int a = 0; a < r; ++a)
    for (int b = 0; b < r; ++b)
      cov(a, b) *= truth.sigma.sigma(a) * truth.sigma.sigma(b);
  const Eigen::MatrixXd chol = Eigen::LLT<Eigen::MatrixXd>(cov).matrixL();

  Eigen::VectorXd eps(r), zn(r);
  for (int i = 0; i < n; ++i) {
    const double x_cov = rng.normal();
    const double w_cov = rng.bernoulli(0.5) ? 1.0 : 0.0;
    d.X(i, 0) = 1.0;
    d.X(i, 1) = x_cov;
    d.W(i, 0) = 1.0;
    d.W(i, 1) = x_cov;
    d.W(i, 2) = w_cov;
    const double c = spec.gamma.dot(d.W.row(i));
    const double nu = rng.logistic();
    d.z[i] = c - nu > 0.0 ? 1.0 : 0.0;
    sim.v_true[i] = control_value(fs, spec.gamma, d.W.row(i), d.z[i]);

    for (int q = 0; q < r; ++q) zn[q] = rng.normal();
    eps = chol * zn;
    double y_min = std::numeric_limits<double>::infinity();
    int cause = 0;
    for (int q = 0; q < r; ++q) {
      const double tau = d.X.row(i).dot(truth.beta[q]) +
                         d.z[i] * truth.alpha[q] +
                         sim.v_true[i] * truth.lambda[q];
      sim.t_log(i, q) = yj_inverse(Theta(truth.theta[q]), tau + eps[q]);
      if (sim.t_log(i, q) < y_min) {
        y_min = sim.t_log(i, q);
        cause = q + 1;
      }
    }
    if (spec.a_max) {
      const double a_log = rng.uniform(0.0, *spec.a_max);
      if (a_log < y_min) {
        y_min = a_log;
        cause = 0;
      }
    }
    d.y[i] = y_min;
    d.cause[i] = cause;
  }
  return sim;
}

}  // namespace cfsurv
