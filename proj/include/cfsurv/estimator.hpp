#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "cfsurv/first_stage.hpp"
#include "cfsurv/likelihood.hpp"
#include "cfsurv/optim.hpp"

namespace cfsurv {

enum class Variant { two_step, naive, independent, oracle };

inline const char* variant_name(Variant v) {
  switch (v) {
    case Variant::two_step: return "two-step";
    case Variant::naive: return "naive";
    case Variant::independent: return "independent";
    case Variant::oracle: return "oracle";
  }
  return "?";
}

struct FitConfig {
  Variant variant = Variant::two_step;
  bool theta_fixed = false;
  double theta1_fixed = 1.0;
  double theta2_fixed = 1.0;
  double grad_tol = 1e-7;
  int max_iter = 500;
  int multistart = 1;
  double fd_step = 1e-6;
  bool compute_vcov = true;
  // When set, the crude initialization, the independence pre-fit, and the
  // multistart grid are all skipped and the optimizer runs once from these
  // values.  Bootstrap refits restart from the outer estimates this way.
  std::optional<EtaParams> start;
};

// Mapping between EtaParams and the unconstrained optimization vector:
// raw coefficients, log sigma, atanh rho, and a scaled logit for theta
// (theta = 2 / (1 + exp(-u))).
class ParamLayout {
 public:
  ParamLayout(int p, const FitConfig& cfg)
      : p_(p),
        has_lambda_(cfg.variant != Variant::naive),
        has_rho_(cfg.variant != Variant::independent),
        has_theta_(!cfg.theta_fixed) {}

  int p() const { return p_; }
  bool has_lambda() const { return has_lambda_; }
  bool has_rho() const { return has_rho_; }
  bool has_theta() const { return has_theta_; }

  int dim() const {
    return 2 * (p_ + 1) + 2 * has_lambda_ + 2 + has_rho_ + 2 * has_theta_;
  }

  Eigen::VectorXd pack(const EtaParams& e) const {
    Eigen::VectorXd u(dim());
    int k = 0;
    for (int j = 0; j < p_; ++j) u[k++] = e.beta_T[j];
    u[k++] = e.alpha_T;
    if (has_lambda_) u[k++] = e.lambda_T;
    for (int j = 0; j < p_; ++j) u[k++] = e.beta_C[j];
    u[k++] = e.alpha_C;
    if (has_lambda_) u[k++] = e.lambda_C;
    u[k++] = std::log(e.sigma_T);
    u[k++] = std::log(e.sigma_C);
    if (has_rho_) u[k++] = std::atanh(Corr(e.rho).value());
    if (has_theta_) {
      u[k++] = theta_to_u(e.theta1);
      u[k++] = theta_to_u(e.theta2);
    }
    return u;
  }

  EtaParams unpack(const Eigen::VectorXd& u, const FitConfig& cfg) const {
    EtaParams e;
    e.beta_T.resize(p_);
    e.beta_C.resize(p_);
    int k = 0;
    for (int j = 0; j < p_; ++j) e.beta_T[j] = u[k++];
    e.alpha_T = u[k++];
    e.lambda_T = has_lambda_ ? u[k++] : 0.0;
    for (int j = 0; j < p_; ++j) e.beta_C[j] = u[k++];
    e.alpha_C = u[k++];
    e.lambda_C = has_lambda_ ? u[k++] : 0.0;
    e.sigma_T = std::exp(u[k++]);
    e.sigma_C = std::exp(u[k++]);
    e.rho = has_rho_ ? std::tanh(u[k++]) : 0.0;
    if (has_theta_) {
      e.theta1 = u_to_theta(u[k++]);
      e.theta2 = u_to_theta(u[k++]);
    } else {
      e.theta1 = cfg.theta1_fixed;
      e.theta2 = cfg.theta2_fixed;
    }
    return e;
  }

  // d(eta_k)/d(u_k) evaluated at eta; the map is coordinatewise so the
  // Jacobian is diagonal.
  Eigen::VectorXd jacobian_diag(const EtaParams& e) const {
    Eigen::VectorXd j = Eigen::VectorXd::Ones(dim());
    int k = 2 * (p_ + 1) + 2 * has_lambda_;
    j[k++] = e.sigma_T;
    j[k++] = e.sigma_C;
    if (has_rho_) {
      const double r = Corr(e.rho).value();
      j[k++] = 1.0 - r * r;
    }
    if (has_theta_) {
      j[k++] = e.theta1 * (2.0 - e.theta1) / 2.0;
      j[k++] = e.theta2 * (2.0 - e.theta2) / 2.0;
    }
    return j;
  }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    for (int j = 0; j < p_; ++j) out.push_back("beta_T" + std::to_string(j));
    out.push_back("alpha_T");
    if (has_lambda_) out.push_back("lambda_T");
    for (int j = 0; j < p_; ++j) out.push_back("beta_C" + std::to_string(j));
    out.push_back("alpha_C");
    if (has_lambda_) out.push_back("lambda_C");
    out.push_back("sigma_T");
    out.push_back("sigma_C");
    if (has_rho_) out.push_back("rho");
    if (has_theta_) {
      out.push_back("theta1");
      out.push_back("theta2");
    }
    return out;
  }

  // value of the named parameter, for metric/coverage bookkeeping
  Eigen::VectorXd values(const EtaParams& e) const {
    Eigen::VectorXd v(dim());
    int k = 0;
    for (int j = 0; j < p_; ++j) v[k++] = e.beta_T[j];
    v[k++] = e.alpha_T;
    if (has_lambda_) v[k++] = e.lambda_T;
    for (int j = 0; j < p_; ++j) v[k++] = e.beta_C[j];
    v[k++] = e.alpha_C;
    if (has_lambda_) v[k++] = e.lambda_C;
    v[k++] = e.sigma_T;
    v[k++] = e.sigma_C;
    if (has_rho_) v[k++] = e.rho;
    if (has_theta_) {
      v[k++] = e.theta1;
      v[k++] = e.theta2;
    }
    return v;
  }

  static double theta_to_u(double theta) {
    const double t = std::min(std::max(theta, 1e-9), 2.0 - 1e-9);
    return std::log(t / (2.0 - t));
  }
  static double u_to_theta(double u) { return 2.0 / (1.0 + std::exp(-u)); }

 private:
  int p_;
  bool has_lambda_, has_rho_, has_theta_;
};

struct FitResult {
  EtaParams eta_hat;
  Eigen::VectorXd gamma_hat;  // empty for naive / oracle variants
  double loglik = 0.0;
  bool converged = false;
  int n_iter = 0;

  bool vcov_ok = false;
  std::string vcov_message;        // why vcov is absent, when it is
  Eigen::MatrixXd vcov;            // original eta scale, diag = SE^2
  Eigen::VectorXd se, ci_lower, ci_upper, p_value;
  std::vector<std::string> param_names;

  FitConfig cfg;
  FirstStageSpec fs_spec;
  FirstStageResult first_stage;    // empty for naive / oracle
  Eigen::VectorXd v_used;          // control values the fit saw
  std::vector<Eigen::VectorXd> starts_u;  // multistart points (free scale)
};

namespace detail {

// Ordinary least squares with a graceful fallback for thin subsamples.
inline Eigen::VectorXd ols_or_mean(const Eigen::MatrixXd& A,
                                   const Eigen::VectorXd& b) {
  if (A.rows() >= A.cols() + 2) {
    Eigen::VectorXd coef =
        A.colPivHouseholderQr().solve(b);
    if (coef.allFinite()) return coef;
  }
  Eigen::VectorXd coef = Eigen::VectorXd::Zero(A.cols());
  if (b.size() > 0) coef[0] = b.mean();
  return coef;
}

struct CrudeInit {
  EtaParams eta;
};

// Start values: OLS of y on the working design within each observed-event
// subsample, residual-sd scales, rho = 0, theta = 1.
inline CrudeInit crude_init(const Dataset& data, const Eigen::VectorXd& v,
                            bool use_v) {
  const int n = data.n();
  const int p = data.p();
  const int q = p + 1 + (use_v ? 1 : 0);
  CrudeInit out;
  out.eta.beta_T = Eigen::VectorXd::Zero(p);
  out.eta.beta_C = Eigen::VectorXd::Zero(p);
  for (int block = 0; block < 2; ++block) {
    std::vector<int> rows;
    for (int i = 0; i < n; ++i)
      if ((block == 0 ? data.delta[i] : data.xi[i]) != 0) rows.push_back(i);
    Eigen::MatrixXd A(rows.size(), q);
    Eigen::VectorXd b(rows.size());
    for (std::size_t r = 0; r < rows.size(); ++r) {
      const int i = rows[r];
      A.row(r).head(p) = data.X.row(i);
      A(r, p) = data.z[i];
      if (use_v) A(r, p + 1) = v[i];
      b[r] = data.y[i];
    }
    const Eigen::VectorXd coef = ols_or_mean(A, b);
    double sd = 1.0;
    if (rows.size() > static_cast<std::size_t>(q) + 1) {
      const Eigen::VectorXd resid = b - A * coef;
      sd = std::max(0.05, std::sqrt(resid.squaredNorm() /
                                    (double(rows.size()) - q)));
    }
    if (block == 0) {
      out.eta.beta_T = coef.head(p);
      out.eta.alpha_T = coef[p];
      out.eta.lambda_T = use_v ? coef[p + 1] : 0.0;
      out.eta.sigma_T = sd;
    } else {
      out.eta.beta_C = coef.head(p);
      out.eta.alpha_C = coef[p];
      out.eta.lambda_C = use_v ? coef[p + 1] : 0.0;
      out.eta.sigma_C = sd;
    }
  }
  out.eta.rho = 0.0;
  out.eta.theta1 = 1.0;
  out.eta.theta2 = 1.0;
  return out;
}

}  // namespace detail

namespace detail {

// Sandwich covariance on the unconstrained scale: H^{-1} B H^{-T} / n with
// B the mean outer product of per-observation scores, augmented by the
// first-stage plug-in correction H_gamma Psi_i when fs is present.  Shared
// by the main estimator and the competing-risks extension; mean_ll(u, v)
// and row_ll(u, v, out) evaluate the model at free vector u with control
// values v.
template <class MeanLL, class RowLL>
Eigen::MatrixXd sandwich_u_scale(int n, const Eigen::VectorXd& u_hat,
                                 MeanLL&& mean_ll, RowLL&& row_ll,
                                 const Eigen::VectorXd& v,
                                 const FirstStageResult* fs,
                                 const FirstStageSpec& fs_spec,
                                 const Eigen::MatrixXd& W,
                                 const Eigen::VectorXd& z, double fd_step) {
  const int dim = static_cast<int>(u_hat.size());
  auto obj = [&](const Eigen::VectorXd& u) { return mean_ll(u, v); };
  const Eigen::MatrixXd H = fd_hessian(obj, u_hat);
  Eigen::FullPivLU<Eigen::MatrixXd> lu(H);
  if (!lu.isInvertible())
    throw inference_error("sandwich_vcov: singular Hessian");
  const Eigen::MatrixXd Hinv = lu.inverse();

  // per-observation score columns by central differences in u
  Eigen::MatrixXd scores(n, dim);
  {
    Eigen::VectorXd up = u_hat;
    Eigen::VectorXd rp(n), rm(n);
    for (int j = 0; j < dim; ++j) {
      const double h = fd_step * std::max(1.0, std::fabs(u_hat[j]));
      const double uj = u_hat[j];
      up[j] = uj + h;
      row_ll(up, v, rp);
      up[j] = uj - h;
      row_ll(up, v, rm);
      up[j] = uj;
      scores.col(j) = (rp - rm) / (2.0 * h);
    }
  }

  Eigen::MatrixXd term = scores;
  if (fs != nullptr && fs->score_rows.size() > 0) {
    const int dg = static_cast<int>(fs->gamma_hat.size());
    // H_gamma: derivative of the mean eta-score in gamma, via refreshed
    // control values
    Eigen::MatrixXd Hg(dim, dg);
    Eigen::VectorXd gamma = fs->gamma_hat;
    Eigen::VectorXd v_shift(n);
    for (int k = 0; k < dg; ++k) {
      const double h = fd_step * std::max(1.0, std::fabs(gamma[k]));
      const double gk = gamma[k];
      auto mean_score = [&](double gval) {
        gamma[k] = gval;
        for (int i = 0; i < n; ++i)
          v_shift[i] = control_value(fs_spec, gamma, W.row(i), z[i]);
        gamma[k] = gk;
        auto ll = [&](const Eigen::VectorXd& u) {
          return mean_ll(u, v_shift);
        };
        return fd_gradient(ll, u_hat, fd_step);
      };
      Hg.col(k) = (mean_score(gk + h) - mean_score(gk - h)) / (2.0 * h);
    }
    const Eigen::MatrixXd minv_t =
        fs->m_hat.fullPivLu().inverse().transpose();
    // Psi_i = -M^{-1} h_m,i  =>  rows Psi = -(score_rows) * M^{-T}
    const Eigen::MatrixXd psi = -(fs->score_rows * minv_t);
    term.noalias() += psi * Hg.transpose();
  }

  const Eigen::MatrixXd B = term.transpose() * term / double(n);
  return Hinv * B * Hinv.transpose() / double(n);
}

}  // namespace detail

// Robust (sandwich) covariance of the second-stage estimate, with the
// first-stage plug-in correction.  Computed on the unconstrained scale and
// mapped back through the diagonal reparameterization Jacobian; pass
// fs = nullptr for variants without an estimated first stage.
inline Eigen::MatrixXd sandwich_vcov(const Dataset& data,
                                     const Eigen::VectorXd& v,
                                     const FirstStageResult* fs,
                                     const FirstStageSpec& fs_spec,
                                     const EtaParams& eta_hat,
                                     const ParamLayout& layout,
                                     const FitConfig& cfg) {
  const Eigen::VectorXd u_hat = layout.pack(eta_hat);
  auto mean_ll = [&](const Eigen::VectorXd& u, const Eigen::VectorXd& vv) {
    return sample_loglik(layout.unpack(u, cfg), data, vv);
  };
  auto row_ll = [&](const Eigen::VectorXd& u, const Eigen::VectorXd& vv,
                    Eigen::VectorXd& out) {
    loglik_rows(layout.unpack(u, cfg), data, vv, out);
  };
  const Eigen::MatrixXd sigma_u =
      detail::sandwich_u_scale(data.n(), u_hat, mean_ll, row_ll, v, fs,
                               fs_spec, data.W, data.z, cfg.fd_step);
  const Eigen::VectorXd jd = layout.jacobian_diag(eta_hat);
  return jd.asDiagonal() * sigma_u * jd.asDiagonal();
}

struct IntervalTable {
  Eigen::VectorXd se, lower, upper, p_value;
};

// Wald intervals keyed on the parameter kind: scale parameters (names
// starting "sigma") on the log scale, correlations ("rho") through Fisher's
// z, transform indices ("theta") on the raw scale with a null of 1, and
// everything else raw with a null of 0.  p-values test the no-effect /
// no-transform nulls.
inline IntervalTable interval_table(const Eigen::VectorXd& val,
                                    const std::vector<std::string>& nm,
                                    const Eigen::MatrixXd& vcov,
                                    double level = 0.95) {
  const int dim = static_cast<int>(val.size());
  const double zq = norm_quantile(0.5 + level / 2.0);
  IntervalTable t;
  t.se.resize(dim);
  t.lower.resize(dim);
  t.upper.resize(dim);
  t.p_value.resize(dim);
  for (int j = 0; j < dim; ++j) {
    const double se = std::sqrt(std::max(0.0, vcov(j, j)));
    t.se[j] = se;
    const std::string& name = nm[j];
    if (name.rfind("sigma", 0) == 0) {
      const double ls = se / val[j];
      t.lower[j] = val[j] * std::exp(-zq * ls);
      t.upper[j] = val[j] * std::exp(zq * ls);
      t.p_value[j] = std::nan("");
    } else if (name.rfind("rho", 0) == 0) {
      const double r = Corr(val[j]).value();
      const double zr = std::atanh(r);
      const double zs = se / (1.0 - r * r);
      t.lower[j] = std::tanh(zr - zq * zs);
      t.upper[j] = std::tanh(zr + zq * zs);
      t.p_value[j] =
          se > 0.0 ? std::erfc(std::fabs(zr / zs) / sqrt_2) : std::nan("");
    } else {
      t.lower[j] = val[j] - zq * se;
      t.upper[j] = val[j] + zq * se;
      const double null0 = name.rfind("theta", 0) == 0 ? 1.0 : 0.0;
      t.p_value[j] =
          se > 0.0 ? std::erfc(std::fabs((val[j] - null0) / se) / sqrt_2)
                   : std::nan("");
    }
  }
  return t;
}

inline IntervalTable confidence_intervals(const EtaParams& eta,
                                          const Eigen::MatrixXd& vcov,
                                          const ParamLayout& layout,
                                          double level = 0.95) {
  return interval_table(layout.values(eta), layout.names(), vcov, level);
}

// Two-step estimation (Variant::two_step), or one of the comparison
// variants.  oracle_v supplies the true control values for the oracle
// variant and is ignored otherwise.
inline FitResult fit(const Dataset& data, const FirstStageSpec& fs_spec,
                     const FitConfig& cfg,
                     const Eigen::VectorXd* oracle_v = nullptr) {
  data.validate();
  const int n = data.n();
  int n_delta = 0, n_xi = 0;
  for (int i = 0; i < n; ++i) {
    n_delta += data.delta[i];
    n_xi += data.xi[i];
  }
  if (n_delta < 10 || n_xi < 10)
    throw std::invalid_argument(
        "fit: need at least 10 observed failures and 10 dependent-censoring events");

  FitResult out;
  out.cfg = cfg;
  out.fs_spec = fs_spec;

  Eigen::VectorXd v = Eigen::VectorXd::Zero(n);
  const bool uses_v = cfg.variant != Variant::naive;
  bool has_first_stage = false;
  switch (cfg.variant) {
    case Variant::two_step:
    case Variant::independent:
      out.first_stage = fit_first_stage(data, fs_spec);
      out.gamma_hat = out.first_stage.gamma_hat;
      v = out.first_stage.v_hat;
      has_first_stage = true;
      break;
    case Variant::oracle:
      if (oracle_v == nullptr || oracle_v->size() != n)
        throw std::invalid_argument("fit: oracle variant needs true control values");
      v = *oracle_v;
      break;
    case Variant::naive:
      break;
  }
  out.v_used = v;

  const ParamLayout layout(data.p(), cfg);
  auto objective = [&](const Eigen::VectorXd& u) {
    return sample_loglik(layout.unpack(u, cfg), data, v);
  };
  const OptimOptions oo{cfg.grad_tol, cfg.max_iter, cfg.fd_step};

  std::vector<EtaParams> starts;
  if (cfg.start) {
    cfg.start->validate(data.p());
    starts.push_back(*cfg.start);
  } else {
    // Stage A: independent-model polish of the crude start.
    EtaParams start_eta = detail::crude_init(data, v, uses_v).eta;
    if (!cfg.theta_fixed) {
      start_eta.theta1 = 1.0;
      start_eta.theta2 = 1.0;
    } else {
      start_eta.theta1 = cfg.theta1_fixed;
      start_eta.theta2 = cfg.theta2_fixed;
    }
    if (cfg.variant != Variant::independent) {
      // rho-free pre-fit: polish the crude start under the independent model
      const ParamLayout il(data.p(), [&] {
        FitConfig c = cfg;
        c.variant = Variant::independent;
        return c;
      }());
      auto iobj = [&](const Eigen::VectorXd& u) {
        EtaParams e = il.unpack(u, cfg);
        if (!layout.has_lambda()) {
          e.lambda_T = 0.0;
          e.lambda_C = 0.0;
        }
        return sample_loglik(e, data, v);
      };
      OptimOptions ioo = oo;
      ioo.max_iter = std::min(cfg.max_iter, 300);
      const OptimResult ir = bfgs_maximize(iobj, il.pack(start_eta), ioo);
      start_eta = il.unpack(ir.x, cfg);
      if (!layout.has_lambda()) {
        start_eta.lambda_T = 0.0;
        start_eta.lambda_C = 0.0;
      }
    }

    // multistart grid around the stage-A iterate
    starts.push_back(start_eta);
    const double th_grid[] = {0.5, 1.0, 1.5};
    const double rho_grid[] = {-0.5, 0.0, 0.5};
    for (double th : th_grid)
      for (double r : rho_grid) {
        if (static_cast<int>(starts.size()) >= cfg.multistart) break;
        EtaParams e = start_eta;
        if (!cfg.theta_fixed) {
          e.theta1 = th;
          e.theta2 = th;
        }
        e.rho = layout.has_rho() ? r : 0.0;
        starts.push_back(e);
      }
  }

  bool any = false;
  OptimResult best;
  std::string diagnostics;
  for (std::size_t s = 0; s < starts.size(); ++s) {
    out.starts_u.push_back(layout.pack(starts[s]));
    const OptimResult r = bfgs_maximize(objective, layout.pack(starts[s]), oo);
    if (r.converged && (!any || r.f > best.f)) {
      best = r;
      any = true;
    }
    if (!r.converged)
      diagnostics += "start " + std::to_string(s) + ": stopped at iter " +
                     std::to_string(r.n_iter) + ", loglik " +
                     std::to_string(r.f) + "; ";
  }
  if (!any)
    throw convergence_error("fit: no multistart converged (" + diagnostics + ")");

  out.eta_hat = layout.unpack(best.x, cfg);
  out.loglik = best.f;
  out.converged = true;
  out.n_iter = best.n_iter;
  out.param_names = layout.names();

  if (cfg.compute_vcov) {
    try {
      out.vcov = sandwich_vcov(data, v, has_first_stage ? &out.first_stage : nullptr,
                               fs_spec, out.eta_hat, layout, cfg);
      const IntervalTable t = confidence_intervals(out.eta_hat, out.vcov, layout);
      out.se = t.se;
      out.ci_lower = t.lower;
      out.ci_upper = t.upper;
      out.p_value = t.p_value;
      out.vcov_ok = true;
    } catch (const inference_error& e) {
      out.vcov_ok = false;
      out.vcov_message = e.what();
    }
  }
  return out;
}

}  // namespace cfsurv
