#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "cfsurv/data.hpp"
#include "cfsurv/dist.hpp"
#include "cfsurv/estimator.hpp"
#include "cfsurv/rng.hpp"
#include "cfsurv/transform.hpp"

namespace cfsurv {

// Raised when the parametric bootstrap loses too many refits to report a
// trustworthy p-value.
class gof_error : public inference_error {
 public:
  explicit gof_error(const std::string& msg) : inference_error(msg) {}
};

// Product-limit curve (Kaplan--Meier 1958).  Entries cover the distinct
// times carrying at least one event; surv[j] is the survival probability
// just after times[j].  The curve is 1 before the first entry and
// right-continuous, so cdf(t) = 1 - surv picks up each jump at its time.
struct KmCurve {
  Eigen::VectorXd times;
  Eigen::VectorXd surv;
  Eigen::VectorXi at_risk;
  Eigen::VectorXi events;

  int size() const { return static_cast<int>(times.size()); }

  double survival(double t) const {
    const double* b = times.data();
    const auto it = std::upper_bound(b, b + times.size(), t);
    if (it == b) return 1.0;
    return surv[static_cast<int>(it - b) - 1];
  }

  double cdf(double t) const { return 1.0 - survival(t); }

  // Inverse-transform sampling: smallest jump time whose cdf reaches u,
  // +inf when u lies beyond the last jump (the draw is never censored).
  double quantile(double u) const {
    const double* b = surv.data();
    const double* e = b + surv.size();
    // surv is non-increasing; first index with surv <= 1 - u
    const auto it = std::lower_bound(b, e, 1.0 - u, std::greater<double>());
    if (it == e) return std::numeric_limits<double>::infinity();
    return times[static_cast<int>(it - b)];
  }
};

// Product-limit estimator with ties grouped: censorings sharing a time with
// events stay in the risk set for those events.
inline KmCurve kaplan_meier(const Eigen::VectorXd& times,
                            const std::vector<std::uint8_t>& event_flags) {
  const int n = static_cast<int>(times.size());
  if (n == 0) throw std::invalid_argument("kaplan_meier: empty sample");
  if (static_cast<int>(event_flags.size()) != n)
    throw std::invalid_argument("kaplan_meier: length mismatch");
  for (int i = 0; i < n; ++i) {
    if (!std::isfinite(times[i]))
      throw std::invalid_argument("kaplan_meier: non-finite time");
    if (event_flags[i] > 1)
      throw std::invalid_argument("kaplan_meier: event flags must be 0 or 1");
  }

  std::vector<int> ord(n);
  std::iota(ord.begin(), ord.end(), 0);
  std::sort(ord.begin(), ord.end(),
            [&](int a, int b) { return times[a] < times[b]; });

  std::vector<double> t, s;
  std::vector<int> risk, ev;
  double surv = 1.0;
  int i = 0, alive = n;
  while (i < n) {
    int j = i, d = 0;
    const double ti = times[ord[i]];
    while (j < n && times[ord[j]] == ti) d += event_flags[ord[j++]];
    if (d > 0) {
      surv *= 1.0 - static_cast<double>(d) / alive;
      t.push_back(ti);
      s.push_back(surv);
      risk.push_back(alive);
      ev.push_back(d);
    }
    alive -= j - i;
    i = j;
  }

  KmCurve out;
  const int m = static_cast<int>(t.size());
  out.times = Eigen::Map<Eigen::VectorXd>(t.data(), m);
  out.surv = Eigen::Map<Eigen::VectorXd>(s.data(), m);
  out.at_risk = Eigen::Map<Eigen::VectorXi>(risk.data(), m);
  out.events = Eigen::Map<Eigen::VectorXi>(ev.data(), m);
  return out;
}

namespace detail {

// P(min(T, C) <= k) contribution of one covariate row, i.e.
// Phi(u_T) + Phi(u_C) - Phi2(u_T, u_C; rho) = 1 - P(T > k, C > k).
// Extreme arguments short-circuit the bivariate tail; the neglected mass is
// below Phibar(8.5) ~ 1e-17.
inline double min_cdf_term(double u_T, double u_C, const Corr& rho) {
  if (u_T >= 8.5 || u_C >= 8.5) return 1.0;
  if (u_T <= -8.5) return u_C <= -8.5 ? 0.0 : norm_cdf(u_C);
  if (u_C <= -8.5) return norm_cdf(u_T);
  return 1.0 - bvn_tail(u_T, u_C, rho);
}

}  // namespace detail

// Distribution of K = min(T, C) implied by a parameter vector, averaged
// over the sample's covariate rows (the empirical covariate mixture stands
// in for their joint density).  The density is the sum of the two observed-
// event sub-densities, likewise averaged.
struct ModelKDist {
  double sigma_T = 1.0, sigma_C = 1.0;
  double rho = 0.0;
  double theta1 = 1.0, theta2 = 1.0;
  Eigen::VectorXd tau_T, tau_C;

  int n() const { return static_cast<int>(tau_T.size()); }

  double cdf(double k) const {
    const Corr r(rho);
    const double l1 = yj_value(Theta(theta1), k);
    const double l2 = yj_value(Theta(theta2), k);
    KahanSum acc;
    for (int i = 0; i < n(); ++i)
      acc.add(detail::min_cdf_term((l1 - tau_T[i]) / sigma_T,
                                   (l2 - tau_C[i]) / sigma_C, r));
    return acc.value() / n();
  }

  double pdf(double k) const {
    const Theta t1(theta1), t2(theta2);
    return pdf_at(yj_value(t1, k), yj_value(t2, k), yj_deriv(t1, k),
                  yj_deriv(t2, k));
  }

  void pdf_grid(const Eigen::VectorXd& ks, Eigen::VectorXd& out) const {
    const int m = static_cast<int>(ks.size());
    out.resize(m);
    const Theta t1(theta1), t2(theta2);
    for (int q = 0; q < m; ++q)
      out[q] = pdf_at(yj_value(t1, ks[q]), yj_value(t2, ks[q]),
                      yj_deriv(t1, ks[q]), yj_deriv(t2, ks[q]));
  }

  // cdf and density on a shared grid; one transform evaluation per node.
  void eval_grid(const Eigen::VectorXd& ks, Eigen::VectorXd& cdf_out,
                 Eigen::VectorXd& pdf_out) const {
    const int m = static_cast<int>(ks.size());
    cdf_out.resize(m);
    pdf_out.resize(m);
    const Corr r(rho);
    const Theta t1(theta1), t2(theta2);
    const double rr = r.value();
    const double ic = 1.0 / std::sqrt(1.0 - rr * rr);
    for (int q = 0; q < m; ++q) {
      const double l1 = yj_value(t1, ks[q]);
      const double l2 = yj_value(t2, ks[q]);
      const double jT = yj_deriv(t1, ks[q]) / sigma_T;
      const double jC = yj_deriv(t2, ks[q]) / sigma_C;
      KahanSum cacc, dacc;
      for (int i = 0; i < n(); ++i) {
        const double uT = (l1 - tau_T[i]) / sigma_T;
        const double uC = (l2 - tau_C[i]) / sigma_C;
        cacc.add(detail::min_cdf_term(uT, uC, r));
        dacc.add(jT * norm_pdf(uT) * norm_sf((uC - rr * uT) * ic) +
                 jC * norm_pdf(uC) * norm_sf((uT - rr * uC) * ic));
      }
      cdf_out[q] = cacc.value() / n();
      pdf_out[q] = dacc.value() / n();
    }
  }

 private:
  double pdf_at(double l1, double l2, double dl1, double dl2) const {
    const double rr = Corr(rho).value();
    const double ic = 1.0 / std::sqrt(1.0 - rr * rr);
    const double jT = dl1 / sigma_T, jC = dl2 / sigma_C;
    KahanSum acc;
    for (int i = 0; i < n(); ++i) {
      const double uT = (l1 - tau_T[i]) / sigma_T;
      const double uC = (l2 - tau_C[i]) / sigma_C;
      acc.add(jT * norm_pdf(uT) * norm_sf((uC - rr * uT) * ic) +
              jC * norm_pdf(uC) * norm_sf((uT - rr * uC) * ic));
    }
    return acc.value() / n();
  }
};

inline ModelKDist model_k_dist(const EtaParams& eta, const Dataset& data,
                               const Eigen::VectorXd& v) {
  eta.validate(data.p());
  if (v.size() != data.n())
    throw std::invalid_argument("model_k_dist: control-value length mismatch");
  ModelKDist d;
  d.sigma_T = eta.sigma_T;
  d.sigma_C = eta.sigma_C;
  d.rho = eta.rho;
  d.theta1 = eta.theta1;
  d.theta2 = eta.theta2;
  d.tau_T = data.X * eta.beta_T + eta.alpha_T * data.z + eta.lambda_T * v;
  d.tau_C = data.X * eta.beta_C + eta.alpha_C * data.z + eta.lambda_C * v;
  return d;
}

inline double model_cdf_K(double k, const EtaParams& eta, const Dataset& data,
                          const Eigen::VectorXd& v) {
  return model_k_dist(eta, data, v).cdf(k);
}

namespace detail {

// Gauss-Legendre 3 on [-1, 1]
inline constexpr double kGl3x[3] = {-0.7745966692414834, 0.0,
                                    0.7745966692414834};
inline constexpr double kGl3w[3] = {5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0};

}  // namespace detail

struct UnitWeight {
  double operator()(double) const { return 1.0; }
};

// Weighted Cramer--von Mises distance between the model-implied and
// product-limit distribution functions of K,
//   T_CM = n * integral (F_model - F_km)^2 w dF_model
// on [lo, hi].  The interval is partitioned at the product-limit jump times
// -- the only places the integrand is not smooth -- and cells are refined
// until `nodes` of them span the interval.  The model cdf enters through
// one evaluation at lo and is then carried across the partition by
// integrating the analytic density cell by cell (three-point
// Gauss-Legendre); inside a cell it is interpolated cubically from the
// boundary values and slopes.  A single panel straddling the jumps would
// need orders far beyond the node budget for comparable accuracy.
template <class Weight = UnitWeight>
inline double cvm_statistic(const ModelKDist& model, const KmCurve& km, int n,
                            double lo, double hi, int nodes = 512,
                            Weight&& w = Weight{}) {
  if (!(lo < hi))
    throw std::invalid_argument("cvm_statistic: empty integration range");
  if (nodes < 2) throw std::invalid_argument("cvm_statistic: need >= 2 nodes");

  std::vector<double> seg{lo};
  for (int j = 0; j < km.size(); ++j)
    if (km.times[j] > lo && km.times[j] < hi) seg.push_back(km.times[j]);
  seg.push_back(hi);

  const double h_max = (hi - lo) / nodes;
  std::vector<double> xb{lo};  // cell boundaries
  std::vector<double> km_val;  // comparison cdf, constant per cell
  for (std::size_t s = 0; s + 1 < seg.size(); ++s) {
    const double a = seg[s], b = seg[s + 1];
    const double c = km.cdf(0.5 * (a + b));
    const int parts = std::max(1, static_cast<int>(std::ceil((b - a) / h_max)));
    for (int q = 1; q <= parts; ++q) {
      xb.push_back(a + (b - a) * q / parts);
      km_val.push_back(c);
    }
  }
  const int m = static_cast<int>(km_val.size());

  // density at every cell boundary and at the three interior nodes per cell
  Eigen::VectorXd ks(4 * m + 1);
  {
    int t = 0;
    for (int i = 0; i <= m; ++i) ks[t++] = xb[i];
    for (int i = 0; i < m; ++i) {
      const double mid = 0.5 * (xb[i] + xb[i + 1]);
      const double half = 0.5 * (xb[i + 1] - xb[i]);
      for (int q = 0; q < 3; ++q) ks[t++] = mid + half * detail::kGl3x[q];
    }
  }
  Eigen::VectorXd f;
  model.pdf_grid(ks, f);

  double F_a = model.cdf(lo);
  KahanSum acc;
  for (int i = 0; i < m; ++i) {
    const double a = xb[i], b = xb[i + 1];
    const double half = 0.5 * (b - a);
    const double* fi = f.data() + (m + 1) + 3 * i;
    const double dF = half * (detail::kGl3w[0] * fi[0] +
                              detail::kGl3w[1] * fi[1] +
                              detail::kGl3w[2] * fi[2]);
    const double F_b = F_a + dF;
    const double c = km_val[i];
    for (int q = 0; q < 3; ++q) {
      const double s = 0.5 * (detail::kGl3x[q] + 1.0);
      const double h00 = (1.0 + 2.0 * s) * (1.0 - s) * (1.0 - s);
      const double h10 = s * (1.0 - s) * (1.0 - s);
      const double h01 = s * s * (3.0 - 2.0 * s);
      const double h11 = s * s * (s - 1.0);
      const double Fq =
          h00 * F_a + h01 * F_b + (b - a) * (h10 * f[i] + h11 * f[i + 1]);
      const double k_q = 0.5 * (a + b) + half * detail::kGl3x[q];
      const double d = Fq - c;
      acc.add(half * detail::kGl3w[q] * d * d * w(k_q) * fi[q]);
    }
    F_a = F_b;
  }
  return n * acc.value();
}

// Statistic for a parameter vector on a dataset: the model distribution
// uses the sample's covariate rows, the product-limit curve treats failures
// and dependent censoring both as events of K, and the integration range is
// the observed-time span widened by 3% on each side.
inline double cvm_statistic(const Dataset& data, const EtaParams& eta,
                            const Eigen::VectorXd& v, int nodes = 512) {
  const ModelKDist dist = model_k_dist(eta, data, v);
  std::vector<std::uint8_t> ev(data.n());
  for (int i = 0; i < data.n(); ++i) ev[i] = data.delta[i] || data.xi[i];
  const KmCurve km = kaplan_meier(data.y, ev);
  const double y_min = data.y.minCoeff(), y_max = data.y.maxCoeff();
  const double pad = 0.03 * (y_max - y_min);
  return cvm_statistic(dist, km, data.n(), y_min - pad, y_max + pad, nodes);
}

// Outcome of the parametric bootstrap test.  Rejection indicates a bad fit;
// failing to reject does not certify the model, since only the distribution
// of K = min(T, C) is examined and the test errs on the conservative side.
struct GofResult {
  double t_cm = 0.0;
  std::vector<double> boot_stats;  // converged bootstrap statistics, sorted
  int n_failed = 0;                // refits that did not converge
  double p_value = 1.0;
  std::map<double, bool> reject_at;  // prefilled at 1%, 5%, 10%

  // t_cm > empirical (1-kappa)-quantile of boot_stats
  bool reject(double kappa) const {
    const int m = static_cast<int>(boot_stats.size());
    if (m == 0 || !(kappa > 0.0 && kappa < 1.0))
      throw std::invalid_argument("GofResult::reject: bad level or no stats");
    int idx = static_cast<int>(std::ceil((1.0 - kappa) * m));
    idx = std::min(std::max(idx, 1), m);
    return t_cm > boot_stats[idx - 1];
  }
};

struct GofConfig {
  int B = 250;
  std::uint64_t seed = 1;
  std::uint64_t stream = 0;  // bootstrap sample b uses stream + b
  int threads = 1;
  int nodes = 512;
};

// Parametric bootstrap goodness-of-fit test: simulate (T, C) from the
// fitted model over the original covariate rows, draw administrative times
// from the product-limit estimate of their distribution, refit, and compare
// the observed statistic with the bootstrap spread.  Refits start from the
// outer estimates with no multistart; iterations that fail to converge are
// skipped, and losing more than 10% of them aborts the test.
inline GofResult bootstrap_gof(const Dataset& data, const FitResult& fitted,
                               const GofConfig& cfg = {}) {
  data.validate();
  if (!fitted.converged)
    throw std::invalid_argument("bootstrap_gof: fit has not converged");
  if (cfg.B < 100)
    throw std::invalid_argument("bootstrap_gof: need at least 100 bootstrap samples");
  if (cfg.threads < 1)
    throw std::invalid_argument("bootstrap_gof: threads must be positive");
  const int n = data.n();
  if (fitted.v_used.size() != n)
    throw std::invalid_argument("bootstrap_gof: fit does not match the data");

  GofResult out;
  out.t_cm = cvm_statistic(data, fitted.eta_hat, fitted.v_used, cfg.nodes);

  // distribution of the administrative times, for inverse sampling
  std::vector<std::uint8_t> admin_flag(n);
  for (int i = 0; i < n; ++i) admin_flag[i] = !data.delta[i] && !data.xi[i];
  const KmCurve km_admin = kaplan_meier(data.y, admin_flag);

  const EtaParams& e = fitted.eta_hat;
  const double rr = Corr(e.rho).value();
  const double rc = std::sqrt(1.0 - rr * rr);
  const Theta t1(e.theta1), t2(e.theta2);
  const Eigen::VectorXd tau_T =
      data.X * e.beta_T + e.alpha_T * data.z + e.lambda_T * fitted.v_used;
  const Eigen::VectorXd tau_C =
      data.X * e.beta_C + e.alpha_C * data.z + e.lambda_C * fitted.v_used;
  const Eigen::VectorXd* oracle_v =
      fitted.cfg.variant == Variant::oracle ? &fitted.v_used : nullptr;

  std::vector<double> stats(cfg.B, std::numeric_limits<double>::quiet_NaN());

  auto run_one = [&](int b) {
    RngStream rng(cfg.seed, cfg.stream + static_cast<std::uint64_t>(b));
    Dataset boot = data;
    for (int i = 0; i < n; ++i) {
      const double z1 = rng.normal();
      const double z2 = rng.normal();
      const double ua = rng.uniform();
      const double t_log = yj_inverse(t1, tau_T[i] + e.sigma_T * z1);
      const double c_log =
          yj_inverse(t2, tau_C[i] + e.sigma_C * (rr * z1 + rc * z2));
      const double a_log = km_admin.quantile(ua);
      double y = t_log;
      int kind = 0;
      if (c_log < y) { y = c_log; kind = 1; }
      if (a_log < y) { y = a_log; kind = 2; }
      boot.y[i] = y;
      boot.delta[i] = kind == 0 ? 1 : 0;
      boot.xi[i] = kind == 1 ? 1 : 0;
    }
    boot.finalize();
    FitConfig rcfg = fitted.cfg;
    rcfg.compute_vcov = false;
    rcfg.multistart = 1;
    rcfg.start = e;
    try {
      const FitResult rf = fit(boot, fitted.fs_spec, rcfg, oracle_v);
      stats[b] = cvm_statistic(boot, rf.eta_hat, rf.v_used, cfg.nodes);
    } catch (const std::exception&) {
      // leave the slot NaN; counted as a failed refit below
    }
  };

  if (cfg.threads == 1) {
    for (int b = 0; b < cfg.B; ++b) run_one(b);
  } else {
    std::vector<std::thread> pool;
    pool.reserve(cfg.threads);
    for (int t = 0; t < cfg.threads; ++t)
      pool.emplace_back([&, t] {
        for (int b = t; b < cfg.B; b += cfg.threads) run_one(b);
      });
    for (auto& th : pool) th.join();
  }

  for (double s : stats) {
    if (std::isnan(s))
      ++out.n_failed;
    else
      out.boot_stats.push_back(s);
  }
  if (10 * out.n_failed > cfg.B)
    throw gof_error("bootstrap_gof: " + std::to_string(out.n_failed) + " of " +
                    std::to_string(cfg.B) + " bootstrap refits failed");
  std::sort(out.boot_stats.begin(), out.boot_stats.end());

  int count_ge = 0;
  for (double s : out.boot_stats) count_ge += s >= out.t_cm;
  const int m = static_cast<int>(out.boot_stats.size());
  out.p_value = (1.0 + count_ge) / (m + 1.0);
  for (double kappa : {0.01, 0.05, 0.10}) out.reject_at[kappa] = out.reject(kappa);
  return out;
}

inline GofResult bootstrap_gof(const Dataset& data, const FitResult& fitted,
                               int B, std::uint64_t seed) {
  GofConfig cfg;
  cfg.B = B;
  cfg.seed = seed;
  return bootstrap_gof(data, fitted, cfg);
}

}  // namespace cfsurv
