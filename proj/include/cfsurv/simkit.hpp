#pragma once

#include <Eigen/Dense>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "cfsurv/estimator.hpp"
#include "cfsurv/rng.hpp"

namespace cfsurv {

enum class Scenario {
  baseline,        // logistic selection, binary Z
  link_probit,     // 1-a: probit selection in the DGP, logit fit
  link_cloglog,    // 1-b: Gumbel selection in the DGP, logit fit
  skew_normal,     // 2-a: continuous Z, skew-normal errors
  student_t3,      // 2-b: continuous Z, bivariate t3 errors
  heteroscedastic, // 2-c: continuous Z, error scale depends on x
  cmprsk_r3,       // competing-risks design, handled by the cmprsk module
};

inline const char* scenario_name(Scenario s) {
  switch (s) {
    case Scenario::baseline: return "baseline";
    case Scenario::link_probit: return "1-a";
    case Scenario::link_cloglog: return "1-b";
    case Scenario::skew_normal: return "2-a";
    case Scenario::student_t3: return "2-b";
    case Scenario::heteroscedastic: return "2-c";
    case Scenario::cmprsk_r3: return "cmprsk-r3";
  }
  return "?";
}

inline Scenario parse_scenario(const std::string& s) {
  if (s == "baseline" || s == "0") return Scenario::baseline;
  if (s == "1-a" || s == "probit") return Scenario::link_probit;
  if (s == "1-b" || s == "cloglog") return Scenario::link_cloglog;
  if (s == "2-a" || s == "skew-normal") return Scenario::skew_normal;
  if (s == "2-b" || s == "t3") return Scenario::student_t3;
  if (s == "2-c" || s == "heteroscedastic") return Scenario::heteroscedastic;
  if (s == "cmprsk-r3") return Scenario::cmprsk_r3;
  throw std::invalid_argument("unknown scenario: " + s);
}

// Upper bound of the administrative-censoring law: log A ~ U[0, a_max],
// i.e. uniform on the same log scale the model works on.  Calibrated (see
// calibrate_a_max) so the baseline design yields close to 40% observed
// failures, 40% dependent censoring, 20% administrative.
inline constexpr double kBaselineAmax = 9.25;

inline EtaParams baseline_truth() {
  EtaParams e;
  e.beta_T = Eigen::Vector2d(2.5, 2.6);
  e.alpha_T = 1.8;
  e.lambda_T = 2.0;
  e.beta_C = Eigen::Vector2d(1.8, 0.9);
  e.alpha_C = 0.5;
  e.lambda_C = -2.2;
  e.sigma_T = 1.0;
  e.sigma_C = 1.0;
  e.rho = 0.75;
  e.theta1 = 1.0;
  e.theta2 = 0.5;
  return e;
}

inline Eigen::Vector3d baseline_gamma() { return {-1.0, 0.6, 2.3}; }

struct DgpSpec {
  Scenario scenario = Scenario::baseline;
  int n = 1000;
  EtaParams truth = baseline_truth();
  Eigen::VectorXd gamma = baseline_gamma();
  std::optional<double> a_max = kBaselineAmax;  // nullopt: no admin censoring
  double hetero_c = 0.3;   // scale exponent for scenario 2-c
  double skew_index = 0.92;
  std::uint64_t seed = 1;
  std::uint64_t stream = 0;  // replication index
};

// First-stage specification the *estimator* uses for a scenario.  The
// misspecification scenarios deliberately keep the logit fit while the data
// come from another link.
inline FirstStageSpec scenario_first_stage(Scenario s) {
  switch (s) {
    case Scenario::baseline:
    case Scenario::link_probit:
    case Scenario::link_cloglog:
      return {FirstStageKind::binary_logit};
    default:
      return {FirstStageKind::continuous_linear};
  }
}

// Latent quantities the estimators never see (oracle excepted).
struct SideTable {
  Eigen::VectorXd v_true;   // E[nu | Z, W] under the generating law
  Eigen::VectorXd t_log, c_log, a_log;  // log latent times; a_log = inf if none
};

struct SimulatedData {
  Dataset data;
  SideTable side;
};

namespace detail {

// Conditional means of a standard Gumbel variable (cdf exp(-exp(-x))),
// needed for the true control values of scenario 1-b.  Both branches are
// evaluated through the substitution t = exp(-x), which avoids underflow in
// the extreme tails.
inline double gumbel_lower_mean(double c) {  // E[nu | nu < c]
  const double a = std::exp(-c);
  // E[nu | nu < c] = -int_0^inf log(a+s) e^{-s} ds
  const double val = quad::integrate(
      [a](double s) { return std::log(a + s) * std::exp(-s); }, 0.0, 60.0,
      1e-11);
  return -val;
}

inline double gumbel_upper_mean(double c) {  // E[nu | nu > c]
  constexpr double euler_gamma = 0.57721566490153286;
  if (c > 30.0) return c + 1.0;  // exponential-tail mean residual life
  if (c >= -2.0) {
    const double num = quad::integrate(
        [](double x) { return x * std::exp(-x - std::exp(-x)); }, c, c + 60.0,
        1e-12);
    const double p = -std::expm1(-std::exp(-c));
    return num / p;
  }
  const double a = std::exp(-c);
  if (a > 700.0) return euler_gamma;  // P(nu < c) underflows to zero
  const double p_low = std::exp(-a);
  return (euler_gamma - p_low * gumbel_lower_mean(c)) / (-std::expm1(-a));
}

struct ErrorPair {
  double e_T, e_C;
};

// Per-scenario error generator; baseline and link scenarios share the
// bivariate normal, the 2-* scenarios swap in the misspecified laws.
class ErrorSampler {
 public:
  ErrorSampler(const DgpSpec& spec)
      : scenario_(spec.scenario),
        sigma_T_(spec.truth.sigma_T),
        sigma_C_(spec.truth.sigma_C),
        rho_(Corr(spec.truth.rho).value()),
        hetero_c_(spec.hetero_c) {
    if (scenario_ == Scenario::skew_normal) {
      // Marginal skewness g1 solves g1 = (4-pi)/2 * m^3 / (1 - m^2)^{3/2}
      // with m = delta * sqrt(2/pi); solved once by bisection on delta.
      delta_ = solve_delta(spec.skew_index);
      const double m2 = delta_ * delta_ * 2.0 / pi;
      mean_shift_ = delta_ * std::sqrt(2.0 / pi);
      scale_ = 1.0 / std::sqrt(1.0 - m2);
      // corr(e_T, e_C) = (d^2 (1 - 2/pi) + (1-d^2) psi) / (1 - d^2 2/pi)
      // inverted for psi; the attainable range may exclude the requested
      // rho, in which case psi is clamped and the realized correlation
      // differs (documented in realized_rho()).
      const double d2 = delta_ * delta_;
      double psi = (rho_ * (1.0 - m2) - d2 * (1.0 - 2.0 / pi)) / (1.0 - d2);
      psi_ = std::min(std::max(psi, -(1.0 - 1e-9)), 1.0 - 1e-9);
    }
  }

  double realized_rho() const {
    if (scenario_ != Scenario::skew_normal) return rho_;
    const double d2 = delta_ * delta_;
    return (d2 * (1.0 - 2.0 / pi) + (1.0 - d2) * psi_) /
           (1.0 - d2 * 2.0 / pi);
  }

  ErrorPair draw(RngStream& rng, double x_tilde) const {
    const double sr = std::sqrt(1.0 - rho_ * rho_);
    switch (scenario_) {
      case Scenario::skew_normal: {
        const double u0 = std::fabs(rng.normal());
        const double z1 = rng.normal();
        const double z2 = psi_ * z1 + std::sqrt(1.0 - psi_ * psi_) * rng.normal();
        const double sd = std::sqrt(1.0 - delta_ * delta_);
        const double raw_T = delta_ * u0 + sd * z1;
        const double raw_C = delta_ * u0 + sd * z2;
        return {sigma_T_ * scale_ * (raw_T - mean_shift_),
                sigma_C_ * scale_ * (raw_C - mean_shift_)};
      }
      case Scenario::student_t3: {
        const double z1 = rng.normal();
        const double z2 = rho_ * z1 + sr * rng.normal();
        const double g = rng.chisq3();
        const double mix = std::sqrt(3.0 / g) / std::sqrt(3.0);
        return {sigma_T_ * z1 * mix, sigma_C_ * z2 * mix};
      }
      case Scenario::heteroscedastic: {
        const double z1 = rng.normal();
        const double z2 = rho_ * z1 + sr * rng.normal();
        const double s = std::exp(hetero_c_ * x_tilde);
        return {sigma_T_ * z1 * s, sigma_C_ * z2 * s};
      }
      default: {
        const double z1 = rng.normal();
        const double z2 = rho_ * z1 + sr * rng.normal();
        return {sigma_T_ * z1, sigma_C_ * z2};
      }
    }
  }

 private:
  static double solve_delta(double target_skew) {
    double lo = 0.0, hi = 1.0 - 1e-12;
    for (int it = 0; it < 200; ++it) {
      const double d = 0.5 * (lo + hi);
      const double m = d * std::sqrt(2.0 / pi);
      const double g1 =
          (4.0 - pi) / 2.0 * m * m * m / std::pow(1.0 - m * m, 1.5);
      (g1 < target_skew ? lo : hi) = d;
    }
    return 0.5 * (lo + hi);
  }

  Scenario scenario_;
  double sigma_T_, sigma_C_, rho_, hetero_c_;
  double delta_ = 0.0, psi_ = 0.0, mean_shift_ = 0.0, scale_ = 1.0;
};

}  // namespace detail

inline SimulatedData generate(const DgpSpec& spec) {
  if (spec.n < 50) throw std::invalid_argument("generate: n must be >= 50");
  if (spec.scenario == Scenario::cmprsk_r3)
    throw std::invalid_argument(
        "generate: use generate_cmprsk for the competing-risks design");
  if (spec.gamma.size() != 3)
    throw std::invalid_argument("generate: gamma must have 3 components");
  const int n = spec.n;
  const bool binary_z = spec.scenario == Scenario::baseline ||
                        spec.scenario == Scenario::link_probit ||
                        spec.scenario == Scenario::link_cloglog;

  SimulatedData out;
  Dataset& d = out.data;
  d.y.resize(n);
  d.delta.assign(n, 0);
  d.xi.assign(n, 0);
  d.X.resize(n, 2);
  d.z.resize(n);
  d.W.resize(n, 3);
  out.side.v_true.resize(n);
  out.side.t_log.resize(n);
  out.side.c_log.resize(n);
  out.side.a_log.resize(n);

  RngStream rng(spec.seed, spec.stream);
  const detail::ErrorSampler errs(spec);
  const Theta th1(spec.truth.theta1), th2(spec.truth.theta2);

  for (int i = 0; i < n; ++i) {
    const double x_tilde = rng.normal();
    // baseline uses a Bernoulli instrument; every misspecification scenario
    // (including the binary-Z link scenarios) switches to U[0,2]
    const double w_tilde = spec.scenario == Scenario::baseline
                               ? (rng.uniform() < 0.5 ? 1.0 : 0.0)
                               : rng.uniform(0.0, 2.0);
    d.X(i, 0) = 1.0;
    d.X(i, 1) = x_tilde;
    d.W(i, 0) = 1.0;
    d.W(i, 1) = x_tilde;
    d.W(i, 2) = w_tilde;
    const double c = spec.gamma[0] + spec.gamma[1] * x_tilde +
                     spec.gamma[2] * w_tilde;

    double z, v;
    if (binary_z) {
      double nu;
      switch (spec.scenario) {
        case Scenario::link_probit: nu = rng.normal(); break;
        case Scenario::link_cloglog: nu = rng.gumbel(); break;
        default: nu = rng.logistic(); break;
      }
      z = (c - nu > 0.0) ? 1.0 : 0.0;
      switch (spec.scenario) {
        case Scenario::link_probit:
          v = z > 0.5 ? -detail::probit_upper_mean(-c)
                      : detail::probit_upper_mean(c);
          break;
        case Scenario::link_cloglog:
          v = z > 0.5 ? detail::gumbel_lower_mean(c)
                      : detail::gumbel_upper_mean(c);
          break;
        default:
          v = z > 0.5 ? -detail::logistic_upper_mean(-c)
                      : detail::logistic_upper_mean(c);
          break;
      }
    } else {
      const double nu = rng.normal() * std::sqrt(2.0);
      z = c + nu;
      v = nu;  // Z reveals nu exactly in the continuous design
    }
    d.z[i] = z;
    out.side.v_true[i] = v;

    const detail::ErrorPair e = errs.draw(rng, x_tilde);
    const double tau_T = d.X.row(i).dot(spec.truth.beta_T) +
                         z * spec.truth.alpha_T + v * spec.truth.lambda_T;
    const double tau_C = d.X.row(i).dot(spec.truth.beta_C) +
                         z * spec.truth.alpha_C + v * spec.truth.lambda_C;
    const double t_log = yj_inverse(th1, tau_T + e.e_T);
    const double c_log = yj_inverse(th2, tau_C + e.e_C);
    double a_log = std::numeric_limits<double>::infinity();
    if (spec.a_max) a_log = rng.uniform(0.0, *spec.a_max);
    out.side.t_log[i] = t_log;
    out.side.c_log[i] = c_log;
    out.side.a_log[i] = a_log;

    double y = t_log;
    int kind = 0;
    if (c_log < y) { y = c_log; kind = 1; }
    if (a_log < y) { y = a_log; kind = 2; }
    d.y[i] = y;
    d.delta[i] = kind == 0 ? 1 : 0;
    d.xi[i] = kind == 1 ? 1 : 0;
  }
  d.finalize();
  return out;
}

// Bisection on a_max so that the administrative share of events hits the
// target on a large calibration draw; the default kBaselineAmax was chosen
// from this curve (with the T/C shares inspected alongside).
inline double calibrate_a_max(DgpSpec spec, double target_admin = 0.20,
                              int n_cal = 200000) {
  spec.n = n_cal;
  spec.a_max.reset();
  const SimulatedData sim = generate(spec);
  // admin share for window a: mean_i P(U[0,a] < min log time_i)
  Eigen::VectorXd min_log(n_cal);
  for (int i = 0; i < n_cal; ++i)
    min_log[i] = std::min(sim.side.t_log[i], sim.side.c_log[i]);
  auto share = [&](double a) {
    double s = 0.0;
    for (int i = 0; i < n_cal; ++i)
      s += std::min(std::max(min_log[i], 0.0) / a, 1.0);
    return s / n_cal;
  };
  double lo = 1e-3, hi = 1e3;
  for (int it = 0; it < 120; ++it) {
    const double mid = std::sqrt(lo * hi);
    (share(mid) > target_admin ? lo : hi) = mid;
  }
  return std::sqrt(lo * hi);
}

// ---------------------------------------------------------------------------
// Replication metrics

struct MetricCell {
  double truth = 0.0, bias = 0.0, esd = 0.0, rmse = 0.0, cr = 0.0;
  int cr_n = 0;  // replications contributing to the coverage ratio
};

struct VariantReport {
  std::string variant;
  std::vector<std::string> params;
  std::vector<MetricCell> cells;
  int n_ok = 0, n_fail = 0, n_vcov_fail = 0;
};

struct ReplicationReport {
  std::vector<VariantReport> variants;
  int N = 0;
};

namespace detail {

inline VariantReport summarize_variant(
    const std::string& vname, const std::vector<std::string>& params,
    const Eigen::VectorXd& truth_values,
    const std::vector<Eigen::VectorXd>& estimates,
    const std::vector<Eigen::VectorXd>& lo,
    const std::vector<Eigen::VectorXd>& hi, int n_fail, int n_vcov_fail) {
  VariantReport rep;
  rep.variant = vname;
  rep.params = params;
  rep.n_ok = static_cast<int>(estimates.size());
  rep.n_fail = n_fail;
  rep.n_vcov_fail = n_vcov_fail;
  const int dim = static_cast<int>(params.size());
  rep.cells.resize(dim);
  const int N = rep.n_ok;
  for (int j = 0; j < dim; ++j) {
    MetricCell& cell = rep.cells[j];
    cell.truth = truth_values[j];
    if (N == 0) continue;
    KahanSum mean_acc;
    for (const auto& est : estimates) mean_acc.add(est[j]);
    const double mean = mean_acc.value() / N;
    cell.bias = mean - cell.truth;
    KahanSum var_acc, mse_acc;
    for (const auto& est : estimates) {
      var_acc.add((est[j] - mean) * (est[j] - mean));
      const double dev = est[j] - cell.truth;
      mse_acc.add(dev * dev);
    }
    cell.esd = N > 1 ? std::sqrt(var_acc.value() / (N - 1)) : 0.0;
    cell.rmse = std::sqrt(mse_acc.value() / N);
    int cover = 0, cn = 0;
    for (std::size_t r = 0; r < estimates.size(); ++r) {
      if (lo[r].size() == 0) continue;
      ++cn;
      if (lo[r][j] <= cell.truth && cell.truth <= hi[r][j]) ++cover;
    }
    cell.cr_n = cn;
    cell.cr = cn > 0 ? double(cover) / cn : std::nan("");
  }
  return rep;
}

}  // namespace detail

// N generate+fit cycles per estimator variant over a common stream of
// simulated datasets.  Slot-indexed accumulation keeps the report identical
// for any thread count.
inline ReplicationReport replicate(const DgpSpec& spec,
                                   const std::vector<FitConfig>& variants,
                                   int N, int threads = 1) {
  if (N < 2) throw std::invalid_argument("replicate: N must be >= 2");
  const FirstStageSpec fs = scenario_first_stage(spec.scenario);
  const std::size_t nv = variants.size();

  struct Slot {
    bool ok = false, has_ci = false;
    Eigen::VectorXd est, lo, hi;
  };
  std::vector<std::vector<Slot>> slots(nv, std::vector<Slot>(N));

  auto run_rep = [&](int r) {
    DgpSpec s = spec;
    s.stream = spec.stream + static_cast<std::uint64_t>(r);
    const SimulatedData sim = generate(s);
    for (std::size_t vi = 0; vi < nv; ++vi) {
      Slot& slot = slots[vi][r];
      try {
        const FitConfig& cfg = variants[vi];
        const FitResult fr =
            fit(sim.data, fs, cfg,
                cfg.variant == Variant::oracle ? &sim.side.v_true : nullptr);
        const ParamLayout layout(sim.data.p(), cfg);
        slot.est = layout.values(fr.eta_hat);
        slot.ok = true;
        if (fr.vcov_ok) {
          slot.lo = fr.ci_lower;
          slot.hi = fr.ci_upper;
          slot.has_ci = true;
        }
      } catch (const std::exception&) {
        slot.ok = false;
      }
    }
  };

  if (threads <= 1) {
    for (int r = 0; r < N; ++r) run_rep(r);
  } else {
    std::vector<std::thread> pool;
    std::atomic<int> next{0};
    for (int t = 0; t < threads; ++t)
      pool.emplace_back([&] {
        for (int r; (r = next.fetch_add(1)) < N;) run_rep(r);
      });
    for (auto& th : pool) th.join();
  }

  ReplicationReport rep;
  rep.N = N;
  for (std::size_t vi = 0; vi < nv; ++vi) {
    const FitConfig& cfg = variants[vi];
    const ParamLayout layout(static_cast<int>(spec.truth.beta_T.size()), cfg);
    const Eigen::VectorXd truth_values = layout.values(spec.truth);
    std::vector<Eigen::VectorXd> est, lo, hi;
    int n_fail = 0, n_vcov_fail = 0;
    for (int r = 0; r < N; ++r) {
      const Slot& slot = slots[vi][r];
      if (!slot.ok) {
        ++n_fail;
        continue;
      }
      est.push_back(slot.est);
      if (slot.has_ci) {
        lo.push_back(slot.lo);
        hi.push_back(slot.hi);
      } else {
        ++n_vcov_fail;
        lo.emplace_back();
        hi.emplace_back();
      }
    }
    rep.variants.push_back(detail::summarize_variant(
        variant_name(cfg.variant), layout.names(), truth_values, est, lo, hi,
        n_fail, n_vcov_fail));
  }
  return rep;
}

// ---------------------------------------------------------------------------
// CIF comparison metrics

struct CifMetrics {
  Eigen::VectorXd grid;    // time points
  Eigen::VectorXd rmse_t;  // pointwise RMSE over replications
  double global = 0.0;     // trapezoidal integral of RMSE(t), t in [1, t_max]
};

inline CifMetrics cif_metrics(const Eigen::VectorXd& grid,
                              const Eigen::VectorXd& expected,
                              const std::vector<Eigen::VectorXd>& estimated,
                              double t_max) {
  const int m = static_cast<int>(grid.size());
  if (expected.size() != m)
    throw std::invalid_argument("cif_metrics: grid/expected size mismatch");
  CifMetrics out;
  out.grid = grid;
  out.rmse_t.resize(m);
  const int N = static_cast<int>(estimated.size());
  for (int j = 0; j < m; ++j) {
    KahanSum acc;
    for (const auto& curve : estimated) {
      const double dev = curve[j] - expected[j];
      acc.add(dev * dev);
    }
    out.rmse_t[j] = N > 0 ? std::sqrt(acc.value() / N) : 0.0;
  }
  KahanSum integral;
  for (int j = 0; j + 1 < m; ++j) {
    const double a = grid[j], b = grid[j + 1];
    if (b <= 1.0 || a >= t_max) continue;
    const double lo_t = std::max(a, 1.0), hi_t = std::min(b, t_max);
    // linear interpolation of RMSE(t) on the clipped segment
    auto interp = [&](double t) {
      const double w = (t - a) / (b - a);
      return (1.0 - w) * out.rmse_t[j] + w * out.rmse_t[j + 1];
    };
    integral.add(0.5 * (interp(lo_t) + interp(hi_t)) * (hi_t - lo_t));
  }
  out.global = integral.value();
  return out;
}

}  // namespace cfsurv
