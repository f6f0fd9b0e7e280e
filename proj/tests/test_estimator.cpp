#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>
#include <cmath>

#include "cfsurv/estimator.hpp"
#include "cfsurv/simkit.hpp"

using namespace cfsurv;

namespace {

FitConfig two_step_cfg() {
  FitConfig cfg;
  cfg.variant = Variant::two_step;
  return cfg;
}

}  // namespace

TEST_CASE("parameter layout round trip", "[estimator]") {
  FitConfig cfg = two_step_cfg();
  ParamLayout layout(2, cfg);
  REQUIRE(layout.dim() == 13);
  EtaParams e = baseline_truth();
  const Eigen::VectorXd u = layout.pack(e);
  const EtaParams back = layout.unpack(u, cfg);
  CHECK(back.beta_T.isApprox(e.beta_T, 1e-12));
  CHECK(back.alpha_T == Catch::Approx(e.alpha_T).margin(1e-12));
  CHECK(back.lambda_C == Catch::Approx(e.lambda_C).margin(1e-12));
  CHECK(back.sigma_T == Catch::Approx(e.sigma_T).margin(1e-12));
  CHECK(back.rho == Catch::Approx(e.rho).margin(1e-12));
  CHECK(back.theta1 == Catch::Approx(e.theta1).margin(1e-10));
  CHECK(back.theta2 == Catch::Approx(e.theta2).margin(1e-10));

  const auto names = layout.names();
  REQUIRE(names.size() == 13u);
  CHECK(names[0] == "beta_T0");
  CHECK(names[2] == "alpha_T");
  CHECK(names[3] == "lambda_T");
  CHECK(names[10] == "rho");
  CHECK(names[12] == "theta2");

  FitConfig naive = cfg;
  naive.variant = Variant::naive;
  CHECK(ParamLayout(2, naive).dim() == 11);
  FitConfig indep = cfg;
  indep.variant = Variant::independent;
  CHECK(ParamLayout(2, indep).dim() == 12);
  FitConfig fixed = cfg;
  fixed.theta_fixed = true;
  CHECK(ParamLayout(2, fixed).dim() == 11);
}

TEST_CASE("two-step fit on a small baseline sample", "[estimator]") {
  DgpSpec spec;
  spec.n = 800;
  spec.seed = 42;
  const SimulatedData sim = generate(spec);
  const FitResult fr = fit(sim.data, scenario_first_stage(spec.scenario),
                           two_step_cfg());
  REQUIRE(fr.converged);
  CHECK(std::isfinite(fr.loglik));
  CHECK(fr.eta_hat.sigma_T > 0.0);
  CHECK(fr.eta_hat.sigma_C > 0.0);
  CHECK(std::fabs(fr.eta_hat.rho) < 1.0);
  CHECK(fr.eta_hat.theta1 >= 0.0);
  CHECK(fr.eta_hat.theta1 <= 2.0);
  REQUIRE(fr.vcov_ok);
  REQUIRE(fr.se.size() == 13);
  for (int j = 0; j < fr.se.size(); ++j) {
    CHECK(fr.se[j] > 0.0);
    CHECK(fr.ci_lower[j] < fr.ci_upper[j]);
  }
  // sigma CIs positive, rho CI inside (-1, 1)
  CHECK(fr.param_names[8] == "sigma_T");
  CHECK(fr.ci_lower[8] > 0.0);
  CHECK(fr.ci_lower[9] > 0.0);
  CHECK(fr.param_names[10] == "rho");
  CHECK(fr.ci_lower[10] > -1.0);
  CHECK(fr.ci_upper[10] < 1.0);

  // vcov positive semi-definite up to round-off
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(fr.vcov);
  CHECK(es.eigenvalues().minCoeff() >= -1e-10 * fr.vcov.trace());

  // objective at the optimum dominates every start
  const ParamLayout layout(sim.data.p(), fr.cfg);
  for (const auto& u0 : fr.starts_u)
    CHECK(fr.loglik >=
          sample_loglik(layout.unpack(u0, fr.cfg), sim.data, fr.v_used) -
              1e-10);
}

TEST_CASE("oracle fit recovers the truth on a large sample", "[estimator][heavy]") {
  DgpSpec spec;
  spec.n = 100000;
  spec.seed = 7;
  const SimulatedData sim = generate(spec);
  FitConfig cfg;
  cfg.variant = Variant::oracle;
  const FitResult fr = fit(sim.data, scenario_first_stage(spec.scenario), cfg,
                           &sim.side.v_true);
  REQUIRE(fr.converged);
  REQUIRE(fr.vcov_ok);
  const ParamLayout layout(sim.data.p(), cfg);
  const Eigen::VectorXd est = layout.values(fr.eta_hat);
  const Eigen::VectorXd tru = layout.values(spec.truth);
  for (int j = 0; j < est.size(); ++j) {
    INFO("component " << fr.param_names[j] << " est " << est[j] << " truth "
                      << tru[j] << " se " << fr.se[j]);
    CHECK(std::fabs(est[j] - tru[j]) <= 4.0 * fr.se[j]);
  }
}

TEST_CASE("naive fit shows the endogeneity bias", "[estimator]") {
  DgpSpec spec;
  spec.n = 1000;
  spec.seed = 11;
  const SimulatedData sim = generate(spec);
  FitConfig cfg;
  cfg.variant = Variant::naive;
  const FitResult fr = fit(sim.data, scenario_first_stage(spec.scenario), cfg);
  REQUIRE(fr.converged);
  CHECK(fr.gamma_hat.size() == 0);
  CHECK(fr.eta_hat.lambda_T == 0.0);
  CHECK(fr.eta_hat.lambda_C == 0.0);
  // ignoring the control function drags alpha_T far below the truth (1.8)
  CHECK(fr.eta_hat.alpha_T < spec.truth.alpha_T - 1.0);
}

TEST_CASE("two-step rho is near zero when generating with rho zero",
          "[estimator][heavy]") {
  DgpSpec spec;
  spec.n = 10000;
  spec.seed = 123;
  spec.truth.rho = 0.0;
  const SimulatedData sim = generate(spec);
  const FitResult fr = fit(sim.data, scenario_first_stage(spec.scenario),
                           two_step_cfg());
  REQUIRE(fr.converged);
  CHECK(std::fabs(fr.eta_hat.rho) < 0.1);
}

TEST_CASE("sandwich reduces to the plain form when first-stage scores vanish",
          "[estimator]") {
  DgpSpec spec;
  spec.n = 500;
  spec.seed = 3;
  const SimulatedData sim = generate(spec);
  const FirstStageSpec fs_spec = scenario_first_stage(spec.scenario);
  const FitResult fr = fit(sim.data, fs_spec, two_step_cfg());
  REQUIRE(fr.converged);

  const ParamLayout layout(sim.data.p(), fr.cfg);
  FirstStageResult zeroed = fr.first_stage;
  zeroed.score_rows.setZero();
  const Eigen::MatrixXd with_zeroed = sandwich_vcov(
      sim.data, fr.v_used, &zeroed, fs_spec, fr.eta_hat, layout, fr.cfg);
  const Eigen::MatrixXd without = sandwich_vcov(
      sim.data, fr.v_used, nullptr, fs_spec, fr.eta_hat, layout, fr.cfg);
  CHECK((with_zeroed - without).cwiseAbs().maxCoeff() <=
        1e-10 * (1.0 + without.cwiseAbs().maxCoeff()));
}

TEST_CASE("confidence interval transforms", "[estimator]") {
  FitConfig cfg = two_step_cfg();
  ParamLayout layout(1, cfg);  // 11 free parameters
  EtaParams e;
  e.beta_T = Eigen::VectorXd::Zero(1);
  e.beta_C = Eigen::VectorXd::Zero(1);
  e.alpha_T = 0.0;
  e.lambda_T = 0.0;
  e.alpha_C = 0.0;
  e.lambda_C = 0.0;
  e.sigma_T = 2.0;
  e.sigma_C = 1.0;
  e.rho = 0.0;
  e.theta1 = 1.0;
  e.theta2 = 1.0;
  Eigen::MatrixXd vcov = Eigen::MatrixXd::Zero(11, 11);
  const int i_sT = 6, i_rho = 8, i_th1 = 9;
  vcov(i_sT, i_sT) = 0.2 * 0.2;     // SE(sigma_T) = 0.2
  vcov(i_rho, i_rho) = 0.3 * 0.3;   // SE(rho) = 0.3
  vcov(i_th1, i_th1) = 0.1 * 0.1;
  const IntervalTable t = confidence_intervals(e, vcov, layout);
  // log-scale interval: exp(ln 2 -+ 1.959964 * 0.1) ~ (1.644, 2.433)
  CHECK(t.lower[i_sT] ==
        Catch::Approx(2.0 * std::exp(-1.959964 * 0.1)).margin(1e-6));
  CHECK(t.upper[i_sT] ==
        Catch::Approx(2.0 * std::exp(1.959964 * 0.1)).margin(1e-6));
  CHECK(t.lower[i_sT] == Catch::Approx(1.644).margin(1e-3));
  CHECK(t.upper[i_sT] == Catch::Approx(2.433).margin(1e-3));
  // rho interval symmetric about 0, inside (-1, 1)
  CHECK(t.lower[i_rho] == Catch::Approx(-t.upper[i_rho]).margin(1e-12));
  CHECK(t.upper[i_rho] < 1.0);
  CHECK(t.upper[i_rho] == Catch::Approx(std::tanh(1.959964 * 0.3)).margin(1e-4));
  // theta tested against 1: estimate exactly 1 gives p-value 1
  CHECK(t.p_value[i_th1] == Catch::Approx(1.0).margin(1e-12));
}

TEST_CASE("argmax invariance under covariate rescaling", "[estimator][heavy]") {
  DgpSpec spec;
  spec.n = 600;
  spec.seed = 31;
  const SimulatedData sim = generate(spec);
  FitConfig cfg = two_step_cfg();
  cfg.grad_tol = 1e-8;
  const FirstStageSpec fs = scenario_first_stage(spec.scenario);
  const FitResult base = fit(sim.data, fs, cfg);

  Dataset scaled = sim.data;
  scaled.X.col(1) *= 10.0;
  scaled.W.col(1) *= 10.0;
  scaled.finalize();
  const FitResult resc = fit(scaled, fs, cfg);

  REQUIRE(base.converged);
  REQUIRE(resc.converged);
  const ParamLayout layout(2, cfg);
  Eigen::VectorXd vb = layout.values(base.eta_hat);
  Eigen::VectorXd vr = layout.values(resc.eta_hat);
  // undo the rescaling on the x-tilde slopes
  vr[1] *= 10.0;
  vr[5] *= 10.0;
  for (int j = 0; j < vb.size(); ++j) {
    INFO("component " << base.param_names[j]);
    CHECK(vb[j] == Catch::Approx(vr[j]).margin(1e-4 * (1.0 + std::fabs(vb[j]))));
  }
}

TEST_CASE("fit is deterministic", "[estimator]") {
  DgpSpec spec;
  spec.n = 400;
  spec.seed = 9;
  const SimulatedData sim = generate(spec);
  const FirstStageSpec fs = scenario_first_stage(spec.scenario);
  const FitResult a = fit(sim.data, fs, two_step_cfg());
  const FitResult b = fit(sim.data, fs, two_step_cfg());
  const ParamLayout layout(2, a.cfg);
  const Eigen::VectorXd va = layout.values(a.eta_hat);
  const Eigen::VectorXd vb = layout.values(b.eta_hat);
  CHECK((va.array() == vb.array()).all());
  CHECK(a.loglik == b.loglik);
  CHECK((a.vcov.array() == b.vcov.array()).all());
}

TEST_CASE("optimizer gradient agrees with Richardson extrapolation",
          "[estimator]") {
  DgpSpec spec;
  spec.n = 300;
  spec.seed = 17;
  const SimulatedData sim = generate(spec);
  const FirstStageResult fs =
      fit_first_stage(sim.data, scenario_first_stage(spec.scenario));
  FitConfig cfg = two_step_cfg();
  const ParamLayout layout(sim.data.p(), cfg);
  const Eigen::VectorXd u0 =
      layout.pack(detail::crude_init(sim.data, fs.v_hat, true).eta);
  auto f = [&](const Eigen::VectorXd& u) {
    return sample_loglik(layout.unpack(u, cfg), sim.data, fs.v_hat);
  };
  const Eigen::VectorXd g = fd_gradient(f, u0, cfg.fd_step);
  for (int j = 0; j < u0.size(); ++j) {
    const double h = cfg.fd_step * std::max(1.0, std::fabs(u0[j]));
    Eigen::VectorXd up = u0;
    up[j] = u0[j] + h;
    const double f1p = f(up);
    up[j] = u0[j] - h;
    const double f1m = f(up);
    up[j] = u0[j] + 2 * h;
    const double f2p = f(up);
    up[j] = u0[j] - 2 * h;
    const double f2m = f(up);
    const double rich = (8.0 * (f1p - f1m) - (f2p - f2m)) / (12.0 * h);
    if (std::fabs(rich) > 1e-4)
      CHECK(g[j] == Catch::Approx(rich).epsilon(1e-4));
  }
}

TEST_CASE("fixed-theta fit honours the requested transform", "[estimator]") {
  DgpSpec spec;
  spec.n = 800;
  spec.seed = 23;
  const SimulatedData sim = generate(spec);
  FitConfig cfg = two_step_cfg();
  cfg.theta_fixed = true;
  cfg.theta1_fixed = 1.0;
  cfg.theta2_fixed = 0.5;
  const FitResult fr = fit(sim.data, scenario_first_stage(spec.scenario), cfg);
  REQUIRE(fr.converged);
  CHECK(fr.eta_hat.theta1 == 1.0);
  CHECK(fr.eta_hat.theta2 == 0.5);
  for (const auto& nm : fr.param_names) {
    CHECK(nm != "theta1");
    CHECK(nm != "theta2");
  }
}

TEST_CASE("fit requires enough events of both kinds", "[estimator]") {
  DgpSpec spec;
  spec.n = 60;
  spec.seed = 5;
  SimulatedData sim = generate(spec);
  for (int i = 0; i < sim.data.n(); ++i) {
    if (sim.data.xi[i]) {
      sim.data.xi[i] = 0;
      sim.data.delta[i] = 1;  // wipe out dependent-censoring events
    }
  }
  CHECK_THROWS_AS(
      fit(sim.data, scenario_first_stage(spec.scenario), two_step_cfg()),
      std::invalid_argument);
}
