#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cfsurv/cli.hpp"

namespace {

void parse_theta_pair(const std::string& s, cfsurv::RunConfig& cfg) {
  double t1 = 0.0, t2 = 0.0;
  int used = 0;
  if (std::sscanf(s.c_str(), "%lf,%lf%n", &t1, &t2, &used) != 2 ||
      used != static_cast<int>(s.size()))
    throw std::invalid_argument("--theta-fixed expects two numbers, e.g. 1,0.5");
  cfg.theta_fixed = true;
  cfg.theta1 = t1;
  cfg.theta2 = t2;
}

std::map<std::string, double> parse_profile(const std::string& s) {
  std::map<std::string, double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto eq = item.find('=');
    if (eq == std::string::npos || eq == 0)
      throw std::invalid_argument("--profile expects name=value pairs: " + item);
    const std::string key = item.substr(0, eq);
    std::size_t used = 0;
    const std::string num = item.substr(eq + 1);
    const double value = std::stod(num, &used);
    if (used != num.size())
      throw std::invalid_argument("--profile: bad number in '" + item + "'");
    out[key] = value;
  }
  if (out.empty()) throw std::invalid_argument("--profile is empty");
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"control-function estimation of survival times under dependent "
               "and administrative censoring"};
  app.require_subcommand(1);

  cfsurv::RunConfig cfg;
  std::string variant = "two-step", link = "logit", theta, profile,
              format = "json";

  const auto add_columns = [&](CLI::App* c) {
    c->add_option("--y", cfg.col_y, "observation-time column (default y)");
    c->add_option("--delta", cfg.col_delta, "failure-indicator column");
    c->add_option("--xi", cfg.col_xi, "dependent-censoring indicator column");
    c->add_option("--z", cfg.col_z, "endogenous-regressor column");
    c->add_option("--cause", cfg.col_cause, "cause-label column (competing risks)");
    c->add_option("--covariates", cfg.col_covariates,
                  "exogenous covariate columns, comma separated")
        ->delimiter(',');
    c->add_option("--instruments", cfg.col_instruments,
                  "instrument columns, comma separated")
        ->delimiter(',');
    c->add_option("--oracle-v", cfg.col_oracle_v,
                  "column holding the true control values");
    c->add_flag("--already-log", cfg.already_log,
                "times are already on the log scale");
  };
  const auto add_model = [&](CLI::App* c) {
    c->add_option("--link", link,
                  "first stage: linear|logit|probit|one-sided-logit");
    c->add_option("--variant", variant,
                  "estimator: two-step|naive|independent|oracle");
    c->add_option("--theta-fixed", theta,
                  "fix the transform indices, e.g. --theta-fixed 1,0.5");
    c->add_option("--multistart", cfg.multistart, "number of optimizer starts");
    c->add_option("--max-iter", cfg.max_iter, "optimizer iteration cap");
  };

  CLI::App* c_fit = app.add_subcommand("fit", "fit the model to a CSV sample");
  c_fit->add_option("--input", cfg.input, "input CSV")->required();
  c_fit->add_option("--output", cfg.output, "artifact path (default: stdout)");
  c_fit->add_option("--format", format, "output format: json|csv");
  add_columns(c_fit);
  add_model(c_fit);

  CLI::App* c_gof = app.add_subcommand(
      "gof", "parametric-bootstrap goodness-of-fit test");
  c_gof->add_option("--input", cfg.input, "input CSV")->required();
  c_gof->add_option("--output", cfg.output, "JSON artifact path")->required();
  c_gof->add_option("--B", cfg.B, "bootstrap replicates (default 250)");
  c_gof->add_option("--seed", cfg.seed, "bootstrap seed");
  c_gof->add_option("--threads", cfg.threads, "worker threads");
  add_columns(c_gof);
  add_model(c_gof);

  CLI::App* c_sim =
      app.add_subcommand("simulate", "draw a synthetic sample to CSV");
  c_sim->add_option("--output", cfg.output, "output CSV path")->required();
  c_sim->add_option("--scenario", cfg.scenario,
                    "baseline|1-a|1-b|2-a|2-b|2-c|cmprsk-r3");
  c_sim->add_option("--n", cfg.n, "sample size (default 1000)");
  c_sim->add_option("--seed", cfg.seed, "generator seed");
  add_columns(c_sim);

  CLI::App* c_rep = app.add_subcommand(
      "replicate", "Monte-Carlo replication: bias / ESD / RMSE / coverage");
  c_rep->add_option("--output", cfg.output, "summary CSV path")->required();
  c_rep->add_option("--scenario", cfg.scenario,
                    "baseline|1-a|1-b|2-a|2-b|2-c");
  c_rep->add_option("--n", cfg.n, "sample size per replication");
  c_rep->add_option("--N", cfg.N, "number of replications (default 200)");
  c_rep->add_option("--seed", cfg.seed, "generator seed");
  c_rep->add_option("--threads", cfg.threads, "worker threads");
  c_rep->add_option("--variant", variant,
                    "two-step|naive|independent|oracle|all (default all)");
  c_rep->add_option("--theta-fixed", theta, "fix the transform indices");
  c_rep->add_option("--multistart", cfg.multistart, "optimizer starts per fit");
  c_rep->add_option("--max-iter", cfg.max_iter, "optimizer iteration cap");

  CLI::App* c_cif = app.add_subcommand(
      "cif", "model-based cumulative incidence curves (competing risks)");
  c_cif->add_option("--input", cfg.input, "input CSV with a cause column")
      ->required();
  c_cif->add_option("--output", cfg.output, "curve CSV path")->required();
  c_cif->add_option("--profile", profile,
                    "covariate profile, e.g. x1=0.3,w1=1,z=1")
      ->required();
  c_cif->add_option("--times", cfg.times, "evaluation times, comma separated")
      ->delimiter(',');
  c_cif->add_option("--r", cfg.cmprsk_r,
                    "number of latent times (default: max cause label)");
  c_cif->add_option("--k", cfg.cmprsk_k,
                    "competing causes among them (default: r)");
  add_columns(c_cif);
  add_model(c_cif);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (c_fit->parsed()) cfg.command = cfsurv::Command::fit;
    if (c_gof->parsed()) cfg.command = cfsurv::Command::gof;
    if (c_sim->parsed()) cfg.command = cfsurv::Command::simulate;
    if (c_rep->parsed()) {
      cfg.command = cfsurv::Command::replicate;
      if (c_rep->count("--variant") == 0) variant = "all";
    }
    if (c_cif->parsed()) cfg.command = cfsurv::Command::cif;

    if (variant == "all") {
      if (cfg.command != cfsurv::Command::replicate)
        throw std::invalid_argument("--variant all only makes sense for replicate");
      cfg.all_variants = true;
    } else {
      cfg.variant = cfsurv::parse_variant(variant);
    }
    cfg.link = cfsurv::parse_link(link);
    if (!theta.empty()) parse_theta_pair(theta, cfg);
    if (!profile.empty()) cfg.profile = parse_profile(profile);
    if (format == "json")
      cfg.format = cfsurv::OutFormat::json;
    else if (format == "csv")
      cfg.format = cfsurv::OutFormat::csv;
    else
      throw std::invalid_argument("unknown format: " + format);
  } catch (const std::exception& e) {
    std::cerr << "cfsurv: " << e.what() << "\n";
    return 2;
  }

  return cfsurv::run(cfg);
}
