#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "cfsurv/cmprsk.hpp"
#include "cfsurv/csv.hpp"
#include "cfsurv/estimator.hpp"
#include "cfsurv/gof.hpp"
#include "cfsurv/simkit.hpp"

// Command layer behind the cfsurv binary.  Each subcommand is a thin wrapper
// over the library: ingest a CSV (or simulate one), call the corresponding
// library entry point, serialize the result.  Every artifact embeds the fully
// resolved configuration and the seed; the worker-thread count is deliberately
// left out so outputs are identical no matter how the work was scheduled.
//
// Exit codes: 0 success, 2 input/validation problem, 3 the optimizer failed
// to converge, 4 inference failed (vcov or bootstrap) with estimates intact.

namespace cfsurv {

enum class Command { fit, gof, simulate, replicate, cif };

inline const char* command_name(Command c) {
  switch (c) {
    case Command::fit: return "fit";
    case Command::gof: return "gof";
    case Command::simulate: return "simulate";
    case Command::replicate: return "replicate";
    case Command::cif: return "cif";
  }
  return "?";
}

inline const char* link_name(FirstStageKind k) {
  switch (k) {
    case FirstStageKind::continuous_linear: return "linear";
    case FirstStageKind::binary_logit: return "logit";
    case FirstStageKind::binary_probit: return "probit";
    case FirstStageKind::binary_one_sided_logit: return "one-sided-logit";
  }
  return "?";
}

inline FirstStageKind parse_link(const std::string& s) {
  if (s == "linear" || s == "continuous") return FirstStageKind::continuous_linear;
  if (s == "logit") return FirstStageKind::binary_logit;
  if (s == "probit") return FirstStageKind::binary_probit;
  if (s == "one-sided-logit") return FirstStageKind::binary_one_sided_logit;
  throw std::invalid_argument("unknown first-stage link: " + s);
}

inline Variant parse_variant(const std::string& s) {
  if (s == "two-step" || s == "two_step") return Variant::two_step;
  if (s == "naive") return Variant::naive;
  if (s == "independent") return Variant::independent;
  if (s == "oracle") return Variant::oracle;
  throw std::invalid_argument("unknown variant: " + s);
}

enum class OutFormat { json, csv };

struct RunConfig {
  Command command = Command::fit;
  std::string input;
  std::string output;  // empty: fit prints to stdout; other commands require it

  // column mapping
  std::string col_y = "y", col_delta = "delta", col_xi = "xi", col_z = "z",
              col_cause = "cause", col_oracle_v;
  std::vector<std::string> col_covariates{"x1"};
  std::vector<std::string> col_instruments{"w1"};

  FirstStageKind link = FirstStageKind::binary_logit;
  Variant variant = Variant::two_step;
  bool all_variants = false;  // replicate: compare the four estimators
  bool theta_fixed = false;
  double theta1 = 1.0, theta2 = 1.0;
  bool already_log = false;  // input/output times are on the log scale
  int multistart = 1;
  int max_iter = 500;

  int B = 250;     // bootstrap replicates (gof)
  int N = 200;     // Monte-Carlo replications (replicate)
  int n = 1000;    // sample size (simulate / replicate)
  std::uint64_t seed = 1;
  int threads = 1;
  std::string scenario = "baseline";

  int cmprsk_r = 0;  // 0: infer from the cause column
  int cmprsk_k = 0;  // 0: all latent times are competing risks
  std::vector<double> times;             // cif grid; empty: 40 points over the data
  std::map<std::string, double> profile; // cif covariate profile

  OutFormat format = OutFormat::json;
};

namespace detail {

inline std::vector<double> to_std(const Eigen::VectorXd& v) {
  return std::vector<double>(v.data(), v.data() + v.size());
}

inline nlohmann::ordered_json config_json(const RunConfig& c) {
  nlohmann::ordered_json j;
  j["command"] = command_name(c.command);
  j["input"] = c.input;
  j["output"] = c.output;
  j["columns"] = {{"y", c.col_y},
                  {"delta", c.col_delta},
                  {"xi", c.col_xi},
                  {"z", c.col_z},
                  {"cause", c.col_cause},
                  {"covariates", c.col_covariates},
                  {"instruments", c.col_instruments},
                  {"oracle_v", c.col_oracle_v}};
  j["link"] = link_name(c.link);
  j["variant"] = c.all_variants ? "all" : variant_name(c.variant);
  j["theta_fixed"] = c.theta_fixed;
  j["theta1"] = c.theta1;
  j["theta2"] = c.theta2;
  j["already_log"] = c.already_log;
  j["multistart"] = c.multistart;
  j["max_iter"] = c.max_iter;
  j["B"] = c.B;
  j["N"] = c.N;
  j["n"] = c.n;
  j["seed"] = c.seed;
  j["scenario"] = c.scenario;
  j["r"] = c.cmprsk_r;
  j["k"] = c.cmprsk_k;
  j["times"] = c.times;
  j["profile"] = c.profile;
  j["format"] = c.format == OutFormat::json ? "json" : "csv";
  return j;
}

inline FitConfig fit_config_of(const RunConfig& c) {
  FitConfig f;
  f.variant = c.variant;
  f.theta_fixed = c.theta_fixed;
  f.theta1_fixed = c.theta1;
  f.theta2_fixed = c.theta2;
  f.multistart = c.multistart;
  f.max_iter = c.max_iter;
  return f;
}

inline const Eigen::VectorXd& need_column(const CsvTable& t,
                                          const std::string& name,
                                          const std::string& origin) {
  if (!t.has(name))
    throw std::invalid_argument(origin + ": required column '" + name +
                                "' not found");
  return t.col(name);
}

// Raw observation times enter on the natural scale and are logged here;
// --already-log switches both readers and writers to the transform scale.
inline Eigen::VectorXd ingest_times(const Eigen::VectorXd& raw,
                                    bool already_log,
                                    const std::string& origin) {
  if (already_log) return raw;
  Eigen::VectorXd y(raw.size());
  for (int i = 0; i < raw.size(); ++i) {
    if (!(raw[i] > 0.0))
      throw std::invalid_argument(
          origin + ": observation times must be strictly positive "
                   "(pass --already-log for log-scale input)");
    y[i] = std::log(raw[i]);
  }
  return y;
}

inline std::vector<std::uint8_t> ingest_flag(const Eigen::VectorXd& col,
                                             const std::string& name,
                                             const std::string& origin) {
  std::vector<std::uint8_t> out(col.size());
  for (int i = 0; i < col.size(); ++i) {
    if (col[i] != 0.0 && col[i] != 1.0)
      throw std::invalid_argument(origin + ": column '" + name +
                                  "' must contain only 0 or 1");
    out[i] = col[i] == 1.0 ? 1 : 0;
  }
  return out;
}

struct DesignBlock {
  Eigen::MatrixXd X, W;
  Eigen::VectorXd z;
};

inline DesignBlock ingest_design(const CsvTable& t, const RunConfig& cfg) {
  const int n = t.rows();
  const int pc = static_cast<int>(cfg.col_covariates.size());
  const int pi = static_cast<int>(cfg.col_instruments.size());
  DesignBlock d;
  d.X.resize(n, 1 + pc);
  d.W.resize(n, 1 + pc + pi);
  d.X.col(0).setOnes();
  d.W.col(0).setOnes();
  for (int j = 0; j < pc; ++j) {
    const Eigen::VectorXd& c = need_column(t, cfg.col_covariates[j], cfg.input);
    d.X.col(1 + j) = c;
    d.W.col(1 + j) = c;
  }
  for (int j = 0; j < pi; ++j)
    d.W.col(1 + pc + j) = need_column(t, cfg.col_instruments[j], cfg.input);
  d.z = need_column(t, cfg.col_z, cfg.input);
  if (cfg.link != FirstStageKind::continuous_linear)
    for (int i = 0; i < n; ++i)
      if (d.z[i] != 0.0 && d.z[i] != 1.0)
        throw std::invalid_argument(cfg.input + ": column '" + cfg.col_z +
                                    "' must be binary under a " +
                                    std::string(link_name(cfg.link)) +
                                    " first stage");
  return d;
}

struct IngestedBivariate {
  Dataset data;
  Eigen::VectorXd oracle_v;
  bool has_oracle_v = false;
  int n_delta = 0, n_xi = 0, n_admin = 0;
};

inline IngestedBivariate ingest_bivariate(const RunConfig& cfg) {
  const CsvTable t = read_csv_file(cfg.input);
  if (t.rows() == 0)
    throw std::invalid_argument(cfg.input + ": no data rows");
  IngestedBivariate out;
  Dataset& d = out.data;
  d.y = ingest_times(need_column(t, cfg.col_y, cfg.input), cfg.already_log,
                     cfg.input);
  d.delta = ingest_flag(need_column(t, cfg.col_delta, cfg.input), cfg.col_delta,
                        cfg.input);
  d.xi = ingest_flag(need_column(t, cfg.col_xi, cfg.input), cfg.col_xi,
                     cfg.input);
  DesignBlock blk = ingest_design(t, cfg);
  d.X = std::move(blk.X);
  d.W = std::move(blk.W);
  d.z = std::move(blk.z);
  d.finalize();
  d.validate();
  for (int i = 0; i < d.n(); ++i) {
    out.n_delta += d.delta[i];
    out.n_xi += d.xi[i];
    out.n_admin += d.delta[i] == 0 && d.xi[i] == 0;
  }
  if (!cfg.col_oracle_v.empty()) {
    out.oracle_v = need_column(t, cfg.col_oracle_v, cfg.input);
    out.has_oracle_v = true;
  } else if (cfg.variant == Variant::oracle) {
    throw std::invalid_argument(
        "oracle variant needs --oracle-v naming the true control column");
  }
  return out;
}

struct IngestedCmprsk {
  CmprskData data;
  Eigen::VectorXd oracle_v;
  bool has_oracle_v = false;
};

inline IngestedCmprsk ingest_cmprsk(const RunConfig& cfg) {
  const CsvTable t = read_csv_file(cfg.input);
  if (t.rows() == 0)
    throw std::invalid_argument(cfg.input + ": no data rows");
  IngestedCmprsk out;
  CmprskData& d = out.data;
  d.y = ingest_times(need_column(t, cfg.col_y, cfg.input), cfg.already_log,
                     cfg.input);
  const Eigen::VectorXd& cause = need_column(t, cfg.col_cause, cfg.input);
  d.cause.resize(cause.size());
  int max_cause = 0;
  for (int i = 0; i < cause.size(); ++i) {
    const int c = static_cast<int>(cause[i]);
    if (cause[i] != c || c < 0)
      throw std::invalid_argument(cfg.input + ": column '" + cfg.col_cause +
                                  "' must contain nonnegative integers");
    d.cause[i] = c;
    max_cause = std::max(max_cause, c);
  }
  d.r = cfg.cmprsk_r > 0 ? cfg.cmprsk_r : max_cause;
  DesignBlock blk = ingest_design(t, cfg);
  d.X = std::move(blk.X);
  d.W = std::move(blk.W);
  d.z = std::move(blk.z);
  d.validate();
  if (!cfg.col_oracle_v.empty()) {
    out.oracle_v = need_column(t, cfg.col_oracle_v, cfg.input);
    out.has_oracle_v = true;
  } else if (cfg.variant == Variant::oracle) {
    throw std::invalid_argument(
        "oracle variant needs --oracle-v naming the true control column");
  }
  return out;
}

inline nlohmann::ordered_json fit_json(const FitResult& fr,
                                       const IngestedBivariate& ing) {
  nlohmann::ordered_json r;
  r["n"] = ing.data.n();
  r["n_events"] = ing.n_delta;
  r["n_dependent_censored"] = ing.n_xi;
  r["n_admin_censored"] = ing.n_admin;
  r["variant"] = variant_name(fr.cfg.variant);
  r["converged"] = fr.converged;
  r["n_iter"] = fr.n_iter;
  r["loglik_mean"] = fr.loglik;
  if (fr.gamma_hat.size() > 0)
    r["first_stage"] = {{"gamma_hat", to_std(fr.gamma_hat)}};
  const ParamLayout layout(ing.data.p(), fr.cfg);
  const Eigen::VectorXd vals = layout.values(fr.eta_hat);
  const std::vector<std::string> names = layout.names();
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  for (int j = 0; j < vals.size(); ++j) {
    nlohmann::ordered_json row;
    row["name"] = names[j];
    row["estimate"] = vals[j];
    if (fr.vcov_ok) {
      row["se"] = fr.se[j];
      row["ci_lower"] = fr.ci_lower[j];
      row["ci_upper"] = fr.ci_upper[j];
      row["p_value"] = fr.p_value[j];  // theta rows test H0: theta = 1
    }
    arr.push_back(row);
  }
  r["estimates"] = arr;
  r["vcov_ok"] = fr.vcov_ok;
  if (!fr.vcov_ok && !fr.vcov_message.empty())
    r["vcov_message"] = fr.vcov_message;
  return r;
}

inline void write_json_artifact(const std::string& path,
                                const nlohmann::ordered_json& doc) {
  const std::string text = doc.dump(2) + "\n";
  if (path.empty()) {
    std::cout << text;
    return;
  }
  std::ofstream out(path);
  if (!out) throw std::invalid_argument("cannot write output file: " + path);
  out << text;
  if (!out) throw std::invalid_argument("write failed: " + path);
}

inline std::string sibling_path(const std::string& base,
                                const std::string& suffix) {
  const std::string ext = ".json";
  if (base.size() > ext.size() &&
      base.compare(base.size() - ext.size(), ext.size(), ext) == 0)
    return base.substr(0, base.size() - ext.size()) + suffix;
  return base + suffix;
}

inline void require_output(const RunConfig& cfg) {
  if (cfg.output.empty())
    throw std::invalid_argument(std::string(command_name(cfg.command)) +
                                ": --output is required");
}

inline Eigen::VectorXd linspace(double lo, double hi, int m) {
  Eigen::VectorXd g(m);
  for (int i = 0; i < m; ++i)
    g[i] = lo + (hi - lo) * double(i) / double(m - 1);
  return g;
}

// ---------------------------------------------------------------------------

inline int run_fit(const RunConfig& cfg) {
  const IngestedBivariate ing = ingest_bivariate(cfg);
  const FitResult fr = fit(ing.data, FirstStageSpec{cfg.link},
                           fit_config_of(cfg),
                           ing.has_oracle_v ? &ing.oracle_v : nullptr);
  nlohmann::ordered_json doc;
  doc["config"] = config_json(cfg);
  doc["fit"] = fit_json(fr, ing);
  if (cfg.format == OutFormat::json) {
    write_json_artifact(cfg.output, doc);
  } else {
    std::ostringstream body;
    body << "# config: " << config_json(cfg).dump() << "\n";
    body << "name,estimate,se,ci_lower,ci_upper,p_value\n";
    const ParamLayout layout(ing.data.p(), fr.cfg);
    const Eigen::VectorXd vals = layout.values(fr.eta_hat);
    const std::vector<std::string> names = layout.names();
    for (int j = 0; j < vals.size(); ++j) {
      body << names[j] << "," << format_number(vals[j]);
      if (fr.vcov_ok)
        body << "," << format_number(fr.se[j]) << ","
             << format_number(fr.ci_lower[j]) << ","
             << format_number(fr.ci_upper[j]) << ","
             << format_number(fr.p_value[j]);
      else
        body << ",,,,";
      body << "\n";
    }
    if (cfg.output.empty()) {
      std::cout << body.str();
    } else {
      std::ofstream out(cfg.output);
      if (!out)
        throw std::invalid_argument("cannot write output file: " + cfg.output);
      out << body.str();
    }
  }
  if (!fr.vcov_ok) {
    std::cerr << "cfsurv fit: estimates written, but standard errors are "
                 "unavailable: "
              << fr.vcov_message << "\n";
    return 4;
  }
  return 0;
}

inline int run_gof(const RunConfig& cfg) {
  require_output(cfg);
  const IngestedBivariate ing = ingest_bivariate(cfg);
  FitConfig fc = fit_config_of(cfg);
  fc.compute_vcov = false;  // the test needs point estimates only
  const FitResult fr = fit(ing.data, FirstStageSpec{cfg.link}, fc,
                           ing.has_oracle_v ? &ing.oracle_v : nullptr);
  GofConfig gc;
  gc.B = cfg.B;
  gc.seed = cfg.seed;
  gc.threads = cfg.threads;
  const GofResult gr = bootstrap_gof(ing.data, fr, gc);

  nlohmann::ordered_json doc;
  doc["config"] = config_json(cfg);
  doc["fit"] = fit_json(fr, ing);
  nlohmann::ordered_json g;
  g["t_cm"] = gr.t_cm;
  g["p_value"] = gr.p_value;
  g["B"] = cfg.B;
  g["n_boot_ok"] = static_cast<int>(gr.boot_stats.size());
  g["n_boot_failed"] = gr.n_failed;
  nlohmann::ordered_json rej;
  for (const auto& [kappa, flag] : gr.reject_at) {
    char key[16];
    std::snprintf(key, sizeof(key), "%.2f", kappa);
    rej[key] = flag;
  }
  g["reject_at"] = rej;
  doc["gof"] = g;
  write_json_artifact(cfg.output, doc);

  const int m = static_cast<int>(gr.boot_stats.size());
  Eigen::VectorXd rank(m), stat(m);
  for (int i = 0; i < m; ++i) {
    rank[i] = i + 1;
    stat[i] = gr.boot_stats[i];
  }
  write_csv_file(sibling_path(cfg.output, "_boot.csv"), {"rank", "t_cm_boot"},
                 {rank, stat}, "config: " + config_json(cfg).dump());
  return 0;
}

inline int run_simulate(const RunConfig& cfg) {
  require_output(cfg);
  const Scenario sc = parse_scenario(cfg.scenario);
  const std::string comment = "config: " + config_json(cfg).dump();
  const auto time_out = [&](const Eigen::VectorXd& y_log) {
    return cfg.already_log ? y_log
                           : Eigen::VectorXd(y_log.array().exp().matrix());
  };
  const std::string v_name =
      cfg.col_oracle_v.empty() ? "v_true" : cfg.col_oracle_v;

  if (sc == Scenario::cmprsk_r3) {
    CmprskDgpSpec spec;
    spec.n = cfg.n;
    spec.seed = cfg.seed;
    const CmprskSimulated sim = generate_cmprsk(spec);
    Eigen::VectorXd cause(sim.data.n());
    for (int i = 0; i < sim.data.n(); ++i) cause[i] = sim.data.cause[i];
    write_csv_file(cfg.output,
                   {cfg.col_y, cfg.col_cause, cfg.col_z, "x1", "w1", v_name},
                   {time_out(sim.data.y), cause, sim.data.z, sim.data.X.col(1),
                    sim.data.W.col(2), sim.v_true},
                   comment);
    return 0;
  }

  DgpSpec spec;
  spec.scenario = sc;
  spec.n = cfg.n;
  spec.seed = cfg.seed;
  const SimulatedData sim = generate(spec);
  const Dataset& d = sim.data;
  Eigen::VectorXd delta(d.n()), xi(d.n());
  for (int i = 0; i < d.n(); ++i) {
    delta[i] = d.delta[i];
    xi[i] = d.xi[i];
  }
  std::vector<std::string> cols{cfg.col_y, cfg.col_delta, cfg.col_xi, cfg.col_z};
  std::vector<Eigen::VectorXd> vals{time_out(d.y), delta, xi, d.z};
  for (int j = 1; j < d.X.cols(); ++j) {
    const std::size_t idx = static_cast<std::size_t>(j - 1);
    cols.push_back(idx < cfg.col_covariates.size() ? cfg.col_covariates[idx]
                                                   : "x" + std::to_string(j));
    vals.push_back(d.X.col(j));
  }
  for (int j = d.X.cols(); j < d.W.cols(); ++j) {
    const std::size_t idx = static_cast<std::size_t>(j - d.X.cols());
    cols.push_back(idx < cfg.col_instruments.size()
                       ? cfg.col_instruments[idx]
                       : "w" + std::to_string(j - d.X.cols() + 1));
    vals.push_back(d.W.col(j));
  }
  cols.push_back(v_name);
  vals.push_back(sim.side.v_true);
  write_csv_file(cfg.output, cols, vals, comment);
  return 0;
}

inline int run_replicate(const RunConfig& cfg) {
  require_output(cfg);
  const Scenario sc = parse_scenario(cfg.scenario);
  if (sc == Scenario::cmprsk_r3)
    throw std::invalid_argument(
        "replicate covers the single-risk designs; the competing-risks "
        "comparison lives in the library API");
  DgpSpec spec;
  spec.scenario = sc;
  spec.n = cfg.n;
  spec.seed = cfg.seed;
  std::vector<FitConfig> fits;
  if (cfg.all_variants) {
    for (Variant v : {Variant::two_step, Variant::naive, Variant::independent,
                      Variant::oracle}) {
      FitConfig f = fit_config_of(cfg);
      f.variant = v;
      fits.push_back(f);
    }
  } else {
    fits.push_back(fit_config_of(cfg));
  }
  const ReplicationReport rep = replicate(spec, fits, cfg.N, cfg.threads);

  std::ofstream out(cfg.output);
  if (!out)
    throw std::invalid_argument("cannot write output file: " + cfg.output);
  out << "# config: " << config_json(cfg).dump() << "\n";
  out << "variant,param,truth,bias,esd,rmse,cr,cr_n\n";
  for (const VariantReport& vr : rep.variants)
    for (std::size_t j = 0; j < vr.params.size(); ++j) {
      const MetricCell& c = vr.cells[j];
      out << vr.variant << "," << vr.params[j] << ","
          << format_number(c.truth) << "," << format_number(c.bias) << ","
          << format_number(c.esd) << "," << format_number(c.rmse) << ","
          << format_number(c.cr) << "," << c.cr_n << "\n";
    }
  if (!out) throw std::invalid_argument("write failed: " + cfg.output);
  out.close();

  nlohmann::ordered_json doc;
  doc["config"] = config_json(cfg);
  nlohmann::ordered_json variants = nlohmann::ordered_json::array();
  for (const VariantReport& vr : rep.variants) {
    nlohmann::ordered_json v;
    v["variant"] = vr.variant;
    v["n_ok"] = vr.n_ok;
    v["n_fail"] = vr.n_fail;
    v["n_vcov_fail"] = vr.n_vcov_fail;
    nlohmann::ordered_json params = nlohmann::ordered_json::array();
    for (std::size_t j = 0; j < vr.params.size(); ++j) {
      const MetricCell& c = vr.cells[j];
      params.push_back({{"name", vr.params[j]},
                        {"truth", c.truth},
                        {"bias", c.bias},
                        {"esd", c.esd},
                        {"rmse", c.rmse},
                        {"cr", c.cr},
                        {"cr_n", c.cr_n}});
    }
    v["params"] = params;
    variants.push_back(v);
  }
  doc["report"] = {{"N", rep.N}, {"variants", variants}};
  const std::string csv_ext = ".csv";
  std::string json_path = cfg.output;
  if (json_path.size() > csv_ext.size() &&
      json_path.compare(json_path.size() - csv_ext.size(), csv_ext.size(),
                        csv_ext) == 0)
    json_path.resize(json_path.size() - csv_ext.size());
  write_json_artifact(json_path + ".json", doc);
  return 0;
}

inline int run_cif(const RunConfig& cfg) {
  require_output(cfg);
  const IngestedCmprsk ing = ingest_cmprsk(cfg);
  FitConfig fc = fit_config_of(cfg);
  fc.compute_vcov = false;  // curves need point estimates only
  const CmprskFitResult fr =
      fit_cmprsk(ing.data, FirstStageSpec{cfg.link}, fc,
                 ing.has_oracle_v ? &ing.oracle_v : nullptr, cfg.cmprsk_k);

  // covariate profile: one value per design column, plus z; v may be given
  // explicitly (key "v"), otherwise it comes from the fitted first stage.
  const int pc = static_cast<int>(cfg.col_covariates.size());
  const int pi = static_cast<int>(cfg.col_instruments.size());
  auto profile_value = [&](const std::string& key) {
    const auto it = cfg.profile.find(key);
    if (it == cfg.profile.end())
      throw std::invalid_argument("cif: --profile is missing '" + key + "'");
    return it->second;
  };
  Eigen::VectorXd x(1 + pc), w(1 + pc + pi);
  x[0] = 1.0;
  w[0] = 1.0;
  for (int j = 0; j < pc; ++j) {
    x[1 + j] = profile_value(cfg.col_covariates[j]);
    w[1 + j] = x[1 + j];
  }
  for (int j = 0; j < pi; ++j)
    w[1 + pc + j] = profile_value(cfg.col_instruments[j]);
  const double z = profile_value(cfg.col_z);
  double v = 0.0;
  if (cfg.profile.count("v")) {
    v = cfg.profile.at("v");
  } else if (cfg.variant == Variant::two_step ||
             cfg.variant == Variant::independent) {
    v = control_value(fr.fs_spec, fr.gamma_hat, w, z);
  } else if (cfg.variant == Variant::oracle) {
    throw std::invalid_argument(
        "cif: oracle variant needs an explicit v in --profile");
  }

  Eigen::VectorXd grid;
  if (!cfg.times.empty()) {
    grid = Eigen::Map<const Eigen::VectorXd>(cfg.times.data(),
                                             static_cast<int>(cfg.times.size()));
  } else {
    Eigen::VectorXd obs =
        cfg.already_log ? ing.data.y
                        : Eigen::VectorXd(ing.data.y.array().exp().matrix());
    grid = linspace(obs.minCoeff(), obs.maxCoeff(), 40);
  }
  const Eigen::VectorXd t_log = ingest_times(grid, cfg.already_log, "cif grid");

  const int k = fr.params.k;
  std::vector<std::string> cols{"t"};
  std::vector<Eigen::VectorXd> vals{grid};
  for (int j = 1; j <= k; ++j) {
    Eigen::VectorXd curve(grid.size());
    for (int i = 0; i < grid.size(); ++i)
      curve[i] = cif(fr.params, j, t_log[i], x, z, v);
    cols.push_back("cif_" + std::to_string(j));
    vals.push_back(curve);
  }
  write_csv_file(cfg.output, cols, vals,
                 "config: " + config_json(cfg).dump());
  return 0;
}

}  // namespace detail

inline int run(const RunConfig& cfg) {
  try {
    switch (cfg.command) {
      case Command::fit: return detail::run_fit(cfg);
      case Command::gof: return detail::run_gof(cfg);
      case Command::simulate: return detail::run_simulate(cfg);
      case Command::replicate: return detail::run_replicate(cfg);
      case Command::cif: return detail::run_cif(cfg);
    }
    return 2;
  } catch (const convergence_error& e) {
    std::cerr << "cfsurv: " << e.what() << "\n";
    return 3;
  } catch (const inference_error& e) {
    std::cerr << "cfsurv: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "cfsurv: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace cfsurv
