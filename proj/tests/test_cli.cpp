#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>

#include <json.hpp>

#include "cfsurv/cli.hpp"
#include "cfsurv/simkit.hpp"

using namespace cfsurv;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::current_path() / "cli_scratch";
  fs::create_directories(dir);
  return dir / name;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const fs::path& p, const std::string& text) {
  std::ofstream out(p);
  out << text;
}

nlohmann::json load_json(const fs::path& p) {
  std::ifstream in(p);
  REQUIRE(in.good());
  return nlohmann::json::parse(in);
}

RunConfig command_cfg(Command cmd) {
  RunConfig c;
  c.command = cmd;
  return c;
}

const std::string tiny_csv =
    "y,delta,xi,z,x1,w1\n"
    "2.0,1,0,1,0.3,1\n"
    "0.7,0,1,0,-0.2,0\n"
    "1.4,0,0,1,0.5,1\n";

}  // namespace

TEST_CASE("csv reader parses numbers and rejects malformed input") {
  const fs::path p = scratch("reader.csv");
  spit(p,
       "# leading comment\n"
       "a, b ,c\n"
       "1,2.5,-3e2\n"
       "\n"
       "# interior comment\n"
       "4,0.125,6\n");
  const CsvTable t = read_csv_file(p.string());
  CHECK(t.cols() == 3);
  CHECK(t.rows() == 2);
  CHECK(t.columns[1] == "b");
  CHECK(t.col("a")[1] == 4.0);
  CHECK(t.col("b")[0] == 2.5);
  CHECK(t.col("c")[0] == -300.0);
  CHECK(t.has("c"));
  CHECK_FALSE(t.has("d"));
  CHECK_THROWS_AS(t.col("d"), std::invalid_argument);

  auto rejects = [&](const std::string& body) {
    spit(p, body);
    CHECK_THROWS_AS(read_csv_file(p.string()), std::invalid_argument);
  };
  rejects("");                          // no header
  rejects("a,b\n1\n");                  // ragged row
  rejects("a,b\n1,2\n3,oops\n");        // non-numeric
  rejects("a,b\n1,\n");                 // missing value
  rejects("a,a\n1,2\n");                // duplicate column
  rejects("a,b\n1,inf\n");              // non-finite
  CHECK_THROWS_AS(read_csv_file("/nonexistent/nowhere.csv"),
                  std::invalid_argument);
}

TEST_CASE("csv writer round-trips doubles bitwise") {
  const fs::path p = scratch("writer.csv");
  Eigen::VectorXd a(3), b(3);
  a << 1.0 / 3.0, -2.718281828459045, 1e-17;
  b << 0.0, 6.02214076e23, -0.1;
  write_csv_file(p.string(), {"a", "b"}, {a, b}, "config: {}");
  const CsvTable t = read_csv_file(p.string());
  REQUIRE(t.rows() == 3);
  for (int i = 0; i < 3; ++i) {
    CHECK(t.col("a")[i] == a[i]);
    CHECK(t.col("b")[i] == b[i]);
  }
  CHECK(slurp(p).rfind("# config: {}", 0) == 0);
}

TEST_CASE("simulate artifact is deterministic in the seed") {
  // the config comment embeds the output path, so reruns reuse one file
  RunConfig cfg = command_cfg(Command::simulate);
  cfg.n = 120;
  cfg.seed = 5;
  cfg.output = scratch("sim_det.csv").string();
  REQUIRE(run(cfg) == 0);
  const std::string first = slurp(cfg.output);

  REQUIRE(run(cfg) == 0);
  CHECK(slurp(cfg.output) == first);

  cfg.seed = 6;
  REQUIRE(run(cfg) == 0);
  CHECK(slurp(cfg.output) != first);

  // raw-scale output exponentiates the log times but leaves the rest alone
  const CsvTable raw = read_csv_file(cfg.output);
  for (int i = 0; i < raw.rows(); ++i) CHECK(raw.col("y")[i] > 0.0);
}

TEST_CASE("fit on a simulated csv reproduces the library fit exactly") {
  RunConfig sim_cfg = command_cfg(Command::simulate);
  sim_cfg.n = 400;
  sim_cfg.seed = 11;
  sim_cfg.already_log = true;  // keep the times bitwise identical
  sim_cfg.output = scratch("wrap_sim.csv").string();
  REQUIRE(run(sim_cfg) == 0);

  RunConfig fit_cfg = command_cfg(Command::fit);
  fit_cfg.input = sim_cfg.output;
  fit_cfg.already_log = true;
  fit_cfg.output = scratch("wrap_fit.json").string();
  REQUIRE(run(fit_cfg) == 0);

  DgpSpec spec;
  spec.n = 400;
  spec.seed = 11;
  const SimulatedData sim = generate(spec);
  const FitResult fr = fit(sim.data, FirstStageSpec{}, FitConfig{});
  REQUIRE(fr.converged);
  REQUIRE(fr.vcov_ok);
  const ParamLayout layout(sim.data.p(), fr.cfg);
  const Eigen::VectorXd vals = layout.values(fr.eta_hat);
  const std::vector<std::string> names = layout.names();

  const nlohmann::json doc = load_json(fit_cfg.output);
  const auto& est = doc["fit"]["estimates"];
  REQUIRE(static_cast<int>(est.size()) == vals.size());
  for (int j = 0; j < vals.size(); ++j) {
    CHECK(est[j]["name"].get<std::string>() == names[j]);
    CHECK(est[j]["estimate"].get<double>() == vals[j]);
    CHECK(est[j]["se"].get<double>() == fr.se[j]);
    CHECK(est[j]["ci_lower"].get<double>() == fr.ci_lower[j]);
  }
  CHECK(doc["fit"]["loglik_mean"].get<double>() == fr.loglik);
  CHECK(doc["fit"]["converged"].get<bool>());
  const auto& g = doc["fit"]["first_stage"]["gamma_hat"];
  REQUIRE(static_cast<int>(g.size()) == fr.gamma_hat.size());
  for (int j = 0; j < fr.gamma_hat.size(); ++j)
    CHECK(g[j].get<double>() == fr.gamma_hat[j]);

  // the artifact records how it was produced, minus scheduling detail
  CHECK(doc["config"]["seed"].get<std::uint64_t>() == 1);
  CHECK(doc["config"]["variant"].get<std::string>() == "two-step");
  CHECK(doc["config"]["already_log"].get<bool>());
  CHECK_FALSE(doc["config"].contains("threads"));

  for (int j = 0; j < vals.size(); ++j) {
    if (names[j] == "alpha_T") CHECK(est[j]["p_value"].get<double>() < 0.05);
  }

  // csv rendering of the same fit carries identical point estimates
  RunConfig csv_cfg = fit_cfg;
  csv_cfg.format = OutFormat::csv;
  csv_cfg.output = scratch("wrap_fit.csv").string();
  REQUIRE(run(csv_cfg) == 0);
  const std::string table = slurp(csv_cfg.output);
  CHECK(table.find("name,estimate,se,ci_lower,ci_upper,p_value") !=
        std::string::npos);
  CHECK(table.find("alpha_T," + format_number(fr.eta_hat.alpha_T)) !=
        std::string::npos);
}

TEST_CASE("input problems exit with code 2") {
  RunConfig cfg = command_cfg(Command::fit);
  cfg.input = "/nonexistent/missing.csv";
  CHECK(run(cfg) == 2);

  const fs::path p = scratch("bad.csv");
  cfg.input = p.string();

  spit(p, tiny_csv);
  cfg.col_delta = "event";  // no such column
  CHECK(run(cfg) == 2);
  cfg.col_delta = "delta";
  CHECK(run(cfg) == 2);  // valid columns but far too few events

  spit(p, "y,delta,xi,z,x1,w1\n-2.0,1,0,1,0.3,1\n");
  CHECK(run(cfg) == 2);  // negative raw time

  spit(p, "y,delta,xi,z,x1,w1\n2.0,2,0,1,0.3,1\n");
  CHECK(run(cfg) == 2);  // delta outside {0,1}

  spit(p, "y,delta,xi,z,x1,w1\n2.0,1,1,1,0.3,1\n");
  CHECK(run(cfg) == 2);  // delta and xi both set

  spit(p, "y,delta,xi,z,x1,w1\n2.0,1,0,0.4,0.3,1\n");
  CHECK(run(cfg) == 2);  // fractional z under a logit first stage

  spit(p, "y,delta,xi,z,x1,w1\n");
  CHECK(run(cfg) == 2);  // header only

  RunConfig gof_cfg = command_cfg(Command::gof);
  gof_cfg.input = p.string();
  gof_cfg.output = "";  // gof insists on an artifact path
  CHECK(run(gof_cfg) == 2);

  RunConfig cif_cfg = command_cfg(Command::cif);
  spit(p, "y,cause,z,x1,w1\n2.0,1.5,1,0.3,1\n");
  cif_cfg.input = p.string();
  cif_cfg.output = scratch("cif_bad.csv").string();
  cif_cfg.profile = {{"x1", 0.0}, {"w1", 1.0}, {"z", 1.0}};
  CHECK(run(cif_cfg) == 2);  // fractional cause label

  RunConfig rep_cfg = command_cfg(Command::replicate);
  rep_cfg.scenario = "cmprsk-r3";
  rep_cfg.output = scratch("rep_bad.csv").string();
  CHECK(run(rep_cfg) == 2);  // replication table covers the bivariate designs
}

TEST_CASE("optimizer starvation exits with code 3") {
  RunConfig sim_cfg = command_cfg(Command::simulate);
  sim_cfg.n = 150;
  sim_cfg.seed = 21;
  sim_cfg.output = scratch("conv_sim.csv").string();
  REQUIRE(run(sim_cfg) == 0);

  RunConfig fit_cfg = command_cfg(Command::fit);
  fit_cfg.input = sim_cfg.output;
  fit_cfg.max_iter = 1;  // cannot possibly reach the gradient tolerance
  fit_cfg.output = scratch("conv_fit.json").string();
  CHECK(run(fit_cfg) == 3);
}

TEST_CASE("degenerate inference exits with code 4 but keeps the estimates") {
  RunConfig sim_cfg = command_cfg(Command::simulate);
  sim_cfg.n = 150;
  sim_cfg.seed = 23;
  sim_cfg.output = scratch("flat_sim.csv").string();
  REQUIRE(run(sim_cfg) == 0);

  // an identically-zero oracle control column removes both lambdas from the
  // likelihood, so the Hessian has two exactly null directions
  const CsvTable t = read_csv_file(sim_cfg.output);
  std::vector<std::string> cols = t.columns;
  std::vector<Eigen::VectorXd> vals = t.data;
  cols.push_back("v_const");
  vals.push_back(Eigen::VectorXd::Zero(t.rows()));
  const fs::path flat = scratch("flat_aug.csv");
  write_csv_file(flat.string(), cols, vals);

  RunConfig fit_cfg = command_cfg(Command::fit);
  fit_cfg.input = flat.string();
  fit_cfg.variant = Variant::oracle;
  fit_cfg.col_oracle_v = "v_const";
  fit_cfg.output = scratch("flat_fit.json").string();
  CHECK(run(fit_cfg) == 4);

  const nlohmann::json doc = load_json(fit_cfg.output);
  CHECK_FALSE(doc["fit"]["vcov_ok"].get<bool>());
  CHECK(doc["fit"]["converged"].get<bool>());
  CHECK(doc["fit"]["estimates"].size() > 0);  // artifact written regardless
}

TEST_CASE("gof artifacts are identical across thread counts", "[heavy]") {
  RunConfig sim_cfg = command_cfg(Command::simulate);
  sim_cfg.n = 200;
  sim_cfg.seed = 5;
  sim_cfg.already_log = true;
  sim_cfg.output = scratch("gof_sim.csv").string();
  REQUIRE(run(sim_cfg) == 0);

  RunConfig gof_cfg = command_cfg(Command::gof);
  gof_cfg.input = sim_cfg.output;
  gof_cfg.already_log = true;
  gof_cfg.B = 100;
  gof_cfg.seed = 17;
  gof_cfg.output = scratch("gof_out.json").string();
  REQUIRE(run(gof_cfg) == 0);
  const std::string doc_a = slurp(gof_cfg.output);
  const std::string boot_a = slurp(scratch("gof_out_boot.csv"));

  gof_cfg.threads = 3;  // only the worker count changes; bytes must not
  REQUIRE(run(gof_cfg) == 0);
  CHECK(slurp(gof_cfg.output) == doc_a);
  CHECK(slurp(scratch("gof_out_boot.csv")) == boot_a);

  const nlohmann::json doc = nlohmann::json::parse(doc_a);
  CHECK(doc["gof"]["t_cm"].get<double>() >= 0.0);
  CHECK(doc["gof"]["p_value"].get<double>() > 0.0);
  CHECK(doc["gof"]["n_boot_ok"].get<int>() +
            doc["gof"]["n_boot_failed"].get<int>() ==
        100);
  CHECK(doc["gof"]["reject_at"].contains("0.05"));
  const CsvTable boot = read_csv_file(scratch("gof_out_boot.csv").string());
  CHECK(boot.rows() == doc["gof"]["n_boot_ok"].get<int>());
  CHECK(boot.col("t_cm_boot")[0] >= 0.0);
}

TEST_CASE("replicate writes coherent summary tables", "[heavy]") {
  RunConfig cfg = command_cfg(Command::replicate);
  cfg.scenario = "baseline";
  cfg.n = 250;
  cfg.N = 3;
  cfg.seed = 2;
  cfg.variant = Variant::two_step;
  cfg.output = scratch("rep.csv").string();
  REQUIRE(run(cfg) == 0);

  const nlohmann::json doc = load_json(scratch("rep.json"));
  REQUIRE(doc["report"]["variants"].size() == 1);
  const auto& vr = doc["report"]["variants"][0];
  CHECK(vr["variant"].get<std::string>() == "two-step");
  CHECK(vr["n_ok"].get<int>() + vr["n_fail"].get<int>() == 3);
  CHECK(vr["params"].size() >= 13);  // full parameter vector reported

  const std::string table = slurp(scratch("rep.csv"));
  CHECK(table.find("variant,param,truth,bias,esd,rmse,cr,cr_n") !=
        std::string::npos);
  CHECK(table.find("two-step,alpha_T,1.8,") != std::string::npos);
  for (const auto& cell : vr["params"]) {
    CHECK(std::isfinite(cell["bias"].get<double>()));
    const double cr = cell["cr"].get<double>();
    CHECK(cr >= 0.0);
    CHECK(cr <= 1.0);
  }
}

TEST_CASE("cif subcommand produces monotone curves", "[heavy]") {
  RunConfig sim_cfg = command_cfg(Command::simulate);
  sim_cfg.scenario = "cmprsk-r3";
  sim_cfg.n = 600;
  sim_cfg.seed = 3;
  sim_cfg.output = scratch("cif_sim.csv").string();
  REQUIRE(run(sim_cfg) == 0);
  const CsvTable sim = read_csv_file(sim_cfg.output);
  CHECK(sim.has("cause"));
  CHECK(sim.col("cause").maxCoeff() == 3.0);

  RunConfig cif_cfg = command_cfg(Command::cif);
  cif_cfg.input = sim_cfg.output;
  cif_cfg.cmprsk_k = 2;  // cause 3 acts as dependent censoring
  cif_cfg.profile = {{"x1", 0.0}, {"w1", 1.0}, {"z", 1.0}};
  cif_cfg.output = scratch("cif_out.csv").string();
  REQUIRE(run(cif_cfg) == 0);

  const CsvTable out = read_csv_file(cif_cfg.output);
  REQUIRE(out.rows() == 40);
  REQUIRE(out.has("cif_1"));
  REQUIRE(out.has("cif_2"));
  CHECK_FALSE(out.has("cif_3"));
  double prev1 = -1.0, prev2 = -1.0;
  for (int i = 0; i < out.rows(); ++i) {
    const double c1 = out.col("cif_1")[i];
    const double c2 = out.col("cif_2")[i];
    CHECK(c1 >= prev1);
    CHECK(c2 >= prev2);
    CHECK(c1 + c2 <= 1.0 + 1e-8);
    prev1 = c1;
    prev2 = c2;
  }
  // at this profile cause 2 is a long shot (its median log time sits far
  // beyond the censoring time's), so only require a nonvanishing curve
  CHECK(out.col("cif_1")[39] > 0.05);
  CHECK(out.col("cif_2")[39] > 1e-3);
  CHECK(slurp(cif_cfg.output).rfind("# config:", 0) == 0);
}

#ifdef CFSURV_CLI_BIN
TEST_CASE("installed binary wires flags through to the library") {
  const std::string bin = CFSURV_CLI_BIN;
  const std::string dir = scratch("anchor").parent_path().string();
  auto shell = [&](const std::string& args) {
    const int status = std::system((bin + " " + args + " >/dev/null 2>&1").c_str());
    REQUIRE(status != -1);
    return WEXITSTATUS(status);
  };
  CHECK(shell("--help") == 0);
  CHECK(shell("definitely-not-a-command") == 2);
  CHECK(shell("fit") == 2);  // missing required --input
  CHECK(shell("fit --input /nonexistent/x.csv") == 2);

  const std::string sim = dir + "/bin_sim.csv";
  CHECK(shell("simulate --scenario baseline --n 150 --seed 3 --output " + sim) == 0);
  CHECK(fs::exists(sim));
  CHECK(shell("fit --input " + sim + " --output " + dir + "/bin_fit.json") == 0);
  CHECK(fs::exists(dir + "/bin_fit.json"));
  CHECK(shell("fit --input " + sim + " --theta-fixed oops") == 2);
  CHECK(shell("fit --input " + sim + " --variant all") == 2);
  CHECK(shell("fit --input " + sim + " --max-iter 1") == 3);
}
#endif
