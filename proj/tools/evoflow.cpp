// evoflow command line: experiment runner, hypothesis checks, simulation,
// measure construction, single-check verification and oracle self-test.

#include <CLI11.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "evoflow/runner.hpp"

namespace fs = std::filesystem;
using namespace evoflow;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFail = 1;
constexpr int kExitConfig = 2;

int print_verdicts(const std::vector<VerdictReport>& vs) {
  Json arr = Json::array();
  bool failed = false;
  for (const auto& v : vs) {
    arr.push_back(v.to_json());
    failed = failed || v.failed();
  }
  std::cout << arr.dump(2) << '\n';
  return failed ? kExitFail : kExitOk;
}

Vector parse_point(const std::vector<double>& xs, const Model& model, double s) {
  if (xs.empty()) return default_point(model, s);
  return Eigen::Map<const Vector>(xs.data(), static_cast<Eigen::Index>(xs.size()));
}

// Numeric comparison of two fixture documents, tolerant to last-digit noise.
bool json_close(const Json& a, const Json& b, const std::string& path, std::string& where) {
  if (a.is_number() && b.is_number()) {
    const double x = a.get<double>(), y = b.get<double>();
    if (std::abs(x - y) <= 1e-12 * std::max({1.0, std::abs(x), std::abs(y)})) return true;
    where = path;
    return false;
  }
  if (a.type() != b.type() || a.size() != b.size()) {
    where = path;
    return false;
  }
  if (a.is_object()) {
    for (const auto& it : a.items()) {
      if (!b.contains(it.key())) {
        where = path + "." + it.key();
        return false;
      }
      if (!json_close(it.value(), b.at(it.key()), path + "." + it.key(), where)) return false;
    }
    return true;
  }
  if (a.is_array()) {
    for (std::size_t i = 0; i < a.size(); ++i)
      if (!json_close(a[i], b[i], path + "[" + std::to_string(i) + "]", where)) return false;
    return true;
  }
  if (a != b) where = path;
  return a == b;
}

std::vector<VerdictReport> oracle_invariants() {
  std::vector<VerdictReport> out;
  auto add = [&](const std::string& id, double lhs, double rhs, double tol) {
    VerdictReport v;
    v.check_id = id;
    v.paper_ref = "oracle self-consistency";
    v.lhs = lhs;
    v.rhs = rhs;
    v.slack = tol - std::abs(lhs - rhs);
    v.verdict = std::abs(lhs - rhs) <= tol ? Verdict::Pass : Verdict::Fail;
    out.push_back(v);
  };
  // Gauss-Hermite moments E Z^{2k} = (2k-1)!!.
  double worst = 0.0;
  for (int k = 1; k <= 10; ++k) {
    double dfact = 1.0;
    for (int j = 2 * k - 1; j > 0; j -= 2) dfact *= j;
    const double m = gaussian_expectation(0.0, 1.0, [k](double z) { return std::pow(z, 2 * k); });
    worst = std::max(worst, std::abs(m / dfact - 1.0));
  }
  add("gauss_hermite_even_moments", worst, 0.0, 1e-12);
  add("gauss_hermite_exponential",
      gaussian_expectation(0.0, 1.0, [](double z) { return std::exp(3.0 * z); }), std::exp(4.5),
      1e-10 * std::exp(4.5));
  for (const char* name : {"ou", "conformal"}) {
    const Model m = model_preset(name);
    const auto a = mehler_params(m, 0.0, 0.4), b = mehler_params(m, 0.4, 1.0);
    const auto direct = mehler_params(m, 0.0, 1.0);
    const auto comp = compose(a, b);
    add(std::string("compose_m_") + name, comp.m, direct.m, 1e-12);
    add(std::string("compose_sigma2_") + name, comp.sigma2, direct.sigma2, 1e-9 * direct.sigma2);
    // P*_{s,t} N(0, v_s) = N(0, v_t) in the chart.
    const auto ps = mehler_params(m, 0.0, 0.0), pt = mehler_params(m, 1.0, 1.0);
    add(std::string("invariance_variance_") + name, direct.m * direct.m * ps.v + direct.sigma2, pt.v,
        1e-9 * pt.v);
  }
  const Model ou = model_preset("ou");
  const auto p = mehler_params(ou, 0.0, 1.0);
  add("ou_second_moment", exact_mu_second_moment(p), 2.0, 1e-9);
  add("ou_exp_moment_quarter", exact_exp_moment(p, 0.25), 2.0, 1e-9);
  add("ou_m", p.m, std::exp(-1.0), 1e-15);
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"evoflow: time-inhomogeneous diffusions on evolving model spaces"};
  app.require_subcommand(1);
  unsigned threads = 0;
  app.add_option("--threads", threads, "Worker threads (0 = hardware concurrency)");

  // run
  auto* run = app.add_subcommand("run", "Run every experiment of a config file");
  std::string config_path, out_flag;
  long long seed_flag = -1;
  run->add_option("config", config_path, "Experiment config (JSON)")->required();
  run->add_option("--seed", seed_flag, "Override master_seed");
  run->add_option("--out", out_flag, "Output directory (default: config, then $EVOFLOW_OUT)");

  // check-hypotheses
  auto* hyp = app.add_subcommand("check-hypotheses", "Evaluate curvature, Lyapunov and non-explosion conditions");
  std::string model_name = "ou";
  int dim = 2;
  double t_eval = 0.0, epsilon = 1.0, ell = 1.0;
  std::string psi_preset;
  std::vector<double> psi_params;
  hyp->add_option("--model", model_name, "Model preset: ou, conformal, sphere, heat");
  hyp->add_option("--dim", dim, "Dimension");
  hyp->add_option("--t", t_eval, "Evaluation time");
  hyp->add_option("--epsilon", epsilon, "Radius of the ball around the origin");
  hyp->add_option("--ell", ell, "Constant ell in the curvature-drift condition");
  hyp->add_option("--psi", psi_preset, "Profile preset for the non-explosion test");
  hyp->add_option("--psi-params", psi_params, "Parameters of the psi preset");

  // simulate
  auto* sim = app.add_subcommand("simulate", "Simulate paths and write them as JSONL");
  double s_win = 0.0, t_win = 1.0;
  long long n_steps = 100, n_paths = 10;
  long long seed = 1;
  std::vector<double> x0;
  std::string out_dir;
  sim->add_option("--model", model_name, "Model preset");
  sim->add_option("--dim", dim, "Dimension");
  sim->add_option("--s", s_win, "Start time");
  sim->add_option("--t", t_win, "End time");
  sim->add_option("--steps", n_steps, "Steps per path");
  sim->add_option("--paths", n_paths, "Number of paths");
  sim->add_option("--x", x0, "Start point coordinates");
  sim->add_option("--seed", seed, "Seed");
  sim->add_option("--out", out_dir, "Output directory");

  // measures
  auto* meas = app.add_subcommand("measures", "Build an evolution system ensemble at time t");
  long long n_particles = 2000;
  meas->add_option("--model", model_name, "Model preset");
  meas->add_option("--dim", dim, "Dimension");
  meas->add_option("--t", t_win, "Time of the measure");
  meas->add_option("--n", n_particles, "Particles (>= 1000)");
  meas->add_option("--seed", seed, "Seed");
  meas->add_option("--out", out_dir, "Output directory");
  std::vector<double> lambdas{0.1, 0.25};
  meas->add_option("--lambda", lambdas, "Exponential moment parameters");

  // verify
  auto* ver = app.add_subcommand("verify", "Run one check on a preset model");
  std::string check_id;
  long long v_paths = -1, v_steps = -1;
  ver->add_option("--check", check_id, "Check id")->required();
  ver->add_option("--model", model_name, "Model preset");
  ver->add_option("--dim", dim, "Dimension");
  ver->add_option("--seed", seed, "Seed");
  ver->add_option("--paths", v_paths, "Paths per estimate");
  ver->add_option("--steps", v_steps, "Time steps");

  // oracle-selftest
  auto* ost = app.add_subcommand("oracle-selftest", "Regenerate oracle fixtures and check invariants");
  std::string fixtures = "tests/fixtures/oracle_fixtures.json";
  bool write_fixtures = false;
  ost->add_option("--fixtures", fixtures, "Committed fixture file");
  ost->add_flag("--write", write_fixtures, "Overwrite the fixture file instead of comparing");

  // report
  auto* rep = app.add_subcommand("report", "Summarize a report, or compare two report bodies");
  std::string report_path, compare_path;
  rep->add_option("report", report_path, "report.json")->required();
  rep->add_option("--compare", compare_path, "Second report; exit 0 iff bodies are identical");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }
  set_thread_count(threads);

  try {
    if (*run) {
      RunConfig cfg = io::load_config(config_path);
      if (seed_flag >= 0) cfg.master_seed = static_cast<std::uint64_t>(seed_flag);
      const auto res = run_config(cfg);
      const std::string dir = output_dir(out_flag, &cfg);
      write_outputs(res, cfg, dir);
      std::cout << res.report["summary"].dump() << '\n' << "wrote " << dir << '\n';
      return res.exit_code();
    }

    if (*hyp) {
      const Model model = model_preset(model_name, dim);
      H3Config h3;
      h3.epsilon = epsilon;
      h3.ell = Profile::constant(ell);
      std::vector<VerdictReport> vs{check_h3(model, h3, t_eval)};
      if (!psi_preset.empty()) {
        Experiment e;
        e.psi = Profile::from_preset(psi_preset, psi_params);
        vs.push_back(checks::nonexplosion(CheckContext{e, QuadratureSettings{}, 0}).verdicts.front());
      }
      return print_verdicts(vs);
    }

    if (*sim) {
      if (n_paths < 1) throw ConfigError("--paths", "must be at least 1");
      if (n_steps < 1) throw ConfigError("--steps", "must be at least 1");
      const Model model = model_preset(model_name, dim);
      const Vector x = parse_point(x0, model, s_win);
      const TimeGrid grid{s_win, t_win, static_cast<int>(n_steps)};
      const auto paths = simulate_paths(model, grid, SpacePoint{x}, static_cast<std::size_t>(n_paths),
                                        static_cast<std::uint64_t>(seed));
      const fs::path dir = output_dir(out_dir);
      fs::create_directories(dir);
      std::ofstream f(dir / "trajectories.jsonl");
      for (std::size_t i = 0; i < paths.size(); ++i) {
        f << Json{{"path", i}, {"seed", seed}, {"exited", paths[i].exited.has_value()}}.dump() << '\n';
        write_trajectory_jsonl(paths[i], f);
      }
      std::cout << "wrote " << (dir / "trajectories.jsonl").string() << '\n';
      return kExitOk;
    }

    if (*meas) {
      if (n_particles < 1000) throw ConfigError("--n", "must be at least 1000");
      const Model model = model_preset(model_name, dim);
      const auto ens = evolution_system(model, t_win, static_cast<std::size_t>(n_particles),
                                        static_cast<std::uint64_t>(seed));
      const fs::path dir = fs::path(output_dir(out_dir)) / "ensembles";
      fs::create_directories(dir);
      std::ofstream f(dir / (model_name + ".jsonl"));
      write_ensemble_jsonl(model, ens, f);
      Json j;
      j["t"] = ens.time;
      j["n"] = ens.n();
      j["provenance"] = ens.provenance.parameters;
      j["second_moment"] = moment(model, ens, [](double r) { return r * r; }).to_json();
      for (double l : lambdas) j["exp_moment"][std::to_string(l)] = exp_moment(model, ens, l).to_json();
      std::cout << j.dump(2) << '\n';
      return kExitOk;
    }

    if (*ver) {
      Json ej{{"name", model_name}, {"model", model_name}, {"checks", {check_id}}};
      Json grids = Json::object();
      if (v_paths >= 0) grids["n_paths"] = v_paths;
      if (v_steps >= 0) grids["n_steps"] = v_steps;
      if (!grids.empty()) ej["grids"] = grids;
      if (check_id == "nonexplosion") ej["psi"] = {{"preset", "constant"}, {"params", {1.0}}};
      Json cj{{"master_seed", seed}, {"experiments", {ej}}};
      RunConfig cfg = io::config_from_json(cj);
      if (dim != 2) {
        cfg.experiments[0].model = model_preset(model_name, dim);
        const auto& m = cfg.experiments[0].model;
        cfg.experiments[0].point = default_point(m, cfg.experiments[0].window.s);
        cfg.experiments[0].functions = default_functions(m, cfg.experiments[0].window.s);
      }
      const auto res = run_config(cfg);
      std::cout << res.report["experiments"][0]["verdicts"].dump(2) << '\n';
      return res.exit_code();
    }

    if (*ost) {
      const Json fx = oracle_fixtures();
      auto inv = oracle_invariants();
      if (write_fixtures) {
        fs::create_directories(fs::path(fixtures).parent_path());
        std::ofstream(fixtures) << fx.dump(2) << '\n';
        std::cout << "wrote " << fixtures << '\n';
      } else {
        std::ifstream in(fixtures);
        if (!in) throw ConfigError(fixtures, "cannot open fixture file");
        const Json committed = Json::parse(in);
        std::string where;
        VerdictReport v;
        v.check_id = "fixtures_match";
        v.paper_ref = "oracle determinism";
        v.inputs = {{"fixtures", fixtures}};
        v.verdict = json_close(fx, committed, "", where) ? Verdict::Pass : Verdict::Fail;
        if (!where.empty()) v.details = {{"first_difference", where}};
        inv.push_back(v);
      }
      return print_verdicts(inv);
    }

    if (*rep) {
      std::ifstream in(report_path);
      if (!in) throw ConfigError(report_path, "cannot open report");
      const Json a = Json::parse(in);
      if (!compare_path.empty()) {
        std::ifstream in2(compare_path);
        if (!in2) throw ConfigError(compare_path, "cannot open report");
        const Json b = Json::parse(in2);
        const bool same = report_body(a) == report_body(b);
        std::cout << (same ? "identical" : "different") << '\n';
        return same ? kExitOk : kExitFail;
      }
      bool failed = false;
      for (const auto& e : a.at("experiments"))
        for (const auto& v : e.at("verdicts")) {
          std::cout << e.at("name").get<std::string>() << '\t' << v.at("check_id").get<std::string>()
                    << '\t' << v.at("verdict").get<std::string>() << '\n';
          failed = failed || v.at("verdict") == "fail";
        }
      std::cout << a.at("summary").dump() << '\n';
      return failed ? kExitFail : kExitOk;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const Json::exception& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const DomainError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const PreconditionError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitConfig;
  }
  return kExitOk;
}
