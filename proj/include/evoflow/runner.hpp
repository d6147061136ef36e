#pragma once

// Declarative experiment runner: JSON config -> checks -> report.json,
// verdicts.csv, plotdata/*.csv and ensembles/*.jsonl.

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "coefficients.hpp"
#include "diffusion.hpp"
#include "errors.hpp"
#include "geometry.hpp"
#include "inequalities.hpp"
#include "measures.hpp"
#include "model_io.hpp"
#include "oracle.hpp"
#include "report.hpp"
#include "rng.hpp"
#include "semigroup.hpp"
#include "stats.hpp"
#include "test_functions.hpp"

namespace evoflow {

inline constexpr const char* kVersion = "1.0.0";

// ---------------------------------------------------------------------------
// Config

struct Window {
  double s = 0.0;
  double t = 1.0;
};

struct Grids {
  int n_steps = 100;
  std::size_t n_paths = 10000;
  std::size_t particles = 2000;
  std::size_t pairs = 20;
  std::vector<double> lambda_grid{0.1, 0.25, 0.4};
  std::vector<double> s_grid;
  std::vector<double> r_grid{0.5, 1.0, 2.0, 4.0};
  std::vector<double> p_grid{1.5, 2.0, 3.0, 4.0};
};

struct Experiment {
  std::string name;
  Model model = Model::ornstein_uhlenbeck(2, 1.0);
  Window window;
  std::vector<Window> windows;  // extra windows for the log-Sobolev matrix
  Vector point;
  Grids grids;
  H3Config h3;
  std::optional<Profile> psi;
  GammaSpec gamma = GammaSpec::linear(1.0);
  std::vector<TestFunction> functions;
  std::vector<std::string> checks;
};

struct RunConfig {
  std::uint64_t master_seed = 0;
  QuadratureSettings quad;
  std::string output;
  std::vector<Experiment> experiments;
  Json raw;
};

inline const std::vector<std::string>& known_checks() {
  static const std::vector<std::string> ids{
      "h3",         "nonexplosion", "lyapunov_gamma", "semigroup",   "bismut",
      "q_bound",    "coupling",     "cesaro",         "invariance",  "convergence",
      "lsi",        "harnack",      "gradient_bound", "hyper",       "super_lsi",
      "supercontractive", "ultrabounded"};
  return ids;
}

/// Named models: ou (lambda = 1), conformal (c = e^{-t}), sphere (collapse at 0), heat.
inline Model model_preset(const std::string& name, int dim = 2) {
  if (name == "ou") return Model::ornstein_uhlenbeck(dim, 1.0);
  if (name == "conformal") return Model::conformal_flat(dim, Profile::exponential(-1.0));
  if (name == "sphere") return Model::shrinking_sphere(dim, 0.0);
  if (name == "heat") return Model::static_flat(dim);
  throw DomainError("unknown model preset '" + name + "'");
}

inline Window preset_window(const Model& model) {
  if (model.sphere()) return {-2.0, -1.0};
  return {0.0, 1.0};
}

/// A point at geodesic distance 0.5 (in units of the radius) from the pole on
/// the sphere; (1, 0, ...) in the chart otherwise.
inline Vector default_point(const Model& model, double s) {
  if (const SphereModel* sp = model.sphere()) {
    const double r = sp->radius(s);
    Vector x = Vector::Zero(sp->ambient_dim());
    x[sp->ambient_dim() - 1] = r * std::cos(0.5);
    x[0] = r * std::sin(0.5);
    return x;
  }
  Vector x = Vector::Zero(model.dim());
  x[0] = 1.0;
  return x;
}

inline std::vector<TestFunction> default_functions(const Model& model, double s) {
  const int n = model.ambient_dim();
  Vector c = Vector::Zero(n);
  if (model.sphere()) {
    c = default_point(model, s);
  } else {
    c[0] = 0.5;
    if (n > 1) c[1] = -0.25;
  }
  const double scale = model.sphere() ? model.sphere()->radius(s) : 1.0;
  return {TestFunction::coordinate(0), TestFunction::gaussian_bump(c, scale),
          TestFunction::lip_cap(0.0, 1.0, 2.0 * scale)};
}

namespace io {

inline std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

inline Vector vector_from_json(const Json& j, const std::string& path) {
  const auto v = numbers(j, path);
  return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

inline TestFunction function_from_json(const Json& j, const std::string& path) {
  require_object(j, path);
  const std::string kind = string(member(j, path, "kind"), join(path, "kind"));
  try {
    if (kind == "constant") {
      allow_keys(j, path, {"kind", "value"});
      return TestFunction::constant(number(member(j, path, "value"), join(path, "value")));
    }
    if (kind == "coordinate") {
      allow_keys(j, path, {"kind", "axis"});
      return TestFunction::coordinate(static_cast<int>(integer_or(j, path, "axis", 0)));
    }
    if (kind == "norm2") {
      allow_keys(j, path, {"kind"});
      return TestFunction::norm2();
    }
    if (kind == "gaussian_bump") {
      allow_keys(j, path, {"kind", "center", "width"});
      return TestFunction::gaussian_bump(
          vector_from_json(member(j, path, "center"), join(path, "center")),
          number_or(j, path, "width", 1.0));
    }
    if (kind == "lip_cap") {
      allow_keys(j, path, {"kind", "center", "slope", "cap", "axis"});
      return TestFunction::lip_cap(number_or(j, path, "center", 0.0),
                                   number_or(j, path, "slope", 1.0),
                                   number_or(j, path, "cap", 1.0),
                                   static_cast<int>(integer_or(j, path, "axis", 0)));
    }
    if (kind == "exp_radial") {
      allow_keys(j, path, {"kind", "lambda"});
      return TestFunction::exp_radial(number(member(j, path, "lambda"), join(path, "lambda")));
    }
    if (kind == "exp_coordinate") {
      allow_keys(j, path, {"kind", "axis", "rate"});
      return TestFunction::exp_coordinate(static_cast<int>(integer_or(j, path, "axis", 0)),
                                          number(member(j, path, "rate"), join(path, "rate")));
    }
  } catch (const DomainError& e) {
    throw ConfigError(path, e.what());
  }
  throw ConfigError(join(path, "kind"), "unknown function kind '" + kind + "'");
}

inline Window window_from_json(const Json& j, const std::string& path) {
  allow_keys(j, path, {"s", "t"});
  Window w{number(member(j, path, "s"), join(path, "s")),
           number(member(j, path, "t"), join(path, "t"))};
  if (!(w.s < w.t)) throw ConfigError(path, "window requires s < t");
  return w;
}

inline std::size_t count_or(const Json& j, const std::string& path, const char* key,
                            std::size_t dflt, std::size_t min = 1) {
  const long long v = integer_or(j, path, key, static_cast<long long>(dflt));
  if (v < static_cast<long long>(min))
    throw ConfigError(join(path, key), "must be at least " + std::to_string(min));
  return static_cast<std::size_t>(v);
}

inline Grids grids_from_json(const Json& j, const std::string& path, Grids g) {
  allow_keys(j, path,
             {"n_steps", "n_paths", "particles", "pairs", "lambda_grid", "s_grid", "r_grid",
              "p_grid"});
  g.n_steps = static_cast<int>(count_or(j, path, "n_steps", g.n_steps));
  g.n_paths = count_or(j, path, "n_paths", g.n_paths, kMinPaths);
  g.particles = count_or(j, path, "particles", g.particles, 1000);
  g.pairs = count_or(j, path, "pairs", g.pairs);
  if (j.contains("lambda_grid")) g.lambda_grid = numbers(j.at("lambda_grid"), join(path, "lambda_grid"));
  if (j.contains("s_grid")) g.s_grid = numbers(j.at("s_grid"), join(path, "s_grid"));
  if (j.contains("r_grid")) g.r_grid = numbers(j.at("r_grid"), join(path, "r_grid"));
  if (j.contains("p_grid")) g.p_grid = numbers(j.at("p_grid"), join(path, "p_grid"));
  for (double r : g.r_grid)
    if (!(r > 0.0)) throw ConfigError(join(path, "r_grid"), "entries must be positive");
  for (double p : g.p_grid)
    if (!(p > 1.0)) throw ConfigError(join(path, "p_grid"), "entries must exceed 1");
  return g;
}

inline Experiment experiment_from_json(const Json& j, const std::string& path) {
  allow_keys(j, path,
             {"name", "model", "window", "windows", "point", "grids", "h3", "psi", "gamma",
              "functions", "checks"});
  Experiment e;
  e.name = string(member(j, path, "name"), join(path, "name"));
  const Json& m = member(j, path, "model");
  if (m.is_string()) {
    try {
      e.model = model_preset(m.get<std::string>());
    } catch (const DomainError& err) {
      throw ConfigError(join(path, "model"), err.what());
    }
  } else {
    try {
      e.model = model_from_json(m, join(path, "model"));
    } catch (const DomainError& err) {
      throw ConfigError(join(path, "model"), err.what());
    }
  }
  e.window = j.contains("window") ? window_from_json(j.at("window"), join(path, "window"))
                                  : preset_window(e.model);
  try {
    e.model.check_time(e.window.t);
  } catch (const Error& err) {
    throw ConfigError(join(path, "window"), err.what());
  }
  if (j.contains("windows")) {
    const Json& ws = j.at("windows");
    if (!ws.is_array()) throw ConfigError(join(path, "windows"), "expected an array");
    for (std::size_t i = 0; i < ws.size(); ++i)
      e.windows.push_back(window_from_json(ws[i], join(path, "windows") + "[" + std::to_string(i) + "]"));
  }
  e.point = j.contains("point") ? vector_from_json(j.at("point"), join(path, "point"))
                                : default_point(e.model, e.window.s);
  try {
    e.model.check_point(e.window.s, SpacePoint{e.point});
  } catch (const Error& err) {
    throw ConfigError(join(path, "point"), err.what());
  }
  e.grids = j.contains("grids") ? grids_from_json(j.at("grids"), join(path, "grids"), Grids{}) : Grids{};
  if (e.grids.s_grid.empty()) {
    const double t = e.window.t;
    e.grids.s_grid = e.model.sphere() ? std::vector<double>{t - 0.2, t - 0.5, t - 1.1, t - 2.3}
                                      : std::vector<double>{t - 0.5, t - 1.0, t - 1.5, t - 2.0};
  }
  for (double s : e.grids.s_grid)
    if (!(s < e.window.t)) throw ConfigError(join(path, "grids.s_grid"), "entries must lie below window.t");
  if (j.contains("h3")) {
    const Json& h = j.at("h3");
    const std::string hp = join(path, "h3");
    allow_keys(h, hp, {"epsilon", "ell"});
    e.h3.epsilon = number_or(h, hp, "epsilon", 1.0);
    if (h.contains("ell")) {
      const Json& l = h.at("ell");
      e.h3.ell = l.is_number() ? Profile::constant(l.get<double>())
                               : profile_from_json(l, join(hp, "ell"));
    }
    if (!(e.h3.epsilon > 0.0)) throw ConfigError(join(hp, "epsilon"), "must be positive");
  }
  if (j.contains("psi")) e.psi = profile_from_json(j.at("psi"), join(path, "psi"));
  if (j.contains("gamma")) {
    const Json& g = j.at("gamma");
    const std::string gp = join(path, "gamma");
    allow_keys(g, gp, {"kind", "alpha", "delta"});
    const std::string kind = string(member(g, gp, "kind"), join(gp, "kind"));
    const double alpha = number_or(g, gp, "alpha", 1.0);
    if (kind == "linear")
      e.gamma = GammaSpec::linear(alpha);
    else if (kind == "power")
      e.gamma = GammaSpec::power(alpha, number(member(g, gp, "delta"), join(gp, "delta")));
    else if (kind == "logarithmic")
      e.gamma = GammaSpec::logarithmic(alpha);
    else
      throw ConfigError(join(gp, "kind"), "unknown gamma kind '" + kind + "'");
  }
  if (j.contains("functions")) {
    const Json& fs = j.at("functions");
    if (!fs.is_array()) throw ConfigError(join(path, "functions"), "expected an array");
    for (std::size_t i = 0; i < fs.size(); ++i)
      e.functions.push_back(function_from_json(fs[i], join(path, "functions") + "[" + std::to_string(i) + "]"));
  } else {
    e.functions = default_functions(e.model, e.window.s);
  }
  const std::string cp = join(path, "checks");
  const Json& cs = member(j, path, "checks");
  if (!cs.is_array()) throw ConfigError(cp, "expected an array of check ids");
  for (std::size_t i = 0; i < cs.size(); ++i) {
    const std::string id = string(cs[i], cp + "[" + std::to_string(i) + "]");
    const auto& ids = known_checks();
    if (std::find(ids.begin(), ids.end(), id) == ids.end())
      throw ConfigError(cp + "[" + std::to_string(i) + "]", "unknown check '" + id + "'");
    if (id == "nonexplosion" && !e.psi)
      throw ConfigError(join(path, "psi"), "required by the nonexplosion check");
    e.checks.push_back(id);
  }
  return e;
}

inline RunConfig config_from_json(const Json& j) {
  allow_keys(j, "", {"master_seed", "quadrature", "output", "experiments"});
  RunConfig c;
  c.raw = j;
  const long long seed = integer(member(j, "", "master_seed"), "master_seed");
  if (seed < 0) throw ConfigError("master_seed", "must be non-negative");
  c.master_seed = static_cast<std::uint64_t>(seed);
  if (j.contains("quadrature")) {
    const Json& q = j.at("quadrature");
    allow_keys(q, "quadrature", {"rel_tol", "divergence_threshold", "max_doublings"});
    c.quad.rel_tol = number_or(q, "quadrature", "rel_tol", c.quad.rel_tol);
    c.quad.divergence_threshold =
        number_or(q, "quadrature", "divergence_threshold", c.quad.divergence_threshold);
    c.quad.max_doublings =
        static_cast<int>(integer_or(q, "quadrature", "max_doublings", c.quad.max_doublings));
    try {
      c.quad.validate();
    } catch (const DomainError& e) {
      throw ConfigError("quadrature", e.what());
    }
  }
  if (j.contains("output")) c.output = string(j.at("output"), "output");
  const Json& ex = member(j, "", "experiments");
  if (!ex.is_array()) throw ConfigError("experiments", "expected an array");
  for (std::size_t i = 0; i < ex.size(); ++i)
    c.experiments.push_back(experiment_from_json(ex[i], "experiments[" + std::to_string(i) + "]"));
  return c;
}

inline RunConfig load_config(const std::string& file) {
  std::ifstream in(file);
  if (!in) throw ConfigError(file, "cannot open config file");
  Json j;
  try {
    j = Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw ConfigError(file, std::string("invalid JSON: ") + e.what());
  }
  return config_from_json(j);
}

}  // namespace io

// ---------------------------------------------------------------------------
// Reference measures

/// Exact mu_t(f) where a closed form exists.
inline std::optional<double> exact_measure_mean(const Model& model, double t, const TestFunction& f) {
  if (model.flat()) {
    const auto p = mehler_params(model, t, t);
    if (!p.measure_exists) return std::nullopt;
    return exact_mu(p, f);
  }
  if (f.kind() == TestFunction::Kind::Coordinate) return 0.0;
  if (f.kind() == TestFunction::Kind::Constant) return f.level();
  return std::nullopt;
}

/// Exact mu_t(rho_t^2): Gaussian on the flat family, the normalized volume on
/// the sphere (E theta^2 r^2 with density proportional to sin^{d-1} theta).
inline double exact_second_moment(const Model& model, double t) {
  if (model.flat()) return exact_mu_second_moment(mehler_params(model, t, t));
  const SphereModel* sp = model.sphere();
  const int d = sp->dim();
  auto w = [d](double th) { return std::pow(std::sin(th), d - 1); };
  const double num = quad::integrate([&](double th) { return th * th * w(th); }, 0.0, std::numbers::pi, 1e-13).value;
  const double den = quad::integrate(w, 0.0, std::numbers::pi, 1e-13).value;
  return sp->radius_squared(t) * num / den;
}

/// Sample of mu_t from the closed form when available, else the Cesaro construction.
inline ParticleEnsemble reference_system(const Model& model, double t, std::size_t n,
                                         std::uint64_t seed) {
  if (model.sphere()) return uniform_sphere_ensemble(model, t, n, seed);
  const auto p = mehler_params(model, t, t);
  if (!p.measure_exists) throw DomainError("no evolution system exists for this model");
  return gaussian_ensemble(model, t, n, seed);
}

// ---------------------------------------------------------------------------
// Checks

struct PlotTable {
  std::string name;
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;
};

struct CheckOutput {
  std::vector<VerdictReport> verdicts;
  std::vector<PlotTable> plots;
  std::vector<std::pair<std::string, ParticleEnsemble>> ensembles;
};

struct CheckContext {
  const Experiment& exp;
  const QuadratureSettings& quad;
  std::uint64_t seed;

  const Model& model() const { return exp.model; }
  double s() const { return exp.window.s; }
  double t() const { return exp.window.t; }
  TimeGrid grid() const { return TimeGrid{s(), t(), exp.grids.n_steps}; }
  double max_dt() const { return (t() - s()) / exp.grids.n_steps; }
  std::uint64_t sub(std::uint64_t tag) const { return derive_seed(seed, tag); }
  std::vector<TestFunction> bounded() const {
    std::vector<TestFunction> out;
    for (const auto& f : exp.functions)
      if (f.bounded()) out.push_back(f);
    return out;
  }
  /// A bounded non-negative function for the Harnack check.
  TestFunction positive() const {
    for (const auto& f : exp.functions)
      if (f.kind() == TestFunction::Kind::GaussianBump) return f;
    return default_functions(model(), s())[1];
  }
};

namespace checks {

inline Json vec_json(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

inline VerdictReport na(const std::string& id, const std::string& reason) {
  VerdictReport v;
  v.check_id = id;
  v.paper_ref = "not applicable";
  v.verdict = Verdict::NotApplicable;
  v.details = {{"reason", reason}};
  return v;
}

inline CheckOutput h3(const CheckContext& c) {
  return {{check_h3(c.model(), c.exp.h3, c.t(), c.quad)}, {}, {}};
}

inline CheckOutput nonexplosion(const CheckContext& c) {
  const auto r = nonexplosion_test(*c.exp.psi, c.quad);
  VerdictReport v;
  v.check_id = "nonexplosion";
  v.paper_ref = "non-explosion integral test";
  v.inputs = {{"psi", io::profile_to_json(*c.exp.psi)}};
  v.lhs = r.outer.value;
  v.verdict = r.verdict == ExplosionVerdict::NonExplosive ? Verdict::Pass : Verdict::Inconclusive;
  v.details = {{"classification", to_string(r.verdict)},
               {"status", to_string(r.outer.status)},
               {"doublings", r.outer.doublings}};
  return {{v}, {}, {}};
}

inline CheckOutput lyapunov_gamma(const CheckContext& c) {
  std::vector<double> rho;
  for (int i = 1; i <= 200; ++i) rho.push_back(0.1 * i);
  const std::vector<double> times{c.s(), 0.5 * (c.s() + c.t()), c.t()};
  return {{lyapunov_gamma_check(c.model(), c.exp.gamma, rho, times, c.exp.h3)}, {}, {}};
}

inline CheckOutput semigroup(const CheckContext& c) {
  CheckOutput out;
  if (!c.model().flat()) {
    out.verdicts.push_back(na("semigroup_oracle", "the Gaussian oracle covers the flat family only"));
    return out;
  }
  const auto p = mehler_params(c.model(), c.s(), c.t());
  for (std::size_t i = 0; i < c.exp.functions.size(); ++i) {
    const auto& f = c.exp.functions[i];
    const auto est = estimate_p(c.model(), c.grid(), SpacePoint{c.exp.point}, f, c.exp.grids.n_paths, c.sub(i));
    const double exact = exact_p(p, c.exp.point, f);
    VerdictReport v;
    v.check_id = "semigroup_oracle";
    v.paper_ref = "Mehler formula";
    v.inputs = {{"function", f.to_json()}, {"x", vec_json(c.exp.point)}, {"s", c.s()}, {"t", c.t()}};
    v.lhs = std::abs(est.mean - exact);
    v.rhs = 0.0;
    v.se = est.stderr;
    v.slack = 3.0 * est.stderr - v.lhs;
    v.verdict = compare_le(v.lhs, 0.0, est.stderr);
    v.details = {{"estimate", est.to_json()}, {"exact", exact}};
    out.verdicts.push_back(v);
  }
  return out;
}

inline CheckOutput bismut(const CheckContext& c) {
  CheckOutput out;
  const bool flat = c.model().flat() != nullptr;
  const auto grid = c.grid();
  const SpacePoint x{c.exp.point};
  const std::size_t n = c.exp.grids.n_paths;
  const auto fs = c.bounded();
  for (std::size_t i = 0; i < fs.size(); ++i) {
    const auto& f = fs[i];
    const auto b = bismut_gradient(c.model(), grid, x, f, BismutSchedule::linear(), n, c.sub(2 * i));
    const double h = 1e-3 * (c.model().sphere() ? c.model().sphere()->radius(c.s()) : 1.0);
    const auto fd = fd_gradient(c.model(), grid, x, f, h, n, c.sub(2 * i + 1));
    double z_fd = 0.0, z_exact = 0.0;
    for (Eigen::Index a = 0; a < b.mean.size(); ++a)
      z_fd = std::max(z_fd, std::abs(b.mean[a] - fd.mean[a]) / std::hypot(b.se[a], fd.se[a]));
    Json d{{"bismut", b.to_json()}, {"finite_difference", fd.to_json()}, {"max_z_fd", z_fd}};
    if (flat) {
      const Vector ex = exact_frame_gradient(mehler_params(c.model(), c.s(), c.t()), x.coords, f);
      for (Eigen::Index a = 0; a < b.mean.size(); ++a)
        z_exact = std::max(z_exact, std::abs(b.mean[a] - ex[a]) / b.se[a]);
      d["exact"] = vec_json(ex);
      d["max_z_exact"] = z_exact;
    }
    VerdictReport v;
    v.check_id = "bismut";
    v.paper_ref = "Bismut derivative formula";
    v.inputs = {{"function", f.to_json()}, {"x", vec_json(x.coords)}, {"s", c.s()}, {"t", c.t()}, {"n_paths", n}};
    v.lhs = std::max(z_fd, z_exact);
    v.rhs = 3.0;
    v.slack = v.rhs - v.lhs;
    v.verdict = v.lhs <= 3.0 ? Verdict::Pass : Verdict::Fail;
    v.details = d;
    out.verdicts.push_back(v);
  }
  return out;
}

inline CheckOutput q_bound(const CheckContext& c) {
  const std::size_t n = std::min<std::size_t>(c.exp.grids.n_paths, 10000);
  const auto paths = simulate_paths(c.model(), c.grid(), SpacePoint{c.exp.point}, n, c.sub(0));
  double worst = 0.0, exact_dev = 0.0;
  for (const auto& tr : paths) {
    worst = std::max(worst, q_bound_violation(c.model(), tr));
    exact_dev = std::max(exact_dev, std::abs(operator_norm(tr.q_matrices.back()) -
                                             std::exp(-c.model().k_integral(c.s(), c.t()))));
  }
  VerdictReport v;
  v.check_id = "q_bound";
  v.paper_ref = "damped transport bound";
  v.inputs = {{"n_paths", n}, {"n_steps", c.exp.grids.n_steps}, {"s", c.s()}, {"t", c.t()}};
  v.lhs = worst;
  v.rhs = 1.0;
  v.slack = 1.0 - worst;
  v.verdict = worst <= 1.0 ? Verdict::Pass : Verdict::Fail;
  v.details = {{"max_terminal_deviation", exact_dev}};
  return {{v}, {}, {}};
}

inline Vector coupling_partner(const Model& model, double s, const Vector& x) {
  if (const SphereModel* sp = model.sphere()) {
    const double r = sp->radius(s);
    Vector y = Vector::Zero(sp->ambient_dim());
    y[sp->ambient_dim() - 1] = r * std::cos(0.5);
    y[sp->ambient_dim() > 2 ? 1 : 0] = -r * std::sin(0.5);
    return y;
  }
  Vector y = x;
  y[0] -= 1.0;
  if (y.size() > 1) y[1] += 0.5;
  return y;
}

inline CheckOutput coupling(const CheckContext& c) {
  const std::size_t n = std::min<std::size_t>(c.exp.grids.n_paths, 10000);
  const SpacePoint x{c.exp.point};
  const SpacePoint y{coupling_partner(c.model(), c.s(), x.coords)};
  const double rho_s = distance(c.model(), c.s(), x, y);
  const double factor = std::exp(-c.model().k_integral(c.s(), c.t()));
  std::vector<double> finals(n);
  std::vector<double> dev(n, 0.0);
  parallel_for(n, [&](std::size_t i) {
    NoiseStream noise(c.sub(0), i);
    const auto ct = simulate_coupling(c.model(), c.grid(), x, y, noise);
    finals[i] = ct.distances.back();
    dev[i] = std::abs(ct.distances.back() - factor * rho_s);
  });
  const auto sm = summarize(finals);
  VerdictReport v;
  v.check_id = "coupling";
  v.paper_ref = "parallel coupling contraction";
  v.inputs = {{"x", vec_json(x.coords)}, {"y", vec_json(y.coords)}, {"n_paths", n}, {"s", c.s()}, {"t", c.t()}};
  v.lhs = sm.mean;
  v.rhs = factor * rho_s;
  v.se = sm.stderr;
  v.slack = v.rhs - v.lhs;
  v.verdict = compare_le(v.lhs, v.rhs + 1e-12 * v.rhs, v.se);
  v.details = {{"rho_s", rho_s}, {"factor", factor}, {"max_pathwise_deviation", *std::max_element(dev.begin(), dev.end())}};
  return {{v}, {}, {}};
}

inline CheckOutput cesaro(const CheckContext& c) {
  CheckOutput out;
  ParticleEnsemble ens;
  try {
    ens = evolution_system(c.model(), c.t(), c.exp.grids.particles, c.sub(0));
  } catch (const DomainError& e) {
    out.verdicts.push_back(na("cesaro", e.what()));
    return out;
  }
  const auto m2 = moment(c.model(), ens, [](double r) { return r * r; });
  const double exact = exact_second_moment(c.model(), c.t());
  VerdictReport v;
  v.check_id = "cesaro";
  v.paper_ref = "evolution system by Cesaro averages";
  v.inputs = {{"t", c.t()}, {"particles", ens.n()}, {"seed", c.sub(0)}};
  v.lhs = std::abs(m2.value - exact);
  v.rhs = 0.0;
  v.se = m2.se;
  v.slack = 3.0 * m2.se - v.lhs;
  v.verdict = compare_le(v.lhs, 0.0, m2.se);
  v.details = {{"second_moment", m2.to_json()}, {"exact", exact}, {"provenance", ens.provenance.parameters}};
  out.verdicts.push_back(v);

  const auto h1 = h1_profile(c.model(), c.exp.h3, c.t(), c.quad);
  VerdictReport b;
  b.check_id = "cesaro_h1_bound";
  b.paper_ref = "second moment bound by H1";
  b.inputs = {{"t", c.t()}, {"epsilon", c.exp.h3.epsilon}};
  b.lhs = m2.value;
  b.se = m2.se;
  if (h1.finite()) {
    b.rhs = h1.value;
    b.slack = b.rhs - b.lhs;
    b.verdict = compare_le(b.lhs, b.rhs, b.se);
  } else {
    b.verdict = Verdict::NotApplicable;
    b.details = {{"reason", "H1 is not finite for this model"}};
  }
  out.verdicts.push_back(b);
  out.ensembles.emplace_back("cesaro", std::move(ens));
  return out;
}

inline CheckOutput invariance(const CheckContext& c) {
  CheckOutput out;
  ParticleEnsemble a, b;
  try {
    a = reference_system(c.model(), c.s(), c.exp.grids.particles, c.sub(0));
    b = reference_system(c.model(), c.t(), c.exp.grids.particles, c.sub(1));
  } catch (const DomainError& e) {
    out.verdicts.push_back(na("invariance", e.what()));
    return out;
  }
  EnsembleSettings es;
  es.coarse_dt = es.fine_dt = std::min(c.max_dt(), 0.1);
  const std::size_t n = c.exp.grids.n_paths;
  for (std::size_t i = 0; i < c.exp.functions.size(); ++i) {
    const auto& f = c.exp.functions[i];
    const auto r = invariance_residual(c.model(), a, b, f, n, c.sub(10 + i), es);
    VerdictReport v;
    v.check_id = "invariance";
    v.paper_ref = "invariance of the evolution system";
    v.inputs = {{"function", f.to_json()}, {"s", c.s()}, {"t", c.t()}, {"n_paths", n}};
    v.lhs = std::abs(r.value);
    v.rhs = 0.0;
    v.se = r.se;
    v.slack = 3.0 * r.se - v.lhs;
    v.verdict = compare_le(v.lhs, 0.0, r.se);
    v.details = r.to_json();
    out.verdicts.push_back(v);
  }
  // Negative control: a perturbed ensemble that is not an evolution system.
  // Translations commute with driftless flat flows, so those use a dilation.
  ParticleEnsemble sa = a, sb = b;
  std::string perturbation;
  TestFunction f0 = TestFunction::coordinate(0);
  if (const FlatModel* fm = c.model().flat()) {
    if (!fm->drift_spec().is_zero()) {
      perturbation = "shift";
      Vector off = Vector::Zero(c.model().dim());
      off[0] = 1.0;
      sa = shifted(a, off);
      sb = shifted(b, off);
    } else {
      perturbation = "dilation";
      f0 = TestFunction::norm2();
      for (auto& x : sa.points) x *= 1.5;
      for (auto& x : sb.points) x *= 1.5;
    }
  } else {
    perturbation = "point_mass";
    std::fill(sa.points.begin(), sa.points.end(), c.exp.point);
    const Vector pt = c.exp.point * (c.model().sphere()->radius(c.t()) / c.model().sphere()->radius(c.s()));
    std::fill(sb.points.begin(), sb.points.end(), pt);
  }
  const auto r = invariance_residual(c.model(), sa, sb, f0, n, c.sub(99), es);
  VerdictReport v;
  v.check_id = "invariance_negative_control";
  v.paper_ref = "invariance of the evolution system";
  v.inputs = {{"function", f0.to_json()}, {"perturbation", perturbation}};
  v.lhs = r.se > 0.0 ? std::abs(r.value) / r.se : std::numeric_limits<double>::infinity();
  v.rhs = 5.0;
  v.se = r.se;
  v.slack = v.lhs - v.rhs;
  v.verdict = v.lhs > 5.0 ? Verdict::Pass : Verdict::Fail;
  v.details = r.to_json();
  out.verdicts.push_back(v);
  return out;
}

inline CheckOutput convergence(const CheckContext& c) {
  CheckOutput out;
  const auto f = c.exp.functions.empty() ? TestFunction::coordinate(0) : c.exp.functions.front();
  std::optional<double> mu = exact_measure_mean(c.model(), c.t(), f);
  if (!mu) {
    try {
      mu = mean_of(reference_system(c.model(), c.t(), 200000, c.sub(7)), f).value;
    } catch (const DomainError& e) {
      out.verdicts.push_back(na("convergence_decay", e.what()));
      return out;
    }
  }
  ConvergenceSettings cs;
  cs.particles = std::min<std::size_t>(c.exp.grids.particles, 450);
  cs.paths_per_particle = 100;
  cs.max_dt = std::min(c.max_dt(), 1e-2);
  try {
    auto rep = convergence_decay(
        c.model(), c.t(), f, c.exp.grids.s_grid,
        [&](double s, std::uint64_t sd) { return reference_system(c.model(), s, cs.particles, sd); },
        *mu, c.sub(0), cs);
    PlotTable pt{"convergence", {"s", "k_integral", "residual", "stderr", "above_noise"}, {}};
    for (const auto& p : rep.points)
      pt.rows.push_back({p.s, p.k_integral, p.residual, p.se, p.above_noise ? 1.0 : 0.0});
    out.plots.push_back(pt);
    out.verdicts.push_back(rep.verdict);
  } catch (const DomainError& e) {
    out.verdicts.push_back(na("convergence_decay", e.what()));
  }
  return out;
}

inline CheckOutput lsi(const CheckContext& c) {
  CheckOutput out;
  std::vector<Window> ws{c.exp.window};
  ws.insert(ws.end(), c.exp.windows.begin(), c.exp.windows.end());
  std::uint64_t tag = 0;
  for (const auto& w : ws) {
    Vector x = c.exp.point;
    if (const SphereModel* sp = c.model().sphere()) x *= sp->radius(w.s) / x.norm();
    const TimeGrid g = TimeGrid::with_max_step(w.s, w.t, c.max_dt());
    for (const auto& f : c.exp.functions)
      out.verdicts.push_back(semigroup_lsi_check(c.model(), g, SpacePoint{x}, f, c.exp.grids.n_paths, c.sub(tag++)));
  }
  return out;
}

inline std::vector<Vector> random_points(const Model& model, double s, std::size_t n, std::uint64_t seed) {
  std::vector<Vector> pts;
  if (model.sphere()) {
    pts = uniform_sphere_ensemble(model, s, n, seed).points;
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      NoiseStream noise(seed, i);
      Vector x(model.dim());
      for (Eigen::Index j = 0; j < x.size(); ++j) x[j] = noise.gaussian();
      pts.push_back(x);
    }
  }
  return pts;
}

inline CheckOutput harnack(const CheckContext& c) {
  CheckOutput out;
  const std::size_t n = c.exp.grids.pairs;
  const auto xs = random_points(c.model(), c.s(), n, c.sub(0));
  const auto ys = random_points(c.model(), c.s(), n, c.sub(1));
  const auto f = c.positive();
  const std::size_t paths = std::min<std::size_t>(c.exp.grids.n_paths, 4000);
  for (std::size_t i = 0; i < n; ++i)
    out.verdicts.push_back(harnack_check(c.model(), c.grid(), SpacePoint{xs[i]}, SpacePoint{ys[i]}, f, 2.0, paths, c.sub(100 + i)));
  return out;
}

inline CheckOutput gradient_bound(const CheckContext& c) {
  CheckOutput out;
  ParticleEnsemble a, b;
  try {
    a = reference_system(c.model(), c.s(), c.exp.grids.particles, c.sub(0));
    b = reference_system(c.model(), c.t(), c.exp.grids.particles, c.sub(1));
  } catch (const DomainError& e) {
    out.verdicts.push_back(na("gradient_bound", e.what()));
    return out;
  }
  GradientBoundSettings gs;
  gs.max_points = 100;
  gs.paths_per_point = 1000;
  gs.max_dt = std::min(c.max_dt(), 1e-2);
  const auto fs = c.bounded();
  for (std::size_t i = 0; i < fs.size(); ++i)
    out.verdicts.push_back(gradient_bound_check(c.model(), c.s(), c.t(), fs[i], 2.0, a.points, b.points, c.sub(10 + i), gs));
  return out;
}

inline CheckOutput hyper(const CheckContext& c) {
  CheckOutput out;
  const Profile k = k_bound(c.model());
  PlotTable pt{"hyper_thresholds", {"p", "q_nelson", "q_printed", "printed_divergent"}, {}};
  for (double p : c.exp.grids.p_grid) {
    HyperSchedule printed{p, k, c.s(), c.t(), HyperSchedule::Variant::PaperPrinted};
    HyperSchedule nelson{p, k, c.s(), c.t(), HyperSchedule::Variant::NelsonType};
    const auto tp = hyper_q_threshold(printed, c.quad);
    const auto tn = hyper_q_threshold(nelson, c.quad);
    pt.rows.push_back({p, tn.q_max, tp.q_max, tp.exponent_divergent ? 1.0 : 0.0});
    out.verdicts.push_back(hyper_threshold_report(printed, c.quad));
    out.verdicts.push_back(hyper_threshold_report(nelson, c.quad));
  }
  out.plots.push_back(pt);
  if (!c.model().flat() || !mehler_params(c.model(), c.t(), c.t()).measure_exists) return out;
  const double p = 2.0;
  const double qn = hyper_q_threshold(HyperSchedule{p, k, c.s(), c.t(), HyperSchedule::Variant::NelsonType}).q_max;
  if (!(qn > p)) return out;
  std::vector<double> rates;
  for (int i = -30; i <= 30; ++i) rates.push_back(0.05 * i);
  auto family = gaussian_exponential_family(rates);
  const double vt = mehler_params(c.model(), c.t(), c.t()).v;
  for (auto& h : hermite_mixture_family(vt, 0.02, 4)) family.push_back(h);
  family.push_back(constant_test(1.0));
  const double q_below = p + (qn - p) * 0.999;
  auto below = norm_check(c.model(), p, q_below, c.s(), c.t(), family).verdict;
  below.check_id = "norm_check_below_threshold";
  below.inputs["variant"] = "nelson_type";
  out.verdicts.push_back(below);
  auto above = norm_check(c.model(), p, 1.1 * qn, c.s(), c.t(), gaussian_exponential_family(rates));
  VerdictReport v = above.verdict;
  v.check_id = "norm_check_above_threshold";
  v.inputs["variant"] = "nelson_type";
  v.verdict = above.max_ratio > 1.0 + 1e-6 ? Verdict::Pass : Verdict::Fail;
  v.slack = above.max_ratio - 1.0;
  v.details["violation_found"] = above.max_ratio > 1.0 + 1e-6;
  out.verdicts.push_back(v);
  return out;
}

inline CheckOutput super_lsi(const CheckContext& c) {
  CheckOutput out;
  ParticleEnsemble ens;
  try {
    ens = reference_system(c.model(), c.s(), c.exp.grids.particles, c.sub(0));
  } catch (const DomainError& e) {
    out.verdicts.push_back(na("super_lsi", e.what()));
    return out;
  }
  auto [prof, v] = super_lsi_check(c.model(), ens, c.exp.grids.r_grid, c.exp.functions);
  PlotTable pt{"beta_profile", {"r", "beta", "stderr", "envelope"}, {}};
  for (std::size_t i = 0; i < prof.r_grid.size(); ++i)
    pt.rows.push_back({prof.r_grid[i], prof.beta[i], prof.se[i], prof.envelope[i]});
  out.plots.push_back(pt);
  out.verdicts.push_back(v);
  return out;
}

inline CheckOutput supercontractive(const CheckContext& c) {
  auto v = supercontractivity_verdict(
      c.model(), [&] { return reference_system(c.model(), c.t(), c.exp.grids.particles, c.sub(0)); },
      c.exp.grids.lambda_grid);
  return {{v}, {}, {}};
}

inline CheckOutput ultrabounded(const CheckContext& c) {
  UltraboundProbe probe;
  probe.x_grid = {c.model().origin(c.s()), c.exp.point};
  probe.s = c.s();
  probe.t = c.t();
  probe.n_paths = std::min<std::size_t>(c.exp.grids.n_paths, 4000);
  probe.max_dt = std::min(c.max_dt(), 1e-2);
  probe.seed = c.sub(0);
  return {{ultraboundedness_verdict(c.model(), probe, c.exp.grids.lambda_grid)}, {}, {}};
}

}  // namespace checks

inline CheckOutput run_check(const std::string& id, const CheckContext& c) {
  using Fn = CheckOutput (*)(const CheckContext&);
  static const std::map<std::string, Fn> registry{
      {"h3", checks::h3},
      {"nonexplosion", checks::nonexplosion},
      {"lyapunov_gamma", checks::lyapunov_gamma},
      {"semigroup", checks::semigroup},
      {"bismut", checks::bismut},
      {"q_bound", checks::q_bound},
      {"coupling", checks::coupling},
      {"cesaro", checks::cesaro},
      {"invariance", checks::invariance},
      {"convergence", checks::convergence},
      {"lsi", checks::lsi},
      {"harnack", checks::harnack},
      {"gradient_bound", checks::gradient_bound},
      {"hyper", checks::hyper},
      {"super_lsi", checks::super_lsi},
      {"supercontractive", checks::supercontractive},
      {"ultrabounded", checks::ultrabounded}};
  const auto it = registry.find(id);
  if (it == registry.end()) throw ConfigError("checks", "unknown check '" + id + "'");
  return it->second(c);
}

// ---------------------------------------------------------------------------
// Running and reporting

/// One verdict per check: fail dominates, then inconclusive, then pass.
/// The binding case supplies lhs/rhs/slack/se; every case is kept in details.
inline VerdictReport aggregate(const std::string& id, const std::vector<VerdictReport>& cases) {
  if (cases.size() == 1) return cases.front();
  VerdictReport agg;
  agg.check_id = id;
  agg.verdict = Verdict::NotApplicable;
  if (cases.empty()) return agg;
  auto rank = [](Verdict v) {
    switch (v) {
      case Verdict::Fail:
        return 4;
      case Verdict::Inconclusive:
        return 3;
      case Verdict::Pass:
        return 2;
      case Verdict::ExponentDivergent:
        return 1;
      case Verdict::NotApplicable:
        return 0;
    }
    return 0;
  };
  const VerdictReport* binding = &cases.front();
  for (const auto& c : cases) {
    if (rank(c.verdict) > rank(agg.verdict)) agg.verdict = c.verdict;
    const bool worse_rank = rank(c.verdict) > rank(binding->verdict);
    const bool same_rank = rank(c.verdict) == rank(binding->verdict);
    if (worse_rank || (same_rank && std::isfinite(c.slack) &&
                       !(c.slack >= binding->slack)))
      binding = &c;
  }
  agg.paper_ref = binding->paper_ref;
  agg.lhs = binding->lhs;
  agg.rhs = binding->rhs;
  agg.slack = binding->slack;
  agg.se = binding->se;
  agg.inputs = {{"cases", cases.size()}, {"binding_case", binding->check_id}};
  Json arr = Json::array();
  for (const auto& c : cases) arr.push_back(c.to_json());
  agg.details = {{"cases", arr}};
  return agg;
}

struct ExperimentResult {
  std::string name;
  std::vector<std::pair<std::string, CheckOutput>> outputs;
  double seconds = 0.0;
};

struct RunResult {
  Json report;
  std::vector<ExperimentResult> experiments;

  std::size_t count(Verdict v) const {
    std::size_t n = 0;
    for (const auto& e : experiments)
      for (const auto& [id, o] : e.outputs) n += aggregate(id, o.verdicts).verdict == v;
    return n;
  }
  int exit_code() const { return count(Verdict::Fail) > 0 ? 1 : 0; }
};

inline std::uint64_t experiment_seed(std::uint64_t master, std::size_t index) {
  return derive_seed(master, index);
}

inline std::uint64_t check_seed(std::uint64_t exp_seed, const std::string& id) {
  return derive_seed(exp_seed, io::fnv1a64(id));
}

/// An error inside a check is recorded as an inconclusive verdict; the run continues.
inline CheckOutput run_check_guarded(const std::string& id, const CheckContext& c) {
  try {
    return run_check(id, c);
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    VerdictReport v;
    v.check_id = id;
    v.paper_ref = "error";
    v.verdict = Verdict::Inconclusive;
    v.details = {{"error", e.what()}};
    return {{v}, {}, {}};
  }
}

inline RunResult run_config(const RunConfig& cfg) {
  RunResult res;
  Json exps = Json::array();
  Json timing = Json::object();
  for (std::size_t i = 0; i < cfg.experiments.size(); ++i) {
    const auto& e = cfg.experiments[i];
    const std::uint64_t es = experiment_seed(cfg.master_seed, i);
    ExperimentResult er;
    er.name = e.name;
    const auto t0 = std::chrono::steady_clock::now();
    Json verdicts = Json::array();
    for (const auto& id : e.checks) {
      CheckContext ctx{e, cfg.quad, check_seed(es, id)};
      auto out = run_check_guarded(id, ctx);
      verdicts.push_back(aggregate(id, out.verdicts).to_json());
      er.outputs.emplace_back(id, std::move(out));
    }
    er.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    timing[e.name] = er.seconds;
    Json ej;
    ej["name"] = e.name;
    ej["model"] = io::model_to_json(e.model);
    ej["window"] = {{"s", e.window.s}, {"t", e.window.t}};
    ej["seed"] = es;
    ej["verdicts"] = verdicts;
    exps.push_back(ej);
    res.experiments.push_back(std::move(er));
  }
  Json& r = res.report;
  r["tool"] = "evoflow";
  r["version"] = kVersion;
  r["config_hash"] = io::fnv1a_hex(cfg.raw.dump());
  r["master_seed"] = cfg.master_seed;
  r["experiments"] = exps;
  r["summary"] = {{"pass", res.count(Verdict::Pass)},
                  {"fail", res.count(Verdict::Fail)},
                  {"inconclusive", res.count(Verdict::Inconclusive)},
                  {"not_applicable", res.count(Verdict::NotApplicable)},
                  {"exponent_divergent", res.count(Verdict::ExponentDivergent)}};
  r["timing"] = timing;
  return res;
}

/// The report without its timing block; two runs with the same config and
/// seed produce identical bodies.
inline std::string report_body(const Json& report) {
  Json b = report;
  b.erase("timing");
  return b.dump(2);
}

inline std::string csv_number(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  std::ostringstream os;
  os.precision(17);
  os << x;
  return os.str();
}

inline std::string verdicts_csv(const RunResult& res) {
  std::ostringstream os;
  os << "experiment,check,check_id,verdict,lhs,rhs,slack,se\n";
  for (const auto& e : res.experiments)
    for (const auto& [id, o] : e.outputs)
      for (const auto& v : o.verdicts)
        os << e.name << ',' << id << ',' << v.check_id << ',' << to_string(v.verdict) << ','
           << csv_number(v.lhs) << ',' << csv_number(v.rhs) << ',' << csv_number(v.slack) << ','
           << csv_number(v.se) << '\n';
  return os.str();
}

inline std::string output_dir(const std::string& flag, const RunConfig* cfg = nullptr) {
  if (!flag.empty()) return flag;
  if (cfg && !cfg->output.empty()) return cfg->output;
  if (const char* env = std::getenv("EVOFLOW_OUT"); env && *env) return env;
  return "evoflow_out";
}

inline void write_outputs(const RunResult& res, const RunConfig& cfg, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  std::ofstream(fs::path(dir) / "report.json") << res.report.dump(2) << '\n';
  std::ofstream(fs::path(dir) / "verdicts.csv") << verdicts_csv(res);
  for (std::size_t i = 0; i < res.experiments.size(); ++i) {
    const auto& e = res.experiments[i];
    for (const auto& [id, o] : e.outputs) {
      for (const auto& pt : o.plots) {
        fs::create_directories(fs::path(dir) / "plotdata");
        std::ofstream f(fs::path(dir) / "plotdata" / (e.name + "_" + pt.name + ".csv"));
        for (std::size_t c = 0; c < pt.columns.size(); ++c) f << (c ? "," : "") << pt.columns[c];
        f << '\n';
        for (const auto& row : pt.rows) {
          for (std::size_t c = 0; c < row.size(); ++c) f << (c ? "," : "") << csv_number(row[c]);
          f << '\n';
        }
      }
      for (const auto& [label, ens] : o.ensembles) {
        fs::create_directories(fs::path(dir) / "ensembles");
        std::ofstream f(fs::path(dir) / "ensembles" / (e.name + "_" + label + ".jsonl"));
        write_ensemble_jsonl(cfg.experiments[i].model, ens, f);
      }
    }
  }
}

}  // namespace evoflow
