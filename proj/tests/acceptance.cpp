// Acceptance suite: one PASS/FAIL line per criterion.
// Usage: evoflow_acceptance [path/to/acceptance.json]

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <numbers>
#include <string>
#include <vector>

#include "evoflow/runner.hpp"

using namespace evoflow;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Line {
  int id;
  std::string name;
  bool ok;
  std::string detail;
};

std::vector<Line> lines;

void record(int id, const std::string& name, bool ok, const std::string& detail) {
  lines.push_back({id, name, ok, detail});
  std::printf("[%s] %2d %s: %s\n", ok ? "PASS" : "FAIL", id, name.c_str(), detail.c_str());
  std::fflush(stdout);
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

const CheckOutput& output_of(const RunResult& r, const std::string& exp, const std::string& id) {
  for (const auto& e : r.experiments)
    if (e.name == exp)
      for (const auto& [cid, o] : e.outputs)
        if (cid == id) return o;
  throw Error("acceptance config lacks " + exp + "/" + id);
}

std::vector<VerdictReport> cases(const RunResult& r, const std::string& exp, const std::string& id,
                                 const std::string& check_id = "") {
  std::vector<VerdictReport> out;
  for (const auto& v : output_of(r, exp, id).verdicts)
    if (check_id.empty() || v.check_id == check_id) out.push_back(v);
  return out;
}

bool all_pass(const std::vector<VerdictReport>& vs) {
  if (vs.empty()) return false;
  for (const auto& v : vs)
    if (v.verdict != Verdict::Pass) return false;
  return true;
}

// ---------------------------------------------------------------------------

void semigroup_oracle() {
  const Model ou = Model::ornstein_uhlenbeck(2, 1.0);
  const auto t0 = Clock::now();
  const auto est = estimate_p(ou, TimeGrid{0.0, 1.0, 1000}, SpacePoint{Vector::Unit(2, 0)},
                              TestFunction::coordinate(0), 100000, 11);
  const double secs = seconds_since(t0);
  const double exact = std::exp(-1.0);
  const double z = std::abs(est.mean - exact) / est.stderr;
  const double rel_se = est.stderr / exact;
  record(1, "semigroup oracle", z <= 3.0 && rel_se <= 0.01 && secs <= 30.0,
         fmt("estimate %.5f exact %.5f z %.2f se/exact %.4f runtime %.1fs", est.mean, exact, z,
             rel_se, secs));
}

void bismut_formula() {
  const std::vector<Model> models{Model::ornstein_uhlenbeck(2, 1.0),
                                  Model::conformal_flat(2, Profile::exponential(-1.0))};
  Vector c(2);
  c << 0.5, -0.25;
  const std::vector<TestFunction> fs{TestFunction::gaussian_bump(c, 1.0),
                                     TestFunction::lip_cap(0.0, 1.0, 2.0),
                                     TestFunction::lip_cap(0.25, 0.5, 1.0, 1)};
  const TimeGrid grid{0.0, 1.0, 100};
  const SpacePoint x{Vector::Unit(2, 0)};
  int ok = 0, total = 0;
  double worst = 0.0;
  for (std::size_t mi = 0; mi < models.size(); ++mi)
    for (std::size_t fi = 0; fi < fs.size(); ++fi) {
      const std::uint64_t seed = derive_seed(21, 10 * mi + fi);
      const auto b = bismut_gradient(models[mi], grid, x, fs[fi], BismutSchedule::linear(), 20000,
                                     derive_seed(seed, 1));
      const auto fd = fd_gradient(models[mi], grid, x, fs[fi], 1e-3, 20000, derive_seed(seed, 2));
      const Vector ex = exact_frame_gradient(mehler_params(models[mi], 0.0, 1.0), x.coords, fs[fi]);
      for (Eigen::Index a = 0; a < ex.size(); ++a) {
        worst = std::max(worst, std::abs(b.mean[a] - ex[a]) / b.se[a]);
        worst = std::max(worst, std::abs(b.mean[a] - fd.mean[a]) / std::hypot(b.se[a], fd.se[a]));
      }
      ++total;
      ok += gradient_matches(b, ex) && gradients_agree(b, fd);
    }
  record(2, "Bismut formula", ok == total && total == 6,
         fmt("%d/%d fixtures agree, worst z %.2f", ok, total, worst));
}

void q_bound(const RunResult& r) {
  bool ok = true;
  double worst = 0.0;
  for (const char* exp : {"ou", "conformal", "sphere"}) {
    const auto v = cases(r, exp, "q_bound");
    ok = ok && all_pass(v) && v.front().inputs["n_paths"].get<std::size_t>() >= 10000;
    worst = std::max(worst, v.front().lhs);
  }
  const auto ou = cases(r, "ou", "q_bound").front();
  const double dev = ou.details["max_terminal_deviation"].get<double>();
  record(3, "Q bound", ok && dev <= 1e-12,
         fmt("worst |Q|/bound %.6f over 3 models, OU |Q| - e^{-1} %.2e", worst, dev));
}

void coupling(const RunResult& r) {
  const auto ou = cases(r, "ou", "coupling").front();
  const double rel = ou.details["max_pathwise_deviation"].get<double>() /
                     ou.details["rho_s"].get<double>();
  const auto sp = cases(r, "sphere", "coupling").front();
  const double half = 0.5 * sp.details["rho_s"].get<double>();
  const bool sphere_ok = sp.lhs <= half + 3.0 * sp.se;
  record(4, "coupling contraction", rel <= 1e-12 && sphere_ok,
         fmt("OU relative deviation %.2e; sphere mean %.5f vs 0.5 rho_s %.5f (se %.5f)", rel,
             sp.lhs, half, sp.se));
}

void evolution_system_check() {
  const Model ou = Model::ornstein_uhlenbeck(2, 1.0);
  const std::size_t n = 4000;
  const auto ens_t = evolution_system(ou, 1.0, n, 501);
  const auto ens_s = evolution_system(ou, 0.0, n, 502);
  const auto m2 = moment(ou, ens_t, [](double r) { return r * r; });
  const double h1 = h1_profile(ou, H3Config{}, 1.0).value;
  const bool moment_ok = std::abs(m2.value - 2.0) <= 3.0 * m2.se && m2.value <= h1 + 3.0 * m2.se;

  EnsembleSettings es;
  es.coarse_dt = es.fine_dt = 1e-2;
  Vector c(2);
  c << 0.5, -0.25;
  const std::vector<TestFunction> fs{TestFunction::coordinate(0), TestFunction::gaussian_bump(c, 1.0),
                                     TestFunction::lip_cap(0.0, 1.0, 2.0)};
  int inv_ok = 0;
  double worst = 0.0;
  for (std::size_t i = 0; i < fs.size(); ++i) {
    const auto res = invariance_residual(ou, ens_s, ens_t, fs[i], 2000, derive_seed(503, i), es);
    worst = std::max(worst, std::abs(res.value) / res.se);
    inv_ok += res.within(3.0);
  }
  Vector off = Vector::Zero(2);
  off[0] = 1.0;
  const auto neg = invariance_residual(ou, shifted(ens_s, off), shifted(ens_t, off),
                                       TestFunction::coordinate(0), 2000, 504, es);
  const double neg_z = std::abs(neg.value) / neg.se;
  record(5, "evolution system", moment_ok && inv_ok == 3 && neg_z > 5.0,
         fmt("mu_t(rho^2) %.4f +- %.4f (H1 %.4f); invariance %d/3 within 3 SE (worst %.2f); "
             "shifted control %.1f SE",
             m2.value, m2.se, h1, inv_ok, worst, neg_z));
}

void log_sobolev(const RunResult& r) {
  std::vector<VerdictReport> all;
  double worst = std::numeric_limits<double>::infinity();
  for (const char* exp : {"ou", "conformal", "sphere"})
    for (const auto& v : cases(r, exp, "lsi")) {
      all.push_back(v);
      worst = std::min(worst, v.se > 0.0 ? v.slack / v.se : v.slack >= 0.0 ? 0.0 : -1e300);
    }
  const Model ou = Model::ornstein_uhlenbeck(2, 1.0);
  const double c =
      4.0 * lsi_window([&](double a, double b) { return ou.k_integral(a, b); }, 0.0, 1.0);
  const double exact = 2.0 * (1.0 - std::exp(-2.0));
  record(6, "log-Sobolev", all.size() == 18 && all_pass(all) && std::abs(c - exact) <= 1e-8,
         fmt("%zu cases, min slack/se %.2f; OU constant %.10f vs %.10f", all.size(), worst, c,
             exact));
}

void harnack(const RunResult& r) {
  std::size_t n = 0;
  bool ok = true;
  for (const char* exp : {"ou", "conformal", "sphere"}) {
    const auto v = cases(r, exp, "harnack");
    n += v.size();
    ok = ok && v.size() == 20 && all_pass(v);
  }
  const double coef = harnack_coefficient(Model::ornstein_uhlenbeck(2, 1.0), 0.0, 1.0, 2.0);
  const double exact = 1.0 / (std::exp(2.0) - 1.0);
  record(7, "Harnack", ok && std::abs(coef - exact) <= 1e-8,
         fmt("%zu pairs pass; OU coefficient %.10f vs %.10f", n, coef, exact));
}

void hypercontractivity() {
  const std::map<std::string, Model> presets{{"ou", model_preset("ou")},
                                             {"conformal", model_preset("conformal")},
                                             {"heat", model_preset("heat")}};
  int divergent = 0;
  for (const auto& [name, m] : presets) {
    const HyperSchedule h{2.0, k_bound(m), 0.0, 1.0, HyperSchedule::Variant::PaperPrinted};
    divergent += hyper_q_threshold(h).exponent_divergent;
  }
  const Model ou = model_preset("ou");
  const double q = hyper_q_threshold(
                       HyperSchedule{2.0, k_bound(ou), 0.0, 1.0, HyperSchedule::Variant::NelsonType})
                       .q_max;
  std::vector<double> rates;
  for (int i = -30; i <= 30; ++i) rates.push_back(0.05 * i);
  auto family = gaussian_exponential_family(rates);
  for (auto& f : hermite_mixture_family(mehler_params(ou, 1.0, 1.0).v, 0.02, 4)) family.push_back(f);
  double below = 0.0;
  for (double frac : {0.5, 0.9, 0.999})
    below = std::max(below, norm_check(ou, 2.0, 2.0 + frac * (q - 2.0), 0.0, 1.0, family).max_ratio);
  const double above = norm_check(ou, 2.0, 1.1 * q, 0.0, 1.0, gaussian_exponential_family(rates)).max_ratio;
  record(8, "hypercontractivity",
         divergent == 3 && below <= 1.0 + 1e-6 && above > 1.0 + 1e-6,
         fmt("printed divergent on %d/3 presets; Nelson q %.5f; max ratio below %.9f, at 1.1x %.4f",
             divergent, q, below, above));
}

void exponential_moments() {
  const Model ou = Model::ornstein_uhlenbeck(2, 1.0);
  const auto ens = gaussian_ensemble(ou, 1.0, 1000000, 901);
  const auto e25 = exp_moment(ou, ens, 0.25);
  const double exact = std::pow(1.0 - 2.0 * 0.25, -1.0 * ou.dim() / 2.0);
  const double rel = std::abs(e25.value / exact - 1.0);
  const auto e50 = exp_moment(ou, ens, 0.5);
  record(9, "exponential moments", rel <= 0.05 && !e25.divergence_suspected && e50.divergence_suspected,
         fmt("lambda 0.25: %.4f vs %.4f (rel %.4f); lambda 0.5 top-1%% share %.2f, suspected %s",
             e25.value, exact, rel, e50.top_share, e50.divergence_suspected ? "yes" : "no"));
}

void nonexplosion() {
  const auto one = nonexplosion_test(Profile::constant(1.0)).verdict;
  const auto zero = nonexplosion_test(Profile::constant(0.0)).verdict;
  const auto grow = nonexplosion_test(Profile::exponential(1.0)).verdict;
  record(10, "non-explosion", one == ExplosionVerdict::NonExplosive &&
                                  zero == ExplosionVerdict::NonExplosive &&
                                  grow == ExplosionVerdict::Inconclusive,
         fmt("psi=1 %s, psi=0 %s, psi=e^s %s", to_string(one), to_string(zero), to_string(grow)));
}

void convergence(const RunResult& r) {
  bool ok = true;
  std::string d;
  for (const char* exp : {"ou", "sphere"}) {
    const auto v = cases(r, exp, "convergence").front();
    const double slope = v.lhs;
    ok = ok && std::isfinite(slope) && std::abs(slope + 1.0) <= 0.2;
    d += fmt("%s slope %.3f ", exp, slope);
  }
  record(11, "convergence rate", ok, d);
}

}  // namespace

int main(int argc, char** argv) {
  const std::string cfg_path = argc > 1 ? argv[1] : EVOFLOW_ACCEPTANCE_CONFIG;
  const auto t0 = Clock::now();
  try {
    const RunConfig cfg = io::load_config(cfg_path);
    semigroup_oracle();
    bismut_formula();
    const RunResult first = run_config(cfg);
    q_bound(first);
    coupling(first);
    evolution_system_check();
    log_sobolev(first);
    harnack(first);
    hypercontractivity();
    exponential_moments();
    nonexplosion();
    convergence(first);
    const RunResult second = run_config(cfg);
    const bool same = report_body(first.report) == report_body(second.report);
    record(12, "determinism", same,
           fmt("report bodies %s (%zu bytes)", same ? "identical" : "differ",
               report_body(first.report).size()));
  } catch (const std::exception& e) {
    std::printf("[FAIL] acceptance aborted: %s\n", e.what());
    return 2;
  }
  int passed = 0;
  for (const auto& l : lines) passed += l.ok;
  std::printf("%d/%zu criteria passed in %.0fs\n", passed, lines.size(), seconds_since(t0));
  return passed == static_cast<int>(lines.size()) && lines.size() == 12 ? 0 : 1;
}
