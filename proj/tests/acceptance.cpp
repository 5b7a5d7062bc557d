// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// non-zero when any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <map>
#include <random>
#include <sstream>
#include <string>

#include "confopt/experiment.hpp"
#include "confopt/inner.hpp"
#include "helpers.hpp"
#include "problems.hpp"

using namespace confopt;
using namespace confopt::testing;
using nlohmann::json;

namespace {

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << " [failed: " << what << "]";
    }
  }
};

json load_json(const std::string& name) {
  std::ifstream in(std::filesystem::path(CONFOPT_FIXTURE_DIR) / name);
  if (!in) throw std::runtime_error("missing fixture " + name);
  json j;
  in >> j;
  return j;
}

std::string fmt(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", x);
  return buf;
}

std::string csv(const SolverTrace& t) {
  std::ostringstream os;
  t.write_csv(os);
  return os.str();
}

json threeclass_config(int n_train, const std::string& solver) {
  return {{"data", {{"synthetic", "ThreeClass2D"}, {"n_train", n_train}, {"n_test", 100000}}},
          {"metric", "QMean"},
          {"solver", {{"name", solver}}},
          {"seed", 1000}};
}

// Mean test objective and max violation per solver over `trials` shared
// training draws (the CPE model is trained once per draw).
std::map<std::string, std::pair<double, double>> run_shared(const std::vector<json>& configs, int trials) {
  std::map<std::string, std::pair<double, double>> out;
  std::vector<ExperimentConfig> cs;
  for (const auto& j : configs) cs.push_back(parse_config(j));
  for (int k = 0; k < trials; ++k) {
    const TrialData data = prepare_trial(cs.front(), trial_seed(cs.front(), k));
    for (const auto& c : cs) {
      const TrialResult r = solve_trial(c, data);
      auto& acc = out[c.solver.name];
      acc.first += r.test_objective / trials;
      acc.second += r.test_max_violation / trials;
    }
  }
  return out;
}

// 1: unconstrained consistency on ThreeClass2D.
Outcome consistency() {
  Outcome o;
  const double bayes = load_json("threeclass2d_qmean.json").at("value").get<double>();
  std::map<std::string, std::map<int, double>> gap;
  for (int n : {1000, 10000, 100000}) {
    const auto res = run_shared({threeclass_config(n, "fw"), threeclass_config(n, "gda"),
                                 threeclass_config(n, "ellipsoid")},
                                5);
    for (const auto& [name, v] : res) gap[name][n] = v.first - bayes;
  }
  o.detail << "fixture " << fmt(bayes) << ";";
  for (const auto& [name, g] : gap) {
    o.detail << " " << name << " gap " << fmt(g.at(1000)) << "/" << fmt(g.at(10000)) << "/" << fmt(g.at(100000));
    o.require(g.at(100000) <= 0.02, name + " gap at 1e5 <= 0.02");
    o.require(g.at(100000) <= g.at(1000), name + " gap(1e5) <= gap(1e3)");
  }
  return o;
}

// 2: constrained consistency with a coverage band.
Outcome constrained_consistency() {
  Outcome o;
  const double opt = load_json("threeclass2d_qmean_coverage.json").at("value").get<double>();
  std::vector<json> configs;
  for (const char* s : {"split_fw", "con_gda", "con_ellipsoid"}) {
    json j = threeclass_config(100000, s);
    j["constraints"] = json::array({{{"kind", "CoverageBand"}, {"slack", 0.01}}});
    configs.push_back(j);
  }
  o.detail << "fixture " << fmt(opt) << ";";
  for (const auto& [name, v] : run_shared(configs, 5)) {
    o.detail << " " << name << " qmean " << fmt(v.first) << " violation " << fmt(v.second);
    o.require(v.second <= 0.02, name + " violation <= 0.02");
    o.require(std::abs(v.first - opt) <= 0.03, name + " within 0.03 of the fixture");
  }
  // Diagnostic only, not gating: SplitFW with a heavier penalty than the default zeta = 10.
  json heavy = configs.front();
  heavy["solver"]["zeta"] = 1000.0;
  const auto h = run_shared({heavy}, 5).at("split_fw");
  o.detail << "; [diagnostic] split_fw zeta=1000 qmean " << fmt(h.first) << " violation " << fmt(h.second);
  return o;
}

// 3: bisection halves the bracket and lands within 2^-T of the optimum.
Outcome bisection_rate() {
  Outcome o;
  const int t = 20;
  double worst = -1.0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const DiscreteProblem p = three_point(seed, 3);
    const EnumerationLmo exact(p.dist, p.geometry);
    const Metric m = Metric::micro_f1();
    const RatioForm f = ratio_form(m, *p.geometry);
    BisectionOptions opt;
    opt.iterations = t;
    const SolverResult r = bisection(f, exact, opt);
    const auto [a, b] = r.brackets.back();
    o.require(b - a == std::ldexp(1.0, -t), "bracket width 2^-T (seed " + std::to_string(seed) + ")");
    FunctionPtr psi = bind_metric(m, p.geometry);
    const double best = enumerate_minimum(*psi, p.dist, *p.geometry).value;
    worst = std::max(worst, f.value(r.confusion) - best);
    o.require(f.value(r.confusion) <= best + std::ldexp(1.0, -t) + 1e-9, "value within 2^-T");
  }
  o.detail << "20 distributions, largest excess " << worst;
  return o;
}

// 4: volume law and containment of the Löwner-John update.
Outcome jle_law() {
  Outcome o;
  std::mt19937_64 rng(44);
  std::normal_distribution<double> z;
  auto normal = [&](int m) {
    Vec v(m);
    for (int k = 0; k < m; ++k) v(k) = z(rng);
    return v;
  };
  double worst = 0.0;
  int escapes = 0;
  for (int m = 2; m <= 6; ++m) {
    const double law = (m / (m + 1.0)) * std::pow(m * m / (m * m - 1.0), (m - 1) / 2.0);
    o.require(law <= std::exp(-1.0 / (2.0 * m)), "law <= exp(-1/2m)");
    for (int rep = 0; rep < 100; ++rep) {
      Mat a(m, m);
      for (int i = 0; i < m; ++i) a.col(i) = normal(m);
      const Mat q = Eigen::HouseholderQR<Mat>(a).householderQ();
      const Vec ev = random_box(m, rng, 0.1, 10.0);
      const EllipsoidState e(normal(m), q * ev.asDiagonal() * q.transpose(), 1.0);
      const Vec w = normal(m);
      const EllipsoidState next = jle(e, w);
      worst = std::max(worst, std::abs(std::exp(next.log_volume() - e.log_volume()) - law));
      worst = std::max(worst, std::abs(std::sqrt(next.shape().determinant() / e.shape().determinant()) - law));
      for (int k = 0; k < 1000; ++k) {
        Vec u = normal(m);
        u *= std::pow(std::uniform_real_distribution<double>(0, 1)(rng), 1.0 / m) / u.norm();
        Vec x = e.center() + e.shape_sqrt() * u;
        if ((x - e.center()).dot(w) < 0) x = 2 * e.center() - x;
        if (!next.contains(x, 1e-12)) ++escapes;
      }
    }
  }
  o.require(worst <= 1e-10, "volume ratio within 1e-10");
  o.require(escapes == 0, "zero escapes");
  o.detail << "m=2..6 x 100 states, ratio error " << worst << ", escapes " << escapes;
  return o;
}

// 5: plug-in with exact eta equals exhaustive enumeration.
Outcome lmo_exactness() {
  Outcome o;
  std::mt19937_64 rng(55);
  double worst = 0.0;
  for (int rep = 0; rep < 50; ++rep) {
    const DiscreteProblem p = discrete_problem(DiscreteDistribution::random(4, 3, 1000 + rep), Representation::Full);
    const Vec loss = random_box(9, rng, -1.0, 1.0);
    const double plug = loss.dot(p.lmo->solve(loss).confusion_estimate.entries);
    const double exact = enumerate_lmo(loss, p.dist, *p.geometry).value;
    worst = std::max(worst, std::abs(plug - exact));
  }
  o.require(worst <= 1e-12, "difference <= 1e-12");
  o.detail << "50 pairs, largest difference " << worst;
  return o;
}

// 6: FW, GDA and the ellipsoid method agree on H-mean.
Outcome cross_solver() {
  Outcome o;
  const DiscreteProblem p = discretized(SyntheticKind::NormImbal, Representation::DiagonalNormalized);
  const Metric m = Metric::of(MetricKind::HMean);
  FunctionPtr psi = bind_metric(m, p.geometry);
  // GDA steps tuned over {0.001, 0.01, 0.1}^2 as in the experimental protocol
  GdaOptions go;
  go.lipschitz = lipschitz_estimate(m, p.geometry);
  go.tune_steps = true;
  const std::map<std::string, double> v{
      {"fw", psi->value(frank_wolfe(*psi, *p.lmo).confusion)},
      {"gda", psi->value(gda(*psi, *p.lmo, go).confusion)},
      {"ellipsoid", psi->value(ellipsoid(*psi, *p.lmo).confusion)}};
  GridSpec gs;
  gs.step = 0.01;
  const double grid = grid_bayes(*psi, *p.geometry, p.set, gs).value;
  go.tune_steps = false;
  o.detail << "grid " << fmt(grid) << "; [diagnostic] gda with theory steps "
           << fmt(psi->value(gda(*psi, *p.lmo, go).confusion)) << ";";
  for (const auto& [a, va] : v) {
    o.detail << " " << a << " " << fmt(va);
    o.require(std::abs(va - grid) <= 1e-2, a + " within 1e-2 of the grid");
    for (const auto& [b, vb] : v) {
      if (a < b) o.require(std::abs(va - vb) <= 5e-3, a + "/" + b + " within 5e-3");
    }
  }
  return o;
}

// 7: inner solvers against brute-force oracles.
Outcome inner_oracles() {
  Outcome o;
  std::mt19937_64 rng(77);
  int checks = 0;
  // simplex projection vs a grid of the 2-simplex (step 1e-3)
  for (int rep = 0; rep < 30; ++rep, ++checks) {
    const Vec v = random_box(3, rng, -1.5, 1.5);
    const Vec p = project_simplex(v);
    double grid = std::numeric_limits<double>::infinity();
    for (int a = 0; a <= 1000; ++a)
      for (int b = 0; a + b <= 1000; ++b)
        grid = std::min(grid, (v - vec({a * 1e-3, b * 1e-3, 1.0 - (a + b) * 1e-3})).norm());
    o.require(p.minCoeff() >= 0.0 && std::abs(p.sum() - 1.0) < 1e-9, "simplex membership");
    o.require((v - p).norm() <= grid + 1e-3, "simplex projection optimal");
  }
  // l1-nonnegative ball vs a triangle grid, l2 ball vs the radial formula
  for (int rep = 0; rep < 30; ++rep, ++checks) {
    const Vec v = random_box(2, rng, -2.0, 2.0);
    double grid = std::numeric_limits<double>::infinity();
    for (int a = 0; a <= 1000; ++a)
      for (int b = 0; a + b <= 1000; ++b) grid = std::min(grid, (v - vec({a * 1e-3, b * 1e-3})).norm());
    o.require((v - project_ball(v, 1.0, BallNorm::L1Nonneg)).norm() <= grid + 1e-3, "l1 ball projection");
    const Vec expect = v.norm() <= 1.0 ? v : Vec(v / v.norm());
    o.require((project_ball(v, 1.0, BallNorm::L2) - expect).norm() < 1e-15, "l2 ball projection");
  }
  // minimize_xi on linear objectives reaches the best vertex
  for (int rep = 0; rep < 30; ++rep, ++checks) {
    const int d = 2 + rep % 4;
    const Vec v = random_box(d, rng, -1.0, 1.0);
    const LinearFunction f(v, 0.0);
    const Vec xi = minimize_xi(f, Vec::Zero(d), Vec(), {}, SlackDomain::Simplex);
    o.require(f.value(xi) - v.minCoeff() < 1e-6, "minimize_xi linear");
  }
  // prune_mixture vs a grid over the weight simplex
  for (int rep = 0; rep < 30; ++rep) {
    const Vec psi = random_box(3, rng);
    Mat phi(1, 3);
    phi.row(0) = random_box(3, rng, -0.3, 0.2).transpose();
    double oracle = std::numeric_limits<double>::infinity();
    for (int a = 0; a <= 200; ++a)
      for (int b = 0; a + b <= 200; ++b) {
        const Vec alpha = vec({a / 200.0, b / 200.0, 1.0 - (a + b) / 200.0});
        if ((phi * alpha).maxCoeff() <= 0.0) oracle = std::min(oracle, psi.dot(alpha));
      }
    if (!std::isfinite(oracle)) continue;
    ++checks;
    const HullResult r = prune_mixture(psi, phi);
    o.require((phi * r.alpha).maxCoeff() <= 1e-6, "prune feasible");
    o.require(psi.dot(r.alpha) <= oracle + 1e-3, "prune optimal");
  }
  o.detail << checks << " oracle comparisons";
  return o;
}

// 8: property suites.
Outcome properties() {
  Outcome o;
  std::mt19937_64 rng(88);
  int checks = 0;

  // metric gradients vs central differences, convexity along random chords
  const Vec priors = vec({0.5, 0.3, 0.2});
  auto diag = diag_geometry(priors);
  auto full = full_geometry(priors);
  for (MetricKind k : {MetricKind::HMean, MetricKind::GMean, MetricKind::QMean, MetricKind::Balanced}) {
    FunctionPtr f = bind_metric(Metric::of(k), diag);
    for (int rep = 0; rep < 100; ++rep, ++checks) {
      const Vec x = random_box(3, rng, 0.05, 0.95), y = random_box(3, rng, 0.05, 0.95);
      const Vec fd = central_difference([&](const Vec& v) { return f->value(v); }, x);
      o.require(relative_error(f->gradient(x), fd) < 1e-5, std::string(to_string(k)) + " gradient");
      const double t = std::uniform_real_distribution<double>(0, 1)(rng);
      o.require(f->value(t * x + (1 - t) * y) <= t * f->value(x) + (1 - t) * f->value(y) + 1e-12,
                std::string(to_string(k)) + " convexity");
    }
  }
  for (const Metric& m : {Metric::micro_f1(), Metric::of(MetricKind::ZeroOne)}) {
    FunctionPtr f = bind_metric(m, full);
    for (int rep = 0; rep < 100; ++rep, ++checks) {
      const Vec x = random_confusion(priors, rng);
      const Vec fd = central_difference([&](const Vec& v) { return f->value(v); }, x);
      o.require(relative_error(f->gradient(x), fd) < 1e-5, std::string(to_string(m.kind)) + " gradient");
    }
  }

  // projection sets of the solver iterates, bisection halving, log-volume decrement
  const DiscreteProblem p = discretized(SyntheticKind::NormBal, Representation::DiagonalNormalized, 60);
  FunctionPtr q = bind_metric(Metric::of(MetricKind::QMean), p.geometry);
  GdaOptions go;
  go.iterations = 500;
  const SolverResult g = gda(*q, *p.lmo, go);
  for (const auto& row : g.trace.rows) o.require(*row.dual_norm <= 2 * go.lipschitz + 1e-12, "gda dual radius");
  const auto cons = expand_constraints({Constraint::coverage(0.05)},
                                       std::make_shared<ConfusionGeometry>(ConfusionLayout::full(2),
                                                                           p.geometry->masses()));
  const DiscreteProblem pf = discretized(SyntheticKind::NormBal, Representation::Full, 60);
  FunctionPtr qf = bind_metric(Metric::of(MetricKind::QMean), pf.geometry);
  FeasibilityConfig cfg;
  ConGdaOptions co;
  co.iterations = 500;
  const SolverResult cg = con_gda(*qf, cons, *pf.lmo, cfg, co);
  for (const auto& row : cg.trace.rows) {
    o.require(*row.dual_norm <= 2 * co.lipschitz * (1 + 1 / cfg.r) + 1e-12, "con_gda lambda radius");
    o.require(*row.mu_norm <= 2 / cfg.r + 1e-12, "con_gda mu radius");
  }
  checks += 2;

  for (std::uint64_t seed = 1; seed <= 5; ++seed, ++checks) {
    const DiscreteProblem d = three_point(seed, 3);
    const EnumerationLmo exact(d.dist, d.geometry);
    const SolverResult b = bisection(ratio_form(Metric::micro_f1(), *d.geometry), exact);
    for (std::size_t t = 1; t < b.brackets.size(); ++t) {
      o.require(b.brackets[t].second - b.brackets[t].first ==
                    0.5 * (b.brackets[t - 1].second - b.brackets[t - 1].first),
                "bracket halving");
    }
  }

  EllipsoidOptions eo;
  eo.iterations = 200;
  eo.radius = 10.0;
  const SolverResult e = ellipsoid(*q, *p.lmo, eo);
  const int dim = p.geometry->dim();
  double prev = dim * std::log(eo.radius);
  for (const auto& row : e.trace.rows) {
    o.require(prev - *row.log_volume >= 1.0 / (2.0 * dim) - 1e-9, "log-volume decrement");
    prev = *row.log_volume;
  }
  ++checks;

  // bit-reproducibility of every solver
  FrankWolfeOptions fo;
  fo.iterations = 200;
  SplitFwOptions so;
  so.iterations = 200;
  ConEllipsoidOptions ceo;
  ceo.iterations = 100;
  ceo.radius = 10.0;
  ConBisectionOptions cbo;
  cbo.iterations = 3;
  cbo.inner_iterations = 100;
  const DiscreteProblem r3 = three_point(9, 3);
  const RatioForm f1 = ratio_form(Metric::micro_f1(), *r3.geometry);
  const auto cons3 = expand_constraints({Constraint::coverage(0.1)}, r3.geometry);
  const std::vector<std::pair<std::string, std::function<SolverResult()>>> runs{
      {"fw", [&] { return frank_wolfe(*q, *p.lmo, fo); }},
      {"gda", [&] { return gda(*q, *p.lmo, go); }},
      {"ellipsoid", [&] { return ellipsoid(*q, *p.lmo, eo); }},
      {"bisection", [&] { return bisection(f1, *r3.lmo); }},
      {"split_fw", [&] { return split_fw(*qf, cons, *pf.lmo, {}, so); }},
      {"con_gda", [&] { return con_gda(*qf, cons, *pf.lmo, {}, co); }},
      {"con_ellipsoid", [&] { return con_ellipsoid(*qf, cons, *pf.lmo, {}, ceo); }},
      {"con_bisection", [&] { return con_bisection(f1, cons3, *r3.lmo, {}, cbo); }},
  };
  for (const auto& [name, run] : runs) {
    const SolverResult a = run(), b = run();
    o.require(csv(a.trace) == csv(b.trace) && a.confusion == b.confusion, name + " reproducible");
    ++checks;
  }
  o.detail << checks << " property checks";
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  // optional arguments pick criteria by number
  const std::vector<std::string> only(argv + 1, argv + argc);
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"1 consistency (ThreeClass2D Q-mean, FW/GDA/Ellipsoid)", consistency},
      {"2 constrained consistency (Q-mean + coverage 0.01)", constrained_consistency},
      {"3 bisection rate", bisection_rate},
      {"4 JLE volume law and containment", jle_law},
      {"5 LMO exactness", lmo_exactness},
      {"6 cross-solver agreement (H-mean, NormImbal)", cross_solver},
      {"7 inner-solver oracle equivalence", inner_oracles},
      {"8 property suites", properties},
  };
  int failed = 0;
  for (const auto& [name, check] : criteria) {
    const std::string number = name.substr(0, name.find(' '));
    if (!only.empty() && std::find(only.begin(), only.end(), number) == only.end()) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail << " exception: " << e.what();
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << name << ": " << o.detail.str() << " ("
              << fmt(secs) << " s)" << std::endl;
    if (!o.pass) ++failed;
  }
  return failed == 0 ? 0 : 1;
}
