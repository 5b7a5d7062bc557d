#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "confopt/solvers.hpp"
#include "doctest.h"
#include "helpers.hpp"
#include "problems.hpp"

using namespace confopt;
using namespace confopt::testing;

namespace {

struct P2 {
  double x, y;
};

double cross(const P2& o, const P2& a, const P2& b) { return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x); }

// Andrew's monotone chain, counter-clockwise.
std::vector<P2> convex_hull(std::vector<P2> pts) {
  std::sort(pts.begin(), pts.end(), [](const P2& a, const P2& b) { return a.x < b.x || (a.x == b.x && a.y < b.y); });
  std::vector<P2> h(2 * pts.size());
  std::size_t k = 0;
  for (const auto& p : pts) {
    while (k >= 2 && cross(h[k - 2], h[k - 1], p) <= 0) --k;
    h[k++] = p;
  }
  for (std::size_t i = pts.size() - 1, lo = k + 1; i-- > 0;) {
    while (k >= lo && cross(h[k - 2], h[k - 1], pts[i]) <= 0) --k;
    h[k++] = pts[i];
  }
  h.resize(k - 1);
  return h;
}

bool inside(const std::vector<P2>& hull, const P2& p) {
  for (std::size_t i = 0; i < hull.size(); ++i) {
    if (cross(hull[i], hull[(i + 1) % hull.size()], p) < -1e-12) return false;
  }
  return true;
}

// Keep the part of a convex polygon where a x + b y + c <= 0.
std::vector<P2> clip(const std::vector<P2>& poly, double a, double b, double c) {
  std::vector<P2> out;
  const std::size_t n = poly.size();
  for (std::size_t i = 0; i < n; ++i) {
    const P2 p = poly[i], q = poly[(i + 1) % n];
    const double fp = a * p.x + b * p.y + c, fq = a * q.x + b * q.y + c;
    if (fp <= 0) out.push_back(p);
    if ((fp < 0 && fq > 0) || (fp > 0 && fq < 0)) {
      const double s = fp / (fp - fq);
      out.push_back({p.x + s * (q.x - p.x), p.y + s * (q.y - p.y)});
    }
  }
  return out;
}

// Binary full-layout problems live in the plane (C_00, C_11). The feasible
// region is the vertex hull clipped by the (linear) constraints; search its
// corners, its edges and an interior grid.
double planar_oracle(const ConfusionFunction& psi, const std::vector<FunctionPtr>& cons, const DiscreteProblem& p,
                     double step = 1e-3) {
  const double pi0 = p.geometry->masses().priors(0), pi1 = p.geometry->masses().priors(1);
  auto lift = [&](double x, double y) { return vec({x, pi0 - x, pi1 - y, y}); };
  std::vector<P2> pts;
  for (const Vec& c : vertex_confusions(p.dist, *p.geometry)) pts.push_back({c(0), c(3)});
  std::vector<P2> region = convex_hull(pts);
  for (const FunctionPtr& f : cons) {
    const double c0 = f->value(lift(0, 0));
    region = clip(region, f->value(lift(1, 0)) - c0, f->value(lift(0, 1)) - c0, c0);
    if (region.empty()) return std::numeric_limits<double>::infinity();
  }
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < region.size(); ++i) {
    const P2 u = region[i], v = region[(i + 1) % region.size()];
    for (int k = 0; k <= 2000; ++k) {
      const double s = k / 2000.0;
      best = std::min(best, psi.value(lift(u.x + s * (v.x - u.x), u.y + s * (v.y - u.y))));
    }
  }
  for (double x = 0; x <= pi0 + 1e-12; x += step) {
    for (double y = 0; y <= pi1 + 1e-12; y += step) {
      if (inside(region, {x, y})) best = std::min(best, psi.value(lift(x, y)));
    }
  }
  return best;
}

// Two groups, two classes, two support points per group.
DiscreteDistribution two_group_distribution() {
  DiscreteDistribution d;
  d.n_classes = 2;
  d.n_groups = 2;
  d.mass = vec({0.3, 0.2, 0.25, 0.25});
  d.eta = Mat(4, 2);
  d.eta << 0.8, 0.2, 0.3, 0.7, 0.6, 0.4, 0.1, 0.9;
  d.points = Mat::Zero(4, 1);
  d.groups = {0, 0, 1, 1};
  d.validate();
  return d;
}

std::string csv(const SolverTrace& t) {
  std::ostringstream os;
  t.write_csv(os);
  return os.str();
}

}  // namespace

TEST_CASE("feasibility config validation") {
  FeasibilityConfig c;
  CHECK_NOTHROW(c.validate());
  c.r = 0.0;
  CHECK_THROWS_AS(c.validate(), Error);
  c.r = 0.05;
  c.zeta = -1.0;
  CHECK_THROWS_AS(c.validate(), Error);
}

TEST_CASE("feasible start clears the margin") {
  const DiscreteProblem p = discretized(SyntheticKind::NormImbal, Representation::Full);
  const auto cons = expand_constraints({Constraint::coverage(0.01)}, p.geometry);
  const FeasibleStart s = find_feasible_start(cons, *p.lmo, 0.005);
  CHECK(s.strictly_feasible);
  CHECK(evaluate_all(cons, s.confusion).maxCoeff() <= -0.005 + 1e-12);
  CHECK((s.classifier.confusion(p.sample, *p.geometry).entries - s.confusion).norm() < 1e-9);
  CHECK(s.member_confusions.size() == s.classifier.members.size());
}

TEST_CASE("planar oracle agrees with enumeration on linear objectives") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const DiscreteProblem p = three_point(seed);
    const LinearFunction psi(vec({0.3, -0.2, 0.5, -0.4}), 0.0);
    CHECK(planar_oracle(psi, {}, p) == doctest::Approx(enumerate_minimum(psi, p.dist, *p.geometry).value).epsilon(2e-3));
  }
}

TEST_CASE("split frank-wolfe on H-mean with a diagonal gap constraint") {
  // C_00 - C_11 >= 0.2 written as -C_00 + C_11 + 0.2 <= 0
  const DiscreteProblem p = discretized(SyntheticKind::NormBal, Representation::Full);
  FunctionPtr psi = bind_metric(Metric::of(MetricKind::HMean), p.geometry);
  const auto cons = expand_constraints({Constraint::linear(vec({-1, 0, 0, 1}), -0.2)}, p.geometry);
  SplitFwOptions o;
  o.iterations = 10000;
  // zeta = 10 leaves the violation near 0.09 at this budget
  FeasibilityConfig f;
  f.zeta = 1000.0;
  const SolverResult r = split_fw(*psi, cons, *p.lmo, f, o);
  const Vec c = r.classifier.confusion(p.sample, *p.geometry).entries;
  CHECK(max_violation(cons, c) <= 0.02);
  CHECK(r.f_violation <= 1e-6);

  const ConstrainedGridResult oracle = constrained_grid_optimum(*psi, cons, *p.geometry, p.set);
  CHECK(std::abs(psi->value(c) - oracle.value) <= 2e-2);
}

TEST_CASE("split frank-wolfe residual decreases with the budget") {
  const DiscreteProblem p = discretized(SyntheticKind::NormBal, Representation::Full, 60);
  FunctionPtr psi = bind_metric(Metric::of(MetricKind::QMean), p.geometry);
  const auto cons = expand_constraints({Constraint::linear(vec({-1, 0, 0, 1}), -0.2)}, p.geometry);
  double prev = std::numeric_limits<double>::infinity();
  for (int t : {100, 1000, 10000}) {
    SplitFwOptions o;
    o.iterations = t;
    const SolverResult r = split_fw(*psi, cons, *p.lmo, {}, o);
    REQUIRE(r.residuals.size() == static_cast<std::size_t>(t));
    const double best = *std::min_element(r.residuals.begin() + t / 2, r.residuals.end());
    CHECK(best <= prev + 1e-9);
    CHECK(r.f_violation <= 1e-6);
    prev = best;
  }
}

TEST_CASE("split frank-wolfe rejects an empty feasible set") {
  const DiscreteProblem p = three_point(3);
  FunctionPtr psi = bind_metric(Metric::of(MetricKind::HMean), p.geometry);
  const std::vector<FunctionPtr> cons{std::make_shared<LinearFunction>(Vec::Zero(4), 1.0)};
  CHECK_THROWS_AS(split_fw(*psi, cons, *p.lmo), Error);
}

TEST_CASE("con-gda keeps mu at zero when the constraint is slack everywhere") {
  const DiscreteProblem p = three_point(4);
  FunctionPtr psi = bind_metric(Metric::of(MetricKind::QMean), p.geometry);
  const std::vector<FunctionPtr> cons{std::make_shared<LinearFunction>(Vec::Zero(4), -0.1)};
  ConGdaOptions o;
  o.iterations = 500;
  const SolverResult r = con_gda(*psi, cons, *p.lmo, {}, o);
  for (const auto& row : r.trace.rows) CHECK(*row.mu_norm == 0.0);
}

TEST_CASE("con-gda on G-mean with equal opportunity") {
  const DiscreteProblem p = discrete_problem(two_group_distribution(), Representation::GroupStacked);
  const Metric metric = Metric::of(MetricKind::GMean);
  FunctionPtr psi = bind_metric(metric, p.geometry);
  const auto cons = expand_constraints({Constraint::equal_opportunity(0.05)}, p.geometry);
  FeasibilityConfig cfg;
  ConGdaOptions o;
  o.iterations = 10000;
  o.lipschitz = std::max(lipschitz_estimate(metric, p.geometry), constraint_lipschitz(cons, *p.geometry));
  const SolverResult r = con_gda(*psi, cons, *p.lmo, cfg, o);
  const Vec c = r.classifier.confusion(p.sample, *p.geometry).entries;
  CHECK(max_violation(cons, c) <= 0.01);
  // any feasible mixture of two assignments bounds the optimum from above
  const double pair = pair_mixture_oracle(*psi, cons, vertex_confusions(p.dist, *p.geometry));
  REQUIRE(std::isfinite(pair));
  CHECK(psi->value(c) <= pair + 2e-2);

  for (const auto& row : r.trace.rows) {
    CHECK(*row.dual_norm <= 2 * o.lipschitz * (1 + 1 / cfg.r) + 1e-9);
    CHECK(*row.mu_norm <= 2 / cfg.r + 1e-9);
  }
}

TEST_CASE("con-gda step tuning picks a feasible run") {
  const DiscreteProblem p = three_point(6);
  FunctionPtr psi = bind_metric(Metric::of(MetricKind::HMean), p.geometry);
  const auto cons = expand_constraints({Constraint::coverage(0.05)}, p.geometry);
  ConGdaOptions o;
  o.iterations = 300;
  o.tune_steps = true;
  const SolverResult r = con_gda(*psi, cons, *p.lmo, {}, o);
  CHECK(r.lmo_calls == 9 * 300);
  CHECK(max_violation(cons, r.confusion) <= 1e-6);
}

TEST_CASE("con-ellipsoid without constraints matches the ellipsoid method") {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const DiscreteProblem p = three_point(seed);
    const LinearFunction psi(vec({0.2, -0.5, 0.1, 0.3}) * (1.0 + seed / 10.0), 0.0);
    EllipsoidOptions eo;
    eo.iterations = 60;
    eo.radius = 10.0;
    ConEllipsoidOptions co;
    co.iterations = 60;
    co.radius = 10.0;
    const SolverResult a = ellipsoid(psi, *p.lmo, eo);
    const SolverResult b = con_ellipsoid(psi, {}, *p.lmo, {}, co);
    CHECK(csv(a.trace) == csv(b.trace));
    CHECK((a.confusion - b.confusion).norm() < 1e-12);
    CHECK(a.lmo_calls == b.lmo_calls);
  }
}

TEST_CASE("con-ellipsoid on H-mean with a coverage band") {
  const DiscreteProblem p = three_point(8);
  FunctionPtr psi = bind_metric(Metric::of(MetricKind::HMean), p.geometry);
  const auto cons = expand_constraints({Constraint::coverage(0.01)}, p.geometry);
  const int m = p.geometry->dim() + static_cast<int>(cons.size());
  FeasibilityConfig cfg;
  cfg.r = 0.005;
  ConEllipsoidOptions o;
  o.radius = 10.0;
  o.iterations = static_cast<int>(std::ceil(2.0 * m * m * std::log(m / 1e-2)));
  const SolverResult r = con_ellipsoid(*psi, cons, *p.lmo, cfg, o);
  const Vec c = r.classifier.confusion(p.sample, *p.geometry).entries;
  CHECK(max_violation(cons, c) <= 1e-2);
  const double opt = planar_oracle(*psi, cons, p);
  REQUIRE(std::isfinite(opt));
  CHECK(std::abs(psi->value(c) - opt) <= 1e-2);

  double prev = m * std::log(o.radius);
  for (const auto& row : r.trace.rows) {
    const double drop = prev - *row.log_volume;
    CHECK(drop >= 1.0 / (2.0 * m) - 1e-9);
    prev = *row.log_volume;
  }
}

TEST_CASE("con-bisection without constraints reproduces bisection") {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const DiscreteProblem p = three_point(seed, 3);
    EnumerationLmo exact(p.dist, p.geometry);
    const RatioForm f = ratio_form(Metric::micro_f1(), *p.geometry);
    BisectionOptions bo;
    bo.iterations = 15;
    ConBisectionOptions co;
    co.iterations = 15;
    co.inner_iterations = 1;
    const SolverResult a = bisection(f, exact, bo);
    const SolverResult b = con_bisection(f, {}, exact, {}, co);
    REQUIRE(a.brackets.size() == b.brackets.size());
    for (std::size_t t = 0; t < a.brackets.size(); ++t) {
      CHECK(a.brackets[t].first == b.brackets[t].first);
      CHECK(a.brackets[t].second == b.brackets[t].second);
    }
  }
}

TEST_CASE("con-bisection on micro-F1 with a coverage band") {
  const DiscreteProblem p = three_point(9, 3);
  const Metric metric = Metric::micro_f1();
  const RatioForm f = ratio_form(metric, *p.geometry);
  FunctionPtr psi = bind_metric(metric, p.geometry);
  const auto cons = expand_constraints({Constraint::coverage(0.05)}, p.geometry);
  FeasibilityConfig cfg;
  cfg.r = 0.01;
  ConBisectionOptions o;
  o.iterations = 10;
  o.inner_iterations = 4000;
  const SolverResult r = con_bisection(f, cons, *p.lmo, cfg, o);
  const Vec c = r.classifier.confusion(p.sample, *p.geometry).entries;
  CHECK(max_violation(cons, c) <= 2e-2);
  const double pair = pair_mixture_oracle(*psi, cons, vertex_confusions(p.dist, *p.geometry), 201);
  REQUIRE(std::isfinite(pair));
  CHECK(f.value(c) <= pair + std::ldexp(1.0, -10) + 5e-2);
  for (std::size_t t = 1; t < r.brackets.size(); ++t) {
    CHECK(r.brackets[t].second - r.brackets[t].first == doctest::Approx(std::ldexp(1.0, -static_cast<int>(t))));
  }
}

TEST_CASE("constrained solvers are bit-reproducible") {
  const DiscreteProblem p = three_point(10);
  FunctionPtr psi = bind_metric(Metric::of(MetricKind::QMean), p.geometry);
  const auto cons = expand_constraints({Constraint::coverage(0.05)}, p.geometry);
  SplitFwOptions so;
  so.iterations = 200;
  ConGdaOptions go;
  go.iterations = 200;
  ConEllipsoidOptions eo;
  eo.iterations = 100;
  eo.radius = 10.0;
  CHECK(csv(split_fw(*psi, cons, *p.lmo, {}, so).trace) == csv(split_fw(*psi, cons, *p.lmo, {}, so).trace));
  CHECK(csv(con_gda(*psi, cons, *p.lmo, {}, go).trace) == csv(con_gda(*psi, cons, *p.lmo, {}, go).trace));
  CHECK(csv(con_ellipsoid(*psi, cons, *p.lmo, {}, eo).trace) ==
        csv(con_ellipsoid(*psi, cons, *p.lmo, {}, eo).trace));
}

TEST_CASE("constrained solvers reject invalid budgets") {
  const DiscreteProblem p = three_point(1);
  FunctionPtr psi = bind_metric(Metric::of(MetricKind::QMean), p.geometry);
  SplitFwOptions so;
  so.iterations = 1;
  CHECK_THROWS_AS(split_fw(*psi, {}, *p.lmo, {}, so), Error);
  ConGdaOptions go;
  go.iterations = 0;
  CHECK_THROWS_AS(con_gda(*psi, {}, *p.lmo, {}, go), Error);
  ConBisectionOptions bo;
  bo.inner_iterations = 0;
  CHECK_THROWS_AS(con_bisection(ratio_form(Metric::micro_f1(), *p.geometry), {}, *p.lmo, {}, bo), Error);
}
