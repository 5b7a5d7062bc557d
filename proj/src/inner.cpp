#include "confopt/inner.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>

namespace confopt {

Vec project_simplex(const Vec& v) {
  const Eigen::Index d = v.size();
  std::vector<double> u(v.data(), v.data() + d);
  std::sort(u.begin(), u.end(), std::greater<>());
  double cumsum = 0.0, theta = 0.0;
  for (Eigen::Index j = 0; j < d; ++j) {
    cumsum += u[j];
    const double t = (cumsum - 1.0) / static_cast<double>(j + 1);
    if (u[j] - t > 0.0) theta = t;
  }
  return (v.array() - theta).max(0.0).matrix();
}

Vec project_ball(const Vec& v, double radius, BallNorm norm) {
  if (!(radius > 0.0)) throw Error(ErrorCode::ConfigError, "ball radius must be positive");
  if (norm == BallNorm::L2) {
    const double nv = v.norm();
    return nv <= radius ? v : Vec(v * (radius / nv));
  }
  Vec clipped = v.cwiseMax(0.0);
  if (clipped.sum() <= radius) return clipped;
  return project_simplex(v / radius) * radius;
}

Vec project_box(const Vec& v) { return v.cwiseMax(0.0).cwiseMin(1.0); }

Vec project_domain(const Vec& v, SlackDomain domain) {
  return domain == SlackDomain::Simplex ? project_simplex(v) : project_box(v);
}

Vec domain_center(int d, SlackDomain domain) {
  return Vec::Constant(d, domain == SlackDomain::Simplex ? 1.0 / d : 0.5);
}

namespace {

using Objective = std::function<double(const Vec&)>;
using Gradient = std::function<Vec(const Vec&)>;
using Projection = std::function<Vec(const Vec&)>;

// Projected gradient with backtracking on the quadratic upper model; when
// backtracking stalls (nonsmooth points) a normalized c/sqrt(k) subgradient
// step is taken instead. Returns the last iterate; `best` receives the
// iterate with the lowest objective.
Vec descend(const Objective& f, const Gradient& grad, const Projection& proj, Vec x, int steps,
            double& step, double diameter, Vec* best = nullptr, double* best_f = nullptr) {
  double fx = f(x);
  if (!std::isfinite(fx)) throw Error(ErrorCode::NumericalFailure, "inner objective is not finite");
  if (best && (best->size() == 0 || fx < *best_f)) {
    *best = x;
    *best_f = fx;
  }
  for (int k = 1; k <= steps; ++k) {
    Vec g = grad(x);
    if (!g.allFinite()) throw Error(ErrorCode::NumericalFailure, "inner gradient is not finite");
    Vec y;
    double fy = 0.0;
    bool accepted = false, stationary = false;
    for (int tries = 0; tries < 60; ++tries) {
      y = proj(x - step * g);
      Vec diff = y - x;
      const double dn2 = diff.squaredNorm();
      if (dn2 == 0.0) {
        stationary = true;
        break;
      }
      fy = f(y);
      if (std::isfinite(fy) && fy <= fx + g.dot(diff) + dn2 / (2.0 * step) + 1e-15 * std::abs(fx)) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (stationary) break;
    if (!accepted) {
      const double gn = g.norm();
      if (gn == 0.0) break;
      y = proj(x - (diameter / std::sqrt(static_cast<double>(k))) * (g / gn));
      fy = f(y);
      step = 1.0;
    } else {
      step = std::min(step * 2.0, 1e8);
    }
    if (!std::isfinite(fy)) throw Error(ErrorCode::NumericalFailure, "inner objective is not finite");
    x = std::move(y);
    fx = fy;
    if (best && fx < *best_f) {
      *best = x;
      *best_f = fx;
    }
  }
  return x;
}

double domain_diameter(int d, SlackDomain domain) {
  return domain == SlackDomain::Simplex ? std::sqrt(2.0) : std::sqrt(static_cast<double>(d));
}

}  // namespace

double xi_objective(const ConfusionFunction& psi, const Vec& lambda, const Vec& mu,
                    const std::vector<FunctionPtr>& constraints, const Vec& xi) {
  double v = psi.value(xi) - lambda.dot(xi);
  for (Eigen::Index k = 0; k < mu.size(); ++k) {
    if (mu(k) != 0.0) v += mu(k) * constraints[static_cast<std::size_t>(k)]->value(xi);
  }
  return v;
}

Vec minimize_xi(const ConfusionFunction& psi, const Vec& lambda, const Vec& mu,
                const std::vector<FunctionPtr>& constraints, SlackDomain domain,
                const InnerConfig& cfg) {
  const int d = static_cast<int>(lambda.size());
  if (mu.size() > 0 && mu.size() != static_cast<Eigen::Index>(constraints.size())) {
    throw Error(ErrorCode::LayoutMismatch, "one multiplier per constraint expected");
  }
  auto f = [&](const Vec& xi) { return xi_objective(psi, lambda, mu, constraints, xi); };
  auto g = [&](const Vec& xi) {
    Vec out = psi.gradient(xi) - lambda;
    for (Eigen::Index k = 0; k < mu.size(); ++k) {
      if (mu(k) != 0.0) out += mu(k) * constraints[static_cast<std::size_t>(k)]->gradient(xi);
    }
    return out;
  };
  auto p = [domain](const Vec& v) { return project_domain(v, domain); };
  Vec best;
  double best_f = std::numeric_limits<double>::infinity();
  double step = cfg.initial_step;
  descend(f, g, p, domain_center(d, domain), cfg.budget, step, domain_diameter(d, domain), &best,
          &best_f);
  return best;
}

namespace {

// Penalty continuation over the simplex of mixture weights. value/gradient
// act on alpha; cons returns phi(alpha) and its Jacobian rows on demand.
struct MixtureProblem {
  int t = 0;
  Objective value;
  Gradient gradient;
  std::function<Vec(const Vec&)> cons;             // K values
  std::function<Mat(const Vec&)> cons_jacobian;    // K x T
  bool linear_constraints = false;
  int k = 0;
  Projection proj = project_simplex;
  Vec start;  // uniform weights when empty
  double diameter = std::sqrt(2.0);
};

double violation_of(const MixtureProblem& p, const Vec& a) {
  if (p.k == 0) return 0.0;
  return std::max(0.0, p.cons(a).maxCoeff());
}

Vec penalty_descent(const MixtureProblem& p, const Objective& base, const Gradient& base_grad,
                    double margin, const InnerConfig& cfg, Vec* best_feasible, double* best_f,
                    Vec* least_violating, double* least_v) {
  Vec a = p.start.size() > 0 ? p.start : Vec(Vec::Constant(p.t, 1.0 / p.t));
  const int stages = 10;
  const int per_stage = std::max(1, cfg.budget / stages);
  double rho = cfg.penalty;
  double step = cfg.initial_step;
  auto track = [&](const Vec& x) {
    const double v = violation_of(p, x);
    if (v <= 1e-12) {
      const double fx = base(x);
      if (fx < *best_f) {
        *best_feasible = x;
        *best_f = fx;
      }
    }
    if (v < *least_v) {
      *least_violating = x;
      *least_v = v;
    }
  };
  track(a);
  for (int s = 0; s < stages; ++s) {
    auto f = [&](const Vec& x) {
      double out = base(x);
      if (p.k > 0) out += rho * (p.cons(x).array() + margin).max(0.0).square().sum();
      return out;
    };
    auto g = [&](const Vec& x) {
      Vec out = base_grad(x);
      if (p.k > 0) {
        Vec h = (p.cons(x).array() + margin).max(0.0).matrix();
        if (h.maxCoeff() > 0.0) out += 2.0 * rho * p.cons_jacobian(x).transpose() * h;
      }
      return out;
    };
    Vec stage_best;
    double stage_best_f = std::numeric_limits<double>::infinity();
    a = descend(f, g, p.proj, a, per_stage, step, p.diameter, &stage_best, &stage_best_f);
    track(a);
    track(stage_best);
    rho *= 2.0;
    step = cfg.initial_step;
  }
  return a;
}

// Smallest s in [0,1] with (1-s) a + s anchor feasible.
Vec repair(const MixtureProblem& p, const Vec& a, const Vec& anchor) {
  if (violation_of(p, a) <= 0.0) return a;
  if (p.linear_constraints) {
    Vec va = p.cons(a), vb = p.cons(anchor);
    double s = 0.0;
    for (Eigen::Index k = 0; k < va.size(); ++k) {
      if (va(k) > 0.0) s = std::max(s, va(k) / (va(k) - vb(k)));
    }
    s = std::min(1.0, s);
    Vec out = (1.0 - s) * a + s * anchor;
    // guard against rounding on the boundary
    for (int it = 0; it < 60 && violation_of(p, out) > 0.0; ++it) {
      s = std::min(1.0, s + std::max(1e-15, 1e-12 * s));
      out = (1.0 - s) * a + s * anchor;
    }
    return out;
  }
  double lo = 0.0, hi = 1.0;
  for (int it = 0; it < 100; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (violation_of(p, (1.0 - mid) * a + mid * anchor) <= 0.0) {
      hi = mid;
    } else {
      lo = mid;
    }
  }
  return (1.0 - hi) * a + hi * anchor;
}

// With a feasible `given_anchor` the phase-1 search is skipped.
HullResult solve_mixture(const MixtureProblem& p, const InnerConfig& cfg,
                         const Vec* given_anchor = nullptr) {
  Vec best_feasible, least_violating;
  double best_f = std::numeric_limits<double>::infinity();
  double least_v = std::numeric_limits<double>::infinity();
  Vec last = penalty_descent(p, p.value, p.gradient, 0.0, cfg, &best_feasible, &best_f,
                             &least_violating, &least_v);

  if (p.k > 0) {
    // strictly feasible anchor from a pure-penalty phase with a small margin
    Vec anchor, anchor_least;
    double anchor_f = std::numeric_limits<double>::infinity();
    double anchor_v = std::numeric_limits<double>::infinity();
    if (given_anchor) {
      anchor = *given_anchor;
    } else {
      auto zero = [](const Vec&) { return 0.0; };
      auto zero_grad = [&p](const Vec&) { return Vec(Vec::Zero(p.t)); };
      penalty_descent(p, zero, zero_grad, 1e-3, cfg, &anchor, &anchor_f, &anchor_least, &anchor_v);
    }
    if (anchor.size() == 0 && best_feasible.size() > 0) anchor = best_feasible;
    if (anchor.size() > 0) {
      for (const Vec* cand : {&last, &least_violating, &anchor}) {
        Vec r = repair(p, *cand, anchor);
        if (violation_of(p, r) <= 0.0) {
          const double fr = p.value(r);
          if (fr < best_f) {
            best_feasible = r;
            best_f = fr;
          }
        }
      }
    } else if (anchor_v < least_v) {
      least_violating = anchor_least;
      least_v = anchor_v;
    }
  }
  HullResult out;
  out.alpha = best_feasible.size() > 0 ? best_feasible : least_violating;
  out.objective = p.value(out.alpha);
  out.max_violation = violation_of(p, out.alpha);
  return out;
}

void fill_constraints(MixtureProblem& p, const std::vector<FunctionPtr>& constraints) {
  p.k = static_cast<int>(constraints.size());
  p.cons = [&constraints](const Vec& x) { return evaluate_all(constraints, x); };
  p.cons_jacobian = [&constraints, &p](const Vec& x) {
    Mat jac(p.k, p.t);
    for (int k = 0; k < p.k; ++k) jac.row(k) = constraints[static_cast<std::size_t>(k)]->gradient(x).transpose();
    return jac;
  };
  p.linear_constraints = std::all_of(constraints.begin(), constraints.end(), [](const FunctionPtr& f) {
    return dynamic_cast<const LinearFunction*>(f.get()) != nullptr;
  });
}

// Dense two-phase simplex for min c^T x, A x = b, x >= 0 with Bland's rule.
// Sized for a handful of rows and many columns. Returns false if infeasible.
bool simplex(const Vec& c, Mat a, Vec b, Vec* x) {
  const Eigen::Index m = a.rows(), n = a.cols();
  for (Eigen::Index r = 0; r < m; ++r) {
    if (b(r) < 0) {
      a.row(r) *= -1.0;
      b(r) = -b(r);
    }
  }
  // columns: n structural, m artificial, then the right-hand side
  Mat tab = Mat::Zero(m + 1, n + m + 1);
  tab.topLeftCorner(m, n) = a;
  tab.block(0, n, m, m) = Mat::Identity(m, m);
  tab.col(n + m).head(m) = b;
  std::vector<Eigen::Index> basis(static_cast<std::size_t>(m));
  std::iota(basis.begin(), basis.end(), n);
  constexpr double eps = 1e-11;

  auto pivot = [&](Eigen::Index r, Eigen::Index col) {
    tab.row(r) /= tab(r, col);
    for (Eigen::Index i = 0; i <= m; ++i) {
      if (i != r && tab(i, col) != 0.0) tab.row(i) -= tab(i, col) * tab.row(r);
    }
    basis[static_cast<std::size_t>(r)] = col;
  };
  // reduced costs live in the last row as cost - z
  auto run = [&](Eigen::Index allowed) {
    for (int guard = 0; guard < 100000; ++guard) {
      Eigen::Index enter = -1;
      for (Eigen::Index j = 0; j < allowed; ++j) {
        if (tab(m, j) < -eps) {
          enter = j;
          break;
        }
      }
      if (enter < 0) return;
      Eigen::Index leave = -1;
      double best = std::numeric_limits<double>::infinity();
      for (Eigen::Index r = 0; r < m; ++r) {
        if (tab(r, enter) > eps) {
          const double ratio = tab(r, n + m) / tab(r, enter);
          if (ratio < best - eps ||
              (ratio <= best + eps && leave >= 0 && basis[static_cast<std::size_t>(r)] < basis[static_cast<std::size_t>(leave)])) {
            best = std::min(best, ratio);
            leave = r;
          }
        }
      }
      if (leave < 0) throw Error(ErrorCode::NumericalFailure, "linear program is unbounded");
      pivot(leave, enter);
    }
    throw Error(ErrorCode::NumericalFailure, "simplex did not terminate");
  };

  // phase one: minimize the artificial sum
  tab.row(m).setZero();
  for (Eigen::Index r = 0; r < m; ++r) tab.row(m) -= tab.row(r);
  tab.block(m, n, 1, m).setZero();
  run(n + m);
  if (-tab(m, n + m) > 1e-9 * std::max(1.0, b.lpNorm<Eigen::Infinity>())) return false;
  // drive zero-level artificials out where a structural column allows it
  for (Eigen::Index r = 0; r < m; ++r) {
    if (basis[static_cast<std::size_t>(r)] < n) continue;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (std::abs(tab(r, j)) > 1e-9) {
        pivot(r, j);
        break;
      }
    }
  }
  // phase two
  tab.row(m).setZero();
  tab.block(m, 0, 1, n) = c.transpose();
  for (Eigen::Index r = 0; r < m; ++r) {
    const Eigen::Index bj = basis[static_cast<std::size_t>(r)];
    if (bj < n && c(bj) != 0.0) tab.row(m) -= c(bj) * tab.row(r);
  }
  run(n);
  *x = Vec::Zero(n);
  for (Eigen::Index r = 0; r < m; ++r) {
    const Eigen::Index bj = basis[static_cast<std::size_t>(r)];
    if (bj < n) (*x)(bj) = std::max(0.0, tab(r, n + m));
  }
  return true;
}

}  // namespace

Vec minimize_linear_feasible(const Vec& b, const std::vector<FunctionPtr>& constraints,
                             SlackDomain domain, const Vec& anchor, const InnerConfig& cfg) {
  if (anchor.size() != b.size()) throw Error(ErrorCode::LayoutMismatch, "anchor has the wrong length");
  MixtureProblem p;
  p.t = static_cast<int>(b.size());
  p.value = [&b](const Vec& x) { return b.dot(x); };
  p.gradient = [&b](const Vec&) { return b; };
  fill_constraints(p, constraints);
  p.proj = [domain](const Vec& v) { return project_domain(v, domain); };
  p.start = anchor;
  p.diameter = domain_diameter(p.t, domain);
  return solve_mixture(p, cfg, &anchor).alpha;
}

Vec most_feasible_point(const std::vector<FunctionPtr>& constraints, int d, SlackDomain domain,
                        double margin, const InnerConfig& cfg) {
  MixtureProblem p;
  p.t = d;
  p.value = [](const Vec&) { return 0.0; };
  p.gradient = [d](const Vec&) { return Vec(Vec::Zero(d)); };
  fill_constraints(p, constraints);
  p.proj = [domain](const Vec& v) { return project_domain(v, domain); };
  p.start = domain_center(d, domain);
  p.diameter = domain_diameter(d, domain);
  if (p.k == 0) return p.start;
  Vec best_feasible, least_violating;
  double best_f = std::numeric_limits<double>::infinity();
  double least_v = std::numeric_limits<double>::infinity();
  // score candidates by their margin-shifted violation
  MixtureProblem shifted = p;
  shifted.cons = [&p, margin](const Vec& x) { return Vec(p.cons(x).array() + margin); };
  penalty_descent(shifted, p.value, p.gradient, 0.0, cfg, &best_feasible, &best_f,
                  &least_violating, &least_v);
  if (best_feasible.size() > 0) return best_feasible;
  return least_violating;
}

HullResult minimize_over_hull(const ConfusionFunction& psi, const std::vector<Vec>& confusions,
                              const std::vector<FunctionPtr>& constraints, const InnerConfig& cfg) {
  if (confusions.empty()) throw Error(ErrorCode::EmptySample, "hull of an empty confusion list");
  const int t = static_cast<int>(confusions.size());
  const Eigen::Index d = confusions.front().size();
  Mat c(d, t);
  for (int s = 0; s < t; ++s) c.col(s) = confusions[static_cast<std::size_t>(s)];
  if (t == 1) {
    HullResult r;
    r.alpha = Vec::Ones(1);
    r.objective = psi.value(c.col(0));
    r.max_violation = std::max(0.0, constraints.empty() ? 0.0 : max_violation(constraints, c.col(0)));
    return r;
  }
  MixtureProblem p;
  p.t = t;
  p.k = static_cast<int>(constraints.size());
  p.value = [&](const Vec& a) { return psi.value(c * a); };
  p.gradient = [&](const Vec& a) { return Vec(c.transpose() * psi.gradient(c * a)); };
  p.cons = [&](const Vec& a) { return evaluate_all(constraints, c * a); };
  p.cons_jacobian = [&](const Vec& a) {
    Vec x = c * a;
    Mat jac(p.k, t);
    for (int k = 0; k < p.k; ++k) {
      jac.row(k) = (c.transpose() * constraints[static_cast<std::size_t>(k)]->gradient(x)).transpose();
    }
    return jac;
  };
  p.linear_constraints = std::all_of(constraints.begin(), constraints.end(), [](const FunctionPtr& f) {
    return dynamic_cast<const LinearFunction*>(f.get()) != nullptr;
  });
  return solve_mixture(p, cfg);
}

HullResult prune_mixture(const Vec& psi_values, const Mat& phi_values, const InnerConfig&) {
  const int t = static_cast<int>(psi_values.size());
  if (t == 0) throw Error(ErrorCode::EmptySample, "pruning an empty mixture");
  if (phi_values.rows() > 0 && phi_values.cols() != t) {
    throw Error(ErrorCode::LayoutMismatch, "phi values must be K x T");
  }
  if (!psi_values.allFinite() || !phi_values.allFinite()) {
    throw Error(ErrorCode::NumericalFailure, "mixture values are not finite");
  }
  const int k = static_cast<int>(phi_values.rows());
  HullResult r;
  auto finish = [&](Vec alpha) {
    alpha /= alpha.sum();
    r.alpha = std::move(alpha);
    r.objective = psi_values.dot(r.alpha);
    r.max_violation = k == 0 ? 0.0 : std::max(0.0, (phi_values * r.alpha).maxCoeff());
    return r;
  };
  if (k == 0) {
    Eigen::Index best = 0;
    psi_values.minCoeff(&best);
    return finish(Vec::Unit(t, best));
  }
  // least achievable violation: min v  s.t.  phi alpha - v <= 0, alpha in the simplex
  // columns alpha (t), v+ , v-, slacks (k)
  Mat a = Mat::Zero(k + 1, t + 2 + k);
  a.block(0, 0, 1, t).setOnes();
  a.block(1, 0, k, t) = phi_values;
  a.block(1, t, k, 1).setConstant(-1.0);
  a.block(1, t + 1, k, 1).setOnes();
  a.block(1, t + 2, k, k) = Mat::Identity(k, k);
  Vec b = Vec::Zero(k + 1);
  b(0) = 1.0;
  Vec cost = Vec::Zero(t + 2 + k);
  cost(t) = 1.0;
  cost(t + 1) = -1.0;
  Vec x;
  if (!simplex(cost, a, b, &x)) throw Error(ErrorCode::NumericalFailure, "mixture linear program failed");
  if (x(t) - x(t + 1) > 1e-12) return finish(x.head(t));

  // feasible: min psi^T alpha  s.t.  phi alpha <= 0
  Mat a2 = Mat::Zero(k + 1, t + k);
  a2.block(0, 0, 1, t).setOnes();
  a2.block(1, 0, k, t) = phi_values;
  a2.block(1, t, k, k) = Mat::Identity(k, k);
  Vec cost2 = Vec::Zero(t + k);
  cost2.head(t) = psi_values;
  Vec y;
  if (!simplex(cost2, a2, b, &y)) return finish(x.head(t));
  return finish(y.head(t));
}

HullResult prune_mixture(const ConfusionFunction& psi, const std::vector<FunctionPtr>& constraints,
                         const std::vector<Vec>& member_confusions, const InnerConfig& cfg) {
  const int t = static_cast<int>(member_confusions.size());
  Vec psi_values(t);
  Mat phi(static_cast<Eigen::Index>(constraints.size()), t);
  for (int s = 0; s < t; ++s) {
    const Vec& c = member_confusions[static_cast<std::size_t>(s)];
    psi_values(s) = psi.value(c);
    if (!constraints.empty()) phi.col(s) = evaluate_all(constraints, c);
  }
  return prune_mixture(psi_values, phi, cfg);
}

}  // namespace confopt
