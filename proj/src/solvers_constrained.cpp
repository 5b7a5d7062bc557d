#include <algorithm>
#include <cmath>
#include <iostream>
#include <limits>
#include <random>

#include "confopt/solvers.hpp"
#include "solver_common.hpp"

namespace confopt {

using detail::CountingLmo;
using detail::direction;
using detail::MemberPool;
using detail::Norm;

void FeasibilityConfig::validate() const {
  if (!(r > 0.0)) throw Error(ErrorCode::ConfigError, "r must be positive");
  if (!(zeta > 0.0)) throw Error(ErrorCode::ConfigError, "zeta must be positive");
  for (const auto& s : {eta_lambda, eta_mu, eta_xi}) {
    if (s && !(*s > 0.0)) throw Error(ErrorCode::ConfigError, "step sizes must be positive");
  }
}

namespace {

double max_phi(const std::vector<FunctionPtr>& cs, const Vec& c) {
  return cs.empty() ? -std::numeric_limits<double>::infinity() : evaluate_all(cs, c).maxCoeff();
}

// w_t = gamma_t prod_{s = t+1}^{upto} (1 - gamma_s) for t <= upto, zero after.
Vec fw_weights(const std::vector<double>& gammas, int upto, int size) {
  Vec w = Vec::Zero(size);
  double tail = 1.0;
  for (int t = upto; t >= 0; --t) {
    w(t) = gammas[static_cast<std::size_t>(t)] * tail;
    tail *= 1.0 - gammas[static_cast<std::size_t>(t)];
  }
  return w;
}

void require_iterations(int t, int min) {
  if (t < min) throw Error(ErrorCode::ConfigError, "iterations must be at least " + std::to_string(min));
}

FeasibleStart starting_point(const std::vector<FunctionPtr>& constraints, const Lmo& lmo,
                             const FeasibilityConfig& cfg, const char* solver) {
  FeasibleStart h0 = cfg.initial_feasible ? *cfg.initial_feasible
                                          : find_feasible_start(constraints, lmo, cfg.r);
  if (h0.member_confusions.size() != h0.classifier.members.size()) {
    throw Error(ErrorCode::ConfigError, "initial classifier needs one confusion per member");
  }
  if (cfg.initial_feasible) {
    h0.confusion = Vec::Zero(lmo.geometry()->dim());
    for (std::size_t s = 0; s < h0.member_confusions.size(); ++s) {
      h0.confusion += h0.classifier.weights(static_cast<Eigen::Index>(s)) * h0.member_confusions[s];
    }
    h0.strictly_feasible = max_phi(constraints, h0.confusion) <= -cfg.r;
  }
  if (!h0.strictly_feasible) {
    std::cerr << "warning: StrictFeasibilityUnknown: " << solver
              << " starts from a classifier with max phi = " << max_phi(constraints, h0.confusion)
              << " > -r\n";
  }
  return h0;
}

}  // namespace

double constraint_lipschitz(const std::vector<FunctionPtr>& constraints, const ConfusionGeometry& g,
                            int samples) {
  const int d = g.dim();
  const SlackDomain dom = g.slack_domain();
  std::mt19937_64 rng(20240601);
  std::vector<Vec> points{domain_center(d, dom)};
  for (int s = 0; s < samples; ++s) {
    Vec x(d);
    if (dom == SlackDomain::Simplex) {
      std::exponential_distribution<double> ex(1.0);
      for (int i = 0; i < d; ++i) x(i) = ex(rng);
      x /= x.sum();
    } else {
      std::uniform_real_distribution<double> u(1e-3, 1.0);
      for (int i = 0; i < d; ++i) x(i) = u(rng);
    }
    points.push_back(std::move(x));
  }
  double l = 0.0;
  for (const auto& f : constraints) {
    if (auto lin = std::dynamic_pointer_cast<const LinearFunction>(f)) {
      l = std::max(l, lin->coeffs().norm());
      continue;
    }
    for (const auto& x : points) l = std::max(l, f->gradient(x).norm());
  }
  return l;
}

FeasibleStart find_feasible_start(const std::vector<FunctionPtr>& constraints, const Lmo& lmo,
                                  double margin, int budget) {
  const auto& g = *lmo.geometry();
  CountingLmo call{lmo};
  MemberPool pool;
  FeasibleStart out;

  LmoResult r0 = call(direction(g.fallback_direction(), Norm::L2, g));
  pool.add(r0);
  Vec c = r0.confusion_estimate.entries;
  std::vector<double> gammas{1.0};
  int last = 0;
  // Frank-Wolfe on the squared hinge with twice the margin, stopped once the
  // running mixture clears the requested margin.
  for (int t = 1; t <= budget && max_phi(constraints, c) > -margin; ++t) {
    const Vec h = (evaluate_all(constraints, c).array() + 2.0 * margin).max(0.0).matrix();
    Vec grad = Vec::Zero(c.size());
    for (std::size_t k = 0; k < constraints.size(); ++k) {
      if (h(static_cast<Eigen::Index>(k)) > 0.0) grad += 2.0 * h(static_cast<Eigen::Index>(k)) * constraints[k]->gradient(c);
    }
    if (grad.squaredNorm() == 0.0) break;
    LmoResult r = call(grad / grad.norm());
    const double gamma = 2.0 / (t + 1.0);
    c = (1.0 - gamma) * c + gamma * r.confusion_estimate.entries;
    pool.add(r);
    gammas.push_back(gamma);
    last = t;
  }
  const Vec w = fw_weights(gammas, last, pool.size());
  for (int t = 0; t < pool.size(); ++t) {
    if (w(t) > 0.0) {
      out.classifier.members.push_back(pool.members[static_cast<std::size_t>(t)]);
      out.member_confusions.push_back(pool.confusions[static_cast<std::size_t>(t)]);
    }
  }
  std::vector<double> kept;
  for (int t = 0; t < pool.size(); ++t) {
    if (w(t) > 0.0) kept.push_back(w(t));
  }
  out.classifier.weights = Eigen::Map<Vec>(kept.data(), static_cast<Eigen::Index>(kept.size()));
  out.classifier.weights /= out.classifier.weights.sum();
  out.confusion = c;
  out.lmo_calls = call.calls;
  out.strictly_feasible = max_phi(constraints, c) <= -margin;
  return out;
}

// ---------------------------------------------------------------------------
// SplitFW

SolverResult split_fw(const ConfusionFunction& psi, const std::vector<FunctionPtr>& constraints,
                      const Lmo& lmo, const FeasibilityConfig& cfg, const SplitFwOptions& opt) {
  require_iterations(opt.iterations, 2);
  cfg.validate();
  const auto& g = *lmo.geometry();
  const int d = g.dim();
  const SlackDomain dom = g.slack_domain();
  const double zeta = cfg.zeta;
  const int big_t = opt.iterations;
  CountingLmo call{lmo};
  MemberPool pool;
  SolverResult out;

  const Vec anchor = most_feasible_point(constraints, d, dom, 1e-3, opt.inner);
  if (max_phi(constraints, anchor) > 0.0) {
    throw Error(ErrorCode::NumericalFailure, "no point of the slack domain satisfies the constraints");
  }
  LmoResult r0 = call(direction(g.fallback_direction(), Norm::L2, g));
  pool.add(r0);
  Vec c = r0.confusion_estimate.entries;
  Vec f = anchor;
  out.f_violation = max_phi(constraints, f);
  Vec lambda = Vec::Zero(d);
  std::vector<double> gammas{1.0};

  auto lagrangian = [&](const Vec& cc, const Vec& ff) {
    const Vec diff = cc - ff;
    return psi.value(cc) + psi.value(ff) + lambda.dot(diff) + 0.5 * zeta * diff.squaredNorm();
  };

  double best_residual = std::numeric_limits<double>::infinity();
  int t_star = -1;
  Vec c_star;
  for (int t = 1; t <= big_t; ++t) {
    try {
      const Vec diff = c - f;
      const Vec a = psi.gradient(c) + lambda + zeta * diff;
      const Vec b = psi.gradient(f) - lambda - zeta * diff;
      LmoResult r = call(direction(a, Norm::L2, g));
      const Vec& c_tilde = r.confusion_estimate.entries;
      const Vec f_tilde = minimize_linear_feasible(b, constraints, dom, anchor, opt.inner);
      double gamma = 2.0 / (t + 2.0);
      if (opt.line_search) {
        double best = std::numeric_limits<double>::infinity();
        for (int k = 0; k <= 100; ++k) {
          const double s = k / 100.0;
          const double v = lagrangian((1.0 - s) * c + s * c_tilde, (1.0 - s) * f + s * f_tilde);
          if (v < best) {
            best = v;
            gamma = s;
          }
        }
      }
      c = (1.0 - gamma) * c + gamma * c_tilde;
      f = (1.0 - gamma) * f + gamma * f_tilde;
      pool.add(r);
      gammas.push_back(gamma);
      const double eta = 3 * t <= big_t ? 0.5 : (3 * t <= 2 * big_t ? 0.1 : 0.001);
      lambda += (eta / t) * (c - f);
      const double residual = (c - f).squaredNorm();
      out.residuals.push_back(residual);
      out.f_violation = std::max(out.f_violation, max_phi(constraints, f));
      if (2 * t > big_t && residual < best_residual) {
        best_residual = residual;
        t_star = t;
        c_star = c;
      }
      TraceRow row{t, call.calls, psi.value(c), std::max(0.0, max_phi(constraints, c)), lambda.norm(),
                   std::nullopt, std::nullopt};
      out.trace.rows.push_back(row);
    } catch (const Error& e) {
      throw detail::with_iteration(e, t);
    }
  }
  out.classifier = pool.mixture(fw_weights(gammas, t_star, pool.size())).compacted();
  out.confusion = c_star;
  out.lmo_calls = call.calls;
  return out;
}

// ---------------------------------------------------------------------------
// ConGDA

namespace {

SolverResult con_gda_run(const ConfusionFunction& psi, const std::vector<FunctionPtr>& constraints,
                         const Lmo& lmo, const FeasibilityConfig& cfg, const ConGdaOptions& opt) {
  cfg.validate();
  if (!(opt.lipschitz > 0.0)) throw Error(ErrorCode::ConfigError, "con_gda needs a positive Lipschitz constant");
  const auto& g = *lmo.geometry();
  const int d = g.dim();
  const int k = static_cast<int>(constraints.size());
  const double l = opt.lipschitz;
  const double r = cfg.r;
  const double root = std::sqrt(2.0 * opt.iterations);
  const double l_bar = 4.0 * (1.0 + 1.0 / r) * l + 2.0 / r;
  const double eta_xi = cfg.eta_xi.value_or(1.0 / (l_bar * root));
  const double eta_lambda = cfg.eta_lambda.value_or(l_bar / ((1.0 + 2.0 * std::sqrt(k)) * root));
  const double eta_mu = cfg.eta_mu.value_or(eta_lambda);
  const double lambda_radius = 2.0 * l * (1.0 + 1.0 / r);
  const double mu_radius = 2.0 / r;
  CountingLmo call{lmo};
  MemberPool pool;
  SolverResult out;

  Vec xi = domain_center(d, SlackDomain::Box);
  Vec lambda = project_ball(psi.gradient(xi), lambda_radius, BallNorm::L2);
  Vec mu = Vec::Zero(k);
  Vec sum = Vec::Zero(d);
  for (int t = 1; t <= opt.iterations; ++t) {
    try {
      LmoResult res = call(direction(lambda, Norm::L2, g));
      const Vec& c = res.confusion_estimate.entries;
      Vec grad_xi = psi.gradient(xi) - lambda;
      Vec phi(k);
      for (int j = 0; j < k; ++j) {
        const auto& fj = *constraints[static_cast<std::size_t>(j)];
        phi(j) = fj.value(xi);
        if (mu(j) != 0.0) grad_xi += mu(j) * fj.gradient(xi);
      }
      Vec xi_next = project_box(xi - eta_xi * grad_xi);
      lambda = project_ball(lambda + eta_lambda * (c - xi), lambda_radius, BallNorm::L2);
      if (k > 0) mu = project_ball(mu + eta_mu * phi, mu_radius, BallNorm::L1Nonneg);
      xi = std::move(xi_next);
      sum += c;
      pool.add(res);
      const Vec avg = sum / static_cast<double>(t);
      TraceRow row{t, call.calls, psi.value(avg), std::max(0.0, max_phi(constraints, avg)), lambda.norm(),
                   std::nullopt, mu.sum()};
      out.trace.rows.push_back(row);
    } catch (const Error& e) {
      throw detail::with_iteration(e, t);
    }
  }
  Vec w = Vec::Constant(pool.size(), 1.0 / pool.size());
  if (opt.prune && k > 0) w = prune_mixture(psi, constraints, pool.confusions, opt.inner).alpha;
  out.classifier = pool.mixture(w).compacted();
  out.confusion = pool.combine(w);
  out.lmo_calls = call.calls;
  return out;
}

}  // namespace

SolverResult con_gda(const ConfusionFunction& psi, const std::vector<FunctionPtr>& constraints,
                     const Lmo& lmo, const FeasibilityConfig& cfg, const ConGdaOptions& opt) {
  require_iterations(opt.iterations, 1);
  if (!opt.tune_steps) return con_gda_run(psi, constraints, lmo, cfg, opt);
  SolverResult best;
  double best_value = std::numeric_limits<double>::infinity();
  double best_violation = std::numeric_limits<double>::infinity();
  long calls = 0;
  for (double eta_xi : {0.001, 0.01, 0.1}) {
    for (double eta_prime : {0.001, 0.01, 0.1}) {
      FeasibilityConfig run_cfg = cfg;
      run_cfg.eta_xi = eta_xi;
      run_cfg.eta_lambda = eta_prime;
      run_cfg.eta_mu = eta_prime;
      SolverResult r = con_gda_run(psi, constraints, lmo, run_cfg, opt);
      calls += r.lmo_calls;
      const double v = psi.value(r.confusion);
      const double viol = std::max(0.0, max_phi(constraints, r.confusion));
      const bool better = (viol <= 0.0 && best_violation <= 0.0) ? v < best_value
                          : (viol <= 0.0) != (best_violation <= 0.0) ? viol <= 0.0
                                                                    : viol < best_violation;
      if (better) {
        best_value = v;
        best_violation = viol;
        best = std::move(r);
      }
    }
  }
  best.lmo_calls = calls;
  return best;
}

// ---------------------------------------------------------------------------
// ConEllipsoid

SolverResult con_ellipsoid(const ConfusionFunction& psi, const std::vector<FunctionPtr>& constraints,
                           const Lmo& lmo, const FeasibilityConfig& cfg,
                           const ConEllipsoidOptions& opt) {
  require_iterations(opt.iterations, 1);
  cfg.validate();
  const auto& g = *lmo.geometry();
  const int d = g.dim();
  const int k = static_cast<int>(constraints.size());
  const SlackDomain dom = g.slack_domain();
  CountingLmo call{lmo};
  MemberPool pool;
  SolverResult out;
  long start_calls = 0;

  if (k > 0) {
    FeasibleStart h0 = starting_point(constraints, lmo, cfg, "con_ellipsoid");
    start_calls = cfg.initial_feasible ? 0 : h0.lmo_calls;
    detail::add_mixture(pool, h0.classifier, h0.member_confusions);
  }

  EllipsoidState e = EllipsoidState::ball(d + k, opt.radius);
  double best = std::numeric_limits<double>::infinity();
  double last_violation = 0.0;
  for (int t = 0; t < opt.iterations; ++t) {
    try {
      const Vec z = e.center();
      const Vec lambda = z.head(d);
      const Vec mu = z.tail(k);
      Vec cut(d + k);
      if (z.norm() > opt.radius) {
        cut = -z;
      } else if (k > 0 && mu.minCoeff() < 0.0) {
        cut.head(d).setZero();
        cut.tail(k) = (-mu).cwiseMax(0.0);
      } else {
        LmoResult r = call(direction(lambda, Norm::Inf, g));
        pool.add(r);
        const Vec& c = r.confusion_estimate.entries;
        last_violation = std::max(0.0, max_phi(constraints, c));
        if (last_violation <= 0.0) best = std::min(best, psi.value(c));
        const Vec xi = minimize_xi(psi, lambda, mu, constraints, dom, opt.inner);
        cut.head(d) = c - xi;
        if (k > 0) cut.tail(k) = evaluate_all(constraints, xi);
      }
      if (cut.squaredNorm() > 0.0 && e.exhausted_along(cut)) break;
      if (cut.squaredNorm() > 0.0) e = jle(e, cut);
      TraceRow row{t + 1, call.calls + start_calls, best, std::nullopt, e.center().head(d).norm(),
                   e.log_volume(), k > 0 ? std::optional<double>(e.center().tail(k).cwiseMax(0.0).sum())
                                         : std::nullopt};
      if (k > 0) row.max_violation = last_violation;
      out.trace.rows.push_back(row);
    } catch (const Error& err) {
      throw detail::with_iteration(err, t + 1);
    }
  }
  const HullResult hull = minimize_over_hull(psi, pool.confusions, constraints, opt.inner);
  out.classifier = pool.mixture(hull.alpha).compacted();
  out.confusion = pool.combine(hull.alpha);
  out.lmo_calls = call.calls + start_calls;
  return out;
}

// ---------------------------------------------------------------------------
// ConBisection

SolverResult con_bisection(const RatioForm& psi, const std::vector<FunctionPtr>& constraints,
                           const Lmo& lmo, const FeasibilityConfig& cfg, const ConBisectionOptions& opt) {
  require_iterations(opt.iterations, 1);
  require_iterations(opt.inner_iterations, 1);
  cfg.validate();
  const auto& g = *lmo.geometry();
  SolverResult out;
  long calls = 0;

  RandomizedClassifier h;
  Vec c_h;
  if (constraints.empty()) {
    LmoResult r0 = lmo.solve(direction(g.fallback_direction(), Norm::L2, g));
    ++calls;
    h = RandomizedClassifier::single(r0.classifier);
    c_h = r0.confusion_estimate.entries;
  } else {
    FeasibleStart h0 = starting_point(constraints, lmo, cfg, "con_bisection");
    if (!cfg.initial_feasible) calls += h0.lmo_calls;
    h = h0.classifier;
    c_h = h0.confusion;
  }
  const double l_phi = constraint_lipschitz(constraints, g);

  double alpha = 0.0, beta = 1.0;
  out.brackets.emplace_back(alpha, beta);
  for (int t = 1; t <= opt.iterations; ++t) {
    try {
      const double gamma = 0.5 * (alpha + beta);
      const Vec coeffs = psi.numer - gamma * psi.denom;
      const LinearFunction shifted(coeffs, psi.numer_offset - gamma * psi.denom_offset, "shifted_ratio");
      ConGdaOptions inner;
      inner.iterations = opt.inner_iterations;
      inner.lipschitz = opt.lipschitz.value_or(std::max({coeffs.norm(), l_phi, 1e-12}));
      inner.prune = opt.prune;
      inner.inner = opt.inner;
      FeasibilityConfig sub = cfg;
      sub.initial_feasible.reset();
      SolverResult run = con_gda(shifted, constraints, lmo, sub, inner);
      calls += run.lmo_calls;
      if (psi.value(run.confusion) >= gamma) {
        alpha = gamma;
        if (opt.printed_assignment) {
          h = run.classifier;
          c_h = run.confusion;
        }
      } else {
        beta = gamma;
        if (!opt.printed_assignment) {
          h = run.classifier;
          c_h = run.confusion;
        }
      }
      out.brackets.emplace_back(alpha, beta);
      TraceRow row{t, calls, psi.value(c_h), std::max(0.0, max_phi(constraints, c_h)), std::nullopt,
                   std::nullopt, std::nullopt};
      out.trace.rows.push_back(row);
    } catch (const Error& e) {
      throw detail::with_iteration(e, t);
    }
  }
  out.classifier = h;
  out.confusion = c_h;
  out.lmo_calls = calls;
  return out;
}

}  // namespace confopt
