#include "confopt/solvers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>

#include <Eigen/Eigenvalues>

#include "solver_common.hpp"

namespace confopt {

using detail::CountingLmo;
using detail::direction;
using detail::MemberPool;
using detail::Norm;

namespace {

void write_field(std::ostream& os, const std::optional<double>& v) {
  if (v) os << *v;
}

void require_iterations(int t, int min = 1) {
  if (t < min) throw Error(ErrorCode::ConfigError, "iterations must be at least " + std::to_string(min));
}

}  // namespace

void SolverTrace::write_csv(std::ostream& os) const {
  const auto old_precision = os.precision(17);
  os << "iter,lmo_calls,objective,max_violation,dual_norm,log_volume\n";
  for (const auto& r : rows) {
    os << r.iter << ',' << r.lmo_calls << ',' << r.objective << ',';
    write_field(os, r.max_violation);
    os << ',';
    write_field(os, r.dual_norm);
    os << ',';
    write_field(os, r.log_volume);
    os << '\n';
  }
  os.precision(old_precision);
}

// ---------------------------------------------------------------------------
// Ellipsoids

EllipsoidState EllipsoidState::ball(int m, double a) {
  if (m < 1) throw Error(ErrorCode::ConfigError, "ellipsoid dimension must be positive");
  if (!(a > 0.0)) throw Error(ErrorCode::ConfigError, "ellipsoid radius must be positive");
  EllipsoidState e;
  e.center_ = Vec::Zero(m);
  e.factor_ = Mat::Identity(m, m) * a;
  e.log_volume_ = m * std::log(a);
  e.radius_ = a;
  return e;
}

EllipsoidState::EllipsoidState(Vec center, Mat shape, double radius) : center_(std::move(center)), radius_(radius) {
  if (shape.rows() != center_.size() || shape.cols() != center_.size()) {
    throw Error(ErrorCode::NumericalFailure, "ellipsoid shape does not match its center");
  }
  shape = 0.5 * (shape + shape.transpose());
  if (!shape.allFinite()) throw Error(ErrorCode::NumericalFailure, "ellipsoid shape is not finite");
  Eigen::SelfAdjointEigenSolver<Mat> es(shape);
  if (es.info() != Eigen::Success) {
    throw Error(ErrorCode::NumericalFailure, "eigendecomposition of the ellipsoid shape failed");
  }
  const Vec& ev = es.eigenvalues();
  if (!(ev.minCoeff() > 0.0)) throw Error(ErrorCode::NumericalFailure, "ellipsoid shape is not positive definite");
  factor_ = es.eigenvectors() * ev.cwiseSqrt().asDiagonal() * es.eigenvectors().transpose();
  log_volume_ = 0.5 * ev.array().log().sum();
}

bool EllipsoidState::contains(const Vec& x, double tol) const {
  const Vec z = factor_.partialPivLu().solve(x - center_);
  return z.squaredNorm() <= 1.0 + tol;
}

bool EllipsoidState::exhausted_along(const Vec& w) const {
  const double scale = factor_.norm() * w.norm();
  return (factor_.transpose() * w).norm() <= 1e-12 * scale;
}

// With L L^T = A and w~ = L^T w / ||L^T w||, the update is
//   c' = c + L w~ / (m + 1),   L' = L (s_a w~ w~^T + s_b (I - w~ w~^T))
// where s_a^2 = (m / (m + 1))^2 and s_b^2 = m^2 / (m^2 - 1).
EllipsoidState jle(const EllipsoidState& state, const Vec& w) {
  if (w.size() != state.dim()) throw Error(ErrorCode::LayoutMismatch, "cut direction has the wrong length");
  if (!w.allFinite()) throw Error(ErrorCode::NumericalFailure, "cut direction is not finite");
  if (w.squaredNorm() == 0.0) throw Error(ErrorCode::ZeroCutDirection, "cut direction is zero");
  const int m = state.dim();
  const Vec u = state.factor_.transpose() * w;
  const double nu = u.norm();
  if (!(nu > 0.0) || !std::isfinite(nu)) {
    throw Error(ErrorCode::NumericalFailure, "cut direction vanishes under the shape");
  }
  const Vec wt = u / nu;
  const double t = 1.0 / (m + 1);
  const double s_a = 1.0 - t;
  const double s_b = m > 1 ? (1.0 - t) / std::sqrt(1.0 - 2.0 * t) : 0.0;
  EllipsoidState next;
  next.radius_ = state.radius_;
  next.center_ = state.center_ + t * (state.factor_ * wt);
  const Vec lw = state.factor_ * wt;
  // L (s_b I + (s_a - s_b) w~ w~^T)
  next.factor_ = s_b * state.factor_ + (s_a - s_b) * lw * wt.transpose();
  next.log_volume_ = state.log_volume_ + std::log(s_a) + (m - 1) * (m > 1 ? std::log(s_b) : 0.0);
  if (!next.factor_.allFinite() || !next.center_.allFinite()) {
    throw Error(ErrorCode::NumericalFailure, "ellipsoid update is not finite");
  }
  return next;
}

// ---------------------------------------------------------------------------
// Frank-Wolfe

SolverResult frank_wolfe(const ConfusionFunction& psi, const Lmo& lmo, const FrankWolfeOptions& opt) {
  require_iterations(opt.iterations);
  const auto& g = *lmo.geometry();
  CountingLmo call{lmo};
  MemberPool pool;
  SolverResult out;

  LmoResult r0 = call(direction(g.fallback_direction(), Norm::Inf, g));
  pool.add(r0);
  Vec c = r0.confusion_estimate.entries;
  std::vector<double> gammas{1.0};

  for (int t = 1; t <= opt.iterations; ++t) {
    try {
      LmoResult r = call(direction(psi.gradient(c), Norm::Inf, g));
      const double gamma = 2.0 / (t + 1.0);
      c = (1.0 - gamma) * c + gamma * r.confusion_estimate.entries;
      pool.add(r);
      gammas.push_back(gamma);
      out.trace.rows.push_back({t, call.calls, psi.value(c), std::nullopt, std::nullopt, std::nullopt, std::nullopt});
    } catch (const Error& e) {
      throw detail::with_iteration(e, t);
    }
  }

  // w_t = gamma_t prod_{s > t} (1 - gamma_s)
  Vec w(pool.size());
  double tail = 1.0;
  for (int t = pool.size() - 1; t >= 0; --t) {
    w(t) = gammas[static_cast<std::size_t>(t)] * tail;
    tail *= 1.0 - gammas[static_cast<std::size_t>(t)];
  }
  out.classifier = pool.mixture(w);
  out.confusion = c;
  out.lmo_calls = call.calls;
  return out;
}

// ---------------------------------------------------------------------------
// GDA

namespace {

SolverResult gda_run(const ConfusionFunction& psi, const Lmo& lmo, const GdaOptions& opt, double eta,
                     double eta_prime) {
  const auto& g = *lmo.geometry();
  const int d = g.dim();
  const SlackDomain dom = g.slack_domain();
  const double radius = opt.lambda_radius.value_or(2.0 * opt.lipschitz);
  CountingLmo call{lmo};
  MemberPool pool;
  SolverResult out;

  Vec xi = domain_center(d, dom);
  Vec lambda = Vec::Zero(d);
  Vec sum = Vec::Zero(d);
  for (int t = 0; t < opt.iterations; ++t) {
    try {
      LmoResult r = call(direction(lambda, Norm::Inf, g));
      const Vec& c = r.confusion_estimate.entries;
      Vec xi_next = project_domain(xi - eta * (psi.gradient(xi) - lambda), dom);
      lambda = project_ball(lambda + eta_prime * (c - xi), radius, BallNorm::L2);
      xi = std::move(xi_next);
      sum += c;
      pool.add(r);
      TraceRow row{t + 1, call.calls, psi.value(sum / (t + 1.0)), std::nullopt, lambda.norm(),
                   std::nullopt, std::nullopt};
      out.trace.rows.push_back(row);
    } catch (const Error& e) {
      throw detail::with_iteration(e, t + 1);
    }
  }
  Vec w = Vec::Constant(pool.size(), 1.0 / pool.size());
  if (opt.hull_weights) w = minimize_over_hull(psi, pool.confusions, {}, opt.inner).alpha;
  out.classifier = pool.mixture(w);
  out.confusion = pool.combine(w);
  out.lmo_calls = call.calls;
  return out;
}

}  // namespace

SolverResult gda(const ConfusionFunction& psi, const Lmo& lmo, const GdaOptions& opt) {
  require_iterations(opt.iterations);
  if (!(opt.lipschitz > 0.0)) throw Error(ErrorCode::ConfigError, "gda needs a positive Lipschitz constant");
  const double root = std::sqrt(2.0 * opt.iterations);
  const double l = opt.lipschitz;
  if (!opt.tune_steps) {
    return gda_run(psi, lmo, opt, opt.eta.value_or(1.0 / (4.0 * l * root)),
                   opt.eta_prime.value_or(4.0 * l / root));
  }
  SolverResult best;
  double best_value = std::numeric_limits<double>::infinity();
  long calls = 0;
  for (double eta : {0.001, 0.01, 0.1}) {
    for (double eta_prime : {0.001, 0.01, 0.1}) {
      SolverResult r = gda_run(psi, lmo, opt, eta, eta_prime);
      calls += r.lmo_calls;
      const double v = psi.value(r.confusion);
      if (v < best_value) {
        best_value = v;
        best = std::move(r);
      }
    }
  }
  best.lmo_calls = calls;
  return best;
}

// ---------------------------------------------------------------------------
// Ellipsoid

SolverResult ellipsoid(const ConfusionFunction& psi, const Lmo& lmo, const EllipsoidOptions& opt) {
  require_iterations(opt.iterations);
  const auto& g = *lmo.geometry();
  const int d = g.dim();
  const SlackDomain dom = g.slack_domain();
  CountingLmo call{lmo};
  MemberPool pool;
  SolverResult out;

  EllipsoidState e = EllipsoidState::ball(d, opt.radius);
  double best = std::numeric_limits<double>::infinity();
  for (int t = 0; t < opt.iterations; ++t) {
    try {
      const Vec lambda = e.center();
      Vec cut;
      if (lambda.norm() > opt.radius) {
        cut = -lambda;
      } else {
        LmoResult r = call(direction(lambda, Norm::Inf, g));
        pool.add(r);
        best = std::min(best, psi.value(r.confusion_estimate.entries));
        const Vec xi = minimize_xi(psi, lambda, Vec(), {}, dom, opt.inner);
        cut = r.confusion_estimate.entries - xi;
      }
      // every trace row is a cut; stop before a cut that cannot be represented
      if (cut.squaredNorm() > 0.0 && e.exhausted_along(cut)) break;
      if (cut.squaredNorm() > 0.0) e = jle(e, cut);
      out.trace.rows.push_back({t + 1, call.calls, best, std::nullopt, e.center().norm(), e.log_volume(),
                                std::nullopt});
    } catch (const Error& err) {
      throw detail::with_iteration(err, t + 1);
    }
  }
  const HullResult hull = minimize_over_hull(psi, pool.confusions, {}, opt.inner);
  out.classifier = pool.mixture(hull.alpha);
  out.confusion = pool.combine(hull.alpha);
  out.lmo_calls = call.calls;
  return out;
}

// ---------------------------------------------------------------------------
// Bisection

SolverResult bisection(const RatioForm& psi, const Lmo& lmo, const BisectionOptions& opt) {
  require_iterations(opt.iterations);
  const auto& g = *lmo.geometry();
  CountingLmo call{lmo};
  SolverResult out;

  // arbitrary starting classifier: the 0-1 plug-in
  LmoResult h = call(direction(g.fallback_direction(), Norm::L2, g));
  double alpha = 0.0, beta = 1.0;
  out.brackets.emplace_back(alpha, beta);
  for (int t = 1; t <= opt.iterations; ++t) {
    try {
      const double gamma = 0.5 * (alpha + beta);
      LmoResult r = call(direction(psi.numer - gamma * psi.denom, Norm::L2, g));
      if (psi.value(r.confusion_estimate.entries) <= gamma) {
        beta = gamma;
        h = std::move(r);
      } else {
        alpha = gamma;
      }
      out.brackets.emplace_back(alpha, beta);
      out.trace.rows.push_back({t, call.calls, psi.value(h.confusion_estimate.entries), std::nullopt,
                                std::nullopt, std::nullopt, std::nullopt});
    } catch (const Error& e) {
      throw detail::with_iteration(e, t);
    }
  }
  out.classifier = RandomizedClassifier::single(h.classifier);
  out.confusion = h.confusion_estimate.entries;
  out.lmo_calls = call.calls;
  return out;
}

}  // namespace confopt
