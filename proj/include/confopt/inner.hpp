#pragma once

// Projections and the small convex programs the outer solvers delegate to.

#include <vector>

#include "confopt/metrics.hpp"

namespace confopt {

/// Euclidean projection onto the probability simplex (sort and threshold).
Vec project_simplex(const Vec& v);

enum class BallNorm { L2, L1Nonneg };

/// L2: radial scaling onto {||x||_2 <= r}. L1Nonneg: projection onto
/// {x >= 0, ||x||_1 <= r}.
Vec project_ball(const Vec& v, double radius, BallNorm norm);

/// Clamp to [0, 1]^d.
Vec project_box(const Vec& v);
Vec project_domain(const Vec& v, SlackDomain domain);
/// Uniform point of the domain: 1/d on the simplex, 1/2 in the box.
Vec domain_center(int d, SlackDomain domain);

struct InnerConfig {
  int budget = 1000;
  double initial_step = 1.0;
  double penalty = 10.0;  // starting weight of the squared-hinge penalty
};

/// argmin over the domain of psi(xi) - <lambda, xi> + <mu, phi(xi)>.
/// `mu` may be empty (no constraint term). Throws NumericalFailure on a
/// non-finite objective.
Vec minimize_xi(const ConfusionFunction& psi, const Vec& lambda, const Vec& mu,
                const std::vector<FunctionPtr>& constraints, SlackDomain domain,
                const InnerConfig& cfg = {});

/// psi(xi) - <lambda, xi> + <mu, phi(xi)>
double xi_objective(const ConfusionFunction& psi, const Vec& lambda, const Vec& mu,
                    const std::vector<FunctionPtr>& constraints, const Vec& xi);

/// argmin <b, x> over {x in the domain : phi(x) <= 0} by penalty
/// continuation; the result is pulled toward the feasible `anchor` until it
/// satisfies the constraints.
Vec minimize_linear_feasible(const Vec& b, const std::vector<FunctionPtr>& constraints,
                             SlackDomain domain, const Vec& anchor, const InnerConfig& cfg = {});

/// Point of the domain minimizing sum_k max(phi_k + margin, 0)^2; returns the
/// first point found with phi <= -margin, else the least violating one.
Vec most_feasible_point(const std::vector<FunctionPtr>& constraints, int d, SlackDomain domain,
                        double margin, const InnerConfig& cfg = {});

struct HullResult {
  Vec alpha;
  double objective = 0.0;
  double max_violation = 0.0;
};

/// Weights alpha in the simplex minimizing psi(sum_t alpha_t C_t), subject to
/// phi(sum_t alpha_t C_t) <= 0 when constraints are given (penalty method with
/// a final feasibility repair when a feasible mixture is found).
HullResult minimize_over_hull(const ConfusionFunction& psi, const std::vector<Vec>& confusions,
                              const std::vector<FunctionPtr>& constraints = {},
                              const InnerConfig& cfg = {});

/// Linearized pruning: min sum_t alpha_t psi_t  s.t.  sum_t alpha_t phi_{k,t} <= 0.
/// `phi` is K x T. Solved exactly by a dense simplex; when nothing is feasible
/// the weights minimizing the largest violation are returned. `cfg` is unused.
HullResult prune_mixture(const Vec& psi_values, const Mat& phi_values, const InnerConfig& cfg = {});
HullResult prune_mixture(const ConfusionFunction& psi, const std::vector<FunctionPtr>& constraints,
                         const std::vector<Vec>& member_confusions, const InnerConfig& cfg = {});

}  // namespace confopt
