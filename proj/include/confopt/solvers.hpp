#pragma once

// Iterative solvers over the achievable confusion set. Every solver talks to
// the data only through an Lmo and returns a randomized classifier together
// with a per-iteration trace.

#include <iosfwd>
#include <optional>
#include <utility>
#include <vector>

#include "confopt/inner.hpp"
#include "confopt/metrics.hpp"
#include "confopt/oracle.hpp"

namespace confopt {

struct TraceRow {
  int iter = 0;
  long lmo_calls = 0;
  double objective = 0.0;
  std::optional<double> max_violation;
  std::optional<double> dual_norm;
  std::optional<double> log_volume;
  std::optional<double> mu_norm;  // ||mu||_1, constrained solvers
};

struct SolverTrace {
  std::vector<TraceRow> rows;

  /// Columns iter,lmo_calls,objective,max_violation,dual_norm,log_volume;
  /// inapplicable fields are left empty.
  void write_csv(std::ostream& os) const;
};

struct SolverResult {
  RandomizedClassifier classifier;
  Vec confusion;  // training-sample estimate for the returned classifier
  SolverTrace trace;
  long lmo_calls = 0;
  /// Bisection solvers: (alpha^t, beta^t) for t = 0..T.
  std::vector<std::pair<double, double>> brackets;
  /// SplitFW: ||C^t - F^t||^2 per iteration and the largest max_k phi_k(F^t).
  std::vector<double> residuals;
  double f_violation = 0.0;
};

class EllipsoidState {
 public:
  /// Ball of radius a around the origin in dimension m.
  static EllipsoidState ball(int m, double a);
  /// Throws NumericalFailure when `shape` is not symmetric positive definite.
  EllipsoidState(Vec center, Mat shape, double radius);

  int dim() const { return static_cast<int>(center_.size()); }
  const Vec& center() const { return center_; }
  /// A = L L^T, formed on demand.
  Mat shape() const { return factor_ * factor_.transpose(); }
  /// The factor L; updates act on it directly so A stays positive definite
  /// however elongated the ellipsoid becomes.
  const Mat& shape_sqrt() const { return factor_; }
  double radius() const { return radius_; }

  /// 0.5 * log det A (log-volume up to the unit-ball constant).
  double log_volume() const { return log_volume_; }
  /// (x - c)^T A^{-1} (x - c) <= 1 + tol
  bool contains(const Vec& x, double tol = 0.0) const;
  /// True once the width along w, sqrt(w^T A w) / ||w||, is below the
  /// relative precision of the factor; a cut along w can no longer move the
  /// center by a representable amount. The solvers stop there.
  bool exhausted_along(const Vec& w) const;

 private:
  friend EllipsoidState jle(const EllipsoidState& state, const Vec& w);
  EllipsoidState() = default;

  Vec center_;
  Mat factor_;
  double log_volume_ = 0.0;
  double radius_ = 1.0;
};

/// Minimum-volume ellipsoid containing E(state) ∩ {x : (x - c)^T w >= 0}.
/// Errors: ZeroCutDirection for w = 0, NumericalFailure on a degenerate shape.
EllipsoidState jle(const EllipsoidState& state, const Vec& w);

struct FrankWolfeOptions {
  int iterations = 5000;
};

SolverResult frank_wolfe(const ConfusionFunction& psi, const Lmo& lmo,
                         const FrankWolfeOptions& opt = {});

struct GdaOptions {
  int iterations = 5000;
  double lipschitz = 1.0;
  std::optional<double> lambda_radius;  // default 2L
  std::optional<double> eta;            // default 1/(4L sqrt(2T))
  std::optional<double> eta_prime;      // default 4L/sqrt(2T)
  /// Re-weight the members by minimize_over_hull instead of uniform weights.
  bool hull_weights = false;
  /// Pick (eta, eta') from {0.001, 0.01, 0.1}^2 by final training objective.
  bool tune_steps = false;
  InnerConfig inner;
};

SolverResult gda(const ConfusionFunction& psi, const Lmo& lmo, const GdaOptions& opt = {});

struct EllipsoidOptions {
  int iterations = 1000;
  double radius = 1000.0;
  InnerConfig inner;
};

SolverResult ellipsoid(const ConfusionFunction& psi, const Lmo& lmo, const EllipsoidOptions& opt = {});

struct BisectionOptions {
  int iterations = 20;
};

/// Returns a single deterministic member; `brackets` holds the search history.
SolverResult bisection(const RatioForm& psi, const Lmo& lmo, const BisectionOptions& opt = {});

// ---------------------------------------------------------------------------
// Constrained solvers

/// A classifier believed to satisfy the constraints, with the training
/// confusion of each member.
struct FeasibleStart {
  RandomizedClassifier classifier;
  std::vector<Vec> member_confusions;
  Vec confusion;
  long lmo_calls = 0;
  bool strictly_feasible = false;  // max phi <= -margin on the training sample
};

struct FeasibilityConfig {
  double r = 0.05;
  double zeta = 10.0;
  std::optional<double> eta_lambda;
  std::optional<double> eta_mu;
  std::optional<double> eta_xi;
  /// Classifier with phi(C) <= -r; built automatically when absent.
  std::optional<FeasibleStart> initial_feasible;

  void validate() const;
};

struct SplitFwOptions {
  int iterations = 10000;
  bool line_search = false;  // 101-point grid over [0, 1] instead of 2/(t+2)
  /// Budget of each penalized linear solve over the constrained slack set.
  InnerConfig inner{200, 1.0, 10.0};
};

SolverResult split_fw(const ConfusionFunction& psi, const std::vector<FunctionPtr>& constraints,
                      const Lmo& lmo, const FeasibilityConfig& cfg = {},
                      const SplitFwOptions& opt = {});

struct ConGdaOptions {
  int iterations = 10000;
  double lipschitz = 1.0;
  bool prune = true;
  /// Pick (eta_xi, eta') from {0.001, 0.01, 0.1}^2 with eta_lambda = eta_mu
  /// = eta': least training objective among runs meeting the constraints,
  /// else least violation.
  bool tune_steps = false;
  InnerConfig inner;
};

SolverResult con_gda(const ConfusionFunction& psi, const std::vector<FunctionPtr>& constraints,
                     const Lmo& lmo, const FeasibilityConfig& cfg = {},
                     const ConGdaOptions& opt = {});

struct ConEllipsoidOptions {
  int iterations = 1000;
  double radius = 1000.0;
  InnerConfig inner;
};

SolverResult con_ellipsoid(const ConfusionFunction& psi,
                           const std::vector<FunctionPtr>& constraints, const Lmo& lmo,
                           const FeasibilityConfig& cfg = {},
                           const ConEllipsoidOptions& opt = {});

struct ConBisectionOptions {
  int iterations = 10;
  int inner_iterations = 4000;
  /// Lipschitz constant for the inner runs; default max(||A - gamma B||, constraint L).
  std::optional<double> lipschitz;
  /// Take h = g on the branch that raises alpha, exactly as in the printed
  /// listing. Off by default: the classifier is updated when psi(C) < gamma.
  bool printed_assignment = false;
  bool prune = true;
  InnerConfig inner;
};

SolverResult con_bisection(const RatioForm& psi, const std::vector<FunctionPtr>& constraints,
                           const Lmo& lmo, const FeasibilityConfig& cfg = {},
                           const ConBisectionOptions& opt = {});

/// 0-1 plug-in when it satisfies phi <= -margin; otherwise Frank-Wolfe on
/// sum_k max(phi_k + margin, 0)^2 for at most `budget` oracle calls.
FeasibleStart find_feasible_start(const std::vector<FunctionPtr>& constraints, const Lmo& lmo,
                                  double margin, int budget = 500);

/// Largest gradient norm of the constraint functions over a seeded sample of
/// the slack domain (exact for linear constraints).
double constraint_lipschitz(const std::vector<FunctionPtr>& constraints,
                            const ConfusionGeometry& g, int samples = 1000);

}  // namespace confopt
