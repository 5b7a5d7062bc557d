#pragma once

// Exhaustive reference oracles for small problems. Used by tests and the
// `oracle` subcommand only; nothing in the solver path depends on them.

#include <cstdint>
#include <vector>

#include "confopt/data.hpp"
#include "confopt/metrics.hpp"
#include "confopt/oracle.hpp"

namespace confopt {

/// Finite-support distribution with exact class probabilities.
struct DiscreteDistribution {
  Mat points;               // K x q, informational
  Vec mass;                 // K, sums to 1
  Mat eta;                  // K x n, rows in the simplex
  std::vector<int> groups;  // empty or K entries in [0, n_groups)
  int n_classes = 2;
  int n_groups = 1;

  int size() const { return static_cast<int>(mass.size()); }
  int group(int k) const { return groups.empty() ? 0 : groups[static_cast<std::size_t>(k)]; }
  void validate(double tol = 1e-9) const;
  ClassMasses masses() const;

  /// Population raw confusion (m*n*n) of a deterministic assignment.
  Vec raw_confusion(const std::vector<int>& assignment) const;

  /// Weighted dataset with one row per (support point, class); feature 0 is
  /// the support index so that table_model() reproduces the exact eta.
  Dataset to_dataset() const;
  ModelPtr table_model() const;

  static DiscreteDistribution from_support(const DiscreteSupport& s);
  /// Random instance: Dirichlet(1) masses and eta rows.
  static DiscreteDistribution random(int support, int n_classes, std::uint64_t seed, int n_groups = 1);
};

struct EnumerationResult {
  std::vector<int> assignment;
  Vec confusion;  // layout coordinates
  double value = 0.0;
};

/// Exact minimizer of <loss, C> over all deterministic assignments; ties go
/// to the lexicographically smallest assignment.
/// Errors: BudgetExceeded when n^K > 1e7.
EnumerationResult enumerate_lmo(const Vec& loss, const DiscreteDistribution& dist,
                                const ConfusionGeometry& g);

/// Minimizer of an arbitrary psi over deterministic assignments (the optimum
/// over randomized classifiers for ratio-of-linear psi, attained at a vertex).
EnumerationResult enumerate_minimum(const ConfusionFunction& psi, const DiscreteDistribution& dist,
                                    const ConfusionGeometry& g);

/// Lmo backed by enumerate_lmo; the returned classifier is the exact-eta
/// plug-in rule for the same loss.
class EnumerationLmo final : public Lmo {
 public:
  EnumerationLmo(DiscreteDistribution dist, GeometryPtr geometry);
  LmoResult solve(const Vec& loss) const override;
  GeometryPtr geometry() const override { return geometry_; }

 private:
  DiscreteDistribution dist_;
  GeometryPtr geometry_;
  ModelPtr model_;
};

/// Points at which weighted-argmax classifiers are scored: exact for a
/// discrete distribution, a Rao-Blackwellized Monte-Carlo sample otherwise
/// (each draw contributes its eta row instead of its label).
struct EvalSet {
  Mat eta;                  // N x n
  std::vector<int> groups;  // empty or N
  Vec weight;               // N, sums to 1
  int n_classes = 2;
  int n_groups = 1;

  static EvalSet from(const DiscreteDistribution& d);
  static EvalSet monte_carlo(const SyntheticSpec& spec, int samples, std::uint64_t seed);
  int size() const { return static_cast<int>(weight.size()); }
  EvalSet head(int rows) const;

  /// Parameter count of the weighted-argmax family: n_groups * (n_classes - 1).
  int family_dim() const { return n_groups * (n_classes - 1); }
  /// Raw confusion of h(x) = argmax_i w_{a,i} eta_i(x) with w_{a,0} = 1 and
  /// the remaining weights read from theta; ties go to the larger index.
  Vec raw_confusion(const Vec& theta) const;
};

struct GridSpec {
  double max = 10.0;
  double step = 0.02;
  /// Coarse pass used when the full grid is too expensive to score exactly.
  double coarse_step = 0.1;
  int coarse_rows = 100000;
  int top_k = 5;
  double exhaustive_budget = 2e9;  // grid points x evaluation rows
};

struct GridResult {
  Vec theta;
  double value = 0.0;
  Vec confusion;  // layout coordinates
  long evaluated = 0;
};

/// Best weighted-argmax classifier on a regular grid over [0, max]^D with
/// D = family_dim() <= 2. Errors: BudgetExceeded when D > 2.
GridResult grid_bayes(const ConfusionFunction& psi, const ConfusionGeometry& g, const EvalSet& set,
                      const GridSpec& spec = {});

struct MixtureGridSpec {
  double max = 10.0;
  double step = 0.25;
  int mix_points = 101;
  double tol = 1e-6;
  /// Local pattern search around the best pair at step/4, step/16.
  bool refine = true;
};

struct ConstrainedGridResult {
  Vec theta1, theta2;
  double mix = 1.0;  // weight on theta1
  double value = 0.0;
  Vec confusion;
};

/// Best feasible mixture of two weighted-argmax classifiers.
/// Errors: InfeasibleAtGridResolution, BudgetExceeded when D > 2.
ConstrainedGridResult constrained_grid_optimum(const ConfusionFunction& psi,
                                               const std::vector<FunctionPtr>& constraints,
                                               const ConfusionGeometry& g, const EvalSet& set,
                                               const MixtureGridSpec& spec = {});

}  // namespace confopt
