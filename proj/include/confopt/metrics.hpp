#pragma once

// Confusion-matrix representations, performance metrics and constraint
// functions.
//
// Every confusion matrix is handled as a flat vector `v` in some layout.
// The raw representation is the group-stacked matrix list
// [vec(C^0), ..., vec(C^{m-1})] with entry (a, i, j) at a*n*n + i*n + j,
// i the true class and j the predicted class. A layout is a linear map
// v = M * raw; metrics read v back through the (partial) affine
// reconstruction raw = J * v + o that the layout admits.

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "confopt/error.hpp"

namespace confopt {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Floor applied to denominators (recalls, row/column sums) of ratio metrics.
inline constexpr double kClampFloor = 1e-9;

enum class Representation { Full, DiagonalNormalized, GroupStacked, GeneralizedLinear };

std::string_view to_string(Representation r);
Representation representation_from_string(std::string_view s);

struct ConfusionLayout {
  int n_classes = 2;
  int n_groups = 1;
  Representation representation = Representation::Full;
  /// GeneralizedLinear only: one coefficient vector of length raw_dim() per coordinate.
  std::vector<Vec> maps;

  int dim() const;
  int raw_dim() const { return n_groups * n_classes * n_classes; }
  int raw_index(int group, int true_class, int predicted) const {
    return (group * n_classes + true_class) * n_classes + predicted;
  }
  void validate() const;

  static ConfusionLayout full(int n_classes);
  static ConfusionLayout diagonal_normalized(int n_classes, int n_groups = 1);
  static ConfusionLayout group_stacked(int n_classes, int n_groups);
  static ConfusionLayout generalized(int n_classes, int n_groups, std::vector<Vec> maps);
};

/// Class priors and group/class masses of the data distribution.
struct ClassMasses {
  Vec priors;         // pi_i, length n
  Mat group_masses;   // mu_{a,i}, m x n; for m == 1 equal to priors

  static ClassMasses from_priors(const Vec& priors);
  static ClassMasses from_group_masses(const Mat& group_masses);
  int n_groups() const { return static_cast<int>(group_masses.rows()); }
  Vec group_totals() const { return group_masses.rowwise().sum(); }
};

struct ConfusionVector {
  ConfusionLayout layout;
  Vec entries;

  /// Throws InvalidData when the entries violate the layout's range invariants.
  void validate(double tol = 1e-9) const;
};

/// Feasible domain for slack variables in the layout: the probability
/// simplex for full-matrix layouts, the unit box for normalized diagonals.
enum class SlackDomain { Simplex, Box };

/// Layout plus class masses: everything needed to interpret a layout vector.
class ConfusionGeometry {
 public:
  ConfusionGeometry(ConfusionLayout layout, ClassMasses masses);

  const ConfusionLayout& layout() const { return layout_; }
  const ClassMasses& masses() const { return masses_; }
  int dim() const { return layout_.dim(); }
  int n_classes() const { return layout_.n_classes; }
  int n_groups() const { return layout_.n_groups; }

  const Mat& forward() const { return forward_; }
  Vec to_layout(const Vec& raw) const { return forward_ * raw; }
  Vec loss_to_raw(const Vec& loss) const { return forward_.transpose() * loss; }

  bool raw_available(int raw_index) const { return raw_available_[raw_index]; }
  bool has_full_raw() const;
  /// Affine reconstruction of raw entries; rows flagged unavailable are zero.
  const Mat& raw_jacobian() const { return raw_jacobian_; }
  const Vec& raw_offset() const { return raw_offset_; }
  Vec reconstruct_raw(const Vec& v) const { return raw_jacobian_ * v + raw_offset_; }

  SlackDomain slack_domain() const;
  /// Layout-space direction equivalent to the 0-1 loss.
  Vec fallback_direction() const;
  ConfusionVector wrap(const Vec& v) const { return {layout_, v}; }

 private:
  ConfusionLayout layout_;
  ClassMasses masses_;
  Mat forward_;
  Mat raw_jacobian_;
  Vec raw_offset_;
  std::vector<bool> raw_available_;
};

using GeometryPtr = std::shared_ptr<const ConfusionGeometry>;

/// Scalar function of a layout vector with a (sub)gradient.
class ConfusionFunction {
 public:
  virtual ~ConfusionFunction() = default;
  virtual double value(const Vec& v) const = 0;
  virtual Vec gradient(const Vec& v) const = 0;
  virtual std::string name() const = 0;
};

using FunctionPtr = std::shared_ptr<const ConfusionFunction>;

/// <a, v> + offset
class LinearFunction final : public ConfusionFunction {
 public:
  LinearFunction(Vec coeffs, double offset, std::string name = "linear")
      : coeffs_(std::move(coeffs)), offset_(offset), name_(std::move(name)) {}
  double value(const Vec& v) const override { return coeffs_.dot(v) + offset_; }
  Vec gradient(const Vec&) const override { return coeffs_; }
  std::string name() const override { return name_; }
  const Vec& coeffs() const { return coeffs_; }
  double offset() const { return offset_; }

 private:
  Vec coeffs_;
  double offset_;
  std::string name_;
};

// ---------------------------------------------------------------------------
// Metrics

enum class MetricKind {
  ZeroOne,
  Balanced,
  HMean,
  GMean,
  QMean,
  MicroF1,
  MacroF1,
  MinMax,
  LinearCustom,
  RatioOfLinear,
};

enum class Smoothness { SmoothConvex, NonsmoothConvex, RatioOfLinear, Linear, NonConvex };

std::string_view to_string(MetricKind k);
std::string_view to_string(Smoothness s);
MetricKind metric_kind_from_string(std::string_view s);

struct Metric {
  MetricKind kind = MetricKind::ZeroOne;
  int default_class = 0;  // MicroF1
  Vec coeffs;             // LinearCustom, in layout coordinates
  Vec numer;              // RatioOfLinear numerator, layout coordinates
  Vec denom;              // RatioOfLinear denominator, layout coordinates
  std::optional<double> lipschitz_hint;

  Smoothness smoothness() const;
  bool convex() const;

  static Metric of(MetricKind kind) {
    Metric m;
    m.kind = kind;
    return m;
  }
  static Metric micro_f1(int default_class = 0);
  static Metric linear(Vec coeffs);
  static Metric ratio(Vec numer, Vec denom);
};

/// psi(v) = (<a, v> + a0) / (<b, v> + b0)
struct RatioForm {
  Vec numer;
  double numer_offset = 0.0;
  Vec denom;
  double denom_offset = 0.0;

  double value(const Vec& v) const;
};

/// Ratio-of-linear representation of MicroF1/RatioOfLinear/linear metrics.
RatioForm ratio_form(const Metric& m, const ConfusionGeometry& g);

FunctionPtr bind_metric(const Metric& m, GeometryPtr geometry);

double evaluate_metric(const Metric& m, const ConfusionVector& c, const ClassMasses& masses);
Vec gradient_metric(const Metric& m, const ConfusionVector& c, const ClassMasses& masses);

/// Lipschitz constant: the hint if set, ||coeffs||_2 for linear metrics,
/// otherwise the largest gradient norm over a seeded random interior sample.
double lipschitz_estimate(const Metric& m, GeometryPtr geometry, int samples = 10000);

// ---------------------------------------------------------------------------
// Constraints

enum class ConstraintKind {
  ClassPrecision,
  CoverageBand,
  QuantificationKLD,
  DemographicParity,
  EqualOpportunity,
  EqualizedOdds,
  LinearCustom,
};

std::string_view to_string(ConstraintKind k);
ConstraintKind constraint_kind_from_string(std::string_view s);

struct Constraint {
  ConstraintKind kind = ConstraintKind::CoverageBand;
  int class_index = 0;        // ClassPrecision
  double tau = 0.0;           // ClassPrecision threshold
  std::optional<Vec> target;  // CoverageBand; defaults to the class priors
  double slack = 0.01;
  Vec coeffs;                 // LinearCustom, layout coordinates
  double bound = 0.0;         // LinearCustom: <coeffs, v> - bound <= 0
  std::optional<double> lipschitz_hint;

  static Constraint precision(int cls, double tau);
  static Constraint coverage(double slack, std::optional<Vec> target = std::nullopt);
  static Constraint kld(double slack);
  static Constraint demographic_parity(double slack);
  static Constraint equal_opportunity(double slack = 0.05);
  static Constraint equalized_odds(double slack);
  static Constraint linear(Vec coeffs, double bound);
};

/// Expands constraints into one-sided scalar functions phi_k(v) <= 0.
std::vector<FunctionPtr> expand_constraints(const std::vector<Constraint>& cs, GeometryPtr geometry);

Vec evaluate_constraints(const std::vector<Constraint>& cs, const ConfusionVector& c,
                         const ClassMasses& masses);
Vec subgradient_constraint(const std::vector<Constraint>& cs, int k, const ConfusionVector& c,
                           const ClassMasses& masses);

/// Values of bound functions at v.
Vec evaluate_all(const std::vector<FunctionPtr>& fs, const Vec& v);
/// max(0, max_k phi_k(v)); 0 for an empty list.
double max_violation(const std::vector<FunctionPtr>& fs, const Vec& v);

}  // namespace confopt
