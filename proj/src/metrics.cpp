#include "confopt/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

namespace confopt {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::DegenerateDenominator: return "DegenerateDenominator";
    case ErrorCode::LayoutMismatch: return "LayoutMismatch";
    case ErrorCode::EmptySample: return "EmptySample";
    case ErrorCode::GroupOutOfRange: return "GroupOutOfRange";
    case ErrorCode::DegenerateLoss: return "DegenerateLoss";
    case ErrorCode::InvalidData: return "InvalidData";
    case ErrorCode::NumericalFailure: return "NumericalFailure";
    case ErrorCode::ZeroCutDirection: return "ZeroCutDirection";
    case ErrorCode::BudgetExceeded: return "BudgetExceeded";
    case ErrorCode::InfeasibleAtGridResolution: return "InfeasibleAtGridResolution";
    case ErrorCode::SchemaError: return "SchemaError";
    case ErrorCode::ConfigError: return "ConfigError";
  }
  return "Unknown";
}

std::string_view to_string(Representation r) {
  switch (r) {
    case Representation::Full: return "Full";
    case Representation::DiagonalNormalized: return "DiagonalNormalized";
    case Representation::GroupStacked: return "GroupStacked";
    case Representation::GeneralizedLinear: return "GeneralizedLinear";
  }
  return "Full";
}

Representation representation_from_string(std::string_view s) {
  for (auto r : {Representation::Full, Representation::DiagonalNormalized,
                 Representation::GroupStacked, Representation::GeneralizedLinear}) {
    if (s == to_string(r)) return r;
  }
  throw Error(ErrorCode::ConfigError, "unknown layout '" + std::string(s) + "'");
}

// ---------------------------------------------------------------------------
// Layout

int ConfusionLayout::dim() const {
  switch (representation) {
    case Representation::Full:
    case Representation::GroupStacked: return raw_dim();
    case Representation::DiagonalNormalized: return n_groups * n_classes;
    case Representation::GeneralizedLinear: return static_cast<int>(maps.size());
  }
  return raw_dim();
}

void ConfusionLayout::validate() const {
  if (n_classes < 1 || n_groups < 1) {
    throw Error(ErrorCode::LayoutMismatch, "layout needs n_classes >= 1 and n_groups >= 1");
  }
  if (representation == Representation::GeneralizedLinear) {
    if (maps.empty()) throw Error(ErrorCode::LayoutMismatch, "generalized layout without maps");
    for (const auto& m : maps) {
      if (m.size() != raw_dim()) {
        throw Error(ErrorCode::LayoutMismatch, "linear map length must equal n_groups*n^2");
      }
    }
  }
}

ConfusionLayout ConfusionLayout::full(int n_classes) {
  return {n_classes, 1, Representation::Full, {}};
}
ConfusionLayout ConfusionLayout::diagonal_normalized(int n_classes, int n_groups) {
  return {n_classes, n_groups, Representation::DiagonalNormalized, {}};
}
ConfusionLayout ConfusionLayout::group_stacked(int n_classes, int n_groups) {
  return {n_classes, n_groups, Representation::GroupStacked, {}};
}
ConfusionLayout ConfusionLayout::generalized(int n_classes, int n_groups, std::vector<Vec> maps) {
  ConfusionLayout l{n_classes, n_groups, Representation::GeneralizedLinear, std::move(maps)};
  l.validate();
  return l;
}

ClassMasses ClassMasses::from_priors(const Vec& priors) {
  ClassMasses m;
  m.priors = priors;
  m.group_masses = priors.transpose();
  return m;
}

ClassMasses ClassMasses::from_group_masses(const Mat& group_masses) {
  ClassMasses m;
  m.group_masses = group_masses;
  m.priors = group_masses.colwise().sum().transpose();
  return m;
}

void ConfusionVector::validate(double tol) const {
  if (entries.size() != layout.dim()) {
    throw Error(ErrorCode::LayoutMismatch, "confusion vector length does not match layout");
  }
  if (!entries.allFinite()) throw Error(ErrorCode::InvalidData, "non-finite confusion entry");
  switch (layout.representation) {
    case Representation::Full:
    case Representation::GroupStacked:
      if (entries.minCoeff() < -tol || std::abs(entries.sum() - 1.0) > tol) {
        throw Error(ErrorCode::InvalidData, "full confusion must be nonnegative and sum to 1");
      }
      break;
    case Representation::DiagonalNormalized:
      if (entries.minCoeff() < -tol || entries.maxCoeff() > 1.0 + tol) {
        throw Error(ErrorCode::InvalidData, "normalized diagonal entries must lie in [0,1]");
      }
      break;
    case Representation::GeneralizedLinear: break;
  }
}

// ---------------------------------------------------------------------------
// Geometry

ConfusionGeometry::ConfusionGeometry(ConfusionLayout layout, ClassMasses masses)
    : layout_(std::move(layout)), masses_(std::move(masses)) {
  layout_.validate();
  const int n = layout_.n_classes;
  const int m = layout_.n_groups;
  const int raw = layout_.raw_dim();
  const int d = layout_.dim();

  if (masses_.priors.size() == 0 && masses_.group_masses.size() > 0) {
    masses_.priors = masses_.group_masses.colwise().sum().transpose();
  }
  if (masses_.group_masses.size() == 0 && masses_.priors.size() > 0 && m == 1) {
    masses_.group_masses = masses_.priors.transpose();
  }
  if (masses_.priors.size() != 0 && masses_.priors.size() != n) {
    throw Error(ErrorCode::LayoutMismatch, "priors length must equal n_classes");
  }
  const bool have_group_masses =
      masses_.group_masses.rows() == m && masses_.group_masses.cols() == n;

  forward_ = Mat::Zero(d, raw);
  raw_jacobian_ = Mat::Zero(raw, d);
  raw_offset_ = Vec::Zero(raw);
  raw_available_.assign(raw, false);

  switch (layout_.representation) {
    case Representation::Full:
    case Representation::GroupStacked:
      forward_ = Mat::Identity(raw, raw);
      raw_jacobian_ = Mat::Identity(raw, raw);
      raw_available_.assign(raw, true);
      break;
    case Representation::DiagonalNormalized: {
      if (!have_group_masses) {
        throw Error(ErrorCode::LayoutMismatch,
                    "normalized diagonal layout needs class (and group) masses");
      }
      for (int a = 0; a < m; ++a) {
        for (int i = 0; i < n; ++i) {
          const int row = a * n + i;
          const double mass = masses_.group_masses(a, i);
          forward_(row, layout_.raw_index(a, i, i)) = 1.0 / std::max(mass, kClampFloor);
          const int diag = layout_.raw_index(a, i, i);
          raw_jacobian_(diag, row) = mass;
          raw_available_[diag] = true;
          if (n == 2) {
            // off-diagonal entry of a binary row is the row mass minus the diagonal
            const int off = layout_.raw_index(a, i, 1 - i);
            raw_jacobian_(off, row) = -mass;
            raw_offset_(off) = mass;
            raw_available_[off] = true;
          }
        }
      }
      break;
    }
    case Representation::GeneralizedLinear:
      for (int k = 0; k < d; ++k) forward_.row(k) = layout_.maps[k].transpose();
      break;
  }
}

bool ConfusionGeometry::has_full_raw() const {
  return std::all_of(raw_available_.begin(), raw_available_.end(), [](bool b) { return b; });
}

SlackDomain ConfusionGeometry::slack_domain() const {
  return layout_.representation == Representation::DiagonalNormalized ? SlackDomain::Box
                                                                       : SlackDomain::Simplex;
}

Vec ConfusionGeometry::fallback_direction() const {
  const int n = layout_.n_classes;
  Vec raw01 = Vec::Ones(layout_.raw_dim());
  for (int a = 0; a < layout_.n_groups; ++a) {
    for (int i = 0; i < n; ++i) raw01(layout_.raw_index(a, i, i)) = 0.0;
  }
  switch (layout_.representation) {
    case Representation::Full:
    case Representation::GroupStacked: return raw01;
    case Representation::DiagonalNormalized: {
      Vec dir(dim());
      for (int a = 0; a < layout_.n_groups; ++a) {
        for (int i = 0; i < n; ++i) dir(a * n + i) = -masses_.group_masses(a, i);
      }
      return dir;
    }
    case Representation::GeneralizedLinear: {
      // least-squares layout loss whose raw pull-back best matches the 0-1 loss
      Mat mt = forward_.transpose();
      Vec dir = mt.completeOrthogonalDecomposition().solve(raw01);
      if (dir.norm() == 0.0) dir = Vec::Ones(dim());
      return dir;
    }
  }
  return raw01;
}

// ---------------------------------------------------------------------------
// Metric metadata

std::string_view to_string(MetricKind k) {
  switch (k) {
    case MetricKind::ZeroOne: return "ZeroOne";
    case MetricKind::Balanced: return "Balanced";
    case MetricKind::HMean: return "HMean";
    case MetricKind::GMean: return "GMean";
    case MetricKind::QMean: return "QMean";
    case MetricKind::MicroF1: return "MicroF1";
    case MetricKind::MacroF1: return "MacroF1";
    case MetricKind::MinMax: return "MinMax";
    case MetricKind::LinearCustom: return "LinearCustom";
    case MetricKind::RatioOfLinear: return "RatioOfLinear";
  }
  return "ZeroOne";
}

std::string_view to_string(Smoothness s) {
  switch (s) {
    case Smoothness::SmoothConvex: return "SmoothConvex";
    case Smoothness::NonsmoothConvex: return "NonsmoothConvex";
    case Smoothness::RatioOfLinear: return "RatioOfLinear";
    case Smoothness::Linear: return "Linear";
    case Smoothness::NonConvex: return "NonConvex";
  }
  return "NonConvex";
}

MetricKind metric_kind_from_string(std::string_view s) {
  for (auto k : {MetricKind::ZeroOne, MetricKind::Balanced, MetricKind::HMean, MetricKind::GMean,
                 MetricKind::QMean, MetricKind::MicroF1, MetricKind::MacroF1, MetricKind::MinMax,
                 MetricKind::LinearCustom, MetricKind::RatioOfLinear}) {
    if (s == to_string(k)) return k;
  }
  throw Error(ErrorCode::ConfigError, "unknown metric '" + std::string(s) + "'");
}

Smoothness Metric::smoothness() const {
  switch (kind) {
    case MetricKind::ZeroOne:
    case MetricKind::Balanced:
    case MetricKind::LinearCustom: return Smoothness::Linear;
    case MetricKind::HMean:
    case MetricKind::GMean:
    case MetricKind::QMean: return Smoothness::SmoothConvex;
    case MetricKind::MinMax: return Smoothness::NonsmoothConvex;
    case MetricKind::MicroF1:
    case MetricKind::RatioOfLinear: return Smoothness::RatioOfLinear;
    case MetricKind::MacroF1: return Smoothness::NonConvex;
  }
  return Smoothness::NonConvex;
}

bool Metric::convex() const {
  auto s = smoothness();
  return s == Smoothness::SmoothConvex || s == Smoothness::NonsmoothConvex ||
         s == Smoothness::Linear;
}

Metric Metric::micro_f1(int default_class) {
  Metric m;
  m.kind = MetricKind::MicroF1;
  m.default_class = default_class;
  return m;
}

Metric Metric::linear(Vec coeffs) {
  Metric m;
  m.kind = MetricKind::LinearCustom;
  m.coeffs = std::move(coeffs);
  return m;
}

Metric Metric::ratio(Vec numer, Vec denom) {
  Metric m;
  m.kind = MetricKind::RatioOfLinear;
  m.numer = std::move(numer);
  m.denom = std::move(denom);
  return m;
}

double RatioForm::value(const Vec& v) const {
  const double den = denom.dot(v) + denom_offset;
  if (!(den > 0.0)) {
    throw Error(ErrorCode::DegenerateDenominator, "ratio metric denominator is not positive");
  }
  return (numer.dot(v) + numer_offset) / den;
}

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw Error(ErrorCode::LayoutMismatch, what);
}

bool is_recall_metric(MetricKind k) {
  return k == MetricKind::Balanced || k == MetricKind::HMean || k == MetricKind::GMean ||
         k == MetricKind::QMean || k == MetricKind::MinMax;
}

// Pulls a raw-coordinate linear functional back to layout coordinates.
// `overall` coefficients are on the group-summed matrix and are replicated to
// every group block.
LinearFunction pull_back(const ConfusionGeometry& g, const Vec& raw_coeffs, double constant,
                         std::string name) {
  for (int r = 0; r < raw_coeffs.size(); ++r) {
    if (raw_coeffs(r) != 0.0 && !g.raw_available(r)) {
      throw Error(ErrorCode::LayoutMismatch,
                  name + " depends on confusion entries the layout does not represent");
    }
  }
  Vec coeffs = g.raw_jacobian().transpose() * raw_coeffs;
  double offset = raw_coeffs.dot(g.raw_offset()) + constant;
  return LinearFunction(std::move(coeffs), offset, std::move(name));
}

Vec replicate_overall(const ConfusionLayout& l, const Mat& overall) {
  const int n = l.n_classes;
  Vec raw(l.raw_dim());
  for (int a = 0; a < l.n_groups; ++a) {
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) raw(l.raw_index(a, i, j)) = overall(i, j);
    }
  }
  return raw;
}

// Group-summed n x n confusion and its linear map from layout coordinates.
struct OverallView {
  Mat jac;  // n*n x d, row-major entry index i*n+j
  Vec off;

  OverallView(const ConfusionGeometry& g) {
    const auto& l = g.layout();
    const int n = l.n_classes;
    jac = Mat::Zero(n * n, g.dim());
    off = Vec::Zero(n * n);
    for (int a = 0; a < l.n_groups; ++a) {
      for (int e = 0; e < n * n; ++e) {
        jac.row(e) += g.raw_jacobian().row(a * n * n + e);
        off(e) += g.raw_offset()(a * n * n + e);
      }
    }
  }

  Mat at(const Vec& v, int n) const {
    Vec flat = jac * v + off;
    Mat c(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) c(i, j) = flat(i * n + j);
    return c;
  }

  Vec pull(const Mat& dc) const {
    const int n = static_cast<int>(dc.rows());
    Vec flat(n * n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) flat(i * n + j) = dc(i, j);
    return jac.transpose() * flat;
  }
};

// psi as a function of per-class recalls r; fills dpsi/dr when grad != nullptr.
double recall_metric(MetricKind kind, const Vec& r_in, Vec* grad) {
  const int n = static_cast<int>(r_in.size());
  switch (kind) {
    case MetricKind::Balanced: {
      if (grad) *grad = Vec::Constant(n, -1.0 / n);
      return 1.0 - r_in.mean();
    }
    case MetricKind::HMean: {
      Vec r = r_in.cwiseMax(kClampFloor);
      const double s = r.cwiseInverse().sum();
      if (grad) *grad = (-n / (s * s)) * r.cwiseAbs2().cwiseInverse();
      return 1.0 - n / s;
    }
    case MetricKind::GMean: {
      Vec r = r_in.cwiseMax(kClampFloor);
      const double gm = std::exp(r.array().log().mean());
      if (grad) *grad = (-gm / n) * r.cwiseInverse();
      return 1.0 - gm;
    }
    case MetricKind::QMean: {
      Vec e = Vec::Ones(n) - r_in;
      const double q = std::sqrt(e.squaredNorm() / n);
      if (grad) *grad = q > 0.0 ? Vec(-e / (n * q)) : Vec(Vec::Zero(n));
      return q;
    }
    case MetricKind::MinMax: {
      Vec e = Vec::Ones(n) - r_in;
      const double mx = e.maxCoeff();
      if (grad) {
        *grad = Vec::Zero(n);
        int count = 0;
        for (int i = 0; i < n; ++i) {
          if (e(i) >= mx - 1e-12) ++count;
        }
        for (int i = 0; i < n; ++i) {
          if (e(i) >= mx - 1e-12) (*grad)(i) = -1.0 / count;
        }
      }
      return mx;
    }
    default: break;
  }
  throw Error(ErrorCode::LayoutMismatch, "not a recall metric");
}

class RecallMetricFunction final : public ConfusionFunction {
 public:
  RecallMetricFunction(MetricKind kind, GeometryPtr g) : kind_(kind), g_(std::move(g)), view_(*g_) {
    const int n = g_->n_classes();
    const auto& l = g_->layout();
    use_priors_ = g_->masses().priors.size() == n;
    if (use_priors_) {
      recall_jac_ = Mat::Zero(n, g_->dim());
      recall_off_ = Vec::Zero(n);
      for (int i = 0; i < n; ++i) {
        const double pi = std::max(g_->masses().priors(i), kClampFloor);
        for (int a = 0; a < l.n_groups; ++a) {
          const int r = l.raw_index(a, i, i);
          require(g_->raw_available(r), std::string(to_string(kind)) + " needs diagonal entries");
          recall_jac_.row(i) += g_->raw_jacobian().row(r) / pi;
          recall_off_(i) += g_->raw_offset()(r) / pi;
        }
      }
    } else {
      require(g_->has_full_raw(),
              std::string(to_string(kind)) + " without priors needs a full-matrix layout");
    }
  }

  double value(const Vec& v) const override {
    if (use_priors_) return recall_metric(kind_, recall_jac_ * v + recall_off_, nullptr);
    return recall_metric(kind_, row_recalls(v), nullptr);
  }

  Vec gradient(const Vec& v) const override {
    Vec dr;
    if (use_priors_) {
      recall_metric(kind_, recall_jac_ * v + recall_off_, &dr);
      return recall_jac_.transpose() * dr;
    }
    const int n = g_->n_classes();
    Mat c = view_.at(v, n);
    recall_metric(kind_, row_recalls(v), &dr);
    Mat dc = Mat::Zero(n, n);
    for (int i = 0; i < n; ++i) {
      const double s = std::max(c.row(i).sum(), kClampFloor);
      for (int j = 0; j < n; ++j) dc(i, j) = -dr(i) * c(i, i) / (s * s);
      dc(i, i) += dr(i) / s;
    }
    return view_.pull(dc);
  }

  std::string name() const override { return std::string(to_string(kind_)); }

 private:
  Vec row_recalls(const Vec& v) const {
    const int n = g_->n_classes();
    Mat c = view_.at(v, n);
    Vec r(n);
    for (int i = 0; i < n; ++i) r(i) = c(i, i) / std::max(c.row(i).sum(), kClampFloor);
    return r;
  }

  MetricKind kind_;
  GeometryPtr g_;
  OverallView view_;
  bool use_priors_ = false;
  Mat recall_jac_;
  Vec recall_off_;
};

class RatioFunction final : public ConfusionFunction {
 public:
  RatioFunction(RatioForm form, std::string name) : form_(std::move(form)), name_(std::move(name)) {}
  double value(const Vec& v) const override { return form_.value(v); }
  Vec gradient(const Vec& v) const override {
    const double num = form_.numer.dot(v) + form_.numer_offset;
    const double den = form_.denom.dot(v) + form_.denom_offset;
    if (!(den > 0.0)) {
      throw Error(ErrorCode::DegenerateDenominator, "ratio metric denominator is not positive");
    }
    return (form_.numer * den - form_.denom * num) / (den * den);
  }
  std::string name() const override { return name_; }

 private:
  RatioForm form_;
  std::string name_;
};

class MacroF1Function final : public ConfusionFunction {
 public:
  explicit MacroF1Function(GeometryPtr g) : g_(std::move(g)), view_(*g_) {
    require(g_->has_full_raw(), "MacroF1 needs a full-matrix layout");
  }
  double value(const Vec& v) const override {
    const int n = g_->n_classes();
    Mat c = view_.at(v, n);
    double s = 0.0;
    for (int i = 0; i < n; ++i) {
      const double den = std::max(c.row(i).sum() + c.col(i).sum(), kClampFloor);
      s += 2.0 * c(i, i) / den;
    }
    return 1.0 - s / n;
  }
  Vec gradient(const Vec& v) const override {
    const int n = g_->n_classes();
    Mat c = view_.at(v, n);
    Mat dc = Mat::Zero(n, n);
    for (int i = 0; i < n; ++i) {
      const double den = std::max(c.row(i).sum() + c.col(i).sum(), kClampFloor);
      const double k = 2.0 * c(i, i) / (den * den) / n;
      for (int j = 0; j < n; ++j) {
        dc(i, j) += k;
        dc(j, i) += k;
      }
      dc(i, i) -= 2.0 / den / n;
    }
    return view_.pull(dc);
  }
  std::string name() const override { return "MacroF1"; }

 private:
  GeometryPtr g_;
  OverallView view_;
};

}  // namespace

RatioForm ratio_form(const Metric& m, const ConfusionGeometry& g) {
  const int d = g.dim();
  switch (m.kind) {
    case MetricKind::RatioOfLinear:
      require(m.numer.size() == d && m.denom.size() == d,
              "ratio coefficients must have the layout dimension");
      return {m.numer, 0.0, m.denom, 0.0};
    case MetricKind::LinearCustom:
      require(m.coeffs.size() == d, "linear coefficients must have the layout dimension");
      return {m.coeffs, 0.0, Vec::Zero(d), 1.0};
    case MetricKind::MicroF1: {
      const int n = g.n_classes();
      require(m.default_class >= 0 && m.default_class < n, "MicroF1 default class out of range");
      const int k = m.default_class;
      // denominator 2*sum(C) - row_k - col_k, numerator denominator - 2*sum_{i != k} C_ii
      Mat b(n, n), a(n, n);
      for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
          b(i, j) = 2.0 - (i == k ? 1.0 : 0.0) - (j == k ? 1.0 : 0.0);
          a(i, j) = b(i, j) - ((i == j && i != k) ? 2.0 : 0.0);
        }
      }
      const auto& l = g.layout();
      LinearFunction fa = pull_back(g, replicate_overall(l, a), 0.0, "MicroF1");
      LinearFunction fb = pull_back(g, replicate_overall(l, b), 0.0, "MicroF1");
      return {fa.coeffs(), fa.offset(), fb.coeffs(), fb.offset()};
    }
    default: break;
  }
  throw Error(ErrorCode::LayoutMismatch,
              std::string(to_string(m.kind)) + " is not a ratio-of-linear metric");
}

FunctionPtr bind_metric(const Metric& m, GeometryPtr geometry) {
  const auto& g = *geometry;
  if (is_recall_metric(m.kind)) return std::make_shared<RecallMetricFunction>(m.kind, geometry);
  switch (m.kind) {
    case MetricKind::ZeroOne: {
      const auto& l = g.layout();
      Vec raw = Vec::Zero(l.raw_dim());
      for (int a = 0; a < l.n_groups; ++a)
        for (int i = 0; i < l.n_classes; ++i) raw(l.raw_index(a, i, i)) = -1.0;
      return std::make_shared<LinearFunction>(pull_back(g, raw, 1.0, "ZeroOne"));
    }
    case MetricKind::LinearCustom:
      require(m.coeffs.size() == g.dim(), "linear coefficients must have the layout dimension");
      return std::make_shared<LinearFunction>(m.coeffs, 0.0, "LinearCustom");
    case MetricKind::MicroF1:
    case MetricKind::RatioOfLinear:
      return std::make_shared<RatioFunction>(ratio_form(m, g), std::string(to_string(m.kind)));
    case MetricKind::MacroF1: return std::make_shared<MacroF1Function>(geometry);
    default: break;
  }
  throw Error(ErrorCode::LayoutMismatch, "unsupported metric");
}

namespace {
GeometryPtr geometry_of(const ConfusionVector& c, const ClassMasses& masses) {
  if (c.entries.size() != c.layout.dim()) {
    throw Error(ErrorCode::LayoutMismatch, "confusion vector length does not match layout");
  }
  return std::make_shared<ConfusionGeometry>(c.layout, masses);
}
}  // namespace

double evaluate_metric(const Metric& m, const ConfusionVector& c, const ClassMasses& masses) {
  return bind_metric(m, geometry_of(c, masses))->value(c.entries);
}

Vec gradient_metric(const Metric& m, const ConfusionVector& c, const ClassMasses& masses) {
  return bind_metric(m, geometry_of(c, masses))->gradient(c.entries);
}

double lipschitz_estimate(const Metric& m, GeometryPtr geometry, int samples) {
  if (m.lipschitz_hint) return *m.lipschitz_hint;
  if (m.kind == MetricKind::LinearCustom) return m.coeffs.norm();
  auto f = bind_metric(m, geometry);
  const int d = geometry->dim();
  if (m.smoothness() == Smoothness::Linear) return f->gradient(Vec::Zero(d)).norm();
  std::mt19937_64 rng(20240601ULL);
  std::uniform_real_distribution<double> unif(1e-3, 1.0);
  std::exponential_distribution<double> expo(1.0);
  double best = 0.0;
  for (int s = 0; s < samples; ++s) {
    Vec v(d);
    if (geometry->slack_domain() == SlackDomain::Box) {
      for (int k = 0; k < d; ++k) v(k) = unif(rng);
    } else {
      for (int k = 0; k < d; ++k) v(k) = expo(rng) + 1e-6;
      v /= v.sum();
    }
    best = std::max(best, f->gradient(v).norm());
  }
  return best;
}

// ---------------------------------------------------------------------------
// Constraints

std::string_view to_string(ConstraintKind k) {
  switch (k) {
    case ConstraintKind::ClassPrecision: return "ClassPrecision";
    case ConstraintKind::CoverageBand: return "CoverageBand";
    case ConstraintKind::QuantificationKLD: return "QuantificationKLD";
    case ConstraintKind::DemographicParity: return "DemographicParity";
    case ConstraintKind::EqualOpportunity: return "EqualOpportunity";
    case ConstraintKind::EqualizedOdds: return "EqualizedOdds";
    case ConstraintKind::LinearCustom: return "LinearCustom";
  }
  return "LinearCustom";
}

ConstraintKind constraint_kind_from_string(std::string_view s) {
  for (auto k : {ConstraintKind::ClassPrecision, ConstraintKind::CoverageBand,
                 ConstraintKind::QuantificationKLD, ConstraintKind::DemographicParity,
                 ConstraintKind::EqualOpportunity, ConstraintKind::EqualizedOdds,
                 ConstraintKind::LinearCustom}) {
    if (s == to_string(k)) return k;
  }
  throw Error(ErrorCode::ConfigError, "unknown constraint '" + std::string(s) + "'");
}

Constraint Constraint::precision(int cls, double tau) {
  Constraint c;
  c.kind = ConstraintKind::ClassPrecision;
  c.class_index = cls;
  c.tau = tau;
  return c;
}
Constraint Constraint::coverage(double slack, std::optional<Vec> target) {
  Constraint c;
  c.kind = ConstraintKind::CoverageBand;
  c.slack = slack;
  c.target = std::move(target);
  return c;
}
Constraint Constraint::kld(double slack) {
  Constraint c;
  c.kind = ConstraintKind::QuantificationKLD;
  c.slack = slack;
  return c;
}
Constraint Constraint::demographic_parity(double slack) {
  Constraint c;
  c.kind = ConstraintKind::DemographicParity;
  c.slack = slack;
  return c;
}
Constraint Constraint::equal_opportunity(double slack) {
  Constraint c;
  c.kind = ConstraintKind::EqualOpportunity;
  c.slack = slack;
  return c;
}
Constraint Constraint::equalized_odds(double slack) {
  Constraint c;
  c.kind = ConstraintKind::EqualizedOdds;
  c.slack = slack;
  return c;
}
Constraint Constraint::linear(Vec coeffs, double bound) {
  Constraint c;
  c.kind = ConstraintKind::LinearCustom;
  c.coeffs = std::move(coeffs);
  c.bound = bound;
  return c;
}

namespace {

// 1 - C_ii / sum_j C_ji - tau
class PrecisionFunction final : public ConfusionFunction {
 public:
  PrecisionFunction(GeometryPtr g, int cls, double tau)
      : g_(std::move(g)), view_(*g_), cls_(cls), tau_(tau) {
    require(g_->has_full_raw(), "ClassPrecision needs a full-matrix layout");
    require(cls >= 0 && cls < g_->n_classes(), "ClassPrecision class out of range");
  }
  double value(const Vec& v) const override {
    Mat c = view_.at(v, g_->n_classes());
    const double col = std::max(c.col(cls_).sum(), kClampFloor);
    return 1.0 - c(cls_, cls_) / col - tau_;
  }
  Vec gradient(const Vec& v) const override {
    const int n = g_->n_classes();
    Mat c = view_.at(v, n);
    const double col = std::max(c.col(cls_).sum(), kClampFloor);
    Mat dc = Mat::Zero(n, n);
    for (int j = 0; j < n; ++j) dc(j, cls_) = c(cls_, cls_) / (col * col);
    dc(cls_, cls_) -= 1.0 / col;
    return view_.pull(dc);
  }
  std::string name() const override { return "precision[" + std::to_string(cls_) + "]"; }

 private:
  GeometryPtr g_;
  OverallView view_;
  int cls_;
  double tau_;
};

// sum_i pi_i log(pi_i / sum_j C_ji) - eps
class KldFunction final : public ConfusionFunction {
 public:
  KldFunction(GeometryPtr g, double eps) : g_(std::move(g)), view_(*g_), eps_(eps) {
    require(g_->has_full_raw(), "QuantificationKLD needs a full-matrix layout");
    require(g_->masses().priors.size() == g_->n_classes(), "QuantificationKLD needs priors");
  }
  double value(const Vec& v) const override {
    const int n = g_->n_classes();
    Mat c = view_.at(v, n);
    const Vec& pi = g_->masses().priors;
    double s = 0.0;
    for (int i = 0; i < n; ++i) {
      if (pi(i) <= 0.0) continue;
      s += pi(i) * std::log(pi(i) / std::max(c.col(i).sum(), kClampFloor));
    }
    return s - eps_;
  }
  Vec gradient(const Vec& v) const override {
    const int n = g_->n_classes();
    Mat c = view_.at(v, n);
    const Vec& pi = g_->masses().priors;
    Mat dc = Mat::Zero(n, n);
    for (int i = 0; i < n; ++i) {
      if (pi(i) <= 0.0) continue;
      const double col = std::max(c.col(i).sum(), kClampFloor);
      for (int j = 0; j < n; ++j) dc(j, i) = -pi(i) / col;
    }
    return view_.pull(dc);
  }
  std::string name() const override { return "kld"; }

 private:
  GeometryPtr g_;
  OverallView view_;
  double eps_;
};

void push_two_sided(std::vector<FunctionPtr>& out, const ConfusionGeometry& g, const Vec& raw,
                    double constant, double slack, const std::string& name) {
  out.push_back(std::make_shared<LinearFunction>(pull_back(g, raw, constant - slack, name + "+")));
  out.push_back(std::make_shared<LinearFunction>(pull_back(g, -raw, -constant - slack, name + "-")));
}

Mat require_group_masses(const ConfusionGeometry& g) {
  const auto& gm = g.masses().group_masses;
  if (gm.rows() != g.n_groups() || gm.cols() != g.n_classes()) {
    throw Error(ErrorCode::LayoutMismatch, "group constraints need group masses mu_{a,i}");
  }
  return gm;
}

}  // namespace

std::vector<FunctionPtr> expand_constraints(const std::vector<Constraint>& cs, GeometryPtr geometry) {
  const auto& g = *geometry;
  const auto& l = g.layout();
  const int n = l.n_classes;
  const int m = l.n_groups;
  std::vector<FunctionPtr> out;
  for (const auto& c : cs) {
    switch (c.kind) {
      case ConstraintKind::ClassPrecision:
        out.push_back(std::make_shared<PrecisionFunction>(geometry, c.class_index, c.tau));
        break;
      case ConstraintKind::QuantificationKLD:
        out.push_back(std::make_shared<KldFunction>(geometry, c.slack));
        break;
      case ConstraintKind::CoverageBand: {
        Vec target = c.target ? *c.target : g.masses().priors;
        require(target.size() == n, "coverage target must have n entries (or priors must be known)");
        for (int i = 0; i < n; ++i) {
          Vec raw = Vec::Zero(l.raw_dim());
          for (int a = 0; a < m; ++a)
            for (int j = 0; j < n; ++j) raw(l.raw_index(a, j, i)) = 1.0;
          push_two_sided(out, g, raw, -target(i), c.slack, "coverage[" + std::to_string(i) + "]");
        }
        break;
      }
      case ConstraintKind::DemographicParity: {
        Mat gm = require_group_masses(g);
        for (int a = 0; a < m; ++a) {
          const double mu_a = std::max(gm.row(a).sum(), kClampFloor);
          for (int i = 0; i < n; ++i) {
            Vec raw = Vec::Zero(l.raw_dim());
            for (int b = 0; b < m; ++b)
              for (int j = 0; j < n; ++j) raw(l.raw_index(b, j, i)) = (a == b ? 1.0 / mu_a : 0.0) - 1.0;
            push_two_sided(out, g, raw, 0.0, c.slack,
                           "dp[" + std::to_string(a) + "," + std::to_string(i) + "]");
          }
        }
        break;
      }
      case ConstraintKind::EqualOpportunity: {
        require(n == 2, "EqualOpportunity is defined for binary labels");
        Mat gm = require_group_masses(g);
        const double pi1 = std::max(gm.col(1).sum(), kClampFloor);
        for (int a = 0; a < m; ++a) {
          Vec raw = Vec::Zero(l.raw_dim());
          for (int b = 0; b < m; ++b) {
            raw(l.raw_index(b, 1, 1)) =
                (a == b ? 1.0 / std::max(gm(a, 1), kClampFloor) : 0.0) - 1.0 / pi1;
          }
          push_two_sided(out, g, raw, 0.0, c.slack, "eopp[" + std::to_string(a) + "]");
        }
        break;
      }
      case ConstraintKind::EqualizedOdds: {
        Mat gm = require_group_masses(g);
        Vec pi = gm.colwise().sum().transpose();
        for (int a = 0; a < m; ++a) {
          for (int i = 0; i < n; ++i) {
            for (int j = 0; j < n; ++j) {
              Vec raw = Vec::Zero(l.raw_dim());
              for (int b = 0; b < m; ++b) {
                raw(l.raw_index(b, i, j)) = (a == b ? 1.0 / std::max(gm(a, i), kClampFloor) : 0.0) -
                                            1.0 / std::max(pi(i), kClampFloor);
              }
              push_two_sided(out, g, raw, 0.0, c.slack,
                             "eodds[" + std::to_string(a) + "," + std::to_string(i) + "," +
                                 std::to_string(j) + "]");
            }
          }
        }
        break;
      }
      case ConstraintKind::LinearCustom:
        require(c.coeffs.size() == g.dim(), "linear constraint coefficients must have layout dimension");
        out.push_back(std::make_shared<LinearFunction>(c.coeffs, -c.bound, "linear"));
        break;
    }
  }
  return out;
}

Vec evaluate_all(const std::vector<FunctionPtr>& fs, const Vec& v) {
  Vec out(fs.size());
  for (std::size_t k = 0; k < fs.size(); ++k) out(static_cast<Eigen::Index>(k)) = fs[k]->value(v);
  return out;
}

double max_violation(const std::vector<FunctionPtr>& fs, const Vec& v) {
  double worst = 0.0;
  for (const auto& f : fs) worst = std::max(worst, f->value(v));
  return worst;
}

Vec evaluate_constraints(const std::vector<Constraint>& cs, const ConfusionVector& c,
                         const ClassMasses& masses) {
  return evaluate_all(expand_constraints(cs, geometry_of(c, masses)), c.entries);
}

Vec subgradient_constraint(const std::vector<Constraint>& cs, int k, const ConfusionVector& c,
                           const ClassMasses& masses) {
  auto fs = expand_constraints(cs, geometry_of(c, masses));
  if (k < 0 || k >= static_cast<int>(fs.size())) {
    throw Error(ErrorCode::LayoutMismatch, "constraint index out of range");
  }
  return fs[k]->gradient(c.entries);
}

}  // namespace confopt
