#include "confopt/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

namespace confopt {

namespace {
constexpr double kLogTwoPi = 1.8378770664093454836;
}

double Dataset::total_weight() const {
  return weighted() ? weights.sum() : static_cast<double>(size());
}

void Dataset::validate() const {
  if (features.rows() != size()) {
    throw Error(ErrorCode::InvalidData, "feature rows and labels differ in length");
  }
  if (!features.allFinite()) throw Error(ErrorCode::InvalidData, "non-finite feature value");
  for (int y : labels) {
    if (y < 0 || y >= n_classes) throw Error(ErrorCode::InvalidData, "label out of range");
  }
  if (!groups.empty()) {
    if (static_cast<int>(groups.size()) != size()) {
      throw Error(ErrorCode::InvalidData, "group column length differs from labels");
    }
    for (int a : groups) {
      if (a < 0 || a >= n_groups) {
        throw Error(ErrorCode::GroupOutOfRange, "group index " + std::to_string(a) + " out of range");
      }
    }
  }
  if (weighted()) {
    if (weights.size() != size()) throw Error(ErrorCode::InvalidData, "weights length mismatch");
    if (!weights.allFinite() || weights.minCoeff() < 0.0) {
      throw Error(ErrorCode::InvalidData, "weights must be finite and nonnegative");
    }
  }
}

Dataset Dataset::subset(const std::vector<int>& rows) const {
  Dataset out;
  out.n_classes = n_classes;
  out.n_groups = n_groups;
  out.features.resize(static_cast<Eigen::Index>(rows.size()), features.cols());
  out.labels.reserve(rows.size());
  if (weighted()) out.weights.resize(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const int r = rows[k];
    out.features.row(static_cast<Eigen::Index>(k)) = features.row(r);
    out.labels.push_back(labels[r]);
    if (!groups.empty()) out.groups.push_back(groups[r]);
    if (weighted()) out.weights(static_cast<Eigen::Index>(k)) = weights(r);
  }
  return out;
}

ClassMasses Dataset::masses() const {
  Mat gm = Mat::Zero(n_groups, n_classes);
  for (int k = 0; k < size(); ++k) gm(group(k), labels[k]) += weight(k);
  const double total = total_weight();
  if (total > 0.0) gm /= total;
  return ClassMasses::from_group_masses(gm);
}

// ---------------------------------------------------------------------------
// Synthetic distributions

std::string_view to_string(SyntheticKind k) {
  switch (k) {
    case SyntheticKind::Unif: return "Unif";
    case SyntheticKind::NormBal: return "NormBal";
    case SyntheticKind::NormImbal: return "NormImbal";
    case SyntheticKind::ThreeClass2D: return "ThreeClass2D";
    case SyntheticKind::ThreeClass1D: return "ThreeClass1D";
    case SyntheticKind::Custom: return "Custom";
  }
  return "Custom";
}

SyntheticKind synthetic_kind_from_string(std::string_view s) {
  for (auto k : {SyntheticKind::Unif, SyntheticKind::NormBal, SyntheticKind::NormImbal,
                 SyntheticKind::ThreeClass2D, SyntheticKind::ThreeClass1D, SyntheticKind::Custom}) {
    if (s == to_string(k)) return k;
  }
  throw Error(ErrorCode::ConfigError, "unknown synthetic distribution '" + std::string(s) + "'");
}

namespace {

ComponentSpec gaussian(Vec mean, Mat cov) {
  ComponentSpec c;
  c.type = ComponentSpec::Type::Gaussian;
  c.mean = std::move(mean);
  c.cov = std::move(cov);
  return c;
}

ComponentSpec uniform(Vec low, Vec high) {
  ComponentSpec c;
  c.type = ComponentSpec::Type::Uniform;
  c.low = std::move(low);
  c.high = std::move(high);
  return c;
}

Vec vec1(double a) { return Vec::Constant(1, a); }
Vec vec2(double a, double b) {
  Vec v(2);
  v << a, b;
  return v;
}

double log_density(const ComponentSpec& c, const Vec& x) {
  if (c.type == ComponentSpec::Type::Uniform) {
    double logvol = 0.0;
    for (int k = 0; k < c.low.size(); ++k) {
      if (x(k) < c.low(k) || x(k) > c.high(k)) return -std::numeric_limits<double>::infinity();
      logvol += std::log(c.high(k) - c.low(k));
    }
    return -logvol;
  }
  Eigen::LLT<Mat> llt(c.cov);
  Vec z = llt.matrixL().solve(x - c.mean);
  const double logdet = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
  return -0.5 * (z.squaredNorm() + logdet + static_cast<double>(x.size()) * kLogTwoPi);
}

}  // namespace

double ComponentSpec::density(const Vec& x) const { return std::exp(log_density(*this, x)); }

int SyntheticSpec::dim() const {
  if (components.empty()) return 0;
  const auto& c = components.front();
  return static_cast<int>(c.type == ComponentSpec::Type::Gaussian ? c.mean.size() : c.low.size());
}

SyntheticSpec SyntheticSpec::of(SyntheticKind kind, std::uint64_t seed) {
  SyntheticSpec s;
  s.kind = kind;
  s.seed = seed;
  const Mat one = Mat::Identity(1, 1);
  switch (kind) {
    case SyntheticKind::Unif:
      s.priors = vec2(2.0 / 3.0, 1.0 / 3.0);
      s.components = {uniform(vec1(-1.0), vec1(1.0)), uniform(vec1(0.0), vec1(2.0))};
      break;
    case SyntheticKind::NormBal:
      s.priors = vec2(0.5, 0.5);
      s.components = {gaussian(vec1(-0.5), one), gaussian(vec1(0.5), one)};
      break;
    case SyntheticKind::NormImbal:
      s.priors = vec2(0.8, 0.2);
      s.components = {gaussian(vec1(-0.5), one), gaussian(vec1(0.5), one)};
      break;
    case SyntheticKind::ThreeClass2D: {
      s.priors.resize(3);
      s.priors << 0.85, 0.1, 0.05;
      Mat cov(2, 2);
      cov << 5.0, 1.0, 1.0, 5.0;
      s.components = {gaussian(vec2(1.0, 1.0), cov), gaussian(vec2(0.0, 0.0), cov),
                      gaussian(vec2(-1.0, -1.0), cov)};
      break;
    }
    case SyntheticKind::ThreeClass1D:
      s.priors = Vec::Constant(3, 1.0 / 3.0);
      s.components = {gaussian(vec1(-1.0), one), gaussian(vec1(0.0), one),
                      gaussian(vec1(1.0), one)};
      break;
    case SyntheticKind::Custom:
      throw Error(ErrorCode::ConfigError, "custom distributions are built field by field");
  }
  return s;
}

void SyntheticSpec::validate() const {
  if (priors.size() < 2 || static_cast<int>(components.size()) != priors.size()) {
    throw Error(ErrorCode::ConfigError, "synthetic spec needs one component per class (n >= 2)");
  }
  if (priors.minCoeff() < 0.0 || std::abs(priors.sum() - 1.0) > 1e-9) {
    throw Error(ErrorCode::ConfigError, "synthetic priors must be nonnegative and sum to 1");
  }
  const int q = dim();
  for (const auto& c : components) {
    if (c.type == ComponentSpec::Type::Gaussian) {
      if (c.mean.size() != q || c.cov.rows() != q || c.cov.cols() != q) {
        throw Error(ErrorCode::ConfigError, "gaussian component dimension mismatch");
      }
      if (!c.cov.isApprox(c.cov.transpose(), 1e-12) || Eigen::LLT<Mat>(c.cov).info() != Eigen::Success) {
        throw Error(ErrorCode::ConfigError, "covariance must be symmetric positive definite");
      }
    } else {
      if (c.low.size() != q || c.high.size() != q || (c.high - c.low).minCoeff() <= 0.0) {
        throw Error(ErrorCode::ConfigError, "uniform component needs low < high in every coordinate");
      }
    }
  }
}

Dataset sample_synthetic(const SyntheticSpec& spec, int n, std::uint64_t seed) {
  spec.validate();
  if (n < 1) throw Error(ErrorCode::EmptySample, "sample size must be positive");
  const int q = spec.dim();
  const int classes = spec.n_classes();
  std::mt19937_64 rng(seed);
  std::discrete_distribution<int> pick(spec.priors.data(), spec.priors.data() + classes);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  std::vector<Mat> chol(classes);
  for (int i = 0; i < classes; ++i) {
    if (spec.components[i].type == ComponentSpec::Type::Gaussian) {
      chol[i] = Eigen::LLT<Mat>(spec.components[i].cov).matrixL();
    }
  }

  Dataset ds;
  ds.n_classes = classes;
  ds.features.resize(n, q);
  ds.labels.resize(n);
  Vec z(q);
  for (int k = 0; k < n; ++k) {
    const int y = pick(rng);
    const auto& c = spec.components[y];
    ds.labels[k] = y;
    if (c.type == ComponentSpec::Type::Gaussian) {
      for (int t = 0; t < q; ++t) z(t) = normal(rng);
      ds.features.row(k) = (c.mean + chol[y] * z).transpose();
    } else {
      for (int t = 0; t < q; ++t) ds.features(k, t) = c.low(t) + (c.high(t) - c.low(t)) * unit(rng);
    }
  }
  return ds;
}

Vec exact_eta(const SyntheticSpec& spec, const Vec& x, bool* outside) {
  const int classes = spec.n_classes();
  Vec logp(classes);
  for (int i = 0; i < classes; ++i) {
    logp(i) = spec.priors(i) > 0.0 ? std::log(spec.priors(i)) + log_density(spec.components[i], x)
                                   : -std::numeric_limits<double>::infinity();
  }
  const double mx = logp.maxCoeff();
  if (outside) *outside = !std::isfinite(mx);
  if (!std::isfinite(mx)) return Vec::Constant(classes, 1.0 / classes);
  Vec p = (logp.array() - mx).exp();
  return p / p.sum();
}

DiscreteSupport discretize(const SyntheticSpec& spec, int points, double lo, double hi) {
  spec.validate();
  if (spec.dim() != 1) throw Error(ErrorCode::ConfigError, "discretization supports 1-D specs only");
  if (points < 1 || !(hi > lo)) throw Error(ErrorCode::ConfigError, "bad discretization grid");
  const int classes = spec.n_classes();
  DiscreteSupport s;
  s.points.resize(points, 1);
  s.mass.resize(points);
  s.eta.resize(points, classes);
  const double h = (hi - lo) / points;
  for (int k = 0; k < points; ++k) {
    const double x = lo + (k + 0.5) * h;
    Vec xv = Vec::Constant(1, x);
    double dens = 0.0;
    for (int i = 0; i < classes; ++i) dens += spec.priors(i) * spec.components[i].density(xv);
    s.points(k, 0) = x;
    s.mass(k) = dens;
    s.eta.row(k) = exact_eta(spec, xv).transpose();
  }
  const double total = s.mass.sum();
  if (!(total > 0.0)) throw Error(ErrorCode::InvalidData, "discretization grid carries no mass");
  s.mass /= total;
  return s;
}

Dataset to_weighted_dataset(const DiscreteSupport& support, bool index_features) {
  const int points = static_cast<int>(support.mass.size());
  const int classes = static_cast<int>(support.eta.cols());
  const int q = index_features ? 1 : static_cast<int>(support.points.cols());
  std::vector<int> rows_k, rows_i;
  std::vector<double> w;
  for (int k = 0; k < points; ++k) {
    for (int i = 0; i < classes; ++i) {
      const double mass = support.mass(k) * support.eta(k, i);
      if (mass <= 0.0) continue;
      rows_k.push_back(k);
      rows_i.push_back(i);
      w.push_back(mass);
    }
  }
  Dataset ds;
  ds.n_classes = classes;
  const int n = static_cast<int>(w.size());
  ds.features.resize(n, q);
  ds.labels = rows_i;
  ds.weights = Eigen::Map<Vec>(w.data(), n);
  for (int r = 0; r < n; ++r) {
    if (index_features) {
      ds.features(r, 0) = rows_k[r];
    } else {
      ds.features.row(r) = support.points.row(rows_k[r]);
    }
  }
  return ds;
}

// ---------------------------------------------------------------------------
// CSV

namespace {

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) {
    while (!field.empty() && (field.back() == '\r' || field.back() == ' ')) field.pop_back();
    while (!field.empty() && field.front() == ' ') field.erase(field.begin());
    out.push_back(field);
  }
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

int parse_int(const std::string& s, const std::string& what, int line) {
  int v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw Error(ErrorCode::SchemaError,
                what + " '" + s + "' on line " + std::to_string(line) + " is not an integer");
  }
  return v;
}

double parse_double(const std::string& s, int line) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size()) {
    throw Error(ErrorCode::SchemaError,
                "feature '" + s + "' on line " + std::to_string(line) + " is not a number");
  }
  return v;
}

}  // namespace

Dataset load_csv(const std::string& path, int n_classes, int n_groups) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::SchemaError, "cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::SchemaError, "'" + path + "' has no header");
  const auto header = split_fields(line);
  int label_col = -1, group_col = -1;
  std::vector<int> feature_cols;
  for (int c = 0; c < static_cast<int>(header.size()); ++c) {
    if (header[c] == "label") {
      label_col = c;
    } else if (header[c] == "group") {
      group_col = c;
    } else {
      feature_cols.push_back(c);
    }
  }
  if (label_col < 0) throw Error(ErrorCode::SchemaError, "missing 'label' column in '" + path + "'");

  std::vector<std::vector<double>> rows;
  Dataset ds;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto fields = split_fields(line);
    if (fields.size() != header.size()) {
      throw Error(ErrorCode::SchemaError, "line " + std::to_string(line_no) + " has " +
                                              std::to_string(fields.size()) + " fields, expected " +
                                              std::to_string(header.size()));
    }
    std::vector<double> x;
    x.reserve(feature_cols.size());
    for (int c : feature_cols) x.push_back(parse_double(fields[c], line_no));
    rows.push_back(std::move(x));
    const int y = parse_int(fields[label_col], "label", line_no);
    if (y < 0 || (n_classes > 0 && y >= n_classes)) {
      throw Error(ErrorCode::SchemaError, "label " + std::to_string(y) + " on line " +
                                              std::to_string(line_no) + " out of range");
    }
    ds.labels.push_back(y);
    if (group_col >= 0) {
      const int a = parse_int(fields[group_col], "group", line_no);
      if (a < 0 || (n_groups > 0 && a >= n_groups)) {
        throw Error(ErrorCode::SchemaError, "group " + std::to_string(a) + " on line " +
                                                std::to_string(line_no) + " out of range");
      }
      ds.groups.push_back(a);
    }
  }
  const int n = static_cast<int>(rows.size());
  ds.features.resize(n, static_cast<Eigen::Index>(feature_cols.size()));
  for (int r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < feature_cols.size(); ++c) ds.features(r, static_cast<Eigen::Index>(c)) = rows[r][c];
  }
  int max_label = -1, max_group = -1;
  for (int y : ds.labels) max_label = std::max(max_label, y);
  for (int a : ds.groups) max_group = std::max(max_group, a);
  ds.n_classes = n_classes > 0 ? n_classes : std::max(2, max_label + 1);
  ds.n_groups = n_groups > 0 ? n_groups : std::max(1, max_group + 1);
  if (!ds.features.allFinite()) throw Error(ErrorCode::InvalidData, "non-finite feature in '" + path + "'");
  return ds;
}

void write_csv(const Dataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::SchemaError, "cannot write '" + path + "'");
  for (int c = 0; c < ds.dim(); ++c) out << 'f' << c << ',';
  out << "label";
  if (!ds.groups.empty()) out << ",group";
  out << '\n';
  char buf[32];
  for (int r = 0; r < ds.size(); ++r) {
    for (int c = 0; c < ds.dim(); ++c) {
      std::snprintf(buf, sizeof buf, "%.17g", ds.features(r, c));
      out << buf << ',';
    }
    out << ds.labels[r];
    if (!ds.groups.empty()) out << ',' << ds.groups[r];
    out << '\n';
  }
}

std::pair<Dataset, Dataset> split(const Dataset& ds, double fraction, std::uint64_t seed) {
  if (!(fraction >= 0.0 && fraction <= 1.0)) {
    throw Error(ErrorCode::ConfigError, "split fraction must lie in [0, 1]");
  }
  std::mt19937_64 rng(seed);
  std::vector<std::vector<int>> by_class(ds.n_classes);
  for (int r = 0; r < ds.size(); ++r) by_class[ds.labels[r]].push_back(r);

  // largest-remainder allocation keeps the global count at round(fraction * N)
  const int total = static_cast<int>(std::lround(fraction * ds.size()));
  std::vector<int> take(ds.n_classes);
  std::vector<std::pair<double, int>> remainders;
  int assigned = 0;
  for (int i = 0; i < ds.n_classes; ++i) {
    const double exact = fraction * static_cast<double>(by_class[i].size());
    take[i] = static_cast<int>(std::floor(exact));
    assigned += take[i];
    remainders.emplace_back(-(exact - take[i]), i);
  }
  std::sort(remainders.begin(), remainders.end());
  for (std::size_t k = 0; assigned < total && k < remainders.size(); ++k) {
    const int i = remainders[k].second;
    if (take[i] < static_cast<int>(by_class[i].size())) {
      ++take[i];
      ++assigned;
    }
  }

  std::vector<int> first, second;
  for (int i = 0; i < ds.n_classes; ++i) {
    auto& rows = by_class[i];
    std::shuffle(rows.begin(), rows.end(), rng);
    first.insert(first.end(), rows.begin(), rows.begin() + take[i]);
    second.insert(second.end(), rows.begin() + take[i], rows.end());
  }
  std::sort(first.begin(), first.end());
  std::sort(second.begin(), second.end());
  return {ds.subset(first), ds.subset(second)};
}

}  // namespace confopt
