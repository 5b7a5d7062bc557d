#include "confopt/bruteforce.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <set>

namespace confopt {

// ---------------------------------------------------------------------------
// Discrete distributions

void DiscreteDistribution::validate(double tol) const {
  if (size() == 0) throw Error(ErrorCode::EmptySample, "empty support");
  if (eta.rows() != size() || eta.cols() != n_classes) {
    throw Error(ErrorCode::InvalidData, "eta must be K x n");
  }
  if (mass.minCoeff() < 0.0 || std::abs(mass.sum() - 1.0) > tol) {
    throw Error(ErrorCode::InvalidData, "support masses must sum to 1");
  }
  for (int k = 0; k < size(); ++k) {
    if (eta.row(k).minCoeff() < 0.0 || std::abs(eta.row(k).sum() - 1.0) > tol) {
      throw Error(ErrorCode::InvalidData, "eta rows must lie in the simplex");
    }
  }
  if (!groups.empty()) {
    if (static_cast<int>(groups.size()) != size()) throw Error(ErrorCode::InvalidData, "one group per point");
    for (int a : groups) {
      if (a < 0 || a >= n_groups) throw Error(ErrorCode::GroupOutOfRange, "group out of range");
    }
  }
}

ClassMasses DiscreteDistribution::masses() const {
  Mat gm = Mat::Zero(n_groups, n_classes);
  for (int k = 0; k < size(); ++k) gm.row(group(k)) += mass(k) * eta.row(k);
  return ClassMasses::from_group_masses(gm);
}

Vec DiscreteDistribution::raw_confusion(const std::vector<int>& assignment) const {
  if (static_cast<int>(assignment.size()) != size()) {
    throw Error(ErrorCode::LayoutMismatch, "one label per support point expected");
  }
  const int n = n_classes;
  Vec raw = Vec::Zero(n_groups * n * n);
  for (int k = 0; k < size(); ++k) {
    const int j = assignment[static_cast<std::size_t>(k)];
    for (int i = 0; i < n; ++i) raw((group(k) * n + i) * n + j) += mass(k) * eta(k, i);
  }
  return raw;
}

Dataset DiscreteDistribution::to_dataset() const {
  Dataset ds;
  ds.n_classes = n_classes;
  ds.n_groups = n_groups;
  std::vector<double> w;
  std::vector<double> idx;
  for (int k = 0; k < size(); ++k) {
    for (int i = 0; i < n_classes; ++i) {
      const double m = mass(k) * eta(k, i);
      if (m <= 0.0) continue;
      idx.push_back(k);
      ds.labels.push_back(i);
      if (!groups.empty()) ds.groups.push_back(group(k));
      w.push_back(m);
    }
  }
  ds.features = Eigen::Map<Mat>(idx.data(), static_cast<Eigen::Index>(idx.size()), 1);
  ds.weights = Eigen::Map<Vec>(w.data(), static_cast<Eigen::Index>(w.size()));
  ds.validate();
  return ds;
}

ModelPtr DiscreteDistribution::table_model() const { return std::make_shared<TableModel>(eta); }

DiscreteDistribution DiscreteDistribution::from_support(const DiscreteSupport& s) {
  DiscreteDistribution d;
  d.points = s.points;
  d.mass = s.mass;
  d.eta = s.eta;
  d.n_classes = static_cast<int>(s.eta.cols());
  d.validate();
  return d;
}

DiscreteDistribution DiscreteDistribution::random(int support, int n_classes, std::uint64_t seed,
                                                  int n_groups) {
  std::mt19937_64 rng(seed);
  std::exponential_distribution<double> ex(1.0);
  DiscreteDistribution d;
  d.n_classes = n_classes;
  d.n_groups = n_groups;
  d.points = Mat(support, 1);
  d.mass = Vec(support);
  d.eta = Mat(support, n_classes);
  for (int k = 0; k < support; ++k) {
    d.points(k, 0) = k;
    d.mass(k) = ex(rng);
    for (int i = 0; i < n_classes; ++i) d.eta(k, i) = ex(rng);
    d.eta.row(k) /= d.eta.row(k).sum();
    if (n_groups > 1) d.groups.push_back(k % n_groups);
  }
  d.mass /= d.mass.sum();
  return d;
}

// ---------------------------------------------------------------------------
// Enumeration

namespace {

long assignment_count(int n, int k) {
  double total = std::pow(static_cast<double>(n), k);
  if (total > 1e7) throw Error(ErrorCode::BudgetExceeded, "more than 1e7 assignments to enumerate");
  return static_cast<long>(std::llround(total));
}

// Odometer over assignments in lexicographic order (point 0 most significant).
bool next_assignment(std::vector<int>& a, int n) {
  for (int k = static_cast<int>(a.size()) - 1; k >= 0; --k) {
    if (++a[static_cast<std::size_t>(k)] < n) return true;
    a[static_cast<std::size_t>(k)] = 0;
  }
  return false;
}

}  // namespace

EnumerationResult enumerate_lmo(const Vec& loss, const DiscreteDistribution& dist,
                                const ConfusionGeometry& g) {
  dist.validate();
  if (loss.size() != g.dim()) throw Error(ErrorCode::LayoutMismatch, "loss length does not match layout");
  const int n = dist.n_classes;
  const int kk = dist.size();
  assignment_count(n, kk);
  // <loss, M raw> separates into per-point costs
  const Vec raw_loss = g.loss_to_raw(loss);
  Mat cost = Mat::Zero(kk, n);
  for (int k = 0; k < kk; ++k) {
    for (int j = 0; j < n; ++j) {
      for (int i = 0; i < n; ++i) {
        cost(k, j) += dist.mass(k) * dist.eta(k, i) * raw_loss((dist.group(k) * n + i) * n + j);
      }
    }
  }
  std::vector<int> a(static_cast<std::size_t>(kk), 0);
  EnumerationResult best;
  best.value = std::numeric_limits<double>::infinity();
  do {
    double v = 0.0;
    for (int k = 0; k < kk; ++k) v += cost(k, a[static_cast<std::size_t>(k)]);
    if (v < best.value) {
      best.value = v;
      best.assignment = a;
    }
  } while (next_assignment(a, n));
  best.confusion = g.to_layout(dist.raw_confusion(best.assignment));
  best.value = loss.dot(best.confusion);
  return best;
}

EnumerationResult enumerate_minimum(const ConfusionFunction& psi, const DiscreteDistribution& dist,
                                    const ConfusionGeometry& g) {
  dist.validate();
  const int n = dist.n_classes;
  assignment_count(n, dist.size());
  std::vector<int> a(static_cast<std::size_t>(dist.size()), 0);
  EnumerationResult best;
  best.value = std::numeric_limits<double>::infinity();
  do {
    Vec c = g.to_layout(dist.raw_confusion(a));
    double v;
    try {
      v = psi.value(c);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::DegenerateDenominator) throw;
      continue;
    }
    if (v < best.value) {
      best.value = v;
      best.assignment = a;
      best.confusion = std::move(c);
    }
  } while (next_assignment(a, n));
  if (best.assignment.empty()) {
    throw Error(ErrorCode::DegenerateDenominator, "psi is undefined at every assignment");
  }
  return best;
}

EnumerationLmo::EnumerationLmo(DiscreteDistribution dist, GeometryPtr geometry)
    : dist_(std::move(dist)), geometry_(std::move(geometry)), model_(dist_.table_model()) {
  dist_.validate();
  if (geometry_->n_classes() != dist_.n_classes || geometry_->n_groups() != dist_.n_groups) {
    throw Error(ErrorCode::LayoutMismatch, "distribution and layout disagree");
  }
}

LmoResult EnumerationLmo::solve(const Vec& loss) const {
  EnumerationResult e = enumerate_lmo(loss, dist_, *geometry_);
  LmoResult r;
  r.classifier = {geometry_->loss_to_raw(loss), model_, dist_.n_classes, dist_.n_groups};
  r.confusion_estimate = geometry_->wrap(e.confusion);
  r.sample_size = dist_.size();
  return r;
}

// ---------------------------------------------------------------------------
// Evaluation sets

EvalSet EvalSet::from(const DiscreteDistribution& d) {
  d.validate();
  EvalSet s;
  s.eta = d.eta;
  s.groups = d.groups;
  s.weight = d.mass;
  s.n_classes = d.n_classes;
  s.n_groups = d.n_groups;
  return s;
}

EvalSet EvalSet::monte_carlo(const SyntheticSpec& spec, int samples, std::uint64_t seed) {
  if (samples < 1) throw Error(ErrorCode::EmptySample, "Monte-Carlo sample size must be positive");
  const Dataset ds = sample_synthetic(spec, samples, seed);
  EvalSet s;
  s.n_classes = spec.n_classes();
  s.eta.resize(samples, s.n_classes);
  for (int k = 0; k < samples; ++k) s.eta.row(k) = exact_eta(spec, ds.features.row(k).transpose()).transpose();
  s.weight = Vec::Constant(samples, 1.0 / samples);
  return s;
}

EvalSet EvalSet::head(int rows) const {
  if (rows >= size()) return *this;
  EvalSet s;
  s.eta = eta.topRows(rows);
  if (!groups.empty()) s.groups.assign(groups.begin(), groups.begin() + rows);
  s.weight = weight.head(rows) / weight.head(rows).sum();
  s.n_classes = n_classes;
  s.n_groups = n_groups;
  return s;
}

Vec EvalSet::raw_confusion(const Vec& theta) const {
  const int n = n_classes;
  if (theta.size() != family_dim()) throw Error(ErrorCode::LayoutMismatch, "theta has the wrong length");
  Vec raw = Vec::Zero(n_groups * n * n);
  for (int k = 0; k < size(); ++k) {
    const int a = groups.empty() ? 0 : groups[static_cast<std::size_t>(k)];
    int best = 0;
    double best_score = eta(k, 0);
    for (int i = 1; i < n; ++i) {
      const double s = theta(a * (n - 1) + i - 1) * eta(k, i);
      if (s >= best_score) {
        best_score = s;
        best = i;
      }
    }
    const double w = weight(k);
    for (int i = 0; i < n; ++i) raw((a * n + i) * n + best) += w * eta(k, i);
  }
  return raw;
}

// ---------------------------------------------------------------------------
// Grid searches

namespace {

using Index = std::vector<int>;

int axis_points(double max, double step) {
  if (!(step > 0.0) || !(max >= 0.0)) throw Error(ErrorCode::ConfigError, "grid step and range must be positive");
  return static_cast<int>(std::floor(max / step + 1e-9)) + 1;
}

// All index tuples of a D-dimensional grid with `pts` points per axis.
std::vector<Index> all_indices(int dim, int pts) {
  std::vector<Index> out;
  Index idx(static_cast<std::size_t>(dim), 0);
  if (dim == 0) return {idx};
  while (true) {
    out.push_back(idx);
    int k = dim - 1;
    while (k >= 0 && ++idx[static_cast<std::size_t>(k)] == pts) idx[static_cast<std::size_t>(k--)] = 0;
    if (k < 0) break;
  }
  return out;
}

Vec theta_of(const Index& idx, double step) {
  Vec t(static_cast<Eigen::Index>(idx.size()));
  for (std::size_t k = 0; k < idx.size(); ++k) t(static_cast<Eigen::Index>(k)) = idx[k] * step;
  return t;
}

double safe_value(const ConfusionFunction& psi, const Vec& c) {
  try {
    return psi.value(c);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::DegenerateDenominator) throw;
    return std::numeric_limits<double>::infinity();
  }
}

void check_family(const EvalSet& set) {
  if (set.family_dim() > 2) {
    throw Error(ErrorCode::BudgetExceeded, "grid oracles support at most two free weights");
  }
}

}  // namespace

GridResult grid_bayes(const ConfusionFunction& psi, const ConfusionGeometry& g, const EvalSet& set,
                      const GridSpec& spec) {
  check_family(set);
  const int dim = set.family_dim();
  const int pts = axis_points(spec.max, spec.step);
  const double full = std::pow(static_cast<double>(pts), dim) * set.size();
  GridResult best;
  best.value = std::numeric_limits<double>::infinity();

  auto score = [&](const Index& idx, const EvalSet& s) {
    ++best.evaluated;
    return safe_value(psi, g.to_layout(s.raw_confusion(theta_of(idx, spec.step))));
  };
  auto consider = [&](const Index& idx) {
    const double v = score(idx, set);
    if (v < best.value) {
      best.value = v;
      best.theta = theta_of(idx, spec.step);
    }
  };

  if (full <= spec.exhaustive_budget || spec.coarse_step <= spec.step) {
    for (const Index& idx : all_indices(dim, pts)) consider(idx);
  } else {
    // coarse pass on a prefix of the sample, then the fine grid around the
    // best coarse cells on the full sample
    const int ratio = std::max(1, static_cast<int>(std::lround(spec.coarse_step / spec.step)));
    const EvalSet coarse_set = set.head(spec.coarse_rows);
    std::vector<std::pair<double, Index>> ranked;
    for (const Index& c : all_indices(dim, axis_points(spec.max, spec.step * ratio))) {
      Index fine = c;
      for (int& v : fine) v *= ratio;
      ranked.emplace_back(score(fine, coarse_set), fine);
    }
    const auto top = std::min<std::size_t>(ranked.size(), static_cast<std::size_t>(std::max(1, spec.top_k)));
    std::partial_sort(ranked.begin(), ranked.begin() + static_cast<long>(top), ranked.end());
    std::set<Index> seen;
    for (std::size_t r = 0; r < top; ++r) {
      const Index& centre = ranked[r].second;
      for (const Index& off : all_indices(dim, 2 * ratio + 1)) {
        Index idx = centre;
        bool inside = true;
        for (int k = 0; k < dim; ++k) {
          idx[static_cast<std::size_t>(k)] += off[static_cast<std::size_t>(k)] - ratio;
          if (idx[static_cast<std::size_t>(k)] < 0 || idx[static_cast<std::size_t>(k)] >= pts) inside = false;
        }
        if (inside && seen.insert(idx).second) consider(idx);
      }
    }
  }
  if (best.theta.size() != dim) throw Error(ErrorCode::DegenerateDenominator, "psi undefined on the whole grid");
  best.confusion = g.to_layout(set.raw_confusion(best.theta));
  return best;
}

namespace {

struct PairSearch {
  const ConfusionFunction& psi;
  const std::vector<FunctionPtr>& constraints;
  double tol;
  int mix_points;
  bool linear;

  // Best feasible mixing weight on the grid for the segment [c2, c1].
  std::pair<double, double> best_mix(const Vec& c1, const Vec& phi1, const Vec& c2, const Vec& phi2) const {
    const double inf = std::numeric_limits<double>::infinity();
    int lo = 0, hi = mix_points - 1;
    auto beta = [&](int k) { return static_cast<double>(k) / (mix_points - 1); };
    auto value = [&](int k) {
      const double b = beta(k);
      const Vec c = b * c1 + (1.0 - b) * c2;
      if (!linear && !constraints.empty() && evaluate_all(constraints, c).maxCoeff() > tol) return inf;
      return safe_value(psi, c);
    };
    if (linear && phi1.size() > 0) {
      // phi is affine along the segment: phi2 + beta (phi1 - phi2) <= tol
      double blo = 0.0, bhi = 1.0;
      for (Eigen::Index k = 0; k < phi1.size(); ++k) {
        const double slope = phi1(k) - phi2(k);
        const double room = tol - phi2(k);
        if (slope > 0.0) {
          bhi = std::min(bhi, room / slope);
        } else if (slope < 0.0) {
          blo = std::max(blo, room / slope);
        } else if (room < 0.0) {
          return {inf, 0.0};
        }
      }
      if (blo > bhi) return {inf, 0.0};
      lo = static_cast<int>(std::ceil(blo * (mix_points - 1) - 1e-9));
      hi = static_cast<int>(std::floor(bhi * (mix_points - 1) + 1e-9));
      lo = std::max(lo, 0);
      hi = std::min(hi, mix_points - 1);
      if (lo > hi) return {inf, 0.0};
      // psi is convex along the segment: ternary search on the grid
      while (hi - lo > 2) {
        const int m1 = lo + (hi - lo) / 3, m2 = hi - (hi - lo) / 3;
        if (value(m1) < value(m2)) {
          hi = m2 - 1;
        } else {
          lo = m1 + 1;
        }
      }
    }
    double best = inf, arg = 0.0;
    for (int k = lo; k <= hi; ++k) {
      const Vec c = beta(k) * c1 + (1.0 - beta(k)) * c2;
      if (!constraints.empty() && evaluate_all(constraints, c).maxCoeff() > tol) continue;
      const double v = safe_value(psi, c);
      if (v < best) {
        best = v;
        arg = beta(k);
      }
    }
    return {best, arg};
  }
};

}  // namespace

ConstrainedGridResult constrained_grid_optimum(const ConfusionFunction& psi,
                                               const std::vector<FunctionPtr>& constraints,
                                               const ConfusionGeometry& g, const EvalSet& set,
                                               const MixtureGridSpec& spec) {
  check_family(set);
  if (spec.mix_points < 2) throw Error(ErrorCode::ConfigError, "mix_points must be at least 2");
  const int dim = set.family_dim();
  const int pts = axis_points(spec.max, spec.step);
  const bool linear = std::all_of(constraints.begin(), constraints.end(), [](const FunctionPtr& f) {
    return dynamic_cast<const LinearFunction*>(f.get()) != nullptr;
  });
  PairSearch search{psi, constraints, spec.tol, spec.mix_points, linear};

  // distinct confusions on the grid
  std::map<std::vector<double>, Vec> distinct;
  for (const Index& idx : all_indices(dim, pts)) {
    const Vec theta = theta_of(idx, spec.step);
    const Vec c = g.to_layout(set.raw_confusion(theta));
    distinct.emplace(std::vector<double>(c.data(), c.data() + c.size()), theta);
  }
  std::vector<Vec> thetas, confs, phis;
  for (const auto& [key, theta] : distinct) {
    thetas.push_back(theta);
    confs.push_back(Eigen::Map<const Vec>(key.data(), static_cast<Eigen::Index>(key.size())));
    phis.push_back(constraints.empty() ? Vec() : evaluate_all(constraints, confs.back()));
  }

  ConstrainedGridResult best;
  best.value = std::numeric_limits<double>::infinity();
  const std::size_t count = thetas.size();
  for (std::size_t p = 0; p < count; ++p) {
    for (std::size_t q = p; q < count; ++q) {
      const auto [v, mix] = search.best_mix(confs[p], phis[p], confs[q], phis[q]);
      if (v < best.value) {
        best.value = v;
        best.theta1 = thetas[p];
        best.theta2 = thetas[q];
        best.mix = mix;
      }
    }
  }
  if (!std::isfinite(best.value)) {
    throw Error(ErrorCode::InfeasibleAtGridResolution, "no feasible mixture on the grid");
  }

  if (spec.refine && dim > 0) {
    auto eval_pair = [&](const Vec& t1, const Vec& t2) {
      const Vec c1 = g.to_layout(set.raw_confusion(t1)), c2 = g.to_layout(set.raw_confusion(t2));
      const Vec p1 = constraints.empty() ? Vec() : evaluate_all(constraints, c1);
      const Vec p2 = constraints.empty() ? Vec() : evaluate_all(constraints, c2);
      return search.best_mix(c1, p1, c2, p2);
    };
    for (double step : {spec.step / 4.0, spec.step / 16.0}) {
      bool improved = true;
      for (int round = 0; improved && round < 200; ++round) {
        improved = false;
        for (int which = 0; which < 2; ++which) {
          for (int k = 0; k < dim; ++k) {
            for (double sign : {-1.0, 1.0}) {
              Vec t1 = best.theta1, t2 = best.theta2;
              Vec& t = which == 0 ? t1 : t2;
              t(k) = std::clamp(t(k) + sign * step, 0.0, spec.max);
              const auto [v, mix] = eval_pair(t1, t2);
              if (v < best.value - 1e-15) {
                best.value = v;
                best.theta1 = t1;
                best.theta2 = t2;
                best.mix = mix;
                improved = true;
              }
            }
          }
        }
      }
    }
  }
  best.confusion = best.mix * g.to_layout(set.raw_confusion(best.theta1)) +
                   (1.0 - best.mix) * g.to_layout(set.raw_confusion(best.theta2));
  return best;
}

}  // namespace confopt
