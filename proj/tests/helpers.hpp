#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <random>

#include "confopt/metrics.hpp"

namespace confopt::testing {

inline Vec central_difference(const std::function<double(const Vec&)>& f, const Vec& x, double h = 1e-6) {
  Vec g(x.size());
  for (Eigen::Index k = 0; k < x.size(); ++k) {
    Vec xp = x, xm = x;
    xp(k) += h;
    xm(k) -= h;
    g(k) = (f(xp) - f(xm)) / (2.0 * h);
  }
  return g;
}

inline double relative_error(const Vec& a, const Vec& b) {
  return (a - b).norm() / std::max(1.0, b.norm());
}

/// Uniform point of the simplex (exponential spacings).
inline Vec random_simplex(int d, std::mt19937_64& rng, double floor = 0.0) {
  std::exponential_distribution<double> e(1.0);
  Vec v(d);
  for (int k = 0; k < d; ++k) v(k) = e(rng) + floor;
  return v / v.sum();
}

inline Vec random_box(int d, std::mt19937_64& rng, double lo = 0.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Vec v(d);
  for (int k = 0; k < d; ++k) v(k) = u(rng);
  return v;
}

inline Vec vec(std::initializer_list<double> xs) {
  Vec v(static_cast<Eigen::Index>(xs.size()));
  Eigen::Index k = 0;
  for (double x : xs) v(k++) = x;
  return v;
}

inline GeometryPtr full_geometry(const Vec& priors) {
  return std::make_shared<ConfusionGeometry>(ConfusionLayout::full(static_cast<int>(priors.size())),
                                             ClassMasses::from_priors(priors));
}

inline GeometryPtr diag_geometry(const Vec& priors) {
  return std::make_shared<ConfusionGeometry>(
      ConfusionLayout::diagonal_normalized(static_cast<int>(priors.size())), ClassMasses::from_priors(priors));
}

/// Raw joint matrix (row-major n x n) with the given row sums.
inline Vec random_confusion(const Vec& priors, std::mt19937_64& rng, double floor = 0.05) {
  const int n = static_cast<int>(priors.size());
  Vec c(n * n);
  for (int i = 0; i < n; ++i) c.segment(i * n, n) = priors(i) * random_simplex(n, rng, floor);
  return c;
}

}  // namespace confopt::testing
