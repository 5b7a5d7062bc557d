#pragma once

// Helpers shared by the solver translation units.

#include <cmath>
#include <string>
#include <vector>

#include "confopt/solvers.hpp"

namespace confopt::detail {

enum class Norm { Inf, L2 };

inline double norm_of(const Vec& v, Norm norm) {
  return norm == Norm::Inf ? v.lpNorm<Eigen::Infinity>() : v.norm();
}

/// v / ||v||, or the normalized 0-1 direction when v vanishes.
inline Vec direction(const Vec& v, Norm norm, const ConfusionGeometry& g) {
  const double nv = norm_of(v, norm);
  if (nv > 0.0 && std::isfinite(nv)) return v / nv;
  Vec f = g.fallback_direction();
  return f / norm_of(f, norm);
}

/// Oracle call counted against the solver budget.
struct CountingLmo {
  const Lmo& lmo;
  long calls = 0;

  LmoResult operator()(const Vec& loss) {
    ++calls;
    return lmo.solve(loss);
  }
};

/// Members with their training confusions; weights are supplied at the end.
struct MemberPool {
  std::vector<DeterministicClassifier> members;
  std::vector<Vec> confusions;

  int add(const LmoResult& r) {
    members.push_back(r.classifier);
    confusions.push_back(r.confusion_estimate.entries);
    return static_cast<int>(members.size()) - 1;
  }
  int add(const DeterministicClassifier& h, const Vec& c) {
    members.push_back(h);
    confusions.push_back(c);
    return static_cast<int>(members.size()) - 1;
  }
  int size() const { return static_cast<int>(members.size()); }

  RandomizedClassifier mixture(const Vec& weights) const {
    RandomizedClassifier h;
    h.members = members;
    h.weights = weights;
    return h;
  }
  Vec combine(const Vec& weights) const {
    Vec out = Vec::Zero(confusions.front().size());
    for (int t = 0; t < size(); ++t) {
      if (weights(t) != 0.0) out += weights(t) * confusions[static_cast<std::size_t>(t)];
    }
    return out;
  }
};

/// Appends the members of a randomized classifier to the pool, returning
/// the indices they occupy.
inline std::vector<int> add_mixture(MemberPool& pool, const RandomizedClassifier& h,
                                    const std::vector<Vec>& member_confusions) {
  std::vector<int> idx;
  for (std::size_t s = 0; s < h.members.size(); ++s) idx.push_back(pool.add(h.members[s], member_confusions[s]));
  return idx;
}

inline Error with_iteration(const Error& e, int t) {
  std::string what = e.what();
  const auto colon = what.find(": ");
  if (colon != std::string::npos) what = what.substr(colon + 2);
  return Error(e.code(), "iteration " + std::to_string(t) + ": " + what);
}

}  // namespace confopt::detail
