#pragma once

// Datasets, synthetic generators with closed-form class probabilities, and
// CSV ingestion.
//
// Sampling uses std::mt19937_64 with the standard library distributions;
// bit-reproducibility across machines therefore assumes the same standard
// library implementation (libstdc++ is what the fixtures were produced with).

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "confopt/metrics.hpp"

namespace confopt {

struct Dataset {
  Mat features;             // N x q
  std::vector<int> labels;  // in [0, n_classes)
  std::vector<int> groups;  // empty, or in [0, n_groups)
  Vec weights;              // empty means unit weights
  int n_classes = 2;
  int n_groups = 1;

  int size() const { return static_cast<int>(labels.size()); }
  int dim() const { return static_cast<int>(features.cols()); }
  bool weighted() const { return weights.size() > 0; }
  double weight(int k) const { return weighted() ? weights(k) : 1.0; }
  double total_weight() const;
  int group(int k) const { return groups.empty() ? 0 : groups[k]; }

  /// Throws InvalidData / GroupOutOfRange on broken invariants.
  void validate() const;
  Dataset subset(const std::vector<int>& rows) const;
  /// Weighted empirical class priors and group/class masses.
  ClassMasses masses() const;
};

enum class SyntheticKind { Unif, NormBal, NormImbal, ThreeClass2D, ThreeClass1D, Custom };

std::string_view to_string(SyntheticKind k);
SyntheticKind synthetic_kind_from_string(std::string_view s);

/// Class-conditional distribution: Gaussian(mean, cov) or a product of
/// uniforms on [low, high].
struct ComponentSpec {
  enum class Type { Gaussian, Uniform };
  Type type = Type::Gaussian;
  Vec mean;
  Mat cov;
  Vec low;
  Vec high;

  double density(const Vec& x) const;
};

struct SyntheticSpec {
  SyntheticKind kind = SyntheticKind::NormBal;
  Vec priors;
  std::vector<ComponentSpec> components;  // one per class
  std::uint64_t seed = 0;

  /// Built-in distributions with their fixed parameters.
  static SyntheticSpec of(SyntheticKind kind, std::uint64_t seed = 0);
  int n_classes() const { return static_cast<int>(priors.size()); }
  int dim() const;
  void validate() const;
};

Dataset sample_synthetic(const SyntheticSpec& spec, int n, std::uint64_t seed);

/// eta_i(x) = pi_i p_i(x) / sum_j pi_j p_j(x). Outside every support the
/// uniform vector is returned and *outside (if given) is set.
Vec exact_eta(const SyntheticSpec& spec, const Vec& x, bool* outside = nullptr);

/// Finite-support approximation of a one-dimensional synthetic distribution.
struct DiscreteSupport {
  Mat points;  // K x q
  Vec mass;    // K, sums to 1
  Mat eta;     // K x n
};

/// Regular grid of `points` cells over [lo, hi]; mass proportional to the
/// mixture density at the cell centre, eta exact at the centre.
DiscreteSupport discretize(const SyntheticSpec& spec, int points, double lo, double hi);

/// Weighted dataset with one row per (support point, class), weight mass*eta.
Dataset to_weighted_dataset(const DiscreteSupport& support, bool index_features = false);

/// Reads `f0,...,f{q-1},label[,group]`. n_classes / n_groups of 0 mean
/// "infer from the data".
Dataset load_csv(const std::string& path, int n_classes = 0, int n_groups = 0);
void write_csv(const Dataset& ds, const std::string& path);

/// Deterministic split stratified by label; `fraction` goes to the first set.
std::pair<Dataset, Dataset> split(const Dataset& ds, double fraction, std::uint64_t seed);

}  // namespace confopt
