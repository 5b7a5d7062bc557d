#pragma once

// Class-probability models, plug-in classifiers and linear minimization
// oracles over the achievable confusion set.

#include <memory>
#include <string>
#include <vector>

#include "confopt/data.hpp"
#include "confopt/metrics.hpp"

namespace confopt {

/// Estimate of the class-probability function eta(x).
class ProbabilityModel {
 public:
  virtual ~ProbabilityModel() = default;
  virtual int n_classes() const = 0;
  virtual Vec predict_proba(const Vec& x) const = 0;
  /// N x n matrix of class probabilities for the rows of X.
  virtual Mat predict_proba_batch(const Mat& features) const;
};

using ModelPtr = std::shared_ptr<const ProbabilityModel>;

/// Softmax-linear model: scores = W [x; 1].
class ClassProbabilityModel final : public ProbabilityModel {
 public:
  ClassProbabilityModel(int n_classes, int n_features);
  explicit ClassProbabilityModel(Mat weights);

  int n_classes() const override { return static_cast<int>(weights_.rows()); }
  int n_features() const { return static_cast<int>(weights_.cols()) - 1; }
  const Mat& weights() const { return weights_; }
  Vec predict_proba(const Vec& x) const override;
  Mat predict_proba_batch(const Mat& features) const override;

 private:
  Mat weights_;  // n x (q + 1), bias in the last column
};

/// Exact eta for finite supports: feature 0 holds the support index.
class TableModel final : public ProbabilityModel {
 public:
  explicit TableModel(Mat eta) : eta_(std::move(eta)) {}
  int n_classes() const override { return static_cast<int>(eta_.cols()); }
  Vec predict_proba(const Vec& x) const override;

 private:
  Mat eta_;
};

/// Exact eta of a synthetic distribution.
class SyntheticEtaModel final : public ProbabilityModel {
 public:
  explicit SyntheticEtaModel(SyntheticSpec spec) : spec_(std::move(spec)) {}
  int n_classes() const override { return spec_.n_classes(); }
  Vec predict_proba(const Vec& x) const override { return exact_eta(spec_, x); }

 private:
  SyntheticSpec spec_;
};

/// Cost-sensitive plug-in rule argmin_j sum_i eta_i(x) L[group(x), i, j],
/// ties broken toward the larger class index.
struct DeterministicClassifier {
  Vec raw_loss;  // length m*n*n, entry (a, i, j) at (a*n + i)*n + j
  ModelPtr model;
  int n_classes = 2;
  int n_groups = 1;

  int predict(const Vec& eta, int group = 0) const;
  /// Predictions from precomputed class probabilities (N x n).
  std::vector<int> predict_all(const Mat& eta, const std::vector<int>& groups) const;
};

/// A dataset together with the model's class probabilities on it.
struct ScoredSample {
  const Dataset* data = nullptr;
  Mat eta;  // N x n

  ScoredSample() = default;
  ScoredSample(const Dataset& ds, const ProbabilityModel& model);
};

/// Normalized raw confusion (length m*n*n) of a labelling of the sample.
Vec raw_confusion(const Dataset& ds, const std::vector<int>& predictions);

ConfusionVector empirical_confusion(const DeterministicClassifier& h, const Dataset& ds,
                                    const ConfusionGeometry& g);
ConfusionVector empirical_confusion(const DeterministicClassifier& h, const ScoredSample& s,
                                    const ConfusionGeometry& g);

/// Convex mixture of deterministic classifiers.
struct RandomizedClassifier {
  std::vector<DeterministicClassifier> members;
  Vec weights;

  void validate(double tol = 1e-9) const;
  /// Weighted combination of member confusions on the dataset.
  ConfusionVector confusion(const Dataset& ds, const ConfusionGeometry& g) const;
  /// Drops zero-weight members.
  RandomizedClassifier compacted() const;
  static RandomizedClassifier single(DeterministicClassifier h);
};

struct LmoResult {
  DeterministicClassifier classifier;
  ConfusionVector confusion_estimate;
  int sample_size = 0;
};

/// Linear minimization oracle over the achievable set in a fixed geometry.
/// Losses are given in layout coordinates.
class Lmo {
 public:
  virtual ~Lmo() = default;
  virtual LmoResult solve(const Vec& loss) const = 0;
  virtual GeometryPtr geometry() const = 0;
};

using LmoPtr = std::shared_ptr<const Lmo>;

/// Plug-in oracle; the model's probabilities on the sample are computed once.
class PluginLmo final : public Lmo {
 public:
  PluginLmo(ModelPtr model, const Dataset& sample, GeometryPtr geometry);
  LmoResult solve(const Vec& loss) const override;
  GeometryPtr geometry() const override { return geometry_; }
  const ModelPtr& model() const { return model_; }

 private:
  ModelPtr model_;
  Dataset sample_;
  Mat eta_;
  GeometryPtr geometry_;
};

/// Single-group plug-in oracle. Errors: EmptySample, LayoutMismatch.
LmoResult plugin_lmo(const Vec& loss, ModelPtr model, const Dataset& sample,
                     const ConfusionLayout& layout);

/// Group-aware plug-in oracle; group blocks of the loss are selected by the
/// instance's group. Errors: EmptySample, LayoutMismatch, GroupOutOfRange.
LmoResult group_plugin_lmo(const Vec& loss, ModelPtr model, const Dataset& sample,
                           const ConfusionLayout& layout, const ClassMasses& masses);

struct TrainerConfig {
  int iterations = 2000;
  double step = 0.1;
  double l2 = 1e-4;
  double grad_tol = 0.0;  // stop early when the max-abs gradient drops below
  bool record_objective = false;
};

struct TrainResult {
  std::shared_ptr<const ClassProbabilityModel> model;
  std::vector<double> objective;  // per iteration when recorded
};

/// Multinomial logistic regression by full-batch gradient descent with step
/// halving on objective increase. Optional per-class weights scale the loss.
TrainResult train_cpe_detailed(const Dataset& sample, const TrainerConfig& cfg,
                               const Vec& class_weights = Vec());
std::shared_ptr<const ClassProbabilityModel> train_cpe(const Dataset& sample,
                                                       const TrainerConfig& cfg);

/// Trains a fresh class-weighted logistic model and returns its argmax
/// classifier. Errors: DegenerateLoss when all weights are zero.
LmoResult wlr_lmo(const Vec& class_weights, const Dataset& sample, const TrainerConfig& cfg,
                  const ConfusionGeometry& g);

/// Oracle that answers per-class (diagonal) losses with wlr_lmo and routes
/// any other loss to the plug-in oracle.
class WlrLmo final : public Lmo {
 public:
  WlrLmo(const Dataset& sample, TrainerConfig cfg, GeometryPtr geometry,
         std::shared_ptr<const PluginLmo> fallback);
  LmoResult solve(const Vec& loss) const override;
  GeometryPtr geometry() const override { return geometry_; }

  /// Per-class weights c with argmin_j sum_i eta_i L_ij = argmax_j c_j eta_j,
  /// or an empty vector when the raw loss is not of that form.
  static Vec diagonal_weights(const Vec& raw_loss, int n_classes, int n_groups);

 private:
  Dataset sample_;
  TrainerConfig cfg_;
  GeometryPtr geometry_;
  std::shared_ptr<const PluginLmo> fallback_;
};

}  // namespace confopt
