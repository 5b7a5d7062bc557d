#include "confopt/oracle.hpp"

#include <algorithm>
#include <cmath>

namespace confopt {

Mat ProbabilityModel::predict_proba_batch(const Mat& features) const {
  Mat out(features.rows(), n_classes());
  for (Eigen::Index r = 0; r < features.rows(); ++r) {
    out.row(r) = predict_proba(features.row(r).transpose()).transpose();
  }
  return out;
}

namespace {

// Row-wise softmax, in place.
void softmax_rows(Mat& scores) {
  for (Eigen::Index r = 0; r < scores.rows(); ++r) {
    const double mx = scores.row(r).maxCoeff();
    scores.row(r) = (scores.row(r).array() - mx).exp();
    scores.row(r) /= scores.row(r).sum();
  }
}

Mat scores_of(const Mat& weights, const Mat& features) {
  const Eigen::Index q = weights.cols() - 1;
  Mat s = features * weights.leftCols(q).transpose();
  s.rowwise() += weights.col(q).transpose();
  return s;
}

}  // namespace

ClassProbabilityModel::ClassProbabilityModel(int n_classes, int n_features)
    : weights_(Mat::Zero(n_classes, n_features + 1)) {}

ClassProbabilityModel::ClassProbabilityModel(Mat weights) : weights_(std::move(weights)) {
  if (weights_.rows() < 2 || weights_.cols() < 1 || !weights_.allFinite()) {
    throw Error(ErrorCode::InvalidData, "model weights must be finite, n x (q+1) with n >= 2");
  }
}

Vec ClassProbabilityModel::predict_proba(const Vec& x) const {
  Mat row = x.transpose();
  return predict_proba_batch(row).row(0).transpose();
}

Mat ClassProbabilityModel::predict_proba_batch(const Mat& features) const {
  if (features.cols() != n_features()) {
    throw Error(ErrorCode::LayoutMismatch, "feature dimension does not match the model");
  }
  Mat s = scores_of(weights_, features);
  softmax_rows(s);
  return s;
}

Vec TableModel::predict_proba(const Vec& x) const {
  const double idx = x(0);
  if (!(idx >= 0.0) || idx >= static_cast<double>(eta_.rows()) || idx != std::floor(idx)) {
    throw Error(ErrorCode::InvalidData, "support index out of range for table model");
  }
  return eta_.row(static_cast<Eigen::Index>(idx)).transpose();
}

// ---------------------------------------------------------------------------
// Plug-in classifiers

int DeterministicClassifier::predict(const Vec& eta, int group) const {
  const int n = n_classes;
  int best = 0;
  double best_cost = 0.0;
  for (int j = 0; j < n; ++j) {
    double cost = 0.0;
    for (int i = 0; i < n; ++i) cost += eta(i) * raw_loss((group * n + i) * n + j);
    if (j == 0 || cost <= best_cost) {
      best = j;
      best_cost = cost;
    }
  }
  return best;
}

std::vector<int> DeterministicClassifier::predict_all(const Mat& eta,
                                                      const std::vector<int>& groups) const {
  const int n = n_classes;
  const Eigen::Index rows = eta.rows();
  std::vector<int> out(static_cast<std::size_t>(rows));
  if (n_groups > 1 && static_cast<Eigen::Index>(groups.size()) != rows) {
    throw Error(ErrorCode::LayoutMismatch, "group-aware classifier applied to data without groups");
  }
  std::vector<Mat> blocks(n_groups, Mat(n, n));
  for (int a = 0; a < n_groups; ++a)
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) blocks[a](i, j) = raw_loss((a * n + i) * n + j);

  auto argmin_row = [n](const auto& costs) {
    int best = 0;
    for (int j = 1; j < n; ++j) {
      if (costs(j) <= costs(best)) best = j;
    }
    return best;
  };

  if (n_groups == 1) {
    Mat costs = eta * blocks[0];
    for (Eigen::Index r = 0; r < rows; ++r) out[r] = argmin_row(costs.row(r));
    return out;
  }
  Eigen::RowVectorXd costs(n);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const int a = groups[r];
    if (a < 0 || a >= n_groups) {
      throw Error(ErrorCode::GroupOutOfRange, "group index " + std::to_string(a) + " out of range");
    }
    costs = eta.row(r) * blocks[a];
    out[r] = argmin_row(costs);
  }
  return out;
}

ScoredSample::ScoredSample(const Dataset& ds, const ProbabilityModel& model)
    : data(&ds), eta(model.predict_proba_batch(ds.features)) {}

namespace {

Vec raw_confusion_grouped(const Dataset& ds, const std::vector<int>& pred, int n_groups) {
  const int n = ds.n_classes;
  Vec raw = Vec::Zero(n_groups * n * n);
  for (int k = 0; k < ds.size(); ++k) {
    const int a = n_groups == 1 ? 0 : ds.group(k);
    if (a < 0 || a >= n_groups) {
      throw Error(ErrorCode::GroupOutOfRange, "group index " + std::to_string(a) + " out of range");
    }
    raw((a * n + ds.labels[k]) * n + pred[k]) += ds.weight(k);
  }
  const double total = ds.total_weight();
  if (!(total > 0.0)) throw Error(ErrorCode::EmptySample, "sample has no mass");
  return raw / total;
}

void check_sample(const Dataset& ds) {
  if (ds.size() == 0 || !(ds.total_weight() > 0.0)) {
    throw Error(ErrorCode::EmptySample, "LMO sample is empty");
  }
}

}  // namespace

Vec raw_confusion(const Dataset& ds, const std::vector<int>& predictions) {
  return raw_confusion_grouped(ds, predictions, ds.groups.empty() ? 1 : ds.n_groups);
}

ConfusionVector empirical_confusion(const DeterministicClassifier& h, const ScoredSample& s,
                                    const ConfusionGeometry& g) {
  if (h.n_classes != g.n_classes() || h.n_groups != g.n_groups()) {
    throw Error(ErrorCode::LayoutMismatch, "classifier and layout disagree on n or m");
  }
  auto pred = h.predict_all(s.eta, s.data->groups);
  return g.wrap(g.to_layout(raw_confusion_grouped(*s.data, pred, g.n_groups())));
}

ConfusionVector empirical_confusion(const DeterministicClassifier& h, const Dataset& ds,
                                    const ConfusionGeometry& g) {
  return empirical_confusion(h, ScoredSample(ds, *h.model), g);
}

void RandomizedClassifier::validate(double tol) const {
  if (members.empty() || weights.size() != static_cast<Eigen::Index>(members.size())) {
    throw Error(ErrorCode::InvalidData, "mixture needs one weight per member");
  }
  if (weights.minCoeff() < -tol || std::abs(weights.sum() - 1.0) > tol) {
    throw Error(ErrorCode::InvalidData, "mixture weights must lie in the simplex");
  }
}

ConfusionVector RandomizedClassifier::confusion(const Dataset& ds, const ConfusionGeometry& g) const {
  Vec total = Vec::Zero(g.dim());
  const ProbabilityModel* cached_model = nullptr;
  ScoredSample scored;
  for (std::size_t t = 0; t < members.size(); ++t) {
    const double w = weights(static_cast<Eigen::Index>(t));
    if (w == 0.0) continue;
    if (members[t].model.get() != cached_model) {
      cached_model = members[t].model.get();
      scored = ScoredSample(ds, *cached_model);
    }
    total += w * empirical_confusion(members[t], scored, g).entries;
  }
  return g.wrap(total);
}

RandomizedClassifier RandomizedClassifier::compacted() const {
  RandomizedClassifier out;
  std::vector<double> w;
  for (std::size_t t = 0; t < members.size(); ++t) {
    if (weights(static_cast<Eigen::Index>(t)) > 0.0) {
      out.members.push_back(members[t]);
      w.push_back(weights(static_cast<Eigen::Index>(t)));
    }
  }
  out.weights = Eigen::Map<Vec>(w.data(), static_cast<Eigen::Index>(w.size()));
  out.weights /= out.weights.sum();
  return out;
}

RandomizedClassifier RandomizedClassifier::single(DeterministicClassifier h) {
  RandomizedClassifier out;
  out.members.push_back(std::move(h));
  out.weights = Vec::Ones(1);
  return out;
}

// ---------------------------------------------------------------------------
// Oracles

PluginLmo::PluginLmo(ModelPtr model, const Dataset& sample, GeometryPtr geometry)
    : model_(std::move(model)), sample_(sample), geometry_(std::move(geometry)) {
  check_sample(sample_);
  if (model_->n_classes() != geometry_->n_classes() || sample_.n_classes != geometry_->n_classes()) {
    throw Error(ErrorCode::LayoutMismatch, "model, sample and layout disagree on n_classes");
  }
  eta_ = model_->predict_proba_batch(sample_.features);
}

LmoResult PluginLmo::solve(const Vec& loss) const {
  const auto& g = *geometry_;
  if (loss.size() != g.dim()) {
    throw Error(ErrorCode::LayoutMismatch, "loss length " + std::to_string(loss.size()) +
                                               " does not match layout dimension " +
                                               std::to_string(g.dim()));
  }
  DeterministicClassifier h{g.loss_to_raw(loss), model_, g.n_classes(), g.n_groups()};
  auto pred = h.predict_all(eta_, sample_.groups);
  ConfusionVector c = g.wrap(g.to_layout(raw_confusion_grouped(sample_, pred, g.n_groups())));
  return {std::move(h), std::move(c), sample_.size()};
}

LmoResult plugin_lmo(const Vec& loss, ModelPtr model, const Dataset& sample,
                     const ConfusionLayout& layout) {
  check_sample(sample);
  if (layout.n_groups != 1) {
    throw Error(ErrorCode::LayoutMismatch, "plugin_lmo is single-group; use group_plugin_lmo");
  }
  auto g = std::make_shared<ConfusionGeometry>(layout, sample.masses());
  return PluginLmo(std::move(model), sample, g).solve(loss);
}

LmoResult group_plugin_lmo(const Vec& loss, ModelPtr model, const Dataset& sample,
                           const ConfusionLayout& layout, const ClassMasses& masses) {
  check_sample(sample);
  if (layout.n_groups > 1 && static_cast<int>(sample.groups.size()) != sample.size()) {
    throw Error(ErrorCode::LayoutMismatch, "group layout needs a group for every instance");
  }
  for (int a : sample.groups) {
    if (a < 0 || a >= layout.n_groups) {
      throw Error(ErrorCode::GroupOutOfRange, "group index " + std::to_string(a) + " out of range");
    }
  }
  auto g = std::make_shared<ConfusionGeometry>(layout, masses);
  return PluginLmo(std::move(model), sample, g).solve(loss);
}

// ---------------------------------------------------------------------------
// Logistic regression

namespace {

struct LogisticProblem {
  Mat x;          // N x (q+1), bias column last
  Mat onehot;     // N x n
  Vec s;          // per-row loss weight
  double norm;    // normalizer of the weighted NLL
  double l2;

  // Objective; also leaves the class probabilities in `prob`.
  double eval(const Mat& w, Mat& prob) const {
    prob = x * w.transpose();
    double nll = 0.0;
    for (Eigen::Index r = 0; r < prob.rows(); ++r) {
      const double mx = prob.row(r).maxCoeff();
      prob.row(r) = (prob.row(r).array() - mx).exp();
      const double z = prob.row(r).sum();
      prob.row(r) /= z;
      if (s(r) != 0.0) {
        double fy = 0.0;
        for (Eigen::Index i = 0; i < onehot.cols(); ++i) {
          if (onehot(r, i) != 0.0) fy = std::log(std::max(prob(r, i), 1e-300));
        }
        nll -= s(r) * fy;
      }
    }
    const Eigen::Index q = w.cols() - 1;
    return nll / norm + 0.5 * l2 * w.leftCols(q).squaredNorm();
  }

  Mat gradient(const Mat& w, const Mat& prob) const {
    Mat resid = prob - onehot;
    resid.array().colwise() *= s.array();
    Mat g = resid.transpose() * x / norm;
    const Eigen::Index q = w.cols() - 1;
    g.leftCols(q) += l2 * w.leftCols(q);
    return g;
  }
};

}  // namespace

TrainResult train_cpe_detailed(const Dataset& sample, const TrainerConfig& cfg,
                               const Vec& class_weights) {
  check_sample(sample);
  if (!sample.features.allFinite()) throw Error(ErrorCode::InvalidData, "non-finite feature value");
  const int n = sample.n_classes;
  const int rows = sample.size();
  const int q = sample.dim();
  for (int y : sample.labels) {
    if (y < 0 || y >= n) throw Error(ErrorCode::InvalidData, "label out of range");
  }

  LogisticProblem p;
  p.x.resize(rows, q + 1);
  p.x.leftCols(q) = sample.features;
  p.x.col(q).setOnes();
  p.onehot = Mat::Zero(rows, n);
  p.s.resize(rows);
  for (int r = 0; r < rows; ++r) {
    p.onehot(r, sample.labels[r]) = 1.0;
    const double cw = class_weights.size() > 0 ? class_weights(sample.labels[r]) : 1.0;
    p.s(r) = sample.weight(r) * cw;
  }
  p.norm = sample.total_weight();
  p.l2 = cfg.l2;

  Mat w = Mat::Zero(n, q + 1);
  Mat prob, trial_prob;
  double f = p.eval(w, prob);
  TrainResult out;
  double step = cfg.step;
  for (int it = 0; it < cfg.iterations; ++it) {
    Mat grad = p.gradient(w, prob);
    if (cfg.grad_tol > 0.0 && grad.cwiseAbs().maxCoeff() < cfg.grad_tol) break;
    bool accepted = false;
    while (step > 1e-16) {
      Mat trial = w - step * grad;
      const double ft = p.eval(trial, trial_prob);
      if (std::isfinite(ft) && ft <= f) {
        w = std::move(trial);
        f = ft;
        prob.swap(trial_prob);
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (cfg.record_objective) out.objective.push_back(f);
    if (!accepted) break;
  }
  out.model = std::make_shared<ClassProbabilityModel>(std::move(w));
  return out;
}

std::shared_ptr<const ClassProbabilityModel> train_cpe(const Dataset& sample,
                                                       const TrainerConfig& cfg) {
  return train_cpe_detailed(sample, cfg).model;
}

namespace {

Vec zero_one_raw(int n, int m) {
  Vec raw = Vec::Ones(m * n * n);
  for (int a = 0; a < m; ++a)
    for (int i = 0; i < n; ++i) raw((a * n + i) * n + i) = 0.0;
  return raw;
}

}  // namespace

LmoResult wlr_lmo(const Vec& class_weights, const Dataset& sample, const TrainerConfig& cfg,
                  const ConfusionGeometry& g) {
  check_sample(sample);
  if (class_weights.size() != sample.n_classes) {
    throw Error(ErrorCode::LayoutMismatch, "one class weight per class expected");
  }
  if (class_weights.minCoeff() < 0.0 || !(class_weights.maxCoeff() > 0.0)) {
    throw Error(ErrorCode::DegenerateLoss, "class weights must be nonnegative and not all zero");
  }
  auto model = train_cpe_detailed(sample, cfg, class_weights).model;
  DeterministicClassifier h{zero_one_raw(g.n_classes(), g.n_groups()), model, g.n_classes(),
                            g.n_groups()};
  ConfusionVector c = empirical_confusion(h, sample, g);
  return {std::move(h), std::move(c), sample.size()};
}

WlrLmo::WlrLmo(const Dataset& sample, TrainerConfig cfg, GeometryPtr geometry,
               std::shared_ptr<const PluginLmo> fallback)
    : sample_(sample), cfg_(cfg), geometry_(std::move(geometry)), fallback_(std::move(fallback)) {
  check_sample(sample_);
}

Vec WlrLmo::diagonal_weights(const Vec& raw_loss, int n, int m) {
  if (m != 1) return Vec();
  Vec c(n);
  const double scale = std::max(1.0, raw_loss.cwiseAbs().maxCoeff());
  for (int i = 0; i < n; ++i) {
    const double off = raw_loss(i * n + (i == 0 ? 1 : 0));
    for (int j = 0; j < n; ++j) {
      if (j != i && std::abs(raw_loss(i * n + j) - off) > 1e-12 * scale) return Vec();
    }
    c(i) = std::max(0.0, off - raw_loss(i * n + i));
  }
  return c;
}

LmoResult WlrLmo::solve(const Vec& loss) const {
  const auto& g = *geometry_;
  if (loss.size() != g.dim()) throw Error(ErrorCode::LayoutMismatch, "loss length mismatch");
  Vec c = diagonal_weights(g.loss_to_raw(loss), g.n_classes(), g.n_groups());
  if (c.size() == 0 || !(c.maxCoeff() > 0.0)) {
    if (!fallback_) {
      throw Error(ErrorCode::DegenerateLoss, "loss is not per-class and no plug-in fallback is set");
    }
    return fallback_->solve(loss);
  }
  return wlr_lmo(c, sample_, cfg_, g);
}

}  // namespace confopt
