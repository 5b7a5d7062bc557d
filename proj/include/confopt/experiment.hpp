#pragma once

// Experiment configuration, the train -> solve -> evaluate pipeline behind
// the command-line tool, and the reference-oracle runner.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "confopt/data.hpp"
#include "confopt/metrics.hpp"
#include "confopt/oracle.hpp"
#include "confopt/solvers.hpp"
#include "json.hpp"

namespace confopt {

struct DiscretizeConfig {
  int points = 200;
  double lo = -4.0;
  double hi = 4.0;
};

struct DataConfig {
  std::optional<SyntheticKind> synthetic;
  std::optional<std::string> csv;
  int n_train = 10000;
  int n_test = 100000;
  double split_fraction = 2.0 / 3.0;  // csv only
  /// Use the exact finite-support approximation of a 1-D synthetic
  /// distribution as both training and test population.
  std::optional<DiscretizeConfig> discretize;
};

struct SolverConfig {
  std::string name = "fw";
  int iterations = 5000;      // resolved per solver when not given
  int inner_iterations = 4000;  // con_bisection
  std::optional<double> lipschitz;
  double r = 0.05;
  double zeta = 10.0;
  double radius = 1000.0;
  std::optional<double> eta, eta_prime, eta_lambda, eta_mu, eta_xi;
  int inner_budget = 1000;
  bool line_search = false;
  bool tune_steps = false;
  bool prune = true;
  bool hull_weights = false;
  bool printed_assignment = false;
};

struct OracleConfig {
  double grid_max = 10.0;
  double grid_step = 0.02;
  double coarse_step = 0.1;
  int mc_samples = 1000000;
  std::uint64_t seed = 20240601;
  double mix_step = 0.25;
  int mix_points = 101;
};

struct ExperimentConfig {
  DataConfig data;
  std::optional<Representation> layout;  // automatic when absent
  Metric metric = Metric::of(MetricKind::QMean);
  std::vector<Constraint> constraints;
  SolverConfig solver;
  std::string lmo = "plugin";  // plugin | wlr | exact_eta
  TrainerConfig cpe;
  std::uint64_t seed = 1;
  int n_trials = 1;
  bool allow_mismatch = false;
  OracleConfig oracle;
};

/// Default iteration budget of a solver: 5000 for fw/gda, 1000 for the
/// ellipsoid methods, 10000 for split_fw/con_gda, 20 and 10 for the
/// bisection methods.
int default_iterations(const std::string& solver);

/// Parses and validates; errors are ConfigError with the offending field path.
ExperimentConfig parse_config(const nlohmann::json& j);
ExperimentConfig load_config(const std::string& path);
/// Resolved configuration, every default filled in.
nlohmann::json config_to_json(const ExperimentConfig& c);
/// Cross-field checks (solver/metric compatibility, constraint support).
void validate_config(const ExperimentConfig& c);

/// Layout used for a configuration (explicit or automatic).
ConfusionLayout resolve_layout(const ExperimentConfig& c, int n_classes, int n_groups);

/// Everything a solver run needs for one trial.
struct TrialData {
  std::uint64_t seed = 0;
  Dataset train;
  Dataset test;
  ModelPtr model;
  GeometryPtr train_geometry;
  GeometryPtr test_geometry;
  LmoPtr lmo;
};

TrialData prepare_trial(const ExperimentConfig& c, std::uint64_t seed);

struct TrialResult {
  std::uint64_t seed = 0;
  double train_objective = 0.0;
  double test_objective = 0.0;
  Vec test_violations;  // one per expanded constraint
  double test_max_violation = 0.0;
  long lmo_calls = 0;
  double wall_seconds = 0.0;
  SolverResult solver;
};

TrialResult solve_trial(const ExperimentConfig& c, const TrialData& data);
TrialResult run_trial(const ExperimentConfig& c, std::uint64_t seed);

/// Trial k uses seed + k.
std::uint64_t trial_seed(const ExperimentConfig& c, int trial);

struct ExperimentOutput {
  std::vector<TrialResult> trials;
  nlohmann::json summary;  // deterministic given the config
  nlohmann::json timing;
};

/// Runs c.n_trials trials on up to `threads` threads.
ExperimentOutput run_experiment(const ExperimentConfig& c, int threads = 1);

/// Writes summary.json, timing.json, trace_<k>.csv and (when the members
/// share a softmax model) classifier_<k>.json into `dir`.
void write_outputs(const ExperimentOutput& out, const std::string& dir);

/// Grid-search reference value for the configured synthetic problem.
/// Defined in the confopt_bruteforce library.
nlohmann::json run_bayes_oracle(const ExperimentConfig& c);

/// Test metric and constraint values of a saved classifier on the data the
/// configuration describes (trial seed c.seed).
nlohmann::json evaluate_saved(const ExperimentConfig& c, const RandomizedClassifier& h);

}  // namespace confopt
