// confopt: run experiments, compute reference oracles, re-evaluate saved
// classifiers.
//
// Exit codes: 0 success, 2 configuration error, 3 numerical/runtime failure.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "confopt/experiment.hpp"
#include "confopt/persistence.hpp"

using namespace confopt;

namespace {

struct CommonFlags {
  std::string config;
  std::string out;
  std::optional<int> trials;
  std::optional<std::uint64_t> seed;
  bool allow_mismatch = false;
};

void add_common(CLI::App* cmd, CommonFlags& f, bool with_out, const std::string& out_help) {
  cmd->add_option("--config", f.config, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
  if (with_out) cmd->add_option("--out", f.out, out_help);
  cmd->add_option("--trials", f.trials, "override n_trials")->check(CLI::PositiveNumber);
  cmd->add_option("--seed", f.seed, "override the base seed");
  cmd->add_flag("--allow-mismatch", f.allow_mismatch, "run solvers on metrics they were not designed for");
}

ExperimentConfig load(const CommonFlags& f) {
  std::ifstream in(f.config);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ConfigError, std::string("config is not valid JSON: ") + e.what());
  }
  // Command-line overrides go in before validation so that --allow-mismatch
  // can admit an otherwise rejected solver/metric pair.
  if (f.allow_mismatch) j["allow_mismatch"] = true;
  if (f.trials) j["n_trials"] = *f.trials;
  if (f.seed) j["seed"] = *f.seed;
  return parse_config(j);
}

int thread_cap() {
  const char* env = std::getenv("CONFOPT_THREADS");
  if (env == nullptr) return 1;
  try {
    return std::max(1, std::stoi(env));
  } catch (const std::exception&) {
    throw Error(ErrorCode::ConfigError, "CONFOPT_THREADS must be a positive integer");
  }
}

void emit(const nlohmann::json& j, const std::string& path) {
  if (path.empty()) {
    std::cout << j.dump(2) << "\n";
    return;
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::ConfigError, "cannot write '" + path + "'");
  f << j.dump(2) << "\n";
}

int exit_code(ErrorCode c) {
  switch (c) {
    case ErrorCode::ConfigError:
    case ErrorCode::SchemaError:
    case ErrorCode::LayoutMismatch:
    case ErrorCode::GroupOutOfRange: return 2;
    default: return 3;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Confusion-matrix metric optimization experiments"};
  app.require_subcommand(1);

  CommonFlags run_f, oracle_f, eval_f, validate_f;
  std::string classifier_path;

  auto* run = app.add_subcommand("run", "train, solve and evaluate");
  add_common(run, run_f, true, "output directory");
  run->get_option("--out")->required();

  auto* oracle = app.add_subcommand("oracle", "grid-search reference value for a synthetic problem");
  add_common(oracle, oracle_f, true, "fixture file (stdout when omitted)");

  auto* eval = app.add_subcommand("eval", "re-evaluate a saved classifier");
  add_common(eval, eval_f, true, "result file (stdout when omitted)");
  eval->add_option("--classifier", classifier_path, "classifier JSON written by run")
      ->required()
      ->check(CLI::ExistingFile);

  auto* validate = app.add_subcommand("validate-config", "check a config and print it with defaults filled in");
  add_common(validate, validate_f, false, "");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*run) {
      const ExperimentConfig c = load(run_f);
      const ExperimentOutput out = run_experiment(c, thread_cap());
      write_outputs(out, run_f.out);
      const auto& agg = out.summary.at("aggregate");
      std::cout << "test objective " << agg.at("test_objective").at("mean").get<double>() << " +- "
                << agg.at("test_objective").at("std").get<double>() << " over " << c.n_trials << " trial(s)\n";
    } else if (*oracle) {
      emit(run_bayes_oracle(load(oracle_f)), oracle_f.out);
    } else if (*eval) {
      const ExperimentConfig c = load(eval_f);
      std::ifstream in(classifier_path);
      nlohmann::json j;
      try {
        in >> j;
      } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::SchemaError, std::string("classifier is not valid JSON: ") + e.what());
      }
      emit(evaluate_saved(c, classifier_from_json(j)), eval_f.out);
    } else if (*validate) {
      std::cout << config_to_json(load(validate_f)).dump(2) << "\n";
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
