#include "confopt/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include "confopt/persistence.hpp"

namespace confopt {

using nlohmann::json;

namespace {

const std::vector<std::string> kSolvers = {"fw",       "gda",     "ellipsoid",     "bisection",
                                           "split_fw", "con_gda", "con_ellipsoid", "con_bisection"};

bool constrained_solver(const std::string& s) { return s.rfind("con_", 0) == 0 || s == "split_fw"; }

[[noreturn]] void fail(const std::string& path, const std::string& what) {
  throw Error(ErrorCode::ConfigError, path + ": " + what);
}

// JSON object view that reports errors with the field path.
class Node {
 public:
  Node(const json& j, std::string path) : j_(j), path_(std::move(path)) {}

  const std::string& path() const { return path_; }
  const json& raw() const { return j_; }
  bool has(const char* key) const { return j_.is_object() && j_.contains(key) && !j_.at(key).is_null(); }
  Node at(const char* key) const { return Node(j_.at(key), child(key)); }
  std::string child(const char* key) const { return path_.empty() ? key : path_ + "." + key; }

  void expect_object(std::initializer_list<const char*> allowed) const {
    if (!j_.is_object()) fail(path_.empty() ? "config" : path_, "must be an object");
    for (const auto& [key, value] : j_.items()) {
      if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; })) {
        fail(path_.empty() ? key : path_ + "." + key, "unknown field");
      }
    }
  }
  double number() const {
    if (!j_.is_number()) fail(path_, "must be a number");
    const double v = j_.get<double>();
    if (!std::isfinite(v)) fail(path_, "must be finite");
    return v;
  }
  double positive() const {
    const double v = number();
    if (!(v > 0.0)) fail(path_, "must be positive");
    return v;
  }
  long integer(long min) const {
    if (!j_.is_number_integer()) fail(path_, "must be an integer");
    const long v = j_.get<long>();
    if (v < min) fail(path_, "must be at least " + std::to_string(min));
    return v;
  }
  std::uint64_t u64() const {
    if (!j_.is_number_unsigned() && !(j_.is_number_integer() && j_.get<long long>() >= 0)) {
      fail(path_, "must be a nonnegative integer");
    }
    return j_.get<std::uint64_t>();
  }
  bool boolean() const {
    if (!j_.is_boolean()) fail(path_, "must be true or false");
    return j_.get<bool>();
  }
  std::string string() const {
    if (!j_.is_string()) fail(path_, "must be a string");
    return j_.get<std::string>();
  }
  Vec vec() const {
    if (!j_.is_array() || j_.empty()) fail(path_, "must be a non-empty array of numbers");
    Vec v(static_cast<Eigen::Index>(j_.size()));
    for (std::size_t k = 0; k < j_.size(); ++k) {
      v(static_cast<Eigen::Index>(k)) = Node(j_[k], path_ + "[" + std::to_string(k) + "]").number();
    }
    return v;
  }

 private:
  const json& j_;
  std::string path_;
};

template <class F>
auto enum_field(const Node& n, F&& parse) {
  try {
    return parse(n.string());
  } catch (const Error& e) {
    fail(n.path(), std::string(e.what()).substr(std::string(to_string(e.code())).size() + 2));
  }
}

json vec_json(const Vec& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

double default_slack(ConstraintKind k) {
  switch (k) {
    case ConstraintKind::CoverageBand:
    case ConstraintKind::QuantificationKLD: return 0.01;
    case ConstraintKind::EqualOpportunity:
    case ConstraintKind::DemographicParity:
    case ConstraintKind::EqualizedOdds: return 0.05;
    default: return 0.0;
  }
}

Metric parse_metric(const Node& n) {
  if (n.raw().is_string()) return Metric::of(enum_field(n, metric_kind_from_string));
  n.expect_object({"kind", "default_class", "coeffs", "numer", "denom", "lipschitz"});
  if (!n.has("kind")) fail(n.child("kind"), "required");
  Metric m = Metric::of(enum_field(n.at("kind"), metric_kind_from_string));
  if (n.has("default_class")) m.default_class = static_cast<int>(n.at("default_class").integer(0));
  if (n.has("coeffs")) m.coeffs = n.at("coeffs").vec();
  if (n.has("numer")) m.numer = n.at("numer").vec();
  if (n.has("denom")) m.denom = n.at("denom").vec();
  if (n.has("lipschitz")) m.lipschitz_hint = n.at("lipschitz").positive();
  if (m.kind == MetricKind::LinearCustom && m.coeffs.size() == 0) fail(n.child("coeffs"), "required for LinearCustom");
  if (m.kind == MetricKind::RatioOfLinear) {
    if (m.numer.size() == 0 || m.denom.size() == 0) fail(n.path(), "RatioOfLinear needs numer and denom");
    if (m.numer.size() != m.denom.size()) fail(n.child("denom"), "must match numer in length");
  }
  return m;
}

Constraint parse_constraint(const Node& n) {
  n.expect_object({"kind", "class", "tau", "target", "slack", "coeffs", "bound", "lipschitz"});
  if (!n.has("kind")) fail(n.child("kind"), "required");
  Constraint c;
  c.kind = enum_field(n.at("kind"), constraint_kind_from_string);
  c.slack = n.has("slack") ? n.at("slack").number() : default_slack(c.kind);
  if (n.has("class")) c.class_index = static_cast<int>(n.at("class").integer(0));
  if (n.has("tau")) c.tau = n.at("tau").number();
  if (n.has("target")) c.target = n.at("target").vec();
  if (n.has("coeffs")) c.coeffs = n.at("coeffs").vec();
  if (n.has("bound")) c.bound = n.at("bound").number();
  if (n.has("lipschitz")) c.lipschitz_hint = n.at("lipschitz").positive();
  if (c.kind == ConstraintKind::ClassPrecision && !n.has("tau")) fail(n.child("tau"), "required for ClassPrecision");
  if (c.kind == ConstraintKind::LinearCustom && c.coeffs.size() == 0) fail(n.child("coeffs"), "required for LinearCustom");
  return c;
}

json metric_json(const Metric& m) {
  json j{{"kind", to_string(m.kind)}};
  if (m.kind == MetricKind::MicroF1) j["default_class"] = m.default_class;
  if (m.coeffs.size() > 0) j["coeffs"] = vec_json(m.coeffs);
  if (m.numer.size() > 0) j["numer"] = vec_json(m.numer);
  if (m.denom.size() > 0) j["denom"] = vec_json(m.denom);
  if (m.lipschitz_hint) j["lipschitz"] = *m.lipschitz_hint;
  return j;
}

json constraint_json(const Constraint& c) {
  json j{{"kind", to_string(c.kind)}, {"slack", c.slack}};
  if (c.kind == ConstraintKind::ClassPrecision) {
    j["class"] = c.class_index;
    j["tau"] = c.tau;
  }
  if (c.target) j["target"] = vec_json(*c.target);
  if (c.coeffs.size() > 0) j["coeffs"] = vec_json(c.coeffs);
  if (c.kind == ConstraintKind::LinearCustom) j["bound"] = c.bound;
  if (c.lipschitz_hint) j["lipschitz"] = *c.lipschitz_hint;
  return j;
}

template <class T>
json opt_json(const std::optional<T>& v) {
  return v ? json(*v) : json(nullptr);
}

bool recall_metric(MetricKind k) {
  return k == MetricKind::HMean || k == MetricKind::GMean || k == MetricKind::QMean;
}

SyntheticSpec spec_of(const ExperimentConfig& c, std::uint64_t seed) {
  if (!c.data.synthetic) fail("data.synthetic", "required for this operation");
  return SyntheticSpec::of(*c.data.synthetic, seed);
}

struct LoadedData {
  Dataset train, test;
};

LoadedData load_data(const ExperimentConfig& c, std::uint64_t seed) {
  LoadedData d;
  if (c.data.csv) {
    Dataset all = load_csv(*c.data.csv);
    std::tie(d.train, d.test) = split(all, c.data.split_fraction, seed);
    return d;
  }
  const SyntheticSpec spec = spec_of(c, seed);
  if (c.data.discretize) {
    const auto& z = *c.data.discretize;
    d.train = to_weighted_dataset(discretize(spec, z.points, z.lo, z.hi), false);
    d.test = d.train;
    return d;
  }
  d.train = sample_synthetic(spec, c.data.n_train, seed);
  d.test = sample_synthetic(spec, c.data.n_test, seed ^ 0x9E3779B97F4A7C15ULL);
  return d;
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

double std_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

json stats(const std::vector<double>& v) { return json{{"mean", mean_of(v)}, {"std", std_of(v)}}; }

}  // namespace

int default_iterations(const std::string& solver) {
  if (solver == "fw" || solver == "gda") return 5000;
  if (solver == "ellipsoid" || solver == "con_ellipsoid") return 1000;
  if (solver == "split_fw" || solver == "con_gda") return 10000;
  if (solver == "bisection") return 20;
  if (solver == "con_bisection") return 10;
  fail("solver.name", "unknown solver '" + solver + "'");
}

ExperimentConfig parse_config(const json& j) {
  ExperimentConfig c;
  const Node root(j, "");
  root.expect_object({"data", "layout", "metric", "constraints", "solver", "lmo", "cpe", "seed", "n_trials",
                      "allow_mismatch", "oracle"});

  if (!root.has("data")) fail("data", "required");
  {
    const Node d = root.at("data");
    d.expect_object({"synthetic", "csv", "n_train", "n_test", "split_fraction", "discretize"});
    if (d.has("synthetic")) c.data.synthetic = enum_field(d.at("synthetic"), synthetic_kind_from_string);
    if (d.has("csv")) c.data.csv = d.at("csv").string();
    if (c.data.synthetic.has_value() == c.data.csv.has_value()) {
      fail("data", "exactly one of 'synthetic' and 'csv' is required");
    }
    if (c.data.synthetic == SyntheticKind::Custom) fail("data.synthetic", "Custom mixtures are not configurable here");
    if (d.has("n_train")) c.data.n_train = static_cast<int>(d.at("n_train").integer(1));
    if (d.has("n_test")) c.data.n_test = static_cast<int>(d.at("n_test").integer(1));
    if (d.has("split_fraction")) {
      c.data.split_fraction = d.at("split_fraction").number();
      if (!(c.data.split_fraction > 0.0 && c.data.split_fraction < 1.0)) {
        fail("data.split_fraction", "must lie in (0, 1)");
      }
    }
    if (d.has("discretize")) {
      const Node z = d.at("discretize");
      z.expect_object({"points", "lo", "hi"});
      DiscretizeConfig dz;
      if (z.has("points")) dz.points = static_cast<int>(z.at("points").integer(1));
      if (z.has("lo")) dz.lo = z.at("lo").number();
      if (z.has("hi")) dz.hi = z.at("hi").number();
      if (!(dz.hi > dz.lo)) fail("data.discretize.hi", "must exceed lo");
      c.data.discretize = dz;
    }
  }
  if (root.has("layout")) c.layout = enum_field(root.at("layout"), representation_from_string);
  if (root.has("metric")) c.metric = parse_metric(root.at("metric"));
  if (root.has("constraints")) {
    const Node cs = root.at("constraints");
    if (!cs.raw().is_array()) fail("constraints", "must be an array");
    for (std::size_t k = 0; k < cs.raw().size(); ++k) {
      c.constraints.push_back(parse_constraint(Node(cs.raw()[k], "constraints[" + std::to_string(k) + "]")));
    }
  }
  {
    SolverConfig& s = c.solver;
    if (root.has("solver")) {
      const Node n = root.at("solver");
      n.expect_object({"name", "T", "T_inner", "L", "r", "zeta", "a", "eta", "eta_prime", "eta_lambda",
                       "eta_mu", "eta_xi", "inner_budget", "line_search", "tune_steps", "prune",
                       "hull_weights", "printed_assignment"});
      if (n.has("name")) s.name = n.at("name").string();
      if (std::find(kSolvers.begin(), kSolvers.end(), s.name) == kSolvers.end()) {
        fail("solver.name", "unknown solver '" + s.name + "'");
      }
      s.iterations = n.has("T") ? static_cast<int>(n.at("T").integer(s.name == "split_fw" ? 2 : 1))
                                : default_iterations(s.name);
      if (n.has("T_inner")) s.inner_iterations = static_cast<int>(n.at("T_inner").integer(1));
      if (n.has("L")) s.lipschitz = n.at("L").positive();
      if (n.has("r")) s.r = n.at("r").positive();
      if (n.has("zeta")) s.zeta = n.at("zeta").positive();
      if (n.has("a")) s.radius = n.at("a").positive();
      if (n.has("eta")) s.eta = n.at("eta").positive();
      if (n.has("eta_prime")) s.eta_prime = n.at("eta_prime").positive();
      if (n.has("eta_lambda")) s.eta_lambda = n.at("eta_lambda").positive();
      if (n.has("eta_mu")) s.eta_mu = n.at("eta_mu").positive();
      if (n.has("eta_xi")) s.eta_xi = n.at("eta_xi").positive();
      if (n.has("inner_budget")) s.inner_budget = static_cast<int>(n.at("inner_budget").integer(10));
      if (n.has("line_search")) s.line_search = n.at("line_search").boolean();
      if (n.has("tune_steps")) s.tune_steps = n.at("tune_steps").boolean();
      if (n.has("prune")) s.prune = n.at("prune").boolean();
      if (n.has("hull_weights")) s.hull_weights = n.at("hull_weights").boolean();
      if (n.has("printed_assignment")) s.printed_assignment = n.at("printed_assignment").boolean();
    } else {
      s.iterations = default_iterations(s.name);
    }
  }
  if (root.has("lmo")) {
    c.lmo = root.at("lmo").string();
    if (c.lmo != "plugin" && c.lmo != "wlr" && c.lmo != "exact_eta") {
      fail("lmo", "must be one of plugin, wlr, exact_eta");
    }
  }
  if (root.has("cpe")) {
    const Node n = root.at("cpe");
    n.expect_object({"iterations", "step", "l2"});
    if (n.has("iterations")) c.cpe.iterations = static_cast<int>(n.at("iterations").integer(1));
    if (n.has("step")) c.cpe.step = n.at("step").positive();
    if (n.has("l2")) {
      c.cpe.l2 = n.at("l2").number();
      if (c.cpe.l2 < 0.0) fail("cpe.l2", "must be nonnegative");
    }
  }
  if (root.has("seed")) c.seed = root.at("seed").u64();
  if (root.has("n_trials")) c.n_trials = static_cast<int>(root.at("n_trials").integer(1));
  if (root.has("allow_mismatch")) c.allow_mismatch = root.at("allow_mismatch").boolean();
  if (root.has("oracle")) {
    const Node n = root.at("oracle");
    n.expect_object({"grid_max", "grid_step", "coarse_step", "mc_samples", "seed", "mix_step", "mix_points"});
    OracleConfig& o = c.oracle;
    if (n.has("grid_max")) o.grid_max = n.at("grid_max").positive();
    if (n.has("grid_step")) o.grid_step = n.at("grid_step").positive();
    if (n.has("coarse_step")) o.coarse_step = n.at("coarse_step").positive();
    if (n.has("mc_samples")) o.mc_samples = static_cast<int>(n.at("mc_samples").integer(1));
    if (n.has("seed")) o.seed = n.at("seed").u64();
    if (n.has("mix_step")) o.mix_step = n.at("mix_step").positive();
    if (n.has("mix_points")) o.mix_points = static_cast<int>(n.at("mix_points").integer(2));
  }
  validate_config(c);
  return c;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::ConfigError, "cannot open config file '" + path + "'");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ConfigError, std::string("config is not valid JSON: ") + e.what());
  }
  return parse_config(j);
}

void validate_config(const ExperimentConfig& c) {
  const std::string& s = c.solver.name;
  if (std::find(kSolvers.begin(), kSolvers.end(), s) == kSolvers.end()) {
    fail("solver.name", "unknown solver '" + s + "'");
  }
  if (c.data.discretize) {
    if (!c.data.synthetic) fail("data.discretize", "needs a synthetic distribution");
    if (SyntheticSpec::of(*c.data.synthetic).dim() != 1) fail("data.discretize", "only one-dimensional distributions");
  }
  if (c.lmo == "exact_eta" && !c.data.synthetic) fail("lmo", "exact_eta needs a synthetic distribution");
  if (!constrained_solver(s) && !c.constraints.empty()) {
    fail("constraints", "solver '" + s + "' does not take constraints");
  }
  if (s == "split_fw" && c.solver.iterations < 2) fail("solver.T", "split_fw needs at least 2 iterations");
  const Smoothness sm = c.metric.smoothness();
  bool ok = true;
  std::string need;
  if (s == "fw" || s == "split_fw") {
    ok = sm == Smoothness::SmoothConvex || sm == Smoothness::Linear;
    need = "a smooth convex metric";
  } else if (s == "bisection" || s == "con_bisection") {
    ok = sm == Smoothness::RatioOfLinear || sm == Smoothness::Linear;
    need = "a ratio-of-linear metric";
  } else {
    ok = sm != Smoothness::RatioOfLinear && sm != Smoothness::NonConvex;
    need = "a convex metric";
  }
  if (!ok && !c.allow_mismatch) {
    fail("metric", "solver '" + s + "' needs " + need + " but " + std::string(to_string(c.metric.kind)) +
                       " is " + std::string(to_string(sm)) + " (set allow_mismatch or pass --allow-mismatch to run anyway)");
  }
  if (c.metric.kind == MetricKind::MacroF1 && !c.allow_mismatch) {
    fail("metric", "MacroF1 is supported for evaluation only");
  }
}

json config_to_json(const ExperimentConfig& c) {
  json data{{"n_train", c.data.n_train}, {"n_test", c.data.n_test}, {"split_fraction", c.data.split_fraction}};
  if (c.data.synthetic) data["synthetic"] = to_string(*c.data.synthetic);
  if (c.data.csv) data["csv"] = *c.data.csv;
  if (c.data.discretize) {
    data["discretize"] = {{"points", c.data.discretize->points}, {"lo", c.data.discretize->lo},
                          {"hi", c.data.discretize->hi}};
  }
  json cons = json::array();
  for (const auto& k : c.constraints) cons.push_back(constraint_json(k));
  const SolverConfig& s = c.solver;
  json solver{{"name", s.name},
              {"T", s.iterations},
              {"T_inner", s.inner_iterations},
              {"L", opt_json(s.lipschitz)},
              {"r", s.r},
              {"zeta", s.zeta},
              {"a", s.radius},
              {"eta", opt_json(s.eta)},
              {"eta_prime", opt_json(s.eta_prime)},
              {"eta_lambda", opt_json(s.eta_lambda)},
              {"eta_mu", opt_json(s.eta_mu)},
              {"eta_xi", opt_json(s.eta_xi)},
              {"inner_budget", s.inner_budget},
              {"line_search", s.line_search},
              {"tune_steps", s.tune_steps},
              {"prune", s.prune},
              {"hull_weights", s.hull_weights},
              {"printed_assignment", s.printed_assignment}};
  const OracleConfig& o = c.oracle;
  json oracle{{"grid_max", o.grid_max},   {"grid_step", o.grid_step}, {"coarse_step", o.coarse_step},
              {"mc_samples", o.mc_samples}, {"seed", o.seed},         {"mix_step", o.mix_step},
              {"mix_points", o.mix_points}};
  return json{{"data", data},
              {"layout", c.layout ? json(to_string(*c.layout)) : json("auto")},
              {"metric", metric_json(c.metric)},
              {"constraints", cons},
              {"solver", solver},
              {"lmo", c.lmo},
              {"cpe", {{"iterations", c.cpe.iterations}, {"step", c.cpe.step}, {"l2", c.cpe.l2}}},
              {"seed", c.seed},
              {"n_trials", c.n_trials},
              {"allow_mismatch", c.allow_mismatch},
              {"oracle", oracle}};
}

ConfusionLayout resolve_layout(const ExperimentConfig& c, int n, int m) {
  if (c.layout) {
    switch (*c.layout) {
      case Representation::Full: return m == 1 ? ConfusionLayout::full(n) : ConfusionLayout::group_stacked(n, m);
      case Representation::DiagonalNormalized: return ConfusionLayout::diagonal_normalized(n, m);
      case Representation::GroupStacked: return ConfusionLayout::group_stacked(n, m);
      case Representation::GeneralizedLinear: fail("layout", "GeneralizedLinear layouts are library-only");
    }
  }
  if (recall_metric(c.metric.kind) && (c.constraints.empty() || n == 2)) {
    return ConfusionLayout::diagonal_normalized(n, m);
  }
  return m == 1 ? ConfusionLayout::full(n) : ConfusionLayout::group_stacked(n, m);
}

std::uint64_t trial_seed(const ExperimentConfig& c, int trial) { return c.seed + static_cast<std::uint64_t>(trial); }

TrialData prepare_trial(const ExperimentConfig& c, std::uint64_t seed) {
  TrialData t;
  t.seed = seed;
  LoadedData d = load_data(c, seed);
  t.train = std::move(d.train);
  t.test = std::move(d.test);
  const int n = t.train.n_classes;
  const int m = t.train.n_groups;
  if (c.lmo == "exact_eta") {
    t.model = std::make_shared<SyntheticEtaModel>(spec_of(c, seed));
  } else {
    t.model = train_cpe(t.train, c.cpe);
  }
  const ConfusionLayout layout = resolve_layout(c, n, m);
  t.train_geometry = std::make_shared<ConfusionGeometry>(layout, t.train.masses());
  t.test_geometry = std::make_shared<ConfusionGeometry>(layout, t.test.masses());
  auto plugin = std::make_shared<PluginLmo>(t.model, t.train, t.train_geometry);
  if (c.lmo == "wlr") {
    t.lmo = std::make_shared<WlrLmo>(t.train, c.cpe, t.train_geometry, plugin);
  } else {
    t.lmo = plugin;
  }
  return t;
}

TrialResult solve_trial(const ExperimentConfig& c, const TrialData& data) {
  const auto start = std::chrono::steady_clock::now();
  const SolverConfig& s = c.solver;
  const auto& g = data.train_geometry;
  FunctionPtr psi = bind_metric(c.metric, g);
  const auto cons = expand_constraints(c.constraints, g);
  const InnerConfig inner{s.inner_budget, 1.0, 10.0};
  FeasibilityConfig fcfg;
  fcfg.r = s.r;
  fcfg.zeta = s.zeta;
  fcfg.eta_lambda = s.eta_lambda;
  fcfg.eta_mu = s.eta_mu;
  fcfg.eta_xi = s.eta_xi;
  auto lipschitz = [&] { return s.lipschitz.value_or(lipschitz_estimate(c.metric, g)); };

  TrialResult out;
  out.seed = data.seed;
  const Lmo& lmo = *data.lmo;
  if (s.name == "fw") {
    out.solver = frank_wolfe(*psi, lmo, {s.iterations});
  } else if (s.name == "gda") {
    GdaOptions o;
    o.iterations = s.iterations;
    o.lipschitz = lipschitz();
    o.eta = s.eta;
    o.eta_prime = s.eta_prime;
    o.hull_weights = s.hull_weights;
    o.tune_steps = s.tune_steps;
    o.inner = inner;
    out.solver = gda(*psi, lmo, o);
  } else if (s.name == "ellipsoid") {
    out.solver = ellipsoid(*psi, lmo, {s.iterations, s.radius, inner});
  } else if (s.name == "bisection") {
    out.solver = bisection(ratio_form(c.metric, *g), lmo, {s.iterations});
  } else if (s.name == "split_fw") {
    SplitFwOptions o;
    o.iterations = s.iterations;
    o.line_search = s.line_search;
    out.solver = split_fw(*psi, cons, lmo, fcfg, o);
  } else if (s.name == "con_gda") {
    ConGdaOptions o;
    o.iterations = s.iterations;
    o.lipschitz = std::max(lipschitz(), constraint_lipschitz(cons, *g));
    o.prune = s.prune;
    o.tune_steps = s.tune_steps;
    o.inner = inner;
    out.solver = con_gda(*psi, cons, lmo, fcfg, o);
  } else if (s.name == "con_ellipsoid") {
    out.solver = con_ellipsoid(*psi, cons, lmo, fcfg, {s.iterations, s.radius, inner});
  } else {
    ConBisectionOptions o;
    o.iterations = s.iterations;
    o.inner_iterations = s.inner_iterations;
    o.lipschitz = s.lipschitz;
    o.printed_assignment = s.printed_assignment;
    o.prune = s.prune;
    o.inner = inner;
    out.solver = con_bisection(ratio_form(c.metric, *g), cons, lmo, fcfg, o);
  }
  out.lmo_calls = out.solver.lmo_calls;
  out.train_objective = psi->value(out.solver.confusion);

  const ConfusionVector test_c = out.solver.classifier.confusion(data.test, *data.test_geometry);
  out.test_objective = bind_metric(c.metric, data.test_geometry)->value(test_c.entries);
  const auto test_cons = expand_constraints(c.constraints, data.test_geometry);
  out.test_violations = test_cons.empty() ? Vec() : evaluate_all(test_cons, test_c.entries);
  out.test_max_violation = max_violation(test_cons, test_c.entries);
  out.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return out;
}

TrialResult run_trial(const ExperimentConfig& c, std::uint64_t seed) {
  const auto start = std::chrono::steady_clock::now();
  TrialResult r = solve_trial(c, prepare_trial(c, seed));
  r.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

ExperimentOutput run_experiment(const ExperimentConfig& c, int threads) {
  validate_config(c);
  ExperimentOutput out;
  out.trials.resize(static_cast<std::size_t>(c.n_trials));
  std::atomic<int> next{0};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  auto worker = [&] {
    for (int k = next++; k < c.n_trials; k = next++) {
      try {
        out.trials[static_cast<std::size_t>(k)] = run_trial(c, trial_seed(c, k));
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
      }
    }
  };
  const int workers = std::clamp(threads, 1, c.n_trials);
  std::vector<std::thread> pool;
  for (int w = 1; w < workers; ++w) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();
  if (first_error) std::rethrow_exception(first_error);

  json trials = json::array();
  json timing = json::array();
  std::vector<double> test_obj, train_obj, viol, calls;
  for (const auto& t : out.trials) {
    trials.push_back({{"seed", t.seed},
                      {"train_objective", t.train_objective},
                      {"test_objective", t.test_objective},
                      {"test_violations", vec_json(t.test_violations)},
                      {"test_max_violation", t.test_max_violation},
                      {"lmo_calls", t.lmo_calls},
                      {"trace_rows", t.solver.trace.rows.size()}});
    timing.push_back({{"seed", t.seed}, {"wall_seconds", t.wall_seconds}});
    test_obj.push_back(t.test_objective);
    train_obj.push_back(t.train_objective);
    viol.push_back(t.test_max_violation);
    calls.push_back(static_cast<double>(t.lmo_calls));
  }
  out.summary = {{"config", config_to_json(c)},
                 {"trials", trials},
                 {"aggregate",
                  {{"test_objective", stats(test_obj)},
                   {"train_objective", stats(train_obj)},
                   {"test_max_violation", stats(viol)},
                   {"lmo_calls", stats(calls)}}}};
  double total = 0.0;
  for (const auto& t : out.trials) total += t.wall_seconds;
  out.timing = {{"trials", timing}, {"total_wall_seconds", total}};
  return out;
}

void write_outputs(const ExperimentOutput& out, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  auto write = [&](const std::string& name, const std::string& text) {
    std::ofstream f(fs::path(dir) / name, std::ios::binary);
    if (!f) throw Error(ErrorCode::ConfigError, "cannot write '" + (fs::path(dir) / name).string() + "'");
    f << text;
  };
  write("summary.json", out.summary.dump(2) + "\n");
  write("timing.json", out.timing.dump(2) + "\n");
  for (std::size_t k = 0; k < out.trials.size(); ++k) {
    std::ostringstream csv;
    out.trials[k].solver.trace.write_csv(csv);
    write("trace_" + std::to_string(k) + ".csv", csv.str());
    try {
      write("classifier_" + std::to_string(k) + ".json",
            classifier_to_json(out.trials[k].solver.classifier.compacted()).dump(2) + "\n");
    } catch (const Error& e) {
      if (e.code() != ErrorCode::SchemaError) throw;
    }
  }
}

json evaluate_saved(const ExperimentConfig& c, const RandomizedClassifier& h) {
  h.validate(1e-6);
  const LoadedData d = load_data(c, c.seed);
  const ConfusionLayout layout = resolve_layout(c, d.test.n_classes, d.test.n_groups);
  auto g = std::make_shared<ConfusionGeometry>(layout, d.test.masses());
  const ConfusionVector conf = h.confusion(d.test, *g);
  const auto cons = expand_constraints(c.constraints, g);
  return json{{"test_objective", bind_metric(c.metric, g)->value(conf.entries)},
              {"test_violations", cons.empty() ? json::array() : vec_json(evaluate_all(cons, conf.entries))},
              {"test_max_violation", max_violation(cons, conf.entries)},
              {"n_test", d.test.size()}};
}

}  // namespace confopt
