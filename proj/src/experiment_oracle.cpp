// Reference-oracle runner behind the `oracle` subcommand. Lives with the
// brute-force oracles so that the solver library never links them.

#include "confopt/bruteforce.hpp"
#include "confopt/experiment.hpp"

namespace confopt {

using nlohmann::json;

namespace {

json vec_json(const Vec& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

}  // namespace

json run_bayes_oracle(const ExperimentConfig& c) {
  if (!c.data.synthetic) throw Error(ErrorCode::ConfigError, "data.synthetic: required for the oracle");
  const SyntheticSpec spec = SyntheticSpec::of(*c.data.synthetic, c.oracle.seed);
  if (spec.n_classes() > 3) throw Error(ErrorCode::BudgetExceeded, "reference grids support at most 3 classes");
  EvalSet set;
  ClassMasses masses;
  if (c.data.discretize) {
    const auto& z = *c.data.discretize;
    const DiscreteDistribution dist = DiscreteDistribution::from_support(discretize(spec, z.points, z.lo, z.hi));
    set = EvalSet::from(dist);
    masses = dist.masses();
  } else {
    set = EvalSet::monte_carlo(spec, c.oracle.mc_samples, c.oracle.seed);
    masses = ClassMasses::from_priors(spec.priors);
  }
  auto g = std::make_shared<ConfusionGeometry>(resolve_layout(c, spec.n_classes(), 1), masses);
  FunctionPtr psi = bind_metric(c.metric, g);
  const auto cons = expand_constraints(c.constraints, g);
  const json resolved = config_to_json(c);

  json out{{"distribution", to_string(spec.kind)},
           {"metric", resolved.at("metric")},
           {"constraints", resolved.at("constraints")},
           {"layout", to_string(g->layout().representation)},
           {"seed", c.oracle.seed},
           {"evaluation", c.data.discretize ? "exact" : "monte_carlo"},
           {"mc_samples", c.data.discretize ? json(nullptr) : json(c.oracle.mc_samples)}};
  if (cons.empty()) {
    GridSpec gs;
    gs.max = c.oracle.grid_max;
    gs.step = c.oracle.grid_step;
    gs.coarse_step = c.oracle.coarse_step;
    const GridResult r = grid_bayes(*psi, *g, set, gs);
    out["oracle"] = "grid_bayes";
    out["grid"] = {{"max", gs.max}, {"step", gs.step}, {"coarse_step", gs.coarse_step},
                   {"coarse_rows", gs.coarse_rows}, {"top_k", gs.top_k}};
    out["value"] = r.value;
    out["theta"] = vec_json(r.theta);
    out["confusion"] = vec_json(r.confusion);
  } else {
    MixtureGridSpec ms;
    ms.max = c.oracle.grid_max;
    ms.step = c.oracle.mix_step;
    ms.mix_points = c.oracle.mix_points;
    const ConstrainedGridResult r = constrained_grid_optimum(*psi, cons, *g, set, ms);
    out["oracle"] = "constrained_grid_optimum";
    out["grid"] = {{"max", ms.max}, {"step", ms.step}, {"mix_points", ms.mix_points}, {"tol", ms.tol}};
    out["value"] = r.value;
    out["theta1"] = vec_json(r.theta1);
    out["theta2"] = vec_json(r.theta2);
    out["mix"] = r.mix;
    out["confusion"] = vec_json(r.confusion);
  }
  return out;
}

}  // namespace confopt
