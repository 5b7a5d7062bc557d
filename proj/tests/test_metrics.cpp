#include <cmath>
#include <random>

#include "doctest.h"
#include "helpers.hpp"

using namespace confopt;
using namespace confopt::testing;

namespace {

ConfusionVector full(const Vec& raw) {
  const int n = static_cast<int>(std::lround(std::sqrt(static_cast<double>(raw.size()))));
  return {ConfusionLayout::full(n), raw};
}

const Vec kHalf = vec({0.5, 0.5});

}  // namespace

TEST_CASE("layout dimensions") {
  CHECK(ConfusionLayout::full(3).dim() == 9);
  CHECK(ConfusionLayout::diagonal_normalized(3, 2).dim() == 6);
  CHECK(ConfusionLayout::group_stacked(2, 3).dim() == 12);
  CHECK(ConfusionLayout::generalized(2, 1, {Vec::Ones(4), Vec::Zero(4)}).dim() == 2);
  CHECK_THROWS_AS(ConfusionLayout::generalized(2, 1, {Vec::Ones(3)}), Error);
  CHECK(ConfusionLayout::full(3).raw_index(0, 1, 2) == 5);
  CHECK(ConfusionLayout::group_stacked(2, 2).raw_index(1, 1, 0) == 6);
}

TEST_CASE("confusion vector validation") {
  CHECK_NOTHROW(full(vec({0.5, 0.0, 0.0, 0.5})).validate());
  CHECK_THROWS_AS(full(vec({0.5, 0.1, 0.0, 0.5})).validate(), Error);
  CHECK_THROWS_AS(full(vec({0.6, -0.1, 0.0, 0.5})).validate(), Error);
  ConfusionVector d{ConfusionLayout::diagonal_normalized(2), vec({0.3, 1.2})};
  CHECK_THROWS_AS(d.validate(), Error);
}

TEST_CASE("metric values on small binary matrices") {
  const ClassMasses m = ClassMasses::from_priors(kHalf);
  CHECK(evaluate_metric(Metric::of(MetricKind::HMean), full(vec({0.5, 0, 0, 0.5})), m) ==
        doctest::Approx(0.0).epsilon(1e-12));
  CHECK(evaluate_metric(Metric::of(MetricKind::QMean), full(vec({0.25, 0.25, 0.25, 0.25})), m) ==
        doctest::Approx(0.5).epsilon(1e-12));
  CHECK(evaluate_metric(Metric::micro_f1(0), full(vec({0.5, 0, 0, 0.5})), m) ==
        doctest::Approx(0.0).epsilon(1e-12));

  // per-class errors 1 - 0.4/0.5 = 0.2 and 1 - 0.3/0.5 = 0.4
  const Vec c = vec({0.4, 0.1, 0.2, 0.3});
  const double e0 = 1.0 - c(0) / (c(0) + c(1));
  const double e1 = 1.0 - c(3) / (c(2) + c(3));
  CHECK(std::max(e0, e1) == doctest::Approx(0.4));
  CHECK(evaluate_metric(Metric::of(MetricKind::MinMax), full(c), m) == doctest::Approx(std::max(e0, e1)));
}

TEST_CASE("metric values agree with direct recall formulas") {
  std::mt19937_64 rng(7);
  const Vec priors = vec({0.5, 0.3, 0.2});
  const ClassMasses m = ClassMasses::from_priors(priors);
  for (int rep = 0; rep < 20; ++rep) {
    const Vec c = random_confusion(priors, rng);
    Vec r(3);
    for (int i = 0; i < 3; ++i) r(i) = c(i * 3 + i) / priors(i);
    const double zero_one = 1.0 - (c(0) + c(4) + c(8));
    const double bal = 1.0 - r.mean();
    const double h = 1.0 - 3.0 / r.cwiseInverse().sum();
    const double g = 1.0 - std::cbrt(r.prod());
    const double q = std::sqrt((Vec::Ones(3) - r).squaredNorm() / 3.0);
    CHECK(evaluate_metric(Metric::of(MetricKind::ZeroOne), full(c), m) == doctest::Approx(zero_one));
    CHECK(evaluate_metric(Metric::of(MetricKind::Balanced), full(c), m) == doctest::Approx(bal));
    CHECK(evaluate_metric(Metric::of(MetricKind::HMean), full(c), m) == doctest::Approx(h));
    CHECK(evaluate_metric(Metric::of(MetricKind::GMean), full(c), m) == doctest::Approx(g));
    CHECK(evaluate_metric(Metric::of(MetricKind::QMean), full(c), m) == doctest::Approx(q));

    // micro-F1 with class 0 as the default: 1 - 2 sum_{i>0} C_ii / (2 - C_00 - sum_j C_0j ... )
    double tp = 0.0, pred = 0.0, act = 0.0;
    for (int i = 1; i < 3; ++i) {
      tp += c(i * 3 + i);
      for (int j = 0; j < 3; ++j) {
        pred += c(j * 3 + i);
        act += c(i * 3 + j);
      }
    }
    CHECK(evaluate_metric(Metric::micro_f1(0), full(c), m) == doctest::Approx(1.0 - 2.0 * tp / (pred + act)));
  }
}

TEST_CASE("ratio metric with a nonpositive denominator is rejected") {
  const Metric r = Metric::ratio(vec({1, 0, 0, 0}), vec({0, 0, 0, 0}));
  CHECK_THROWS_AS(evaluate_metric(r, full(vec({0.5, 0, 0, 0.5})), ClassMasses::from_priors(kHalf)), Error);
}

TEST_CASE("layout without the needed entries is rejected") {
  // with two classes the diagonal determines everything, so use three
  auto g = diag_geometry(vec({0.3, 0.3, 0.4}));
  CHECK_THROWS_AS(bind_metric(Metric::micro_f1(0), g), Error);
  CHECK_THROWS_AS(expand_constraints({Constraint::kld(0.01)}, g), Error);
}

TEST_CASE("linear metric gradient is its coefficient vector") {
  const Vec l = vec({0.1, -0.2, 0.3, 0.4});
  const Vec grad = gradient_metric(Metric::linear(l), full(vec({0.3, 0.2, 0.1, 0.4})), ClassMasses::from_priors(kHalf));
  CHECK((grad - l).norm() == doctest::Approx(0.0));
}

TEST_CASE("gradients match central differences") {
  const ClassMasses m = ClassMasses::from_priors(kHalf);
  auto check = [&](MetricKind k, const Vec& c) {
    const Metric metric = Metric::of(k);
    const Vec g = gradient_metric(metric, full(c), m);
    const Vec fd = central_difference([&](const Vec& x) { return evaluate_metric(metric, full(x), m); }, c);
    CHECK(relative_error(g, fd) < 1e-5);
  };
  check(MetricKind::HMean, vec({0.5, 0, 0, 0.5}));
  check(MetricKind::QMean, vec({0.25, 0.25, 0.25, 0.25}));

  std::mt19937_64 rng(11);
  const Vec priors = vec({0.5, 0.3, 0.2});
  for (MetricKind k : {MetricKind::HMean, MetricKind::GMean, MetricKind::QMean, MetricKind::Balanced,
                       MetricKind::ZeroOne, MetricKind::MicroF1}) {
    const Metric metric = Metric::of(k);
    for (auto geom : {full_geometry(priors), diag_geometry(priors)}) {
      if (k == MetricKind::MicroF1 && geom->layout().representation != Representation::Full) continue;
      if (k == MetricKind::ZeroOne && geom->layout().representation != Representation::Full) continue;
      FunctionPtr f = bind_metric(metric, geom);
      for (int rep = 0; rep < 100; ++rep) {
        const Vec raw = random_confusion(priors, rng, 0.2);
        const Vec v = geom->to_layout(raw);
        const Vec fd = central_difference([&](const Vec& x) { return f->value(x); }, v);
        CHECK_MESSAGE(relative_error(f->gradient(v), fd) < 1e-5, to_string(k));
      }
    }
  }
}

TEST_CASE("minmax subgradient averages active pieces") {
  const ClassMasses m = ClassMasses::from_priors(kHalf);
  const Vec g = gradient_metric(Metric::of(MetricKind::MinMax), full(vec({0.3, 0.2, 0.2, 0.3})), m);
  // both errors 0.4: d psi / d C_ii = -(1/2) / pi_i for each class
  CHECK(g(0) == doctest::Approx(-1.0));
  CHECK(g(3) == doctest::Approx(-1.0));
}

TEST_CASE("convex metrics are convex on the normalized-recall layout") {
  std::mt19937_64 rng(3);
  const Vec priors = vec({0.6, 0.3, 0.1});
  auto geom = diag_geometry(priors);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (MetricKind k : {MetricKind::HMean, MetricKind::QMean, MetricKind::MinMax, MetricKind::GMean,
                       MetricKind::Balanced}) {
    FunctionPtr f = bind_metric(Metric::of(k), geom);
    for (int rep = 0; rep < 200; ++rep) {
      const Vec a = random_box(3, rng), b = random_box(3, rng);
      const double t = u(rng);
      CHECK(f->value(t * a + (1 - t) * b) <= t * f->value(a) + (1 - t) * f->value(b) + 1e-9);
    }
  }
}

TEST_CASE("built-in metric values lie in [0, 1]") {
  std::mt19937_64 rng(5);
  const Vec priors = vec({0.5, 0.3, 0.2});
  const ClassMasses m = ClassMasses::from_priors(priors);
  for (MetricKind k : {MetricKind::ZeroOne, MetricKind::Balanced, MetricKind::HMean, MetricKind::GMean,
                       MetricKind::QMean, MetricKind::MicroF1, MetricKind::MacroF1, MetricKind::MinMax}) {
    for (int rep = 0; rep < 100; ++rep) {
      const double v = evaluate_metric(Metric::of(k), full(random_confusion(priors, rng, 0.0)), m);
      CHECK(v >= -1e-12);
      CHECK(v <= 1.0 + 1e-12);
    }
  }
}

TEST_CASE("metric metadata") {
  CHECK(Metric::of(MetricKind::QMean).smoothness() == Smoothness::SmoothConvex);
  CHECK(Metric::of(MetricKind::MinMax).smoothness() == Smoothness::NonsmoothConvex);
  CHECK(Metric::micro_f1().smoothness() == Smoothness::RatioOfLinear);
  CHECK(Metric::linear(Vec::Ones(4)).smoothness() == Smoothness::Linear);
  CHECK_FALSE(Metric::of(MetricKind::MacroF1).convex());
  CHECK(metric_kind_from_string("HMean") == MetricKind::HMean);
  CHECK_THROWS_AS(metric_kind_from_string("hmean"), Error);
}

TEST_CASE("lipschitz estimate") {
  auto g = full_geometry(kHalf);
  CHECK(lipschitz_estimate(Metric::linear(vec({3, 4, 0, 0})), g) == doctest::Approx(5.0));
  Metric hinted = Metric::of(MetricKind::QMean);
  hinted.lipschitz_hint = 2.5;
  CHECK(lipschitz_estimate(hinted, g) == 2.5);
  const double l = lipschitz_estimate(Metric::of(MetricKind::QMean), g);
  CHECK(l > 0.0);
  CHECK(l == lipschitz_estimate(Metric::of(MetricKind::QMean), g));
}

TEST_CASE("constraint values") {
  const ClassMasses m = ClassMasses::from_priors(kHalf);
  const Vec cov = evaluate_constraints({Constraint::coverage(0.01)}, full(vec({0.5, 0, 0, 0.5})), m);
  REQUIRE(cov.size() == 4);
  for (int k = 0; k < 4; ++k) CHECK(cov(k) == doctest::Approx(-0.01));

  // 1 - C_11 / (C_01 + C_11) - tau
  const Vec c = vec({0.4, 0.1, 0.1, 0.4});
  const double expected = 1.0 - c(3) / (c(1) + c(3)) - 0.5;
  CHECK(expected == doctest::Approx(-0.3));
  CHECK(evaluate_constraints({Constraint::precision(1, 0.5)}, full(c), m)(0) == doctest::Approx(expected));

  // identical group confusions: equal true-positive rates
  const ConfusionLayout gl = ConfusionLayout::group_stacked(2, 2);
  Mat gm(2, 2);
  gm << 0.3, 0.2, 0.3, 0.2;
  const Vec block = vec({0.25, 0.05, 0.05, 0.15});
  Vec raw(8);
  raw << block, block;
  const Vec eo = evaluate_constraints({Constraint::equal_opportunity(0.05)}, {gl, raw},
                                      ClassMasses::from_group_masses(gm));
  REQUIRE(eo.size() > 0);
  for (int k = 0; k < eo.size(); ++k) CHECK(eo(k) == doctest::Approx(-0.05));
}

TEST_CASE("group constraints need group masses") {
  const ConfusionLayout gl = ConfusionLayout::group_stacked(2, 2);
  Vec raw = Vec::Constant(8, 0.125);
  CHECK_THROWS_AS(evaluate_constraints({Constraint::equal_opportunity(0.05)}, {gl, raw},
                                       ClassMasses::from_priors(kHalf)),
                  Error);
}

TEST_CASE("constraint subgradients") {
  const ClassMasses m = ClassMasses::from_priors(vec({0.5, 0.3, 0.2}));
  const Vec l = vec({1, 2, 3, 4, 5, 6, 7, 8, 9});
  const ConfusionVector c{ConfusionLayout::full(3), Vec::Constant(9, 1.0 / 9.0)};
  CHECK((subgradient_constraint({Constraint::linear(l, 0.3)}, 0, c, m) - l).norm() == doctest::Approx(0.0));

  // coverage upper side for class i: indicator of column i
  for (int i = 0; i < 3; ++i) {
    const Vec g = subgradient_constraint({Constraint::coverage(0.01)}, 2 * i, c, m);
    for (int r = 0; r < 3; ++r)
      for (int j = 0; j < 3; ++j) CHECK(g(r * 3 + j) == (j == i ? 1.0 : 0.0));
  }

  std::mt19937_64 rng(9);
  const std::vector<Constraint> kld{Constraint::kld(0.01)};
  for (int rep = 0; rep < 20; ++rep) {
    const Vec x = random_confusion(m.priors, rng, 0.2);
    const Vec g = subgradient_constraint(kld, 0, {ConfusionLayout::full(3), x}, m);
    const Vec fd = central_difference(
        [&](const Vec& y) { return evaluate_constraints(kld, {ConfusionLayout::full(3), y}, m)(0); }, x);
    CHECK(relative_error(g, fd) < 1e-5);
  }
}

TEST_CASE("coverage expands to 2n constraints matching the max form") {
  std::mt19937_64 rng(13);
  const Vec priors = vec({0.5, 0.3, 0.2});
  auto g = full_geometry(priors);
  const auto fs = expand_constraints({Constraint::coverage(0.01)}, g);
  REQUIRE(fs.size() == 6);
  for (int rep = 0; rep < 50; ++rep) {
    const Vec c = random_simplex(9, rng);
    double dev = 0.0;
    for (int i = 0; i < 3; ++i) dev = std::max(dev, std::abs(c(i) + c(3 + i) + c(6 + i) - priors(i)));
    CHECK(evaluate_all(fs, c).maxCoeff() == doctest::Approx(dev - 0.01));
    CHECK(max_violation(fs, c) == doctest::Approx(std::max(0.0, dev - 0.01)));
  }
  CHECK(max_violation({}, Vec::Zero(9)) == 0.0);
}

TEST_CASE("demographic parity and equalized odds expansions") {
  const ConfusionLayout gl = ConfusionLayout::group_stacked(2, 2);
  Mat gm(2, 2);
  gm << 0.3, 0.2, 0.25, 0.25;
  auto g = std::make_shared<ConfusionGeometry>(gl, ClassMasses::from_group_masses(gm));
  // group 0 predicts class 1 at rate 0.4, group 1 at rate 0.6; overall 0.5
  Vec raw(8);
  raw << 0.2, 0.1, 0.1, 0.1, 0.1, 0.15, 0.05, 0.2;
  const auto dp = expand_constraints({Constraint::demographic_parity(0.05)}, g);
  const double rate0 = (raw(1) + raw(3)) / 0.5, rate1 = (raw(5) + raw(7)) / 0.5;
  const double overall = raw(1) + raw(3) + raw(5) + raw(7);
  const double worst = std::max(std::abs(rate0 - overall), std::abs(rate1 - overall));
  CHECK(evaluate_all(dp, raw).maxCoeff() == doctest::Approx(worst - 0.05));
  const auto eo = expand_constraints({Constraint::equalized_odds(0.05)}, g);
  CHECK(eo.size() >= dp.size());
}
