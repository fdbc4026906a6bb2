#include <cmath>
#include <limits>

#include "doctest.h"

#include "divshape/error.hpp"
#include "divshape/expression.hpp"
#include "divshape/optimizer.hpp"
#include "test_support.hpp"

using namespace divshape;
using divshape::testing::Gen;

namespace {

AdmissibleFamily square_family() {
  AdmissibleFamily fam;
  fam.D = Region::box({0.0, 0.0}, {1.0, 1.0});
  fam.B = Region::disk({0.5, 0.5}, 0.45);
  fam.a = 0.02;
  fam.k = 0.01;
  fam.r = 0.5;
  return fam;
}

BodyForce swirl(double amp = 20.0) {
  return BodyForce::from_function([amp](Vec2 p) { return Vec2{-(p.y - 0.5), p.x - 0.5} * amp; });
}

ClassCDomain disk(double r) { return make_star_domain({0.5, 0.5}, {r}, square_family()); }

Candidate disk_candidate(double r, double h = 0.05) {
  const ClassCDomain d = disk(r);
  return make_candidate({r}, d, evaluate_cost(d, CostFunctional::drag(), swirl(), SolverConfig{}, h));
}

OptimizationRun hand_run(const std::vector<Candidate>& cands) {
  OptimizationRun run;
  run.family = square_family();
  run.functional = CostFunctional::drag();
  run.sequence = cands;
  finalize_run(run);
  return run;
}

}  // namespace

TEST_CASE("expressions evaluate with the usual precedence") {
  const Expression e = Expression::parse("-x^2 + 2*sin(pi*y) - 3/(1+x) + max(x, y)^2^0.5 - -1", {"x", "y"});
  Gen g(5);
  for (int k = 0; k < 20; ++k) {
    const double x = g.uniform(0.1, 2.0), y = g.uniform(-1.0, 1.0);
    const double v[2] = {x, y};
    const double want = -(x * x) + 2 * std::sin(kPi * y) - 3 / (1 + x) + std::pow(std::max(x, y), std::pow(2.0, 0.5)) + 1;
    CHECK(e(v) == doctest::Approx(want).epsilon(1e-14));
  }
  const Expression c = Expression::parse("pow(2, 10) + min(abs(-3), sqrt(16)) + exp(0) + log(1) + cos(0) + tan(0)", {});
  CHECK(c({}) == 1024.0 + 3.0 + 1.0 + 0.0 + 1.0 + 0.0);
  CHECK(e.uses("y"));
  CHECK_FALSE(Expression::parse("x + 1", {"x", "y"}).uses("y"));
  CHECK(Expression::parse("2 * 3 + 4", {})({}) == 10.0);
  CHECK(Expression::parse("2 * (3 + 4)", {})({}) == 14.0);
  CHECK(Expression::parse("1e-3 * 2", {})({}) == doctest::Approx(2e-3));
}

TEST_CASE("expression errors name the problem") {
  auto message = [](const std::string& text) {
    try {
      Expression::parse(text, {"x"});
    } catch (const ConfigError& e) {
      return std::string(e.what());
    }
    return std::string();
  };
  CHECK(message("x +").find("column 3") != std::string::npos);
  CHECK(message("2 ** x").find("column 3") != std::string::npos);
  CHECK(message("foo(x)").find("unknown function 'foo'") != std::string::npos);
  CHECK(message("z + 1").find("unknown variable 'z'") != std::string::npos);
  CHECK(message("sin(x, x)").find("takes 1 argument") != std::string::npos);
  CHECK(message("max(x)").find("takes 2 arguments") != std::string::npos);
  CHECK(message("x").empty());
  const Expression e = Expression::parse("x", {"x"});
  const double two[2] = {1.0, 2.0};
  CHECK_THROWS_AS(e(two), PreconditionError);
}

TEST_CASE("drag integrand is transpose symmetric and meets its growth bound") {
  const CostFunctional J = CostFunctional::drag();
  Gen g(9);
  for (int k = 0; k < 100; ++k) {
    const Mat2 eta{g.uniform(-5, 5), g.uniform(-5, 5), g.uniform(-5, 5), g.uniform(-5, 5)};
    const Vec2 x{g.uniform(0, 1), g.uniform(0, 1)}, xi{g.uniform(-1, 1), g.uniform(-1, 1)};
    CHECK(J.value(x, xi, eta) == J.value(x, xi, eta.transposed()));
    CHECK(J.value(x, xi, eta) <= J.growth_bound(x, xi, eta));
    const double frob = eta.a * eta.a + eta.b * eta.b + eta.c * eta.c + eta.d * eta.d;
    CHECK(J.value(x, xi, eta) == doctest::Approx(2.0 * frob).epsilon(1e-14));
  }
  const CostFunctional c = CostFunctional::custom("u1^2 + u2_y^2 + x", "x", 1.0);
  CHECK(c.value({0.5, 0.0}, {2.0, 0.0}, Mat2{0, 0, 0, 3}) == doctest::Approx(13.5));
  CHECK(c.g({0.25, 0.0}) == 0.25);
  CHECK_THROWS_AS(CostFunctional::custom("u1", "0", 0.0), ConfigError);
  CHECK_THROWS_AS(CostFunctional::custom("u3", "0", 1.0), ConfigError);
}

TEST_CASE("zero force gives zero drag") {
  const CostEvaluation ev = evaluate_cost(disk(0.2), CostFunctional::drag(), BodyForce::zero(), SolverConfig{}, 0.1);
  CHECK_FALSE(ev.rejected);
  CHECK(ev.cost == 0.0);
}

TEST_CASE("position-only integrand matches direct quadrature") {
  const CostFunctional J = CostFunctional::custom("x^2 + y + 1", "x^2 + y + 1", 1.0);
  const CostEvaluation ev = evaluate_cost(disk(0.2), J, swirl(), SolverConfig{}, 0.1);
  REQUIRE_FALSE(ev.rejected);
  // Edge-midpoint rule, exact for quadratics.
  const TriangleMesh& m = *ev.flow;
  double want = 0.0;
  for (std::size_t t = 0; t < m.num_triangles(); ++t) {
    const auto& tri = m.triangles()[t];
    const Vec2 a = m.vertices()[tri[0]], b = m.vertices()[tri[1]], c = m.vertices()[tri[2]];
    for (const Vec2 p : {(a + b) * 0.5, (b + c) * 0.5, (c + a) * 0.5})
      want += m.triangle_area(t) / 3.0 * (p.x * p.x + p.y + 1.0);
  }
  CHECK(std::abs(ev.cost - want) <= 1e-10 * want);
  // Integrating over B minus the obstacle drops the corners of the square.
  const CostFunctional JB = CostFunctional::custom("x^2 + y + 1", "x^2 + y + 1", 1.0, CostRegion::BMinus);
  const double in_b = evaluate_cost(disk(0.2), JB, swirl(), SolverConfig{}, 0.1).cost;
  CHECK(in_b < ev.cost);
  CHECK(in_b > 0.5 * ev.cost);
}

TEST_CASE("cost is stable under refinement") {
  const double coarse = evaluate_cost(disk(0.25), CostFunctional::drag(), swirl(), SolverConfig{}, 0.05).cost;
  const double fine = evaluate_cost(disk(0.25), CostFunctional::drag(), swirl(), SolverConfig{}, 0.025).cost;
  CHECK(std::abs(coarse - fine) <= 0.03 * fine);
}

TEST_CASE("growth and sign violations abort with a location") {
  const CostFunctional constant = CostFunctional::custom("1", "0", 1.0);
  try {
    evaluate_cost(disk(0.2), constant, BodyForce::zero(), SolverConfig{}, 0.1);
    FAIL("expected a growth violation");
  } catch (const PreconditionError& e) {
    CHECK(std::string(e.what()).find("growth condition (H) violated at (") != std::string::npos);
  }
  const CostFunctional negative = CostFunctional::custom("-u1^2", "0", 1.0);
  CHECK_THROWS_WITH_AS(evaluate_cost(disk(0.2), negative, swirl(), SolverConfig{}, 0.1),
                       doctest::Contains("negative"), PreconditionError);
}

TEST_CASE("infeasible and diverging candidates get infinite cost") {
  const CostEvaluation close = evaluate_cost(disk(0.4), CostFunctional::drag(), swirl(), SolverConfig{}, 0.1);
  CHECK(close.rejected);
  CHECK(std::isinf(close.cost));
  CHECK(close.message.find("2h") != std::string::npos);
  const CostEvaluation on_margin = evaluate_cost(disk(0.4), CostFunctional::drag(), swirl(), SolverConfig{}, 0.05);
  CHECK_FALSE(on_margin.rejected);
  CHECK(std::isfinite(on_margin.cost));
  const CostEvaluation small = evaluate_cost(disk(0.1), CostFunctional::drag(), swirl(), SolverConfig{}, 0.1);
  CHECK(small.rejected);
  CHECK(small.message.find("not meshable") != std::string::npos);
  SolverConfig cfg;
  cfg.gamma = 1e-4;
  const CostEvaluation wild = evaluate_cost(disk(0.2), CostFunctional::drag(), swirl(5e3), cfg, 0.1);
  CHECK(wild.diverged);
  CHECK(std::isinf(wild.cost));
  CHECK_FALSE(wild.message.empty());
}

TEST_CASE("interior problem integrates over the obstacle") {
  const CostFunctional J = CostFunctional::drag(CostRegion::Interior);
  const CostEvaluation ev = evaluate_cost(disk(0.2), J, swirl(), SolverConfig{}, 0.05);
  REQUIRE_FALSE(ev.rejected);
  CHECK(ev.mesh == ev.flow);
  CHECK(ev.flow->area() == doctest::Approx(kPi * 0.04).epsilon(0.01));
  CHECK(ev.cost > 0.0);
  // Energy identity: drag = 2 |grad u|^2 = (2 / gamma) (f, u).
  const double e = 2.0 * std::pow(h1_seminorm(ev.solution.velocity), 2);
  CHECK(ev.cost == doctest::Approx(e).epsilon(1e-10));
}

TEST_CASE("zero evaluation budget returns the initial point") {
  OptimizerConfig oc;
  oc.initial = {0.2};
  oc.max_evals = 0;
  oc.h = 0.1;
  const OptimizationRun run = minimize(square_family(), CostFunctional::drag(), swirl(), SolverConfig{}, oc);
  REQUIRE(run.sequence.size() == 1);
  CHECK(run.solves == 1);
  CHECK(run.best_candidate().params == oc.initial);
}

TEST_CASE("infeasible initial point is an error") {
  OptimizerConfig oc;
  oc.initial = {0.6};
  oc.h = 0.1;
  CHECK_THROWS_WITH_AS(minimize(square_family(), CostFunctional::drag(), swirl(), SolverConfig{}, oc),
                       doctest::Contains("no feasible initial simplex"), InfeasibleError);
  oc.initial = {0.2};
  oc.lower = {0.3};
  CHECK_THROWS_AS(minimize(square_family(), CostFunctional::drag(), swirl(), SolverConfig{}, oc), InfeasibleError);
  oc.lower = {0.1, 0.2};
  CHECK_THROWS_AS(minimize(square_family(), CostFunctional::drag(), swirl(), SolverConfig{}, oc), ConfigError);
}

TEST_CASE("one-parameter search agrees with an exhaustive sweep") {
  const double lo = 0.15, hi = 0.3, h = 0.05;
  double best_r = lo, best = std::numeric_limits<double>::infinity();
  for (int i = 0; i <= 15; ++i) {
    const double r = lo + (hi - lo) * i / 15.0;
    const double c = evaluate_cost(disk(r), CostFunctional::drag(), swirl(), SolverConfig{}, h).cost;
    if (c < best) {
      best = c;
      best_r = r;
    }
  }
  OptimizerConfig oc;
  oc.initial = {0.2};
  oc.step = {0.02};
  oc.lower = {lo};
  oc.upper = {hi};
  oc.h = h;
  oc.max_evals = 60;
  const OptimizationRun run = minimize(square_family(), CostFunctional::drag(), swirl(), SolverConfig{}, oc);
  CHECK(std::abs(run.best_candidate().params[0] - best_r) <= (hi - lo) / 15.0);
  CHECK(run.solves <= 60);
  for (std::size_t i = 1; i < run.sequence.size(); ++i) CHECK(run.sequence[i].cost < run.sequence[i - 1].cost);
  CHECK(run.best == run.sequence.size() - 1);
  CHECK(run.hausdorff_gaps.size() == run.sequence.size() - 1);
  CHECK(run.evaluations.size() >= static_cast<std::size_t>(run.solves));
  for (const Candidate& c : run.sequence) CHECK(std::isfinite(c.cost));
}

TEST_CASE("diagnostics of a stationary run") {
  const Candidate c = disk_candidate(0.2);
  const OptimizationRun run = hand_run({c, c, c});
  const DiagnosticsReport rep = run_diagnostics(run, {Region::disk({0.5, 0.5}, 0.05), Region::box({0.05, 0.05}, {0.1, 0.1})});
  CHECK(rep.vanishing_check == 0.0);
  CHECK(rep.vanishing_nodal == 0.0);
  for (double v : rep.norm_convergence) CHECK(v == 0.0);
  for (double v : rep.weak_limit_check) CHECK(v <= 1e-14 * rep.u_l2);
  CHECK(std::abs(rep.fatou_gap) <= 1e-12);
  CHECK(rep.finite());
  CHECK(rep.probe_kinds == std::vector<std::string>{"gamma", "gamma-hat"});
  CHECK(rep.gamma_indices == std::vector<int>{1, 1});
}

TEST_CASE("diagnostics of a radius sequence converging to its best") {
  const OptimizationRun run = hand_run({disk_candidate(0.15), disk_candidate(0.2), disk_candidate(0.225), disk_candidate(0.2375)});
  REQUIRE(run.best == 3);
  const DiagnosticsReport rep = run_diagnostics(run, {Region::disk({0.5, 0.5}, 0.1), Region::disk({0.5, 0.5}, 0.2),
                                                   Region::box({0.05, 0.05}, {0.2, 0.2})});
  CHECK(rep.tail_start == 1);
  CHECK(rep.vanishing_check <= 1e-6 * rep.u_l2);
  CHECK(rep.fatou_gap <= 1e-8);
  CHECK(rep.finite());
  // A disk of radius 0.2 lies in Omega_m only from the third candidate on.
  CHECK(rep.gamma_indices == std::vector<int>{1, 3, 1});
  CHECK(rep.weak_limit_check.back() == 0.0);
  CHECK(rep.weak_limit_check[0] > rep.weak_limit_check[1]);
  for (std::size_t j = 1; j < rep.exhaustion_values.size(); ++j) CHECK(rep.exhaustion_values[j] >= rep.exhaustion_values[j - 1]);
  CHECK(rep.exhaustion_values.back() <= run.best_candidate().cost + 1e-12);
  CHECK(rep.exhaustion_values.back() > 2.0 * rep.exhaustion_values.front());
}

TEST_CASE("vanishing check sees a field living outside the best domain") {
  // The best (cheapest) candidate is the largest disk, but the last tail solution lives around the smallest.
  const OptimizationRun run = hand_run({disk_candidate(0.25), disk_candidate(0.21), disk_candidate(0.2)});
  REQUIRE(run.best == 0);
  const DiagnosticsReport rep = run_diagnostics(run, {});
  CHECK(rep.vanishing_check > 0.0);
  CHECK(rep.vanishing_nodal > 0.0);
  const double mean = rep.vanishing_check / std::sqrt(kPi * 0.25 * 0.25);
  CHECK(mean <= rep.vanishing_nodal);
  CHECK(mean >= 0.05 * rep.vanishing_nodal);
}

TEST_CASE("diagnostics preconditions") {
  const Candidate a = disk_candidate(0.2), b = disk_candidate(0.22), c = disk_candidate(0.23);
  CHECK_THROWS_WITH_AS(run_diagnostics(hand_run({b, c}), {}), doctest::Contains("at least 3"), PreconditionError);
  CHECK_THROWS_WITH_AS(run_diagnostics(hand_run({a, disk_candidate(0.12), c}), {}),
                       doctest::Contains("sequence not Cauchy in rho"), PreconditionError);
  CHECK_THROWS_WITH_AS(run_diagnostics(hand_run({a, b, c}), {Region::disk({0.5, 0.5}, 0.3)}),
                       doctest::Contains("meets the boundary"), PreconditionError);
}
