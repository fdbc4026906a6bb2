#include "divshape/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "divshape/error.hpp"
#include "divshape/mesh.hpp"

namespace divshape {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr int kCostDegree = 6;

std::string fmt_point(Vec2 p) {
  std::ostringstream s;
  s.precision(6);
  s << "(" << p.x << ", " << p.y << ")";
  return s.str();
}

double frob2(const Mat2& m) { return m.a * m.a + m.b * m.b + m.c * m.c + m.d * m.d; }

// Region of points deeper than `delta` inside an arbitrary signed depth function.
class ErodedShape final : public RegionShape {
 public:
  ErodedShape(std::function<double(Vec2)> depth, BBox box, double delta)
      : depth_(std::move(depth)), box_(box), delta_(delta) {}
  double depth(Vec2 p) const override { return depth_(p) - delta_; }
  BBox bbox() const override { return box_; }
  void boundary_samples(double, std::vector<Vec2>&) const override {}
  std::string describe() const override { return "eroded(" + std::to_string(delta_) + ")"; }

 private:
  std::function<double(Vec2)> depth_;
  BBox box_;
  double delta_;
};

double default_resolution(const AdmissibleFamily& fam) {
  const BBox b = fam.B.bbox();
  return std::hypot(b.width(), b.height()) / 512.0;
}

}  // namespace

const std::vector<std::string>& cost_variables() {
  static const std::vector<std::string> v{"x", "y", "u1", "u2", "u1_x", "u1_y", "u2_x", "u2_y"};
  return v;
}

CostFunctional CostFunctional::drag(CostRegion region) {
  CostFunctional J;
  J.kind = CostKind::Drag;
  J.growth_C = 2.0;
  J.region = region;
  return J;
}

CostFunctional CostFunctional::custom(const std::string& integrand, const std::string& g, double C, CostRegion region) {
  if (!(C > 0.0)) throw ConfigError("growth constant C must be positive");
  CostFunctional J;
  J.kind = CostKind::Custom;
  J.integrand = Expression::parse(integrand, cost_variables());
  J.growth_g = Expression::parse(g.empty() ? "0" : g, {"x", "y"});
  J.growth_C = C;
  J.region = region;
  return J;
}

double CostFunctional::value(Vec2 x, Vec2 xi, const Mat2& eta) const {
  if (kind == CostKind::Drag) return frob2(eta) + frob2(eta.transposed());
  const double v[8] = {x.x, x.y, xi.x, xi.y, eta.a, eta.b, eta.c, eta.d};
  return integrand(v);
}

double CostFunctional::g(Vec2 x) const {
  if (kind == CostKind::Drag || growth_g.empty()) return 0.0;
  const double v[2] = {x.x, x.y};
  return growth_g(v);
}

double CostFunctional::growth_bound(Vec2 x, Vec2 xi, const Mat2& eta) const {
  return growth_C * (g(x) + norm2(xi) + frob2(eta));
}

double integrate_cost(const WeakSolution& sol, const CostFunctional& J, const std::function<double(Vec2)>& weight) {
  const VectorField& u = sol.velocity;
  const TriangleMesh& m = u.mesh();
  double total = 0.0;
  for (std::size_t t = 0; t < m.num_triangles(); ++t) {
    const ElementGeometry g = element_geometry(m, t);
    for (const QuadPoint& q : triangle_quadrature(kCostDegree)) {
      const Vec2 x = g.map(q.bary);
      const double w = weight ? weight(x) : 1.0;
      const Vec2 xi = u.value(t, q.bary);
      const Vec2 gx = u.x.gradient(t, q.bary, g), gy = u.y.gradient(t, q.bary, g);
      const Mat2 eta{gx.x, gx.y, gy.x, gy.y};
      const double val = J.value(x, xi, eta);
      if (!(val >= 0.0)) throw PreconditionError("cost integrand is negative or undefined at " + fmt_point(x));
      const double bound = J.growth_bound(x, xi, eta);
      if (val > bound * (1.0 + 1e-12) + std::numeric_limits<double>::min())
        throw PreconditionError("growth condition (H) violated at " + fmt_point(x) + ": J = " + std::to_string(val) +
                                " > " + std::to_string(bound));
      if (w != 0.0) total += q.weight * g.area * w * val;
    }
  }
  return total;
}

CostEvaluation evaluate_cost(const ClassCDomain& dom, const CostFunctional& J, const BodyForce& f,
                             const SolverConfig& cfg, double h) {
  if (!(h > 0.0)) throw PreconditionError("mesh size must be positive");
  CostEvaluation ev;
  auto reject = [&](const std::string& why) {
    ev.rejected = true;
    ev.cost = kInf;
    ev.message = why;
    return ev;
  };
  const AdmissibleFamily& fam = dom.family();
  const ValidationReport rep = validate_class_c(dom, fam);
  if (!rep.passed())
    return reject("class-C validation failed" + (rep.messages.empty() ? std::string() : ": " + rep.messages.front()));
  MeshOptions mo;
  if (J.region != CostRegion::Interior) {
    double margin = kInf;
    for (Vec2 p : dom.boundary_polyline()) margin = std::min(margin, fam.D.depth(p));
    if (margin < 2.0 * h * (1.0 - 1e-12)) return reject("obstacle closer than 2h to the boundary of D");
  }
  try {
    if (J.region == CostRegion::Interior) {
      ev.mesh = share(triangulate(BoundaryCurve::from_domain(dom), std::span<const BoundaryCurve>{}, h, mo));
      ev.flow = ev.mesh;
    } else {
      ev.mesh = share(triangulate(BoundaryCurve::from_region(fam.D), std::span<const ClassCDomain>(&dom, 1), h, mo));
      const int flow_region = 0;
      ev.flow = share(ev.mesh->submesh(std::span<const int>(&flow_region, 1)));
    }
  } catch (const PreconditionError& e) {
    return reject(std::string("not meshable at this h: ") + e.what());
  }
  try {
    ev.solution = J.region == CostRegion::Interior ? solve_interior(ev.flow, f, cfg) : solve_nse(ev.flow, f, cfg);
  } catch (const ConvergenceError& e) {
    ev.diverged = true;
    ev.cost = kInf;
    ev.message = e.what();
    return ev;
  }
  if (!ev.solution.converged) {
    ev.diverged = true;
    ev.cost = kInf;
    ev.message = "nonlinear iteration did not reach newton_tol within max_iters";
    return ev;
  }
  std::function<double(Vec2)> weight;
  if (J.region == CostRegion::BMinus) weight = [&](Vec2 x) { return fam.B.contains(x) ? 1.0 : 0.0; };
  ev.cost = integrate_cost(ev.solution, J, weight);
  return ev;
}

void OptimizerConfig::check() const {
  if (initial.empty()) throw ConfigError("initial parameters are empty");
  if (!step.empty() && step.size() != initial.size()) throw ConfigError("step must match initial in size");
  if (!lower.empty() && lower.size() != initial.size()) throw ConfigError("lower must match initial in size");
  if (!upper.empty() && upper.size() != initial.size()) throw ConfigError("upper must match initial in size");
  if (max_evals < 0) throw ConfigError("max_evals must be nonnegative");
  if (!(x_tol > 0.0)) throw ConfigError("x_tol must be positive");
  if (!(h > 0.0)) throw ConfigError("h must be positive");
}

Candidate make_candidate(std::vector<double> params, const ClassCDomain& dom, CostEvaluation eval, int evaluation) {
  Candidate c;
  c.params = std::move(params);
  c.cost = eval.cost;
  c.domain = std::make_shared<const ClassCDomain>(dom);
  c.eval = std::make_shared<const CostEvaluation>(std::move(eval));
  c.evaluation = evaluation;
  return c;
}

void finalize_run(OptimizationRun& run) {
  if (run.resolution <= 0.0) run.resolution = default_resolution(run.family);
  run.hausdorff_gaps.clear();
  for (std::size_t i = 0; i + 1 < run.sequence.size(); ++i)
    run.hausdorff_gaps.push_back(
        hausdorff_pompeiu(*run.sequence[i].domain, *run.sequence[i + 1].domain, run.family.B, run.resolution));
  run.best = 0;
  for (std::size_t i = 1; i < run.sequence.size(); ++i)
    if (run.sequence[i].cost < run.sequence[run.best].cost) run.best = i;
}

namespace {

class Search {
 public:
  Search(const AdmissibleFamily& fam, const CostFunctional& J, const BodyForce& f, const SolverConfig& cfg,
         const OptimizerConfig& opt, OptimizationRun& run)
      : fam_(fam), J_(J), f_(f), cfg_(cfg), opt_(opt), run_(run) {}

  struct Budget {};

  // Cost of a parameter vector; +inf when infeasible. Throws Budget when out of solves.
  double operator()(const std::vector<double>& x, std::string* why = nullptr) {
    EvaluationRecord rec{x, kInf, "rejected"};
    auto fail = [&](const std::string& msg) {
      if (why) *why = msg;
      run_.evaluations.push_back(rec);
      return kInf;
    };
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (!opt_.lower.empty() && x[i] < opt_.lower[i]) return fail("parameter " + std::to_string(i) + " below its bound");
      if (!opt_.upper.empty() && x[i] > opt_.upper[i]) return fail("parameter " + std::to_string(i) + " above its bound");
    }
    ClassCDomain dom;
    try {
      dom = make_star_domain(opt_.center, x, fam_, opt_.star);
    } catch (const InfeasibleError& e) {
      return fail(e.what());
    }
    if (run_.solves >= std::max(1, opt_.max_evals) && !run_.sequence.empty()) throw Budget{};
    CostEvaluation ev = evaluate_cost(dom, J_, f_, cfg_, opt_.h);
    if (ev.flow) ++run_.solves;
    rec.cost = ev.cost;
    rec.status = ev.rejected ? "rejected" : ev.diverged ? "diverged" : "ok";
    if (!std::isfinite(ev.cost)) return fail(ev.message);
    run_.evaluations.push_back(rec);
    const double cost = ev.cost;
    if (run_.sequence.empty() || cost < run_.sequence.back().cost)
      run_.sequence.push_back(make_candidate(x, dom, std::move(ev), static_cast<int>(run_.evaluations.size()) - 1));
    return cost;
  }

 private:
  const AdmissibleFamily& fam_;
  const CostFunctional& J_;
  const BodyForce& f_;
  const SolverConfig& cfg_;
  const OptimizerConfig& opt_;
  OptimizationRun& run_;
};

double diameter(const std::vector<std::vector<double>>& simplex, std::size_t best) {
  double d = 0.0;
  for (const auto& v : simplex) {
    double s = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) s += (v[i] - simplex[best][i]) * (v[i] - simplex[best][i]);
    d = std::max(d, std::sqrt(s));
  }
  return d;
}

}  // namespace

OptimizationRun minimize(const AdmissibleFamily& family, const CostFunctional& J, const BodyForce& f,
                         const SolverConfig& cfg, const OptimizerConfig& opt) {
  opt.check();
  cfg.check();
  family.check();
  OptimizationRun run;
  run.family = family;
  run.functional = J;
  run.resolution = default_resolution(family);
  Search cost(family, J, f, cfg, opt, run);
  const std::size_t n = opt.initial.size();

  std::vector<std::vector<double>> simplex{opt.initial};
  std::vector<double> values;
  std::string why;
  const double f0 = cost(opt.initial, &why);
  if (!std::isfinite(f0)) throw InfeasibleError("no feasible initial simplex: initial point rejected: " + why);
  values.push_back(f0);

  try {
    for (std::size_t i = 0; i < n; ++i) {
      const double base = opt.step.empty() ? 0.1 * std::max(std::abs(opt.initial[i]), 0.1) : opt.step[i];
      double fv = kInf;
      std::vector<double> v;
      for (int k = 0; k < 8 && !std::isfinite(fv); ++k) {
        for (const double sgn : {1.0, -1.0}) {
          v = opt.initial;
          v[i] += sgn * base * std::pow(0.5, k);
          fv = cost(v, &why);
          if (std::isfinite(fv)) break;
        }
      }
      if (!std::isfinite(fv))
        throw InfeasibleError("no feasible initial simplex along parameter " + std::to_string(i) + ": " + why);
      simplex.push_back(v);
      values.push_back(fv);
    }

    const double dn = static_cast<double>(n);
    const double alpha = 1.0, beta = 1.0 + 2.0 / dn, gamma = 0.75 - 0.5 / dn, delta = n > 1 ? 1.0 - 1.0 / dn : 0.5;
    std::vector<std::size_t> order(n + 1);
    for (;;) {
      for (std::size_t i = 0; i <= n; ++i) order[i] = i;
      std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
      const std::size_t lo = order.front(), hi = order.back(), second = order[n - 1];
      if (diameter(simplex, lo) < opt.x_tol) break;
      std::vector<double> centroid(n, 0.0);
      for (std::size_t k = 0; k <= n; ++k)
        if (k != hi)
          for (std::size_t i = 0; i < n; ++i) centroid[i] += simplex[k][i] / dn;
      auto along = [&](double t) {
        std::vector<double> p(n);
        for (std::size_t i = 0; i < n; ++i) p[i] = centroid[i] + t * (simplex[hi][i] - centroid[i]);
        return p;
      };
      const std::vector<double> xr = along(-alpha);
      const double fr = cost(xr);
      if (fr < values[lo]) {
        const std::vector<double> xe = along(-alpha * beta);
        const double fe = cost(xe);
        if (fe < fr) {
          simplex[hi] = xe;
          values[hi] = fe;
        } else {
          simplex[hi] = xr;
          values[hi] = fr;
        }
        continue;
      }
      if (fr < values[second]) {
        simplex[hi] = xr;
        values[hi] = fr;
        continue;
      }
      const bool outside = fr < values[hi];
      const std::vector<double> xc = along(outside ? -alpha * gamma : gamma);
      const double fc = cost(xc);
      if (fc < (outside ? fr : values[hi])) {
        simplex[hi] = xc;
        values[hi] = fc;
        continue;
      }
      for (std::size_t k = 0; k <= n; ++k) {
        if (k == lo) continue;
        for (std::size_t i = 0; i < n; ++i) simplex[k][i] = simplex[lo][i] + delta * (simplex[k][i] - simplex[lo][i]);
        values[k] = cost(simplex[k]);
      }
    }
  } catch (const Search::Budget&) {
  }
  finalize_run(run);
  return run;
}

bool DiagnosticsReport::finite() const {
  auto all = [](const std::vector<double>& v) { return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); }); };
  auto idx = [](const std::vector<int>& v) { return std::all_of(v.begin(), v.end(), [](int i) { return i >= 0; }); };
  return all(weak_limit_check) && all(norm_convergence) && all(exhaustion_values) && std::isfinite(vanishing_check) &&
         std::isfinite(vanishing_nodal) && std::isfinite(norm_gap) && std::isfinite(fatou_gap) &&
         std::isfinite(u_l2) && std::isfinite(u_h1) && idx(exhaustion_indices) && idx(gamma_indices);
}

namespace {

// |a - b|_L2 between two fields extended by zero off their meshes.
double extended_l2_distance(const VectorField& a, const VectorField& b) {
  const MeshLocator la(a.mesh()), lb(b.mesh());
  double s = 0.0;
  auto pass = [&](const VectorField& u, const MeshLocator& other_loc, const VectorField& other, bool both) {
    const TriangleMesh& m = u.mesh();
    for (std::size_t t = 0; t < m.num_triangles(); ++t) {
      const ElementGeometry g = element_geometry(m, t);
      for (const QuadPoint& q : triangle_quadrature(kCostDegree)) {
        const Vec2 x = g.map(q.bary);
        std::array<double, 3> bary{};
        const int ot = other_loc.locate(x, &bary);
        if (!both && ot >= 0) continue;
        const Vec2 ov = ot >= 0 ? other.value(static_cast<std::size_t>(ot), bary) : Vec2{};
        s += q.weight * g.area * norm2(u.value(t, q.bary) - ov);
      }
    }
  };
  pass(a, lb, b, true);
  pass(b, la, a, false);
  return std::sqrt(s);
}

}  // namespace

DiagnosticsReport run_diagnostics(const OptimizationRun& run, const std::vector<Region>& probes,
                                const DiagnosticsOptions& opts) {
  const std::size_t tail = std::max<std::size_t>(opts.tail, 3);
  if (run.sequence.size() < tail)
    throw PreconditionError("diagnostics need at least " + std::to_string(tail) + " tail candidates, run has " +
                            std::to_string(run.sequence.size()));
  const std::size_t start = run.sequence.size() - tail;
  for (std::size_t m = start; m < run.sequence.size(); ++m)
    if (!run.sequence[m].eval || !run.sequence[m].eval->flow || !run.sequence[m].domain)
      throw PreconditionError("tail candidate " + std::to_string(m) + " has no stored solution");
  const AdmissibleFamily& fam = run.family;
  const double res = run.resolution > 0.0 ? run.resolution : default_resolution(fam);

  std::vector<double> gaps;
  for (std::size_t m = start; m < run.sequence.size(); ++m)
    gaps.push_back(hausdorff_pompeiu(*run.sequence[m].domain, *run.sequence.back().domain, fam.B, res));
  for (std::size_t k = 1; k < gaps.size(); ++k)
    if (gaps[k] > gaps[k - 1] + 2.0 * res)
      throw PreconditionError("sequence not Cauchy in rho: distance to the last tail domain grows from " +
                              std::to_string(gaps[k - 1]) + " to " + std::to_string(gaps[k]));

  DiagnosticsReport rep;
  rep.tail_start = start;
  rep.tail_gaps = gaps;
  const Candidate& last = run.sequence.back();
  const Candidate& star = run.sequence.at(run.best);
  const VectorField& u = last.eval->solution.velocity;
  const bool interior = run.functional.region == CostRegion::Interior;
  rep.u_l2 = l2_norm(u);
  rep.u_h1 = h1_norm(u);

  std::vector<double> h1;
  for (std::size_t m = start; m < run.sequence.size(); ++m) {
    const VectorField& um = run.sequence[m].eval->solution.velocity;
    rep.weak_limit_check.push_back(m + 1 == run.sequence.size() ? 0.0 : extended_l2_distance(um, u));
    h1.push_back(h1_norm(um));
    rep.norm_convergence.push_back(std::abs(h1.back() - rep.u_h1));
  }
  rep.norm_gap = std::abs(h1[h1.size() - 2] - h1.back()) / std::max(h1.back(), std::numeric_limits<double>::min());

  // u must vanish on the meshed Omega* (exterior problems) or off it (interior problems).
  const MeshLocator uloc(u.mesh());
  const ClassCDomain& dstar = *star.domain;
  if (!interior) {
    const TriangleMesh& full = *star.eval->mesh;
    double s = 0.0;
    for (std::size_t t = 0; t < full.num_triangles(); ++t) {
      if (full.regions()[t] == 0) continue;
      const ElementGeometry g = element_geometry(full, t);
      for (const QuadPoint& q : triangle_quadrature(kCostDegree)) s += q.weight * g.area * norm2(evaluate(u, uloc, g.map(q.bary)));
    }
    rep.vanishing_check = std::sqrt(s);
    const MeshLocator floc(full);
    const Raster& r = dstar.raster();
    for (int j = 0; j < r.ny(); ++j)
      for (int i = 0; i < r.nx(); ++i) {
        if (!r.cell(i, j)) continue;
        const Vec2 p = r.cell_center(i, j);
        const int t = floc.locate(p);
        if (t < 0 || full.regions()[static_cast<std::size_t>(t)] == 0) continue;
        rep.vanishing_nodal = std::max(rep.vanishing_nodal, norm(evaluate(u, uloc, p)));
      }
  } else {
    const MeshLocator sloc(*star.eval->flow);
    const BBox box = fam.D.bbox();
    double s = 0.0;
    for (double y = box.lo.y + 0.5 * res; y < box.hi.y; y += res)
      for (double x = box.lo.x + 0.5 * res; x < box.hi.x; x += res) {
        const Vec2 p{x, y};
        if (sloc.locate(p) >= 0) continue;
        const double v = norm(evaluate(u, uloc, p));
        s += res * res * v * v;
        rep.vanishing_nodal = std::max(rep.vanishing_nodal, v);
      }
    rep.vanishing_check = std::sqrt(s);
  }

  std::function<double(Vec2)> region_weight;
  if (run.functional.region == CostRegion::BMinus) region_weight = [&](Vec2 x) { return fam.B.contains(x) ? 1.0 : 0.0; };
  std::function<double(Vec2)> star_weight = region_weight;
  if (last.eval != star.eval)
    star_weight = [&](Vec2 x) {
      const double w = region_weight ? region_weight(x) : 1.0;
      return dstar.contains(x) == interior ? w : 0.0;
    };
  double best_cost = kInf;
  for (const Candidate& c : run.sequence) best_cost = std::min(best_cost, c.cost);
  const double j_star = integrate_cost(last.eval->solution, run.functional, star_weight);
  rep.fatou_gap = j_star - best_cost;

  std::vector<ClassCDomain> seq;
  for (const Candidate& c : run.sequence) seq.push_back(*c.domain);
  GammaOptions go;
  go.resolution = std::max(go.resolution, 2.0 * res);
  const BBox dbox = fam.D.bbox();
  const double diam = std::hypot(dbox.width(), dbox.height());
  const Region D = fam.D;
  std::function<double(Vec2)> fluid_depth = [&dstar, D, interior](Vec2 p) {
    return interior ? dstar.depth(p) : std::min(D.depth(p), -dstar.depth(p));
  };
  for (int j = 1; j <= opts.exhaustion_levels; ++j) {
    const double delta = std::ldexp(diam, -j);
    rep.exhaustion_levels.push_back(delta);
    const Region G(std::make_shared<const ErodedShape>(fluid_depth, interior ? dstar.bbox() : dbox, delta));
    auto in_g = [&](Vec2 x) { return G.depth(x) > 0.0 ? 1.0 : 0.0; };
    rep.exhaustion_values.push_back(integrate_cost(
        last.eval->solution, run.functional,
        [&](Vec2 x) { return in_g(x) * (region_weight ? region_weight(x) : 1.0); }));
    try {
      rep.exhaustion_indices.push_back(interior ? check_gamma(seq, dstar, G, go) : check_gamma_hat(seq, dstar, G, go));
    } catch (const PreconditionError&) {
      rep.exhaustion_indices.push_back(-1);
    }
  }

  for (const Region& K : probes) {
    const std::vector<Vec2> pts = K.closure_samples(go.resolution);
    const bool in_star = std::all_of(pts.begin(), pts.end(), [&](Vec2 p) { return dstar.depth(p) > go.tolerance; });
    const bool off_star = std::all_of(pts.begin(), pts.end(), [&](Vec2 p) { return dstar.depth(p) < -go.tolerance; });
    if (!in_star && !off_star) throw PreconditionError("probe " + K.describe() + " meets the boundary of Omega*");
    rep.probe_kinds.push_back(in_star ? "gamma" : "gamma-hat");
    try {
      rep.gamma_indices.push_back(in_star ? check_gamma(seq, dstar, K, go) : check_gamma_hat(seq, dstar, K, go));
    } catch (const PreconditionError&) {
      rep.gamma_indices.push_back(-1);
    }
  }
  return rep;
}

}  // namespace divshape
