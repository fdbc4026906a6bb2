#include "divshape/experiments.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <random>
#include <set>
#include <sstream>

#include "divshape/divfree.hpp"
#include "divshape/error.hpp"
#include "divshape/nse.hpp"
#include "divshape/optimizer.hpp"

namespace divshape {

using nlohmann::json;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

const std::vector<std::pair<Preset, std::string>>& preset_names() {
  static const std::vector<std::pair<Preset, std::string>> names{
      {Preset::Decomposition, "decomposition"}, {Preset::Localization, "localization"},
      {Preset::Periods, "periods"},             {Preset::IdentityWitness, "identity-witness"},
      {Preset::NseVerify, "nse-verify"},        {Preset::Optimize, "optimize"},
      {Preset::OptimizeInterior, "optimize-interior"}, {Preset::CheckFamily, "check-family"}};
  return names;
}

double default_h(Preset p) {
  switch (p) {
    case Preset::Decomposition: return 0.05;
    case Preset::Localization: return 0.02;
    case Preset::Periods: return 0.05;
    case Preset::IdentityWitness: return 0.02;
    case Preset::NseVerify: return 0.1;
    case Preset::Optimize: return 0.05;
    case Preset::OptimizeInterior: return 0.05;
    case Preset::CheckFamily: return 1.0 / 128.0;
  }
  return 0.05;
}

std::set<std::string> preset_keys(Preset p) {
  switch (p) {
    case Preset::Decomposition: return {"fields", "levels"};
    case Preset::Localization: return {"plateau"};
    case Preset::Periods: return {"paths"};
    case Preset::IdentityWitness: return {};
    case Preset::NseVerify: return {"gamma", "convection_sign", "mesh", "force", "solver"};
    case Preset::Optimize: return {"family", "functional", "force", "solver", "optimizer", "sweep", "probes"};
    case Preset::OptimizeInterior: return {"family", "functional", "force", "solver", "optimizer", "probes"};
    case Preset::CheckFamily: return {"triples", "samples", "domains"};
  }
  return {};
}

std::string line_column(const std::string& text, std::size_t byte) {
  std::size_t line = 1, col = 1;
  for (std::size_t i = 0; i < std::min(byte, text.size()); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return "line " + std::to_string(line) + ", column " + std::to_string(col);
}

// Field accessors naming the offending key.
double number(const json& j, const std::string& key, double fallback, const std::string& where) {
  if (!j.contains(key)) return fallback;
  if (!j.at(key).is_number()) throw ConfigError(where + key + ": expected a number");
  return j.at(key).get<double>();
}

int integer(const json& j, const std::string& key, int fallback, const std::string& where) {
  if (!j.contains(key)) return fallback;
  if (!j.at(key).is_number_integer()) throw ConfigError(where + key + ": expected an integer");
  return j.at(key).get<int>();
}

std::vector<double> numbers(const json& j, const std::string& key, const std::string& where) {
  if (!j.contains(key)) return {};
  const json& a = j.at(key);
  if (!a.is_array()) throw ConfigError(where + key + ": expected an array of numbers");
  std::vector<double> out;
  for (const json& v : a) {
    if (!v.is_number()) throw ConfigError(where + key + ": expected an array of numbers");
    out.push_back(v.get<double>());
  }
  return out;
}

std::string text(const json& j, const std::string& key, const std::string& fallback, const std::string& where) {
  if (!j.contains(key)) return fallback;
  if (!j.at(key).is_string()) throw ConfigError(where + key + ": expected a string");
  return j.at(key).get<std::string>();
}

const json& object(const json& j, const std::string& key, const std::string& where) {
  static const json empty = json::object();
  if (!j.contains(key)) return empty;
  if (!j.at(key).is_object()) throw ConfigError(where + key + ": expected an object");
  return j.at(key);
}

void only_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  for (const auto& [k, v] : j.items())
    if (!allowed.count(k)) throw ConfigError(where + k + ": unknown field");
}

Region region_from_json(const json& j, const std::string& where) {
  if (!j.is_object() || j.size() != 1) throw ConfigError(where + ": expected {\"box\": [x0, y0, x1, y1]} or {\"disk\": [x, y, r]}");
  if (j.contains("box")) {
    const std::vector<double> b = numbers(j, "box", where + ".");
    if (b.size() != 4 || b[2] <= b[0] || b[3] <= b[1]) throw ConfigError(where + ".box: expected x0 < x1, y0 < y1");
    return Region::box({b[0], b[1]}, {b[2], b[3]});
  }
  if (j.contains("disk")) {
    const std::vector<double> d = numbers(j, "disk", where + ".");
    if (d.size() != 3 || d[2] <= 0.0) throw ConfigError(where + ".disk: expected [x, y, r] with r > 0");
    return Region::disk({d[0], d[1]}, d[2]);
  }
  throw ConfigError(where + ": expected a box or a disk");
}

struct FamilySpec {
  AdmissibleFamily family;
  json D = {{"box", {0.0, 0.0, 1.0, 1.0}}};
  json B = {{"disk", {0.5, 0.5, 0.45}}};
};

FamilySpec family_from_json(const json& j) {
  const std::string w = "family.";
  only_keys(j, {"a", "r", "k", "lip", "sup", "B", "D"}, w);
  FamilySpec s;
  s.family.a = number(j, "a", 0.02, w);
  s.family.r = number(j, "r", 0.5, w);
  s.family.k = number(j, "k", 0.01, w);
  s.family.lip = number(j, "lip", s.family.lip, w);
  s.family.sup = number(j, "sup", s.family.sup, w);
  if (j.contains("D")) s.D = j.at("D");
  if (j.contains("B")) s.B = j.at("B");
  s.family.D = region_from_json(s.D, "family.D");
  s.family.B = region_from_json(s.B, "family.B");
  try {
    s.family.check();
  } catch (const PreconditionError& e) {
    throw ConfigError(std::string("family: ") + e.what());
  }
  return s;
}

json family_to_json(const FamilySpec& s) {
  return {{"a", s.family.a}, {"r", s.family.r}, {"k", s.family.k}, {"lip", s.family.lip},
          {"sup", s.family.sup}, {"B", s.B}, {"D", s.D}};
}

BodyForce force_from_json(const json& j, const std::string& fx, const std::string& fy) {
  only_keys(j, {"x", "y"}, "force.");
  const Expression ex = Expression::parse(text(j, "x", fx, "force."), {"x", "y"});
  const Expression ey = Expression::parse(text(j, "y", fy, "force."), {"x", "y"});
  return BodyForce::from_function([ex, ey](Vec2 p) {
    const double v[2] = {p.x, p.y};
    return Vec2{ex(v), ey(v)};
  });
}

SolverConfig solver_from_json(const json& j) {
  const std::string w = "solver.";
  only_keys(j, {"gamma", "convection_sign", "picard_tol", "newton_tol", "max_iters", "skew_form"}, w);
  SolverConfig c;
  c.gamma = number(j, "gamma", c.gamma, w);
  c.convection_sign = integer(j, "convection_sign", c.convection_sign, w);
  c.picard_tol = number(j, "picard_tol", c.picard_tol, w);
  c.newton_tol = number(j, "newton_tol", c.newton_tol, w);
  c.max_iters = integer(j, "max_iters", c.max_iters, w);
  if (j.contains("skew_form")) {
    if (!j.at("skew_form").is_boolean()) throw ConfigError(w + "skew_form: expected true or false");
    c.skew_form = j.at("skew_form").get<bool>();
  }
  c.check();
  return c;
}

CostFunctional functional_from_json(const json& j, CostRegion fallback) {
  const std::string w = "functional.";
  only_keys(j, {"kind", "integrand", "g", "C", "region"}, w);
  CostRegion region = fallback;
  const std::string r = text(j, "region", "", w);
  if (r == "D-minus") region = CostRegion::DMinus;
  else if (r == "B-minus") region = CostRegion::BMinus;
  else if (r == "interior") region = CostRegion::Interior;
  else if (!r.empty()) throw ConfigError(w + "region: expected D-minus, B-minus or interior");
  const std::string kind = text(j, "kind", "drag", w);
  if (kind == "drag") return CostFunctional::drag(region);
  if (kind != "custom") throw ConfigError(w + "kind: expected drag or custom");
  if (!j.contains("integrand")) throw ConfigError(w + "integrand: required for a custom functional");
  return CostFunctional::custom(text(j, "integrand", "", w), text(j, "g", "0", w), number(j, "C", 1.0, w), region);
}

OptimizerConfig optimizer_from_json(const json& j, OptimizerConfig c) {
  const std::string w = "optimizer.";
  only_keys(j, {"center", "initial", "step", "lower", "upper", "max_evals", "x_tol"}, w);
  if (j.contains("center")) {
    const std::vector<double> v = numbers(j, "center", w);
    if (v.size() != 2) throw ConfigError(w + "center: expected [x, y]");
    c.center = {v[0], v[1]};
  }
  if (j.contains("initial")) {
    c.initial = numbers(j, "initial", w);
    c.step.clear();
    c.lower.clear();
    c.upper.clear();
  }
  if (j.contains("step")) c.step = numbers(j, "step", w);
  if (j.contains("lower")) c.lower = numbers(j, "lower", w);
  if (j.contains("upper")) c.upper = numbers(j, "upper", w);
  c.max_evals = integer(j, "max_evals", c.max_evals, w);
  c.x_tol = number(j, "x_tol", c.x_tol, w);
  try {
    c.check();
  } catch (const ConfigError& e) {
    throw ConfigError(w + e.what());
  }
  return c;
}

Check make_check(const ExperimentConfig& cfg, const std::string& name, double value, const std::string& rel,
                 double fallback) {
  Check c;
  c.name = name;
  c.value = value;
  c.relation = rel;
  c.threshold = cfg.tolerance(name, fallback);
  if (rel == "<=") c.passed = value <= c.threshold;
  else if (rel == "<") c.passed = value < c.threshold;
  else if (rel == ">=") c.passed = value >= c.threshold;
  else if (rel == "==") c.passed = value == c.threshold;
  else c.passed = value != 0.0;
  return c;
}

Check truth(const std::string& name, bool ok) {
  Check c;
  c.name = name;
  c.value = ok ? 1.0 : 0.0;
  c.threshold = 1.0;
  c.relation = "true";
  c.passed = ok;
  return c;
}

std::string iso_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string csv_number(double v) {
  std::ostringstream s;
  s.precision(17);
  s << v;
  return s.str();
}

// ---------------------------------------------------------------------------
// Shared constructions

MeshPtr unit_square(double h) {
  return share(triangulate(BoundaryCurve::box({0.0, 0.0}, {1.0, 1.0}), std::span<const BoundaryCurve>{}, h));
}

// Random P2 stream function vanishing on the mesh boundary.
ScalarField random_stream(const MeshPtr& m, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> U(-1.0, 1.0);
  ScalarField psi = ScalarField::zeros({m, 2});
  const TriangleMesh& mesh = *m;
  const std::size_t nv = mesh.num_vertices();
  for (std::size_t i = 0; i < nv; ++i)
    if (!mesh.boundary_vertex()[i]) psi.values()[i] = U(rng);
  for (std::size_t e = 0; e < mesh.num_edges(); ++e)
    if (mesh.edge_triangles()[e][1] >= 0) psi.values()[nv + e] = U(rng);
  return psi;
}

// Smooth step from 1 (r <= r0) to 0 (r >= r1).
double plateau(double r, double r0, double r1) {
  if (r <= r0) return 1.0;
  if (r >= r1) return 0.0;
  auto f = [](double x) { return x <= 0.0 ? 0.0 : std::exp(-1.0 / x); };
  const double s = (r - r0) / (r1 - r0);
  return f(1.0 - s) / (f(1.0 - s) + f(s));
}

AdmissibleFamily square_family() {
  AdmissibleFamily fam;
  fam.B = Region::disk({0.5, 0.5}, 0.45);
  fam.D = Region::box({0.0, 0.0}, {1.0, 1.0});
  return fam;
}

// Largest nodal |u_j| at DG nodes not strictly inside the region of the piece.
double outside_support(const DecompositionPiece& p) {
  const TriangleMesh& m = p.u.mesh();
  double worst = 0.0;
  for (std::size_t t = 0; t < m.num_triangles(); ++t)
    for (int k = 0; k < 3; ++k)
      if (p.region.depth(m.vertices()[m.triangles()[t][k]]) <= 0.0)
        worst = std::max(worst, norm(p.u.value(t, local_nodes()[k])));
  return worst;
}

std::vector<Region> strip_regions(const ClassCDomain& dom) {
  std::vector<Region> out;
  for (const BoundaryStrip& s : boundary_strips(dom, 0.5 * dom.params().a)) out.push_back(s.region(1.0));
  return out;
}

LocalizeOptions strip_options(const ClassCDomain& dom) {
  const double d = 0.5 * dom.params().a;
  LocalizeOptions o;
  o.band = d;
  o.partition.offset = 0.25 * d;
  o.partition.transition = 0.25 * d;
  return o;
}

double max_increase(const std::vector<Candidate>& seq) {
  double worst = 0.0;
  for (std::size_t i = 1; i < seq.size(); ++i) worst = std::max(worst, seq[i].cost - seq[i - 1].cost);
  return worst;
}

// ---------------------------------------------------------------------------
// Presets

void run_decomposition(const ExperimentConfig& cfg, ReportBundle& out) {
  const double h = cfg.mesh_size();
  const int fields = integer(cfg.params, "fields", 20, "");
  const int levels = integer(cfg.params, "levels", 3, "");
  if (fields < 1) throw ConfigError("fields: must be at least 1");
  if (levels < 2) throw ConfigError("levels: must be at least 2");
  const std::vector<Region> halves{Region::box({-1.0, -1.0}, {0.6, 2.0}), Region::box({0.4, -1.0}, {2.0, 2.0})};
  const Region inner = Region::box({0.05, 0.05}, {0.95, 0.95});
  const std::vector<Region> quads{Region::box({-0.2, -0.2}, {0.6, 0.6}), Region::box({0.4, -0.2}, {1.2, 0.6}),
                                  Region::box({-0.2, 0.4}, {0.6, 1.2}), Region::box({0.4, 0.4}, {1.2, 1.2})};

  const MeshPtr m = unit_square(h);
  std::mt19937_64 rng(cfg.seed);
  double id2 = 0.0, id4 = 0.0, leak = 0.0, div = 0.0;
  std::ostringstream table;
  table << "field,covering,identity_error,support_leak,divergence_residual,constant_estimate\n";
  for (int i = 0; i < fields; ++i) {
    const VectorField u = curl_of_stream(random_stream(m, rng));
    const DecompositionResult r2 = decompose(u, halves, inner);
    const DecompositionResult r4 = decompose_covering(u, quads, 2.0);
    for (const auto* r : {&r2, &r4}) {
      double lk = 0.0, dv = 0.0;
      for (const DecompositionPiece& p : r->pieces) {
        lk = std::max(lk, outside_support(p) / u.max_abs());
        dv = std::max(dv, p.divergence_residual);
      }
      leak = std::max(leak, lk);
      div = std::max(div, dv);
      table << i << ',' << r->pieces.size() << ',' << csv_number(r->identity_error) << ',' << csv_number(lk) << ','
            << csv_number(dv) << ',' << csv_number(r->constant_estimate) << '\n';
    }
    id2 = std::max(id2, r2.identity_error);
    id4 = std::max(id4, r4.identity_error);
  }
  out.tables["random_fields.csv"] = table.str();
  out.measured["identity_error_2"] = id2;
  out.measured["identity_error_4"] = id4;
  out.measured["support_leak"] = leak;
  out.measured["divergence_residual"] = div;

  Criterion c1{1, "partition exactness", {}};
  c1.checks.push_back(make_check(cfg, "identity_error_2", id2, "<=", 1e-12));
  c1.checks.push_back(make_check(cfg, "identity_error_4", id4, "<=", 1e-12));
  c1.checks.push_back(make_check(cfg, "support_leak", leak, "==", 0.0));
  c1.checks.push_back(make_check(cfg, "divergence_residual", div, "<=", 1e-10));
  out.criteria.push_back(c1);

  // Fixed smooth field, fixed coverings, three mesh sizes.
  std::vector<double> c2s, c4s;
  std::ostringstream st;
  st << "h,constant_2,constant_4\n";
  for (int level = 0; level < levels; ++level) {
    const double hh = h / std::pow(2.0, level);
    const MeshPtr mm = unit_square(hh);
    const VectorField u = curl_of_stream(ScalarField::interpolate({mm, 2}, [](Vec2 p) {
      const double b = p.x * (1 - p.x) * p.y * (1 - p.y);
      return 16.0 * b * b * (1.0 + std::sin(3.0 * p.x + 2.0 * p.y));
    }));
    c2s.push_back(decompose(u, halves, inner).constant_estimate);
    c4s.push_back(decompose_covering(u, quads, 2.0).constant_estimate);
    st << csv_number(hh) << ',' << csv_number(c2s.back()) << ',' << csv_number(c4s.back()) << '\n';
  }
  out.tables["constant_stability.csv"] = st.str();
  auto variation = [](const std::vector<double>& v) {
    const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
    return (*hi - *lo) / *lo;
  };
  out.measured["constant_estimate_2"] = c2s;
  out.measured["constant_estimate_4"] = c4s;
  out.measured["constant_estimate"] = c2s.front();
  Criterion c2{2, "uniform-constant stability", {}};
  c2.checks.push_back(make_check(cfg, "constant_variation_2", variation(c2s), "<", 0.2));
  c2.checks.push_back(make_check(cfg, "constant_variation_4", variation(c4s), "<", 0.2));
  out.criteria.push_back(c2);
}

void run_localization(const ExperimentConfig& cfg, ReportBundle& out) {
  const double h = cfg.mesh_size();
  const double level = number(cfg.params, "plateau", 2.0, "");
  const AdmissibleFamily fam = square_family();
  const BoundaryCurve square = BoundaryCurve::box({0.0, 0.0}, {1.0, 1.0});
  Criterion c{3, "localization", {}};

  const ClassCDomain disk = make_star_domain({0.5, 0.5}, {0.15}, fam);
  const std::vector<ClassCDomain> one{disk};
  const MeshPtr m1 = share(triangulate(square, std::span(one), h));
  const VectorField u1 = curl_of_stream(ScalarField::interpolate(
      {m1, 2}, [level](Vec2 p) { return level * plateau(distance(p, {0.5, 0.5}), 0.17, 0.4); }));
  const DecompositionResult r1 = localized_decompose(u1, one, strip_regions(disk), strip_options(disk));
  const double e1 = std::abs(r1.gauge_constants.at(0) - level);
  const double o1 = r1.obstacle_max / h1_norm(u1);

  const std::vector<ClassCDomain> two{make_star_domain({0.28, 0.5}, {0.12}, fam), make_star_domain({0.72, 0.5}, {0.12}, fam)};
  const MeshPtr m2 = share(triangulate(square, std::span(two), 0.8 * h));
  const VectorField u2 = curl_of_stream(ScalarField::interpolate({m2, 2}, [level](Vec2 p) {
    return level * (plateau(distance(p, {0.28, 0.5}), 0.13, 0.2) - plateau(distance(p, {0.72, 0.5}), 0.13, 0.2));
  }));
  std::vector<Region> regions2;
  for (const ClassCDomain& d : two)
    for (const Region& r : strip_regions(d)) regions2.push_back(r);
  const DecompositionResult r2 = localized_decompose(u2, two, regions2, strip_options(two[0]));
  const double e2 = std::max(std::abs(r2.gauge_constants.at(0) - level), std::abs(r2.gauge_constants.at(1) + level));
  const double o2 = r2.obstacle_max / h1_norm(u2);

  LocalizeOptions arc = strip_options(disk);
  arc.gamma = Region::box({0.6, 0.0}, {1.0, 1.0});
  std::vector<Region> right;
  for (const BoundaryStrip& s : boundary_strips(disk, 0.5 * disk.params().a))
    if (s.chart.point(0.0).x > 0.5) right.push_back(s.region(1.0));
  const DecompositionResult r3 = localized_decompose(u1, one, right, arc);
  const double e3 = std::abs(r3.gauge_constants.at(0) - level);
  const double o3 = r3.obstacle_max / h1_norm(u1);

  out.measured["one_disk"] = {{"constant", r1.gauge_constants[0]}, {"obstacle_ratio", o1}, {"pieces", r1.pieces.size()},
                              {"identity_error", r1.identity_error}, {"constant_estimate", r1.constant_estimate}};
  out.measured["two_disks"] = {{"constants", r2.gauge_constants}, {"obstacle_ratio", o2}, {"pieces", r2.pieces.size()},
                               {"identity_error", r2.identity_error}};
  out.measured["arc"] = {{"constant", r3.gauge_constants[0]}, {"obstacle_ratio", o3}, {"pieces", r3.pieces.size()},
                         {"identity_error", r3.identity_error}};
  c.checks.push_back(make_check(cfg, "one_disk_constant_error", e1, "<=", 1e-10));
  c.checks.push_back(make_check(cfg, "one_disk_obstacle_ratio", o1, "<=", 1e-8));
  c.checks.push_back(make_check(cfg, "two_disks_constant_error", e2, "<=", 1e-10));
  c.checks.push_back(make_check(cfg, "two_disks_obstacle_ratio", o2, "<=", 1e-8));
  c.checks.push_back(make_check(cfg, "arc_constant_error", e3, "<=", 1e-10));
  c.checks.push_back(make_check(cfg, "arc_obstacle_ratio", o3, "<=", 1e-8));
  out.criteria.push_back(c);
}

void run_periods(const ExperimentConfig& cfg, ReportBundle& out) {
  const double h = cfg.mesh_size();
  const int paths = integer(cfg.params, "paths", 10, "");
  if (paths < 1) throw ConfigError("paths: must be at least 1");
  MeshOptions mo;
  mo.mesh_holes = false;
  const std::vector<BoundaryCurve> holes{BoundaryCurve::circle({0.0, 0.0}, 0.2)};
  const MeshPtr m = share(triangulate(BoundaryCurve::circle({0.0, 0.0}, 0.8), holes, h, mo));
  std::vector<Vec2> loop;
  for (int i = 0; i < 256; ++i) loop.push_back({0.5 * std::cos(2 * kPi * i / 256), 0.5 * std::sin(2 * kPi * i / 256)});
  const OneForm w = winding_form({0.0, 0.0});

  struct TestForm {
    std::string name;
    double period;
    std::function<double(Vec2)> potential;
    OneForm tau;
  };
  const std::vector<TestForm> forms{
      {"dtheta+d(x^2)", 2.0 * kPi, [](Vec2 p) { return p.x * p.x; },
       [w](Vec2 p) { return w(p) * (2.0 * kPi) + Vec2{2.0 * p.x, 0.0}; }},
      {"3dtheta+d(sin(2x)cos(y))", 6.0 * kPi, [](Vec2 p) { return std::sin(2 * p.x) * std::cos(p.y); },
       [w](Vec2 p) {
         return w(p) * (6.0 * kPi) + Vec2{2.0 * std::cos(2 * p.x) * std::cos(p.y), -std::sin(2 * p.x) * std::sin(p.y)};
       }}};

  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  auto at = [](double r, double a) { return Vec2{r * std::cos(a), r * std::sin(a)}; };
  double period_err = 0.0, winding_err = 0.0, post = 0.0, indep = 0.0, recon = 0.0;
  std::ostringstream table;
  table << "form,pair,integral_1,integral_2,length,relative\n";
  json per_form = json::array();
  for (const TestForm& f : forms) {
    PeriodOptions o;
    o.centers = {{0.0, 0.0}};
    const PeriodPotential pp = periods_and_potential(f.tau, m, {loop}, o);
    const double pe = std::abs(pp.periods.at(0) - f.period);
    period_err = std::max(period_err, pe);
    if (&f == &forms.front()) winding_err = pe;
    const double after = std::max(pp.max_loop_residual, std::abs(path_integral(pp.reduced, loop, true)));
    post = std::max(post, after);
    const auto nodes = pp.potential.space().nodes();
    double lo = kInf, hi = -kInf;
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      const double d = pp.potential.values()[i] - f.potential(nodes[i]);
      lo = std::min(lo, d);
      hi = std::max(hi, d);
    }
    recon = std::max(recon, hi - lo);
    for (int k = 0; k < paths; ++k) {
      const double a0 = 2.0 * kPi * U(rng);
      auto radius = [&] { return 0.3 + 0.4 * U(rng); };
      const Vec2 p = at(radius(), a0);
      const Vec2 q = at(radius(), a0 + 1.0);
      const std::vector<Vec2> one{p, at(radius(), a0 + 0.1 + 0.8 * U(rng)), q};
      const std::vector<Vec2> two{p, at(radius(), a0 + 0.1 + 0.8 * U(rng)), q};
      double len = 0.0;
      for (std::size_t i = 0; i + 1 < 3; ++i) len += distance(one[i], one[i + 1]) + distance(two[i], two[i + 1]);
      const double i1 = path_integral(pp.reduced, one), i2 = path_integral(pp.reduced, two);
      const double rel = std::abs(i1 - i2) / len;
      indep = std::max(indep, rel);
      table << '"' << f.name << "\"," << k << ',' << csv_number(i1) << ',' << csv_number(i2) << ',' << csv_number(len)
            << ',' << csv_number(rel) << '\n';
    }
    per_form.push_back({{"form", f.name}, {"period", pp.periods[0]}, {"expected", f.period}, {"post_subtraction", after},
                        {"reconstruction_spread", hi - lo}});
  }
  out.tables["path_pairs.csv"] = table.str();
  out.measured["forms"] = per_form;
  out.measured["winding_period_error"] = winding_err;
  Criterion c{4, "periods and potential", {}};
  c.checks.push_back(make_check(cfg, "winding_period_error", winding_err, "<=", 1e-8));
  c.checks.push_back(make_check(cfg, "period_error", period_err, "<=", 1e-8));
  c.checks.push_back(make_check(cfg, "post_subtraction_period", post, "<=", 1e-8));
  c.checks.push_back(make_check(cfg, "path_independence", indep, "<=", 1e-8));
  c.checks.push_back(make_check(cfg, "potential_reconstruction", recon, "<=", 1e-6));
  out.criteria.push_back(c);
}

void run_witness(const ExperimentConfig& cfg, ReportBundle& out) {
  const double h = cfg.mesh_size();
  const ClassCDomain dom = make_star_domain({0.5, 0.5}, {0.15}, square_family());
  const std::vector<ClassCDomain> obstacle{dom};
  std::vector<WitnessReport> reports;
  std::ostringstream table;
  table << "h,piece,t,h1_difference\n";
  json levels = json::array();
  for (const double hh : {h, h / 2.0}) {
    const MeshPtr m = share(triangulate(BoundaryCurve::box({0.0, 0.0}, {1.0, 1.0}), std::span(obstacle), hh));
    const VectorField u = curl_of_stream(ScalarField::interpolate(
        {m, 2}, [](Vec2 p) { return 2.0 * plateau(distance(p, {0.5, 0.5}), 0.17, 0.4); }));
    reports.push_back(witness_space_identity(u, &dom, WitnessKind::Exterior));
    for (const ShiftTable& t : reports.back().tables)
      for (std::size_t i = 0; i < t.t.size(); ++i)
        table << csv_number(hh) << ',' << t.piece << ',' << csv_number(t.t[i]) << ',' << csv_number(t.h1_difference[i])
              << '\n';
    const WitnessReport& w = reports.back();
    levels.push_back({{"h", hh}, {"shift", w.shift}, {"distance", w.distance}, {"relative_distance", w.relative_distance},
                      {"divergence_residual", w.divergence_residual}, {"support_gap", w.support_gap}});
  }
  out.tables["shift_tables.csv"] = table.str();
  out.measured["levels"] = levels;
  int not_decreasing = 0;
  double div = 0.0;
  for (const WitnessReport& w : reports) {
    for (const ShiftTable& t : w.tables) {
      bool strict = true;
      for (std::size_t i = 1; i < t.h1_difference.size(); ++i) strict = strict && t.h1_difference[i] < t.h1_difference[i - 1];
      not_decreasing += strict ? 0 : 1;
    }
    div = std::max(div, w.divergence_residual);
  }
  Criterion c{5, "space-identity witness", {}};
  c.checks.push_back(make_check(cfg, "tables_not_decreasing", not_decreasing, "==", 0.0));
  c.checks.push_back(make_check(cfg, "relative_distance", reports[0].relative_distance, "<=", 0.05));
  c.checks.push_back(make_check(cfg, "refinement_ratio", reports[1].distance / reports[0].distance, "<", 1.0));
  c.checks.push_back(make_check(cfg, "approximant_divergence", div, "<=", 1e-10));
  out.criteria.push_back(c);
}

// u = curl(X(x) X(y)) with X = x^2 (1-x)^2 and p = sin(pi x) cos(pi y) on the unit square.
struct Manufactured {
  double gamma = 1.0;
  double sign = -1.0;

  static double X(double x) { return x * x * (1 - x) * (1 - x); }
  static double X1(double x) { return 2 * x * (1 - x) * (1 - 2 * x); }
  static double X2(double x) { return 2 - 12 * x + 12 * x * x; }
  static double X3(double x) { return -12 + 24 * x; }

  Vec2 u(Vec2 p) const { return {X(p.x) * X1(p.y), -X1(p.x) * X(p.y)}; }
  Vec2 grad_u1(Vec2 p) const { return {X1(p.x) * X1(p.y), X(p.x) * X2(p.y)}; }
  Vec2 grad_u2(Vec2 p) const { return {-X2(p.x) * X(p.y), -X1(p.x) * X1(p.y)}; }
  double p(Vec2 q) const { return std::sin(kPi * q.x) * std::cos(kPi * q.y); }
  Vec2 f(Vec2 q) const {
    const Vec2 v = u(q), g1 = grad_u1(q), g2 = grad_u2(q);
    const Vec2 lap{X2(q.x) * X1(q.y) + X(q.x) * X3(q.y), -(X3(q.x) * X(q.y) + X1(q.x) * X2(q.y))};
    const Vec2 gp{kPi * std::cos(kPi * q.x) * std::cos(kPi * q.y), -kPi * std::sin(kPi * q.x) * std::sin(kPi * q.y)};
    return lap * (-gamma) + Vec2{dot(v, g1), dot(v, g2)} * sign + gp;
  }
};

std::pair<double, double> manufactured_errors(const WeakSolution& sol, const Manufactured& mf) {
  const TriangleMesh& m = sol.velocity.mesh();
  double eu = 0.0, ep = 0.0;
  for (std::size_t t = 0; t < m.num_triangles(); ++t) {
    const ElementGeometry g = element_geometry(m, t);
    for (const QuadPoint& q : triangle_quadrature(6)) {
      const Vec2 x = g.map(q.bary);
      const double wq = q.weight * g.area;
      eu += wq * (norm2(sol.velocity.x.gradient(t, q.bary, g) - mf.grad_u1(x)) +
                  norm2(sol.velocity.y.gradient(t, q.bary, g) - mf.grad_u2(x)) +
                  norm2(sol.velocity.value(t, q.bary) - mf.u(x)));
      const double dp = sol.pressure.value(t, q.bary) - mf.p(x);
      ep += wq * dp * dp;
    }
  }
  return {std::sqrt(eu), std::sqrt(ep)};
}

void run_nse(const ExperimentConfig& cfg, ReportBundle& out) {
  const double h = cfg.mesh_size();
  SolverConfig sc = solver_from_json(object(cfg.params, "solver", ""));
  sc.gamma = number(cfg.params, "gamma", sc.gamma, "");
  sc.convection_sign = integer(cfg.params, "convection_sign", sc.convection_sign, "");
  sc.check();
  Manufactured mf;
  mf.gamma = sc.gamma;
  mf.sign = sc.convection_sign;
  const BodyForce f = BodyForce::from_function([mf](Vec2 p) { return mf.f(p); });

  double energy = 0.0;
  int converged = 0, solves = 0;
  std::vector<double> hs, eu, ep;
  std::ostringstream table;
  table << "h,velocity_h1_error,pressure_l2_error,picard,newton,energy_residual\n";
  for (const double hh : {h, h / 2.0, h / 4.0}) {
    const WeakSolution sol = solve_nse(unit_square(hh), f, sc);
    ++solves;
    const double er = energy_identity_residual(sol, f, sc);
    if (sol.converged) {
      ++converged;
      energy = std::max(energy, er);
    }
    const auto [a, b] = manufactured_errors(sol, mf);
    hs.push_back(sol.velocity.mesh().h());
    eu.push_back(a);
    ep.push_back(b);
    table << csv_number(hs.back()) << ',' << csv_number(a) << ',' << csv_number(b) << ',' << sol.picard_iterations << ','
          << sol.newton_iterations << ',' << csv_number(er) << '\n';
  }
  double rate_u = kInf, rate_p = kInf;
  std::vector<double> ru, rp;
  for (std::size_t k = 1; k < hs.size(); ++k) {
    const double lr = std::log(hs[k - 1] / hs[k]);
    ru.push_back(std::log(eu[k - 1] / eu[k]) / lr);
    rp.push_back(std::log(ep[k - 1] / ep[k]) / lr);
    rate_u = std::min(rate_u, ru.back());
    rate_p = std::min(rate_p, rp.back());
  }
  out.tables["manufactured.csv"] = table.str();

  const WeakSolution zero = solve_nse(unit_square(h), BodyForce::zero(), sc);
  ++solves;
  if (zero.converged) {
    ++converged;
    energy = std::max(energy, energy_identity_residual(zero, BodyForce::zero(), sc));
  }
  const double zero_max = std::max(zero.velocity.max_abs(), zero.pressure.max_abs());
  const double c1 = uniqueness_constant(sc.gamma, 1.0), c2 = uniqueness_constant(2.0 * sc.gamma, 1.0);

  if (cfg.params.contains("mesh")) {
    const std::string path = text(cfg.params, "mesh", "", "");
    const MeshPtr m = share(load_mesh(path));
    const BodyForce g = force_from_json(object(cfg.params, "force", ""), "-(y-0.5)", "x-0.5");
    const WeakSolution sol = solve_nse(m, g, sc);
    ++solves;
    const double er = energy_identity_residual(sol, g, sc);
    if (sol.converged) {
      ++converged;
      energy = std::max(energy, er);
    }
    const double margin = uniqueness_margin(g, sc, *m);
    std::ostringstream vel, pre, hist;
    write_field_csv(vel, {&sol.velocity.x, &sol.velocity.y}, {"u1", "u2"});
    write_field_csv(pre, {&sol.pressure}, {"p"});
    hist << "iteration,residual\n";
    for (std::size_t i = 0; i < sol.residual_history.size(); ++i) hist << i << ',' << csv_number(sol.residual_history[i]) << '\n';
    out.tables["solution/velocity.csv"] = vel.str();
    out.tables["solution/pressure.csv"] = pre.str();
    out.tables["solution/residual_history.csv"] = hist.str();
    const json summary{{"h", m->h()}, {"iters", sol.picard_iterations + sol.newton_iterations}, {"energy_residual", er},
                       {"margin", margin}, {"converged", sol.converged}};
    out.artifacts["solution/summary.json"] = summary.dump(2) + "\n";
    out.measured["mesh_solve"] = summary;
  }

  out.measured["h"] = hs;
  out.measured["velocity_h1_error"] = eu;
  out.measured["pressure_l2_error"] = ep;
  out.measured["velocity_rates"] = ru;
  out.measured["pressure_rates"] = rp;
  out.measured["converged_solves"] = converged;
  out.measured["solves"] = solves;
  out.measured["uniqueness_constant"] = {c1, c2};
  Criterion c{6, "NSE verification", {}};
  c.checks.push_back(make_check(cfg, "velocity_h1_rate", rate_u, ">=", 1.8));
  c.checks.push_back(make_check(cfg, "pressure_l2_rate", rate_p, ">=", 1.8));
  c.checks.push_back(make_check(cfg, "energy_identity_residual", energy, "<=", 1e-10));
  c.checks.push_back(make_check(cfg, "unconverged_solves", solves - converged, "==", 0.0));
  c.checks.push_back(make_check(cfg, "zero_force_max", zero_max, "==", 0.0));
  c.checks.push_back(make_check(cfg, "uniqueness_scaling", std::abs(c2 - 4.0 * c1), "==", 0.0));
  out.criteria.push_back(c);
}

std::vector<Region> probes_from_json(const json& params, std::vector<Region> fallback) {
  if (!params.contains("probes")) return fallback;
  if (!params.at("probes").is_array()) throw ConfigError("probes: expected an array of regions");
  std::vector<Region> out;
  for (std::size_t i = 0; i < params.at("probes").size(); ++i)
    out.push_back(region_from_json(params.at("probes")[i], "probes[" + std::to_string(i) + "]"));
  return out;
}

json star_to_json(const Candidate& c, const OptimizerConfig& oc, const FamilySpec& fs) {
  return {{"center", {oc.center.x, oc.center.y}}, {"radial_coeffs", c.params}, {"family", family_to_json(fs)}};
}

std::string sequence_csv(const OptimizationRun& run) {
  std::ostringstream s;
  s << "index,evaluation,params,cost,rho_gap\n";
  for (std::size_t i = 0; i < run.sequence.size(); ++i) {
    const Candidate& c = run.sequence[i];
    s << i << ',' << c.evaluation << ",\"";
    for (std::size_t k = 0; k < c.params.size(); ++k) s << (k ? " " : "") << csv_number(c.params[k]);
    s << "\"," << csv_number(c.cost) << ',' << (i + 1 < run.sequence.size() ? csv_number(run.hausdorff_gaps[i]) : "") << '\n';
  }
  return s.str();
}

std::string evaluations_csv(const OptimizationRun& run) {
  std::ostringstream s;
  s << "index,params,cost,status\n";
  for (std::size_t i = 0; i < run.evaluations.size(); ++i) {
    const EvaluationRecord& e = run.evaluations[i];
    s << i << ",\"";
    for (std::size_t k = 0; k < e.params.size(); ++k) s << (k ? " " : "") << csv_number(e.params[k]);
    s << "\"," << csv_number(e.cost) << ',' << e.status << '\n';
  }
  return s.str();
}

json report_to_json(const DiagnosticsReport& r) {
  return {{"tail_start", r.tail_start},
          {"tail_gaps", r.tail_gaps},
          {"weak_limit_check", r.weak_limit_check},
          {"vanishing_check", r.vanishing_check},
          {"vanishing_nodal", r.vanishing_nodal},
          {"norm_convergence", r.norm_convergence},
          {"norm_gap", r.norm_gap},
          {"fatou_gap", r.fatou_gap},
          {"exhaustion_levels", r.exhaustion_levels},
          {"exhaustion_values", r.exhaustion_values},
          {"exhaustion_indices", r.exhaustion_indices},
          {"gamma_indices", r.gamma_indices},
          {"probe_kinds", r.probe_kinds},
          {"u_l2", r.u_l2},
          {"u_h1", r.u_h1}};
}

// Checks on a finished run shared by both optimization presets.
void diagnostic_checks(const ExperimentConfig& cfg, const OptimizationRun& run, const DiagnosticsReport& rep,
                       int max_evals, Criterion& c) {
  const int unwitnessed = static_cast<int>(std::count(rep.gamma_indices.begin(), rep.gamma_indices.end(), -1));
  c.checks.push_back(make_check(cfg, "solves", run.solves, "<=", max_evals));
  c.checks.push_back(make_check(cfg, "accepted_cost_increase", max_increase(run.sequence), "<=", 0.0));
  c.checks.push_back(make_check(cfg, "vanishing_ratio", rep.vanishing_check / rep.u_l2, "<=", 1e-6));
  c.checks.push_back(make_check(cfg, "norm_gap", rep.norm_gap, "<=", 0.01));
  c.checks.push_back(make_check(cfg, "fatou_gap", rep.fatou_gap, "<=", 1e-8));
  c.checks.push_back(make_check(cfg, "unwitnessed_probes", unwitnessed, "==", 0.0));
  c.checks.push_back(truth("diagnostics_finite", rep.finite()));
}

void add_run_outputs(const std::string& prefix, const OptimizationRun& run, const DiagnosticsReport& rep,
                     const OptimizerConfig& oc, const FamilySpec& fs, ReportBundle& out) {
  out.tables[prefix + "sequence.csv"] = sequence_csv(run);
  out.tables[prefix + "evaluations.csv"] = evaluations_csv(run);
  out.artifacts[prefix + "diagnostics.json"] = report_to_json(rep).dump(2) + "\n";
  out.artifacts[prefix + "best_domain.json"] = star_to_json(run.best_candidate(), oc, fs).dump(2) + "\n";
  out.artifacts[prefix + "best_domain.pgm"] = run.best_candidate().domain->raster().to_pgm();
}

void run_optimize(const ExperimentConfig& cfg, ReportBundle& out) {
  const double h = cfg.mesh_size();
  const FamilySpec fs = family_from_json(object(cfg.params, "family", ""));
  const CostFunctional J = functional_from_json(object(cfg.params, "functional", ""), CostRegion::DMinus);
  const BodyForce f = force_from_json(object(cfg.params, "force", ""), "-20*(y-0.5)", "20*(x-0.5)");
  const SolverConfig sc = solver_from_json(object(cfg.params, "solver", ""));
  const json& sw = object(cfg.params, "sweep", "");
  only_keys(sw, {"lower", "upper", "points", "initial", "step"}, "sweep.");
  const double lo = number(sw, "lower", 0.1, "sweep."), hi = number(sw, "upper", 0.4, "sweep.");
  const int points = integer(sw, "points", 31, "sweep.");
  if (!(lo > 0.0 && hi > lo) || points < 2) throw ConfigError("sweep: expected 0 < lower < upper and points >= 2");
  const double step = (hi - lo) / (points - 1);

  OptimizerConfig base;
  base.h = h;
  OptimizerConfig oc = base;
  oc.initial = {0.2, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0};
  oc.step = {0.05, 0.03, 0.03, 0.03, 0.03, 0.03, 0.03, 0.03};
  oc.max_evals = 200;
  oc = optimizer_from_json(object(cfg.params, "optimizer", ""), oc);
  // Radius sweep against the optimizer on the one-parameter disk family.
  std::ostringstream st;
  st << "radius,cost,status\n";
  double sweep_r = lo, sweep_cost = kInf;
  for (int i = 0; i < points; ++i) {
    const double r = lo + step * i;
    double cost = kInf;
    std::string status = "infeasible";
    try {
      const CostEvaluation ev = evaluate_cost(make_star_domain(base.center, {r}, fs.family), J, f, sc, h);
      cost = ev.cost;
      status = ev.rejected ? "rejected" : ev.diverged ? "diverged" : "ok";
    } catch (const InfeasibleError&) {
    }
    if (cost < sweep_cost) {
      sweep_cost = cost;
      sweep_r = r;
    }
    st << csv_number(r) << ',' << csv_number(cost) << ',' << status << '\n';
  }
  out.tables["sweep.csv"] = st.str();
  OptimizerConfig one = base;
  one.initial = {number(sw, "initial", 0.5 * (lo + hi), "sweep.")};
  one.step = {number(sw, "step", 0.05, "sweep.")};
  one.lower = {lo};
  one.upper = {hi};
  one.max_evals = 60;
  one.x_tol = 0.1 * step;
  const OptimizationRun r1 = minimize(fs.family, J, f, sc, one);
  const double nm_r = r1.best_candidate().params[0];
  out.tables["sweep_run_sequence.csv"] = sequence_csv(r1);

  const OptimizationRun run = minimize(fs.family, J, f, sc, oc);
  const std::vector<Region> probes = probes_from_json(
      cfg.params, {Region::disk({0.5, 0.5}, 0.05), Region::box({0.02, 0.02}, {0.08, 0.08})});
  const DiagnosticsReport rep = run_diagnostics(run, probes);
  add_run_outputs("", run, rep, oc, fs, out);

  out.measured["sweep"] = {{"radius", sweep_r}, {"cost", sweep_cost}, {"step", step}};
  out.measured["sweep_run"] = {{"radius", nm_r}, {"cost", r1.best_candidate().cost}, {"solves", r1.solves}};
  out.measured["run"] = {{"parameters", oc.initial.size()}, {"solves", run.solves}, {"accepted", run.sequence.size()},
                         {"best_cost", run.best_candidate().cost}, {"best_params", run.best_candidate().params},
                         {"rejected", std::count_if(run.evaluations.begin(), run.evaluations.end(),
                                                    [](const EvaluationRecord& e) { return e.status != "ok"; })}};
  out.measured["diagnostics"] = report_to_json(rep);

  Criterion c{7, "shape optimization", {}};
  c.checks.push_back(make_check(cfg, "sweep_agreement", std::abs(nm_r - sweep_r), "<=", step));
  c.checks.push_back(make_check(cfg, "sweep_run_cost_increase", max_increase(r1.sequence), "<=", 0.0));
  diagnostic_checks(cfg, run, rep, 200, c);
  out.criteria.push_back(c);
}

void run_optimize_interior(const ExperimentConfig& cfg, ReportBundle& out) {
  const double h = cfg.mesh_size();
  const FamilySpec fs = family_from_json(object(cfg.params, "family", ""));
  const CostFunctional J = functional_from_json(object(cfg.params, "functional", ""), CostRegion::Interior);
  if (J.region != CostRegion::Interior) throw ConfigError("functional.region: the interior preset integrates over the obstacle");
  const BodyForce f = force_from_json(object(cfg.params, "force", ""), "-20*(y-0.5)", "20*(x-0.5)");
  const SolverConfig sc = solver_from_json(object(cfg.params, "solver", ""));
  OptimizerConfig oc;
  oc.h = h;
  oc.initial = {0.25, 0.0, 0.0};
  oc.step = {0.05, 0.03, 0.03};
  oc.lower = {0.1, -0.1, -0.1};
  oc.max_evals = 60;
  oc = optimizer_from_json(object(cfg.params, "optimizer", ""), oc);
  const OptimizationRun run = minimize(fs.family, J, f, sc, oc);
  const std::vector<Region> probes = probes_from_json(
      cfg.params, {Region::disk({0.5, 0.5}, 0.05), Region::box({0.02, 0.02}, {0.08, 0.08})});
  const DiagnosticsReport rep = run_diagnostics(run, probes);
  add_run_outputs("", run, rep, oc, fs, out);
  out.measured["run"] = {{"parameters", oc.initial.size()}, {"solves", run.solves}, {"accepted", run.sequence.size()},
                         {"best_cost", run.best_candidate().cost}, {"best_params", run.best_candidate().params}};
  out.measured["diagnostics"] = report_to_json(rep);
  Criterion c{0, "interior problem", {}};
  diagnostic_checks(cfg, run, rep, oc.max_evals, c);
  out.criteria.push_back(c);
}

void run_check_family(const ExperimentConfig& cfg, ReportBundle& out) {
  const double res = cfg.mesh_size();
  const int triples = integer(cfg.params, "triples", 100, "");
  const int samples = integer(cfg.params, "samples", 10, "");
  if (triples < 1 || samples < 1) throw ConfigError("triples, samples: must be at least 1");
  AdmissibleFamily fam;
  fam.B = Region::disk({0.0, 0.0}, 0.9);
  fam.D = Region::box({-1.0, -1.0}, {1.0, 1.0});
  const Region B = Region::disk({0.0, 0.0}, 1.0);

  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  double asym = 0.0, excess = -kInf;
  for (int t = 0; t < triples; ++t) {
    std::vector<std::function<bool(Vec2)>> sets;
    for (int k = 0; k < 3; ++k) {
      const Vec2 c{-0.3 + 0.6 * U(rng), -0.3 + 0.6 * U(rng)};
      const double r = 0.1 + 0.3 * U(rng);
      sets.push_back([c, r](Vec2 p) { return distance(p, c) < r; });
    }
    const double d01 = hausdorff_pompeiu(sets[0], sets[1], B, res);
    const double d10 = hausdorff_pompeiu(sets[1], sets[0], B, res);
    const double d12 = hausdorff_pompeiu(sets[1], sets[2], B, res);
    const double d02 = hausdorff_pompeiu(sets[0], sets[2], B, res);
    asym = std::max(asym, std::abs(d01 - d10));
    excess = std::max(excess, d02 - d01 - d12);
  }
  const double offset = hausdorff_pompeiu(make_star_domain({0.0, 0.0}, {0.3}, fam),
                                          make_star_domain({0.1, 0.0}, {0.3}, fam), B, res);

  int accepted = 0, failed = 0, attempts = 0;
  std::ostringstream table;
  table << "sample,coeffs,status\n";
  while (accepted < samples && attempts < 20 * samples) {
    std::vector<double> coeffs{0.25 + 0.1 * U(rng)};
    for (int k = 0; k < 4; ++k) coeffs.push_back(-0.03 + 0.06 * U(rng));
    ++attempts;
    std::string status;
    try {
      const ClassCDomain d = make_star_domain({0.0, 0.0}, coeffs, fam);
      ++accepted;
      const bool ok = validate_class_c(d, fam).passed();
      failed += ok ? 0 : 1;
      status = ok ? "valid" : "invalid";
    } catch (const InfeasibleError& e) {
      status = "infeasible";
    }
    table << attempts - 1 << ",\"";
    for (std::size_t k = 0; k < coeffs.size(); ++k) table << (k ? " " : "") << csv_number(coeffs[k]);
    table << "\"," << status << '\n';
  }
  out.tables["star_samples.csv"] = table.str();

  // A chart turned by a right angle so its vertical is tangent to the boundary.
  ClassCDomain bad = make_star_domain({0.0, 0.0}, {0.3, 0.0, 0.0, 0.1}, fam);
  LocalChart& ch = bad.mutable_charts()[0];
  ch.rotation = ch.rotation * Mat2::rotation(kPi / 2.0);
  ch.vertical = ch.rotation * Vec2{0.0, 1.0};
  const bool violation_detected = !validate_class_c(bad, fam).passed();

  int listed_failures = 0;
  json listed = json::array();
  if (cfg.params.contains("domains")) {
    const json& ds = cfg.params.at("domains");
    if (!ds.is_array()) throw ConfigError("domains: expected an array of domain objects");
    for (std::size_t i = 0; i < ds.size(); ++i) {
      const std::string w = "domains[" + std::to_string(i) + "].";
      only_keys(ds[i], {"center", "radial_coeffs", "family"}, w);
      const std::vector<double> c = numbers(ds[i], "center", w);
      if (c.size() != 2) throw ConfigError(w + "center: expected [x, y]");
      const FamilySpec f = family_from_json(object(ds[i], "family", w));
      std::string status;
      try {
        const ClassCDomain d = make_star_domain({c[0], c[1]}, numbers(ds[i], "radial_coeffs", w), f.family);
        status = validate_class_c(d, f.family).passed() ? "valid" : "invalid";
      } catch (const InfeasibleError& e) {
        status = std::string("infeasible: ") + e.what();
      }
      listed_failures += status == "valid" ? 0 : 1;
      listed.push_back({{"index", i}, {"status", status}});
    }
  }

  out.measured["resolution"] = res;
  out.measured["asymmetry"] = asym;
  out.measured["triangle_excess"] = excess;
  out.measured["offset_distance"] = offset;
  out.measured["star_samples"] = {{"accepted", accepted}, {"attempts", attempts}, {"invalid", failed}};
  out.measured["domains"] = listed;
  Criterion c{8, "geometry layer", {}};
  c.checks.push_back(make_check(cfg, "asymmetry", asym, "==", 0.0));
  c.checks.push_back(make_check(cfg, "triangle_excess", excess, "<=", 4.0 * res));
  c.checks.push_back(make_check(cfg, "offset_disk_error", std::abs(offset - 0.1), "<=", 2.0 * res));
  c.checks.push_back(make_check(cfg, "star_samples_accepted", accepted, "==", samples));
  c.checks.push_back(make_check(cfg, "star_samples_invalid", failed, "==", 0.0));
  c.checks.push_back(truth("violating_chart_rejected", violation_detected));
  c.checks.push_back(make_check(cfg, "listed_domains_invalid", listed_failures, "==", 0.0));
  out.criteria.push_back(c);
}

json check_to_json(const Check& c) {
  return {{"name", c.name}, {"value", c.value}, {"threshold", c.threshold}, {"relation", c.relation}, {"passed", c.passed}};
}

double json_number(const json& j) { return j.is_number() ? j.get<double>() : std::numeric_limits<double>::quiet_NaN(); }

void flatten(const json& j, const std::string& prefix, std::map<std::string, double>& out) {
  if (j.is_number()) {
    out[prefix] = j.get<double>();
  } else if (j.is_null()) {
    out[prefix] = std::numeric_limits<double>::quiet_NaN();
  } else if (j.is_object()) {
    for (const auto& [k, v] : j.items()) flatten(v, prefix.empty() ? k : prefix + "." + k, out);
  } else if (j.is_array()) {
    for (std::size_t i = 0; i < j.size(); ++i) flatten(j[i], prefix + "[" + std::to_string(i) + "]", out);
  }
}

template <class E>
[[noreturn]] void rethrow_with(const std::string& prefix, const E& e) {
  throw E(prefix + e.what());
}

}  // namespace

std::string preset_name(Preset p) {
  for (const auto& [k, n] : preset_names())
    if (k == p) return n;
  return "unknown";
}

Preset parse_preset(const std::string& name) {
  for (const auto& [k, n] : preset_names())
    if (n == name) return k;
  std::string known;
  for (const auto& [k, n] : preset_names()) known += (known.empty() ? "" : ", ") + n;
  throw ConfigError("preset: unknown preset '" + name + "' (expected one of " + known + ")");
}

double ExperimentConfig::mesh_size() const { return h ? *h : default_h(preset); }

double ExperimentConfig::tolerance(const std::string& check, double fallback) const {
  const auto it = tolerances.find(check);
  return it == tolerances.end() ? fallback : it->second;
}

ExperimentConfig default_config(Preset p) {
  ExperimentConfig c;
  c.preset = p;
  return c;
}

ExperimentConfig parse_config(const std::string& text_in, const std::string& source) {
  json j;
  try {
    j = json::parse(text_in);
  } catch (const json::parse_error& e) {
    throw ConfigError(source + ": syntax error at " + line_column(text_in, e.byte == 0 ? 0 : e.byte - 1));
  }
  const std::string w = source + ": ";
  if (!j.is_object()) throw ConfigError(w + "expected a JSON object");
  if (!j.contains("preset")) throw ConfigError(w + "preset: required field missing");
  ExperimentConfig c;
  c.source = source;
  try {
    c.preset = parse_preset(text(j, "preset", "", ""));
    if (j.contains("seed")) {
      if (!j.at("seed").is_number_unsigned()) throw ConfigError("seed: expected a nonnegative integer");
      c.seed = j.at("seed").get<std::uint64_t>();
    }
    if (j.contains("h")) {
      const double h = number(j, "h", 0.0, "");
      if (!(h > 0.0)) throw ConfigError("h: must be positive");
      c.h = h;
    }
    for (const auto& [k, v] : object(j, "tolerances", "").items()) {
      if (!v.is_number()) throw ConfigError("tolerances." + k + ": expected a number");
      c.tolerances[k] = v.get<double>();
    }
    std::set<std::string> allowed = preset_keys(c.preset);
    allowed.insert({"preset", "seed", "h", "tolerances"});
    only_keys(j, allowed, "");
    for (const auto& [k, v] : j.items())
      if (!std::set<std::string>{"preset", "seed", "h", "tolerances"}.count(k)) c.params[k] = v;
  } catch (const ConfigError& e) {
    throw ConfigError(w + e.what());
  }
  return c;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path + ": cannot open");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path);
}

bool Criterion::passed() const {
  return std::all_of(checks.begin(), checks.end(), [](const Check& c) { return c.passed; });
}

bool ReportBundle::passed() const {
  return std::all_of(criteria.begin(), criteria.end(), [](const Criterion& c) { return c.passed(); });
}

json ReportBundle::summary() const {
  json crit = json::array();
  for (const Criterion& c : criteria) {
    json checks = json::array();
    for (const Check& k : c.checks) checks.push_back(check_to_json(k));
    crit.push_back({{"id", c.id}, {"name", c.name}, {"passed", c.passed()}, {"checks", checks}});
  }
  json t = json::array(), a = json::array();
  for (const auto& [k, v] : tables) t.push_back(k);
  for (const auto& [k, v] : artifacts) a.push_back(k);
  return {{"preset", preset}, {"seed", seed}, {"h", h}, {"passed", passed()}, {"criteria", crit},
          {"measured", measured}, {"tables", t}, {"artifacts", a}};
}

json ReportBundle::summary_with_timestamps() const {
  json s = summary();
  s["timestamps"] = timestamps;
  return s;
}

std::vector<std::string> ReportBundle::write(const std::string& dir) const {
  namespace fs = std::filesystem;
  std::vector<std::string> written;
  auto put = [&](const std::string& name, const std::string& content) {
    const fs::path p = fs::path(dir) / name;
    fs::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary);
    if (!out) throw Error("cannot write " + p.string());
    out << content;
    if (!out) throw Error("cannot write " + p.string());
    written.push_back(p.string());
  };
  put("summary.json", summary_with_timestamps().dump(2) + "\n");
  for (const auto& [k, v] : tables) put(k, v);
  for (const auto& [k, v] : artifacts) put(k, v);
  return written;
}

ReportBundle ReportBundle::load(const std::string& path) {
  namespace fs = std::filesystem;
  const fs::path p = fs::is_directory(path) ? fs::path(path) / "summary.json" : fs::path(path);
  std::ifstream in(p);
  if (!in) throw ConfigError(p.string() + ": cannot open");
  std::stringstream ss;
  ss << in.rdbuf();
  json j;
  try {
    j = json::parse(ss.str());
  } catch (const json::parse_error& e) {
    throw ConfigError(p.string() + ": syntax error at " + line_column(ss.str(), e.byte == 0 ? 0 : e.byte - 1));
  }
  ReportBundle b;
  try {
    b.preset = j.at("preset").get<std::string>();
    b.seed = j.value("seed", std::uint64_t{0});
    b.h = json_number(j.value("h", json()));
    b.measured = j.value("measured", json::object());
    b.timestamps = j.value("timestamps", json::object());
    for (const json& t : j.value("tables", json::array())) b.tables[t.get<std::string>()] = "";
    for (const json& a : j.value("artifacts", json::array())) b.artifacts[a.get<std::string>()] = "";
    for (const json& c : j.at("criteria")) {
      Criterion cr{c.at("id").get<int>(), c.at("name").get<std::string>(), {}};
      for (const json& k : c.at("checks"))
        cr.checks.push_back({k.at("name").get<std::string>(), json_number(k.at("value")), json_number(k.at("threshold")),
                             k.at("relation").get<std::string>(), k.at("passed").get<bool>()});
      b.criteria.push_back(cr);
    }
  } catch (const json::exception& e) {
    throw ConfigError(p.string() + ": not a report summary (" + e.what() + ")");
  }
  return b;
}

ReportBundle run_preset(const ExperimentConfig& cfg) {
  ReportBundle out;
  out.preset = preset_name(cfg.preset);
  out.seed = cfg.seed;
  out.h = cfg.mesh_size();
  out.timestamps["started"] = iso_now();
  const std::string prefix = out.preset + ": ";
  try {
    switch (cfg.preset) {
      case Preset::Decomposition: run_decomposition(cfg, out); break;
      case Preset::Localization: run_localization(cfg, out); break;
      case Preset::Periods: run_periods(cfg, out); break;
      case Preset::IdentityWitness: run_witness(cfg, out); break;
      case Preset::NseVerify: run_nse(cfg, out); break;
      case Preset::Optimize: run_optimize(cfg, out); break;
      case Preset::OptimizeInterior: run_optimize_interior(cfg, out); break;
      case Preset::CheckFamily: run_check_family(cfg, out); break;
    }
  } catch (const ConfigError& e) {
    rethrow_with(prefix, e);
  } catch (const PreconditionError& e) {
    rethrow_with(prefix, e);
  } catch (const InfeasibleError& e) {
    rethrow_with(prefix, e);
  } catch (const ConvergenceError& e) {
    throw ConvergenceError(prefix + e.what(), e.history());
  } catch (const Error& e) {
    rethrow_with(prefix, e);
  }
  out.timestamps["finished"] = iso_now();
  return out;
}

std::vector<DiffEntry> compare_reports(const ReportBundle& a, const ReportBundle& b, double threshold) {
  if (a.preset != b.preset)
    throw PreconditionError("cannot compare reports of different presets ('" + a.preset + "' and '" + b.preset + "')");
  auto fields = [](const ReportBundle& r) {
    std::map<std::string, double> out;
    flatten(r.measured, "measured", out);
    for (const Criterion& c : r.criteria)
      for (const Check& k : c.checks) out["checks." + std::to_string(c.id) + "." + k.name] = k.value;
    return out;
  };
  const auto fa = fields(a), fb = fields(b);
  std::set<std::string> keys;
  for (const auto& [k, v] : fa) keys.insert(k);
  for (const auto& [k, v] : fb) keys.insert(k);
  std::vector<DiffEntry> diff;
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (const std::string& k : keys) {
    const auto ia = fa.find(k), ib = fb.find(k);
    const double va = ia == fa.end() ? nan : ia->second, vb = ib == fb.end() ? nan : ib->second;
    if (va == vb || (std::isnan(va) && std::isnan(vb) && ia != fa.end() && ib != fb.end())) continue;
    DiffEntry d{k, va, vb, 0.0, false};
    const double scale = std::max(std::abs(va), std::abs(vb));
    d.relative = std::isfinite(va) && std::isfinite(vb) ? std::abs(va - vb) / scale : kInf;
    d.exceeds = !(d.relative <= threshold);
    diff.push_back(d);
  }
  return diff;
}

json diff_to_json(const std::vector<DiffEntry>& diff, double threshold) {
  json entries = json::array();
  bool exceeded = false;
  for (const DiffEntry& d : diff) {
    entries.push_back({{"field", d.field}, {"a", d.a}, {"b", d.b}, {"relative", d.relative}, {"exceeds", d.exceeds}});
    exceeded = exceeded || d.exceeds;
  }
  return {{"threshold", threshold}, {"exceeded", exceeded}, {"entries", entries}};
}

}  // namespace divshape
