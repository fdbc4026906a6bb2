#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "doctest.h"
#include "divshape/divfree.hpp"
#include "divshape/error.hpp"
#include "test_support.hpp"

using namespace divshape;
using divshape::testing::Gen;

namespace {

MeshPtr unit_square(double h) {
  return share(triangulate(BoundaryCurve::box({0.0, 0.0}, {1.0, 1.0}), std::span<const BoundaryCurve>{}, h));
}

MeshPtr annulus(double h) {
  const std::vector<BoundaryCurve> holes{BoundaryCurve::circle({0.0, 0.0}, 0.2)};
  MeshOptions o;
  o.mesh_holes = false;
  return share(triangulate(BoundaryCurve::circle({0.0, 0.0}, 0.8), holes, h, o));
}

// Random P2 stream function vanishing on the mesh boundary.
ScalarField random_stream(const MeshPtr& m, Gen& g) {
  ScalarField psi = ScalarField::zeros({m, 2});
  const TriangleMesh& mesh = *m;
  const std::size_t nv = mesh.num_vertices();
  for (std::size_t i = 0; i < nv; ++i)
    if (!mesh.boundary_vertex()[i]) psi.values()[i] = g.uniform(-1.0, 1.0);
  for (std::size_t e = 0; e < mesh.num_edges(); ++e)
    if (mesh.edge_triangles()[e][1] >= 0) psi.values()[nv + e] = g.uniform(-1.0, 1.0);
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

std::vector<Region> strip_regions(const ClassCDomain& dom) {
  std::vector<Region> out;
  for (const BoundaryStrip& s : boundary_strips(dom, 0.5 * dom.params().a)) out.push_back(s.region(1.0));
  return out;
}

// Cutoff scales matched to strips of depth a / 2.
LocalizeOptions strip_options(const ClassCDomain& dom) {
  const double d = 0.5 * dom.params().a;
  LocalizeOptions o;
  o.band = d;
  o.partition.offset = 0.25 * d;
  o.partition.transition = 0.25 * d;
  return o;
}

// Largest nodal |sum u_j - u| over elements whose vertices all lie in `inner`.
double nodal_identity_error(const DecompositionResult& r, const VectorField& u, const Region& inner) {
  const TriangleMesh& m = u.mesh();
  double worst = 0.0;
  for (std::size_t t = 0; t < m.num_triangles(); ++t) {
    bool in = true;
    for (int k = 0; k < 3; ++k) in = in && inner.depth(m.vertices()[m.triangles()[t][k]]) > 0.0;
    if (!in) continue;
    for (int k = 0; k < 3; ++k) {
      Vec2 s = -u.value(t, local_nodes()[k]);
      for (const DecompositionPiece& p : r.pieces) s += p.u.value(t, local_nodes()[k]);
      worst = std::max(worst, norm(s));
    }
  }
  return worst;
}

// Largest nodal |u_j| at DG nodes outside the region of the piece.
double outside_support(const DecompositionPiece& p) {
  const TriangleMesh& m = p.u.mesh();
  double worst = 0.0;
  for (std::size_t t = 0; t < m.num_triangles(); ++t)
    for (int k = 0; k < 3; ++k)
      if (!p.region.contains(m.vertices()[m.triangles()[t][k]]))
        worst = std::max(worst, norm(p.u.value(t, local_nodes()[k])));
  return worst;
}

}  // namespace

TEST_CASE("curl of simple stream functions") {
  const MeshPtr m = unit_square(0.1);
  const FESpace p2{m, 2};
  const VectorField zero = curl_of_stream(ScalarField::interpolate(p2, [](Vec2) { return 3.5; }));
  CHECK(zero.max_abs() <= 1e-12);

  const VectorField a = curl_of_stream(ScalarField::interpolate(p2, [](Vec2 p) { return p.x * p.y; }));
  const VectorField b = curl_of_stream(ScalarField::interpolate(p2, [](Vec2 p) { return p.x * p.x; }));
  double ea = 0.0, eb = 0.0;
  for (std::size_t t = 0; t < m->num_triangles(); ++t)
    for (int k = 0; k < 3; ++k) {
      const Vec2 x = m->vertices()[m->triangles()[t][k]];
      ea = std::max(ea, norm(a.value(t, local_nodes()[k]) - Vec2{x.x, -x.y}));
      eb = std::max(eb, norm(b.value(t, local_nodes()[k]) - Vec2{0.0, -2.0 * x.x}));
    }
  CHECK(ea < 1e-13);
  CHECK(eb < 1e-13);
  CHECK(weak_divergence_residual(a) < 1e-12);
}

TEST_CASE("stream function of zero is zero") {
  const MeshPtr m = unit_square(0.1);
  const StreamField s = stream_function(VectorField::zeros({m, 1, true}));
  CHECK(s.psi.max_abs() == 0.0);
}

TEST_CASE("stream function round trip and agreement of the two methods") {
  const MeshPtr m = unit_square(0.02);
  Gen g(11);
  const ScalarField psi0 = random_stream(m, g);
  const VectorField u = curl_of_stream(psi0);
  const StreamField pois = stream_function(u);
  CHECK(h1_norm(pois.psi - psi0) <= 1e-6 * h1_norm(psi0));
  StreamOptions o;
  o.method = StreamMethod::Path;
  const StreamField path = stream_function(u, o);
  CHECK(l2_norm(path.psi - pois.psi) <= 1e-6 * l2_norm(pois.psi));
}

TEST_CASE("stream function preconditions") {
  const MeshPtr m = unit_square(0.1);
  const VectorField stretch = VectorField::interpolate({m, 1, true}, [](Vec2 p) { return Vec2{p.x, 0.0}; });
  CHECK_THROWS_WITH_AS(stream_function(stretch), doctest::Contains("divergence"), PreconditionError);

  const MeshPtr ring = annulus(0.1);
  const VectorField rot = VectorField::interpolate({ring, 1, true}, [](Vec2 p) { return Vec2{-p.y, p.x}; });
  CHECK_THROWS_WITH_AS(stream_function(rot), doctest::Contains("periods_and_potential"), PreconditionError);
}

TEST_CASE("decompose over two half squares") {
  const MeshPtr m = unit_square(0.05);
  Gen g(3);
  const VectorField u = curl_of_stream(random_stream(m, g));
  const std::vector<Region> regions{Region::box({-1.0, -1.0}, {0.6, 2.0}), Region::box({0.4, -1.0}, {2.0, 2.0})};
  const Region inner = Region::box({0.05, 0.05}, {0.95, 0.95});
  const DecompositionResult r = decompose(u, regions, inner);
  REQUIRE(r.pieces.size() == 2);
  CHECK(nodal_identity_error(r, u, inner) <= 1e-12 * u.max_abs());
  CHECK(r.identity_error <= 1e-12);
  for (const DecompositionPiece& p : r.pieces) {
    CHECK(outside_support(p) == 0.0);
    CHECK(p.divergence_residual <= 1e-10);
    CHECK(weak_divergence_residual(p.u) <= 1e-10);
  }
  CHECK(r.constant_estimate > 0.0);
}

TEST_CASE("decompose with a single region returns the field") {
  const MeshPtr m = unit_square(0.05);
  Gen g(4);
  const VectorField u = curl_of_stream(random_stream(m, g));
  const Region inner = Region::box({0.05, 0.05}, {0.95, 0.95});
  const DecompositionResult r = decompose(u, {Region::box({-1.0, -1.0}, {2.0, 2.0})}, inner);
  REQUIRE(r.pieces.size() == 1);
  CHECK(nodal_identity_error(r, u, inner) <= 1e-12 * u.max_abs());
}

TEST_CASE("decompose rejects an uncovered inner region") {
  const MeshPtr m = unit_square(0.05);
  Gen g(5);
  const VectorField u = curl_of_stream(random_stream(m, g));
  const std::vector<Region> regions{Region::box({-1.0, -1.0}, {0.45, 2.0}), Region::box({0.55, -1.0}, {2.0, 2.0})};
  CHECK_THROWS_AS(decompose(u, regions, Region::box({0.05, 0.05}, {0.95, 0.95})), PreconditionError);
}

TEST_CASE("covering decomposition by four quadrants") {
  const MeshPtr m = unit_square(0.05);
  Gen g(6);
  const VectorField u = curl_of_stream(random_stream(m, g));
  const std::vector<Region> quads{Region::box({-0.2, -0.2}, {0.6, 0.6}), Region::box({0.4, -0.2}, {1.2, 0.6}),
                                  Region::box({-0.2, 0.4}, {0.6, 1.2}), Region::box({0.4, 0.4}, {1.2, 1.2})};
  const DecompositionResult r = decompose_covering(u, quads, 2.0);
  REQUIRE(r.pieces.size() == 4);
  CHECK(nodal_identity_error(r, u, Region::box({-1.0, -1.0}, {2.0, 2.0})) <= 1e-12 * u.max_abs());
  for (const DecompositionPiece& p : r.pieces) CHECK(outside_support(p) == 0.0);

  const DecompositionResult one = decompose_covering(u, {Region::box({-0.5, -0.5}, {1.5, 1.5})}, 3.0);
  CHECK(nodal_identity_error(one, u, Region::box({-1.0, -1.0}, {2.0, 2.0})) <= 1e-12 * u.max_abs());

  const std::vector<Region> missing(quads.begin(), quads.begin() + 3);
  CHECK_THROWS_AS(decompose_covering(u, missing, 2.0), PreconditionError);
  CHECK_THROWS_WITH_AS(decompose_covering(u, quads, 1.0), doctest::Contains("ball"), PreconditionError);
}

TEST_CASE("poisson and path streams give the same pieces") {
  const MeshPtr m = unit_square(0.05);
  const ScalarField psi0 = ScalarField::interpolate({m, 2}, [](Vec2 p) {
    const double b = p.x * (1.0 - p.x) * p.y * (1.0 - p.y);
    return 16.0 * b * b;
  });
  const VectorField u = curl_of_stream(psi0);
  const std::vector<Region> regions{Region::box({-1.0, -1.0}, {0.6, 2.0}), Region::box({0.4, -1.0}, {2.0, 2.0})};
  const Region inner = Region::box({0.05, 0.05}, {0.95, 0.95});
  DecomposeOptions path;
  path.stream.method = StreamMethod::Path;
  const DecompositionResult a = decompose(u, regions, inner);
  const DecompositionResult b = decompose(u, regions, inner, path);
  for (std::size_t j = 0; j < 2; ++j)
    CHECK(h1_norm(a.pieces[j].u - b.pieces[j].u) <= 1e-6 * h1_norm(a.pieces[j].u));
}

TEST_CASE("localized decomposition recovers the plateau of a disk") {
  const AdmissibleFamily fam = square_family();
  const ClassCDomain dom = make_star_domain({0.5, 0.5}, {0.15}, fam);
  const std::vector<ClassCDomain> obstacle{dom};
  const MeshPtr m = share(triangulate(BoundaryCurve::box({0.0, 0.0}, {1.0, 1.0}), std::span(obstacle), 0.02));
  const ScalarField psi0 = ScalarField::interpolate(
      {m, 2}, [](Vec2 p) { return 2.0 * plateau(distance(p, {0.5, 0.5}), 0.17, 0.4); });
  const VectorField u = curl_of_stream(psi0);
  const std::vector<Region> regions = strip_regions(dom);
  const DecompositionResult r = localized_decompose(u, obstacle, regions, strip_options(dom));
  REQUIRE(r.gauge_constants.size() == 1);
  CHECK(std::abs(r.gauge_constants[0] - 2.0) <= 1e-10);
  CHECK(r.obstacle_max <= 1e-10);
  CHECK(r.obstacle_max <= 1e-8 * h1_norm(u));
  CHECK(r.identity_error <= 1e-10);
  for (const DecompositionPiece& p : r.pieces) {
    CHECK(outside_support(p) == 0.0);
    CHECK(p.divergence_residual <= 1e-10);
  }

  SUBCASE("gauge base point does not matter") {
    LocalizeOptions o = strip_options(dom);
    o.stream.base = Vec2{0.9, 0.9};
    const DecompositionResult s = localized_decompose(u, obstacle, regions, o);
    for (std::size_t j = 0; j < r.pieces.size(); ++j)
      CHECK((s.pieces[j].u - r.pieces[j].u).max_abs() <= 1e-12 * u.max_abs());
  }
  SUBCASE("zero field gives zero pieces") {
    const DecompositionResult z = localized_decompose(VectorField::zeros(u.space()), obstacle, regions, strip_options(dom));
    for (const DecompositionPiece& p : z.pieces) CHECK(p.u.max_abs() == 0.0);
  }
  SUBCASE("compact arc of the boundary") {
    LocalizeOptions o = strip_options(dom);
    o.gamma = Region::box({0.6, 0.0}, {1.0, 1.0});
    std::vector<Region> right;
    for (const BoundaryStrip& s : boundary_strips(dom, 0.5 * dom.params().a))
      if (s.chart.point(0.0).x > 0.5) right.push_back(s.region(1.0));
    const DecompositionResult a = localized_decompose(u, obstacle, right, o);
    CHECK(std::abs(a.gauge_constants[0] - 2.0) <= 1e-10);
    CHECK(a.obstacle_max <= 1e-8 * h1_norm(u));
    CHECK(a.identity_error <= 1e-10);
  }
  SUBCASE("field not vanishing on the obstacle") {
    const VectorField bad = curl_of_stream(
        ScalarField::interpolate({m, 2}, [](Vec2 p) { return 0.1 * p.x * (1 - p.x) * p.y * (1 - p.y); }));
    CHECK_THROWS_WITH_AS(localized_decompose(bad, obstacle, regions, strip_options(dom)), doctest::Contains("does not vanish"),
                         PreconditionError);
  }
}

TEST_CASE("localized decomposition around two disks with opposite plateaus") {
  const AdmissibleFamily fam = square_family();
  const std::vector<ClassCDomain> obstacle{make_star_domain({0.28, 0.5}, {0.12}, fam),
                                           make_star_domain({0.72, 0.5}, {0.12}, fam)};
  const MeshPtr m = share(triangulate(BoundaryCurve::box({0.0, 0.0}, {1.0, 1.0}), std::span(obstacle), 0.016));
  const ScalarField psi0 = ScalarField::interpolate({m, 2}, [](Vec2 p) {
    return plateau(distance(p, {0.28, 0.5}), 0.13, 0.2) - plateau(distance(p, {0.72, 0.5}), 0.13, 0.2);
  });
  const VectorField u = curl_of_stream(psi0);
  std::vector<Region> regions;
  for (const ClassCDomain& d : obstacle)
    for (const Region& r : strip_regions(d)) regions.push_back(r);
  const DecompositionResult r = localized_decompose(u, obstacle, regions, strip_options(obstacle[0]));
  REQUIRE(r.gauge_constants.size() == 2);
  CHECK(std::abs(r.gauge_constants[0] - 1.0) <= 1e-10);
  CHECK(std::abs(r.gauge_constants[1] + 1.0) <= 1e-10);
  CHECK(r.obstacle_max <= 1e-10);
  CHECK(r.identity_error <= 1e-10);

  std::vector<Region> joined = regions;
  joined.push_back(Region::box({0.25, 0.3}, {0.75, 0.7}));
  CHECK_THROWS_WITH_AS(localized_decompose(u, obstacle, joined, strip_options(obstacle[0])), doctest::Contains("refine the covering"),
                       PreconditionError);
}

TEST_CASE("periods of the winding form on an annulus") {
  const MeshPtr m = annulus(0.05);
  std::vector<Vec2> loop;
  for (int i = 0; i < 256; ++i) loop.push_back({0.5 * std::cos(2 * kPi * i / 256), 0.5 * std::sin(2 * kPi * i / 256)});
  const OneForm w = winding_form({0.0, 0.0});
  const OneForm dtheta = [&](Vec2 p) { return w(p) * (2.0 * kPi); };
  CHECK(std::abs(path_integral(dtheta, loop, true) - 2.0 * kPi) <= 1e-8);

  const OneForm tau = [&](Vec2 p) { return dtheta(p) + Vec2{2.0 * p.x, 0.0}; };
  PeriodOptions o;
  o.centers = {{0.0, 0.0}};
  const PeriodPotential pp = periods_and_potential(tau, m, {loop}, o);
  REQUIRE(pp.periods.size() == 1);
  CHECK(std::abs(pp.periods[0] - 2.0 * kPi) <= 1e-8);
  CHECK(std::abs(path_integral(pp.reduced, loop, true)) <= 1e-8);
  CHECK(pp.max_loop_residual <= 1e-8);

  const auto nodes = pp.potential.space().nodes();
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const double d = pp.potential.values()[i] - nodes[i].x * nodes[i].x;
    lo = std::min(lo, d);
    hi = std::max(hi, d);
  }
  CHECK(hi - lo <= 1e-6);

  Gen g(21);
  for (int k = 0; k < 10; ++k) {
    const double a0 = g.uniform(0.0, 2.0 * kPi);
    auto at = [&](double r, double a) { return Vec2{r * std::cos(a), r * std::sin(a)}; };
    const Vec2 p = at(g.uniform(0.3, 0.7), a0);
    const Vec2 q = at(g.uniform(0.3, 0.7), a0 + 1.0);
    const std::vector<Vec2> one{p, at(g.uniform(0.3, 0.7), a0 + g.uniform(0.1, 0.9)), q};
    const std::vector<Vec2> two{p, at(g.uniform(0.3, 0.7), a0 + g.uniform(0.1, 0.9)), q};
    double len = 0.0;
    for (std::size_t i = 0; i + 1 < 3; ++i) len += distance(one[i], one[i + 1]) + distance(two[i], two[i + 1]);
    CHECK(std::abs(path_integral(pp.reduced, one) - path_integral(pp.reduced, two)) <= 1e-8 * len);
  }
}

TEST_CASE("period preconditions") {
  const MeshPtr m = annulus(0.08);
  std::vector<Vec2> loop, small;
  for (int i = 0; i < 64; ++i) {
    const Vec2 c{std::cos(2 * kPi * i / 64), std::sin(2 * kPi * i / 64)};
    loop.push_back(c * 0.5);
    small.push_back(Vec2{0.5, 0.0} + c * 0.1);
  }
  const OneForm rot = [](Vec2 p) { return Vec2{-p.y, p.x}; };
  CHECK_THROWS_WITH_AS(periods_and_potential(rot, m, {loop}), doctest::Contains("not closed"), PreconditionError);
  const OneForm w = winding_form({0.0, 0.0});
  CHECK_THROWS_WITH_AS(periods_and_potential(w, m, {}), doctest::Contains("one loop per hole"), PreconditionError);
  CHECK_THROWS_WITH_AS(periods_and_potential(w, m, {small}), doctest::Contains("homology basis"),
                       PreconditionError);
}

TEST_CASE("shifted fields") {
  const MeshPtr m = unit_square(0.02);
  const ScalarField psi = ScalarField::interpolate(
      {m, 2}, [](Vec2 p) { return 0.1 * plateau(distance(p, {0.5, 0.5}), 0.0, 0.25); });
  const VectorField u = convert(curl_of_stream(psi), FESpace{m, 2, true});
  const Vec2 v{1.0, 0.0};

  CHECK((shift_field(u, 0.0, v, 0.1) - u).max_abs() == 0.0);
  CHECK_THROWS_WITH_AS(shift_field(u, 0.2, v, 0.1), doctest::Contains("safe radius"), PreconditionError);

  const std::vector<double> d = shift_convergence(u, v, {0.08, 0.04, 0.02, 0.01}, 0.1);
  for (std::size_t i = 1; i < d.size(); ++i) CHECK(d[i] < d[i - 1]);

  // Nodal support moves by t along v, up to one mesh cell.
  const double t = 0.05;
  const VectorField s = shift_field(u, t, v, 0.1);
  const auto nodes = u.space().nodes();
  double reach = 0.0, shifted_reach = 0.0;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const double r = distance(nodes[i], {0.5, 0.5});
    const double rs = distance(nodes[i], Vec2{0.5 + t, 0.5});
    if (std::hypot(u.x.values()[i], u.y.values()[i]) > 0.0) reach = std::max(reach, r);
    if (std::hypot(s.x.values()[i], s.y.values()[i]) > 0.0) shifted_reach = std::max(shifted_reach, rs);
  }
  CHECK(shifted_reach <= reach + m->h());
}

TEST_CASE("witness for a field away from the obstacle keeps the remainder") {
  const AdmissibleFamily fam = square_family();
  const ClassCDomain dom = make_star_domain({0.5, 0.5}, {0.15}, fam);
  const std::vector<ClassCDomain> obstacle{dom};
  const MeshPtr m = share(triangulate(BoundaryCurve::box({0.0, 0.0}, {1.0, 1.0}), std::span(obstacle), 0.02));
  const ScalarField psi0 = ScalarField::interpolate(
      {m, 2}, [](Vec2 p) { return plateau(std::abs(distance(p, {0.5, 0.5}) - 0.36), 0.0, 0.06); });
  const VectorField u = curl_of_stream(psi0);
  const WitnessReport w = witness_space_identity(u, &dom, WitnessKind::Exterior);
  for (const DecompositionPiece& p : w.decomposition.pieces) CHECK(p.u.max_abs() <= 1e-12 * u.max_abs());
  CHECK(w.relative_distance <= 1e-12);
  CHECK(w.divergence_residual <= 1e-10);

  const VectorField trace = VectorField::interpolate(u.space(), [](Vec2) { return Vec2{1.0, 0.0}; });
  CHECK_THROWS_WITH_AS(witness_space_identity(trace, &dom, WitnessKind::Exterior), doctest::Contains("trace"),
                       PreconditionError);
}

TEST_CASE("whole-domain witness by dilation") {
  const MeshPtr m = unit_square(0.04);
  const VectorField u = curl_of_stream(ScalarField::interpolate(
      {m, 2}, [](Vec2 p) { return 0.1 * plateau(distance(p, {0.5, 0.5}), 0.05, 0.3); }));
  const WitnessReport w = witness_space_identity(u, nullptr, WitnessKind::Whole);
  REQUIRE(w.tables.size() == 1);
  CHECK(w.tables[0].decreasing);
  CHECK(w.relative_distance < 0.05);
  CHECK(w.divergence_residual <= 1e-10);
}
