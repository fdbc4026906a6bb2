#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "divshape/error.hpp"
#include "divshape/fe.hpp"
#include "test_support.hpp"

using namespace divshape;
using divshape::testing::Gen;

namespace {

MeshPtr unit_square(double h) {
  return share(triangulate(BoundaryCurve::box({0.0, 0.0}, {1.0, 1.0}), std::span<const BoundaryCurve>{}, h));
}

struct HoleMeshes {
  MeshPtr full;
  MeshPtr flow;
};

HoleMeshes square_with_hole(double h) {
  const std::vector<BoundaryCurve> holes{BoundaryCurve::circle({0.5, 0.5}, 0.2)};
  TriangleMesh m = triangulate(BoundaryCurve::box({0.0, 0.0}, {1.0, 1.0}), holes, h);
  const std::vector<int> flow{0};
  MeshPtr full = share(std::move(m));
  return {full, share(full->submesh(flow))};
}

double factorial(int n) { return n <= 1 ? 1.0 : n * factorial(n - 1); }

// Zeroes a P2 field on every node of an obstacle-tagged edge.
void clear_obstacle_trace(ScalarField& f) {
  const TriangleMesh& m = f.mesh();
  const int nv = static_cast<int>(m.num_vertices());
  for (std::size_t e = 0; e < m.num_edges(); ++e) {
    if (m.edge_tags()[e] != EdgeTag::Obstacle) continue;
    f.values()[m.edges()[e][0]] = 0.0;
    f.values()[m.edges()[e][1]] = 0.0;
    if (f.space().degree == 2) f.values()[nv + e] = 0.0;
  }
}

}  // namespace

TEST_CASE("quadrature integrates monomials exactly on the reference triangle") {
  for (int deg = 0; deg <= 12; ++deg) {
    const auto& rule = triangle_quadrature(deg);
    double wsum = 0.0;
    for (const QuadPoint& q : rule) wsum += q.weight;
    CHECK(wsum == doctest::Approx(1.0).epsilon(1e-14));
    for (int a = 0; a <= deg; ++a)
      for (int b = 0; a + b <= deg; ++b) {
        double s = 0.0;
        for (const QuadPoint& q : rule) s += 0.5 * q.weight * std::pow(q.bary[1], a) * std::pow(q.bary[2], b);
        const double exact = factorial(a) * factorial(b) / factorial(a + b + 2);
        CHECK(std::abs(s - exact) < 1e-15);
      }
  }
}

TEST_CASE("norms of f = x on the unit square") {
  const MeshPtr m = unit_square(0.1);
  for (int deg : {1, 2}) {
    const ScalarField f = ScalarField::interpolate({m, deg}, [](Vec2 p) { return p.x; });
    CHECK(std::abs(l2_norm(f) - 1.0 / std::sqrt(3.0)) < 1e-12);
    CHECK(std::abs(h1_norm(f) - std::sqrt(1.0 / 3.0 + 1.0)) < 1e-12);
    CHECK(std::abs(h1_seminorm(f) - 1.0) < 1e-12);
    CHECK(l2_norm(ScalarField::zeros({m, deg})) == 0.0);
    CHECK(h1_norm(ScalarField::zeros({m, deg})) == 0.0);
  }
}

TEST_CASE("P2 reproduces quadratics and converts exactly") {
  const MeshPtr m = unit_square(0.2);
  auto q = [](Vec2 p) { return 1.0 + 2.0 * p.x - p.y + 3.0 * p.x * p.y - p.x * p.x + 0.5 * p.y * p.y; };
  const ScalarField f = ScalarField::interpolate({m, 2}, q);
  const ScalarField g = convert(f, FESpace{m, 2, true});
  const MeshLocator loc(*m);
  Gen gen(11);
  for (int i = 0; i < 100; ++i) {
    const Vec2 p{gen.uniform(0.0, 1.0), gen.uniform(0.0, 1.0)};
    CHECK(std::abs(evaluate(f, loc, p) - q(p)) < 1e-12);
    CHECK(std::abs(evaluate(g, loc, p) - q(p)) < 1e-12);
  }
  // Exact L2 norm of the quadratic by a high-order rule on the same mesh.
  const double ref = std::sqrt(integrate(*m, [&](Vec2 p) { return q(p) * q(p); }, 8));
  CHECK(std::abs(l2_norm(f) - ref) < 1e-12);
  CHECK_THROWS_AS((void)convert(f, FESpace{m, 1, false}), PreconditionError);
}

TEST_CASE("weak divergence residual") {
  const MeshPtr m = unit_square(0.1);
  const VectorField rot = VectorField::interpolate({m, 1}, [](Vec2 p) { return Vec2{p.y, p.x}; });
  CHECK(weak_divergence_residual(rot) <= 1e-12);
  const VectorField stretch = VectorField::interpolate({m, 1}, [](Vec2 p) { return Vec2{p.x, 0.0}; });
  // Oracle: interior hat with the largest |int phi| / |phi|_H1, since int u.grad(phi) = -int phi.
  double best = 0.0;
  std::vector<double> mass(m->num_vertices(), 0.0), stiff(m->num_vertices(), 0.0);
  for (std::size_t t = 0; t < m->num_triangles(); ++t) {
    const ElementGeometry g = element_geometry(*m, t);
    for (int k = 0; k < 3; ++k) {
      mass[m->triangles()[t][k]] += g.area / 3.0;
      stiff[m->triangles()[t][k]] += g.area / 6.0 + norm2(g.grad_lambda[k]) * g.area;
    }
  }
  for (std::size_t v = 0; v < m->num_vertices(); ++v)
    if (!m->boundary_vertex()[v]) best = std::max(best, mass[v] / std::sqrt(stiff[v]));
  const double un = h1_norm(stretch);
  CHECK(weak_divergence_residual(stretch) == doctest::Approx(best / un).epsilon(1e-10));
  CHECK(weak_divergence_residual(stretch) > 1e-4);
}

TEST_CASE("field arithmetic checks spaces") {
  const MeshPtr m = unit_square(0.2);
  ScalarField a = ScalarField::interpolate({m, 1}, [](Vec2 p) { return p.x; });
  const ScalarField b = ScalarField::interpolate({m, 2}, [](Vec2 p) { return p.x; });
  CHECK_THROWS_AS(a += b, PreconditionError);
  CHECK_THROWS_AS(ScalarField(FESpace{m, 1}, std::vector<double>(3, 0.0)), PreconditionError);
  const ScalarField c = 2.0 * a - a;
  CHECK(c.values() == a.values());
}

TEST_CASE("partition of unity: single region") {
  const MeshPtr m = unit_square(0.05);
  const FESpace sp{m, 2};
  const std::vector<Region> regions{Region::box({-1.0, -1.0}, {2.0, 2.0})};
  const Region inner = Region::box({0.1, 0.1}, {0.9, 0.9});
  PartitionOptions opts;
  opts.clip = Region::box({0.0, 0.0}, {1.0, 1.0});
  const auto chi = build_partition_of_unity(regions, inner, sp, opts);
  REQUIRE(chi.size() == 1);
  for (std::size_t i = 0; i < sp.size(); ++i) {
    if (inner.contains(sp.node(i))) CHECK(chi[0].chi.values()[i] == 1.0);
  }
}

TEST_CASE("partition of unity: two overlapping half squares") {
  const MeshPtr m = unit_square(0.04);
  const FESpace sp{m, 2};
  const std::vector<Region> regions{Region::box({-1.0, -1.0}, {0.6, 2.0}), Region::box({0.4, -1.0}, {2.0, 2.0})};
  const Region inner = Region::box({0.1, 0.1}, {0.9, 0.9});
  PartitionOptions opts;
  opts.clip = Region::box({0.0, 0.0}, {1.0, 1.0});
  const auto chi = build_partition_of_unity(regions, inner, sp, opts);
  int covered = 0;
  for (std::size_t i = 0; i < sp.size(); ++i) {
    const Vec2 p = sp.node(i);
    const double s = chi[0].chi.values()[i] + chi[1].chi.values()[i];
    CHECK(s <= 1.0 + 1e-15);
    for (std::size_t j = 0; j < 2; ++j) {
      const double v = chi[j].chi.values()[i];
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
      if (v != 0.0) CHECK(regions[j].contains(p));
    }
    if (inner.contains(p)) {
      CHECK(std::abs(s - 1.0) <= 1e-15);
      ++covered;
    }
  }
  CHECK(covered > 100);
}

TEST_CASE("partition of unity: uncovered inner region is an error") {
  const MeshPtr m = unit_square(0.05);
  const std::vector<Region> regions{Region::box({-1.0, -1.0}, {0.5, 2.0})};
  const Region inner = Region::box({0.1, 0.1}, {0.9, 0.9});
  try {
    (void)build_partition_of_unity(regions, inner, {m, 2});
    FAIL("expected margin violation");
  } catch (const PreconditionError& e) {
    CHECK(std::string(e.what()).find("node") != std::string::npos);
  }
}

TEST_CASE("extension by zero and restriction") {
  const HoleMeshes hm = square_with_hole(0.05);
  const FESpace sp{hm.flow, 2};
  auto f = [](Vec2 p) {
    const double r2 = (p.x - 0.5) * (p.x - 0.5) + (p.y - 0.5) * (p.y - 0.5);
    return Vec2{(r2 - 0.04) * p.y * (1.0 - p.y), (r2 - 0.04) * std::sin(p.x)};
  };
  VectorField u = VectorField::interpolate(sp, f);
  clear_obstacle_trace(u.x);
  clear_obstacle_trace(u.y);
  const VectorField ext = extend_by_zero(u, hm.full);
  CHECK(std::abs(h1_norm(ext) - h1_norm(u)) <= 1e-12 * h1_norm(u));
  CHECK(std::abs(l2_norm(ext) - l2_norm(u)) <= 1e-12 * l2_norm(u));
  for (std::size_t t = 0; t < hm.full->num_triangles(); ++t) {
    if (hm.full->regions()[t] == 0) continue;
    const auto d = ext.space().dofs(t);
    for (int k = 0; k < 6; ++k) CHECK(ext.x.values()[d[k]] == 0.0);
  }
  const VectorField back = restrict_to(ext, hm.flow);
  CHECK(back.x.values() == u.x.values());
  CHECK(back.y.values() == u.y.values());
  const VectorField again = extend_by_zero(back, hm.full);
  CHECK(again.x.values() == ext.x.values());

  const VectorField zero = extend_by_zero(VectorField::zeros(sp), hm.full);
  CHECK(zero.max_abs() == 0.0);
}

TEST_CASE("extension rejects a nonzero obstacle trace") {
  const HoleMeshes hm = square_with_hole(0.05);
  const VectorField u = VectorField::interpolate({hm.flow, 2}, [](Vec2) { return Vec2{0.1, 0.0}; });
  try {
    (void)extend_by_zero(u, hm.full);
    FAIL("expected trace error");
  } catch (const PreconditionError& e) {
    CHECK(std::string(e.what()).find("0.1") != std::string::npos);
  }
  const VectorField v = VectorField::interpolate({hm.full, 2}, [](Vec2) { return Vec2{1.0, 0.0}; });
  CHECK_THROWS_AS((void)restrict_to(v, hm.flow), PreconditionError);
}

TEST_CASE("field csv has one row per node") {
  const MeshPtr m = unit_square(0.5);
  const ScalarField f = ScalarField::interpolate({m, 1}, [](Vec2 p) { return p.x; });
  std::ostringstream s;
  write_field_csv(s, {&f}, {"u"});
  const std::string out = s.str();
  CHECK(out.rfind("node_id,u\n", 0) == 0);
  CHECK(static_cast<std::size_t>(std::count(out.begin(), out.end(), '\n')) == m->num_vertices() + 1);
}
