#include <cmath>
#include <string>
#include <vector>

#include "doctest.h"
#include "divshape/domain.hpp"
#include "divshape/error.hpp"
#include "test_support.hpp"

using namespace divshape;
using divshape::testing::Gen;

namespace {

ClassCDomain disk_domain(double r, const AdmissibleFamily& fam, Vec2 c = {0.0, 0.0}) {
  return make_star_domain(c, {r}, fam);
}

// Largest |dg/ds| of the boundary in chart coordinates, from a dense polar sweep.
double dense_chart_slope(const ClassCDomain& dom, const LocalChart& ch) {
  const StarShape& star = *dom.star();
  double best = 0.0;
  Vec2 prev{};
  bool have = false;
  for (int i = 0; i <= 200000; ++i) {
    const double phi = 2.0 * kPi * i / 200000.0;
    const Vec2 rel = star.point(phi) - ch.origin;
    const Vec2 sg{dot(rel, ch.tangent()), dot(rel, ch.vertical)};
    const bool in = std::abs(sg.x) <= ch.func.half_width && sg.y > -0.5 * star.radius(phi);
    if (in && have && std::abs(sg.x - prev.x) > 1e-12) best = std::max(best, std::abs(sg.y - prev.y) / std::abs(sg.x - prev.x));
    prev = sg;
    have = in;
  }
  return best;
}

}  // namespace

TEST_CASE("disk of radius 0.3 validates") {
  const AdmissibleFamily fam = divshape::testing::unit_family();
  const ClassCDomain dom = disk_domain(0.3, fam);
  CHECK(dom.raster().resolution() < dom.params().a / 4.0);
  const ValidationReport rep = validate_class_c(dom, fam);
  CHECK(rep.passed());
  CHECK(dom.params().r < dom.params().k);
  CHECK(dom.area() == doctest::Approx(kPi * 0.09).epsilon(1e-5));
}

TEST_CASE("chart rotations are orthogonal and map (0,1) to the stored vertical") {
  const AdmissibleFamily fam = divshape::testing::unit_family();
  const ClassCDomain dom = make_star_domain({0.05, -0.02}, {0.3, 0.05, 0.0, 0.0, 0.03}, fam);
  for (const LocalChart& ch : dom.charts()) {
    const Mat2 p = ch.rotation.transposed() * ch.rotation;
    CHECK(std::abs(p.a - 1.0) < 1e-12);
    CHECK(std::abs(p.d - 1.0) < 1e-12);
    CHECK(std::abs(p.b) < 1e-12);
    CHECK(std::abs(p.c) < 1e-12);
    CHECK(ch.rotation.det() == doctest::Approx(1.0).epsilon(1e-12));
    const Vec2 y = ch.rotation * Vec2{0.0, 1.0};
    CHECK(y.x == ch.vertical.x);
    CHECK(y.y == ch.vertical.y);
    CHECK(std::abs(norm(ch.vertical) - 1.0) < 1e-12);
    CHECK(ch.segment_depth > 0.0);
    CHECK(ch.func.samples.size() >= 3);
  }
}

TEST_CASE("oval chart Lipschitz bounds dominate the dense boundary slope") {
  const AdmissibleFamily fam = divshape::testing::unit_family();
  const ClassCDomain dom = make_star_domain({0.0, 0.0}, {0.3, 0.05}, fam);
  for (const LocalChart& ch : dom.charts()) {
    const double dense = dense_chart_slope(dom, ch);
    CHECK(dense <= ch.func.lipschitz_bound);
    CHECK(ch.func.sampled_lipschitz() <= ch.func.lipschitz_bound);
    double mx = 0.0;
    for (double g : ch.func.samples) mx = std::max(mx, std::abs(g));
    CHECK(mx <= ch.func.sup_bound);
  }
  CHECK(validate_class_c(dom, fam).passed());
}

TEST_CASE("infeasible star parameters are rejected with the constraint named") {
  const AdmissibleFamily fam = divshape::testing::unit_family();
  try {
    make_star_domain({0.0, 0.0}, {0.1, 0.2}, fam);
    FAIL("expected rejection");
  } catch (const InfeasibleError& e) {
    CHECK(std::string(e.what()).find("nonpositive radius") != std::string::npos);
  }
  try {
    make_star_domain({0.0, 0.0}, {0.95}, fam);
    FAIL("expected rejection");
  } catch (const InfeasibleError& e) {
    CHECK(std::string(e.what()).find("escapes hold-all") != std::string::npos);
  }
  try {
    make_star_domain({0.0, 0.0}, {0.3, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.15}, fam);
    FAIL("expected rejection");
  } catch (const InfeasibleError& e) {
    CHECK(std::string(e.what()).find("Lipschitz") != std::string::npos);
  }
}

TEST_CASE("five-lobe star validates and its strips pass at d = 0.02") {
  const AdmissibleFamily fam = divshape::testing::unit_family();
  const ClassCDomain dom =
      make_star_domain({0.0, 0.0}, {0.3, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.04, 0.0}, fam);
  const ValidationReport rep = validate_class_c(dom, fam, {32, 32});
  CHECK(rep.passed());
  const auto strips = boundary_strips(dom, 0.02, {100, 100});
  CHECK(strips.size() == dom.charts().size());
}

TEST_CASE("a chart whose vertical is tangent fails the inner segment test") {
  const AdmissibleFamily fam = divshape::testing::unit_family();
  ClassCDomain dom = make_star_domain({0.0, 0.0}, {0.3, 0.0, 0.0, 0.1}, fam);
  REQUIRE(validate_class_c(dom, fam).passed());
  LocalChart& ch = dom.mutable_charts()[0];
  ch.rotation = ch.rotation * Mat2::rotation(kPi / 2.0);
  ch.vertical = ch.rotation * Vec2{0.0, 1.0};
  const ValidationReport rep = validate_class_c(dom, fam);
  CHECK_FALSE(rep.passed());
  CHECK_FALSE(rep.charts[0].inner_segment);
  for (std::size_t j = 1; j < rep.charts.size(); ++j) CHECK(rep.charts[j].passed());
}

TEST_CASE("validation requires a raster finer than a quarter segment depth") {
  const AdmissibleFamily fam = divshape::testing::unit_family();
  StarDomainOptions opts;
  opts.raster_fraction = 0.2;
  const ClassCDomain dom = make_star_domain({0.0, 0.0}, {0.3}, fam, opts);
  CHECK_THROWS_AS(validate_class_c(dom, fam), PreconditionError);
}

TEST_CASE("disk strips: inner sub-strip points lie inside the disk") {
  const AdmissibleFamily fam = divshape::testing::unit_family();
  const ClassCDomain dom = disk_domain(0.3, fam);
  const auto strips = boundary_strips(dom, 0.05);
  Gen gen(7);
  for (const BoundaryStrip& st : strips) {
    for (int i = 0; i < 200; ++i) {
      const double s = gen.uniform(-st.half_width, st.half_width);
      const double t = gen.uniform(-st.depth, 0.0);
      CHECK(norm(st.point(s, t)) < 0.3 + 1e-9);
    }
  }
}

TEST_CASE("strips deeper than the segment depth are rejected with a point") {
  const AdmissibleFamily fam = divshape::testing::unit_family();
  const ClassCDomain dom =
      make_star_domain({0.0, 0.0}, {0.3, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.04, 0.0}, fam);
  try {
    boundary_strips(dom, 2.0 * dom.params().a);
    FAIL("expected failure");
  } catch (const PreconditionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("leaves") != std::string::npos);
    CHECK(msg.find(" at (") != std::string::npos);
  }
}

TEST_CASE("strip construction is monotone in depth") {
  const AdmissibleFamily fam = divshape::testing::unit_family();
  Gen gen(11);
  for (int trial = 0; trial < 4; ++trial) {
    const ClassCDomain dom = make_star_domain(
        {0.0, 0.0}, {0.3, gen.uniform(-0.03, 0.03), gen.uniform(-0.03, 0.03), gen.uniform(-0.02, 0.02)}, fam);
    const double d = 0.5 * dom.params().a;
    REQUIRE_NOTHROW(boundary_strips(dom, d, {32, 16}));
    for (int k = 0; k < 3; ++k) CHECK_NOTHROW(boundary_strips(dom, gen.uniform(0.01, 1.0) * d, {32, 16}));
  }
}

namespace {

// Quadratic-time reference for the grid Hausdorff distance between complements.
double brute_force_hausdorff(const std::function<bool(Vec2)>& in1, const std::function<bool(Vec2)>& in2,
                             const Region& B, double res) {
  const BBox box = B.bbox();
  const int nx = static_cast<int>(std::ceil(box.width() / res)) + 1;
  const int ny = static_cast<int>(std::ceil(box.height() / res)) + 1;
  std::vector<Vec2> c1, c2;
  for (int j = 0; j < ny; ++j)
    for (int i = 0; i < nx; ++i) {
      const Vec2 p{box.lo.x + i * res, box.lo.y + j * res};
      if (B.depth(p) < 0.0) continue;
      if (!in1(p)) c1.push_back(p);
      if (!in2(p)) c2.push_back(p);
    }
  auto directed = [](const std::vector<Vec2>& a, const std::vector<Vec2>& b) {
    double h = 0.0;
    for (Vec2 p : a) {
      double best = 1e300;
      for (Vec2 q : b) best = std::min(best, norm2(p - q));
      h = std::max(h, best);
    }
    return std::sqrt(h);
  };
  return std::max(directed(c1, c2), directed(c2, c1));
}

}  // namespace

TEST_CASE("Hausdorff-Pompeiu distance of offset and concentric disks") {
  const AdmissibleFamily fam = divshape::testing::unit_family();
  const Region B = Region::disk({0.0, 0.0}, 1.0);
  const double res = 1.0 / 256.0;
  const ClassCDomain a = disk_domain(0.3, fam);
  const ClassCDomain b = disk_domain(0.3, fam, {0.1, 0.0});
  const ClassCDomain c = disk_domain(0.2, fam);
  CHECK(hausdorff_pompeiu(a, a, B, res) == 0.0);
  CHECK(std::abs(hausdorff_pompeiu(a, b, B, res) - 0.1) <= 2.0 * res);
  CHECK(std::abs(hausdorff_pompeiu(a, c, B, res) - 0.1) <= 2.0 * res);
}

TEST_CASE("distance transform agrees with brute force on a coarse grid") {
  const Region B = Region::disk({0.0, 0.0}, 1.0);
  const double res = 1.0 / 24.0;
  auto in1 = [](Vec2 p) { return norm(p) < 0.3; };
  auto in2 = [](Vec2 p) { return norm(p - Vec2{0.15, 0.05}) < 0.35; };
  auto in3 = [](Vec2 p) { return std::abs(p.x) < 0.4 && std::abs(p.y) < 0.2; };
  CHECK(hausdorff_pompeiu(in1, in2, B, res) == doctest::Approx(brute_force_hausdorff(in1, in2, B, res)).epsilon(1e-12));
  CHECK(hausdorff_pompeiu(in1, in3, B, res) == doctest::Approx(brute_force_hausdorff(in1, in3, B, res)).epsilon(1e-12));
}

TEST_CASE("Hausdorff-Pompeiu distance is a pseudometric on random triples") {
  const Region B = Region::disk({0.0, 0.0}, 1.0);
  const double res = 1.0 / 128.0;
  Gen gen(3);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<std::function<bool(Vec2)>> sets;
    for (int k = 0; k < 3; ++k) {
      const Vec2 c{gen.uniform(-0.3, 0.3), gen.uniform(-0.3, 0.3)};
      const double r = gen.uniform(0.1, 0.4);
      sets.push_back([c, r](Vec2 p) { return distance(p, c) < r; });
    }
    const double d01 = hausdorff_pompeiu(sets[0], sets[1], B, res);
    const double d10 = hausdorff_pompeiu(sets[1], sets[0], B, res);
    const double d12 = hausdorff_pompeiu(sets[1], sets[2], B, res);
    const double d02 = hausdorff_pompeiu(sets[0], sets[2], B, res);
    CHECK(d01 == d10);
    CHECK(d02 <= d01 + d12 + 4.0 * res);
  }
}

TEST_CASE("an obstacle covering the hold-all is rejected") {
  const Region B = Region::disk({0.0, 0.0}, 0.5);
  auto all = [](Vec2) { return true; };
  auto small = [](Vec2 p) { return norm(p) < 0.1; };
  try {
    hausdorff_pompeiu(all, small, B, 0.01);
    FAIL("expected error");
  } catch (const PreconditionError& e) {
    CHECK(std::string(e.what()).find("obstacle exhausts hold-all") != std::string::npos);
  }
}

TEST_CASE("Gamma property index for shrinking and growing disks") {
  const AdmissibleFamily fam = divshape::testing::wide_family();
  const ClassCDomain limit = disk_domain(0.3, fam);
  std::vector<ClassCDomain> inner, outer;
  for (int m = 4; m <= 40; ++m) inner.push_back(disk_domain(0.3 - 1.0 / m, fam));
  for (int m = 1; m <= 40; ++m) outer.push_back(disk_domain(0.3 + 1.0 / m, fam));
  const Region K = Region::disk({0.0, 0.0}, 0.25);
  GammaOptions opts;
  opts.first_index = 4;
  CHECK(check_gamma(inner, limit, K, opts) == 21);
  CHECK(check_gamma(outer, limit, K) == 1);
  CHECK_THROWS_AS(check_gamma(outer, limit, Region::disk({0.0, 0.0}, 0.35)), PreconditionError);

  // Monotone in K: smaller probes are witnessed no later.
  Gen gen(5);
  for (int trial = 0; trial < 5; ++trial) {
    const double r1 = gen.uniform(0.05, 0.27);
    const double r2 = gen.uniform(0.05, r1);
    CHECK(check_gamma(inner, limit, Region::disk({0.0, 0.0}, r2), opts) <=
          check_gamma(inner, limit, Region::disk({0.0, 0.0}, r1), opts));
  }

  std::vector<ClassCDomain> never(inner.begin(), inner.begin() + 5);
  try {
    check_gamma(never, limit, K, opts);
    FAIL("expected error");
  } catch (const PreconditionError& e) {
    CHECK(std::string(e.what()).find("Gamma-property not witnessed") != std::string::npos);
  }
}

TEST_CASE("Gamma-hat property index for disks shrinking onto the limit") {
  const AdmissibleFamily fam = divshape::testing::wide_family();
  const ClassCDomain limit = disk_domain(0.3, fam);
  std::vector<ClassCDomain> outer;
  for (int m = 1; m <= 40; ++m) outer.push_back(disk_domain(0.3 + 1.0 / m, fam));
  const Region patch = Region::annulus({0.0, 0.0}, 0.35, 0.4, 0.0, 0.5);
  CHECK(check_gamma_hat(outer, limit, patch) == 21);
  CHECK(check_gamma_hat(outer, limit, Region::disk({2.5, 2.5}, 0.1)) == 1);
  CHECK_THROWS_AS(check_gamma_hat(outer, limit, Region::disk({0.25, 0.0}, 0.1)), PreconditionError);
}

TEST_CASE("raster dumps as a binary PGM") {
  const AdmissibleFamily fam = divshape::testing::unit_family();
  const ClassCDomain dom = disk_domain(0.3, fam);
  const std::string pgm = dom.raster().to_pgm();
  CHECK(pgm.rfind("P5\n", 0) == 0);
  const std::string header = "P5\n" + std::to_string(dom.raster().nx()) + " " + std::to_string(dom.raster().ny()) + "\n255\n";
  CHECK(pgm.size() == header.size() + static_cast<std::size_t>(dom.raster().nx()) * dom.raster().ny());
}
