#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "divshape/geometry.hpp"
#include "divshape/region.hpp"

namespace divshape {

/// Samples of a continuous graph function g on [-half_width, half_width].
struct ChartFunction {
  std::vector<double> samples;  ///< uniformly spaced, at least 3
  double half_width = 0.0;
  double lipschitz_bound = 0.0;
  double sup_bound = 0.0;

  double operator()(double s) const;  ///< piecewise-linear interpolation
  double sample_coordinate(std::size_t i) const;
  /// Largest difference quotient over all sample pairs.
  double sampled_lipschitz() const;
};

/// Local graph chart: boundary points o + R (s, g(s)) with vertical y = R (0, 1).
struct LocalChart {
  Vec2 origin;
  Mat2 rotation;
  Vec2 vertical;
  ChartFunction func;
  double segment_depth = 0.0;

  Vec2 tangent() const { return rotation * Vec2{1.0, 0.0}; }
  Vec2 point(double s) const { return origin + rotation * Vec2{s, func(s)}; }
  /// (s, t) such that x = point(s) + t * vertical.
  Vec2 local_coordinates(Vec2 x) const;
};

/// Constants of the admissible family O(a, r, k) together with the hold-all
/// set B and the computational domain D.
struct AdmissibleFamily {
  double a = 0.05;
  double r = 0.5;
  double k = 0.01;
  double lip = 3.0;  ///< uniform Lipschitz bound standing in for equicontinuity
  double sup = 1.0;  ///< uniform bound on |g|
  Region B;
  Region D;

  /// Throws PreconditionError naming the violated invariant.
  void check() const;
};

/// Parameters (k_Omega, a_Omega, r_Omega) of one domain.
struct ClassCParams {
  double k = 0.0;
  double a = 0.0;
  double r = 0.0;
};

/// Boolean membership grid; cell (i, j) covers [lo + i h, lo + (i+1) h).
class Raster {
 public:
  Raster() = default;
  Raster(BBox box, double resolution, const std::function<bool(Vec2)>& inside);

  double resolution() const { return h_; }
  int nx() const { return nx_; }
  int ny() const { return ny_; }
  BBox box() const { return box_; }
  bool cell(int i, int j) const;
  Vec2 cell_center(int i, int j) const;
  bool contains(Vec2 p) const;
  /// Whole 3x3 neighbourhood of the point's cell inside (resp. outside).
  bool clearly_inside(Vec2 p) const;
  bool clearly_outside(Vec2 p) const;
  /// Centres of inside cells with an outside 4-neighbour.
  std::vector<Vec2> boundary_cells() const;
  double cell_diagonal() const { return h_ * std::sqrt(2.0); }
  /// Binary PGM (P5) image, row 0 at the top.
  std::string to_pgm() const;

 private:
  BBox box_;
  double h_ = 0.0;
  int nx_ = 0, ny_ = 0;
  std::vector<std::uint8_t> cells_;
};

/// Star-shaped parameterisation rho(phi) = c0 + sum_m a_m cos(m phi) + b_m sin(m phi);
/// coefficients are stored as [c0, a1, b1, a2, b2, ...].
struct StarShape {
  Vec2 center;
  std::vector<double> coeffs;

  double radius(double phi) const;
  double radius_derivative(double phi) const;
  Vec2 point(double phi) const;
};

/// Bounded open set of class C: chart list, raster, and class-C parameters.
class ClassCDomain {
 public:
  ClassCDomain() = default;
  /// Assemble a domain from explicit charts; membership rasterised from `inside`.
  ClassCDomain(std::vector<LocalChart> charts, ClassCParams params, AdmissibleFamily family,
               std::function<bool(Vec2)> inside, std::vector<Vec2> boundary_polyline,
               double raster_resolution);

  const std::vector<LocalChart>& charts() const { return charts_; }
  std::vector<LocalChart>& mutable_charts() { return charts_; }
  const ClassCParams& params() const { return params_; }
  const AdmissibleFamily& family() const { return family_; }
  const Raster& raster() const { return raster_; }
  const std::optional<StarShape>& star() const { return star_; }

  /// Exact membership (analytic for star domains).
  bool contains(Vec2 p) const { return inside_(p); }
  /// Signed distance to the boundary polyline, positive inside.
  double depth(Vec2 p) const;
  /// Signed distance clamped to [-cap, cap]; cheaper far from the boundary.
  double depth(Vec2 p, double cap) const;
  /// Closed boundary polyline (dense, counter-clockwise).
  const std::vector<Vec2>& boundary_polyline() const { return boundary_; }
  /// Boundary point for a curve parameter in [0, 1).
  Vec2 boundary_point(double param) const;
  BBox bbox() const;
  double area() const;
  Region as_region() const;

  void set_star(StarShape s) { star_ = std::move(s); }

 private:
  std::vector<LocalChart> charts_;
  ClassCParams params_;
  AdmissibleFamily family_;
  std::function<bool(Vec2)> inside_;
  std::vector<Vec2> boundary_;
  NearestPointIndex boundary_index_;
  double max_segment_ = 0.0;
  Raster raster_;
  std::optional<StarShape> star_;
};

struct StarDomainOptions {
  double raster_fraction = 1.0 / 512.0;  ///< raster cell as a fraction of the bbox diagonal
  int chart_count = 0;                   ///< 0 chooses automatically
  int samples_per_chart = 65;
};

/// Build a star-shaped class-C domain. Throws InfeasibleError naming the
/// violated constraint (nonpositive radius, Lipschitz bound, sup bound, escapes B).
ClassCDomain make_star_domain(Vec2 center, std::vector<double> radial_coeffs, const AdmissibleFamily& family,
                              const StarDomainOptions& opts = {});

struct ChartValidation {
  bool on_boundary = true;
  bool inner_segment = true;
  bool outer_segment = true;
  std::string detail;
  bool passed() const { return on_boundary && inner_segment && outer_segment; }
};

struct ValidationReport {
  std::vector<ChartValidation> charts;
  bool covering = true;     ///< restricted charts cover every raster boundary cell
  bool k_bound = true;      ///< k_Omega >= family k
  bool r_bound = true;      ///< r_Omega <= family r
  bool r_below_k = true;    ///< 0 < r_Omega < k_Omega
  bool positive_depth = true;
  std::vector<std::string> messages;
  bool passed() const;
};

struct SegmentSampling {
  int s_samples = 64;
  int t_samples = 32;
};

ValidationReport validate_class_c(const ClassCDomain& dom, const AdmissibleFamily& family,
                                  const SegmentSampling& sampling = {});

/// Strip V_j = {p_j(s) + t v_j : |s| < k, |t| < d} around one chart.
struct BoundaryStrip {
  std::size_t chart_index = 0;
  LocalChart chart;
  Vec2 direction;
  double depth = 0.0;
  double half_width = 0.0;

  Vec2 point(double s, double t) const { return chart.point(s) + direction * t; }
  bool in_strip(Vec2 x) const;   ///< V_j
  bool in_lower(Vec2 x) const;   ///< V_j^{-1}, t in (-d, 0)
  bool in_upper(Vec2 x) const;   ///< V_j^{1}, t in (0, d)
  /// Open sub-strip with half width scale*k and depth scale*d, as a Region.
  Region region(double scale = 1.0) const;
};

std::vector<BoundaryStrip> boundary_strips(const ClassCDomain& dom, double d, const SegmentSampling& sampling = {});

/// Symmetric Hausdorff distance between the grid complements B \ Omega_1 and B \ Omega_2.
double hausdorff_pompeiu(const std::function<bool(Vec2)>& in1, const std::function<bool(Vec2)>& in2,
                         const Region& B, double resolution);
double hausdorff_pompeiu(const ClassCDomain& dom1, const ClassCDomain& dom2, const Region& B, double resolution);

struct GammaOptions {
  int first_index = 1;        ///< index reported for seq[0]
  double resolution = 2e-3;   ///< sampling of the closure of K
  double tolerance = 1e-6;    ///< strict containment margin
};

/// Smallest m with closure(K) inside seq[m] for all tested m' >= m.
int check_gamma(std::span<const ClassCDomain> seq, const ClassCDomain& limit, const Region& K,
                const GammaOptions& opts = {});
/// Smallest m with closure(K) inside D \ seq[m] for all tested m' >= m.
int check_gamma_hat(std::span<const ClassCDomain> seq, const ClassCDomain& limit, const Region& K,
                    const GammaOptions& opts = {});

}  // namespace divshape
