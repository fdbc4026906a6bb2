#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "divshape/domain.hpp"
#include "divshape/fe.hpp"

namespace divshape {

/// Stream function psi with u = curl psi = (d psi/dx2, -d psi/dx1).
struct StreamField {
  ScalarField psi;
  double base_constant = 0.0;
};

/// Exact element-wise curl of a continuous stream function, as a DG1 field.
VectorField curl_of_stream(const ScalarField& psi);
inline VectorField curl_of_stream(const StreamField& s) { return curl_of_stream(s.psi); }

enum class StreamMethod { Poisson, Path };

struct StreamOptions {
  StreamMethod method = StreamMethod::Poisson;
  std::optional<Vec2> base;        ///< gauge point; defaults to the first boundary vertex
  double divergence_tol = 1e-8;
};

/// P2 stream function of a divergence-free field on a simply connected mesh.
/// Poisson: int grad psi . grad phi = int u . curl phi with psi = 0 on the boundary.
/// Path: integration of u1 dx2 - u2 dx1 along a spanning tree of mesh edges.
StreamField stream_function(const VectorField& u, const StreamOptions& opts = {});

struct DecompositionPiece {
  VectorField u;         ///< DG1 piece curl(I(chi_j (psi - c)))
  ScalarField stream;    ///< I(chi_j (psi - c))
  ScalarField cutoff;
  Region region;
  int component = -1;    ///< obstacle component met by the region, -1 if none
  double h1_norm = 0.0;
  double divergence_residual = 0.0;
};

struct DecompositionResult {
  std::vector<DecompositionPiece> pieces;
  Region validity;                    ///< node set where the cutoffs sum to 1
  ElementMask validity_elements;      ///< elements whose nodes all lie in the validity set
  double constant_estimate = 0.0;     ///< max_j |u_j|_H1 / |u|_H1(D)
  double identity_error = 0.0;        ///< max |sum u_j - u| / max |u| over valid elements
  double projection_error = 0.0;      ///< |u - curl psi|_H1 / |u|_H1
  StreamField stream;
  std::vector<double> gauge_constants;
  std::vector<double> plateau_spread;
  double obstacle_max = 0.0;          ///< max nodal |u_j| on the obstacle
};

struct DecomposeOptions {
  PartitionOptions partition;          ///< clip defaults to the mesh interior
  StreamOptions stream;
};

DecompositionResult decompose(const VectorField& u, const std::vector<Region>& regions, const Region& inner,
                              const DecomposeOptions& opts = {});
/// Covering of the closure of the mesh domain by regions inside the ball B(0, R).
DecompositionResult decompose_covering(const VectorField& u, const std::vector<Region>& covering, double R,
                                       const DecomposeOptions& opts = {});

/// Set on which a field must vanish, with its boundary distance.
struct ZeroSet {
  std::function<bool(Vec2)> contains;
  std::function<double(Vec2)> boundary_distance;
  std::vector<Vec2> boundary;          ///< boundary samples used for the coverage check
  std::string name;

  static ZeroSet inside(const ClassCDomain& dom, const std::string& name);
  static ZeroSet outside(const ClassCDomain& dom, const std::string& name);
};

struct LocalizeOptions {
  PartitionOptions partition;
  StreamOptions stream;
  double band = 0.1;          ///< validity set lies within this distance of the obstacle boundary
  Region gamma;               ///< when set, only boundary points in gamma must be covered
  double vanish_tol = 1e-10;  ///< relative tolerance for u = 0 on the obstacle
  double plateau_tol = 1e-6;
};

DecompositionResult localized_decompose(const VectorField& u, const std::vector<ClassCDomain>& obstacle,
                                        const std::vector<Region>& regions, const LocalizeOptions& opts = {});
DecompositionResult localized_decompose(const VectorField& u, const std::vector<ZeroSet>& zero_sets,
                                        const std::vector<Region>& regions, const LocalizeOptions& opts = {});

/// Elements of the mesh lying in the closed set (centroid inside, vertices not outside).
ElementMask elements_in(const TriangleMesh& mesh, const std::function<bool(Vec2)>& inside,
                        const std::function<double(Vec2)>& signed_depth);

// ---------------------------------------------------------------------------
// Periods and potentials

using OneForm = std::function<Vec2(Vec2)>;

/// Integral of tau along a polyline (Gauss rule per sub-segment).
double path_integral(const OneForm& tau, const std::vector<Vec2>& path, bool closed = false);
/// Winding form d(theta)/(2 pi) about a centre.
OneForm winding_form(Vec2 center);
/// Max over elements of |circulation of tau around the element| / area.
double closedness_defect(const OneForm& tau, const TriangleMesh& mesh);

struct PeriodOptions {
  std::vector<Vec2> centers;          ///< hole centres; defaults to boundary-loop centroids
  std::optional<Vec2> base;           ///< potential base point; defaults to vertex 0
  double closed_tol = 1e-8;
  std::vector<ClassCDomain> holes;    ///< enables the hull extension
  double strip_depth = 0.0;           ///< 0 picks a_Omega / 2 of each hole
};

struct PeriodPotential {
  std::vector<double> periods;
  std::vector<Vec2> centers;
  std::vector<OneForm> reference_forms;
  OneForm reduced;                    ///< tau - sum c_j tau_j
  ScalarField potential;              ///< P2 potential h with dh = reduced
  std::vector<BoundaryStrip> hull_strips;
  std::function<bool(Vec2)> in_hull;
  std::function<double(Vec2)> hull_potential;
  double max_loop_residual = 0.0;     ///< max_l |period of the reduced form around loop l|
};

PeriodPotential periods_and_potential(const OneForm& tau, const MeshPtr& region,
                                      const std::vector<std::vector<Vec2>>& loops, const PeriodOptions& opts = {});
PeriodPotential periods_and_potential(const VectorField& tau, const std::vector<std::vector<Vec2>>& loops,
                                      const PeriodOptions& opts = {});

// ---------------------------------------------------------------------------
// Shifts and witnesses

/// Safe translation radius 1/4 min(d, dist(support, boundary of V_j)).
double safe_shift_radius(const VectorField& u_j, const BoundaryStrip& strip);
/// u(x - t v) by nodal interpolation; throws when t exceeds the safe radius.
VectorField shift_field(const VectorField& u, double t, Vec2 v, double safe_radius);
/// curl of psi(x - t v); exactly divergence-free.
VectorField shift_stream(const ScalarField& psi, double t, Vec2 v, double safe_radius);
std::vector<double> shift_convergence(const VectorField& u, Vec2 v, const std::vector<double>& ts, double safe_radius,
                                      const ElementMask& mask = {});
std::vector<double> shift_convergence(const ScalarField& psi, Vec2 v, const std::vector<double>& ts,
                                      double safe_radius, const ElementMask& mask = {});

enum class WitnessKind { Exterior, Interior, Whole };

struct WitnessOptions {
  double strip_depth = 0.0;   ///< 0 picks a_Omega / 2
  int table_size = 4;
  double shift_factor = 0.5;  ///< final shift is min(safe radius, factor * h^2 / strip depth); dilation uses (h / radius)^2
  StreamOptions stream;
};

struct ShiftTable {
  int piece = 0;
  std::vector<double> t;
  std::vector<double> h1_difference;
  bool decreasing = true;
};

struct WitnessReport {
  WitnessKind kind = WitnessKind::Whole;
  DecompositionResult decomposition;
  VectorField remainder;
  double remainder_norm = 0.0;
  std::vector<ShiftTable> tables;
  double shift = 0.0;
  VectorField approximant;
  double distance = 0.0;           ///< |approximant - u|_H1 on the field's domain
  double relative_distance = 0.0;
  double divergence_residual = 0.0;
  double support_gap = 0.0;        ///< distance from the approximant's support to the forbidden set
};

/// Exterior: u = 0 on the obstacle, pieces shifted outward (x - t v_j).
/// Interior: u = 0 outside the obstacle, pieces shifted inward (x + t v_j).
/// Whole (no obstacle): u has zero trace, approximant by dilation about the mesh centre.
WitnessReport witness_space_identity(const VectorField& u, const ClassCDomain* obstacle, WitnessKind kind,
                                     const WitnessOptions& opts = {});

void write_decomposition(const std::string& dir, const DecompositionResult& r);

}  // namespace divshape
