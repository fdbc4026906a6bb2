#pragma once

#include <array>
#include <functional>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "divshape/geometry.hpp"
#include "divshape/mesh.hpp"
#include "divshape/region.hpp"

namespace divshape {

using MeshPtr = std::shared_ptr<const TriangleMesh>;

inline MeshPtr share(TriangleMesh m) { return std::make_shared<const TriangleMesh>(std::move(m)); }

/// Lagrange space of degree 1 or 2, continuous or element-wise discontinuous.
/// Continuous P2 numbers vertices first, then edge midpoints. Discontinuous
/// spaces number nodes element by element (3 or 6 per triangle).
struct FESpace {
  MeshPtr mesh;
  int degree = 1;
  bool discontinuous = false;

  int local_size() const { return degree == 1 ? 3 : 6; }
  std::size_t size() const;
  /// Global node numbers of element t; only the first local_size() entries are used.
  std::array<int, 6> dofs(std::size_t t) const;
  Vec2 node(std::size_t i) const;
  std::vector<Vec2> nodes() const;
  bool same_as(const FESpace& o) const {
    return mesh == o.mesh && degree == o.degree && discontinuous == o.discontinuous;
  }
};

/// Per-element geometry: vertices, area, and constant barycentric gradients.
struct ElementGeometry {
  std::array<Vec2, 3> p;
  double area = 0.0;
  std::array<Vec2, 3> grad_lambda;
  Vec2 map(const std::array<double, 3>& bary) const {
    return p[0] * bary[0] + p[1] * bary[1] + p[2] * bary[2];
  }
};
ElementGeometry element_geometry(const TriangleMesh& mesh, std::size_t t);

/// Local basis values and gradients at barycentric coordinates.
std::array<double, 6> basis_values(int degree, const std::array<double, 3>& bary);
std::array<Vec2, 6> basis_gradients(int degree, const std::array<double, 3>& bary, const ElementGeometry& g);
/// Barycentric coordinates of the local nodes.
const std::array<std::array<double, 3>, 6>& local_nodes();

struct QuadPoint {
  std::array<double, 3> bary;
  double weight;  ///< weights sum to 1; multiply by the element area
};
/// Collapsed Gauss rule exact for polynomials of the given total degree.
const std::vector<QuadPoint>& triangle_quadrature(int degree);

class ScalarField {
 public:
  ScalarField() = default;
  ScalarField(FESpace space, std::vector<double> values);
  static ScalarField zeros(FESpace space);
  static ScalarField interpolate(FESpace space, const std::function<double(Vec2)>& f);

  const FESpace& space() const { return space_; }
  const TriangleMesh& mesh() const { return *space_.mesh; }
  std::vector<double>& values() { return values_; }
  const std::vector<double>& values() const { return values_; }
  double value(std::size_t t, const std::array<double, 3>& bary) const;
  Vec2 gradient(std::size_t t, const std::array<double, 3>& bary, const ElementGeometry& g) const;
  double max_abs() const;

  ScalarField& operator+=(const ScalarField& o);
  ScalarField& operator-=(const ScalarField& o);
  ScalarField& operator*=(double s);

 private:
  FESpace space_;
  std::vector<double> values_;
};

ScalarField operator+(ScalarField a, const ScalarField& b);
ScalarField operator-(ScalarField a, const ScalarField& b);
ScalarField operator*(double s, ScalarField a);

struct VectorField {
  ScalarField x;
  ScalarField y;

  static VectorField zeros(FESpace space) { return {ScalarField::zeros(space), ScalarField::zeros(space)}; }
  static VectorField interpolate(FESpace space, const std::function<Vec2(Vec2)>& f);
  const FESpace& space() const { return x.space(); }
  const TriangleMesh& mesh() const { return x.mesh(); }
  Vec2 value(std::size_t t, const std::array<double, 3>& bary) const { return {x.value(t, bary), y.value(t, bary)}; }
  double max_abs() const;

  VectorField& operator+=(const VectorField& o) { x += o.x; y += o.y; return *this; }
  VectorField& operator-=(const VectorField& o) { x -= o.x; y -= o.y; return *this; }
  VectorField& operator*=(double s) { x *= s; y *= s; return *this; }
};

inline VectorField operator+(VectorField a, const VectorField& b) { return a += b; }
inline VectorField operator-(VectorField a, const VectorField& b) { return a -= b; }

/// Exact re-expression in another space of at least the same degree (e.g. P2 or DG1 into DG2).
ScalarField convert(const ScalarField& f, const FESpace& target);
VectorField convert(const VectorField& f, const FESpace& target);

/// Element mask selecting triangles; empty means all.
using ElementMask = std::vector<char>;

double l2_norm(const ScalarField& f, const ElementMask& mask = {});
double h1_seminorm(const ScalarField& f, const ElementMask& mask = {});
double h1_norm(const ScalarField& f, const ElementMask& mask = {});
double l2_norm(const VectorField& f, const ElementMask& mask = {});
double h1_seminorm(const VectorField& f, const ElementMask& mask = {});
double h1_norm(const VectorField& f, const ElementMask& mask = {});
double integrate(const TriangleMesh& mesh, const std::function<double(Vec2)>& f, int degree = 6,
                 const ElementMask& mask = {});

/// max_i |int u . grad(phi_i)| / (|u|_H1 |phi_i|_H1) over P1 hat functions;
/// with interior_only, hats of boundary vertices are skipped.
double weak_divergence_residual(const VectorField& u, bool interior_only = true);

/// Point evaluation through a locator; points outside the mesh within `reach`
/// snap to the nearest triangle, otherwise the value is 0.
double evaluate(const ScalarField& f, const MeshLocator& loc, Vec2 p, double reach = 0.0);
Vec2 evaluate(const VectorField& f, const MeshLocator& loc, Vec2 p, double reach = 0.0);

/// Open region covered by the mesh; depth is the signed distance to the mesh boundary.
Region mesh_region(const MeshPtr& mesh);
/// Region made of an explicit node set: contains(p) holds exactly at the listed points.
Region node_set_region(std::vector<Vec2> points);

struct CutoffFunction {
  ScalarField chi;
  Region support;
};

struct PartitionOptions {
  double offset = 0.05;      ///< nodes closer than max(offset, h) to the cut boundary get 0
  double transition = 0.1;   ///< width of the smooth ramp
  double collar = 0.0;       ///< width over which normalisation fades out past `inner`; 0 means transition
  double softness = 0.0;     ///< soft-minimum scale of the boundary distance; 0 means transition / 4
  Region clip;               ///< when set, boundary parts of U_j outside this open set are ignored
};

/// Offset below which cutoffs vanish on a mesh of size h.
double partition_offset(double h, const PartitionOptions& opts);
double partition_softness(const PartitionOptions& opts);
/// Smoothed distance (a soft minimum over boundary samples, calibrated to be exact
/// for a straight boundary) from each node to the part of the boundary of each region
/// that lies inside `opts.clip`; 0 outside the region. Indexed [region][node].
std::vector<std::vector<double>> cut_distances(const std::vector<Region>& regions, const std::vector<Vec2>& nodes,
                                               double h, const PartitionOptions& opts);

/// Smooth distance-based cutoffs normalised nodally: the sum is exactly 1 at
/// nodes in the closure of `inner` and at most 1 elsewhere. Outside, the sum is
/// divided by sum + s(dist/collar) with s a smooth step, so the cutoffs stay smooth. Throws PreconditionError naming
/// a node of `inner` where every cutoff vanishes.
std::vector<CutoffFunction> build_partition_of_unity(const std::vector<Region>& regions, const Region& inner,
                                                     const FESpace& space, const PartitionOptions& opts = {});

/// Zero extension of a field on a submesh to its parent mesh.
VectorField extend_by_zero(const VectorField& u, const MeshPtr& target, double tol = 1e-12);
ScalarField extend_by_zero(const ScalarField& u, const MeshPtr& target, double tol = 1e-12);
/// Nodal restriction of a field on the parent mesh to a submesh; the field must
/// vanish on nodes outside the submesh.
VectorField restrict_to(const VectorField& u, const MeshPtr& sub, double tol = 1e-12);

void write_field_csv(std::ostream& out, const std::vector<const ScalarField*>& components,
                     const std::vector<std::string>& names);

}  // namespace divshape
