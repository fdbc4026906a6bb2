#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "divshape/domain.hpp"
#include "divshape/geometry.hpp"

namespace divshape {

enum class EdgeTag : std::uint8_t { None = 0, Outer = 1, Obstacle = 2 };

/// Closed curve parameterised over [0, 1), counter-clockwise, with optional
/// corner parameters that must become mesh vertices.
struct BoundaryCurve {
  std::function<Vec2(double)> point;
  std::function<bool(Vec2)> inside;
  std::vector<double> corners;
  bool straight = false;  ///< piecewise linear between corners
  double length = 0.0;

  static BoundaryCurve box(Vec2 lo, Vec2 hi);
  static BoundaryCurve circle(Vec2 center, double radius);
  static BoundaryCurve from_domain(const ClassCDomain& dom);
  /// Boundary of a box or disk region; throws PreconditionError for other shapes.
  static BoundaryCurve from_region(const Region& r);
  double area() const;
};

struct TaggedEdge {
  int a = 0, b = 0;
  EdgeTag tag = EdgeTag::None;
};

/// Conforming triangulation with per-triangle region ids and tagged edges.
/// Region 0 is the flow region; region i+1 is the interior of hole i.
class TriangleMesh {
 public:
  TriangleMesh() = default;
  TriangleMesh(std::vector<Vec2> vertices, std::vector<std::array<int, 3>> triangles, std::vector<int> regions,
               std::vector<TaggedEdge> tagged_edges);

  const std::vector<Vec2>& vertices() const { return vertices_; }
  const std::vector<std::array<int, 3>>& triangles() const { return triangles_; }
  const std::vector<int>& regions() const { return regions_; }
  const std::vector<std::array<int, 2>>& edges() const { return edges_; }
  /// Edge k of a triangle joins its vertices k and k+1 (mod 3).
  const std::vector<std::array<int, 3>>& triangle_edges() const { return triangle_edges_; }
  /// Triangles on each side of an edge; second entry -1 on the mesh boundary.
  const std::vector<std::array<int, 2>>& edge_triangles() const { return edge_triangles_; }
  const std::vector<EdgeTag>& edge_tags() const { return edge_tags_; }
  /// Vertices on the mesh boundary (edges with one triangle).
  const std::vector<char>& boundary_vertex() const { return boundary_vertex_; }
  /// For a submesh, the parent vertex of every vertex; empty otherwise.
  const std::vector<int>& parent_vertex() const { return parent_vertex_; }
  const std::vector<int>& parent_edge() const { return parent_edge_; }
  const std::vector<int>& parent_triangle() const { return parent_triangle_; }

  std::size_t num_vertices() const { return vertices_.size(); }
  std::size_t num_triangles() const { return triangles_.size(); }
  std::size_t num_edges() const { return edges_.size(); }
  int num_regions() const;

  double h() const;
  double min_angle_degrees() const;
  double triangle_area(std::size_t t) const;
  double area() const;
  /// Number of boundary loops minus one (0 for simply connected meshes).
  int num_holes() const;
  /// Vertices of every tagged edge with the given tag.
  std::vector<int> tagged_vertices(EdgeTag tag) const;

  /// Triangles whose region is listed, renumbered, with parent maps recorded.
  TriangleMesh submesh(std::span<const int> region_ids) const;
  /// Throws Error when conformity, orientation, or boundary tagging is broken.
  void check(double min_angle_deg = 0.0) const;

 private:
  void build_topology();

  std::vector<Vec2> vertices_;
  std::vector<std::array<int, 3>> triangles_;
  std::vector<int> regions_;
  std::vector<std::array<int, 2>> edges_;
  std::vector<std::array<int, 3>> triangle_edges_;
  std::vector<std::array<int, 2>> edge_triangles_;
  std::vector<EdgeTag> edge_tags_;
  std::vector<char> boundary_vertex_;
  std::vector<int> parent_vertex_;
  std::vector<int> parent_edge_;
  std::vector<int> parent_triangle_;
};

struct MeshOptions {
  double min_angle_deg = 25.0;  ///< refinement target; the guaranteed invariant is 20 degrees
  double curve_spacing = 0.6;   ///< curved boundary sampling as a fraction of h
  bool mesh_holes = true;       ///< also triangulate hole interiors (region ids 1..)
  std::size_t max_vertices = 4000000;
};

/// Delaunay refinement of outer \ closure(holes). Hole interiors are meshed as
/// separate regions when requested so the flow mesh is a submesh of a mesh of D.
TriangleMesh triangulate(const BoundaryCurve& outer, std::span<const BoundaryCurve> holes, double h,
                         const MeshOptions& opts = {});
TriangleMesh triangulate(const BoundaryCurve& outer, std::span<const ClassCDomain> holes, double h,
                         const MeshOptions& opts = {});

/// Point location over a fixed mesh.
class MeshLocator {
 public:
  explicit MeshLocator(const TriangleMesh& mesh);
  /// Triangle containing p (within a small tolerance) or -1, with barycentrics.
  int locate(Vec2 p, std::array<double, 3>* bary = nullptr) const;
  /// Like locate, but falls back to the nearest triangle within `reach`.
  int locate_near(Vec2 p, double reach, std::array<double, 3>* bary = nullptr) const;

 private:
  const TriangleMesh* mesh_;
  BBox box_;
  double cell_ = 1.0;
  int nx_ = 0, ny_ = 0;
  std::vector<std::size_t> start_;
  std::vector<int> items_;
};

std::array<double, 3> barycentric(Vec2 a, Vec2 b, Vec2 c, Vec2 p);

void write_mesh(std::ostream& out, const TriangleMesh& mesh);
/// Throws ConfigError with the offending line number.
TriangleMesh read_mesh(std::istream& in);
void save_mesh(const std::string& path, const TriangleMesh& mesh);
TriangleMesh load_mesh(const std::string& path);

}  // namespace divshape
