#include "divshape/divfree.hpp"

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>
#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <queue>
#include <sstream>

#include "divshape/error.hpp"
#include "json.hpp"

namespace divshape {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::string fmt_point(Vec2 p) {
  std::ostringstream s;
  s.precision(6);
  s << "(" << p.x << ", " << p.y << ")";
  return s.str();
}

std::string fmt_value(double v) {
  std::ostringstream s;
  s.precision(6);
  s << v;
  return s.str();
}

// Gauss-Legendre nodes and weights on [0, 1].
const std::vector<std::pair<double, double>>& gauss01() {
  static const std::vector<std::pair<double, double>> g = [] {
    const double x[] = {-0.9602898564975363, -0.7966664774136267, -0.5255324099163290, -0.1834346424956498,
                        0.1834346424956498,  0.5255324099163290,  0.7966664774136267,  0.9602898564975363};
    const double w[] = {0.1012285362903763, 0.2223810344533745, 0.3137066458778873, 0.3626837833783620,
                        0.3626837833783620, 0.3137066458778873, 0.2223810344533745, 0.1012285362903763};
    std::vector<std::pair<double, double>> out;
    for (int i = 0; i < 8; ++i) out.push_back({0.5 * (x[i] + 1.0), 0.5 * w[i]});
    return out;
  }();
  return g;
}

double segment_integral(const OneForm& tau, Vec2 a, Vec2 b) {
  const Vec2 d = b - a;
  double s = 0.0;
  for (const auto& [x, w] : gauss01()) s += w * dot(tau(a + d * x), d);
  return s;
}

std::vector<char> p2_boundary_nodes(const FESpace& sp) {
  const TriangleMesh& m = *sp.mesh;
  std::vector<char> b(sp.size(), 0);
  for (std::size_t v = 0; v < m.num_vertices(); ++v) b[v] = m.boundary_vertex()[v];
  if (sp.degree == 2)
    for (std::size_t e = 0; e < m.num_edges(); ++e)
      if (m.edge_triangles()[e][1] < 0) b[m.num_vertices() + e] = 1;
  return b;
}

std::vector<std::vector<int>> vertex_neighbours(const TriangleMesh& m) {
  std::vector<std::vector<int>> adj(m.num_vertices());
  for (std::size_t e = 0; e < m.num_edges(); ++e) {
    adj[m.edges()[e][0]].push_back(static_cast<int>(e));
    adj[m.edges()[e][1]].push_back(static_cast<int>(e));
  }
  return adj;
}

// Integral of u1 dx2 - u2 dx1 from edge vertex 0 to the point at fraction f,
// averaged over the traces of the adjacent triangles.
double stream_edge_integral(const VectorField& u, std::size_t e, double f) {
  const TriangleMesh& m = u.mesh();
  const auto& ed = m.edges()[e];
  const Vec2 a = m.vertices()[ed[0]], b = m.vertices()[ed[1]];
  const Vec2 d = (b - a) * f;
  double total = 0.0;
  int count = 0;
  for (int side = 0; side < 2; ++side) {
    const int t = m.edge_triangles()[e][side];
    if (t < 0) continue;
    const auto& tri = m.triangles()[t];
    int ia = -1, ib = -1;
    for (int k = 0; k < 3; ++k) {
      if (tri[k] == ed[0]) ia = k;
      if (tri[k] == ed[1]) ib = k;
    }
    double s = 0.0;
    for (const auto& [x, w] : gauss01()) {
      std::array<double, 3> bary{0.0, 0.0, 0.0};
      bary[ia] = 1.0 - x * f;
      bary[ib] = x * f;
      const Vec2 val = u.value(static_cast<std::size_t>(t), bary);
      s += w * (val.x * d.y - val.y * d.x);
    }
    total += s;
    ++count;
  }
  return total / count;
}

int nearest_vertex(const TriangleMesh& m, Vec2 p) {
  int best = 0;
  double bd = kInf;
  for (std::size_t v = 0; v < m.num_vertices(); ++v) {
    const double d = distance(m.vertices()[v], p);
    if (d < bd) {
      bd = d;
      best = static_cast<int>(v);
    }
  }
  return best;
}

// Breadth-first accumulation of edge increments over a spanning tree, then
// edge-midpoint values from the first edge vertex.
template <class EdgeIncrement>
std::vector<double> tree_accumulate(const TriangleMesh& m, int root, int degree, EdgeIncrement&& inc) {
  const std::size_t nv = m.num_vertices();
  std::vector<double> val(nv + (degree == 2 ? m.num_edges() : 0), 0.0);
  std::vector<char> seen(nv, 0);
  const auto adj = vertex_neighbours(m);
  std::queue<int> q;
  q.push(root);
  seen[root] = 1;
  while (!q.empty()) {
    const int v = q.front();
    q.pop();
    for (int e : adj[v]) {
      const auto& ed = m.edges()[e];
      const int w = ed[0] == v ? ed[1] : ed[0];
      if (seen[w]) continue;
      const double full = inc(static_cast<std::size_t>(e), 1.0);
      val[w] = val[v] + (ed[0] == v ? full : -full);
      seen[w] = 1;
      q.push(w);
    }
  }
  for (std::size_t v = 0; v < nv; ++v)
    if (!seen[v]) throw PreconditionError("mesh is not connected");
  if (degree == 2)
    for (std::size_t e = 0; e < m.num_edges(); ++e) val[nv + e] = val[m.edges()[e][0]] + inc(e, 0.5);
  return val;
}

StreamField poisson_stream(const VectorField& u) {
  const MeshPtr& mesh = u.space().mesh;
  const FESpace sp{mesh, 2, false};
  const std::vector<char> fixed = p2_boundary_nodes(sp);
  std::vector<int> index(sp.size(), -1);
  int nfree = 0;
  for (std::size_t i = 0; i < sp.size(); ++i)
    if (!fixed[i]) index[i] = nfree++;

  std::vector<Eigen::Triplet<double>> trip;
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(nfree);
  const auto& kq = triangle_quadrature(2);
  const auto& fq = triangle_quadrature(u.space().degree + 1);
  for (std::size_t t = 0; t < mesh->num_triangles(); ++t) {
    const ElementGeometry g = element_geometry(*mesh, t);
    const auto d = sp.dofs(t);
    double ke[6][6] = {};
    for (const QuadPoint& q : kq) {
      const auto grad = basis_gradients(2, q.bary, g);
      for (int a = 0; a < 6; ++a)
        for (int b = 0; b < 6; ++b) ke[a][b] += q.weight * g.area * dot(grad[a], grad[b]);
    }
    double fe[6] = {};
    for (const QuadPoint& q : fq) {
      const auto grad = basis_gradients(2, q.bary, g);
      const Vec2 val = u.value(t, q.bary);
      for (int a = 0; a < 6; ++a) fe[a] += q.weight * g.area * (val.x * grad[a].y - val.y * grad[a].x);
    }
    for (int a = 0; a < 6; ++a) {
      const int ia = index[d[a]];
      if (ia < 0) continue;
      rhs[ia] += fe[a];
      for (int b = 0; b < 6; ++b) {
        const int ib = index[d[b]];
        if (ib >= 0) trip.emplace_back(ia, ib, ke[a][b]);
      }
    }
  }
  ScalarField psi = ScalarField::zeros(sp);
  if (nfree > 0) {
    Eigen::SparseMatrix<double> A(nfree, nfree);
    A.setFromTriplets(trip.begin(), trip.end());
    Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver(A);
    if (solver.info() != Eigen::Success) throw Error("stream function factorisation failed");
    Eigen::VectorXd x = solver.solve(rhs);
    for (int it = 0; it < 3; ++it) {
      const Eigen::VectorXd r = rhs - A * x;
      x += solver.solve(r);
    }
    for (std::size_t i = 0; i < sp.size(); ++i)
      if (index[i] >= 0) psi.values()[i] = x[index[i]];
  }
  return {psi, 0.0};
}

StreamField path_stream(const VectorField& u, int root) {
  const MeshPtr& mesh = u.space().mesh;
  const FESpace sp{mesh, 2, false};
  std::vector<double> v = tree_accumulate(*mesh, root, 2, [&](std::size_t e, double f) {
    return stream_edge_integral(u, e, f);
  });
  return {ScalarField(sp, std::move(v)), 0.0};
}

double h1_difference_dg(const VectorField& a, const VectorField& b, const ElementMask& mask = {}) {
  const int deg = std::max(a.space().degree, b.space().degree);
  const FESpace w{a.space().mesh, deg, true};
  return h1_norm(convert(a, w) - convert(b, w), mask);
}

VectorField to_space(const VectorField& f, const FESpace& w) { return f.space().same_as(w) ? f : convert(f, w); }

}  // namespace

// ---------------------------------------------------------------------------
// Curl and stream functions

VectorField curl_of_stream(const ScalarField& psi) {
  if (psi.space().discontinuous) throw PreconditionError("curl_of_stream needs a continuous stream function");
  const MeshPtr& mesh = psi.space().mesh;
  VectorField u = VectorField::zeros(FESpace{mesh, 1, true});
  for (std::size_t t = 0; t < mesh->num_triangles(); ++t) {
    const ElementGeometry g = element_geometry(*mesh, t);
    for (int k = 0; k < 3; ++k) {
      const Vec2 grad = psi.gradient(t, local_nodes()[k], g);
      u.x.values()[3 * t + k] = grad.y;
      u.y.values()[3 * t + k] = -grad.x;
    }
  }
  return u;
}

StreamField stream_function(const VectorField& u, const StreamOptions& opts) {
  const TriangleMesh& m = u.mesh();
  if (m.num_holes() != 0)
    throw PreconditionError(
        "stream function needs a simply connected mesh; use periods_and_potential on multiply connected regions");
  const double res = weak_divergence_residual(u, true);
  if (res > opts.divergence_tol) throw PreconditionError("nonzero divergence: weak residual " + fmt_value(res));
  int root = 0;
  if (opts.base) {
    root = nearest_vertex(m, *opts.base);
  } else {
    for (std::size_t v = 0; v < m.num_vertices(); ++v)
      if (m.boundary_vertex()[v]) {
        root = static_cast<int>(v);
        break;
      }
  }
  StreamField s = opts.method == StreamMethod::Poisson ? poisson_stream(u) : path_stream(u, root);
  double shift = 0.0;
  if (opts.base) {
    const MeshLocator loc(m);
    shift = evaluate(s.psi, loc, *opts.base, m.h());
  } else if (opts.method == StreamMethod::Path) {
    shift = s.psi.values()[root];
  }
  if (shift != 0.0)
    for (double& v : s.psi.values()) v -= shift;
  s.base_constant = shift;
  return s;
}

// ---------------------------------------------------------------------------
// Decompositions

namespace {

DecompositionResult assemble_pieces(const VectorField& u, const StreamField& stream, const std::vector<Region>& regions,
                                    const std::vector<int>& component, const std::vector<double>& constants,
                                    const Region& inner, const PartitionOptions& popts) {
  const ScalarField& psi = stream.psi;
  const FESpace& sp = psi.space();
  const TriangleMesh& mesh = *sp.mesh;
  const std::vector<CutoffFunction> chi = build_partition_of_unity(regions, inner, sp, popts);

  DecompositionResult r;
  r.stream = stream;
  r.validity = inner;
  const double un = h1_norm(u);
  for (std::size_t j = 0; j < regions.size(); ++j) {
    const int c = component.empty() ? -1 : component[j];
    const double shift = c >= 0 ? constants[c] : 0.0;
    ScalarField sj = ScalarField::zeros(sp);
    for (std::size_t i = 0; i < sp.size(); ++i) {
      const double x = chi[j].chi.values()[i];
      if (x != 0.0) sj.values()[i] = x * (psi.values()[i] - shift);
    }
    DecompositionPiece p;
    p.u = curl_of_stream(sj);
    p.stream = std::move(sj);
    p.cutoff = chi[j].chi;
    p.region = regions[j];
    p.component = c;
    p.h1_norm = h1_norm(p.u);
    p.divergence_residual = weak_divergence_residual(p.u, true);
    r.constant_estimate = std::max(r.constant_estimate, un > 0.0 ? p.h1_norm / un : 0.0);
    r.pieces.push_back(std::move(p));
  }

  const std::vector<Vec2> nodes = sp.nodes();
  std::vector<char> node_in(nodes.size());
  for (std::size_t i = 0; i < nodes.size(); ++i) node_in[i] = inner.contains(nodes[i]);
  r.validity_elements.assign(mesh.num_triangles(), 0);
  for (std::size_t t = 0; t < mesh.num_triangles(); ++t) {
    const auto d = sp.dofs(t);
    bool all = true;
    for (int k = 0; k < 6; ++k) all = all && node_in[d[k]];
    r.validity_elements[t] = all;
  }

  const double scale = std::max(u.max_abs(), 1e-300);
  for (std::size_t t = 0; t < mesh.num_triangles(); ++t) {
    if (!r.validity_elements[t]) continue;
    for (int k = 0; k < 3; ++k) {
      Vec2 s{};
      for (const DecompositionPiece& p : r.pieces) s += p.u.value(t, local_nodes()[k]);
      const Vec2 target = u.value(t, local_nodes()[k]);
      r.identity_error = std::max(r.identity_error, norm(s - target) / scale);
    }
  }
  r.projection_error = un > 0.0 ? h1_difference_dg(u, curl_of_stream(psi)) / un : 0.0;
  return r;
}

// Union of bands {x : dist(x, G_i) < w_i} about point sets G_i.
class BandShape final : public RegionShape {
 public:
  BandShape(std::vector<NearestPointIndex> sets, std::vector<double> widths)
      : sets_(std::move(sets)), widths_(std::move(widths)) {}
  double depth(Vec2 p) const override {
    double d = -kInf;
    for (std::size_t i = 0; i < sets_.size(); ++i) d = std::max(d, widths_[i] - sets_[i].distance(p));
    return d;
  }
  BBox bbox() const override { return BBox{}; }
  void boundary_samples(double, std::vector<Vec2>&) const override {}
  std::string describe() const override {
    std::ostringstream s;
    s << "boundary band(widths";
    for (double w : widths_) s << " " << w;
    s << ")";
    return s.str();
  }

 private:
  std::vector<NearestPointIndex> sets_;
  std::vector<double> widths_;
};

PartitionOptions with_clip(PartitionOptions p, const MeshPtr& mesh) {
  if (!p.clip.valid()) p.clip = mesh_region(mesh);
  return p;
}

}  // namespace

DecompositionResult decompose(const VectorField& u, const std::vector<Region>& regions, const Region& inner,
                              const DecomposeOptions& opts) {
  const StreamField s = stream_function(u, opts.stream);
  return assemble_pieces(u, s, regions, {}, {}, inner, with_clip(opts.partition, u.space().mesh));
}

DecompositionResult decompose_covering(const VectorField& u, const std::vector<Region>& covering, double R,
                                       const DecomposeOptions& opts) {
  for (std::size_t j = 0; j < covering.size(); ++j) {
    const BBox b = covering[j].bbox();
    for (Vec2 c : {b.lo, b.hi, Vec2{b.lo.x, b.hi.y}, Vec2{b.hi.x, b.lo.y}})
      if (!(norm(c) < R))
        throw PreconditionError("covering region " + std::to_string(j) + " is not inside the ball of radius " +
                                fmt_value(R));
  }
  const StreamField s = stream_function(u, opts.stream);
  const Region inner = mesh_region(u.space().mesh);
  PartitionOptions p = opts.partition;
  p.clip = Region();
  return assemble_pieces(u, s, covering, {}, {}, inner, p);
}

ZeroSet ZeroSet::inside(const ClassCDomain& dom, const std::string& name) {
  auto d = std::make_shared<const ClassCDomain>(dom);
  return {[d](Vec2 p) { return d->contains(p); }, [d](Vec2 p) { return std::abs(d->depth(p)); },
          dom.boundary_polyline(), name};
}

ZeroSet ZeroSet::outside(const ClassCDomain& dom, const std::string& name) {
  auto d = std::make_shared<const ClassCDomain>(dom);
  return {[d](Vec2 p) { return !d->contains(p); }, [d](Vec2 p) { return std::abs(d->depth(p)); },
          dom.boundary_polyline(), name};
}

ElementMask elements_in(const TriangleMesh& mesh, const std::function<bool(Vec2)>& inside,
                        const std::function<double(Vec2)>& signed_depth) {
  ElementMask mask(mesh.num_triangles(), 0);
  for (std::size_t t = 0; t < mesh.num_triangles(); ++t) {
    const auto& tri = mesh.triangles()[t];
    const Vec2 a = mesh.vertices()[tri[0]], b = mesh.vertices()[tri[1]], c = mesh.vertices()[tri[2]];
    if (!inside((a + b + c) / 3.0)) continue;
    const double tol = 0.01 * std::max({distance(a, b), distance(b, c), distance(c, a)});
    bool ok = true;
    for (Vec2 v : {a, b, c}) ok = ok && signed_depth(v) >= -tol;
    mask[t] = ok;
  }
  return mask;
}

DecompositionResult localized_decompose(const VectorField& u, const std::vector<ClassCDomain>& obstacle,
                                        const std::vector<Region>& regions, const LocalizeOptions& opts) {
  std::vector<ZeroSet> zs;
  for (std::size_t i = 0; i < obstacle.size(); ++i) zs.push_back(ZeroSet::inside(obstacle[i], "obstacle " + std::to_string(i)));
  return localized_decompose(u, zs, regions, opts);
}

DecompositionResult localized_decompose(const VectorField& u, const std::vector<ZeroSet>& zero_sets,
                                        const std::vector<Region>& regions, const LocalizeOptions& opts) {
  if (zero_sets.empty()) throw PreconditionError("localized decomposition needs at least one obstacle component");
  if (regions.empty()) throw PreconditionError("localized decomposition needs at least one region");
  const MeshPtr& mesh = u.space().mesh;
  const TriangleMesh& m = *mesh;

  // Elements of each component; u must vanish there.
  std::vector<ElementMask> comp(zero_sets.size());
  const double uscale = u.max_abs();
  for (std::size_t i = 0; i < zero_sets.size(); ++i) {
    const ZeroSet& z = zero_sets[i];
    comp[i] = elements_in(m, z.contains, [&](Vec2 p) { return z.contains(p) ? z.boundary_distance(p) : -z.boundary_distance(p); });
    if (std::count(comp[i].begin(), comp[i].end(), 1) == 0)
      throw PreconditionError(z.name + " contains no mesh element");
    double worst = 0.0;
    for (std::size_t t = 0; t < m.num_triangles(); ++t) {
      if (!comp[i][t]) continue;
      for (int k = 0; k < u.space().local_size(); ++k) worst = std::max(worst, norm(u.value(t, local_nodes()[k])));
    }
    if (worst > opts.vanish_tol * uscale)
      throw PreconditionError("u does not vanish on " + z.name + ": max |u| = " + fmt_value(worst));
  }

  const StreamField stream = stream_function(u, opts.stream);
  const ScalarField& psi = stream.psi;
  const FESpace& sp = psi.space();
  const std::vector<Vec2> nodes = sp.nodes();

  // Per-component gauge constants from the plateau of psi.
  std::vector<double> constants(zero_sets.size()), spread(zero_sets.size());
  for (std::size_t i = 0; i < zero_sets.size(); ++i) {
    std::vector<char> used(sp.size(), 0);
    for (std::size_t t = 0; t < m.num_triangles(); ++t)
      if (comp[i][t]) {
        const auto d = sp.dofs(t);
        for (int k = 0; k < 6; ++k) used[d[k]] = 1;
      }
    double sum = 0.0, sum2 = 0.0;
    int n = 0;
    for (std::size_t k = 0; k < sp.size(); ++k)
      if (used[k]) {
        sum += psi.values()[k];
        ++n;
      }
    const double mean = sum / n;
    for (std::size_t k = 0; k < sp.size(); ++k)
      if (used[k]) sum2 += (psi.values()[k] - mean) * (psi.values()[k] - mean);
    constants[i] = mean;
    spread[i] = std::sqrt(sum2 / n);
  }

  // Component met by each region.
  std::vector<int> component(regions.size(), -1);
  for (std::size_t j = 0; j < regions.size(); ++j) {
    for (std::size_t i = 0; i < zero_sets.size(); ++i) {
      bool meets = false;
      for (Vec2 p : zero_sets[i].boundary)
        if (regions[j].contains(p)) {
          meets = true;
          break;
        }
      for (std::size_t t = 0; !meets && t < m.num_triangles(); ++t) {
        if (!comp[i][t]) continue;
        const auto& tri = m.triangles()[t];
        for (int k = 0; k < 3 && !meets; ++k) meets = regions[j].contains(m.vertices()[tri[k]]);
      }
      if (!meets) continue;
      if (component[j] >= 0)
        throw PreconditionError("region " + std::to_string(j) + " meets " + zero_sets[component[j]].name + " and " +
                                zero_sets[i].name + "; refine the covering");
      component[j] = static_cast<int>(i);
    }
  }

  // Validity set: a band of width w_i about each component boundary (or its
  // part inside gamma), covered with margin by that component's regions only.
  const PartitionOptions popts = with_clip(opts.partition, mesh);
  const double h = m.h();
  const double offset = partition_offset(h, popts);
  const double collar = popts.collar > 0.0 ? popts.collar : popts.transition;
  // Band nodes need sum >= 1/2 of the raw cutoffs; collar nodes a smaller floor.
  const double need = offset + 0.5 * popts.transition;
  const auto dist = cut_distances(regions, nodes, h, popts);
  std::vector<NearestPointIndex> gamma_index;
  std::vector<double> widths;
  for (std::size_t i = 0; i < zero_sets.size(); ++i) {
    std::vector<Vec2> g;
    for (Vec2 p : zero_sets[i].boundary)
      if (!opts.gamma.valid() || opts.gamma.depth(p) >= -1e-12) g.push_back(p);
    if (g.empty()) throw PreconditionError("gamma does not meet the boundary of " + zero_sets[i].name);
    gamma_index.emplace_back(std::move(g));
    double w = opts.band;
    Vec2 culprit{};
    for (std::size_t n = 0; n < nodes.size(); ++n) {
      const double gd = gamma_index[i].distance(nodes[n]);
      if (gd >= w + collar) continue;
      double best = 0.0;
      bool foreign = false;
      for (std::size_t j = 0; j < regions.size(); ++j) {
        if (component[j] == static_cast<int>(i)) best = std::max(best, dist[j][n]);
        else if (dist[j][n] > offset) foreign = true;
      }
      double limit = w;
      if (best < need) limit = gd;
      if (best < offset + 0.25 * popts.transition) limit = gd - collar;
      if (foreign) limit = std::min(limit, gd);
      limit -= 1e-9 * h;
      if (limit < w) {
        w = limit;
        culprit = nodes[n];
      }
    }
    if (!(w > 0.5 * h))
      throw PreconditionError("regions do not cover the boundary of " + zero_sets[i].name + " near " +
                              fmt_point(culprit));
    widths.push_back(w);
  }

  const Region band(std::make_shared<BandShape>(std::move(gamma_index), widths));
  DecompositionResult r = assemble_pieces(u, stream, regions, component, constants, band, popts);
  r.gauge_constants = constants;
  r.plateau_spread = spread;
  for (std::size_t i = 0; i < zero_sets.size(); ++i)
    for (const DecompositionPiece& p : r.pieces)
      for (std::size_t t = 0; t < m.num_triangles(); ++t) {
        if (!comp[i][t]) continue;
        for (int k = 0; k < 3; ++k) r.obstacle_max = std::max(r.obstacle_max, norm(p.u.value(t, local_nodes()[k])));
      }
  return r;
}

// ---------------------------------------------------------------------------
// Periods and potentials

double path_integral(const OneForm& tau, const std::vector<Vec2>& path, bool closed) {
  double s = 0.0;
  const std::size_t n = path.size();
  if (n < 2) return 0.0;
  const std::size_t segs = closed ? n : n - 1;
  for (std::size_t i = 0; i < segs; ++i) s += segment_integral(tau, path[i], path[(i + 1) % n]);
  return s;
}

OneForm winding_form(Vec2 c) {
  return [c](Vec2 p) {
    const Vec2 d = p - c;
    const double r2 = norm2(d);
    return Vec2{-d.y, d.x} / (2.0 * kPi * r2);
  };
}

double closedness_defect(const OneForm& tau, const TriangleMesh& mesh) {
  double worst = 0.0;
  for (std::size_t t = 0; t < mesh.num_triangles(); ++t) {
    const auto& tri = mesh.triangles()[t];
    const std::vector<Vec2> loop{mesh.vertices()[tri[0]], mesh.vertices()[tri[1]], mesh.vertices()[tri[2]]};
    worst = std::max(worst, std::abs(path_integral(tau, loop, true)) / mesh.triangle_area(t));
  }
  return worst;
}

namespace {

// Boundary loops of a mesh as closed vertex polygons.
std::vector<std::vector<Vec2>> boundary_loops(const TriangleMesh& m) {
  std::map<int, int> next;
  for (std::size_t e = 0; e < m.num_edges(); ++e) {
    if (m.edge_triangles()[e][1] >= 0) continue;
    const int t = m.edge_triangles()[e][0];
    const auto& tri = m.triangles()[t];
    const int a = m.edges()[e][0], b = m.edges()[e][1];
    // Orient along the triangle so the mesh lies to the left.
    for (int k = 0; k < 3; ++k) {
      if (tri[k] == a && tri[(k + 1) % 3] == b) next[a] = b;
      if (tri[k] == b && tri[(k + 1) % 3] == a) next[b] = a;
    }
  }
  std::vector<std::vector<Vec2>> loops;
  std::map<int, char> done;
  for (const auto& [start, unused] : next) {
    if (done[start]) continue;
    std::vector<Vec2> loop;
    int v = start;
    while (!done[v]) {
      done[v] = 1;
      loop.push_back(m.vertices()[v]);
      v = next.at(v);
    }
    loops.push_back(std::move(loop));
  }
  return loops;
}

double polygon_area(const std::vector<Vec2>& p) {
  double a = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) a += cross(p[i], p[(i + 1) % p.size()]);
  return 0.5 * a;
}

Vec2 polygon_centroid(const std::vector<Vec2>& p) {
  double a = 0.0;
  Vec2 c{};
  for (std::size_t i = 0; i < p.size(); ++i) {
    const Vec2 q0 = p[i], q1 = p[(i + 1) % p.size()];
    const double w = cross(q0, q1);
    a += w;
    c += (q0 + q1) * w;
  }
  return c / (3.0 * a);
}

}  // namespace

PeriodPotential periods_and_potential(const OneForm& tau, const MeshPtr& region,
                                      const std::vector<std::vector<Vec2>>& loops, const PeriodOptions& opts) {
  const TriangleMesh& m = *region;
  PeriodPotential out;
  const double defect = closedness_defect(tau, m);
  double scale = 0.0;
  for (Vec2 v : m.vertices()) scale = std::max(scale, norm(tau(v)));
  if (defect > opts.closed_tol * std::max(1.0, scale))
    throw PreconditionError("form is not closed: element circulation density " + fmt_value(defect));

  out.centers = opts.centers;
  if (out.centers.empty()) {
    auto bl = boundary_loops(m);
    std::size_t outer = 0;
    for (std::size_t i = 0; i < bl.size(); ++i)
      if (std::abs(polygon_area(bl[i])) > std::abs(polygon_area(bl[outer]))) outer = i;
    for (std::size_t i = 0; i < bl.size(); ++i)
      if (i != outer) out.centers.push_back(polygon_centroid(bl[i]));
  }
  const std::size_t k = out.centers.size();
  if (loops.size() != k)
    throw PreconditionError("need one loop per hole: " + std::to_string(k) + " holes, " +
                            std::to_string(loops.size()) + " loops");
  for (Vec2 c : out.centers) out.reference_forms.push_back(winding_form(c));

  Eigen::VectorXd c = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(k));
  if (k > 0) {
    Eigen::MatrixXd P(k, k);
    Eigen::VectorXd raw(k);
    for (std::size_t l = 0; l < k; ++l) {
      raw[l] = path_integral(tau, loops[l], true);
      for (std::size_t j = 0; j < k; ++j) P(l, j) = path_integral(out.reference_forms[j], loops[l], true);
    }
    Eigen::FullPivLU<Eigen::MatrixXd> lu(P);
    if (lu.rank() < static_cast<Eigen::Index>(k) || std::abs(lu.determinant()) < 0.5)
      throw PreconditionError("loops do not form a homology basis (singular period matrix)");
    c = lu.solve(raw);
  }
  out.periods.assign(c.data(), c.data() + k);
  const auto forms = out.reference_forms;
  const auto periods = out.periods;
  out.reduced = [tau, forms, periods](Vec2 p) {
    Vec2 v = tau(p);
    for (std::size_t j = 0; j < forms.size(); ++j) v -= forms[j](p) * periods[j];
    return v;
  };
  for (const auto& loop : loops)
    out.max_loop_residual = std::max(out.max_loop_residual, std::abs(path_integral(out.reduced, loop, true)));

  const int root = opts.base ? nearest_vertex(m, *opts.base) : 0;
  const OneForm red = out.reduced;
  std::vector<double> h = tree_accumulate(m, root, 2, [&](std::size_t e, double f) {
    const Vec2 a = m.vertices()[m.edges()[e][0]], b = m.vertices()[m.edges()[e][1]];
    return segment_integral(red, a, a + (b - a) * f);
  });
  out.potential = ScalarField(FESpace{region, 2, false}, std::move(h));

  auto loc = std::make_shared<MeshLocator>(m);
  const MeshPtr keep = region;
  const ScalarField pot = out.potential;
  for (const ClassCDomain& hole : opts.holes) {
    const double d = opts.strip_depth > 0.0 ? opts.strip_depth : 0.5 * hole.params().a;
    for (BoundaryStrip& s : boundary_strips(hole, d)) out.hull_strips.push_back(std::move(s));
  }
  const auto strips = out.hull_strips;
  out.in_hull = [loc, keep, strips](Vec2 p) {
    if (loc->locate(p) >= 0) return true;
    for (const BoundaryStrip& s : strips)
      if (s.in_strip(p)) return true;
    return false;
  };
  out.hull_potential = [loc, keep, strips, pot, red](Vec2 p) {
    if (loc->locate(p) >= 0) return evaluate(pot, *loc, p);
    for (const BoundaryStrip& s : strips) {
      if (!s.in_strip(p)) continue;
      const Vec2 st = s.chart.local_coordinates(p);
      const Vec2 top = s.point(st.x, s.depth);
      return evaluate(pot, *loc, top, keep->h()) - segment_integral(red, p, top);
    }
    throw PreconditionError("point " + fmt_point(p) + " is outside the hull");
  };
  return out;
}

PeriodPotential periods_and_potential(const VectorField& tau, const std::vector<std::vector<Vec2>>& loops,
                                      const PeriodOptions& opts) {
  const MeshPtr mesh = tau.space().mesh;
  auto loc = std::make_shared<MeshLocator>(*mesh);
  const VectorField f = tau;
  const double reach = mesh->h();
  const OneForm form = [loc, f, reach](Vec2 p) { return evaluate(f, *loc, p, reach); };
  return periods_and_potential(form, mesh, loops, opts);
}

// ---------------------------------------------------------------------------
// Shifts

double safe_shift_radius(const VectorField& u_j, const BoundaryStrip& strip) {
  const TriangleMesh& m = u_j.mesh();
  const Region v = strip.region(1.0);
  const double scale = u_j.max_abs();
  double gap = kInf;
  for (std::size_t t = 0; t < m.num_triangles(); ++t) {
    const auto d = u_j.space().dofs(t);
    bool nonzero = false;
    for (int k = 0; k < u_j.space().local_size(); ++k)
      nonzero = nonzero || std::hypot(u_j.x.values()[d[k]], u_j.y.values()[d[k]]) > 1e-14 * scale;
    if (!nonzero) continue;
    for (int k = 0; k < 3; ++k) gap = std::min(gap, std::max(0.0, v.depth(m.vertices()[m.triangles()[t][k]])));
  }
  return 0.25 * std::min(strip.depth, gap);
}

VectorField shift_field(const VectorField& u, double t, Vec2 v, double safe_radius) {
  if (t < 0.0 || t > safe_radius * (1.0 + 1e-12))
    throw PreconditionError("shift " + fmt_value(t) + " exceeds the safe radius " + fmt_value(safe_radius));
  if (t == 0.0) return u;
  const MeshLocator loc(u.mesh());
  VectorField out = VectorField::zeros(u.space());
  const std::vector<Vec2> nodes = u.space().nodes();
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const Vec2 val = evaluate(u, loc, nodes[i] - v * t);
    out.x.values()[i] = val.x;
    out.y.values()[i] = val.y;
  }
  return out;
}

VectorField shift_stream(const ScalarField& psi, double t, Vec2 v, double safe_radius) {
  if (t < 0.0 || t > safe_radius * (1.0 + 1e-12))
    throw PreconditionError("shift " + fmt_value(t) + " exceeds the safe radius " + fmt_value(safe_radius));
  if (t == 0.0) return curl_of_stream(psi);
  const MeshLocator loc(psi.mesh());
  ScalarField out = ScalarField::zeros(psi.space());
  const std::vector<Vec2> nodes = psi.space().nodes();
  for (std::size_t i = 0; i < nodes.size(); ++i) out.values()[i] = evaluate(psi, loc, nodes[i] - v * t);
  return curl_of_stream(out);
}

std::vector<double> shift_convergence(const VectorField& u, Vec2 v, const std::vector<double>& ts, double safe_radius,
                                      const ElementMask& mask) {
  std::vector<double> out;
  for (double t : ts) out.push_back(h1_difference_dg(shift_field(u, t, v, safe_radius), u, mask));
  return out;
}

std::vector<double> shift_convergence(const ScalarField& psi, Vec2 v, const std::vector<double>& ts,
                                      double safe_radius, const ElementMask& mask) {
  const VectorField base = curl_of_stream(psi);
  std::vector<double> out;
  for (double t : ts) out.push_back(h1_difference_dg(shift_stream(psi, t, v, safe_radius), base, mask));
  return out;
}

// ---------------------------------------------------------------------------
// Witnesses

namespace {

double trace_max(const VectorField& u) {
  const TriangleMesh& m = u.mesh();
  double worst = 0.0;
  for (std::size_t t = 0; t < m.num_triangles(); ++t) {
    const auto& tri = m.triangles()[t];
    for (int k = 0; k < 3; ++k)
      if (m.boundary_vertex()[tri[k]]) worst = std::max(worst, norm(u.value(t, local_nodes()[k])));
  }
  return worst;
}

}  // namespace

WitnessReport witness_space_identity(const VectorField& u, const ClassCDomain* obstacle, WitnessKind kind,
                                     const WitnessOptions& opts) {
  const MeshPtr& mesh = u.space().mesh;
  const TriangleMesh& m = *mesh;
  const double h = m.h();
  const double uscale = u.max_abs();
  const double tr = trace_max(u);
  if (tr > 1e-10 * uscale) throw PreconditionError("u has a nonzero trace: max |u| = " + fmt_value(tr));
  if (kind != WitnessKind::Whole && obstacle == nullptr) throw PreconditionError("witness needs an obstacle");

  WitnessReport rep;
  rep.kind = kind;
  const FESpace w{mesh, std::max(1, u.space().degree), true};
  const VectorField uw = to_space(u, w);

  if (kind == WitnessKind::Whole) {
    const StreamField s = stream_function(u, opts.stream);
    rep.decomposition.stream = s;
    BBox box;
    for (Vec2 v : m.vertices()) box.expand(v);
    const Vec2 c = (box.lo + box.hi) * 0.5;
    double radius = 0.0;
    for (Vec2 v : m.vertices()) radius = std::max(radius, distance(v, c));
    const MeshLocator loc(m);
    auto dilate = [&](double t) {
      ScalarField p = ScalarField::zeros(s.psi.space());
      const auto nodes = s.psi.space().nodes();
      for (std::size_t i = 0; i < nodes.size(); ++i) p.values()[i] = evaluate(s.psi, loc, c + (nodes[i] - c) * (1.0 + t));
      return curl_of_stream(p);
    };
    const double tmax = 0.25;
    ShiftTable tab;
    for (int i = 0; i < opts.table_size; ++i) {
      const double t = tmax * std::pow(0.5, i);
      tab.t.push_back(t);
      tab.h1_difference.push_back(h1_difference_dg(dilate(t), uw));
      if (i > 0 && !(tab.h1_difference[i] < tab.h1_difference[i - 1])) tab.decreasing = false;
    }
    rep.tables.push_back(tab);
    rep.shift = std::min(tmax, opts.shift_factor * h * h / std::max(radius * radius, 1e-300));
    rep.approximant = to_space(dilate(rep.shift), w);
    rep.remainder = VectorField::zeros(w);
  } else {
    const double d = opts.strip_depth > 0.0 ? opts.strip_depth : 0.5 * obstacle->params().a;
    const std::vector<BoundaryStrip> strips = boundary_strips(*obstacle, d);
    std::vector<Region> regions;
    for (const BoundaryStrip& s : strips) regions.push_back(s.region(1.0));
    LocalizeOptions lo;
    lo.stream = opts.stream;
    lo.band = d;
    lo.partition.offset = 0.25 * d;
    lo.partition.transition = 0.25 * d;
    lo.partition.softness = 0.5 * lo.partition.transition;
    const ZeroSet z = kind == WitnessKind::Exterior ? ZeroSet::inside(*obstacle, "the obstacle")
                                                    : ZeroSet::outside(*obstacle, "the complement of the domain");
    rep.decomposition = localized_decompose(u, std::vector<ZeroSet>{z}, regions, lo);

    VectorField sum = VectorField::zeros(w);
    for (const DecompositionPiece& p : rep.decomposition.pieces) sum += to_space(p.u, w);
    rep.remainder = uw - sum;

    const ElementMask domain_mask = [&] {
      ElementMask mk(m.num_triangles(), 1);
      const ElementMask zmask = elements_in(m, z.contains, [&](Vec2 p) {
        return z.contains(p) ? z.boundary_distance(p) : -z.boundary_distance(p);
      });
      for (std::size_t t = 0; t < mk.size(); ++t) mk[t] = !zmask[t];
      return mk;
    }();
    rep.approximant = rep.remainder;
    rep.shift = kInf;
    for (std::size_t j = 0; j < strips.size(); ++j) {
      const DecompositionPiece& p = rep.decomposition.pieces[j];
      const Vec2 v = kind == WitnessKind::Exterior ? strips[j].direction : -strips[j].direction;
      const double safe = safe_shift_radius(p.u, strips[j]);
      ShiftTable tab;
      tab.piece = static_cast<int>(j);
      for (int i = 0; i < opts.table_size; ++i) tab.t.push_back(safe * std::pow(0.5, i));
      tab.h1_difference = shift_convergence(p.stream, v, tab.t, safe, domain_mask);
      for (std::size_t i = 1; i < tab.t.size(); ++i)
        if (p.h1_norm > 0.0 && !(tab.h1_difference[i] < tab.h1_difference[i - 1])) tab.decreasing = false;
      rep.tables.push_back(std::move(tab));
      const double tj = std::min(safe, opts.shift_factor * h * h / d);
      rep.shift = std::min(rep.shift, tj);
      rep.approximant += to_space(shift_stream(p.stream, tj, v, safe), w);
    }
    rep.remainder_norm = h1_norm(rep.remainder, domain_mask);
    rep.distance = h1_norm(rep.approximant - uw, domain_mask);
    const double un = h1_norm(uw, domain_mask);
    rep.relative_distance = un > 0.0 ? rep.distance / un : 0.0;
    rep.divergence_residual = weak_divergence_residual(rep.approximant, true);
    // Distance from the approximant's nodal support to the forbidden set.
    const double ascale = rep.approximant.max_abs();
    rep.support_gap = kInf;
    for (std::size_t t = 0; t < m.num_triangles(); ++t) {
      const auto dd = w.dofs(t);
      bool nz = false;
      for (int k = 0; k < w.local_size(); ++k)
        nz = nz || std::hypot(rep.approximant.x.values()[dd[k]], rep.approximant.y.values()[dd[k]]) > 1e-12 * ascale;
      if (!nz) continue;
      for (int k = 0; k < 3; ++k) {
        const Vec2 q = m.vertices()[m.triangles()[t][k]];
        rep.support_gap = std::min(rep.support_gap, z.contains(q) ? 0.0 : z.boundary_distance(q));
      }
    }
    return rep;
  }
  rep.distance = h1_norm(rep.approximant - uw);
  const double un = h1_norm(uw);
  rep.relative_distance = un > 0.0 ? rep.distance / un : 0.0;
  rep.divergence_residual = weak_divergence_residual(rep.approximant, true);
  rep.support_gap = 0.0;
  return rep;
}

void write_decomposition(const std::string& dir, const DecompositionResult& r) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  nlohmann::json pieces = nlohmann::json::array();
  for (std::size_t j = 0; j < r.pieces.size(); ++j) {
    const DecompositionPiece& p = r.pieces[j];
    const std::string name = "piece_" + std::to_string(j) + ".csv";
    std::ofstream out(fs::path(dir) / name);
    if (!out) throw Error("cannot write " + (fs::path(dir) / name).string());
    write_field_csv(out, {&p.u.x, &p.u.y}, {"u1", "u2"});
    pieces.push_back({{"file", name},
                      {"region", p.region.describe()},
                      {"component", p.component},
                      {"h1_norm", p.h1_norm},
                      {"divergence_residual", p.divergence_residual}});
  }
  nlohmann::json summary{{"C", r.constant_estimate},
                         {"residuals", nlohmann::json::array()},
                         {"validity_region", r.validity.describe()},
                         {"identity_error", r.identity_error},
                         {"projection_error", r.projection_error},
                         {"gauge_constants", r.gauge_constants},
                         {"plateau_spread", r.plateau_spread},
                         {"obstacle_max", r.obstacle_max},
                         {"pieces", pieces}};
  for (const DecompositionPiece& p : r.pieces) summary["residuals"].push_back(p.divergence_residual);
  std::ofstream out(fs::path(dir) / "summary.json");
  if (!out) throw Error("cannot write summary in " + dir);
  out << summary.dump(2) << "\n";
}

}  // namespace divshape
