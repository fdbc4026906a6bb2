#include "divshape/fe.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <ostream>
#include <sstream>

#include "divshape/error.hpp"

namespace divshape {
namespace {

void require_same(const FESpace& a, const FESpace& b, const char* what) {
  if (!a.same_as(b)) throw PreconditionError(std::string(what) + ": fields live in different spaces");
}

std::vector<std::pair<double, double>> gauss_legendre_01(int n) {
  std::vector<std::pair<double, double>> out;
  for (int i = 1; i <= n; ++i) {
    double x = std::cos(kPi * (i - 0.25) / (n + 0.5));
    double dp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0, p1 = x;
      for (int k = 2; k <= n; ++k) {
        const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
      }
      if (n == 1) p0 = 1.0;
      dp = n * (x * p1 - p0) / (x * x - 1.0);
      const double dx = p1 / dp;
      x -= dx;
      if (std::abs(dx) < 1e-16) break;
    }
    double p0 = 1.0, p1 = x;
    for (int k = 2; k <= n; ++k) {
      const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
      p0 = p1;
      p1 = p2;
    }
    if (n == 1) p0 = 1.0;
    dp = n * (x * p1 - p0) / (x * x - 1.0);
    const double w = 2.0 / ((1.0 - x * x) * dp * dp);
    out.push_back({0.5 * (x + 1.0), 0.5 * w});
  }
  return out;
}

std::vector<QuadPoint> build_rule(int degree) {
  const int n = std::max(1, (degree + 3) / 2);
  const auto g = gauss_legendre_01(n);
  std::vector<QuadPoint> rule;
  for (const auto& [u, wu] : g)
    for (const auto& [v, wv] : g) {
      const double x = u, y = v * (1.0 - u);
      rule.push_back({{1.0 - x - y, x, y}, 2.0 * wu * wv * (1.0 - u)});
    }
  return rule;
}

double hat_h1_norm2(const TriangleMesh& mesh, std::vector<double>& out) {
  out.assign(mesh.num_vertices(), 0.0);
  for (std::size_t t = 0; t < mesh.num_triangles(); ++t) {
    const ElementGeometry g = element_geometry(mesh, t);
    for (int k = 0; k < 3; ++k)
      out[mesh.triangles()[t][k]] += g.area / 6.0 + norm2(g.grad_lambda[k]) * g.area;
  }
  return 0.0;
}

double smooth_step(double s) {
  if (s <= 0.0) return 0.0;
  if (s >= 1.0) return 1.0;
  const double a = std::exp(-1.0 / s), b = std::exp(-1.0 / (1.0 - s));
  return a / (a + b);
}

std::string fmt_node(std::size_t i, Vec2 p) {
  std::ostringstream s;
  s.precision(6);
  s << "node " << i << " at (" << p.x << ", " << p.y << ")";
  return s.str();
}

}  // namespace

// ---------------------------------------------------------------------------
// Spaces and geometry

std::size_t FESpace::size() const {
  if (discontinuous) return mesh->num_triangles() * static_cast<std::size_t>(local_size());
  return degree == 1 ? mesh->num_vertices() : mesh->num_vertices() + mesh->num_edges();
}

std::array<int, 6> FESpace::dofs(std::size_t t) const {
  std::array<int, 6> d{};
  const int ls = local_size();
  if (discontinuous) {
    for (int k = 0; k < ls; ++k) d[k] = static_cast<int>(t) * ls + k;
    return d;
  }
  const auto& tri = mesh->triangles()[t];
  for (int k = 0; k < 3; ++k) d[k] = tri[k];
  if (degree == 2) {
    const int nv = static_cast<int>(mesh->num_vertices());
    for (int k = 0; k < 3; ++k) d[3 + k] = nv + mesh->triangle_edges()[t][k];
  }
  return d;
}

Vec2 FESpace::node(std::size_t i) const {
  if (discontinuous) {
    const std::size_t t = i / local_size();
    const int k = static_cast<int>(i % local_size());
    return element_geometry(*mesh, t).map(local_nodes()[k]);
  }
  const std::size_t nv = mesh->num_vertices();
  if (i < nv) return mesh->vertices()[i];
  const auto& e = mesh->edges()[i - nv];
  return (mesh->vertices()[e[0]] + mesh->vertices()[e[1]]) * 0.5;
}

std::vector<Vec2> FESpace::nodes() const {
  std::vector<Vec2> out(size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = node(i);
  return out;
}

ElementGeometry element_geometry(const TriangleMesh& mesh, std::size_t t) {
  ElementGeometry g;
  const auto& v = mesh.triangles()[t];
  for (int k = 0; k < 3; ++k) g.p[k] = mesh.vertices()[v[k]];
  const double a2 = orient(g.p[0], g.p[1], g.p[2]);
  g.area = 0.5 * a2;
  for (int k = 0; k < 3; ++k) {
    const Vec2 q1 = g.p[(k + 1) % 3], q2 = g.p[(k + 2) % 3];
    g.grad_lambda[k] = Vec2{q1.y - q2.y, q2.x - q1.x} / a2;
  }
  return g;
}

const std::array<std::array<double, 3>, 6>& local_nodes() {
  static const std::array<std::array<double, 3>, 6> nodes = {{{1.0, 0.0, 0.0},
                                                              {0.0, 1.0, 0.0},
                                                              {0.0, 0.0, 1.0},
                                                              {0.5, 0.5, 0.0},
                                                              {0.0, 0.5, 0.5},
                                                              {0.5, 0.0, 0.5}}};
  return nodes;
}

std::array<double, 6> basis_values(int degree, const std::array<double, 3>& l) {
  std::array<double, 6> v{};
  if (degree == 1) {
    v[0] = l[0];
    v[1] = l[1];
    v[2] = l[2];
    return v;
  }
  for (int k = 0; k < 3; ++k) {
    v[k] = l[k] * (2.0 * l[k] - 1.0);
    v[3 + k] = 4.0 * l[k] * l[(k + 1) % 3];
  }
  return v;
}

std::array<Vec2, 6> basis_gradients(int degree, const std::array<double, 3>& l, const ElementGeometry& g) {
  std::array<Vec2, 6> d{};
  if (degree == 1) {
    for (int k = 0; k < 3; ++k) d[k] = g.grad_lambda[k];
    return d;
  }
  for (int k = 0; k < 3; ++k) {
    const int k1 = (k + 1) % 3;
    d[k] = g.grad_lambda[k] * (4.0 * l[k] - 1.0);
    d[3 + k] = (g.grad_lambda[k] * l[k1] + g.grad_lambda[k1] * l[k]) * 4.0;
  }
  return d;
}

const std::vector<QuadPoint>& triangle_quadrature(int degree) {
  static const std::vector<std::vector<QuadPoint>> rules = [] {
    std::vector<std::vector<QuadPoint>> r;
    for (int d = 0; d <= 24; ++d) r.push_back(build_rule(d));
    return r;
  }();
  return rules.at(static_cast<std::size_t>(std::clamp(degree, 0, 24)));
}

// ---------------------------------------------------------------------------
// Fields

ScalarField::ScalarField(FESpace space, std::vector<double> values) : space_(std::move(space)), values_(std::move(values)) {
  if (!space_.mesh) throw PreconditionError("field without a mesh");
  if (space_.degree != 1 && space_.degree != 2) throw PreconditionError("field degree must be 1 or 2");
  if (values_.size() != space_.size()) throw PreconditionError("field value count does not match node count");
}

ScalarField ScalarField::zeros(FESpace space) {
  const std::size_t n = space.size();
  return ScalarField(std::move(space), std::vector<double>(n, 0.0));
}

ScalarField ScalarField::interpolate(FESpace space, const std::function<double(Vec2)>& f) {
  ScalarField out = zeros(space);
  const std::vector<Vec2> nodes = space.nodes();
  for (std::size_t i = 0; i < nodes.size(); ++i) out.values_[i] = f(nodes[i]);
  return out;
}

double ScalarField::value(std::size_t t, const std::array<double, 3>& bary) const {
  const auto phi = basis_values(space_.degree, bary);
  const auto d = space_.dofs(t);
  double s = 0.0;
  for (int k = 0; k < space_.local_size(); ++k) s += values_[d[k]] * phi[k];
  return s;
}

Vec2 ScalarField::gradient(std::size_t t, const std::array<double, 3>& bary, const ElementGeometry& g) const {
  const auto dphi = basis_gradients(space_.degree, bary, g);
  const auto d = space_.dofs(t);
  Vec2 s{};
  for (int k = 0; k < space_.local_size(); ++k) s += dphi[k] * values_[d[k]];
  return s;
}

double ScalarField::max_abs() const {
  double m = 0.0;
  for (double v : values_) m = std::max(m, std::abs(v));
  return m;
}

ScalarField& ScalarField::operator+=(const ScalarField& o) {
  require_same(space_, o.space_, "field sum");
  for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += o.values_[i];
  return *this;
}

ScalarField& ScalarField::operator-=(const ScalarField& o) {
  require_same(space_, o.space_, "field difference");
  for (std::size_t i = 0; i < values_.size(); ++i) values_[i] -= o.values_[i];
  return *this;
}

ScalarField& ScalarField::operator*=(double s) {
  for (double& v : values_) v *= s;
  return *this;
}

ScalarField operator+(ScalarField a, const ScalarField& b) { return a += b; }
ScalarField operator-(ScalarField a, const ScalarField& b) { return a -= b; }
ScalarField operator*(double s, ScalarField a) { return a *= s; }

VectorField VectorField::interpolate(FESpace space, const std::function<Vec2(Vec2)>& f) {
  VectorField out = zeros(space);
  const std::vector<Vec2> nodes = space.nodes();
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const Vec2 v = f(nodes[i]);
    out.x.values()[i] = v.x;
    out.y.values()[i] = v.y;
  }
  return out;
}

double VectorField::max_abs() const {
  double m = 0.0;
  for (std::size_t i = 0; i < x.values().size(); ++i) m = std::max(m, std::hypot(x.values()[i], y.values()[i]));
  return m;
}

ScalarField convert(const ScalarField& f, const FESpace& target) {
  if (target.mesh != f.space().mesh) throw PreconditionError("convert: different meshes");
  if (target.degree < f.space().degree) throw PreconditionError("convert: target degree too low");
  if (!target.discontinuous && f.space().discontinuous)
    throw PreconditionError("convert: discontinuous field into a continuous space");
  ScalarField out = ScalarField::zeros(target);
  for (std::size_t t = 0; t < target.mesh->num_triangles(); ++t) {
    const auto d = target.dofs(t);
    for (int k = 0; k < target.local_size(); ++k) out.values()[d[k]] = f.value(t, local_nodes()[k]);
  }
  return out;
}

VectorField convert(const VectorField& f, const FESpace& target) { return {convert(f.x, target), convert(f.y, target)}; }

// ---------------------------------------------------------------------------
// Norms and integrals

namespace {

template <class F>
void for_each_element(const TriangleMesh& mesh, const ElementMask& mask, F&& f) {
  for (std::size_t t = 0; t < mesh.num_triangles(); ++t)
    if (mask.empty() || mask[t]) f(t);
}

double l2_sq(const ScalarField& f, const ElementMask& mask) {
  double s = 0.0;
  const auto& rule = triangle_quadrature(2 * f.space().degree);
  for_each_element(f.mesh(), mask, [&](std::size_t t) {
    const ElementGeometry g = element_geometry(f.mesh(), t);
    for (const QuadPoint& q : rule) {
      const double v = f.value(t, q.bary);
      s += q.weight * g.area * v * v;
    }
  });
  return s;
}

double semi_sq(const ScalarField& f, const ElementMask& mask) {
  double s = 0.0;
  const auto& rule = triangle_quadrature(2 * f.space().degree - 2);
  for_each_element(f.mesh(), mask, [&](std::size_t t) {
    const ElementGeometry g = element_geometry(f.mesh(), t);
    for (const QuadPoint& q : rule) s += q.weight * g.area * norm2(f.gradient(t, q.bary, g));
  });
  return s;
}

}  // namespace

double l2_norm(const ScalarField& f, const ElementMask& mask) { return std::sqrt(l2_sq(f, mask)); }
double h1_seminorm(const ScalarField& f, const ElementMask& mask) { return std::sqrt(semi_sq(f, mask)); }
double h1_norm(const ScalarField& f, const ElementMask& mask) { return std::sqrt(l2_sq(f, mask) + semi_sq(f, mask)); }
double l2_norm(const VectorField& f, const ElementMask& mask) { return std::sqrt(l2_sq(f.x, mask) + l2_sq(f.y, mask)); }
double h1_seminorm(const VectorField& f, const ElementMask& mask) {
  return std::sqrt(semi_sq(f.x, mask) + semi_sq(f.y, mask));
}
double h1_norm(const VectorField& f, const ElementMask& mask) {
  return std::sqrt(l2_sq(f.x, mask) + l2_sq(f.y, mask) + semi_sq(f.x, mask) + semi_sq(f.y, mask));
}

double integrate(const TriangleMesh& mesh, const std::function<double(Vec2)>& f, int degree, const ElementMask& mask) {
  double s = 0.0;
  const auto& rule = triangle_quadrature(degree);
  for_each_element(mesh, mask, [&](std::size_t t) {
    const ElementGeometry g = element_geometry(mesh, t);
    for (const QuadPoint& q : rule) s += q.weight * g.area * f(g.map(q.bary));
  });
  return s;
}

double weak_divergence_residual(const VectorField& u, bool interior_only) {
  const TriangleMesh& mesh = u.mesh();
  const double un = h1_norm(u);
  if (un == 0.0) return 0.0;
  std::vector<double> r(mesh.num_vertices(), 0.0), hat;
  hat_h1_norm2(mesh, hat);
  const auto& rule = triangle_quadrature(u.space().degree);
  for (std::size_t t = 0; t < mesh.num_triangles(); ++t) {
    const ElementGeometry g = element_geometry(mesh, t);
    Vec2 mean{};
    for (const QuadPoint& q : rule) mean += u.value(t, q.bary) * (q.weight * g.area);
    for (int k = 0; k < 3; ++k) r[mesh.triangles()[t][k]] += dot(mean, g.grad_lambda[k]);
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < r.size(); ++i) {
    if (interior_only && mesh.boundary_vertex()[i]) continue;
    worst = std::max(worst, std::abs(r[i]) / (un * std::sqrt(hat[i])));
  }
  return worst;
}

double evaluate(const ScalarField& f, const MeshLocator& loc, Vec2 p, double reach) {
  std::array<double, 3> bary{};
  const int t = reach > 0.0 ? loc.locate_near(p, reach, &bary) : loc.locate(p, &bary);
  return t < 0 ? 0.0 : f.value(static_cast<std::size_t>(t), bary);
}

Vec2 evaluate(const VectorField& f, const MeshLocator& loc, Vec2 p, double reach) {
  std::array<double, 3> bary{};
  const int t = reach > 0.0 ? loc.locate_near(p, reach, &bary) : loc.locate(p, &bary);
  return t < 0 ? Vec2{} : f.value(static_cast<std::size_t>(t), bary);
}

// ---------------------------------------------------------------------------
// Mesh-backed regions

namespace {

class MeshShape final : public RegionShape {
 public:
  explicit MeshShape(MeshPtr mesh) : mesh_(std::move(mesh)), loc_(*mesh_) {
    for (std::size_t e = 0; e < mesh_->num_edges(); ++e)
      if (mesh_->edge_triangles()[e][1] < 0) boundary_.push_back(mesh_->edges()[e]);
    for (Vec2 v : mesh_->vertices()) box_.expand(v);
  }
  double depth(Vec2 p) const override {
    double d = std::numeric_limits<double>::infinity();
    for (const auto& e : boundary_)
      d = std::min(d, segment_distance(p, mesh_->vertices()[e[0]], mesh_->vertices()[e[1]]));
    return loc_.locate(p) >= 0 ? d : -d;
  }
  BBox bbox() const override { return box_; }
  void boundary_samples(double spacing, std::vector<Vec2>& out) const override {
    for (const auto& e : boundary_) {
      const Vec2 a = mesh_->vertices()[e[0]], b = mesh_->vertices()[e[1]];
      const int n = std::max(1, static_cast<int>(std::ceil(distance(a, b) / spacing)));
      for (int i = 0; i < n; ++i) out.push_back(a + (b - a) * (static_cast<double>(i) / n));
    }
  }
  std::string describe() const override { return "mesh(" + std::to_string(mesh_->num_triangles()) + " triangles)"; }

 private:
  MeshPtr mesh_;
  MeshLocator loc_;
  std::vector<std::array<int, 2>> boundary_;
  BBox box_;
};

class NodeSetShape final : public RegionShape {
 public:
  explicit NodeSetShape(std::vector<Vec2> pts) : count_(pts.size()) {
    for (Vec2 v : pts) box_.expand(v);
    scale_ = std::max(1.0, std::max(box_.hi.x - box_.lo.x, box_.hi.y - box_.lo.y));
    index_ = NearestPointIndex(std::move(pts));
  }
  double depth(Vec2 p) const override {
    if (count_ == 0) return -1.0;
    return index_.distance(p) <= 1e-12 * scale_ ? 1.0 : -1.0;
  }
  BBox bbox() const override { return box_; }
  void boundary_samples(double, std::vector<Vec2>&) const override {}
  std::string describe() const override { return "node set(" + std::to_string(count_) + ")"; }

 private:
  std::size_t count_;
  BBox box_;
  double scale_ = 1.0;
  NearestPointIndex index_;
};

}  // namespace

Region mesh_region(const MeshPtr& mesh) { return Region(std::make_shared<MeshShape>(mesh)); }
Region node_set_region(std::vector<Vec2> points) { return Region(std::make_shared<NodeSetShape>(std::move(points))); }

// ---------------------------------------------------------------------------
// Partition of unity

double partition_offset(double h, const PartitionOptions& opts) { return std::max(opts.offset, h); }

namespace {

// Uniform bucket grid for radius queries over a fixed point set.
class PointGrid {
 public:
  PointGrid(const std::vector<Vec2>& pts, double cell) : pts_(pts), cell_(cell) {
    for (Vec2 p : pts_) box_.expand(p);
    if (pts_.empty()) return;
    nx_ = std::max(1, static_cast<int>(std::ceil(box_.width() / cell_)) + 1);
    ny_ = std::max(1, static_cast<int>(std::ceil(box_.height() / cell_)) + 1);
    buckets_.assign(static_cast<std::size_t>(nx_) * ny_, {});
    for (std::size_t i = 0; i < pts_.size(); ++i) buckets_[bucket(pts_[i])].push_back(i);
  }
  template <class F>
  void for_each_within(Vec2 p, double r, F&& f) const {
    if (pts_.empty()) return;
    const int i0 = std::max(0, static_cast<int>(std::floor((p.x - r - box_.lo.x) / cell_)));
    const int i1 = std::min(nx_ - 1, static_cast<int>(std::floor((p.x + r - box_.lo.x) / cell_)));
    const int j0 = std::max(0, static_cast<int>(std::floor((p.y - r - box_.lo.y) / cell_)));
    const int j1 = std::min(ny_ - 1, static_cast<int>(std::floor((p.y + r - box_.lo.y) / cell_)));
    for (int j = j0; j <= j1; ++j)
      for (int i = i0; i <= i1; ++i)
        for (std::size_t k : buckets_[static_cast<std::size_t>(j) * nx_ + i]) {
          const double d = distance(p, pts_[k]);
          if (d <= r) f(k, d);
        }
  }

 private:
  std::size_t bucket(Vec2 p) const {
    const int i = std::clamp(static_cast<int>(std::floor((p.x - box_.lo.x) / cell_)), 0, nx_ - 1);
    const int j = std::clamp(static_cast<int>(std::floor((p.y - box_.lo.y) / cell_)), 0, ny_ - 1);
    return static_cast<std::size_t>(j) * nx_ + i;
  }
  std::vector<Vec2> pts_;
  double cell_;
  BBox box_;
  int nx_ = 0, ny_ = 0;
  std::vector<std::vector<std::size_t>> buckets_;
};

// Soft minimum of a straight boundary seen from distance d: d - eps log(2 z e^z K1(z)), z = d / eps.
double flat_soft_min(double d, double eps, double* slope) {
  const double z = std::max(d / eps, 1e-12);
  double log_sum, ratio;
  if (z > 40.0) {
    // Asymptotic K_nu(z) e^z sqrt(2z/pi) = 1 + (4nu^2 - 1)/(8z) + (4nu^2 - 1)(4nu^2 - 9)/(2 (8z)^2)
    const double a0 = 1.0 - 1.0 / (8.0 * z) + 9.0 / (2.0 * 64.0 * z * z);
    const double a1 = 1.0 + 3.0 / (8.0 * z) - 15.0 / (2.0 * 64.0 * z * z);
    log_sum = std::log(2.0 * z * std::sqrt(kPi / (2.0 * z)) * a1);
    ratio = a0 / a1;
  } else {
    const double k1 = std::cyl_bessel_k(1.0, z);
    log_sum = std::log(2.0 * z * k1) + z;
    ratio = std::cyl_bessel_k(0.0, z) / k1;
  }
  if (slope) *slope = ratio;
  return d - eps * log_sum;
}

// Distance d whose flat-boundary soft minimum equals `soft`.
double flat_inverse(double soft, double eps, double guess) {
  if (soft <= flat_soft_min(0.0, eps, nullptr)) return 0.0;
  double lo = 0.0, hi = std::max(guess, eps);
  while (flat_soft_min(hi, eps, nullptr) < soft) hi *= 2.0;
  double d = std::clamp(guess, lo, hi);
  for (int it = 0; it < 60; ++it) {
    double slope = 0.0;
    const double g = flat_soft_min(d, eps, &slope) - soft;
    if (g > 0.0) hi = d; else lo = d;
    if (std::abs(g) < 1e-15 * std::max(1.0, d) || hi - lo < 1e-15) break;
    const double next = slope > 0.0 ? d - g / slope : 0.5 * (lo + hi);
    d = next > lo && next < hi ? next : 0.5 * (lo + hi);
  }
  return d;
}

}  // namespace

double partition_softness(const PartitionOptions& opts) {
  return opts.softness > 0.0 ? opts.softness : opts.transition / 4.0;
}

std::vector<std::vector<double>> cut_distances(const std::vector<Region>& regions, const std::vector<Vec2>& nodes,
                                               double h, const PartitionOptions& opts) {
  const double eps = partition_softness(opts);
  const double spacing = std::min(h / 8.0, eps / 4.0);
  const double smooth_until = partition_offset(h, opts) + opts.transition + 10.0 * eps;
  std::vector<std::vector<double>> dist(regions.size(), std::vector<double>(nodes.size(), 0.0));
  for (std::size_t j = 0; j < regions.size(); ++j) {
    // Cut boundary samples, de-duplicated, each weighted by its local spacing.
    std::vector<Vec2> cut;
    {
      std::vector<Vec2> raw;
      for (Vec2 p : regions[j].boundary_samples(spacing))
        if (!opts.clip.valid() || opts.clip.depth(p) > 1e-9) raw.push_back(p);
      const PointGrid g(raw, spacing);
      std::vector<char> drop(raw.size(), 0);
      for (std::size_t k = 0; k < raw.size(); ++k) {
        if (drop[k]) continue;
        cut.push_back(raw[k]);
        g.for_each_within(raw[k], 0.25 * spacing, [&](std::size_t o, double) {
          if (o != k) drop[o] = 1;
        });
      }
    }
    const NearestPointIndex index(cut);
    const PointGrid grid(cut, std::max(spacing, 4.0 * eps));
    std::vector<double> weight(cut.size(), spacing);
    for (std::size_t k = 0; k < cut.size(); ++k) {
      double nn = 1.5 * spacing;
      grid.for_each_within(cut[k], 1.5 * spacing, [&](std::size_t o, double d) {
        if (o != k) nn = std::min(nn, d);
      });
      weight[k] = std::max(0.25 * spacing, nn);
    }
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      if (!regions[j].contains(nodes[i])) continue;
      const double dmin = index.distance(nodes[i]);
      if (!(dmin < smooth_until)) {
        dist[j][i] = dmin;
        continue;
      }
      // Soft minimum of the sample distances: smooth across the medial axis.
      double sum = 0.0;
      grid.for_each_within(nodes[i], dmin + 30.0 * eps, [&](std::size_t k, double d) {
        sum += weight[k] / eps * std::exp(-(d - dmin) / eps);
      });
      dist[j][i] = sum > 0.0 ? flat_inverse(dmin - eps * std::log(sum), eps, dmin) : dmin;
    }
  }
  return dist;
}

std::vector<CutoffFunction> build_partition_of_unity(const std::vector<Region>& regions, const Region& inner,
                                                     const FESpace& space, const PartitionOptions& opts) {
  if (regions.empty()) throw PreconditionError("partition of unity needs at least one region");
  if (space.discontinuous) throw PreconditionError("cutoffs live in a continuous space");
  const double h = space.mesh->h();
  const double offset = partition_offset(h, opts);
  const double collar = opts.collar > 0.0 ? opts.collar : opts.transition;
  const std::vector<Vec2> nodes = space.nodes();
  const std::vector<std::vector<double>> dist = cut_distances(regions, nodes, h, opts);
  std::vector<std::vector<double>> raw(regions.size(), std::vector<double>(nodes.size(), 0.0));
  for (std::size_t j = 0; j < regions.size(); ++j)
    for (std::size_t i = 0; i < nodes.size(); ++i)
      if (dist[j][i] > 0.0) raw[j][i] = smooth_step((dist[j][i] - offset) / opts.transition);
  std::vector<CutoffFunction> out;
  for (const Region& r : regions) out.push_back({ScalarField::zeros(space), r});
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    double sum = 0.0;
    for (std::size_t j = 0; j < regions.size(); ++j) {
      sum += raw[j][i];
    }
    const double outside = std::max(0.0, -inner.depth(nodes[i]));
    const bool in_inner = outside == 0.0;
    if (in_inner && sum == 0.0)
      throw PreconditionError("partition margin violated: " + fmt_node(i, nodes[i]) + " of the inner region is not covered");
    // Background weight: 0 on the closure of the inner region, smoothly 1 a collar away.
    const double denom = sum + smooth_step(outside / collar);
    for (std::size_t j = 0; j < regions.size(); ++j) out[j].chi.values()[i] = raw[j][i] == 0.0 ? 0.0 : raw[j][i] / denom;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Extension and restriction

namespace {

// Maps every node of a field on a submesh to the corresponding node on the parent.
std::vector<int> parent_nodes(const FESpace& sub, const FESpace& parent) {
  const TriangleMesh& m = *sub.mesh;
  if (m.parent_vertex().empty()) throw PreconditionError("mesh is not a submesh");
  std::vector<int> map(sub.size(), -1);
  for (std::size_t t = 0; t < m.num_triangles(); ++t) {
    const auto ds = sub.dofs(t);
    const auto dp = parent.dofs(static_cast<std::size_t>(m.parent_triangle()[t]));
    for (int k = 0; k < sub.local_size(); ++k) map[ds[k]] = dp[k];
  }
  return map;
}

void check_submesh(const TriangleMesh& sub, const TriangleMesh& parent) {
  if (sub.parent_triangle().empty()) throw PreconditionError("mesh is not a submesh");
  for (std::size_t t = 0; t < sub.num_triangles(); ++t) {
    const int pt = sub.parent_triangle()[t];
    if (pt < 0 || static_cast<std::size_t>(pt) >= parent.num_triangles())
      throw PreconditionError("meshes are not compatible");
    for (int k = 0; k < 3; ++k)
      if (parent.triangles()[pt][k] != sub.parent_vertex()[sub.triangles()[t][k]])
        throw PreconditionError("meshes are not compatible");
  }
}

}  // namespace

ScalarField extend_by_zero(const ScalarField& u, const MeshPtr& target, double tol) {
  check_submesh(u.mesh(), *target);
  const FESpace ps{target, u.space().degree, u.space().discontinuous};
  const double scale = u.max_abs();
  // Nodes on obstacle-tagged edges must carry a zero trace.
  const TriangleMesh& m = u.mesh();
  double worst = 0.0;
  for (std::size_t t = 0; t < m.num_triangles(); ++t) {
    const auto d = u.space().dofs(t);
    for (int k = 0; k < 3; ++k) {
      if (m.edge_tags()[m.triangle_edges()[t][k]] != EdgeTag::Obstacle) continue;
      worst = std::max({worst, std::abs(u.values()[d[k]]), std::abs(u.values()[d[(k + 1) % 3]])});
      if (u.space().degree == 2) worst = std::max(worst, std::abs(u.values()[d[3 + k]]));
    }
  }
  if (worst > tol * scale) {
    std::ostringstream s;
    s << "nonzero trace on the obstacle boundary: max |u| = " << worst;
    throw PreconditionError(s.str());
  }
  const std::vector<int> map = parent_nodes(u.space(), ps);
  ScalarField out = ScalarField::zeros(ps);
  for (std::size_t i = 0; i < map.size(); ++i) out.values()[map[i]] = u.values()[i];
  return out;
}

VectorField extend_by_zero(const VectorField& u, const MeshPtr& target, double tol) {
  const double scale = u.max_abs();
  const double tx = u.x.max_abs() > 0.0 ? tol * scale / u.x.max_abs() : tol;
  const double ty = u.y.max_abs() > 0.0 ? tol * scale / u.y.max_abs() : tol;
  return {extend_by_zero(u.x, target, tx), extend_by_zero(u.y, target, ty)};
}

VectorField restrict_to(const VectorField& u, const MeshPtr& sub, double tol) {
  check_submesh(*sub, u.mesh());
  const FESpace ss{sub, u.space().degree, u.space().discontinuous};
  const std::vector<int> map = parent_nodes(ss, u.space());
  std::vector<char> kept_tri(u.mesh().num_triangles(), 0);
  for (int pt : sub->parent_triangle()) kept_tri[pt] = 1;
  const double scale = u.max_abs();
  double worst = 0.0;
  for (std::size_t t = 0; t < u.mesh().num_triangles(); ++t) {
    if (kept_tri[t]) continue;
    const auto d = u.space().dofs(t);
    for (int k = 0; k < u.space().local_size(); ++k)
      worst = std::max(worst, std::hypot(u.x.values()[d[k]], u.y.values()[d[k]]));
  }
  if (worst > tol * scale) {
    std::ostringstream s;
    s << "field does not vanish outside the submesh: max |u| = " << worst;
    throw PreconditionError(s.str());
  }
  VectorField out = VectorField::zeros(ss);
  for (std::size_t i = 0; i < map.size(); ++i) {
    out.x.values()[i] = u.x.values()[map[i]];
    out.y.values()[i] = u.y.values()[map[i]];
  }
  return out;
}

void write_field_csv(std::ostream& out, const std::vector<const ScalarField*>& components,
                     const std::vector<std::string>& names) {
  out << "node_id";
  for (const std::string& n : names) out << "," << n;
  out << "\n" << std::setprecision(17);
  const std::size_t n = components.empty() ? 0 : components.front()->values().size();
  for (std::size_t i = 0; i < n; ++i) {
    out << i;
    for (const ScalarField* c : components) out << "," << c->values()[i];
    out << "\n";
  }
}

}  // namespace divshape
