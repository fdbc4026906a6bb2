#include "divshape/mesh.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <iomanip>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "divshape/error.hpp"

namespace divshape {
namespace {

std::uint64_t edge_key(int a, int b) {
  if (a > b) std::swap(a, b);
  return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(a)) << 32) | static_cast<std::uint32_t>(b);
}

// Positive when d lies inside the circumcircle of the counter-clockwise triangle abc.
double incircle(Vec2 a, Vec2 b, Vec2 c, Vec2 d) {
  const double adx = a.x - d.x, ady = a.y - d.y;
  const double bdx = b.x - d.x, bdy = b.y - d.y;
  const double cdx = c.x - d.x, cdy = c.y - d.y;
  const double ad = adx * adx + ady * ady, bd = bdx * bdx + bdy * bdy, cd = cdx * cdx + cdy * cdy;
  return adx * (bdy * cd - bd * cdy) - ady * (bdx * cd - bd * cdx) + ad * (bdx * cdy - bdy * cdx);
}

Vec2 circumcenter(Vec2 a, Vec2 b, Vec2 c) {
  const Vec2 ab = b - a, ac = c - a;
  const double d = 2.0 * cross(ab, ac);
  const double ab2 = norm2(ab), ac2 = norm2(ac);
  return a + Vec2{(ac.y * ab2 - ab.y * ac2) / d, (ab.x * ac2 - ac.x * ab2) / d};
}

double min_angle(Vec2 a, Vec2 b, Vec2 c) {
  auto ang = [](Vec2 p, Vec2 q, Vec2 r) {
    const Vec2 u = q - p, v = r - p;
    return std::atan2(std::abs(cross(u, v)), dot(u, v));
  };
  return std::min({ang(a, b, c), ang(b, c, a), ang(c, a, b)});
}

struct Segment {
  int curve = 0;
  double t0 = 0.0, t1 = 0.0;  // unwrapped parameters, t1 > t0
};

// Incremental constrained Delaunay refinement (Bowyer-Watson insertion, Ruppert-style
// encroachment handling). Edge k of a triangle is opposite vertex k.
class Mesher {
 public:
  Mesher(std::vector<const BoundaryCurve*> curves, double h, const MeshOptions& opts)
      : curves_(std::move(curves)), h_(h), opts_(opts), cos_bad_(std::cos(opts.min_angle_deg * kPi / 180.0)) {}

  TriangleMesh run();

 private:
  struct Tri {
    std::array<int, 3> v{};
    std::array<int, 3> n{-1, -1, -1};
    int region = 0;
    bool alive = true;
  };
  struct Located {
    int tri = -1;
    bool blocked = false;
    std::uint64_t segment = 0;
  };

  Vec2 P(int i) const { return pts_[i]; }
  std::pair<int, int> edge_of(int t, int k) const { return {tris_[t].v[(k + 1) % 3], tris_[t].v[(k + 2) % 3]}; }
  bool is_segment(int a, int b) const { return segs_.count(edge_key(a, b)) != 0; }
  Vec2 curve_point(int curve, double t) const { return curves_[curve]->point(t - std::floor(t)); }

  int new_tri(const std::array<int, 3>& v, int region);
  Located locate(Vec2 p, int start, bool respect_segments) const;
  std::vector<int> edge_triangles(int a, int b) const;
  bool build_cavity(Vec2 p, const std::vector<int>& start, std::uint64_t split_key, std::vector<int>& cavity,
                    std::vector<std::array<int, 4>>& boundary) const;
  int insert(Vec2 p, const std::vector<int>& start, std::uint64_t split_key, bool has_split);
  int split_segment(std::uint64_t key);
  bool encroached(std::uint64_t key) const;
  bool bad(int t) const;
  void classify();
  void seed_interior();
  void refine();
  void check_budget() const;

  std::vector<const BoundaryCurve*> curves_;
  double h_;
  MeshOptions opts_;
  double cos_bad_;
  std::vector<Vec2> pts_;
  std::vector<Tri> tris_;
  std::vector<int> free_;
  std::vector<int> vtri_;
  std::unordered_map<std::uint64_t, Segment> segs_;
  std::deque<int> tri_queue_;
  std::deque<std::uint64_t> seg_queue_;
  int last_ = 0;
  double scale2_ = 1.0;
};

int Mesher::new_tri(const std::array<int, 3>& v, int region) {
  Tri t;
  t.v = v;
  t.region = region;
  int id;
  if (!free_.empty()) {
    id = free_.back();
    free_.pop_back();
    tris_[id] = t;
  } else {
    id = static_cast<int>(tris_.size());
    tris_.push_back(t);
  }
  for (int x : v) vtri_[x] = id;
  return id;
}

Mesher::Located Mesher::locate(Vec2 p, int start, bool respect_segments) const {
  int t = (start >= 0 && start < static_cast<int>(tris_.size()) && tris_[start].alive) ? start : -1;
  if (t < 0)
    for (std::size_t i = 0; i < tris_.size(); ++i)
      if (tris_[i].alive) {
        t = static_cast<int>(i);
        break;
      }
  const std::size_t max_steps = 4 * tris_.size() + 16;
  for (std::size_t step = 0; step < max_steps; ++step) {
    bool moved = false;
    for (int kk = 0; kk < 3; ++kk) {
      const int k = static_cast<int>((kk + step) % 3);
      const auto [a, b] = edge_of(t, k);
      if (orient(P(a), P(b), p) < 0.0) {
        if ((respect_segments && is_segment(a, b)) || tris_[t].n[k] < 0) return {t, true, edge_key(a, b)};
        t = tris_[t].n[k];
        moved = true;
        break;
      }
    }
    if (!moved) return {t, false, 0};
  }
  throw Error("mesh point location did not terminate");
}

std::vector<int> Mesher::edge_triangles(int a, int b) const {
  // Triangles incident to a, gathered by a flood over edges through a.
  std::vector<int> around, stack{vtri_[a]};
  std::unordered_set<int> seen{vtri_[a]};
  while (!stack.empty()) {
    const int t = stack.back();
    stack.pop_back();
    around.push_back(t);
    for (int k = 0; k < 3; ++k) {
      const auto [x, y] = edge_of(t, k);
      if (x != a && y != a) continue;
      const int nb = tris_[t].n[k];
      if (nb >= 0 && seen.insert(nb).second) stack.push_back(nb);
    }
  }
  std::vector<int> out;
  for (int t : around) {
    const auto& v = tris_[t].v;
    if (v[0] == b || v[1] == b || v[2] == b) out.push_back(t);
  }
  return out;
}

bool Mesher::build_cavity(Vec2 p, const std::vector<int>& start, std::uint64_t split_key, std::vector<int>& cavity,
                          std::vector<std::array<int, 4>>& boundary) const {
  std::unordered_set<int> in(start.begin(), start.end());
  std::vector<int> stack(start.begin(), start.end());
  while (!stack.empty()) {
    const int t = stack.back();
    stack.pop_back();
    for (int k = 0; k < 3; ++k) {
      const int nb = tris_[t].n[k];
      if (nb < 0 || in.count(nb)) continue;
      const auto [a, b] = edge_of(t, k);
      const std::uint64_t key = edge_key(a, b);
      if (key != split_key && segs_.count(key)) continue;
      const auto& w = tris_[nb].v;
      if (incircle(P(w[0]), P(w[1]), P(w[2]), p) > 0.0) {
        in.insert(nb);
        stack.push_back(nb);
      }
    }
  }
  const std::unordered_set<int> starts(start.begin(), start.end());
  while (true) {
    boundary.clear();
    int offender = -1;
    for (int t : in) {
      for (int k = 0; k < 3; ++k) {
        const int nb = tris_[t].n[k];
        if (nb >= 0 && in.count(nb)) continue;
        const auto [a, b] = edge_of(t, k);
        if (nb < 0 && edge_key(a, b) == split_key) continue;
        if (orient(P(a), P(b), p) <= 1e-14 * scale2_) {
          offender = t;
          break;
        }
        boundary.push_back({a, b, nb, t});
      }
      if (offender >= 0) break;
    }
    if (offender < 0) break;
    if (starts.count(offender)) return false;
    in.erase(offender);
  }
  cavity.assign(in.begin(), in.end());
  std::sort(cavity.begin(), cavity.end());
  std::sort(boundary.begin(), boundary.end());
  return true;
}

int Mesher::insert(Vec2 p, const std::vector<int>& start, std::uint64_t split_key, bool has_split) {
  std::vector<int> cavity;
  std::vector<std::array<int, 4>> boundary;
  if (!build_cavity(p, start, has_split ? split_key : ~std::uint64_t{0}, cavity, boundary)) return -1;
  const int m = static_cast<int>(pts_.size());
  pts_.push_back(p);
  vtri_.push_back(-1);
  for (int t : cavity) {
    tris_[t].alive = false;
    free_.push_back(t);
  }
  std::unordered_map<std::uint64_t, std::pair<int, int>> open;  // directed edge -> (tri, k)
  auto directed = [](int a, int b) {
    return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(a)) << 32) | static_cast<std::uint32_t>(b);
  };
  std::vector<int> created;
  for (const auto& e : boundary) {
    const int a = e[0], b = e[1], outer = e[2];
    const int id = new_tri({a, b, m}, tris_[e[3]].region);
    created.push_back(id);
    tris_[id].n[2] = outer;
    if (outer >= 0)
      for (int k = 0; k < 3; ++k) {
        const auto [x, y] = edge_of(outer, k);
        if ((x == b && y == a) || (x == a && y == b)) tris_[outer].n[k] = id;
      }
    // Edge 0 is (b, m), edge 1 is (m, a).
    const std::pair<std::uint64_t, std::uint64_t> mine[2] = {{directed(b, m), directed(m, b)},
                                                             {directed(m, a), directed(a, m)}};
    for (int k = 0; k < 2; ++k) {
      auto it = open.find(mine[k].second);
      if (it != open.end()) {
        tris_[id].n[k] = it->second.first;
        tris_[it->second.first].n[it->second.second] = id;
        open.erase(it);
      } else {
        open[mine[k].first] = {id, k};
      }
    }
  }
  last_ = created.front();
  for (int t : created) tri_queue_.push_back(t);
  for (int t : created)
    for (int k = 0; k < 3; ++k) {
      const auto [a, b] = edge_of(t, k);
      const std::uint64_t key = edge_key(a, b);
      if (segs_.count(key)) seg_queue_.push_back(key);
    }
  return m;
}

int Mesher::split_segment(std::uint64_t key) {
  const Segment s = segs_.at(key);
  const int a = static_cast<int>(key >> 32), b = static_cast<int>(key & 0xffffffffu);
  const double tm = 0.5 * (s.t0 + s.t1);
  const Vec2 p = curve_point(s.curve, tm);
  const std::vector<int> start = edge_triangles(a, b);
  if (start.empty()) throw Error("mesh segment lost during refinement");
  // Parameters increase from the vertex whose position matches t0.
  const int first = distance(P(a), curve_point(s.curve, s.t0)) <= distance(P(b), curve_point(s.curve, s.t0)) ? a : b;
  const int second = first == a ? b : a;
  const int m = insert(p, start, key, true);
  if (m < 0) throw Error("mesh segment split produced an invalid cavity");
  segs_.erase(key);
  segs_[edge_key(first, m)] = {s.curve, s.t0, tm};
  segs_[edge_key(m, second)] = {s.curve, tm, s.t1};
  seg_queue_.push_back(edge_key(first, m));
  seg_queue_.push_back(edge_key(m, second));
  return m;
}

bool Mesher::encroached(std::uint64_t key) const {
  const int a = static_cast<int>(key >> 32), b = static_cast<int>(key & 0xffffffffu);
  for (int t : edge_triangles(a, b))
    for (int x : tris_[t].v)
      if (x != a && x != b && dot(P(a) - P(x), P(b) - P(x)) < 0.0) return true;
  return false;
}

bool Mesher::bad(int t) const {
  const auto& v = tris_[t].v;
  const Vec2 a = P(v[0]), b = P(v[1]), c = P(v[2]);
  const double l2 = std::max({norm2(b - a), norm2(c - b), norm2(a - c)});
  if (l2 > h_ * h_) return true;
  return std::cos(min_angle(a, b, c)) > cos_bad_;
}

void Mesher::check_budget() const {
  if (pts_.size() > opts_.max_vertices) throw Error("mesh refinement exceeded the vertex budget");
}

void Mesher::classify() {
  std::vector<int> comp(tris_.size(), -1);
  int ncomp = 0;
  std::vector<int> region_of;
  for (std::size_t s = 0; s < tris_.size(); ++s) {
    if (!tris_[s].alive || comp[s] >= 0) continue;
    std::vector<int> stack{static_cast<int>(s)}, members;
    comp[s] = ncomp;
    while (!stack.empty()) {
      const int t = stack.back();
      stack.pop_back();
      members.push_back(t);
      for (int k = 0; k < 3; ++k) {
        const int nb = tris_[t].n[k];
        if (nb < 0 || comp[nb] >= 0) continue;
        const auto [a, b] = edge_of(t, k);
        if (is_segment(a, b)) continue;
        comp[nb] = ncomp;
        stack.push_back(nb);
      }
    }
    int big = members.front();
    double big_area = -1.0;
    for (int t : members) {
      const auto& v = tris_[t].v;
      const double ar = orient(P(v[0]), P(v[1]), P(v[2]));
      if (ar > big_area) {
        big_area = ar;
        big = t;
      }
    }
    const auto& v = tris_[big].v;
    const Vec2 c = (P(v[0]) + P(v[1]) + P(v[2])) / 3.0;
    int region = -1;
    bool super = false;
    for (int t : members)
      for (int x : tris_[t].v) super = super || x < 3;
    if (!super && curves_[0]->inside(c)) {
      region = 0;
      for (std::size_t i = 1; i < curves_.size(); ++i)
        if (curves_[i]->inside(c)) region = static_cast<int>(i);
      if (region > 0 && !opts_.mesh_holes) region = -1;
    }
    for (int t : members) tris_[t].region = region;
    ++ncomp;
  }
  for (std::size_t t = 0; t < tris_.size(); ++t) {
    if (!tris_[t].alive || tris_[t].region >= 0) continue;
    tris_[t].alive = false;
    free_.push_back(static_cast<int>(t));
  }
  for (auto& t : tris_) {
    if (!t.alive) continue;
    for (int k = 0; k < 3; ++k)
      if (t.n[k] >= 0 && !tris_[t.n[k]].alive) t.n[k] = -1;
  }
  for (std::size_t t = 0; t < tris_.size(); ++t)
    if (tris_[t].alive)
      for (int x : tris_[t].v) vtri_[x] = static_cast<int>(t);
  for (std::size_t t = 0; t < tris_.size(); ++t)
    if (tris_[t].alive) last_ = static_cast<int>(t);
}

// Hexagonal lattice of spacing close to h, kept away from the boundary.
void Mesher::seed_interior() {
  const double s = 0.95 * h_;
  std::vector<Vec2> bpts;
  BBox box;
  for (std::size_t i = 3; i < pts_.size(); ++i) {
    bpts.push_back(pts_[i]);
    box.expand(pts_[i]);
  }
  const NearestPointIndex index(bpts);
  const double dy = s * std::sqrt(3.0) / 2.0;
  const int ny = static_cast<int>(box.height() / dy) + 1;
  const int nx = static_cast<int>(box.width() / s) + 2;
  for (int j = 1; j < ny; ++j) {
    for (int i = 0; i < nx; ++i) {
      const Vec2 p{box.lo.x + (i + 0.5 * (j % 2)) * s, box.lo.y + j * dy};
      if (!curves_[0]->inside(p) || index.distance(p) < 0.6 * s) continue;
      bool in_hole = false;
      for (std::size_t c = 1; c < curves_.size(); ++c) in_hole = in_hole || curves_[c]->inside(p);
      if (in_hole && !opts_.mesh_holes) continue;
      const Located loc = locate(p, last_, true);
      if (loc.blocked) continue;
      insert(p, {loc.tri}, 0, false);
    }
  }
}

void Mesher::refine() {
  tri_queue_.clear();
  seg_queue_.clear();
  for (const auto& [key, s] : segs_) seg_queue_.push_back(key);
  std::sort(seg_queue_.begin(), seg_queue_.end());
  for (std::size_t t = 0; t < tris_.size(); ++t)
    if (tris_[t].alive) tri_queue_.push_back(static_cast<int>(t));
  while (!seg_queue_.empty() || !tri_queue_.empty()) {
    check_budget();
    if (!seg_queue_.empty()) {
      const std::uint64_t key = seg_queue_.front();
      seg_queue_.pop_front();
      if (segs_.count(key) && encroached(key)) split_segment(key);
      continue;
    }
    const int t = tri_queue_.front();
    tri_queue_.pop_front();
    if (!tris_[t].alive || !bad(t)) continue;
    const auto v = tris_[t].v;
    const Vec2 c = circumcenter(P(v[0]), P(v[1]), P(v[2]));
    const Located loc = locate(c, t, true);
    if (loc.blocked) {
      if (segs_.count(loc.segment)) split_segment(loc.segment);
      tri_queue_.push_back(t);
      continue;
    }
    std::vector<int> cavity;
    std::vector<std::array<int, 4>> boundary;
    if (!build_cavity(c, {loc.tri}, ~std::uint64_t{0}, cavity, boundary)) continue;
    std::vector<std::uint64_t> hit;
    for (int ct : cavity)
      for (int k = 0; k < 3; ++k) {
        const auto [a, b] = edge_of(ct, k);
        const std::uint64_t key = edge_key(a, b);
        if (segs_.count(key) && dot(P(a) - c, P(b) - c) < 0.0) hit.push_back(key);
      }
    if (!hit.empty()) {
      std::sort(hit.begin(), hit.end());
      hit.erase(std::unique(hit.begin(), hit.end()), hit.end());
      for (std::uint64_t key : hit)
        if (segs_.count(key)) split_segment(key);
      tri_queue_.push_back(t);
      continue;
    }
    insert(c, {loc.tri}, 0, false);
  }
}

TriangleMesh Mesher::run() {
  BBox box;
  std::vector<std::vector<double>> params(curves_.size());
  for (std::size_t c = 0; c < curves_.size(); ++c) {
    const BoundaryCurve& cv = *curves_[c];
    std::vector<double> corners = cv.corners;
    if (corners.empty()) corners.push_back(0.0);
    std::sort(corners.begin(), corners.end());
    const double spacing = cv.straight ? 0.9 * h_ : opts_.curve_spacing * h_;
    for (std::size_t i = 0; i < corners.size(); ++i) {
      const double t0 = corners[i];
      const double t1 = i + 1 < corners.size() ? corners[i + 1] : corners.front() + 1.0;
      double len = 0.0;
      Vec2 prev = cv.point(t0 - std::floor(t0));
      for (int k = 1; k <= 256; ++k) {
        const double t = t0 + (t1 - t0) * k / 256.0;
        const Vec2 q = cv.point(t - std::floor(t));
        len += distance(prev, q);
        prev = q;
      }
      const int n = std::max(cv.straight ? 1 : 3, static_cast<int>(std::ceil(len / spacing)));
      for (int k = 0; k < n; ++k) params[c].push_back(t0 + (t1 - t0) * k / n);
    }
    for (double t : params[c]) box.expand(cv.point(t - std::floor(t)));
  }
  const double diag = box.diagonal();
  scale2_ = diag * diag;
  const Vec2 mid = (box.lo + box.hi) * 0.5;
  const double R = 10.0 * diag;
  pts_ = {{mid.x - 3.0 * R, mid.y - 3.0 * R}, {mid.x + 3.0 * R, mid.y - 3.0 * R}, {mid.x, mid.y + 3.0 * R}};
  vtri_.assign(3, 0);
  new_tri({0, 1, 2}, 0);

  struct Pending {
    int curve, a, b;
    double t0, t1;
  };
  std::vector<Pending> pending;
  for (std::size_t c = 0; c < curves_.size(); ++c) {
    const std::vector<double>& ps = params[c];
    std::vector<int> ids;
    for (double t : ps) {
      const Vec2 p = curves_[c]->point(t - std::floor(t));
      const Located loc = locate(p, last_, false);
      const int id = insert(p, {loc.tri}, 0, false);
      if (id < 0) throw Error("boundary vertex insertion failed");
      ids.push_back(id);
    }
    for (std::size_t i = 0; i < ids.size(); ++i) {
      const double t1 = i + 1 < ps.size() ? ps[i + 1] : ps.front() + 1.0;
      pending.push_back({static_cast<int>(c), ids[i], ids[(i + 1) % ids.size()], ps[i], t1});
    }
  }
  // Conforming recovery: split missing segments until every one is a mesh edge.
  for (int round = 0;; ++round) {
    if (round > 60) throw Error("boundary recovery did not converge");
    std::unordered_set<std::uint64_t> present;
    for (const Tri& t : tris_)
      if (t.alive)
        for (int k = 0; k < 3; ++k) present.insert(edge_key(t.v[(k + 1) % 3], t.v[(k + 2) % 3]));
    std::vector<Pending> next;
    bool missing = false;
    for (const Pending& s : pending) {
      if (present.count(edge_key(s.a, s.b))) {
        next.push_back(s);
        continue;
      }
      missing = true;
      const double tm = 0.5 * (s.t0 + s.t1);
      const Vec2 p = curve_point(s.curve, tm);
      const Located loc = locate(p, last_, false);
      const int m = insert(p, {loc.tri}, 0, false);
      if (m < 0) throw Error("boundary recovery insertion failed");
      next.push_back({s.curve, s.a, m, s.t0, tm});
      next.push_back({s.curve, m, s.b, tm, s.t1});
    }
    pending = std::move(next);
    if (!missing) break;
    check_budget();
  }
  for (const Pending& s : pending) segs_[edge_key(s.a, s.b)] = {s.curve, s.t0, s.t1};
  classify();
  seed_interior();
  refine();

  std::vector<int> remap(pts_.size(), -1);
  std::vector<Vec2> verts;
  std::vector<std::array<int, 3>> tris;
  std::vector<int> regions;
  for (const Tri& t : tris_) {
    if (!t.alive) continue;
    std::array<int, 3> v{};
    for (int k = 0; k < 3; ++k) {
      if (remap[t.v[k]] < 0) {
        remap[t.v[k]] = static_cast<int>(verts.size());
        verts.push_back(pts_[t.v[k]]);
      }
      v[k] = remap[t.v[k]];
    }
    tris.push_back(v);
    regions.push_back(t.region);
  }
  std::vector<TaggedEdge> tagged;
  std::vector<std::pair<std::uint64_t, Segment>> sorted(segs_.begin(), segs_.end());
  std::sort(sorted.begin(), sorted.end(), [](const auto& x, const auto& y) { return x.first < y.first; });
  for (const auto& [key, s] : sorted) {
    const int a = remap[static_cast<int>(key >> 32)], b = remap[static_cast<int>(key & 0xffffffffu)];
    if (a < 0 || b < 0) continue;
    tagged.push_back({a, b, s.curve == 0 ? EdgeTag::Outer : EdgeTag::Obstacle});
  }
  return TriangleMesh(std::move(verts), std::move(tris), std::move(regions), std::move(tagged));
}

}  // namespace

// ---------------------------------------------------------------------------
// Boundary curves

BoundaryCurve BoundaryCurve::box(Vec2 lo, Vec2 hi) {
  if (!(hi.x > lo.x && hi.y > lo.y)) throw PreconditionError("box curve needs hi > lo");
  BoundaryCurve c;
  const double w = hi.x - lo.x, ht = hi.y - lo.y, per = 2.0 * (w + ht);
  c.length = per;
  c.straight = true;
  c.corners = {0.0, w / per, (w + ht) / per, (2.0 * w + ht) / per};
  c.point = [lo, w, ht, per](double t) {
    double s = (t - std::floor(t)) * per;
    if (s < w) return Vec2{lo.x + s, lo.y};
    s -= w;
    if (s < ht) return Vec2{lo.x + w, lo.y + s};
    s -= ht;
    if (s < w) return Vec2{lo.x + w - s, lo.y + ht};
    s -= w;
    return Vec2{lo.x, lo.y + ht - s};
  };
  c.inside = [lo, hi](Vec2 p) { return p.x > lo.x && p.x < hi.x && p.y > lo.y && p.y < hi.y; };
  return c;
}

BoundaryCurve BoundaryCurve::circle(Vec2 center, double radius) {
  if (!(radius > 0.0)) throw PreconditionError("circle curve needs a positive radius");
  BoundaryCurve c;
  c.length = 2.0 * kPi * radius;
  c.point = [center, radius](double t) {
    const double a = 2.0 * kPi * t;
    return center + Vec2{std::cos(a), std::sin(a)} * radius;
  };
  c.inside = [center, radius](Vec2 p) { return distance(p, center) < radius; };
  return c;
}

BoundaryCurve BoundaryCurve::from_domain(const ClassCDomain& dom) {
  BoundaryCurve c;
  const auto holder = std::make_shared<const ClassCDomain>(dom);
  c.point = [holder](double t) { return holder->boundary_point(t); };
  c.inside = [holder](Vec2 p) { return holder->contains(p); };
  const auto& poly = dom.boundary_polyline();
  for (std::size_t i = 0; i < poly.size(); ++i) c.length += distance(poly[i], poly[(i + 1) % poly.size()]);
  return c;
}

BoundaryCurve BoundaryCurve::from_region(const Region& r) {
  if (!r.valid()) throw PreconditionError("outer region is empty");
  const BBox b = r.bbox();
  const Vec2 c = (b.lo + b.hi) * 0.5;
  const double tol = 1e-9 * std::max(b.width(), b.height());
  const double half = 0.5 * std::min(b.width(), b.height());
  if (std::abs(r.depth(b.lo)) <= tol && std::abs(r.depth(b.hi)) <= tol && std::abs(r.depth(c) - half) <= tol)
    return box(b.lo, b.hi);
  if (std::abs(b.width() - b.height()) <= tol && std::abs(r.depth(c) - half) <= tol &&
      std::abs(r.depth(c + Vec2{half * std::sqrt(0.5), half * std::sqrt(0.5)})) <= tol)
    return circle(c, half);
  throw PreconditionError("outer region " + r.describe() + " is neither a box nor a disk");
}

double BoundaryCurve::area() const {
  double a = 0.0;
  constexpr int n = 4096;
  Vec2 prev = point(0.0);
  for (int i = 1; i <= n; ++i) {
    const Vec2 q = point(static_cast<double>(i % n) / n);
    a += cross(prev, q);
    prev = q;
  }
  return 0.5 * std::abs(a);
}

// ---------------------------------------------------------------------------
// TriangleMesh

TriangleMesh::TriangleMesh(std::vector<Vec2> vertices, std::vector<std::array<int, 3>> triangles,
                           std::vector<int> regions, std::vector<TaggedEdge> tagged_edges)
    : vertices_(std::move(vertices)), triangles_(std::move(triangles)), regions_(std::move(regions)) {
  if (regions_.empty()) regions_.assign(triangles_.size(), 0);
  if (regions_.size() != triangles_.size()) throw PreconditionError("region list does not match triangle count");
  for (const auto& t : triangles_)
    for (int v : t)
      if (v < 0 || v >= static_cast<int>(vertices_.size())) throw ConfigError("triangle references a missing vertex");
  build_topology();
  std::unordered_map<std::uint64_t, int> index;
  for (std::size_t e = 0; e < edges_.size(); ++e) index[edge_key(edges_[e][0], edges_[e][1])] = static_cast<int>(e);
  for (const TaggedEdge& te : tagged_edges) {
    auto it = index.find(edge_key(te.a, te.b));
    if (it == index.end()) throw ConfigError("tagged edge is not a mesh edge");
    edge_tags_[it->second] = te.tag;
  }
}

void TriangleMesh::build_topology() {
  std::unordered_map<std::uint64_t, int> index;
  edges_.clear();
  edge_triangles_.clear();
  triangle_edges_.assign(triangles_.size(), {});
  for (std::size_t t = 0; t < triangles_.size(); ++t) {
    for (int k = 0; k < 3; ++k) {
      const int a = triangles_[t][k], b = triangles_[t][(k + 1) % 3];
      const std::uint64_t key = edge_key(a, b);
      auto it = index.find(key);
      int e;
      if (it == index.end()) {
        e = static_cast<int>(edges_.size());
        index.emplace(key, e);
        edges_.push_back({std::min(a, b), std::max(a, b)});
        edge_triangles_.push_back({static_cast<int>(t), -1});
      } else {
        e = it->second;
        if (edge_triangles_[e][1] >= 0) throw Error("non-manifold edge in triangulation");
        edge_triangles_[e][1] = static_cast<int>(t);
      }
      triangle_edges_[t][k] = e;
    }
  }
  edge_tags_.assign(edges_.size(), EdgeTag::None);
  boundary_vertex_.assign(vertices_.size(), 0);
  for (std::size_t e = 0; e < edges_.size(); ++e)
    if (edge_triangles_[e][1] < 0) boundary_vertex_[edges_[e][0]] = boundary_vertex_[edges_[e][1]] = 1;
}

int TriangleMesh::num_regions() const {
  int m = 0;
  for (int r : regions_) m = std::max(m, r + 1);
  return m;
}

double TriangleMesh::h() const {
  double h = 0.0;
  for (const auto& e : edges_) h = std::max(h, distance(vertices_[e[0]], vertices_[e[1]]));
  return h;
}

double TriangleMesh::min_angle_degrees() const {
  double m = 180.0;
  for (const auto& t : triangles_)
    m = std::min(m, min_angle(vertices_[t[0]], vertices_[t[1]], vertices_[t[2]]) * 180.0 / kPi);
  return m;
}

double TriangleMesh::triangle_area(std::size_t t) const {
  const auto& v = triangles_[t];
  return 0.5 * orient(vertices_[v[0]], vertices_[v[1]], vertices_[v[2]]);
}

double TriangleMesh::area() const {
  double a = 0.0;
  for (std::size_t t = 0; t < triangles_.size(); ++t) a += triangle_area(t);
  return a;
}

int TriangleMesh::num_holes() const {
  std::vector<int> parent(vertices_.size());
  for (std::size_t i = 0; i < parent.size(); ++i) parent[i] = static_cast<int>(i);
  std::function<int(int)> find = [&](int x) { return parent[x] == x ? x : parent[x] = find(parent[x]); };
  std::unordered_set<int> on;
  for (std::size_t e = 0; e < edges_.size(); ++e) {
    if (edge_triangles_[e][1] >= 0) continue;
    parent[find(edges_[e][0])] = find(edges_[e][1]);
    on.insert(edges_[e][0]);
    on.insert(edges_[e][1]);
  }
  std::unordered_set<int> roots;
  for (int v : on) roots.insert(find(v));
  return std::max(0, static_cast<int>(roots.size()) - 1);
}

std::vector<int> TriangleMesh::tagged_vertices(EdgeTag tag) const {
  std::vector<char> mark(vertices_.size(), 0);
  for (std::size_t e = 0; e < edges_.size(); ++e)
    if (edge_tags_[e] == tag) mark[edges_[e][0]] = mark[edges_[e][1]] = 1;
  std::vector<int> out;
  for (std::size_t v = 0; v < mark.size(); ++v)
    if (mark[v]) out.push_back(static_cast<int>(v));
  return out;
}

TriangleMesh TriangleMesh::submesh(std::span<const int> region_ids) const {
  std::vector<int> remap(vertices_.size(), -1);
  std::vector<Vec2> verts;
  std::vector<int> parent;
  std::vector<std::array<int, 3>> tris;
  std::vector<int> regions;
  std::vector<int> parent_tri;
  for (std::size_t t = 0; t < triangles_.size(); ++t) {
    if (std::find(region_ids.begin(), region_ids.end(), regions_[t]) == region_ids.end()) continue;
    parent_tri.push_back(static_cast<int>(t));
    std::array<int, 3> v{};
    for (int k = 0; k < 3; ++k) {
      const int x = triangles_[t][k];
      if (remap[x] < 0) {
        remap[x] = static_cast<int>(verts.size());
        verts.push_back(vertices_[x]);
        parent.push_back(x);
      }
      v[k] = remap[x];
    }
    tris.push_back(v);
    regions.push_back(regions_[t]);
  }
  std::vector<TaggedEdge> tagged;
  for (std::size_t e = 0; e < edges_.size(); ++e) {
    if (edge_tags_[e] == EdgeTag::None) continue;
    const int a = remap[edges_[e][0]], b = remap[edges_[e][1]];
    if (a < 0 || b < 0) continue;
    tagged.push_back({a, b, edge_tags_[e]});
  }
  std::vector<TaggedEdge> present;
  {
    std::unordered_set<std::uint64_t> keys;
    for (const auto& t : tris)
      for (int k = 0; k < 3; ++k) keys.insert(edge_key(t[k], t[(k + 1) % 3]));
    for (const TaggedEdge& te : tagged)
      if (keys.count(edge_key(te.a, te.b))) present.push_back(te);
  }
  TriangleMesh sub(std::move(verts), std::move(tris), std::move(regions), std::move(present));
  sub.parent_vertex_ = std::move(parent);
  sub.parent_triangle_ = std::move(parent_tri);
  std::unordered_map<std::uint64_t, int> pindex;
  for (std::size_t e = 0; e < edges_.size(); ++e) pindex[edge_key(edges_[e][0], edges_[e][1])] = static_cast<int>(e);
  sub.parent_edge_.resize(sub.edges_.size());
  for (std::size_t e = 0; e < sub.edges_.size(); ++e)
    sub.parent_edge_[e] = pindex.at(edge_key(sub.parent_vertex_[sub.edges_[e][0]], sub.parent_vertex_[sub.edges_[e][1]]));
  return sub;
}

void TriangleMesh::check(double min_angle_deg) const {
  for (std::size_t t = 0; t < triangles_.size(); ++t) {
    if (!(triangle_area(t) > 0.0)) throw Error("triangle " + std::to_string(t) + " is not positively oriented");
    if (min_angle_deg > 0.0) {
      const auto& v = triangles_[t];
      const double ang = min_angle(vertices_[v[0]], vertices_[v[1]], vertices_[v[2]]) * 180.0 / kPi;
      if (ang < min_angle_deg)
        throw Error("triangle " + std::to_string(t) + " has minimum angle " + std::to_string(ang));
    }
  }
  for (std::size_t e = 0; e < edges_.size(); ++e) {
    const auto& et = edge_triangles_[e];
    if (et[1] >= 0) {
      // Consistent orientation: the shared edge is traversed in opposite directions.
      auto dir = [&](int t) {
        for (int k = 0; k < 3; ++k)
          if (triangle_edges_[t][k] == static_cast<int>(e)) return triangles_[t][k];
        return -1;
      };
      if (dir(et[0]) == dir(et[1])) throw Error("edge " + std::to_string(e) + " has inconsistent orientation");
    }
    if (edge_tags_[e] == EdgeTag::None) continue;
    if (et[1] >= 0 && (edge_tags_[e] == EdgeTag::Outer || regions_[et[0]] == regions_[et[1]]))
      throw Error("tagged edge " + std::to_string(e) + " is not on the boundary");
  }
}

// ---------------------------------------------------------------------------
// Triangulation entry points

TriangleMesh triangulate(const BoundaryCurve& outer, std::span<const BoundaryCurve> holes, double h,
                         const MeshOptions& opts) {
  if (!(h > 0.0)) throw PreconditionError("mesh size h must be positive");
  const double outer_spacing = std::min(h, outer.length / 64.0) * 0.25;
  std::vector<Vec2> outer_pts;
  for (int i = 0, n = static_cast<int>(std::ceil(outer.length / outer_spacing)); i < n; ++i)
    outer_pts.push_back(outer.point(static_cast<double>(i) / n));
  const NearestPointIndex outer_index(outer_pts);
  std::vector<std::vector<Vec2>> hole_pts(holes.size());
  for (std::size_t i = 0; i < holes.size(); ++i) {
    const BoundaryCurve& hc = holes[i];
    const double a = hc.area();
    if (a < 10.0 * h * h) {
      std::ostringstream s;
      s << "degenerate hole " << i << ": area " << a << " < 10 h^2";
      throw PreconditionError(s.str());
    }
    const int n = std::max(64, static_cast<int>(std::ceil(hc.length / (0.25 * h))));
    for (int k = 0; k < n; ++k) {
      const Vec2 p = hc.point(static_cast<double>(k) / n);
      hole_pts[i].push_back(p);
      if (!outer.inside(p) || outer_index.distance(p) < 2.0 * h * (1.0 - 1e-12)) {
        std::ostringstream s;
        s << "margin violation: hole " << i << " comes within 2h of the outer boundary near (" << p.x << ", " << p.y
          << ")";
        throw PreconditionError(s.str());
      }
    }
  }
  for (std::size_t i = 0; i < holes.size(); ++i)
    for (std::size_t j = 0; j < holes.size(); ++j) {
      if (i == j) continue;
      for (Vec2 p : hole_pts[i])
        if (holes[j].inside(p)) throw PreconditionError("margin violation: holes " + std::to_string(i) + " and " +
                                                        std::to_string(j) + " overlap");
    }
  std::vector<const BoundaryCurve*> curves{&outer};
  for (const BoundaryCurve& hc : holes) curves.push_back(&hc);
  Mesher mesher(std::move(curves), h, opts);
  return mesher.run();
}

TriangleMesh triangulate(const BoundaryCurve& outer, std::span<const ClassCDomain> holes, double h,
                         const MeshOptions& opts) {
  std::vector<BoundaryCurve> curves;
  for (const ClassCDomain& d : holes) curves.push_back(BoundaryCurve::from_domain(d));
  return triangulate(outer, std::span<const BoundaryCurve>(curves), h, opts);
}

// ---------------------------------------------------------------------------
// Locator

std::array<double, 3> barycentric(Vec2 a, Vec2 b, Vec2 c, Vec2 p) {
  const double det = orient(a, b, c);
  const double l1 = orient(p, b, c) / det;
  const double l2 = orient(a, p, c) / det;
  return {l1, l2, 1.0 - l1 - l2};
}

MeshLocator::MeshLocator(const TriangleMesh& mesh) : mesh_(&mesh) {
  const auto& V = mesh.vertices();
  for (Vec2 p : V) box_.expand(p);
  const std::size_t nt = std::max<std::size_t>(1, mesh.num_triangles());
  cell_ = std::max(std::sqrt(std::max(box_.width() * box_.height(), 1e-300) / static_cast<double>(nt)) * 2.0, 1e-12);
  nx_ = std::max(1, static_cast<int>(box_.width() / cell_) + 1);
  ny_ = std::max(1, static_cast<int>(box_.height() / cell_) + 1);
  std::vector<std::vector<int>> buckets(static_cast<std::size_t>(nx_) * ny_);
  for (std::size_t t = 0; t < mesh.num_triangles(); ++t) {
    BBox b;
    for (int v : mesh.triangles()[t]) b.expand(V[v]);
    const int i0 = std::clamp(static_cast<int>((b.lo.x - box_.lo.x) / cell_), 0, nx_ - 1);
    const int i1 = std::clamp(static_cast<int>((b.hi.x - box_.lo.x) / cell_), 0, nx_ - 1);
    const int j0 = std::clamp(static_cast<int>((b.lo.y - box_.lo.y) / cell_), 0, ny_ - 1);
    const int j1 = std::clamp(static_cast<int>((b.hi.y - box_.lo.y) / cell_), 0, ny_ - 1);
    for (int j = j0; j <= j1; ++j)
      for (int i = i0; i <= i1; ++i) buckets[static_cast<std::size_t>(j) * nx_ + i].push_back(static_cast<int>(t));
  }
  start_.assign(buckets.size() + 1, 0);
  for (std::size_t c = 0; c < buckets.size(); ++c) start_[c + 1] = start_[c] + buckets[c].size();
  items_.reserve(start_.back());
  for (const auto& b : buckets) items_.insert(items_.end(), b.begin(), b.end());
}

int MeshLocator::locate(Vec2 p, std::array<double, 3>* bary) const {
  if (!box_.inflated(1e-9 * (1.0 + box_.diagonal())).contains(p)) return -1;
  const int i = std::clamp(static_cast<int>((p.x - box_.lo.x) / cell_), 0, nx_ - 1);
  const int j = std::clamp(static_cast<int>((p.y - box_.lo.y) / cell_), 0, ny_ - 1);
  const std::size_t c = static_cast<std::size_t>(j) * nx_ + i;
  const auto& V = mesh_->vertices();
  int best = -1;
  double best_min = -1e-10;
  std::array<double, 3> best_bary{};
  for (std::size_t k = start_[c]; k < start_[c + 1]; ++k) {
    const auto& t = mesh_->triangles()[items_[k]];
    const auto l = barycentric(V[t[0]], V[t[1]], V[t[2]], p);
    const double mn = std::min({l[0], l[1], l[2]});
    if (mn >= best_min) {
      best_min = mn;
      best = items_[k];
      best_bary = l;
      if (mn >= 0.0) break;
    }
  }
  if (best >= 0 && bary) *bary = best_bary;
  return best;
}

int MeshLocator::locate_near(Vec2 p, double reach, std::array<double, 3>* bary) const {
  const int t = locate(p, bary);
  if (t >= 0) return t;
  const auto& V = mesh_->vertices();
  const int r = static_cast<int>(std::ceil(reach / cell_)) + 1;
  const int ci = static_cast<int>(std::floor((p.x - box_.lo.x) / cell_));
  const int cj = static_cast<int>(std::floor((p.y - box_.lo.y) / cell_));
  int best = -1;
  double best_d = reach;
  for (int j = std::max(0, cj - r); j <= std::min(ny_ - 1, cj + r); ++j)
    for (int i = std::max(0, ci - r); i <= std::min(nx_ - 1, ci + r); ++i) {
      const std::size_t c = static_cast<std::size_t>(j) * nx_ + i;
      for (std::size_t k = start_[c]; k < start_[c + 1]; ++k) {
        const auto& tr = mesh_->triangles()[items_[k]];
        const double d = std::min({segment_distance(p, V[tr[0]], V[tr[1]]), segment_distance(p, V[tr[1]], V[tr[2]]),
                                   segment_distance(p, V[tr[2]], V[tr[0]])});
        if (d <= best_d) {
          best_d = d;
          best = items_[k];
        }
      }
    }
  if (best >= 0 && bary) {
    const auto& tr = mesh_->triangles()[best];
    auto l = barycentric(V[tr[0]], V[tr[1]], V[tr[2]], p);
    double s = 0.0;
    for (double& x : l) {
      x = std::max(x, 0.0);
      s += x;
    }
    for (double& x : l) x /= s;
    *bary = l;
  }
  return best;
}

// ---------------------------------------------------------------------------
// IO

void write_mesh(std::ostream& out, const TriangleMesh& mesh) {
  out << std::setprecision(17);
  out << "VERTICES " << mesh.num_vertices() << "\n";
  for (Vec2 p : mesh.vertices()) out << p.x << " " << p.y << "\n";
  out << "TRIANGLES " << mesh.num_triangles() << "\n";
  for (std::size_t t = 0; t < mesh.num_triangles(); ++t) {
    const auto& v = mesh.triangles()[t];
    out << v[0] << " " << v[1] << " " << v[2] << " " << mesh.regions()[t] << "\n";
  }
  std::size_t tagged = 0;
  for (EdgeTag tg : mesh.edge_tags()) tagged += tg != EdgeTag::None;
  out << "EDGES " << tagged << "\n";
  for (std::size_t e = 0; e < mesh.num_edges(); ++e) {
    if (mesh.edge_tags()[e] == EdgeTag::None) continue;
    out << mesh.edges()[e][0] << " " << mesh.edges()[e][1] << " " << static_cast<int>(mesh.edge_tags()[e]) << "\n";
  }
}

TriangleMesh read_mesh(std::istream& in) {
  std::string line;
  int lineno = 0;
  auto fail = [&](const std::string& what) {
    throw ConfigError("mesh line " + std::to_string(lineno) + ": " + what);
  };
  auto next = [&]() -> bool {
    while (std::getline(in, line)) {
      ++lineno;
      const auto pos = line.find_first_not_of(" \t\r");
      if (pos != std::string::npos && line[pos] != '#') return true;
    }
    return false;
  };
  auto header = [&](const char* name) -> std::size_t {
    if (!next()) fail(std::string("missing ") + name + " header");
    std::istringstream s(line);
    std::string word;
    long long n = -1;
    if (!(s >> word >> n) || word != name || n < 0) fail(std::string("expected '") + name + " <count>'");
    return static_cast<std::size_t>(n);
  };
  const std::size_t nv = header("VERTICES");
  std::vector<Vec2> verts(nv);
  for (std::size_t i = 0; i < nv; ++i) {
    if (!next()) fail("unexpected end of vertex list");
    std::istringstream s(line);
    if (!(s >> verts[i].x >> verts[i].y)) fail("malformed vertex");
  }
  const std::size_t nt = header("TRIANGLES");
  std::vector<std::array<int, 3>> tris(nt);
  std::vector<int> regions(nt, 0);
  for (std::size_t i = 0; i < nt; ++i) {
    if (!next()) fail("unexpected end of triangle list");
    std::istringstream s(line);
    if (!(s >> tris[i][0] >> tris[i][1] >> tris[i][2])) fail("malformed triangle");
    for (int v : tris[i])
      if (v < 0 || static_cast<std::size_t>(v) >= nv) fail("vertex index out of range");
    int r;
    if (s >> r) regions[i] = r;
  }
  std::vector<TaggedEdge> tagged;
  if (next()) {
    std::istringstream s(line);
    std::string word;
    long long n = -1;
    if (!(s >> word >> n) || word != "EDGES" || n < 0) fail("expected 'EDGES <count>'");
    for (long long i = 0; i < n; ++i) {
      if (!next()) fail("unexpected end of edge list");
      std::istringstream es(line);
      int a, b, tag;
      if (!(es >> a >> b >> tag) || tag < 0 || tag > 2) fail("malformed edge");
      tagged.push_back({a, b, static_cast<EdgeTag>(tag)});
    }
  }
  try {
    return TriangleMesh(std::move(verts), std::move(tris), std::move(regions), std::move(tagged));
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("mesh: ") + e.what());
  }
}

void save_mesh(const std::string& path, const TriangleMesh& mesh) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write mesh file " + path);
  write_mesh(out, mesh);
}

TriangleMesh load_mesh(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open mesh file " + path);
  return read_mesh(in);
}

}  // namespace divshape
