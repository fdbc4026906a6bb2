#include "divshape/region.hpp"

#include <cmath>
#include <limits>
#include <sstream>

#include "divshape/error.hpp"

namespace divshape {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

class BoxShape final : public RegionShape {
 public:
  BoxShape(Vec2 lo, Vec2 hi) : lo_(lo), hi_(hi) {}
  double depth(Vec2 p) const override {
    const double dx = std::max(lo_.x - p.x, p.x - hi_.x);
    const double dy = std::max(lo_.y - p.y, p.y - hi_.y);
    if (dx <= 0.0 && dy <= 0.0) return -std::max(dx, dy);
    return -std::hypot(std::max(dx, 0.0), std::max(dy, 0.0));
  }
  BBox bbox() const override { return {lo_, hi_}; }
  void boundary_samples(double spacing, std::vector<Vec2>& out) const override {
    const Vec2 c[4] = {lo_, {hi_.x, lo_.y}, hi_, {lo_.x, hi_.y}};
    for (int e = 0; e < 4; ++e) {
      const Vec2 a = c[e], b = c[(e + 1) % 4];
      const int n = std::max(1, static_cast<int>(std::ceil(distance(a, b) / spacing)));
      for (int i = 0; i < n; ++i) out.push_back(a + (b - a) * (double(i) / n));
    }
  }
  std::string describe() const override {
    std::ostringstream s;
    s << "box(" << lo_.x << "," << lo_.y << ";" << hi_.x << "," << hi_.y << ")";
    return s.str();
  }

 private:
  Vec2 lo_, hi_;
};

class DiskShape final : public RegionShape {
 public:
  DiskShape(Vec2 c, double r) : c_(c), r_(r) {}
  double depth(Vec2 p) const override { return r_ - distance(p, c_); }
  BBox bbox() const override { return {{c_.x - r_, c_.y - r_}, {c_.x + r_, c_.y + r_}}; }
  void boundary_samples(double spacing, std::vector<Vec2>& out) const override {
    const int n = std::max(8, static_cast<int>(std::ceil(2.0 * kPi * r_ / spacing)));
    for (int i = 0; i < n; ++i) {
      const double a = 2.0 * kPi * i / n;
      out.push_back(c_ + Vec2{std::cos(a), std::sin(a)} * r_);
    }
  }
  std::string describe() const override {
    std::ostringstream s;
    s << "disk(" << c_.x << "," << c_.y << ";" << r_ << ")";
    return s.str();
  }

 private:
  Vec2 c_;
  double r_;
};

double wrap_angle(double a) {
  while (a > kPi) a -= 2.0 * kPi;
  while (a <= -kPi) a += 2.0 * kPi;
  return a;
}

class AnnulusShape final : public RegionShape {
 public:
  AnnulusShape(Vec2 c, double r0, double r1, double a0, double a1)
      : c_(c), r0_(r0), r1_(r1), a0_(a0), a1_(a1), full_(a1 - a0 >= 2.0 * kPi - 1e-14) {}
  double depth(Vec2 p) const override {
    const double r = distance(p, c_);
    double d = std::min(r - r0_, r1_ - r);
    if (!full_) {
      const double mid = 0.5 * (a0_ + a1_);
      const double half = 0.5 * (a1_ - a0_);
      const double off = std::abs(wrap_angle(std::atan2(p.y - c_.y, p.x - c_.x) - mid));
      // Arc-length margin to the radial sides, measured at the point's radius.
      const double ang = half - off;
      d = std::min(d, ang >= 0.0 ? r * std::sin(std::min(ang, kPi / 2)) : -r * std::sin(std::min(-ang, kPi / 2)));
    }
    return d;
  }
  BBox bbox() const override { return {{c_.x - r1_, c_.y - r1_}, {c_.x + r1_, c_.y + r1_}}; }
  void boundary_samples(double spacing, std::vector<Vec2>& out) const override {
    for (double r : {r0_, r1_}) {
      if (r <= 0.0) continue;
      const double span = a1_ - a0_;
      const int n = std::max(8, static_cast<int>(std::ceil(span * r / spacing)));
      for (int i = 0; i <= n; ++i) {
        const double a = a0_ + span * i / n;
        out.push_back(c_ + Vec2{std::cos(a), std::sin(a)} * r);
      }
    }
    if (!full_) {
      for (double a : {a0_, a1_}) {
        const int n = std::max(1, static_cast<int>(std::ceil((r1_ - r0_) / spacing)));
        for (int i = 0; i <= n; ++i) {
          const double r = r0_ + (r1_ - r0_) * i / n;
          out.push_back(c_ + Vec2{std::cos(a), std::sin(a)} * r);
        }
      }
    }
  }
  std::string describe() const override {
    std::ostringstream s;
    s << "annulus(" << c_.x << "," << c_.y << ";" << r0_ << "," << r1_;
    if (!full_) s << ";" << a0_ << "," << a1_;
    s << ")";
    return s.str();
  }

 private:
  Vec2 c_;
  double r0_, r1_, a0_, a1_;
  bool full_;
};

class BandShape final : public RegionShape {
 public:
  BandShape(std::vector<Vec2> pts, double w, bool closed) : pts_(std::move(pts)), w_(w), closed_(closed) {
    for (Vec2 p : pts_) box_.expand(p);
    box_ = box_.inflated(w_);
  }
  double depth(Vec2 p) const override {
    double best = kInf;
    const std::size_t n = pts_.size();
    const std::size_t segs = closed_ ? n : n - 1;
    for (std::size_t i = 0; i < segs; ++i) best = std::min(best, segment_distance(p, pts_[i], pts_[(i + 1) % n]));
    if (n == 1) best = distance(p, pts_[0]);
    return w_ - best;
  }
  BBox bbox() const override { return box_; }
  void boundary_samples(double spacing, std::vector<Vec2>& out) const override {
    // Offset curves on both sides plus end caps; filtered to the true boundary.
    const std::size_t n = pts_.size();
    const std::size_t segs = closed_ ? n : n - 1;
    std::vector<Vec2> cand;
    for (std::size_t i = 0; i < segs; ++i) {
      const Vec2 a = pts_[i], b = pts_[(i + 1) % n];
      const double len = distance(a, b);
      if (len == 0.0) continue;
      const Vec2 nrm = perp((b - a) / len);
      const int m = std::max(1, static_cast<int>(std::ceil(len / spacing)));
      for (int k = 0; k <= m; ++k) {
        const Vec2 q = a + (b - a) * (double(k) / m);
        cand.push_back(q + nrm * w_);
        cand.push_back(q - nrm * w_);
      }
    }
    for (Vec2 c : pts_) {
      const int m = std::max(8, static_cast<int>(std::ceil(2.0 * kPi * w_ / spacing)));
      for (int k = 0; k < m; ++k) {
        const double a = 2.0 * kPi * k / m;
        cand.push_back(c + Vec2{std::cos(a), std::sin(a)} * w_);
      }
    }
    const double tol = 1e-9 * std::max(1.0, w_);
    for (Vec2 c : cand)
      if (std::abs(depth(c)) <= tol) out.push_back(c);
  }
  std::string describe() const override {
    std::ostringstream s;
    s << "band(" << pts_.size() << " pts;" << w_ << ")";
    return s.str();
  }

 private:
  std::vector<Vec2> pts_;
  double w_;
  bool closed_;
  BBox box_;
};

class ComplementShape final : public RegionShape {
 public:
  ComplementShape(Region r, BBox frame) : r_(std::move(r)), frame_(frame) {}
  double depth(Vec2 p) const override { return -r_.depth(p); }
  BBox bbox() const override { return frame_; }
  void boundary_samples(double spacing, std::vector<Vec2>& out) const override {
    r_.shape().boundary_samples(spacing, out);
  }
  std::string describe() const override { return "complement(" + r_.describe() + ")"; }

 private:
  Region r_;
  BBox frame_;
};

class CompositeShape final : public RegionShape {
 public:
  CompositeShape(std::vector<Region> parts, bool is_union) : parts_(std::move(parts)), union_(is_union) {
    if (parts_.empty()) throw PreconditionError("composite region needs at least one part");
  }
  double depth(Vec2 p) const override {
    double d = union_ ? -kInf : kInf;
    for (const Region& r : parts_) d = union_ ? std::max(d, r.depth(p)) : std::min(d, r.depth(p));
    return d;
  }
  BBox bbox() const override {
    BBox b;
    for (const Region& r : parts_) {
      const BBox pb = r.bbox();
      if (union_ || b.empty()) {
        b.expand(pb.lo);
        b.expand(pb.hi);
      } else {
        b = {{std::max(b.lo.x, pb.lo.x), std::max(b.lo.y, pb.lo.y)},
             {std::min(b.hi.x, pb.hi.x), std::min(b.hi.y, pb.hi.y)}};
      }
    }
    return b;
  }
  void boundary_samples(double spacing, std::vector<Vec2>& out) const override {
    std::vector<Vec2> cand;
    for (const Region& r : parts_) r.shape().boundary_samples(spacing, cand);
    const double tol = 1e-9;
    for (Vec2 c : cand)
      if (std::abs(depth(c)) <= tol) out.push_back(c);
  }
  std::string describe() const override {
    std::string s = union_ ? "union(" : "intersection(";
    for (std::size_t i = 0; i < parts_.size(); ++i) s += (i ? "," : "") + parts_[i].describe();
    return s + ")";
  }

 private:
  std::vector<Region> parts_;
  bool union_;
};

}  // namespace

Region Region::box(Vec2 lo, Vec2 hi) {
  if (!(hi.x > lo.x && hi.y > lo.y)) throw PreconditionError("box region needs hi > lo");
  return Region(std::make_shared<BoxShape>(lo, hi));
}

Region Region::disk(Vec2 center, double radius) {
  if (!(radius > 0.0)) throw PreconditionError("disk region needs a positive radius");
  return Region(std::make_shared<DiskShape>(center, radius));
}

Region Region::annulus(Vec2 center, double r_inner, double r_outer, double angle_min, double angle_max) {
  if (!(r_outer > r_inner && r_inner >= 0.0)) throw PreconditionError("annulus needs 0 <= r_inner < r_outer");
  if (!(angle_max > angle_min)) throw PreconditionError("annulus sector needs angle_max > angle_min");
  return Region(std::make_shared<AnnulusShape>(center, r_inner, r_outer, angle_min, angle_max));
}

Region Region::band(std::vector<Vec2> polyline, double width, bool closed) {
  if (polyline.empty() || !(width > 0.0)) throw PreconditionError("band needs points and a positive width");
  return Region(std::make_shared<BandShape>(std::move(polyline), width, closed));
}

Region Region::complement_of(const Region& r, BBox frame) {
  return Region(std::make_shared<ComplementShape>(r, frame));
}

Region Region::union_of(std::vector<Region> parts) {
  return Region(std::make_shared<CompositeShape>(std::move(parts), true));
}

Region Region::intersection_of(std::vector<Region> parts) {
  return Region(std::make_shared<CompositeShape>(std::move(parts), false));
}

std::vector<Vec2> Region::boundary_samples(double spacing) const {
  std::vector<Vec2> out;
  shape_->boundary_samples(spacing, out);
  return out;
}

std::vector<Vec2> Region::closure_samples(double resolution) const {
  std::vector<Vec2> out = boundary_samples(resolution);
  const BBox b = bbox();
  const int nx = static_cast<int>(std::ceil(b.width() / resolution));
  const int ny = static_cast<int>(std::ceil(b.height() / resolution));
  for (int j = 0; j <= ny; ++j)
    for (int i = 0; i <= nx; ++i) {
      const Vec2 p{b.lo.x + i * resolution, b.lo.y + j * resolution};
      if (depth(p) >= 0.0) out.push_back(p);
    }
  return out;
}

NearestPointIndex::NearestPointIndex(std::vector<Vec2> points) : points_(std::move(points)) {
  if (points_.empty()) return;
  for (Vec2 p : points_) box_.expand(p);
  const double area = std::max(box_.width() * box_.height(), 1e-300);
  cell_ = std::sqrt(area / static_cast<double>(points_.size())) * 1.5;
  if (!(cell_ > 0.0)) cell_ = std::max({box_.width(), box_.height(), 1e-12});
  nx_ = std::max(1, static_cast<int>(box_.width() / cell_) + 1);
  ny_ = std::max(1, static_cast<int>(box_.height() / cell_) + 1);
  std::vector<std::size_t> count(static_cast<std::size_t>(nx_) * ny_ + 1, 0);
  auto cell_of = [&](Vec2 p) {
    const int i = std::clamp(static_cast<int>((p.x - box_.lo.x) / cell_), 0, nx_ - 1);
    const int j = std::clamp(static_cast<int>((p.y - box_.lo.y) / cell_), 0, ny_ - 1);
    return static_cast<std::size_t>(j) * nx_ + i;
  };
  for (Vec2 p : points_) ++count[cell_of(p) + 1];
  for (std::size_t k = 1; k < count.size(); ++k) count[k] += count[k - 1];
  start_ = count;
  items_.resize(points_.size());
  for (std::size_t k = 0; k < points_.size(); ++k) items_[count[cell_of(points_[k])]++] = k;
}

std::size_t NearestPointIndex::nearest(Vec2 p) const {
  if (points_.empty()) throw PreconditionError("nearest point query on an empty index");
  return nearest_within(p, kInf);
}

std::size_t NearestPointIndex::nearest_within(Vec2 p, double radius) const {
  if (points_.empty()) return npos;
  const int ci = std::clamp(static_cast<int>((p.x - box_.lo.x) / cell_), 0, nx_ - 1);
  const int cj = std::clamp(static_cast<int>((p.y - box_.lo.y) / cell_), 0, ny_ - 1);
  // Distance from p to the clamped grid, so rings are measured correctly for outside queries.
  const double outside = std::hypot(std::max({box_.lo.x - p.x, p.x - box_.hi.x, 0.0}),
                                    std::max({box_.lo.y - p.y, p.y - box_.hi.y, 0.0}));
  if (outside > radius) return npos;
  double best2 = radius < kInf ? radius * radius : kInf;
  std::size_t best = npos;
  auto scan = [&](int i, int j) {
    if (i < 0 || i >= nx_ || j < 0 || j >= ny_) return;
    const std::size_t c = static_cast<std::size_t>(j) * nx_ + i;
    for (std::size_t k = start_[c]; k < start_[c + 1]; ++k) {
      const double d2 = norm2(points_[items_[k]] - p);
      if (d2 <= best2) {
        best2 = d2;
        best = items_[k];
      }
    }
  };
  const int max_ring = std::max(nx_, ny_);
  for (int ring = 0; ring <= max_ring; ++ring) {
    if (ring == 0) {
      scan(ci, cj);
    } else {
      for (int i = ci - ring; i <= ci + ring; ++i) {
        scan(i, cj - ring);
        scan(i, cj + ring);
      }
      for (int j = cj - ring + 1; j <= cj + ring - 1; ++j) {
        scan(ci - ring, j);
        scan(ci + ring, j);
      }
    }
    // Cells beyond this ring are at least ring*cell away from the clamped query cell.
    const double reach = std::max(outside, ring * cell_);
    if (best2 < kInf && reach * reach >= best2) break;
  }
  return best;
}

double NearestPointIndex::distance(Vec2 p) const {
  if (points_.empty()) return kInf;
  return divshape::distance(p, points_[nearest(p)]);
}

}  // namespace divshape
