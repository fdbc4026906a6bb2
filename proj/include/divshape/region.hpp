#pragma once

#include <memory>
#include <string>
#include <vector>

#include "divshape/geometry.hpp"

namespace divshape {

/// Shape behind a Region. `depth` is positive strictly inside, negative
/// outside, and equals the signed Euclidean distance to the boundary for the
/// primitive shapes. Composite shapes return a bound with the correct sign.
class RegionShape {
 public:
  virtual ~RegionShape() = default;
  virtual double depth(Vec2 p) const = 0;
  virtual BBox bbox() const = 0;
  /// Points on the boundary at roughly the requested spacing.
  virtual void boundary_samples(double spacing, std::vector<Vec2>& out) const = 0;
  virtual std::string describe() const = 0;
};

/// Immutable value handle on an open planar set.
class Region {
 public:
  Region() = default;
  explicit Region(std::shared_ptr<const RegionShape> shape) : shape_(std::move(shape)) {}

  static Region box(Vec2 lo, Vec2 hi);
  static Region disk(Vec2 center, double radius);
  /// Annulus r_inner < |x - c| < r_outer, optionally restricted to the
  /// angular sector (angle_min, angle_max).
  static Region annulus(Vec2 center, double r_inner, double r_outer,
                        double angle_min = -kPi, double angle_max = kPi);
  /// Points within `width` of the polyline.
  static Region band(std::vector<Vec2> polyline, double width, bool closed);
  static Region complement_of(const Region& r, BBox frame);
  static Region union_of(std::vector<Region> parts);
  static Region intersection_of(std::vector<Region> parts);

  bool valid() const { return static_cast<bool>(shape_); }
  bool contains(Vec2 p) const { return shape_->depth(p) > 0.0; }
  double depth(Vec2 p) const { return shape_->depth(p); }
  BBox bbox() const { return shape_->bbox(); }
  std::vector<Vec2> boundary_samples(double spacing) const;
  /// Grid points of the closure at the given resolution plus boundary samples.
  std::vector<Vec2> closure_samples(double resolution) const;
  std::string describe() const { return shape_ ? shape_->describe() : "<empty>"; }
  const RegionShape& shape() const { return *shape_; }

 private:
  std::shared_ptr<const RegionShape> shape_;
};

/// Uniform-grid nearest-neighbour index over a fixed point set.
class NearestPointIndex {
 public:
  NearestPointIndex() = default;
  explicit NearestPointIndex(std::vector<Vec2> points);
  bool empty() const { return points_.empty(); }
  /// Distance to the nearest indexed point; +inf when empty.
  double distance(Vec2 p) const;
  std::size_t nearest(Vec2 p) const;
  /// Nearest point no farther than `radius`, or npos.
  std::size_t nearest_within(Vec2 p, double radius) const;
  static constexpr std::size_t npos = static_cast<std::size_t>(-1);

 private:
  std::vector<Vec2> points_;
  BBox box_;
  double cell_ = 1.0;
  int nx_ = 0, ny_ = 0;
  std::vector<std::size_t> start_;
  std::vector<std::size_t> items_;
};

}  // namespace divshape
