#include "divshape/domain.hpp"

#include <cmath>
#include <limits>
#include <memory>
#include <sstream>

#include "divshape/error.hpp"

namespace divshape {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::string fmt_point(Vec2 p) {
  std::ostringstream s;
  s.precision(6);
  s << "(" << p.x << ", " << p.y << ")";
  return s.str();
}

class DomainShape final : public RegionShape {
 public:
  explicit DomainShape(std::shared_ptr<const ClassCDomain> dom) : dom_(std::move(dom)) {}
  double depth(Vec2 p) const override { return dom_->depth(p); }
  BBox bbox() const override { return dom_->bbox(); }
  void boundary_samples(double spacing, std::vector<Vec2>& out) const override {
    const auto& poly = dom_->boundary_polyline();
    for (std::size_t i = 0; i < poly.size(); ++i) {
      const Vec2 a = poly[i], b = poly[(i + 1) % poly.size()];
      const int n = std::max(1, static_cast<int>(std::ceil(distance(a, b) / spacing)));
      for (int k = 0; k < n; ++k) out.push_back(a + (b - a) * (double(k) / n));
    }
  }
  std::string describe() const override { return "class-C domain"; }

 private:
  std::shared_ptr<const ClassCDomain> dom_;
};

class StripShape final : public RegionShape {
 public:
  StripShape(BoundaryStrip strip, double scale) : strip_(std::move(strip)), scale_(scale) {
    const double l = strip_.chart.func.lipschitz_bound;
    slope_factor_ = std::sqrt(1.0 + l * l);
  }
  double depth(Vec2 p) const override {
    const Vec2 st = strip_.chart.local_coordinates(p);
    return std::min(scale_ * strip_.half_width - std::abs(st.x), (scale_ * strip_.depth - std::abs(st.y)) / slope_factor_);
  }
  BBox bbox() const override {
    BBox b;
    const double k = scale_ * strip_.half_width, d = scale_ * strip_.depth;
    for (int i = 0; i <= 32; ++i) {
      const double s = -k + 2.0 * k * i / 32;
      b.expand(strip_.point(s, -d));
      b.expand(strip_.point(s, d));
    }
    return b;
  }
  void boundary_samples(double spacing, std::vector<Vec2>& out) const override {
    const double k = scale_ * strip_.half_width, d = scale_ * strip_.depth;
    const int ns = std::max(2, static_cast<int>(std::ceil(2.0 * k / spacing)));
    const int nt = std::max(2, static_cast<int>(std::ceil(2.0 * d / spacing)));
    for (int i = 0; i <= ns; ++i) {
      const double s = -k + 2.0 * k * i / ns;
      out.push_back(strip_.point(s, -d));
      out.push_back(strip_.point(s, d));
    }
    for (int i = 0; i <= nt; ++i) {
      const double t = -d + 2.0 * d * i / nt;
      out.push_back(strip_.point(-k, t));
      out.push_back(strip_.point(k, t));
    }
  }
  std::string describe() const override {
    std::ostringstream s;
    s << "strip(chart " << strip_.chart_index << ")";
    return s.str();
  }

 private:
  BoundaryStrip strip_;
  double scale_;
  double slope_factor_ = 1.0;
};

// 1-D squared distance transform (Felzenszwalb-Huttenlocher).
void edt_1d(const std::vector<double>& f, std::vector<double>& d, std::vector<int>& v, std::vector<double>& z) {
  const int n = static_cast<int>(f.size());
  int k = -1;
  for (int q = 0; q < n; ++q) {
    if (f[q] == kInf) continue;
    if (k < 0) {
      k = 0;
      v[0] = q;
      z[0] = -kInf;
      z[1] = kInf;
      continue;
    }
    double s;
    while (true) {
      const int p = v[k];
      s = ((f[q] + double(q) * q) - (f[p] + double(p) * p)) / (2.0 * q - 2.0 * p);
      if (s <= z[k] && k > 0) {
        --k;
        continue;
      }
      break;
    }
    if (s <= z[k]) {
      // k == 0 and the new parabola dominates everywhere.
      v[0] = q;
      z[0] = -kInf;
      z[1] = kInf;
      continue;
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = kInf;
  }
  if (k < 0) {
    std::fill(d.begin(), d.end(), kInf);
    return;
  }
  int j = 0;
  for (int q = 0; q < n; ++q) {
    while (z[j + 1] < q) ++j;
    const double dq = q - v[j];
    d[q] = dq * dq + f[v[j]];
  }
}

// Squared grid distance (in cells) to the nearest marked node.
std::vector<double> squared_edt(const std::vector<char>& mask, int nx, int ny) {
  std::vector<double> g(static_cast<std::size_t>(nx) * ny);
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = mask[i] ? 0.0 : kInf;
  const int n = std::max(nx, ny);
  std::vector<double> f(n), d(n), z(n + 1);
  std::vector<int> v(n);
  for (int j = 0; j < ny; ++j) {
    f.resize(nx); d.resize(nx);
    for (int i = 0; i < nx; ++i) f[i] = g[static_cast<std::size_t>(j) * nx + i];
    edt_1d(f, d, v, z);
    for (int i = 0; i < nx; ++i) g[static_cast<std::size_t>(j) * nx + i] = d[i];
  }
  for (int i = 0; i < nx; ++i) {
    f.resize(ny); d.resize(ny);
    for (int j = 0; j < ny; ++j) f[j] = g[static_cast<std::size_t>(j) * nx + i];
    edt_1d(f, d, v, z);
    for (int j = 0; j < ny; ++j) g[static_cast<std::size_t>(j) * nx + i] = d[j];
  }
  return g;
}

}  // namespace

// ---------------------------------------------------------------------------
// Charts

double ChartFunction::sample_coordinate(std::size_t i) const {
  const std::size_t n = samples.size();
  return -half_width + 2.0 * half_width * static_cast<double>(i) / static_cast<double>(n - 1);
}

double ChartFunction::operator()(double s) const {
  const std::size_t n = samples.size();
  const double u = (s + half_width) / (2.0 * half_width) * static_cast<double>(n - 1);
  const double uc = std::clamp(u, 0.0, static_cast<double>(n - 1));
  const std::size_t i = std::min(static_cast<std::size_t>(uc), n - 2);
  const double w = uc - static_cast<double>(i);
  return samples[i] * (1.0 - w) + samples[i + 1] * w;
}

double ChartFunction::sampled_lipschitz() const {
  const double ds = 2.0 * half_width / static_cast<double>(samples.size() - 1);
  double l = 0.0;
  for (std::size_t i = 0; i + 1 < samples.size(); ++i) l = std::max(l, std::abs(samples[i + 1] - samples[i]) / ds);
  return l;
}

Vec2 LocalChart::local_coordinates(Vec2 x) const {
  const Vec2 rel = x - origin;
  const double s = dot(rel, tangent());
  const double eta = dot(rel, vertical);
  return {s, eta - func(s)};
}

void AdmissibleFamily::check() const {
  if (!(a > 0.0 && k > 0.0 && r > 0.0)) throw PreconditionError("family constants a, r, k must be positive");
  if (!(r > k)) throw PreconditionError("family requires r > k");
  if (!(lip >= 0.0 && sup >= 0.0 && std::isfinite(lip) && std::isfinite(sup)))
    throw PreconditionError("family Lipschitz and sup bounds must be finite and nonnegative");
  if (!B.valid() || !D.valid()) throw PreconditionError("family needs hold-all B and domain D");
  const double spacing = std::max(B.bbox().diagonal(), 1e-12) / 512.0;
  for (Vec2 p : B.boundary_samples(spacing))
    if (!(D.depth(p) > 0.0)) throw PreconditionError("closure of B is not inside D at " + fmt_point(p));
}

// ---------------------------------------------------------------------------
// Raster

Raster::Raster(BBox box, double resolution, const std::function<bool(Vec2)>& inside) : box_(box), h_(resolution) {
  if (!(resolution > 0.0)) throw PreconditionError("raster resolution must be positive");
  nx_ = std::max(1, static_cast<int>(std::ceil(box.width() / h_)));
  ny_ = std::max(1, static_cast<int>(std::ceil(box.height() / h_)));
  cells_.resize(static_cast<std::size_t>(nx_) * ny_);
  for (int j = 0; j < ny_; ++j)
    for (int i = 0; i < nx_; ++i) cells_[static_cast<std::size_t>(j) * nx_ + i] = inside(cell_center(i, j)) ? 1 : 0;
}

bool Raster::cell(int i, int j) const {
  if (i < 0 || j < 0 || i >= nx_ || j >= ny_) return false;
  return cells_[static_cast<std::size_t>(j) * nx_ + i] != 0;
}

Vec2 Raster::cell_center(int i, int j) const { return {box_.lo.x + (i + 0.5) * h_, box_.lo.y + (j + 0.5) * h_}; }

bool Raster::contains(Vec2 p) const {
  return cell(static_cast<int>(std::floor((p.x - box_.lo.x) / h_)), static_cast<int>(std::floor((p.y - box_.lo.y) / h_)));
}

bool Raster::clearly_inside(Vec2 p) const {
  const int i = static_cast<int>(std::floor((p.x - box_.lo.x) / h_));
  const int j = static_cast<int>(std::floor((p.y - box_.lo.y) / h_));
  for (int dj = -1; dj <= 1; ++dj)
    for (int di = -1; di <= 1; ++di)
      if (!cell(i + di, j + dj)) return false;
  return true;
}

bool Raster::clearly_outside(Vec2 p) const {
  const int i = static_cast<int>(std::floor((p.x - box_.lo.x) / h_));
  const int j = static_cast<int>(std::floor((p.y - box_.lo.y) / h_));
  for (int dj = -1; dj <= 1; ++dj)
    for (int di = -1; di <= 1; ++di)
      if (cell(i + di, j + dj)) return false;
  return true;
}

std::vector<Vec2> Raster::boundary_cells() const {
  std::vector<Vec2> out;
  for (int j = 0; j < ny_; ++j)
    for (int i = 0; i < nx_; ++i)
      if (cell(i, j) && (!cell(i - 1, j) || !cell(i + 1, j) || !cell(i, j - 1) || !cell(i, j + 1)))
        out.push_back(cell_center(i, j));
  return out;
}

std::string Raster::to_pgm() const {
  std::ostringstream s;
  s << "P5\n" << nx_ << " " << ny_ << "\n255\n";
  std::string body(static_cast<std::size_t>(nx_) * ny_, '\0');
  for (int j = 0; j < ny_; ++j)
    for (int i = 0; i < nx_; ++i)
      body[static_cast<std::size_t>(ny_ - 1 - j) * nx_ + i] = cell(i, j) ? char(255) : char(0);
  return s.str() + body;
}

// ---------------------------------------------------------------------------
// Star shapes and domains

double StarShape::radius(double phi) const {
  double r = coeffs.empty() ? 0.0 : coeffs[0];
  for (std::size_t i = 1; i < coeffs.size(); ++i) {
    const int m = static_cast<int>((i + 1) / 2);
    r += (i % 2 == 1) ? coeffs[i] * std::cos(m * phi) : coeffs[i] * std::sin(m * phi);
  }
  return r;
}

double StarShape::radius_derivative(double phi) const {
  double r = 0.0;
  for (std::size_t i = 1; i < coeffs.size(); ++i) {
    const int m = static_cast<int>((i + 1) / 2);
    r += (i % 2 == 1) ? -m * coeffs[i] * std::sin(m * phi) : m * coeffs[i] * std::cos(m * phi);
  }
  return r;
}

Vec2 StarShape::point(double phi) const { return center + Vec2{std::cos(phi), std::sin(phi)} * radius(phi); }

ClassCDomain::ClassCDomain(std::vector<LocalChart> charts, ClassCParams params, AdmissibleFamily family,
                           std::function<bool(Vec2)> inside, std::vector<Vec2> boundary_polyline,
                           double raster_resolution)
    : charts_(std::move(charts)),
      params_(params),
      family_(std::move(family)),
      inside_(std::move(inside)),
      boundary_(std::move(boundary_polyline)) {
  if (charts_.empty()) throw PreconditionError("a class-C domain needs at least one chart");
  if (boundary_.size() < 3) throw PreconditionError("boundary polyline needs at least three points");
  boundary_index_ = NearestPointIndex(boundary_);
  for (std::size_t i = 0; i < boundary_.size(); ++i)
    max_segment_ = std::max(max_segment_, distance(boundary_[i], boundary_[(i + 1) % boundary_.size()]));
  const BBox box = bbox().inflated(4.0 * raster_resolution);
  raster_ = Raster(box, raster_resolution, inside_);
}

double ClassCDomain::depth(Vec2 p) const {
  const std::size_t n = boundary_.size();
  const std::size_t k = boundary_index_.nearest(p);
  const double d = std::min(segment_distance(p, boundary_[(k + n - 1) % n], boundary_[k]),
                            segment_distance(p, boundary_[k], boundary_[(k + 1) % n]));
  return contains(p) ? d : -d;
}

double ClassCDomain::depth(Vec2 p, double cap) const {
  const std::size_t n = boundary_.size();
  const std::size_t k = boundary_index_.nearest_within(p, cap + max_segment_);
  double d = cap;
  if (k != NearestPointIndex::npos)
    d = std::min({cap, segment_distance(p, boundary_[(k + n - 1) % n], boundary_[k]),
                  segment_distance(p, boundary_[k], boundary_[(k + 1) % n])});
  return contains(p) ? d : -d;
}

Vec2 ClassCDomain::boundary_point(double param) const {
  param -= std::floor(param);
  if (star_) return star_->point(2.0 * kPi * param);
  const double u = param * static_cast<double>(boundary_.size());
  const std::size_t i = static_cast<std::size_t>(u) % boundary_.size();
  const double w = u - std::floor(u);
  return boundary_[i] * (1.0 - w) + boundary_[(i + 1) % boundary_.size()] * w;
}

BBox ClassCDomain::bbox() const {
  BBox b;
  for (Vec2 p : boundary_) b.expand(p);
  return b;
}

double ClassCDomain::area() const {
  double a = 0.0;
  for (std::size_t i = 0; i < boundary_.size(); ++i) a += cross(boundary_[i], boundary_[(i + 1) % boundary_.size()]);
  return 0.5 * std::abs(a);
}

Region ClassCDomain::as_region() const {
  return Region(std::make_shared<DomainShape>(std::make_shared<const ClassCDomain>(*this)));
}

ClassCDomain make_star_domain(Vec2 center, std::vector<double> radial_coeffs, const AdmissibleFamily& family,
                              const StarDomainOptions& opts) {
  if (radial_coeffs.empty()) throw InfeasibleError("empty radial coefficient list");
  family.check();
  StarShape star{center, std::move(radial_coeffs)};

  constexpr int kDense = 4096;
  double rho_min = kInf, rho_max = 0.0, beta_max = 0.0;
  std::vector<double> beta(kDense);
  std::vector<Vec2> poly(kDense);
  for (int i = 0; i < kDense; ++i) {
    const double phi = 2.0 * kPi * i / kDense;
    const double rho = star.radius(phi);
    rho_min = std::min(rho_min, rho);
    rho_max = std::max(rho_max, rho);
    if (rho > 0.0) beta[i] = std::atan(std::abs(star.radius_derivative(phi)) / rho);
    beta_max = std::max(beta_max, beta[i]);
    poly[i] = star.point(phi);
  }
  if (!(rho_min > 0.0)) {
    std::ostringstream s;
    s << "nonpositive radius: min rho = " << rho_min;
    throw InfeasibleError(s.str());
  }
  for (Vec2 p : poly)
    if (!(family.B.depth(p) > 0.0)) throw InfeasibleError("domain escapes hold-all B at " + fmt_point(p));

  const double max_angle = std::min(80.0 * kPi / 180.0, std::atan(family.lip));
  if (beta_max >= max_angle) throw InfeasibleError("Lipschitz bound exceeded: boundary too steep for radial charts");
  auto s_at = [&](int n, int j, double phi) { return -star.radius(phi) * std::sin(phi - 2.0 * kPi * j / n); };
  // Restricted charts must cover the boundary, and the chart windows (q half-spacings wide) must
  // reach further than the restricted part; q grows with the radius ratio.
  auto k_of = [&](int n, double half) {
    double k = kInf;
    for (int j = 0; j < n; ++j) {
      const double phij = 2.0 * kPi * j / n;
      k = std::min({k, s_at(n, j, phij - half), -s_at(n, j, phij + half)});
    }
    return k;
  };
  auto r_of = [&](int n) {
    double r = 0.0;
    const double sp = 2.0 * kPi / n;
    for (int i = 0; i < kDense; ++i) {
      const double phi = 2.0 * kPi * i / kDense;
      const int j0 = static_cast<int>(std::floor(phi / sp)) % n;
      r = std::max(r, std::min(std::abs(s_at(n, j0, phi)), std::abs(s_at(n, (j0 + 1) % n, phi))));
    }
    return r * (1.0 + 1e-9);
  };
  int n_charts = 0;
  double half_angle = 0.0, k_omega = 0.0, r_omega = 0.0;
  for (int n = opts.chart_count > 0 ? opts.chart_count : 8; n <= 4096 && n_charts == 0; n *= 2) {
    const double r = r_of(n);
    for (int q = 2; q * kPi / n + beta_max < max_angle; ++q) {
      const double k = k_of(n, q * kPi / n);
      if (r < k) {
        n_charts = n;
        half_angle = q * kPi / n;
        k_omega = k;
        r_omega = r;
        break;
      }
    }
    if (opts.chart_count > 0) break;
  }
  if (n_charts == 0) throw InfeasibleError("Lipschitz bound exceeded: no chart layout with r_Omega < k_Omega");

  auto s_of = [&](int j, double phi) { return s_at(n_charts, j, phi); };
  auto inside = [star](Vec2 p) {
    const Vec2 rel = p - star.center;
    const double r = norm(rel);
    if (r == 0.0) return true;
    return r < star.radius(std::atan2(rel.y, rel.x));
  };

  const int ns = std::max(3, opts.samples_per_chart);
  std::vector<LocalChart> charts;
  charts.reserve(n_charts);
  for (int j = 0; j < n_charts; ++j) {
    const double phij = 2.0 * kPi * j / n_charts;
    LocalChart ch;
    ch.origin = star.point(phij);
    ch.rotation = Mat2::rotation(phij - kPi / 2.0);
    ch.vertical = ch.rotation * Vec2{0.0, 1.0};
    ch.func.half_width = k_omega;
    ch.func.samples.resize(ns);
    double sup = 0.0;
    for (int i = 0; i < ns; ++i) {
      const double target = -k_omega + 2.0 * k_omega * i / (ns - 1);
      // s_of is decreasing in phi on the chart window.
      double lo = phij - half_angle, hi = phij + half_angle;
      for (int it = 0; it < 80; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (s_of(j, mid) > target) lo = mid; else hi = mid;
      }
      const double phi = 0.5 * (lo + hi);
      const double g = dot(star.point(phi) - ch.origin, ch.vertical);
      ch.func.samples[i] = g;
      sup = std::max(sup, std::abs(g));
    }
    double beta_loc = 0.0;
    const int lo_i = static_cast<int>(std::floor((phij - half_angle) / (2.0 * kPi) * kDense));
    const int hi_i = static_cast<int>(std::ceil((phij + half_angle) / (2.0 * kPi) * kDense));
    for (int i = lo_i; i <= hi_i; ++i) beta_loc = std::max(beta_loc, beta[((i % kDense) + kDense) % kDense]);
    ch.func.lipschitz_bound = std::tan(beta_loc + half_angle);
    ch.func.sup_bound = sup;
    if (ch.func.lipschitz_bound > family.lip) {
      std::ostringstream s;
      s << "Lipschitz bound exceeded: chart " << j << " has bound " << ch.func.lipschitz_bound << " > " << family.lip;
      throw InfeasibleError(s.str());
    }
    if (sup > family.sup) {
      std::ostringstream s;
      s << "sup bound exceeded: chart " << j << " has max |g| " << sup << " > " << family.sup;
      throw InfeasibleError(s.str());
    }
    charts.push_back(std::move(ch));
  }

  // Segment depth: first exit of p(s) - t y from Omega and first entry of p(s) + t y.
  const double t_cap_in = 2.2 * rho_max;
  const double t_cap_out = 4.0 * rho_max;
  const double dt = rho_min / 128.0;
  auto first_change = [&](Vec2 p, Vec2 dir, bool want_inside, double cap) {
    double prev = 0.0;
    for (double t = dt; t <= cap; t += dt) {
      if (inside(p + dir * t) != want_inside) {
        double lo = prev, hi = t;
        for (int it = 0; it < 40; ++it) {
          const double mid = 0.5 * (lo + hi);
          if (inside(p + dir * mid) == want_inside) lo = mid; else hi = mid;
        }
        return lo;
      }
      prev = t;
    }
    return cap;
  };
  double a_omega = kInf;
  for (const LocalChart& ch : charts) {
    for (std::size_t i = 0; i < ch.func.samples.size(); ++i) {
      const Vec2 p = ch.point(ch.func.sample_coordinate(i));
      a_omega = std::min(a_omega, first_change(p, -ch.vertical, true, t_cap_in));
      a_omega = std::min(a_omega, first_change(p, ch.vertical, false, t_cap_out));
    }
  }
  a_omega *= 0.9;
  for (LocalChart& ch : charts) ch.segment_depth = a_omega;

  BBox box;
  for (Vec2 p : poly) box.expand(p);
  const double h_r = opts.raster_fraction * box.diagonal();
  ClassCDomain dom(std::move(charts), ClassCParams{k_omega, a_omega, r_omega}, family, inside, std::move(poly), h_r);
  dom.set_star(star);
  return dom;
}

// ---------------------------------------------------------------------------
// Validation

bool ValidationReport::passed() const {
  for (const ChartValidation& c : charts)
    if (!c.passed()) return false;
  return covering && k_bound && r_bound && r_below_k && positive_depth;
}

ValidationReport validate_class_c(const ClassCDomain& dom, const AdmissibleFamily& family,
                                  const SegmentSampling& sampling) {
  const Raster& raster = dom.raster();
  const ClassCParams& prm = dom.params();
  if (!(raster.resolution() < prm.a / 4.0)) {
    std::ostringstream s;
    s << "raster resolution " << raster.resolution() << " is not below a_Omega/4 = " << prm.a / 4.0;
    throw PreconditionError(s.str());
  }
  ValidationReport rep;
  const double tol = 2.0 * raster.cell_diagonal();
  const std::vector<Vec2> bcells = raster.boundary_cells();
  const NearestPointIndex bindex(bcells);

  std::vector<Vec2> restricted;
  for (std::size_t j = 0; j < dom.charts().size(); ++j) {
    const LocalChart& ch = dom.charts()[j];
    ChartValidation cv;
    const double k = ch.func.half_width;
    const double a = ch.segment_depth;
    std::ostringstream detail;
    for (int is = 0; is < sampling.s_samples; ++is) {
      const double s = -k + 2.0 * k * (is + 0.5) / sampling.s_samples;
      const Vec2 p = ch.point(s);
      if (cv.on_boundary && bindex.distance(p) > tol) {
        cv.on_boundary = false;
        detail << "chart point " << fmt_point(p) << " is off the boundary; ";
      }
      for (int it = 0; it < sampling.t_samples; ++it) {
        const double t = a * (it + 0.5) / sampling.t_samples;
        const Vec2 pin = p - ch.vertical * t;
        const Vec2 pout = p + ch.vertical * t;
        if (cv.inner_segment && raster.clearly_outside(pin)) {
          cv.inner_segment = false;
          detail << "inner segment leaves Omega at " << fmt_point(pin) << "; ";
        }
        if (cv.outer_segment && raster.clearly_inside(pout)) {
          cv.outer_segment = false;
          detail << "outer segment enters Omega at " << fmt_point(pout) << "; ";
        }
      }
    }
    cv.detail = detail.str();
    rep.charts.push_back(cv);
    const int nr = std::max(2, static_cast<int>(std::ceil(2.0 * prm.r / raster.resolution())));
    for (int i = 0; i <= nr; ++i) restricted.push_back(ch.point(-prm.r + 2.0 * prm.r * i / nr));
  }
  const NearestPointIndex rindex(restricted);
  for (Vec2 c : bcells) {
    if (rindex.distance(c) > tol) {
      rep.covering = false;
      rep.messages.push_back("restricted charts miss boundary cell " + fmt_point(c));
      break;
    }
  }
  rep.k_bound = prm.k >= family.k;
  rep.r_bound = prm.r <= family.r;
  rep.r_below_k = prm.r > 0.0 && prm.r < prm.k;
  rep.positive_depth = prm.a > 0.0;
  if (!rep.k_bound) rep.messages.push_back("k_Omega below family k");
  if (!rep.r_bound) rep.messages.push_back("r_Omega above family r");
  if (!rep.r_below_k) rep.messages.push_back("r_Omega not in (0, k_Omega)");
  if (!rep.positive_depth) rep.messages.push_back("segment depth a_Omega not positive");
  for (std::size_t j = 0; j < rep.charts.size(); ++j)
    if (!rep.charts[j].passed()) rep.messages.push_back("chart " + std::to_string(j) + ": " + rep.charts[j].detail);
  return rep;
}

// ---------------------------------------------------------------------------
// Boundary strips

bool BoundaryStrip::in_strip(Vec2 x) const {
  const Vec2 st = chart.local_coordinates(x);
  return std::abs(st.x) < half_width && std::abs(st.y) < depth;
}

bool BoundaryStrip::in_lower(Vec2 x) const {
  const Vec2 st = chart.local_coordinates(x);
  return std::abs(st.x) < half_width && st.y < 0.0 && st.y > -depth;
}

bool BoundaryStrip::in_upper(Vec2 x) const {
  const Vec2 st = chart.local_coordinates(x);
  return std::abs(st.x) < half_width && st.y > 0.0 && st.y < depth;
}

Region BoundaryStrip::region(double scale) const { return Region(std::make_shared<StripShape>(*this, scale)); }

std::vector<BoundaryStrip> boundary_strips(const ClassCDomain& dom, double d, const SegmentSampling& sampling) {
  if (!(d > 0.0)) throw PreconditionError("strip depth must be positive");
  const Raster& raster = dom.raster();
  std::vector<BoundaryStrip> strips;
  for (std::size_t j = 0; j < dom.charts().size(); ++j) {
    const LocalChart& ch = dom.charts()[j];
    BoundaryStrip st{j, ch, ch.vertical, d, ch.func.half_width};
    const double k = st.half_width;
    auto fail = [&](const std::string& what, Vec2 p) {
      std::ostringstream s;
      s << what << " at " << fmt_point(p) << " (chart " << j << ", depth " << d << ")";
      throw PreconditionError(s.str());
    };
    for (int is = 0; is < sampling.s_samples; ++is) {
      const double s = -k + 2.0 * k * (is + 0.5) / sampling.s_samples;
      const Vec2 mid = st.point(s, 0.0);
      if (raster.clearly_inside(mid) || raster.clearly_outside(mid)) fail("V_j^0 point off the boundary", mid);
      for (int it = 0; it < sampling.t_samples; ++it) {
        const double t = d * (it + 0.5) / sampling.t_samples;
        const Vec2 lower = st.point(s, -t);
        const Vec2 upper = st.point(s, t);
        if (raster.clearly_outside(lower)) fail("inner segment leaves Omega", lower);
        if (raster.clearly_inside(upper)) fail("outer segment leaves R^2 \\ closure(Omega)", upper);
      }
      const Vec2 cap = st.point(s, -d);
      if (raster.clearly_outside(cap)) fail("bottom cap p_j(s) - d v_j leaves Omega", cap);
    }
    strips.push_back(std::move(st));
  }
  for (Vec2 c : raster.boundary_cells()) {
    bool covered = false;
    for (const BoundaryStrip& st : strips)
      if (st.in_strip(c)) {
        covered = true;
        break;
      }
    if (!covered) throw PreconditionError("strips do not cover boundary cell " + fmt_point(c));
  }
  return strips;
}

// ---------------------------------------------------------------------------
// Hausdorff-Pompeiu distance

double hausdorff_pompeiu(const std::function<bool(Vec2)>& in1, const std::function<bool(Vec2)>& in2,
                         const Region& B, double resolution) {
  if (!(resolution > 0.0)) throw PreconditionError("resolution must be positive");
  const BBox box = B.bbox();
  const int nx = static_cast<int>(std::ceil(box.width() / resolution)) + 1;
  const int ny = static_cast<int>(std::ceil(box.height() / resolution)) + 1;
  std::vector<char> m1(static_cast<std::size_t>(nx) * ny, 0), m2(m1.size(), 0);
  std::size_t c1 = 0, c2 = 0;
  for (int j = 0; j < ny; ++j)
    for (int i = 0; i < nx; ++i) {
      const Vec2 p{box.lo.x + i * resolution, box.lo.y + j * resolution};
      if (!(B.depth(p) >= 0.0)) continue;
      const std::size_t idx = static_cast<std::size_t>(j) * nx + i;
      if (!in1(p)) { m1[idx] = 1; ++c1; }
      if (!in2(p)) { m2[idx] = 1; ++c2; }
    }
  if (c1 == 0 || c2 == 0) throw PreconditionError("obstacle exhausts hold-all");
  const std::vector<double> d1 = squared_edt(m1, nx, ny);
  const std::vector<double> d2 = squared_edt(m2, nx, ny);
  double h2 = 0.0;
  for (std::size_t i = 0; i < m1.size(); ++i) {
    if (m1[i]) h2 = std::max(h2, d2[i]);
    if (m2[i]) h2 = std::max(h2, d1[i]);
  }
  return std::sqrt(h2) * resolution;
}

double hausdorff_pompeiu(const ClassCDomain& dom1, const ClassCDomain& dom2, const Region& B, double resolution) {
  return hausdorff_pompeiu([&](Vec2 p) { return dom1.contains(p); }, [&](Vec2 p) { return dom2.contains(p); }, B,
                           resolution);
}

// ---------------------------------------------------------------------------
// Gamma properties

namespace {

int last_index_search(std::size_t n, const std::function<bool(std::size_t)>& holds, int first_index,
                      const char* property) {
  if (n == 0 || !holds(n - 1)) throw PreconditionError(std::string(property) + " not witnessed");
  std::size_t m = n - 1;
  while (m > 0 && holds(m - 1)) --m;
  return static_cast<int>(m) + first_index;
}

}  // namespace

int check_gamma(std::span<const ClassCDomain> seq, const ClassCDomain& limit, const Region& K, const GammaOptions& opts) {
  const std::vector<Vec2> pts = K.closure_samples(opts.resolution);
  for (Vec2 p : pts)
    if (!(limit.depth(p, 2.0 * opts.tolerance) > opts.tolerance))
      throw PreconditionError("closure of K is not inside the limit domain at " + fmt_point(p));
  return last_index_search(
      seq.size(),
      [&](std::size_t m) {
        for (Vec2 p : pts)
          if (!(seq[m].depth(p, 2.0 * opts.tolerance) > opts.tolerance)) return false;
        return true;
      },
      opts.first_index, "Gamma-property");
}

int check_gamma_hat(std::span<const ClassCDomain> seq, const ClassCDomain& limit, const Region& K,
                    const GammaOptions& opts) {
  const std::vector<Vec2> pts = K.closure_samples(opts.resolution);
  for (Vec2 p : pts)
    if (!(limit.depth(p, 2.0 * opts.tolerance) < -opts.tolerance))
      throw PreconditionError("closure of K meets the closure of the limit domain at " + fmt_point(p));
  const Region& D = limit.family().D;
  return last_index_search(
      seq.size(),
      [&](std::size_t m) {
        for (Vec2 p : pts)
          if (!(seq[m].depth(p, 2.0 * opts.tolerance) < -opts.tolerance) || !(D.depth(p) > 0.0)) return false;
        return true;
      },
      opts.first_index, "Gamma-hat-property");
}

}  // namespace divshape
