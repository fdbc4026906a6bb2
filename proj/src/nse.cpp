#include "divshape/nse.hpp"

#include <Eigen/Sparse>
#include <Eigen/UmfPackSupport>
#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "json.hpp"

#include "divshape/error.hpp"

namespace divshape {

namespace {

using SpMat = Eigen::SparseMatrix<double>;
using Triplets = std::vector<Eigen::Triplet<double>>;

constexpr int kTrilinearDegree = 5;
constexpr int kLoadDegree = 6;

std::string fmt(double v) {
  std::ostringstream s;
  s.precision(6);
  s << v;
  return s.str();
}

// Quadrature data of one element: P2 values and gradients, P1 values (barycentrics).
struct QuadData {
  std::array<double, 3> bary;
  double w;
  Vec2 x;
  std::array<double, 6> phi;
  std::array<Vec2, 6> grad;
};

std::vector<QuadData> quad_data(const ElementGeometry& g, int degree) {
  std::vector<QuadData> out;
  for (const QuadPoint& q : triangle_quadrature(degree))
    out.push_back({q.bary, q.weight * g.area, g.map(q.bary), basis_values(2, q.bary), basis_gradients(2, q.bary, g)});
  return out;
}

class TaylorHood {
 public:
  TaylorHood(MeshPtr mesh, const SolverConfig& cfg) : mesh_(std::move(mesh)), cfg_(cfg), v_{mesh_, 2} {
    const TriangleMesh& m = *mesh_;
    n_ = v_.size();
    np_ = m.num_vertices();
    size_ = 2 * n_ + np_ + 1;
    fixed_.assign(size_, 0);
    for (std::size_t e = 0; e < m.num_edges(); ++e) {
      if (m.edge_triangles()[e][1] >= 0) continue;
      for (int a : {m.edges()[e][0], m.edges()[e][1], static_cast<int>(m.num_vertices() + e)}) {
        fixed_[a] = 1;
        fixed_[n_ + a] = 1;
      }
    }
  }

  std::size_t size() const { return size_; }
  std::size_t velocity_size() const { return n_; }
  const std::vector<char>& fixed() const { return fixed_; }

  // Linear system: Stokes part plus convection linearised around u (Picard) or
  // its full Jacobian (Newton). mode 0: Stokes, 1: Picard, 2: Newton.
  SpMat matrix(const Eigen::VectorXd& u, int mode) const {
    const TriangleMesh& m = *mesh_;
    const double s = cfg_.convection_sign;
    Triplets trip;
    trip.reserve(m.num_triangles() * 160);
    auto add = [&](std::size_t r, std::size_t c, double v) {
      if (fixed_[r] || fixed_[c]) return;
      trip.emplace_back(static_cast<int>(r), static_cast<int>(c), v);
    };
    for (std::size_t t = 0; t < m.num_triangles(); ++t) {
      const ElementGeometry g = element_geometry(m, t);
      const auto d = v_.dofs(t);
      const auto& tri = m.triangles()[t];
      double K[6][6] = {}, C[6][6] = {}, J[2][2][6][6] = {}, B[2][3][6] = {}, mass[3] = {};
      for (const QuadData& q : quad_data(g, kTrilinearDegree)) {
        Vec2 w{}, gx{}, gy{};
        for (int a = 0; a < 6; ++a) {
          w += Vec2{u[d[a]], u[n_ + d[a]]} * q.phi[a];
          gx += q.grad[a] * u[d[a]];
          gy += q.grad[a] * u[n_ + d[a]];
        }
        const double gu[2][2] = {{gx.x, gx.y}, {gy.x, gy.y}};
        const double uval[2] = {w.x, w.y};
        for (int a = 0; a < 6; ++a) {
          for (int b = 0; b < 6; ++b) {
            K[a][b] += q.w * dot(q.grad[a], q.grad[b]);
            if (mode == 0) continue;
            const double adv_b = dot(w, q.grad[b]) * q.phi[a];
            const double adv_a = dot(w, q.grad[a]) * q.phi[b];
            C[a][b] += q.w * (cfg_.skew_form ? 0.5 * (adv_b - adv_a) : adv_b);
            if (mode != 2) continue;
            for (int i = 0; i < 2; ++i)
              for (int j = 0; j < 2; ++j) {
                const double gradb = j == 0 ? q.grad[a].x : q.grad[a].y;
                const double plain = q.phi[b] * gu[i][j] * q.phi[a];
                J[i][j][a][b] += q.w * (cfg_.skew_form ? 0.5 * (plain - q.phi[b] * gradb * uval[i]) : plain);
              }
          }
          for (int k = 0; k < 3; ++k) {
            B[0][k][a] -= q.w * q.bary[k] * q.grad[a].x;
            B[1][k][a] -= q.w * q.bary[k] * q.grad[a].y;
          }
        }
        for (int k = 0; k < 3; ++k) mass[k] += q.w * q.bary[k];
      }
      for (int a = 0; a < 6; ++a) {
        for (int b = 0; b < 6; ++b) {
          const double diag = cfg_.gamma * K[a][b] + s * C[a][b];
          for (int i = 0; i < 2; ++i)
            for (int j = 0; j < 2; ++j) {
              const double v = (i == j ? diag : 0.0) + s * J[i][j][a][b];
              add(i * n_ + d[a], j * n_ + d[b], v);
            }
        }
        for (int k = 0; k < 3; ++k)
          for (int i = 0; i < 2; ++i) {
            add(i * n_ + d[a], 2 * n_ + tri[k], B[i][k][a]);
            add(2 * n_ + tri[k], i * n_ + d[a], B[i][k][a]);
          }
      }
      for (int k = 0; k < 3; ++k) {
        add(2 * n_ + tri[k], size_ - 1, mass[k]);
        add(size_ - 1, 2 * n_ + tri[k], mass[k]);
      }
    }
    for (std::size_t r = 0; r < size_; ++r)
      if (fixed_[r]) trip.emplace_back(static_cast<int>(r), static_cast<int>(r), 1.0);
    SpMat A(static_cast<int>(size_), static_cast<int>(size_));
    A.setFromTriplets(trip.begin(), trip.end());
    return A;
  }

  Eigen::VectorXd load(const BodyForce& f) const {
    const TriangleMesh& m = *mesh_;
    Eigen::VectorXd F = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(size_));
    if (f.is_zero()) return F;
    for (std::size_t t = 0; t < m.num_triangles(); ++t) {
      const ElementGeometry g = element_geometry(m, t);
      const auto d = v_.dofs(t);
      for (const QuadData& q : quad_data(g, kLoadDegree)) {
        const Vec2 fv = f.at(m, t, q.bary, q.x);
        for (int a = 0; a < 6; ++a) {
          F[d[a]] += q.w * fv.x * q.phi[a];
          F[n_ + d[a]] += q.w * fv.y * q.phi[a];
        }
      }
    }
    for (std::size_t r = 0; r < size_; ++r)
      if (fixed_[r]) F[r] = 0.0;
    return F;
  }

  // Nonlinear residual A(x) x - F with the convection term evaluated exactly.
  Eigen::VectorXd residual(const Eigen::VectorXd& x, const Eigen::VectorXd& F) const {
    const SpMat lin = matrix(x, 0);
    Eigen::VectorXd r = lin * x - F;
    const TriangleMesh& m = *mesh_;
    const double s = cfg_.convection_sign;
    for (std::size_t t = 0; t < m.num_triangles(); ++t) {
      const ElementGeometry g = element_geometry(m, t);
      const auto d = v_.dofs(t);
      for (const QuadData& q : quad_data(g, kTrilinearDegree)) {
        Vec2 w{}, gx{}, gy{};
        for (int a = 0; a < 6; ++a) {
          w += Vec2{x[d[a]], x[n_ + d[a]]} * q.phi[a];
          gx += q.grad[a] * x[d[a]];
          gy += q.grad[a] * x[n_ + d[a]];
        }
        const Vec2 adv{dot(w, gx), dot(w, gy)};
        for (int a = 0; a < 6; ++a) {
          const double wa = dot(w, q.grad[a]);
          double rx = adv.x * q.phi[a], ry = adv.y * q.phi[a];
          if (cfg_.skew_form) {
            rx = 0.5 * (rx - wa * w.x);
            ry = 0.5 * (ry - wa * w.y);
          }
          r[d[a]] += s * q.w * rx;
          r[n_ + d[a]] += s * q.w * ry;
        }
      }
    }
    for (std::size_t i = 0; i < size_; ++i)
      if (fixed_[i]) r[i] = 0.0;
    return r;
  }

  WeakSolution unpack(const Eigen::VectorXd& x) const {
    WeakSolution sol;
    sol.velocity = VectorField::zeros(v_);
    sol.pressure = ScalarField::zeros({mesh_, 1});
    for (std::size_t i = 0; i < n_; ++i) {
      sol.velocity.x.values()[i] = fixed_[i] ? 0.0 : x[i];
      sol.velocity.y.values()[i] = fixed_[n_ + i] ? 0.0 : x[n_ + i];
    }
    for (std::size_t k = 0; k < np_; ++k) sol.pressure.values()[k] = x[2 * n_ + k];
    return sol;
  }

 private:
  MeshPtr mesh_;
  SolverConfig cfg_;
  FESpace v_;
  std::size_t n_ = 0, np_ = 0, size_ = 0;
  std::vector<char> fixed_;
};

class Factorization {
 public:
  void solve(const SpMat& A, const Eigen::VectorXd& b, Eigen::VectorXd& x, const std::vector<double>& history) {
    if (!analysed_) {
      lu_.umfpackControl()(UMFPACK_STRATEGY) = UMFPACK_STRATEGY_SYMMETRIC;
      lu_.analyzePattern(A);
      analysed_ = true;
    }
    lu_.factorize(A);
    if (lu_.info() != Eigen::Success) throw ConvergenceError("singular linear system", history);
    x = lu_.solve(b);
    if (lu_.info() != Eigen::Success) throw ConvergenceError("singular linear system", history);
  }

 private:
  Eigen::UmfPackLU<SpMat> lu_;
  bool analysed_ = false;
};

double free_norm(const Eigen::VectorXd& r, std::size_t upto) {
  return r.head(static_cast<Eigen::Index>(upto)).norm();
}

}  // namespace

void SolverConfig::check() const {
  if (!(gamma > 0.0)) throw ConfigError("gamma must be positive");
  if (convection_sign != 1 && convection_sign != -1) throw ConfigError("convection_sign must be +1 or -1");
  if (!(picard_tol > 0.0 && picard_tol <= 1e-2)) throw ConfigError("picard_tol must lie in (0, 1e-2]");
  if (!(newton_tol > 0.0 && newton_tol <= 1e-2)) throw ConfigError("newton_tol must lie in (0, 1e-2]");
  if (max_iters < 1) throw ConfigError("max_iters must be at least 1");
}

Vec2 BodyForce::at(const TriangleMesh& mesh, std::size_t t, const std::array<double, 3>& bary, Vec2 x) const {
  if (field.space().mesh) {
    if (&field.mesh() == &mesh) return field.value(t, bary);
    if (!mesh.parent_triangle().empty()) {
      const std::size_t pt = static_cast<std::size_t>(mesh.parent_triangle()[t]);
      const TriangleMesh& pm = field.mesh();
      if (pt < pm.num_triangles()) {
        const auto& tri = pm.triangles()[pt];
        const auto b = barycentric(pm.vertices()[tri[0]], pm.vertices()[tri[1]], pm.vertices()[tri[2]], x);
        if (std::min({b[0], b[1], b[2]}) > -1e-9) return field.value(pt, b);
      }
    }
    if (!fn) throw PreconditionError("body force field lives on an unrelated mesh");
  }
  return fn ? fn(x) : Vec2{};
}

double BodyForce::l2_norm(const TriangleMesh& mesh) const {
  if (is_zero()) return 0.0;
  double s = 0.0;
  for (std::size_t t = 0; t < mesh.num_triangles(); ++t) {
    const ElementGeometry g = element_geometry(mesh, t);
    for (const QuadPoint& q : triangle_quadrature(kLoadDegree)) s += q.weight * g.area * norm2(at(mesh, t, q.bary, g.map(q.bary)));
  }
  return std::sqrt(s);
}

WeakSolution solve_nse(const MeshPtr& mesh, const BodyForce& f, const SolverConfig& cfg) {
  cfg.check();
  if (!mesh || mesh->num_triangles() == 0) throw PreconditionError("empty mesh");
  const TaylorHood th(mesh, cfg);
  const std::size_t nvel = 2 * th.velocity_size();
  const Eigen::VectorXd F = th.load(f);
  const double fnorm = free_norm(F, nvel);
  Eigen::VectorXd x = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(th.size()));
  if (fnorm == 0.0) {
    WeakSolution sol = th.unpack(x);
    sol.residual_history = {0.0};
    sol.converged = true;
    return sol;
  }
  Factorization lu;
  std::vector<double> history;
  bool newton = false;
  int picard = 0, newton_steps = 0, growth = 0;
  double best = std::numeric_limits<double>::infinity();
  bool converged = false;
  for (int it = 0; it <= cfg.max_iters; ++it) {
    const Eigen::VectorXd r = th.residual(x, F);
    const double rel = free_norm(r, th.size()) / fnorm;
    if (!history.empty()) growth = rel > best ? growth + 1 : 0;
    best = std::min(best, rel);
    history.push_back(rel);
    if (!std::isfinite(rel)) throw ConvergenceError("nonlinear iteration produced a non-finite residual", history);
    if (growth >= 5)
      throw ConvergenceError("nonlinear iteration diverges: residual above its best value on 5 consecutive steps (last " + fmt(rel) + ")",
                             history);
    if (rel < cfg.newton_tol) {
      converged = true;
      break;
    }
    if (it == cfg.max_iters) break;
    if (!newton && rel < cfg.picard_tol) newton = true;
    if (newton) {
      Eigen::VectorXd dx;
      lu.solve(th.matrix(x, 2), -r, dx, history);
      x += dx;
      ++newton_steps;
    } else {
      Eigen::VectorXd next;
      lu.solve(th.matrix(x, it == 0 ? 0 : 1), F, next, history);
      x = next;
      ++picard;
    }
  }
  WeakSolution sol = th.unpack(x);
  sol.residual_history = std::move(history);
  sol.converged = converged;
  sol.picard_iterations = picard;
  sol.newton_iterations = newton_steps;
  return sol;
}

WeakSolution solve_interior(const MeshPtr& mesh, const BodyForce& f, const SolverConfig& cfg) {
  if (mesh && mesh->num_holes() != 0) throw PreconditionError("interior problem needs a simply connected mesh");
  return solve_nse(mesh, f, cfg);
}

double trilinear(const VectorField& w, const VectorField& u, const VectorField& v, bool skew) {
  const TriangleMesh& m = u.mesh();
  double s = 0.0;
  for (std::size_t t = 0; t < m.num_triangles(); ++t) {
    const ElementGeometry g = element_geometry(m, t);
    for (const QuadPoint& q : triangle_quadrature(kTrilinearDegree)) {
      const Vec2 wv = w.value(t, q.bary), uv = u.value(t, q.bary), vv = v.value(t, q.bary);
      const Vec2 gux = u.x.gradient(t, q.bary, g), guy = u.y.gradient(t, q.bary, g);
      const double plain = dot(wv, gux) * vv.x + dot(wv, guy) * vv.y;
      double val = plain;
      if (skew) {
        const Vec2 gvx = v.x.gradient(t, q.bary, g), gvy = v.y.gradient(t, q.bary, g);
        val = 0.5 * (plain - (dot(wv, gvx) * uv.x + dot(wv, gvy) * uv.y));
      }
      s += q.weight * g.area * val;
    }
  }
  return s;
}

namespace {

double inner_grad(const VectorField& a, const VectorField& b) {
  const TriangleMesh& m = a.mesh();
  double s = 0.0;
  for (std::size_t t = 0; t < m.num_triangles(); ++t) {
    const ElementGeometry g = element_geometry(m, t);
    for (const QuadPoint& q : triangle_quadrature(2))
      s += q.weight * g.area *
           (dot(a.x.gradient(t, q.bary, g), b.x.gradient(t, q.bary, g)) +
            dot(a.y.gradient(t, q.bary, g), b.y.gradient(t, q.bary, g)));
  }
  return s;
}

double force_inner(const BodyForce& f, const VectorField& v) {
  if (f.is_zero()) return 0.0;
  const TriangleMesh& m = v.mesh();
  double s = 0.0;
  for (std::size_t t = 0; t < m.num_triangles(); ++t) {
    const ElementGeometry g = element_geometry(m, t);
    for (const QuadPoint& q : triangle_quadrature(kLoadDegree))
      s += q.weight * g.area * dot(f.at(m, t, q.bary, g.map(q.bary)), v.value(t, q.bary));
  }
  return s;
}

}  // namespace

double momentum_residual(const WeakSolution& sol, const BodyForce& f, const SolverConfig& cfg,
                         const VectorField& phi) {
  const VectorField& u = sol.velocity;
  const double r = cfg.gamma * inner_grad(u, phi) + cfg.convection_sign * trilinear(u, u, phi, cfg.skew_form) -
                   force_inner(f, phi);
  const double scale = cfg.gamma * h1_seminorm(u) * h1_seminorm(phi) + f.l2_norm(u.mesh()) * l2_norm(phi);
  return scale > 0.0 ? std::abs(r) / scale : std::abs(r);
}

VectorField project_divergence_free(const VectorField& v) {
  if (v.space().degree != 2 || v.space().discontinuous) throw PreconditionError("projection needs a continuous P2 field");
  SolverConfig cfg;
  const TaylorHood th(v.space().mesh, cfg);
  const std::size_t n = th.velocity_size();
  Eigen::VectorXd x = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(th.size()));
  for (std::size_t i = 0; i < n; ++i) {
    x[i] = v.x.values()[i];
    x[n + i] = v.y.values()[i];
  }
  for (std::size_t i = 0; i < 2 * n; ++i)
    if (th.fixed()[i] && x[i] != 0.0) throw PreconditionError("projection needs a field with zero trace");
  const SpMat A = th.matrix(x, 0);
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(x.size());
  rhs.head(static_cast<Eigen::Index>(2 * n)) = (A * x).head(static_cast<Eigen::Index>(2 * n));
  for (std::size_t i = 0; i < 2 * n; ++i)
    if (th.fixed()[i]) rhs[i] = 0.0;
  Factorization lu;
  Eigen::VectorXd y;
  lu.solve(A, rhs, y, {});
  return th.unpack(y).velocity;
}

double pressure_divergence_residual(const VectorField& u) {
  const TriangleMesh& m = u.mesh();
  std::vector<double> div(m.num_vertices(), 0.0), mass(m.num_vertices(), 0.0);
  for (std::size_t t = 0; t < m.num_triangles(); ++t) {
    const ElementGeometry g = element_geometry(m, t);
    const auto& tri = m.triangles()[t];
    for (const QuadPoint& q : triangle_quadrature(3)) {
      const double dv = u.x.gradient(t, q.bary, g).x + u.y.gradient(t, q.bary, g).y;
      for (int k = 0; k < 3; ++k) {
        div[tri[k]] += q.weight * g.area * dv * q.bary[k];
        mass[tri[k]] += q.weight * g.area * q.bary[k] * q.bary[k];
      }
    }
  }
  const double un = h1_norm(u);
  if (un == 0.0) return 0.0;
  double worst = 0.0;
  for (std::size_t k = 0; k < div.size(); ++k)
    if (mass[k] > 0.0) worst = std::max(worst, std::abs(div[k]) / (std::sqrt(mass[k]) * un));
  return worst;
}

double slab_width(const std::vector<Vec2>& points) {
  std::vector<Vec2> p = points;
  std::sort(p.begin(), p.end(), [](Vec2 a, Vec2 b) { return a.x < b.x || (a.x == b.x && a.y < b.y); });
  p.erase(std::unique(p.begin(), p.end(), [](Vec2 a, Vec2 b) { return a.x == b.x && a.y == b.y; }), p.end());
  if (p.size() < 3) return 0.0;
  std::vector<Vec2> hull(2 * p.size());
  std::size_t k = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    while (k >= 2 && cross(hull[k - 1] - hull[k - 2], p[i] - hull[k - 2]) <= 0.0) --k;
    hull[k++] = p[i];
  }
  for (std::size_t i = p.size() - 1, lo = k + 1; i > 0; --i) {
    while (k >= lo && cross(hull[k - 1] - hull[k - 2], p[i - 1] - hull[k - 2]) <= 0.0) --k;
    hull[k++] = p[i - 1];
  }
  hull.resize(k - 1);
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < hull.size(); ++i) {
    const Vec2 a = hull[i], b = hull[(i + 1) % hull.size()];
    const double len = distance(a, b);
    if (len == 0.0) continue;
    double far = 0.0;
    for (Vec2 q : hull) far = std::max(far, std::abs(cross(b - a, q - a)) / len);
    best = std::min(best, far);
  }
  return best;
}

double uniqueness_constant(double gamma, double width) {
  constexpr double kCb = 2.0;
  const double cp = width / kPi;
  return gamma * gamma / (kCb * cp * cp);
}

double uniqueness_margin(const BodyForce& f, const SolverConfig& cfg, const TriangleMesh& D) {
  return uniqueness_constant(cfg.gamma, slab_width(D.vertices())) - f.l2_norm(D);
}

double energy_identity_residual(const WeakSolution& sol, const BodyForce& f, const SolverConfig& cfg) {
  const double e = cfg.gamma * inner_grad(sol.velocity, sol.velocity);
  const double w = force_inner(f, sol.velocity);
  return std::abs(e - w) / std::max(e, std::numeric_limits<double>::min());
}

void write_solution(const std::string& dir, const WeakSolution& sol, double energy_residual, double margin) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  auto open = [&](const std::string& name) {
    std::ofstream out(fs::path(dir) / name);
    if (!out) throw Error("cannot write " + (fs::path(dir) / name).string());
    out.precision(17);
    return out;
  };
  {
    std::ofstream out = open("velocity.csv");
    write_field_csv(out, {&sol.velocity.x, &sol.velocity.y}, {"u1", "u2"});
  }
  {
    std::ofstream out = open("pressure.csv");
    write_field_csv(out, {&sol.pressure}, {"p"});
  }
  {
    std::ofstream out = open("residual_history.csv");
    out << "iteration,residual\n";
    for (std::size_t i = 0; i < sol.residual_history.size(); ++i) out << i << ',' << sol.residual_history[i] << '\n';
  }
  const nlohmann::json summary{{"h", sol.velocity.mesh().h()},
                               {"iters", sol.picard_iterations + sol.newton_iterations},
                               {"picard_iterations", sol.picard_iterations},
                               {"newton_iterations", sol.newton_iterations},
                               {"converged", sol.converged},
                               {"energy_residual", energy_residual},
                               {"margin", margin}};
  std::ofstream out = open("summary.json");
  out << summary.dump(2) << '\n';
}

}  // namespace divshape
