#pragma once

#include <functional>
#include <string>
#include <vector>

#include "divshape/fe.hpp"

namespace divshape {

struct SolverConfig {
  double gamma = 1.0;            ///< viscosity
  int convection_sign = -1;      ///< -gamma Lap u + sign (u . grad) u + grad p = f
  double picard_tol = 1e-4;
  double newton_tol = 1e-12;
  int max_iters = 50;
  bool skew_form = true;

  /// Throws ConfigError naming the offending field.
  void check() const;
};

/// Body force given by a closed form, by a finite element field, or both
/// (the field wins on its own mesh and on submeshes of it).
struct BodyForce {
  std::function<Vec2(Vec2)> fn;
  VectorField field;

  static BodyForce zero() { return {}; }
  static BodyForce from_function(std::function<Vec2(Vec2)> f) { return {std::move(f), {}}; }
  static BodyForce from_field(VectorField f) { return {{}, std::move(f)}; }

  bool is_zero() const { return !fn && !field.space().mesh; }
  /// Value at barycentric point `bary` of triangle t of `mesh` (physical point x).
  Vec2 at(const TriangleMesh& mesh, std::size_t t, const std::array<double, 3>& bary, Vec2 x) const;
  double l2_norm(const TriangleMesh& mesh) const;
};

struct WeakSolution {
  VectorField velocity;             ///< continuous P2
  ScalarField pressure;             ///< continuous P1, zero mean
  std::vector<double> residual_history;
  bool converged = false;
  int picard_iterations = 0;
  int newton_iterations = 0;
};

/// Taylor-Hood solve with u = 0 on every boundary edge of the mesh. Picard
/// steps until the relative residual drops below picard_tol, then Newton.
/// Throws ConvergenceError when the residual stays above its running minimum
/// on 5 consecutive steps
/// or becomes non-finite, and Error on a singular linear system.
WeakSolution solve_nse(const MeshPtr& mesh, const BodyForce& f, const SolverConfig& cfg = {});
/// Same problem posed on the interior of an obstacle: every boundary node is no-slip.
WeakSolution solve_interior(const MeshPtr& mesh, const BodyForce& f, const SolverConfig& cfg = {});

/// gamma |grad u|^2 + sign c(u; u, phi) - (f, phi) for a test field phi in the velocity space, divided by
/// gamma |grad u| |grad phi| + |f| |phi|.
double momentum_residual(const WeakSolution& sol, const BodyForce& f, const SolverConfig& cfg,
                         const VectorField& phi);
/// Discretely divergence-free part of a P2 velocity field with zero trace (H1-orthogonal projection).
VectorField project_divergence_free(const VectorField& v);
/// max_k |(q_k, div u)| / (|q_k|_L2 |u|_H1) over P1 pressure basis functions.
double pressure_divergence_residual(const VectorField& u);

/// Trilinear form c(w; u, v), skew-symmetrised or plain.
double trilinear(const VectorField& w, const VectorField& u, const VectorField& v, bool skew);

/// Smallest slab thickness containing the points.
double slab_width(const std::vector<Vec2>& points);
/// gamma^2 / (C_b C_P^2) with C_P = width / pi and C_b = 2.
double uniqueness_constant(double gamma, double width);
/// uniqueness_constant(gamma, width of D) - |f|_L2(D).
double uniqueness_margin(const BodyForce& f, const SolverConfig& cfg, const TriangleMesh& D);

/// |gamma |grad u|^2 - (f, u)| / max(gamma |grad u|^2, tiny).
double energy_identity_residual(const WeakSolution& sol, const BodyForce& f, const SolverConfig& cfg);

/// velocity.csv, pressure.csv, residual_history.csv and summary.json in `dir`.
void write_solution(const std::string& dir, const WeakSolution& sol, double energy_residual, double margin);

}  // namespace divshape
