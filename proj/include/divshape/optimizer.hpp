#pragma once

#include <memory>
#include <string>
#include <vector>

#include "divshape/domain.hpp"
#include "divshape/expression.hpp"
#include "divshape/fe.hpp"
#include "divshape/nse.hpp"

namespace divshape {

enum class CostKind { Drag, Custom };
/// Where the cost is integrated: D minus the obstacle, B minus the obstacle,
/// or the obstacle itself (flow inside Omega).
enum class CostRegion { DMinus, BMinus, Interior };

/// Integrand J(x, xi, eta) with its growth bound J <= C (g(x) + |xi|^2 + |eta|^2).
/// Custom integrands are expressions in x, y, u1, u2, u1_x, u1_y, u2_x, u2_y;
/// g is an expression in x, y.
struct CostFunctional {
  CostKind kind = CostKind::Drag;
  Expression integrand;
  Expression growth_g;
  double growth_C = 2.0;
  CostRegion region = CostRegion::DMinus;

  /// |grad u|^2 + |(grad u)^T|^2 with C = 2, g = 0.
  static CostFunctional drag(CostRegion region = CostRegion::DMinus);
  /// Throws ConfigError on a malformed expression or nonpositive C.
  static CostFunctional custom(const std::string& integrand, const std::string& g, double C,
                               CostRegion region = CostRegion::DMinus);

  /// eta holds the velocity gradient rows (du1/dx, du1/dy; du2/dx, du2/dy).
  double value(Vec2 x, Vec2 xi, const Mat2& eta) const;
  double growth_bound(Vec2 x, Vec2 xi, const Mat2& eta) const;
  double g(Vec2 x) const;
};

const std::vector<std::string>& cost_variables();

/// Mesh of D with the obstacle meshed as region 1, or of the obstacle alone for CostRegion::Interior.
struct CostEvaluation {
  double cost = 0.0;
  bool rejected = false;   ///< infeasible candidate; cost is +inf
  bool diverged = false;   ///< nonlinear solve failed; cost is +inf
  std::string message;
  MeshPtr mesh;            ///< full mesh (flow region 0, obstacle region 1)
  MeshPtr flow;            ///< mesh the state lives on
  WeakSolution solution;
};

/// Cost of J over the configured region for the state solving the flow problem.
/// Rejects (cost +inf) candidates failing class-C validation, closer than 2h to
/// the boundary of D, or not meshable at h, and flags diverged solves. Throws PreconditionError with
/// the location when J < 0 or the growth bound fails at a quadrature point.
CostEvaluation evaluate_cost(const ClassCDomain& dom, const CostFunctional& J, const BodyForce& f,
                             const SolverConfig& cfg, double h);
/// Integral of J(x, u, grad u) over the flow mesh weighted by `weight(x)` in [0, 1].
double integrate_cost(const WeakSolution& sol, const CostFunctional& J, const std::function<double(Vec2)>& weight = {});

struct OptimizerConfig {
  Vec2 center{0.5, 0.5};
  std::vector<double> initial;  ///< radial coefficients [c0, a1, b1, ...]
  std::vector<double> step;     ///< initial simplex offsets; empty means 0.1 * max(|x_i|, 0.1)
  std::vector<double> lower;    ///< optional per-parameter bounds
  std::vector<double> upper;
  int max_evals = 200;          ///< cost evaluations (NSE solves) including the initial point, which is always evaluated
  double x_tol = 1e-3;          ///< stop when the simplex diameter falls below this
  double h = 0.05;
  StarDomainOptions star;

  /// Throws ConfigError naming the offending field.
  void check() const;
};

struct Candidate {
  std::vector<double> params;
  std::shared_ptr<const ClassCDomain> domain;
  std::shared_ptr<const CostEvaluation> eval;
  double cost = 0.0;
  int evaluation = 0;  ///< index of the evaluation that produced it
};

struct EvaluationRecord {
  std::vector<double> params;
  double cost = 0.0;
  std::string status;  ///< "ok", "rejected" or "diverged"
};

struct DiagnosticsReport {
  std::size_t tail_start = 0;                  ///< first sequence index of the tail
  std::vector<double> tail_gaps;               ///< rho(Omega_m, last tail domain) over the tail
  std::vector<double> weak_limit_check;        ///< |u_m - u|_L2(D) over the tail
  double vanishing_check = 0.0;                ///< |u|_L2 over the meshed Omega*
  double vanishing_nodal = 0.0;                ///< max |u| at raster nodes of the meshed Omega*
  std::vector<double> norm_convergence;        ///< | |u_m|_H1 - |u|_H1 | over the tail
  double norm_gap = 0.0;                       ///< relative H1 norm gap of the last two tail iterates
  double fatou_gap = 0.0;                      ///< J(Omega*) - min_m J(Omega_m)
  std::vector<double> exhaustion_levels;       ///< erosion distances of G_j
  std::vector<double> exhaustion_values;       ///< int_{G_j} J(x, u, grad u)
  std::vector<int> exhaustion_indices;         ///< m_j with closure(G_j) in D minus closure(Omega_m); -1 if none
  std::vector<int> gamma_indices;              ///< m(K) per probe; -1 if not witnessed
  std::vector<std::string> probe_kinds;        ///< "gamma" (K in Omega*) or "gamma-hat"
  double u_l2 = 0.0;
  double u_h1 = 0.0;

  /// Every entry finite and every index witnessed.
  bool finite() const;
};

struct OptimizationRun {
  AdmissibleFamily family;
  CostFunctional functional;
  std::vector<Candidate> sequence;            ///< accepted candidates (strict improvements)
  std::size_t best = 0;
  std::vector<double> hausdorff_gaps;         ///< rho(Omega_m, Omega_{m+1})
  std::vector<EvaluationRecord> evaluations;  ///< every cost evaluation, feasible or not
  int solves = 0;                             ///< NSE solves performed
  double resolution = 0.0;                    ///< raster resolution of the gaps
  DiagnosticsReport diagnostics;

  const Candidate& best_candidate() const { return sequence.at(best); }
};

/// Nelder-Mead over the radial coefficients of a star domain with infeasible
/// candidates rejected (cost +inf). Throws InfeasibleError when the initial
/// point is infeasible or no feasible initial simplex exists.
OptimizationRun minimize(const AdmissibleFamily& family, const CostFunctional& J, const BodyForce& f,
                         const SolverConfig& cfg, const OptimizerConfig& opt);

/// Candidate from an explicit domain and its evaluation.
Candidate make_candidate(std::vector<double> params, const ClassCDomain& dom, CostEvaluation eval, int evaluation = 0);
/// Hausdorff gaps and best index of a hand-built sequence.
void finalize_run(OptimizationRun& run);

struct DiagnosticsOptions {
  std::size_t tail = 3;         ///< number of trailing candidates forming the tail
  int exhaustion_levels = 6;    ///< G_j for j = 1..levels at erosion 2^-j diam(D)
};

/// Replays the existence argument on the tail of the run. Throws
/// PreconditionError "sequence not Cauchy in rho" when the distance from tail
/// domains to the last one increases by more than two raster cells, and when
/// fewer than `tail` candidates are stored.
DiagnosticsReport run_diagnostics(const OptimizationRun& run, const std::vector<Region>& probes,
                                const DiagnosticsOptions& opts = {});

}  // namespace divshape
