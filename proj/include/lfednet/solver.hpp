#ifndef LFEDNET_SOLVER_HPP
#define LFEDNET_SOLVER_HPP

#include "lfednet/sed.hpp"
#include "lfednet/types.hpp"

#include <optional>
#include <vector>

namespace lfednet::solver {

enum class QpStatus { Optimal, MaxIterations, Infeasible, Singular };

const char* to_string(QpStatus status);

struct QpOptions {
  int max_iterations = 100;
  double kkt_tol = 1e-8;
  double feas_tol = 1e-8;
  double comp_tol = 1e-8;
  /// Re-solve the equality-constrained problem on the identified active set.
  bool polish = true;
  /// A row is strongly active when |g_i p - h_i| <= active_tol (1 + |h_i|)
  /// and its dual exceeds dual_tol.
  double active_tol = 1e-7;
  double dual_tol = 1e-7;
};

struct QpSolution {
  Vector p;
  Vector duals;  ///< one per inequality row, >= 0
  std::vector<Eigen::Index> active_set;
  int iterations = 0;
  QpStatus status = QpStatus::MaxIterations;
  bool polished = false;
  // Residuals are scaled by (1 + magnitude of the matching data).
  double stationarity = 0.0;
  double primal_violation = 0.0;
  double complementarity = 0.0;
};

/// Minimises 1/2 p'Hp + J'p subject to G p <= h with a primal-dual
/// interior-point method (Mehrotra predictor-corrector), followed by an
/// active-set polish. H must be symmetric positive definite.
QpSolution solve_qp(const Matrix& H, const Vector& J, const Matrix& G, const Vector& h,
                    const std::optional<Vector>& warm_start = std::nullopt, const QpOptions& options = {});

struct SqpOptions {
  double epsilon = 1e-6;  ///< stop when |P(k+1) - P(k)|_inf < epsilon
  int max_outer = 50;
  int max_halvings = 30;
  double armijo = 1e-4;
  QpOptions qp;
};

struct SqpResult {
  DispatchSchedule p_star;
  Vector p_flat;
  Vector duals;
  std::vector<Eigen::Index> active_set;
  int outer_iterations = 0;
  bool converged = false;
  double kkt_residual = 0.0;        ///< |grad f + G' duals|_inf at p_star
  std::vector<double> step_norms;   ///< |P(k+1) - P(k)|_inf per accepted step
  std::vector<double> objective_trace;
};

/// Equal split of mu_t over the generators, clipped to each unit's box.
Vector default_initial_point(const sed::SedProblem& prob);

/// Sequential quadratic programming on the smoothed dispatch objective with a
/// backtracking line search. Throws NumericalError when a subproblem fails or
/// the ramp/box constraints admit no schedule; non-convergence is reported
/// through `converged`.
SqpResult solve_sed(const sed::SedProblem& prob, const std::optional<Vector>& p_init = std::nullopt,
                    const SqpOptions& options = {});

/// Throws NumericalError if no schedule satisfies the ramp and box limits.
void check_dispatch_feasible(const grid::SystemConfig& system);

}  // namespace lfednet::solver

#endif  // LFEDNET_SOLVER_HPP
