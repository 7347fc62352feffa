#ifndef LFEDNET_TASKGRAD_HPP
#define LFEDNET_TASKGRAD_HPP

// Realised task loss of a dispatch and its gradient back to the forecaster.
//
//   L = sum_t lambda_s (y - sum P)+ + lambda_e (sum P - y)+
//           + lambda_l sum_l [(F_l(P, y) - Fmax_l)+ + (-F_l(P, y) - Fmax_l)+]
//           + 1/2 (sum P - y)^2 [+ sum_g a P^2 + b P + c]
//
// The dispatch P* depends on the forecast through the SED optimum; dP*/dmu
// comes from differentiating its KKT conditions on the strongly active set.

#include "lfednet/data.hpp"
#include "lfednet/net.hpp"
#include "lfednet/sed.hpp"
#include "lfednet/solver.hpp"

#include <optional>
#include <string>

namespace lfednet::taskgrad {

struct TaskLossValue {
  double total = 0.0;
  bool include_cost = true;
  // Per hour.
  Vector shortage;
  Vector excess;
  Vector flow_over;
  Vector flow_under;
  Vector regularizer;
  Vector generation_cost;  ///< always filled; part of total only with include_cost

  /// Sum of the included components for each hour.
  Vector hourly() const;
  /// Penalty part only (shortage, excess and both flow terms) for each hour.
  Vector hourly_penalty() const;
};

TaskLossValue task_loss(const DispatchSchedule& p_star, const Vector& y_actual, const grid::SystemConfig& system,
                        bool include_cost = true);

/// Gradient w.r.t. the hour-major flattened dispatch. The subgradient 0 is
/// used at every kink of (.)+.
Vector task_loss_grad_p(const DispatchSchedule& p_star, const Vector& y_actual, const grid::SystemConfig& system,
                        bool include_cost = true);

struct SolutionSensitivity {
  Matrix dp_dmu;      ///< (T * N_g) x T
  Matrix dp_dsigma2;  ///< (T * N_g) x T
  std::vector<Eigen::Index> active_rows;    ///< rows kept in the KKT system
  std::vector<Eigen::Index> fixed_coords;   ///< coordinates pinned by an active bound
  double residual = 0.0;                    ///< relative residual of the KKT solve
};

/// Implicit differentiation of the KKT conditions at a converged SQP point.
/// Coordinates held by a strongly active box row have exactly zero
/// sensitivity. Throws NumericalError if the reduced KKT system is singular.
SolutionSensitivity solution_sensitivity(const solver::SqpResult& result, const sed::SedProblem& prob);

/// Everything needed to turn a network output into a dispatch.
struct TaskContext {
  std::shared_ptr<const sed::DispatchModel> model;
  data::NormStats norm;
  Vector sigma2;  ///< per-hour forecast variance in normalised units
  bool include_cost = true;
  solver::SqpOptions sqp;
};

/// Forecast distribution in MW for a normalised example.
sed::ForecastDistribution forecast_distribution(const net::NetworkParams& theta, const data::TrainingExample& example,
                                                const TaskContext& ctx);

struct TaskEvaluation {
  double loss = 0.0;
  Vector p_star;  ///< flattened dispatch
  sed::ForecastDistribution dist;
  int sqp_iterations = 0;
  bool skipped = false;
  std::string reason;
};

/// Forecast, dispatch and realised task loss for one example (no gradient).
TaskEvaluation evaluate_task(const net::NetworkParams& theta, const data::TrainingExample& example,
                             const TaskContext& ctx, const std::optional<Vector>& warm_start = std::nullopt);

struct TaskGradient {
  TaskEvaluation eval;
  net::NetworkGrads grad;  ///< valid unless eval.skipped
  Vector dloss_dmu;        ///< per hour, MW units
};

/// d L / d theta through forecast -> SED -> task loss, treating sigma2 as a
/// constant. Samples whose dispatch fails to converge or whose sensitivity
/// system is singular come back with eval.skipped set.
TaskGradient task_gradient_theta(const data::TrainingExample& example, const net::NetworkParams& theta,
                                 const TaskContext& ctx, const std::optional<Vector>& warm_start = std::nullopt);

}  // namespace lfednet::taskgrad

#endif  // LFEDNET_TASKGRAD_HPP
