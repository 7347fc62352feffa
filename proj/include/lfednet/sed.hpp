#ifndef LFEDNET_SED_HPP
#define LFEDNET_SED_HPP

// Smoothed stochastic economic dispatch objective
//
//   f(P) = sum_t alpha_t + beta_t + C_{r,t}
//
// over the hour-major flattened dispatch, with its analytic gradient, Hessian
// and the mixed derivatives of the gradient w.r.t. the forecast parameters.

#include "lfednet/gaussmath.hpp"
#include "lfednet/grid.hpp"
#include "lfednet/types.hpp"

#include <memory>

namespace lfednet::sed {

/// Per-hour Gaussian load forecast in physical units (MW, MW^2).
struct ForecastDistribution {
  Vector mu;
  Vector sigma2;
};

/// Validated system plus everything derived from it once per network.
struct DispatchModel {
  grid::SystemConfig system;
  grid::ConstraintSet constraints;
  Vector gamma;             ///< gamma_l per line
  Matrix injection_coef;    ///< (lines x gens) Gamma_{l, bus(g)}
  Matrix threshold_coef;    ///< (lines x gens) Gamma_{l, bus(g)} / gamma_l
};

std::shared_ptr<const DispatchModel> make_dispatch_model(const grid::SystemConfig& system);

struct SedProblem {
  std::shared_ptr<const DispatchModel> model;
  ForecastDistribution dist;

  const grid::SystemConfig& system() const { return model->system; }
  const grid::ConstraintSet& constraints() const { return model->constraints; }
  Eigen::Index num_vars() const { return model->system.num_vars(); }
};

/// Checks the forecast length against the horizon and floors the variances.
SedProblem make_problem(std::shared_ptr<const DispatchModel> model, ForecastDistribution dist);

struct ObjectiveEval {
  double value = 0.0;
  Vector gradient;
  Matrix hessian;          ///< includes the shift below
  double shift = 0.0;      ///< delta added to the diagonal to keep H positive definite
};

double objective(const Vector& p, const SedProblem& prob);
double objective(const DispatchSchedule& p, const SedProblem& prob);

/// Objective contribution of each hour.
Vector hourly_objective(const Vector& p, const SedProblem& prob);

Vector gradient(const Vector& p, const SedProblem& prob);

/// Block-diagonal (by hour) Hessian, shifted by delta I where
/// delta = max(0, 1e-8 - smallest eigenvalue over the hour blocks).
Matrix hessian(const Vector& p, const SedProblem& prob);

/// Hessian without the positive-definiteness shift.
Matrix exact_hessian(const Vector& p, const SedProblem& prob);

ObjectiveEval evaluate(const Vector& p, const SedProblem& prob);

/// J = grad - H p, so that 1/2 p'Hp + J'p has gradient grad at p.
Vector qp_linear_term(const Vector& p, const Vector& grad, const Matrix& hessian);

/// d(grad f)/d mu_t, one column per hour (size n x T).
Matrix gradient_mu_jacobian(const Vector& p, const SedProblem& prob);

/// d(grad f)/d sigma2_t, one column per hour (size n x T).
Matrix gradient_sigma2_jacobian(const Vector& p, const SedProblem& prob);

}  // namespace lfednet::sed

#endif  // LFEDNET_SED_HPP
