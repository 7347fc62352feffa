#include "lfednet/solver.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace lfednet::solver {

void check_dispatch_feasible(const grid::SystemConfig& system) {
  for (const auto& g : system.generators) {
    double lo = g.p_min, hi = g.p_max;
    if (g.p_initial) {
      lo = std::max(g.p_min, *g.p_initial - g.ramp_down);
      hi = std::min(g.p_max, *g.p_initial + g.ramp_up);
    }
    for (int t = 0; t < system.horizon; ++t) {
      if (lo > hi + 1e-9)
        throw NumericalError("infeasible dispatch: generator '" + g.id + "' cannot satisfy ramp and box limits at hour " +
                             std::to_string(t + 1));
      lo = std::max(g.p_min, lo - g.ramp_down);
      hi = std::min(g.p_max, hi + g.ramp_up);
    }
  }
}

Vector default_initial_point(const sed::SedProblem& prob) {
  const auto& sys = prob.system();
  const Eigen::Index n_gen = sys.num_generators();
  Vector p(prob.num_vars());
  for (Eigen::Index t = 0; t < sys.horizon; ++t) {
    const double share = prob.dist.mu[t] / static_cast<double>(n_gen);
    for (Eigen::Index g = 0; g < n_gen; ++g) {
      const auto& gen = sys.generators[static_cast<std::size_t>(g)];
      p[t * n_gen + g] = std::clamp(share, gen.p_min, gen.p_max);
    }
  }
  return p;
}

SqpResult solve_sed(const sed::SedProblem& prob, const std::optional<Vector>& p_init, const SqpOptions& options) {
  const auto& sys = prob.system();
  const auto& cons = prob.constraints();
  check_dispatch_feasible(sys);

  Vector p = p_init ? *p_init : default_initial_point(prob);
  if (p.size() != prob.num_vars()) throw DataError("solve_sed: initial point has wrong size");

  const auto feasible = [&](const Vector& x) {
    const Vector slack = cons.h_vector - cons.g_matrix * x;
    for (Eigen::Index i = 0; i < slack.size(); ++i)
      if (slack[i] < -options.qp.feas_tol * (1.0 + std::abs(cons.h_vector[i]))) return false;
    return true;
  };

  SqpResult res;
  Vector duals = Vector::Zero(cons.h_vector.size());
  std::vector<Eigen::Index> active;
  double f = sed::objective(p, prob);

  for (int k = 0; k < options.max_outer; ++k) {
    const auto ev = sed::evaluate(p, prob);
    const Vector lin = sed::qp_linear_term(p, ev.gradient, ev.hessian);
    const auto qp = solve_qp(ev.hessian, lin, cons.g_matrix, cons.h_vector, p, options.qp);
    if (qp.status != QpStatus::Optimal)
      throw NumericalError(std::string("SQP subproblem failed at outer iteration ") + std::to_string(k + 1) + ": " +
                           to_string(qp.status));
    duals = qp.duals;
    active = qp.active_set;
    res.outer_iterations = k + 1;

    const Vector d = qp.p - p;
    const double full_step = d.lpNorm<Eigen::Infinity>();
    if (full_step < options.epsilon) {
      p = qp.p;
      f = sed::objective(p, prob);
      res.step_norms.push_back(full_step);
      res.objective_trace.push_back(f);
      res.converged = true;
      break;
    }

    double tau = 1.0;
    double f_new = sed::objective(Vector(p + d), prob);
    if (feasible(p)) {
      const double slope = ev.gradient.dot(d);
      // Near the optimum the decrease falls below the rounding error of f;
      // without this allowance the search halves forever.
      const double noise = 1e-13 * (1.0 + std::abs(f));
      int halvings = 0;
      while (f_new > f + options.armijo * tau * slope + noise && halvings < options.max_halvings) {
        tau *= 0.5;
        ++halvings;
        f_new = sed::objective(Vector(p + tau * d), prob);
      }
      if (f_new > f + 1e-12 * (1.0 + std::abs(f))) break;  // no descent left; converged stays false
    }
    p += tau * d;
    f = f_new;
    res.step_norms.push_back(tau * full_step);
    res.objective_trace.push_back(f);
  }

  res.p_flat = p;
  res.p_star = unflatten(p, sys.horizon, sys.num_generators());
  res.duals = duals;
  res.active_set = active;
  res.kkt_residual =
      (sed::gradient(p, prob) + cons.g_matrix.transpose() * duals).lpNorm<Eigen::Infinity>();
  return res;
}

}  // namespace lfednet::solver
