#include "lfednet/taskgrad.hpp"

#include <Eigen/LU>
#include <Eigen/QR>

#include <algorithm>
#include <cmath>

namespace lfednet::taskgrad {

namespace {

void check_shapes(const DispatchSchedule& p, const Vector& y, const grid::SystemConfig& sys) {
  if (p.rows() != sys.horizon || p.cols() != sys.num_generators())
    throw DataError("dispatch is " + std::to_string(p.rows()) + "x" + std::to_string(p.cols()) + ", expected " +
                    std::to_string(sys.horizon) + "x" + std::to_string(sys.num_generators()));
  if (y.size() != sys.horizon)
    throw DataError("actual load has " + std::to_string(y.size()) + " hours, expected " + std::to_string(sys.horizon));
}

}  // namespace

Vector TaskLossValue::hourly() const {
  Vector v = hourly_penalty() + regularizer;
  if (include_cost) v += generation_cost;
  return v;
}

Vector TaskLossValue::hourly_penalty() const { return shortage + excess + flow_over + flow_under; }

TaskLossValue task_loss(const DispatchSchedule& p_star, const Vector& y_actual, const grid::SystemConfig& system,
                        bool include_cost) {
  check_shapes(p_star, y_actual, system);
  const Eigen::Index hours = system.horizon;
  const auto& pen = system.penalties;
  TaskLossValue v;
  v.include_cost = include_cost;
  v.shortage = v.excess = v.flow_over = v.flow_under = v.regularizer = v.generation_cost = Vector::Zero(hours);
  for (Eigen::Index t = 0; t < hours; ++t) {
    const Vector p_hour = p_star.row(t).transpose();
    const double gap = y_actual[t] - p_hour.sum();
    v.shortage[t] = pen.lambda_s * std::max(gap, 0.0);
    v.excess[t] = pen.lambda_e * std::max(-gap, 0.0);
    v.regularizer[t] = 0.5 * gap * gap;
    for (const auto& line : system.lines) {
      const double flow = grid::line_flow(p_hour, y_actual[t], system, line);
      v.flow_over[t] += pen.lambda_l * std::max(flow - line.flow_limit, 0.0);
      v.flow_under[t] += pen.lambda_l * std::max(-flow - line.flow_limit, 0.0);
    }
    for (std::size_t g = 0; g < system.generators.size(); ++g) {
      const auto& gen = system.generators[g];
      const double pg = p_hour[static_cast<Eigen::Index>(g)];
      v.generation_cost[t] += gen.a * pg * pg + gen.b * pg + gen.c;
    }
  }
  v.total = v.hourly().sum();
  return v;
}

Vector task_loss_grad_p(const DispatchSchedule& p_star, const Vector& y_actual, const grid::SystemConfig& system,
                        bool include_cost) {
  check_shapes(p_star, y_actual, system);
  const Eigen::Index hours = system.horizon;
  const Eigen::Index n_gen = system.num_generators();
  const auto& pen = system.penalties;
  const auto bus = grid::generator_bus_indices(system);
  const auto step = [](double v) { return v > 0.0 ? 1.0 : 0.0; };

  Vector grad(hours * n_gen);
  for (Eigen::Index t = 0; t < hours; ++t) {
    const Vector p_hour = p_star.row(t).transpose();
    const double gap = y_actual[t] - p_hour.sum();
    const double common = -pen.lambda_s * step(gap) + pen.lambda_e * step(-gap) - gap;
    Vector line_weight(system.num_lines());
    for (Eigen::Index l = 0; l < system.num_lines(); ++l) {
      const auto& line = system.lines[static_cast<std::size_t>(l)];
      const double flow = grid::line_flow(p_hour, y_actual[t], system, line);
      line_weight[l] = pen.lambda_l * (step(flow - line.flow_limit) - step(-flow - line.flow_limit));
    }
    for (Eigen::Index g = 0; g < n_gen; ++g) {
      double v = common;
      for (Eigen::Index l = 0; l < system.num_lines(); ++l)
        v += line_weight[l] * system.lines[static_cast<std::size_t>(l)].shift_factors[bus[static_cast<std::size_t>(g)]];
      if (include_cost) {
        const auto& gen = system.generators[static_cast<std::size_t>(g)];
        v += 2.0 * gen.a * p_hour[g] + gen.b;
      }
      grad[t * n_gen + g] = v;
    }
  }
  return grad;
}

SolutionSensitivity solution_sensitivity(const solver::SqpResult& result, const sed::SedProblem& prob) {
  const auto& cons = prob.constraints();
  const Eigen::Index n = prob.num_vars();
  const Eigen::Index hours = prob.system().horizon;
  const Vector& p = result.p_flat;
  if (p.size() != n) throw DataError("SQP result does not match the problem size");

  SolutionSensitivity out;
  // Coordinates held by an active bound row.
  std::vector<bool> fixed(static_cast<std::size_t>(n), false);
  std::vector<Eigen::Index> ramp_rows;
  for (const Eigen::Index r : result.active_set) {
    if (r >= cons.num_ramp_rows) {
      Eigen::Index col = 0;
      cons.g_matrix.row(r).cwiseAbs().maxCoeff(&col);
      fixed[static_cast<std::size_t>(col)] = true;
    } else {
      ramp_rows.push_back(r);
    }
  }
  std::vector<Eigen::Index> free;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (fixed[static_cast<std::size_t>(i)]) out.fixed_coords.push_back(i);
    else free.push_back(i);
  }
  const auto nf = static_cast<Eigen::Index>(free.size());

  Matrix rhs_full(n, 2 * hours);
  rhs_full << sed::gradient_mu_jacobian(p, prob), sed::gradient_sigma2_jacobian(p, prob);
  out.dp_dmu = Matrix::Zero(n, hours);
  out.dp_dsigma2 = Matrix::Zero(n, hours);
  if (nf == 0) return out;

  // Active ramp rows restricted to the free coordinates; keep an independent
  // subset.
  Matrix ramp_free(static_cast<Eigen::Index>(ramp_rows.size()), nf);
  for (std::size_t k = 0; k < ramp_rows.size(); ++k)
    for (Eigen::Index j = 0; j < nf; ++j)
      ramp_free(static_cast<Eigen::Index>(k), j) = cons.g_matrix(ramp_rows[k], free[static_cast<std::size_t>(j)]);
  std::vector<Eigen::Index> kept;
  if (!ramp_rows.empty()) {
    Eigen::ColPivHouseholderQR<Matrix> qr(ramp_free.transpose());
    qr.setThreshold(1e-10);
    for (Eigen::Index k = 0; k < qr.rank(); ++k) kept.push_back(qr.colsPermutation().indices()[k]);
    std::sort(kept.begin(), kept.end());
  }
  for (auto k : kept) out.active_rows.push_back(ramp_rows[static_cast<std::size_t>(k)]);
  for (auto c : out.fixed_coords) {
    // Report the bound rows too, for completeness.
    for (const Eigen::Index r : result.active_set)
      if (r >= cons.num_ramp_rows && cons.g_matrix(r, c) != 0.0) out.active_rows.push_back(r);
  }

  const auto na = static_cast<Eigen::Index>(kept.size());
  const Matrix hess = sed::evaluate(p, prob).hessian;
  Matrix kkt = Matrix::Zero(nf + na, nf + na);
  Matrix rhs = Matrix::Zero(nf + na, 2 * hours);
  for (Eigen::Index i = 0; i < nf; ++i) {
    const auto fi = free[static_cast<std::size_t>(i)];
    for (Eigen::Index j = 0; j < nf; ++j) kkt(i, j) = hess(fi, free[static_cast<std::size_t>(j)]);
    rhs.row(i) = -rhs_full.row(fi);
  }
  for (Eigen::Index k = 0; k < na; ++k) {
    kkt.block(nf + k, 0, 1, nf) = ramp_free.row(kept[static_cast<std::size_t>(k)]);
    kkt.block(0, nf + k, nf, 1) = ramp_free.row(kept[static_cast<std::size_t>(k)]).transpose();
  }

  Eigen::PartialPivLU<Matrix> lu(kkt);
  if (!(lu.rcond() > 1e-14)) throw NumericalError("KKT sensitivity system is singular");
  Matrix sol = lu.solve(rhs);
  sol += lu.solve(rhs - kkt * sol);
  if (!sol.allFinite()) throw NumericalError("KKT sensitivity solve produced non-finite values");
  out.residual = (kkt * sol - rhs).cwiseAbs().maxCoeff() / (1.0 + rhs.cwiseAbs().maxCoeff());

  for (Eigen::Index i = 0; i < nf; ++i) {
    const auto fi = free[static_cast<std::size_t>(i)];
    out.dp_dmu.row(fi) = sol.block(i, 0, 1, hours);
    out.dp_dsigma2.row(fi) = sol.block(i, hours, 1, hours);
  }
  return out;
}

sed::ForecastDistribution forecast_distribution(const net::NetworkParams& theta, const data::TrainingExample& example,
                                                const TaskContext& ctx) {
  const Vector y_hat = net::predict(theta, example.x).col(0);
  return {data::denormalize_load(y_hat, ctx.norm), data::denormalize_variance(ctx.sigma2, ctx.norm)};
}

namespace {

TaskEvaluation run_dispatch(const Vector& y_hat, const data::TrainingExample& example, const TaskContext& ctx,
                            const std::optional<Vector>& warm_start, solver::SqpResult* result,
                            sed::SedProblem* problem) {
  TaskEvaluation ev;
  ev.dist = {data::denormalize_load(y_hat, ctx.norm), data::denormalize_variance(ctx.sigma2, ctx.norm)};
  try {
    auto prob = sed::make_problem(ctx.model, ev.dist);
    auto res = solver::solve_sed(prob, warm_start, ctx.sqp);
    ev.p_star = res.p_flat;
    ev.sqp_iterations = res.outer_iterations;
    const Vector y = data::denormalize_load(example.y, ctx.norm);
    ev.loss = task_loss(res.p_star, y, ctx.model->system, ctx.include_cost).total;
    if (!res.converged) {
      ev.skipped = true;
      ev.reason = "dispatch did not converge";
    }
    if (result) *result = std::move(res);
    if (problem) *problem = std::move(prob);
  } catch (const NumericalError& e) {
    ev.skipped = true;
    ev.reason = e.what();
  }
  return ev;
}

}  // namespace

TaskEvaluation evaluate_task(const net::NetworkParams& theta, const data::TrainingExample& example,
                             const TaskContext& ctx, const std::optional<Vector>& warm_start) {
  const Vector y_hat = net::predict(theta, example.x).col(0);
  return run_dispatch(y_hat, example, ctx, warm_start, nullptr, nullptr);
}

TaskGradient task_gradient_theta(const data::TrainingExample& example, const net::NetworkParams& theta,
                                 const TaskContext& ctx, const std::optional<Vector>& warm_start) {
  TaskGradient out;
  net::ForwardCache cache;
  const Vector y_hat = net::predict(theta, example.x, &cache).col(0);
  solver::SqpResult res;
  sed::SedProblem prob;
  out.eval = run_dispatch(y_hat, example, ctx, warm_start, &res, &prob);
  if (out.eval.skipped) return out;

  const auto& sys = ctx.model->system;
  const Vector y = data::denormalize_load(example.y, ctx.norm);
  const Vector dl_dp = task_loss_grad_p(res.p_star, y, sys, ctx.include_cost);
  try {
    const auto sens = solution_sensitivity(res, prob);
    out.dloss_dmu = sens.dp_dmu.transpose() * dl_dp;
  } catch (const NumericalError& e) {
    out.eval.skipped = true;
    out.eval.reason = e.what();
    return out;
  }
  const Matrix upstream = out.dloss_dmu * ctx.norm.load_std;
  out.grad = net::backward(theta, cache, upstream);
  return out;
}

}  // namespace lfednet::taskgrad
