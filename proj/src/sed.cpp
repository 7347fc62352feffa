#include "lfednet/sed.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <limits>
#include <string>

namespace lfednet::sed {

using gaussmath::GaussianHour;
using gaussmath::LineFlowEval;
using gaussmath::PenaltyEval;

namespace {

constexpr double kMinEigen = 1e-8;

struct HourTerms {
  double total = 0.0;  // sum of generation in the hour
  GaussianHour<double> hour;
  PenaltyEval<double> balance;
  std::vector<LineFlowEval<double>> lines;
  double quadratic = 0.0;
};

void check_size(const Vector& p, const SedProblem& prob) {
  if (p.size() != prob.num_vars())
    throw DataError("dispatch has " + std::to_string(p.size()) + " entries, expected " +
                    std::to_string(prob.num_vars()));
}

HourTerms hour_terms(const Vector& p, const SedProblem& prob, Eigen::Index t) {
  const auto& m = *prob.model;
  const auto& sys = m.system;
  const Eigen::Index n_gen = sys.num_generators();
  const auto p_hour = p.segment(t * n_gen, n_gen);

  HourTerms h;
  h.total = p_hour.sum();
  h.hour = {prob.dist.mu[t], prob.dist.sigma2[t]};
  h.balance = gaussmath::expected_balance_penalty(h.total, h.hour, sys.penalties.lambda_s, sys.penalties.lambda_e);
  h.lines.reserve(static_cast<std::size_t>(sys.num_lines()));
  for (Eigen::Index l = 0; l < sys.num_lines(); ++l) {
    const double gen_flow = m.injection_coef.row(l).dot(p_hour);
    h.lines.push_back(gaussmath::expected_line_penalty(gen_flow, m.gamma[l], sys.lines[static_cast<std::size_t>(l)].flow_limit,
                                                       h.hour, sys.penalties.lambda_l));
  }
  h.quadratic = gaussmath::expected_quadratic_terms(p_hour, h.hour, sys.generators);
  return h;
}

double hour_value(const HourTerms& h) {
  double v = h.balance.value + h.quadratic;
  for (const auto& l : h.lines) v += l.upper.value + l.lower.value;
  return v;
}

void add_hour_gradient(const Vector& p, const SedProblem& prob, Eigen::Index t, const HourTerms& h, Vector& grad) {
  const auto& m = *prob.model;
  const auto& gens = m.system.generators;
  const Eigen::Index n_gen = m.system.num_generators();
  const double common = h.balance.d_s + (h.total - h.hour.mu);
  for (Eigen::Index g = 0; g < n_gen; ++g) {
    const auto& gen = gens[static_cast<std::size_t>(g)];
    const double pg = p[t * n_gen + g];
    double v = common + 2.0 * gen.a * pg + gen.b;
    for (std::size_t l = 0; l < h.lines.size(); ++l)
      v += m.threshold_coef(static_cast<Eigen::Index>(l), g) * (h.lines[l].upper.d_s + h.lines[l].lower.d_s);
    grad[t * n_gen + g] = v;
  }
}

Matrix hour_hessian_block(const SedProblem& prob, const HourTerms& h) {
  const auto& m = *prob.model;
  const Eigen::Index n_gen = m.system.num_generators();
  Matrix block = Matrix::Constant(n_gen, n_gen, h.balance.d2_s + 1.0);
  for (std::size_t l = 0; l < h.lines.size(); ++l) {
    const auto coef = m.threshold_coef.row(static_cast<Eigen::Index>(l));
    block.noalias() += (h.lines[l].upper.d2_s + h.lines[l].lower.d2_s) * coef.transpose() * coef;
  }
  for (Eigen::Index g = 0; g < n_gen; ++g) block(g, g) += 2.0 * m.system.generators[static_cast<std::size_t>(g)].a;
  return block;
}

Matrix assemble_hessian(const Vector& p, const SedProblem& prob, double* min_eigen) {
  const auto& sys = prob.system();
  const Eigen::Index n_gen = sys.num_generators();
  const Eigen::Index n = prob.num_vars();
  Matrix hess = Matrix::Zero(n, n);
  double lowest = std::numeric_limits<double>::infinity();
  for (Eigen::Index t = 0; t < sys.horizon; ++t) {
    const Matrix block = hour_hessian_block(prob, hour_terms(p, prob, t));
    hess.block(t * n_gen, t * n_gen, n_gen, n_gen) = block;
    if (min_eigen) {
      Eigen::SelfAdjointEigenSolver<Matrix> es(block, Eigen::EigenvaluesOnly);
      lowest = std::min(lowest, es.eigenvalues().minCoeff());
    }
  }
  if (min_eigen) *min_eigen = lowest;
  return hess;
}

}  // namespace

std::shared_ptr<const DispatchModel> make_dispatch_model(const grid::SystemConfig& system) {
  auto model = std::make_shared<DispatchModel>();
  model->system = grid::validate_system(system);
  const auto& sys = model->system;
  model->constraints = grid::build_constraints(sys);
  const auto bus = grid::generator_bus_indices(sys);
  const Eigen::Index n_line = sys.num_lines();
  const Eigen::Index n_gen = sys.num_generators();
  model->gamma.resize(n_line);
  model->injection_coef.resize(n_line, n_gen);
  model->threshold_coef.resize(n_line, n_gen);
  for (Eigen::Index l = 0; l < n_line; ++l) {
    const auto& line = sys.lines[static_cast<std::size_t>(l)];
    model->gamma[l] = grid::line_gamma(sys, line);
    for (Eigen::Index g = 0; g < n_gen; ++g) {
      model->injection_coef(l, g) = line.shift_factors[bus[static_cast<std::size_t>(g)]];
      model->threshold_coef(l, g) = model->injection_coef(l, g) / model->gamma[l];
    }
  }
  return model;
}

SedProblem make_problem(std::shared_ptr<const DispatchModel> model, ForecastDistribution dist) {
  const Eigen::Index hours = model->system.horizon;
  if (dist.mu.size() != hours || dist.sigma2.size() != hours)
    throw DataError("forecast distribution covers " + std::to_string(dist.mu.size()) + " hours, system horizon is " +
                    std::to_string(hours));
  if (!dist.mu.allFinite() || !dist.sigma2.allFinite()) throw NumericalError("forecast distribution is not finite");
  dist.sigma2 = dist.sigma2.cwiseMax(kSigma2Floor);
  return {std::move(model), std::move(dist)};
}

Vector hourly_objective(const Vector& p, const SedProblem& prob) {
  check_size(p, prob);
  Vector out(prob.system().horizon);
  for (Eigen::Index t = 0; t < out.size(); ++t) out[t] = hour_value(hour_terms(p, prob, t));
  return out;
}

double objective(const Vector& p, const SedProblem& prob) { return hourly_objective(p, prob).sum(); }

double objective(const DispatchSchedule& p, const SedProblem& prob) { return objective(flatten(p), prob); }

Vector gradient(const Vector& p, const SedProblem& prob) {
  check_size(p, prob);
  Vector grad(p.size());
  for (Eigen::Index t = 0; t < prob.system().horizon; ++t) add_hour_gradient(p, prob, t, hour_terms(p, prob, t), grad);
  return grad;
}

Matrix exact_hessian(const Vector& p, const SedProblem& prob) {
  check_size(p, prob);
  return assemble_hessian(p, prob, nullptr);
}

Matrix hessian(const Vector& p, const SedProblem& prob) { return evaluate(p, prob).hessian; }

ObjectiveEval evaluate(const Vector& p, const SedProblem& prob) {
  check_size(p, prob);
  const auto& sys = prob.system();
  const Eigen::Index n_gen = sys.num_generators();
  const Eigen::Index n = prob.num_vars();
  ObjectiveEval out;
  out.gradient.resize(n);
  out.hessian = Matrix::Zero(n, n);
  double lowest = std::numeric_limits<double>::infinity();
  for (Eigen::Index t = 0; t < sys.horizon; ++t) {
    const auto h = hour_terms(p, prob, t);
    out.value += hour_value(h);
    add_hour_gradient(p, prob, t, h, out.gradient);
    const Matrix block = hour_hessian_block(prob, h);
    Eigen::SelfAdjointEigenSolver<Matrix> es(block, Eigen::EigenvaluesOnly);
    lowest = std::min(lowest, es.eigenvalues().minCoeff());
    out.hessian.block(t * n_gen, t * n_gen, n_gen, n_gen) = block;
  }
  out.shift = std::max(0.0, kMinEigen - lowest);
  if (out.shift > 0.0) out.hessian.diagonal().array() += out.shift;
  return out;
}

Vector qp_linear_term(const Vector& p, const Vector& grad, const Matrix& hessian) { return grad - hessian * p; }

Matrix gradient_mu_jacobian(const Vector& p, const SedProblem& prob) {
  check_size(p, prob);
  const auto& m = *prob.model;
  const Eigen::Index n_gen = m.system.num_generators();
  const Eigen::Index hours = m.system.horizon;
  Matrix jac = Matrix::Zero(prob.num_vars(), hours);
  for (Eigen::Index t = 0; t < hours; ++t) {
    const auto h = hour_terms(p, prob, t);
    // Every penalty depends on (threshold - mu), so d/dmu of a first
    // derivative is minus the matching second derivative.
    for (Eigen::Index g = 0; g < n_gen; ++g) {
      double v = -(h.balance.d2_s + 1.0);
      for (std::size_t l = 0; l < h.lines.size(); ++l)
        v -= m.threshold_coef(static_cast<Eigen::Index>(l), g) * (h.lines[l].upper.d2_s + h.lines[l].lower.d2_s);
      jac(t * n_gen + g, t) = v;
    }
  }
  return jac;
}

Matrix gradient_sigma2_jacobian(const Vector& p, const SedProblem& prob) {
  check_size(p, prob);
  const auto& m = *prob.model;
  const Eigen::Index n_gen = m.system.num_generators();
  const Eigen::Index hours = m.system.horizon;
  Matrix jac = Matrix::Zero(prob.num_vars(), hours);
  for (Eigen::Index t = 0; t < hours; ++t) {
    const auto h = hour_terms(p, prob, t);
    const double mu = h.hour.mu;
    const double two_var = 2.0 * h.hour.sigma2;
    // d Phi(z)/d sigma^2 = -phi(z) z / (2 sigma^2) = -d2 (threshold - mu) / (2 sigma^2)
    const auto dvar = [&](const PenaltyEval<double>& e, double threshold) { return -e.d2_s * (threshold - mu) / two_var; };
    for (Eigen::Index g = 0; g < n_gen; ++g) {
      double v = dvar(h.balance, h.total);
      for (std::size_t l = 0; l < h.lines.size(); ++l) {
        const auto& le = h.lines[l];
        v += m.threshold_coef(static_cast<Eigen::Index>(l), g) *
             (dvar(le.upper, le.upper_threshold) + dvar(le.lower, le.lower_threshold));
      }
      jac(t * n_gen + g, t) = v;
    }
  }
  return jac;
}

}  // namespace lfednet::sed
