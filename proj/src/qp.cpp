#include "lfednet/solver.hpp"

#include <Eigen/Cholesky>
#include <Eigen/LU>
#include <Eigen/QR>
#include <Eigen/SparseCore>

#include <algorithm>
#include <cmath>
#include <limits>

namespace lfednet::solver {

const char* to_string(QpStatus status) {
  switch (status) {
    case QpStatus::Optimal: return "optimal";
    case QpStatus::MaxIterations: return "max-iterations";
    case QpStatus::Infeasible: return "infeasible";
    case QpStatus::Singular: return "singular";
  }
  return "unknown";
}

namespace {

using SparseMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;

double inf_norm(const Vector& v) { return v.size() ? v.lpNorm<Eigen::Infinity>() : 0.0; }

// Largest step in [0, 1] keeping v + step * dv >= 0.
double max_step(const Vector& v, const Vector& dv) {
  double step = 1.0;
  for (Eigen::Index i = 0; i < v.size(); ++i)
    if (dv[i] < 0.0) step = std::min(step, -v[i] / dv[i]);
  return step;
}

struct Residuals {
  double stationarity = 0.0;
  double primal = 0.0;
  double complementarity = 0.0;
};

Residuals measure(const Matrix& H, const Vector& J, const SparseMatrix& G, const Vector& h, const Vector& x,
                  const Vector& z) {
  const double scale_d = 1.0 + std::max(inf_norm(J), inf_norm(H * x));
  Residuals r;
  r.stationarity = inf_norm(H * x + J + G.transpose() * z) / scale_d;
  const Vector slack = h - G * x;
  double viol = 0.0, comp = 0.0;
  for (Eigen::Index i = 0; i < h.size(); ++i) {
    const double scale = 1.0 + std::abs(h[i]);
    viol = std::max(viol, -slack[i] / scale);
    comp = std::max(comp, std::abs(z[i] * slack[i]) / (scale * scale_d));
  }
  r.primal = std::max(0.0, viol);
  r.complementarity = comp;
  return r;
}

double qp_value(const Matrix& H, const Vector& J, const Vector& x) { return 0.5 * x.dot(H * x) + J.dot(x); }

// Equality-constrained re-solve on the rows whose dual dominates the slack.
// A wrong guess is repaired by dropping the row with the most negative
// multiplier or adding the most violated row, a bounded number of times.
bool polish(const Matrix& H, const Vector& J, const Matrix& Gd, const SparseMatrix& G, const Vector& h,
            const QpOptions& opt, Vector& x, Vector& z) {
  const Eigen::Index n = H.rows();
  const Eigen::Index m = h.size();
  const Vector slack = h - G * x;
  std::vector<Eigen::Index> work;
  for (Eigen::Index i = 0; i < m; ++i)
    if (z[i] > slack[i]) work.push_back(i);

  for (Eigen::Index round = 0; round <= 2 * m; ++round) {
    // Keep a linearly independent subset of the working rows.
    std::vector<Eigen::Index> rows;
    if (!work.empty()) {
      Matrix ga_t(n, static_cast<Eigen::Index>(work.size()));
      for (std::size_t k = 0; k < work.size(); ++k) ga_t.col(static_cast<Eigen::Index>(k)) = Gd.row(work[k]).transpose();
      Eigen::ColPivHouseholderQR<Matrix> qr(ga_t);
      qr.setThreshold(1e-10);
      for (Eigen::Index k = 0; k < qr.rank(); ++k)
        rows.push_back(work[static_cast<std::size_t>(qr.colsPermutation().indices()[k])]);
      std::sort(rows.begin(), rows.end());
    }
    const auto na = static_cast<Eigen::Index>(rows.size());
    Matrix kkt = Matrix::Zero(n + na, n + na);
    Vector rhs(n + na);
    kkt.topLeftCorner(n, n) = H;
    rhs.head(n) = -J;
    for (Eigen::Index k = 0; k < na; ++k) {
      const auto row = rows[static_cast<std::size_t>(k)];
      kkt.block(n + k, 0, 1, n) = Gd.row(row);
      kkt.block(0, n + k, n, 1) = Gd.row(row).transpose();
      rhs[n + k] = h[row];
    }
    Eigen::PartialPivLU<Matrix> lu(kkt);
    Vector sol = lu.solve(rhs);
    // One step of iterative refinement.
    sol += lu.solve(rhs - kkt * sol);
    if (!sol.allFinite()) return false;

    const Vector xp = sol.head(n);
    Vector zp = Vector::Zero(m);
    for (Eigen::Index k = 0; k < na; ++k) zp[rows[static_cast<std::size_t>(k)]] = sol[n + k];

    const double scale_d = 1.0 + std::max(inf_norm(J), inf_norm(H * xp));
    Eigen::Index worst_dual = -1;
    double most_negative = -opt.dual_tol * scale_d;
    for (auto r : rows)
      if (zp[r] < most_negative) most_negative = zp[r], worst_dual = r;
    if (worst_dual >= 0) {
      work = rows;
      work.erase(std::find(work.begin(), work.end(), worst_dual));
      continue;
    }
    const Vector sp = h - G * xp;
    Eigen::Index worst_row = -1;
    double most_violated = opt.feas_tol;
    for (Eigen::Index i = 0; i < m; ++i)
      if (-sp[i] / (1.0 + std::abs(h[i])) > most_violated) most_violated = -sp[i] / (1.0 + std::abs(h[i])), worst_row = i;
    if (worst_row >= 0) {
      work = rows;
      work.push_back(worst_row);
      continue;
    }

    const double before = qp_value(H, J, x);
    const double after = qp_value(H, J, xp);
    if (after > before + 1e-9 * (1.0 + std::abs(before))) return false;
    x = xp;
    z = zp.cwiseMax(0.0);
    return true;
  }
  return false;
}

}  // namespace

QpSolution solve_qp(const Matrix& H, const Vector& J, const Matrix& Gd, const Vector& h,
                    const std::optional<Vector>& warm_start, const QpOptions& opt) {
  const Eigen::Index n = H.rows();
  const Eigen::Index m = Gd.rows();
  if (H.cols() != n || J.size() != n || Gd.cols() != n || h.size() != m)
    throw DataError("solve_qp: inconsistent problem dimensions");
  if (warm_start && warm_start->size() != n) throw DataError("solve_qp: warm start has wrong size");

  QpSolution out;
  const SparseMatrix G = Gd.sparseView();

  for (Eigen::Index i = 0; i < m; ++i) {
    if (G.row(i).nonZeros() == 0 && h[i] < 0.0) {
      out.status = QpStatus::Infeasible;
      out.p = Vector::Zero(n);
      out.duals = Vector::Zero(m);
      return out;
    }
  }

  // Starting point: warm start, or the minimiser of the objective plus a
  // quadratic penalty on the constraint residual. Slacks and duals are then
  // shifted into the positive orthant.
  Vector x;
  if (warm_start) {
    x = *warm_start;
  } else {
    Matrix k0 = H;
    k0 += Matrix(G.transpose() * G);
    Eigen::LDLT<Matrix> ldlt(k0);
    x = ldlt.solve(-J + G.transpose() * h);
    if (!x.allFinite()) x = Vector::Zero(n);
  }
  Vector s = h - G * x;
  Vector z = m > 0 ? Vector(-s) : Vector();
  if (m > 0) {
    const double shift_s = -s.minCoeff();
    if (shift_s >= 0.0) s.array() += 1.0 + shift_s;
    const double shift_z = -z.minCoeff();
    if (shift_z >= 0.0) z.array() += 1.0 + shift_z;
  }

  const double h_scale = 1.0 + inf_norm(h);
  const double j_scale = 1.0 + inf_norm(J);
  bool converged = false;
  int it = 0;

  if (m == 0) {
    Eigen::LLT<Matrix> llt(H);
    if (llt.info() != Eigen::Success) {
      out.status = QpStatus::Singular;
      out.p = x;
      out.duals = Vector();
      return out;
    }
    x = llt.solve(-J);
    converged = true;
  }

  for (; !converged && it < opt.max_iterations; ++it) {
    const Vector rd = H * x + J + G.transpose() * z;
    const Vector rp = G * x + s - h;
    const double mu = s.dot(z) / static_cast<double>(m);
    const double d_scale = std::max(j_scale, 1.0 + inf_norm(H * x));
    if (inf_norm(rd) <= opt.kkt_tol * d_scale && inf_norm(rp) <= opt.feas_tol * h_scale &&
        mu <= opt.comp_tol * d_scale) {
      converged = true;
      break;
    }
    if (inf_norm(z) > 1e14 * d_scale) {
      out.status = QpStatus::Infeasible;
      break;
    }

    const Vector w = z.cwiseQuotient(s);
    Matrix kmat = H;
    kmat += Matrix(G.transpose() * w.asDiagonal() * G);
    Eigen::LLT<Matrix> llt(kmat);
    if (llt.info() != Eigen::Success) {
      kmat.diagonal().array() += 1e-12 * (1.0 + kmat.diagonal().cwiseAbs().maxCoeff());
      llt.compute(kmat);
      if (llt.info() != Eigen::Success) {
        out.status = QpStatus::Singular;
        break;
      }
    }

    // Newton direction for complementarity target r_c (s o z - r_c -> 0).
    const auto direction = [&](const Vector& rc, Vector& dx, Vector& ds, Vector& dz) {
      const Vector rc_over_s = rc.cwiseQuotient(s);
      const Vector rhs = -rd - G.transpose() * (w.cwiseProduct(rp) - rc_over_s);
      dx = llt.solve(rhs);
      const Vector gdx = G * dx;
      dz = w.cwiseProduct(gdx + rp) - rc_over_s;
      ds = -rp - gdx;
    };

    Vector dx_aff, ds_aff, dz_aff;
    direction(s.cwiseProduct(z), dx_aff, ds_aff, dz_aff);
    const double a_aff = std::min(max_step(s, ds_aff), max_step(z, dz_aff));
    const double mu_aff = (s + a_aff * ds_aff).dot(z + a_aff * dz_aff) / static_cast<double>(m);
    const double sigma = std::pow(std::max(0.0, mu_aff) / mu, 3.0);

    Vector rc = s.cwiseProduct(z) + ds_aff.cwiseProduct(dz_aff);
    rc.array() -= sigma * mu;
    Vector dx, ds, dz;
    direction(rc, dx, ds, dz);
    const double a_max = std::min(max_step(s, ds), max_step(z, dz));
    const double step = std::min(1.0, 0.99 * a_max);
    x += step * dx;
    s += step * ds;
    z += step * dz;
    if (!x.allFinite() || !z.allFinite()) {
      out.status = QpStatus::Singular;
      break;
    }
  }

  out.iterations = it;
  if (converged) out.status = QpStatus::Optimal;
  if (m > 0 && (converged || out.status == QpStatus::MaxIterations) && opt.polish)
    out.polished = polish(H, J, Gd, G, h, opt, x, z);
  if (!converged && out.status == QpStatus::MaxIterations && out.polished) {
    const auto r = measure(H, J, G, h, x, z);
    if (r.stationarity <= opt.kkt_tol && r.primal <= opt.feas_tol && r.complementarity <= opt.comp_tol)
      out.status = QpStatus::Optimal;
  }
  if (out.status == QpStatus::MaxIterations && m > 0 && inf_norm(G * x + s - h) > 1e-3 * h_scale)
    out.status = QpStatus::Infeasible;

  out.p = x;
  out.duals = m > 0 ? Vector(z.cwiseMax(0.0)) : Vector();
  const auto r = measure(H, J, G, h, out.p, out.duals);
  out.stationarity = r.stationarity;
  out.primal_violation = r.primal;
  out.complementarity = r.complementarity;

  const Vector slack = h - G * out.p;
  for (Eigen::Index i = 0; i < m; ++i)
    if (std::abs(slack[i]) <= opt.active_tol * (1.0 + std::abs(h[i])) && out.duals[i] > opt.dual_tol)
      out.active_set.push_back(i);
  return out;
}

}  // namespace lfednet::solver
