#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <locale>
#include <ostream>
#include <string>
#include <vector>

#include "srmcomm/error.hpp"
#include "srmcomm/ripple_objective.hpp"

namespace srmcomm {

/// Tolerances are absolute and apply to the residuals reported by check_kkt
/// in the units of the original problem.
struct QpSettings {
  double tolerance = 1e-8;
  double feasibility_tolerance = 1e-9;
  int max_iterations = 200;
  /// Primal regularization added to the Newton system.
  double regularization = 1e-10;
  /// Re-solve the equality-constrained KKT system on the detected active set.
  bool polish = true;
  bool record_log = false;
};

enum class QpStatus { Optimal, MaxIterations, NumericalFailure };

inline const char* to_string(QpStatus s) {
  switch (s) {
    case QpStatus::Optimal: return "Optimal";
    case QpStatus::MaxIterations: return "MaxIterations";
    case QpStatus::NumericalFailure: return "NumericalFailure";
  }
  return "Unknown";
}

struct KktResiduals {
  double stationarity = 0.0;          // ||2 H a + b - B^T nu||_inf
  double primal_infeasibility = 0.0;  // ||min(B a, 0)||_inf
  double complementarity = 0.0;       // max_i |nu_i (B a)_i|
  double dual_infeasibility = 0.0;    // ||min(nu, 0)||_inf

  [[nodiscard]] bool dual_feasible() const { return dual_infeasibility == 0.0; }
};

struct QpIterate {
  int iteration = 0;
  double objective = 0.0;
  double stationarity = 0.0;
  double primal_infeasibility = 0.0;
  double complementarity = 0.0;
  double barrier = 0.0;
  /// Scaled primal plus dual infeasibility of the interior-point iterate; this
  /// is the merit function the method drives down monotonically.
  double infeasibility = 0.0;
  double step = 0.0;
};

struct QpSolution {
  Eigen::VectorXd alpha_star;
  Eigen::VectorXd duals;
  double objective_value = 0.0;  // alpha^T H alpha + b^T alpha, without the constant
  KktResiduals kkt;
  int iterations = 0;
  QpStatus status = QpStatus::NumericalFailure;
  bool polished = false;
  std::vector<QpIterate> log;
};

/// KKT residuals of min a^T H a + b^T a s.t. B a >= 0 at (alpha, nu).
inline KktResiduals check_kkt(const Eigen::MatrixXd& H, const Eigen::VectorXd& b,
                              const Eigen::MatrixXd& B, const Eigen::VectorXd& alpha,
                              const Eigen::VectorXd& nu) {
  if (H.rows() != alpha.size() || H.cols() != alpha.size() || b.size() != alpha.size() ||
      B.cols() != alpha.size() || B.rows() != nu.size()) {
    throw std::invalid_argument("check_kkt: dimension mismatch");
  }
  KktResiduals r;
  const Eigen::VectorXd Ba = B * alpha;
  r.stationarity = (2.0 * H * alpha + b - B.transpose() * nu).cwiseAbs().maxCoeff();
  r.primal_infeasibility = Ba.size() ? (-Ba).cwiseMax(0.0).maxCoeff() : 0.0;
  r.complementarity = Ba.size() ? nu.cwiseProduct(Ba).cwiseAbs().maxCoeff() : 0.0;
  r.dual_infeasibility = nu.size() ? (-nu).cwiseMax(0.0).maxCoeff() : 0.0;
  return r;
}

inline KktResiduals check_kkt(const QpProblem& qp, const Eigen::VectorXd& alpha,
                              const Eigen::VectorXd& nu) {
  return check_kkt(qp.hessian, qp.linear, qp.constraints, alpha, nu);
}

namespace detail {

inline double objective(const Eigen::MatrixXd& H, const Eigen::VectorXd& b,
                        const Eigen::VectorXd& a) {
  return a.dot(H * a) + b.dot(a);
}

inline bool meets(const KktResiduals& r, const QpSettings& s) {
  return r.stationarity <= s.tolerance && r.complementarity <= s.tolerance &&
         r.primal_infeasibility <= s.feasibility_tolerance && r.dual_feasible();
}

inline double kkt_max(const KktResiduals& r) {
  return std::max({r.stationarity, r.complementarity, r.primal_infeasibility,
                   r.dual_infeasibility});
}

// Largest step in (0, 1] keeping v + t*dv >= 0.
inline double max_step(const Eigen::VectorXd& v, const Eigen::VectorXd& dv) {
  double t = 1.0;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (dv[i] < 0.0) t = std::min(t, -v[i] / dv[i]);
  }
  return t;
}

// Validates H, b, B and returns the spectral norm of H.
inline double validate_qp(const Eigen::MatrixXd& H, const Eigen::VectorXd& b,
                          const Eigen::MatrixXd& B) {
  const Eigen::Index n = b.size();
  if (H.rows() != n || H.cols() != n || B.cols() != n) {
    throw std::invalid_argument("solve_qp: dimension mismatch");
  }
  if (!H.allFinite() || !b.allFinite() || !B.allFinite()) {
    throw SolverError("solve_qp: non-finite problem data");
  }
  if (n == 0) return 0.0;
  const double scale = std::max(H.cwiseAbs().maxCoeff(), std::numeric_limits<double>::min());
  if ((H - H.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale) {
    throw SolverError("solve_qp: Hessian is not symmetric");
  }
  const Eigen::MatrixXd sym = 0.5 * (H + H.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sym, Eigen::EigenvaluesOnly);
  if (eig.info() != Eigen::Success) throw SolverError("solve_qp: eigenvalue check failed");
  const double norm = eig.eigenvalues().cwiseAbs().maxCoeff();
  if (eig.eigenvalues().minCoeff() < -1e-8 * norm) {
    throw SolverError("solve_qp: Hessian is indefinite (min eigenvalue " +
                      std::to_string(eig.eigenvalues().minCoeff()) + ")");
  }
  return norm;
}

}  // namespace detail

/// Minimizes a^T H a + b^T a subject to B a >= 0 with a Mehrotra
/// predictor-corrector primal-dual interior-point method on dense
/// factorizations.
///
/// The problem is rescaled internally (a = kappa x, objective / omega, unit
/// constraint rows) so that problems related by (H, b) -> (c^2 H, c b) run
/// through identical iterates and return solutions scaled exactly by 1/c.
inline QpSolution solve_qp(const Eigen::MatrixXd& H, const Eigen::VectorXd& b,
                           const Eigen::MatrixXd& B, const QpSettings& settings = {}) {
  detail::validate_qp(H, b, B);
  const Eigen::Index n = b.size();
  const Eigen::Index m_all = B.rows();

  QpSolution sol;
  sol.alpha_star = Eigen::VectorXd::Zero(n);
  sol.duals = Eigen::VectorXd::Zero(m_all);

  const double h_max = n ? H.cwiseAbs().maxCoeff() : 0.0;
  const double b_max = n ? b.cwiseAbs().maxCoeff() : 0.0;
  if (b_max == 0.0) {
    // a = 0 is feasible, stationary with nu = 0 and optimal since H is PSD.
    sol.kkt = check_kkt(H, b, B, sol.alpha_star, sol.duals);
    sol.status = QpStatus::Optimal;
    return sol;
  }
  const double kappa = h_max > 0.0 ? b_max / h_max : 1.0;
  const double omega = kappa * b_max;

  // Drop all-zero constraint rows (0 >= 0 holds trivially; their duals stay 0).
  std::vector<Eigen::Index> rows;
  for (Eigen::Index i = 0; i < m_all; ++i) {
    if (B.row(i).cwiseAbs().maxCoeff() > 0.0) rows.push_back(i);
  }
  const auto m = static_cast<Eigen::Index>(rows.size());
  Eigen::MatrixXd A(m, n);
  Eigen::VectorXd row_norm(m);
  for (Eigen::Index k = 0; k < m; ++k) {
    row_norm[k] = B.row(rows[static_cast<std::size_t>(k)]).norm();
    A.row(k) = B.row(rows[static_cast<std::size_t>(k)]) / row_norm[k];
  }
  const Eigen::MatrixXd Q = (2.0 * kappa * kappa / omega) * (0.5 * (H + H.transpose()));
  const Eigen::VectorXd q = (kappa / omega) * b;

  // Maps a scaled iterate back to original units.
  auto unscale = [&](const Eigen::VectorXd& x, const Eigen::VectorXd& z, Eigen::VectorXd& alpha,
                     Eigen::VectorXd& nu) {
    alpha = kappa * x;
    nu = Eigen::VectorXd::Zero(m_all);
    for (Eigen::Index k = 0; k < m; ++k) {
      nu[rows[static_cast<std::size_t>(k)]] = (omega / kappa) * z[k] / row_norm[k];
    }
  };

  Eigen::VectorXd x = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd s = Eigen::VectorXd::Ones(m);
  Eigen::VectorXd z = Eigen::VectorXd::Ones(m);

  constexpr double kInnerTolerance = 1e-13;
  constexpr int kStallLimit = 5;
  double best_merit = std::numeric_limits<double>::infinity();
  Eigen::VectorXd best_x = x, best_z = z;
  int stall = 0;
  bool converged = false;
  bool failed = false;
  int iter = 0;

  for (; iter < settings.max_iterations; ++iter) {
    const Eigen::VectorXd rd = Q * x + q - A.transpose() * z;
    const Eigen::VectorXd rp = A * x - s;
    const double mu = m ? s.dot(z) / static_cast<double>(m) : 0.0;
    const double rd_n = rd.cwiseAbs().maxCoeff();
    const double rp_n = m ? rp.cwiseAbs().maxCoeff() : 0.0;
    const double comp_n = m ? s.cwiseProduct(z).maxCoeff() : 0.0;
    const double merit = std::max({rd_n, rp_n, comp_n});

    if (settings.record_log) {
      Eigen::VectorXd a, nu;
      unscale(x, z, a, nu);
      const KktResiduals r = check_kkt(H, b, B, a, nu);
      sol.log.push_back({iter, detail::objective(H, b, a), r.stationarity,
                         r.primal_infeasibility, r.complementarity, mu, rd_n + rp_n, 0.0});
    }

    if (merit < best_merit) {
      stall = (merit > 0.5 * best_merit) ? stall + 1 : 0;
      best_merit = merit;
      best_x = x;
      best_z = z;
    } else {
      ++stall;
    }
    if (merit <= kInnerTolerance) {
      converged = true;
      break;
    }
    if (stall >= kStallLimit && best_merit <= 1e-9) {
      converged = true;
      break;
    }

    // Newton system (Q + A^T D A + delta I) dx = rhs with D = Z S^{-1}.
    const Eigen::VectorXd d = z.cwiseQuotient(s);
    Eigen::MatrixXd K = Q;
    K.noalias() += A.transpose() * d.asDiagonal() * A;
    double delta = settings.regularization;
    Eigen::LLT<Eigen::MatrixXd> llt;
    for (int attempt = 0; attempt < 8; ++attempt) {
      llt.compute(K + delta * Eigen::MatrixXd::Identity(n, n));
      if (llt.info() == Eigen::Success) break;
      delta = std::max(delta * 100.0, 1e-12);
    }
    if (llt.info() != Eigen::Success) {
      failed = true;
      break;
    }
    auto newton = [&](const Eigen::VectorXd& rc, Eigen::VectorXd& dx, Eigen::VectorXd& ds,
                      Eigen::VectorXd& dz) {
      const Eigen::VectorXd w = (rc - z.cwiseProduct(rp)).cwiseQuotient(s);
      dx = llt.solve(-rd + A.transpose() * w);
      ds = A * dx + rp;
      dz = (rc - z.cwiseProduct(ds)).cwiseQuotient(s);
    };

    Eigen::VectorXd dx, ds, dz;
    const Eigen::VectorXd rc_aff = -s.cwiseProduct(z);
    newton(rc_aff, dx, ds, dz);
    const double t_aff = std::min(detail::max_step(s, ds), detail::max_step(z, dz));
    const double mu_aff =
        m ? (s + t_aff * ds).dot(z + t_aff * dz) / static_cast<double>(m) : 0.0;
    const double sigma = mu > 0.0 ? std::pow(mu_aff / mu, 3) : 0.0;
    const Eigen::VectorXd rc =
        rc_aff - ds.cwiseProduct(dz) + Eigen::VectorXd::Constant(m, sigma * mu);
    newton(rc, dx, ds, dz);

    const double t_max = std::min(detail::max_step(s, ds), detail::max_step(z, dz));
    const double t = std::min(1.0, 0.995 * t_max);
    if (!(t > 0.0) || !dx.allFinite()) {
      failed = true;
      break;
    }
    x += t * dx;
    s += t * ds;
    z += t * dz;
    if (settings.record_log) sol.log.back().step = t;
  }
  sol.iterations = iter;

  Eigen::VectorXd alpha, nu;
  unscale(best_x, best_z, alpha, nu);
  KktResiduals res = check_kkt(H, b, B, alpha, nu);

  if (settings.polish && m > 0 && !failed) {
    // Active set: constraints whose dual dominates the slack.
    const Eigen::VectorXd Ax = A * best_x;
    std::vector<Eigen::Index> active;
    for (Eigen::Index k = 0; k < m; ++k) {
      if (best_z[k] > Ax[k]) active.push_back(k);
    }
    const auto na = static_cast<Eigen::Index>(active.size());
    Eigen::MatrixXd Aa(na, n);
    for (Eigen::Index k = 0; k < na; ++k) Aa.row(k) = A.row(active[static_cast<std::size_t>(k)]);
    // [Q  Aa^T; Aa  -eps I] [x; -z] = [-q; 0], refined against eps = 0.
    const double eps = 1e-12;
    Eigen::MatrixXd kkt = Eigen::MatrixXd::Zero(n + na, n + na);
    kkt.topLeftCorner(n, n) = Q;
    kkt.topRightCorner(n, na) = Aa.transpose();
    kkt.bottomLeftCorner(na, n) = Aa;
    Eigen::MatrixXd kkt_reg = kkt;
    kkt_reg.topLeftCorner(n, n) += eps * Eigen::MatrixXd::Identity(n, n);
    kkt_reg.bottomRightCorner(na, na) -= eps * Eigen::MatrixXd::Identity(na, na);
    const Eigen::PartialPivLU<Eigen::MatrixXd> lu(kkt_reg);
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n + na);
    rhs.head(n) = -q;
    Eigen::VectorXd y = lu.solve(rhs);
    for (int refine = 0; refine < 5; ++refine) y += lu.solve(rhs - kkt * y);
    if (y.allFinite()) {
      Eigen::VectorXd zp = Eigen::VectorXd::Zero(m);
      for (Eigen::Index k = 0; k < na; ++k) zp[active[static_cast<std::size_t>(k)]] = -y[n + k];
      Eigen::VectorXd ap, nup;
      unscale(y.head(n), zp, ap, nup);
      // Tiny negative duals on the active set are rounding; clamp them.
      for (Eigen::Index i = 0; i < nup.size(); ++i) {
        if (nup[i] < 0.0 && nup[i] > -settings.tolerance) nup[i] = 0.0;
      }
      const KktResiduals rp_res = check_kkt(H, b, B, ap, nup);
      if (rp_res.dual_feasible() &&
          rp_res.primal_infeasibility <= settings.feasibility_tolerance &&
          detail::kkt_max(rp_res) < detail::kkt_max(res)) {
        alpha = ap;
        nu = nup;
        res = rp_res;
        sol.polished = true;
      }
    }
  }

  sol.alpha_star = alpha;
  sol.duals = nu;
  sol.kkt = res;
  sol.objective_value = detail::objective(H, b, alpha);
  if (failed && !detail::meets(res, settings)) {
    sol.status = QpStatus::NumericalFailure;
  } else if (detail::meets(res, settings)) {
    sol.status = QpStatus::Optimal;
  } else {
    sol.status = converged ? QpStatus::NumericalFailure : QpStatus::MaxIterations;
  }
  return sol;
}

inline QpSolution solve_qp(const QpProblem& qp, const QpSettings& settings = {}) {
  return solve_qp(qp.hessian, qp.linear, qp.constraints, settings);
}

/// Iteration log as CSV: iteration,objective,stationarity,primal_infeasibility,
/// complementarity,barrier,infeasibility,step.
inline void write_iteration_log_csv(std::ostream& os, const std::vector<QpIterate>& log) {
  os << "iteration,objective,stationarity,primal_infeasibility,complementarity,barrier,"
        "infeasibility,step\r\n";
  os.imbue(std::locale::classic());
  os.precision(17);
  for (const auto& it : log) {
    os << it.iteration << ',' << it.objective << ',' << it.stationarity << ','
       << it.primal_infeasibility << ',' << it.complementarity << ',' << it.barrier << ','
       << it.infeasibility << ',' << it.step << "\r\n";
  }
}

struct ProjectedGradientSettings {
  int max_outer_iterations = 5000;
  int max_inner_iterations = 200000;
  double tolerance = 1e-11;
};

/// First-order reference solver for cross-checks. Runs accelerated projected
/// gradient on the dual of a proximal-point subproblem
///   min a^T H a + b^T a + rho/2 ||a - a_k||^2  s.t.  B a >= 0,
/// whose dual is a bound-constrained concave quadratic in nu >= 0. With a
/// positive definite H the proximal term is off and a single outer pass runs.
inline Eigen::VectorXd solve_qp_projected_gradient(const Eigen::MatrixXd& H,
                                                   const Eigen::VectorXd& b,
                                                   const Eigen::MatrixXd& B,
                                                   const ProjectedGradientSettings& settings = {}) {
  const Eigen::Index n = b.size();
  const Eigen::Index m = B.rows();
  const Eigen::MatrixXd P = H + H.transpose();  // gradient of a^T H a is P a
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(P, Eigen::EigenvaluesOnly);
  const double p_norm = std::max(eig.eigenvalues().cwiseAbs().maxCoeff(), 1e-300);
  const double rho = eig.eigenvalues().minCoeff() > 1e-6 * p_norm ? 0.0 : 1e-3 * p_norm;

  Eigen::MatrixXd A = B;
  for (Eigen::Index i = 0; i < m; ++i) {
    const double nrm = A.row(i).norm();
    if (nrm > 0.0) A.row(i) /= nrm;
  }
  const Eigen::LLT<Eigen::MatrixXd> chol(P + rho * Eigen::MatrixXd::Identity(n, n));
  const Eigen::MatrixXd MinvAt = chol.solve(A.transpose());
  const Eigen::MatrixXd dual_hessian = A * MinvAt;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> deig(dual_hessian, Eigen::EigenvaluesOnly);
  const double lipschitz = std::max(deig.eigenvalues().maxCoeff(), 1e-300);
  const double step = 1.0 / lipschitz;

  Eigen::VectorXd a = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd nu = Eigen::VectorXd::Zero(m);
  const int outer_max = rho > 0.0 ? settings.max_outer_iterations : 1;
  for (int outer = 0; outer < outer_max; ++outer) {
    const Eigen::VectorXd lin = b - rho * a;
    const Eigen::VectorXd base = chol.solve(-lin);  // a(nu) = base + MinvAt nu
    // Dual objective (to maximize): -1/2 nu^T D nu + nu^T c + const, whose
    // gradient c - D nu equals -A a(nu).
    const Eigen::VectorXd c = -(A * base);
    Eigen::VectorXd y = nu;
    const double tol_scale = settings.tolerance * std::max(1.0, c.cwiseAbs().maxCoeff());
    double t = 1.0;
    for (int k = 0; k < settings.max_inner_iterations; ++k) {
      const Eigen::VectorXd grad = c - dual_hessian * y;  // ascent direction
      const Eigen::VectorXd next = (y + step * grad).cwiseMax(0.0);
      if ((y - next).dot(next - nu) > 0.0) {
        // Gradient restart: momentum points uphill.
        t = 1.0;
        y = nu;
        continue;
      }
      const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
      y = next + ((t - 1.0) / t_next) * (next - nu);
      nu = next;
      t = t_next;
      // A a(nu) = D nu - c; stop once a(nu) is feasible and complementary.
      const Eigen::VectorXd slack = dual_hessian * nu - c;
      const double infeas = std::max(0.0, -slack.minCoeff());
      const double compl_gap = std::abs(nu.dot(slack));
      if (infeas <= tol_scale && compl_gap <= tol_scale) break;
    }
    const Eigen::VectorXd a_next = base + MinvAt * nu;
    const double move = (a_next - a).cwiseAbs().maxCoeff();
    a = a_next;
    if (rho > 0.0 && move <= settings.tolerance * std::max(1.0, a.cwiseAbs().maxCoeff())) break;
  }
  return a;
}

}  // namespace srmcomm
