#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "srmcomm/kernel_basis.hpp"
#include "srmcomm/random.hpp"
#include "srmcomm/srm_model.hpp"

namespace srmcomm {

/// Evenly spaced rotor angles over one tooth, starting at 0.
struct ErrorGrid {
  std::vector<double> angles;

  [[nodiscard]] int size() const { return static_cast<int>(angles.size()); }

  static ErrorGrid uniform(int points, int tooth_count) {
    if (points < 1) throw ConfigError("error grid: at least one point required");
    ErrorGrid grid;
    const double step = tooth_pitch(tooth_count) / points;
    grid.angles.reserve(static_cast<std::size_t>(points));
    for (int i = 0; i < points; ++i) grid.angles.push_back(step * i);
    return grid;
  }
};

/// Expected ripple cost alpha^T H alpha + b^T alpha + c0 and the grid
/// non-negativity constraints B alpha >= 0. Variables are ordered
/// [alpha_plus; alpha_minus], each stacked coil by coil.
struct QpProblem {
  Eigen::MatrixXd hessian;
  Eigen::VectorXd linear;
  double constant = 0.0;
  Eigen::MatrixXd constraints;

  int coil_count = 0;
  int basis_size = 0;
  int grid_points = 0;

  [[nodiscard]] Eigen::Index variable_count() const { return linear.size(); }
  [[nodiscard]] Eigen::Index constraint_count() const { return constraints.rows(); }
};

/// Distribution of the stacked estimated torque error over the grid.
struct ErrorDistribution {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
};

namespace detail {

inline void check_compatible(const KernelBasisSpec& fbasis, const GBasis& gbasis) {
  if (fbasis.coil_count != gbasis.coil_count()) {
    throw std::invalid_argument("commutation basis has " + std::to_string(fbasis.coil_count) +
                                " coils, model has " + std::to_string(gbasis.coil_count()));
  }
  if (fbasis.tooth_count != gbasis.tooth_count()) {
    throw std::invalid_argument("commutation basis and model disagree on tooth count");
  }
}

inline void check_alpha(const Eigen::VectorXd& alpha, const KernelBasisSpec& fbasis) {
  if (alpha.size() != 2 * fbasis.coefficients_per_sign()) {
    throw std::invalid_argument("alpha has " + std::to_string(alpha.size()) +
                                " entries, expected " +
                                std::to_string(2 * fbasis.coefficients_per_sign()));
  }
}

// Per-coil commutation values f(phi) = psi_f(phi) * alpha_half.
inline Eigen::VectorXd commutation_values(const Eigen::RowVectorXd& gamma,
                                          const Eigen::Ref<const Eigen::VectorXd>& half,
                                          int coil_count) {
  const Eigen::Index na = gamma.size();
  Eigen::VectorXd f(coil_count);
  for (int c = 0; c < coil_count; ++c) f[c] = gamma.dot(half.segment(c * na, na));
  return f;
}

}  // namespace detail

/// X(alpha) = F(alpha) Psi_g, shape 2N x n_theta. Row i is
/// f^{sign}(phi_i)^T psi_g(phi_i). Kept as the explicit validation route for
/// the per-point assembly in assemble_qp.
inline Eigen::MatrixXd build_X(const Eigen::VectorXd& alpha, const ErrorGrid& grid,
                               const KernelBasisSpec& fbasis, const GBasis& gbasis) {
  detail::check_compatible(fbasis, gbasis);
  detail::check_alpha(alpha, fbasis);
  const int n = grid.size();
  const int half = fbasis.coefficients_per_sign();
  Eigen::MatrixXd X(2 * n, gbasis.parameter_count());
  for (int i = 0; i < n; ++i) {
    const double phi = grid.angles[static_cast<std::size_t>(i)];
    const Eigen::MatrixXd pf = psi_f(phi, fbasis);
    const Eigen::MatrixXd pg = psi_g(phi, gbasis);
    X.row(i) = (pf * alpha.head(half)).transpose() * pg;
    X.row(n + i) = (pf * alpha.tail(half)).transpose() * pg;
  }
  return X;
}

/// Offset [-1_N; 1_N] of the stacked error.
inline Eigen::VectorXd error_offset(int grid_points) {
  Eigen::VectorXd o(2 * grid_points);
  o.head(grid_points).setConstant(-1.0);
  o.tail(grid_points).setConstant(1.0);
  return o;
}

/// Mean X theta_hat + [-1; 1] and covariance lambda * X Sigma X^T.
inline ErrorDistribution error_distribution(const Eigen::VectorXd& alpha,
                                            const ProbabilisticSrmModel& model,
                                            const ErrorGrid& grid,
                                            const KernelBasisSpec& fbasis,
                                            double variance_scale = 1.0) {
  const Eigen::MatrixXd X = build_X(alpha, grid, fbasis, model.basis());
  ErrorDistribution d;
  d.mean = X * model.theta_mean() + error_offset(grid.size());
  d.cov = variance_scale * (X * model.theta_cov() * X.transpose());
  return d;
}

/// Constraint matrix B, shape (2 n_c N) x (2 n_c n_alpha). Row (s*N + i)*n_c + c
/// evaluates coil c of f^{s}(phi_i) from the sign-matched half of alpha.
inline Eigen::MatrixXd build_B(const ErrorGrid& grid, const KernelBasisSpec& fbasis) {
  const int nc = fbasis.coil_count;
  const int na = fbasis.size();
  const int n = grid.size();
  const int half = nc * na;
  Eigen::MatrixXd B = Eigen::MatrixXd::Zero(2 * nc * n, 2 * half);
  for (int i = 0; i < n; ++i) {
    const Eigen::RowVectorXd gamma = gamma_row(grid.angles[static_cast<std::size_t>(i)], fbasis);
    for (int s = 0; s < 2; ++s) {
      for (int c = 0; c < nc; ++c) {
        B.block((s * n + i) * nc + c, s * half + c * na, 1, na) = gamma;
      }
    }
  }
  return B;
}

/// Assembles the expected-cost QP by accumulating one block per grid point.
/// With P = psi_g(phi_i), M = lambda*Sigma + theta theta^T and gamma = gamma(phi_i),
/// the (c, d) coil block of each sign's Hessian gains (P M P^T)_{cd} gamma^T gamma,
/// and the linear term gains -/+ 2 ghat_c(phi_i) gamma for the plus/minus halves.
inline QpProblem assemble_qp(const ProbabilisticSrmModel& model, const ErrorGrid& grid,
                             const KernelBasisSpec& fbasis, double variance_scale = 1.0) {
  detail::check_compatible(fbasis, model.basis());
  if (!(variance_scale >= 0.0)) throw std::domain_error("assemble_qp: variance scale must be >= 0");
  if (grid.size() < fbasis.size()) {
    throw ConfigError("error grid must have at least n_alpha points");
  }
  const int nc = fbasis.coil_count;
  const int na = fbasis.size();
  const int half = nc * na;
  const Eigen::MatrixXd second_moment =
      variance_scale * model.theta_cov() + model.theta_mean() * model.theta_mean().transpose();

  Eigen::MatrixXd h_half = Eigen::MatrixXd::Zero(half, half);
  Eigen::VectorXd b_plus = Eigen::VectorXd::Zero(half);
  for (const double phi : grid.angles) {
    const Eigen::MatrixXd P = psi_g(phi, model.basis());
    Eigen::MatrixXd G = P * second_moment * P.transpose();
    G = 0.5 * (G + G.transpose()).eval();
    const Eigen::VectorXd ghat = P * model.theta_mean();
    const Eigen::RowVectorXd gamma = gamma_row(phi, fbasis);
    const Eigen::MatrixXd outer = gamma.transpose() * gamma;
    for (int c = 0; c < nc; ++c) {
      for (int d = 0; d < nc; ++d) h_half.block(c * na, d * na, na, na) += G(c, d) * outer;
      b_plus.segment(c * na, na) -= 2.0 * ghat[c] * gamma.transpose();
    }
  }

  QpProblem qp;
  qp.coil_count = nc;
  qp.basis_size = na;
  qp.grid_points = grid.size();
  qp.hessian = Eigen::MatrixXd::Zero(2 * half, 2 * half);
  qp.hessian.topLeftCorner(half, half) = h_half;
  qp.hessian.bottomRightCorner(half, half) = h_half;
  qp.linear.resize(2 * half);
  qp.linear << b_plus, -b_plus;
  qp.constant = 2.0 * grid.size();
  qp.constraints = build_B(grid, fbasis);
  return qp;
}

/// alpha^T H alpha + b^T alpha + c0.
inline double eval_cost(const QpProblem& qp, const Eigen::VectorXd& alpha) {
  if (alpha.size() != qp.variable_count()) {
    throw std::invalid_argument("eval_cost: alpha dimension mismatch");
  }
  return alpha.dot(qp.hessian * alpha) + qp.linear.dot(alpha) + qp.constant;
}

/// Stacked estimated torque error for a fixed theta, evaluated directly from
/// the model gains and the commutation basis.
inline Eigen::VectorXd stacked_error(const Eigen::VectorXd& alpha, const Eigen::VectorXd& theta,
                                     const ErrorGrid& grid, const KernelBasisSpec& fbasis,
                                     const GBasis& gbasis) {
  detail::check_compatible(fbasis, gbasis);
  detail::check_alpha(alpha, fbasis);
  const int n = grid.size();
  const int half = fbasis.coefficients_per_sign();
  Eigen::VectorXd eps(2 * n);
  for (int i = 0; i < n; ++i) {
    const double phi = grid.angles[static_cast<std::size_t>(i)];
    const Eigen::RowVectorXd g = eval_g(phi, theta, gbasis);
    const Eigen::MatrixXd pf = psi_f(phi, fbasis);
    eps[i] = (g * (pf * alpha.head(half)))(0) - 1.0;
    eps[n + i] = (g * (pf * alpha.tail(half)))(0) + 1.0;
  }
  return eps;
}

struct McEstimate {
  double mean = 0.0;
  double standard_error = 0.0;
};

/// Sample average of ||eps(theta, alpha)||^2 over theta ~ N(theta_hat, lambda*Sigma).
inline McEstimate mc_cost_oracle(const ProbabilisticSrmModel& model, const ErrorGrid& grid,
                                 const KernelBasisSpec& fbasis, const Eigen::VectorXd& alpha,
                                 long n_samples, Rng& rng, double variance_scale = 1.0) {
  if (n_samples < 1) throw std::invalid_argument("mc_cost_oracle: n_samples must be >= 1");
  detail::check_compatible(fbasis, model.basis());
  detail::check_alpha(alpha, fbasis);
  const int n = grid.size();
  const int nc = fbasis.coil_count;
  const int half = fbasis.coefficients_per_sign();

  // theta-independent pieces: model basis and both commutation branches per point.
  std::vector<Eigen::MatrixXd> basis_at(static_cast<std::size_t>(n));
  Eigen::MatrixXd f_plus(nc, n), f_minus(nc, n);
  for (int i = 0; i < n; ++i) {
    const double phi = grid.angles[static_cast<std::size_t>(i)];
    basis_at[static_cast<std::size_t>(i)] = psi_g(phi, model.basis());
    const Eigen::RowVectorXd gamma = gamma_row(phi, fbasis);
    f_plus.col(i) = detail::commutation_values(gamma, alpha.head(half), nc);
    f_minus.col(i) = detail::commutation_values(gamma, alpha.tail(half), nc);
  }

  double sum = 0.0;
  double sum_sq = 0.0;
  for (long s = 0; s < n_samples; ++s) {
    const SrmRealization r = sample_srm(model, variance_scale, rng);
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
      const Eigen::VectorXd g = basis_at[static_cast<std::size_t>(i)] * r.theta_true;
      const double ep = g.dot(f_plus.col(i)) - 1.0;
      const double em = g.dot(f_minus.col(i)) + 1.0;
      total += ep * ep + em * em;
    }
    sum += total;
    sum_sq += total * total;
  }
  McEstimate out;
  const double count = static_cast<double>(n_samples);
  out.mean = sum / count;
  if (n_samples > 1) {
    const double var = std::max(0.0, (sum_sq - count * out.mean * out.mean) / (count - 1.0));
    out.standard_error = std::sqrt(var / count);
  }
  return out;
}

}  // namespace srmcomm
