#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>

#include "srmcomm/kernel_basis.hpp"
#include "srmcomm/ripple_objective.hpp"
#include "srmcomm/srm_model.hpp"

namespace srmcomm {

/// Designed commutation function: f^{+/-}(phi) = psi_f(phi) alpha^{+/-}.
struct CommutationParams {
  KernelBasisSpec basis;
  Eigen::VectorXd alpha_plus;   // n_c * n_alpha, coil by coil
  Eigen::VectorXd alpha_minus;

  static CommutationParams from_stacked(const Eigen::VectorXd& alpha, KernelBasisSpec basis) {
    const Eigen::Index half = basis.coefficients_per_sign();
    if (alpha.size() != 2 * half) {
      throw std::invalid_argument("CommutationParams: stacked alpha has wrong size");
    }
    CommutationParams p;
    p.alpha_plus = alpha.head(half);
    p.alpha_minus = alpha.tail(half);
    p.basis = std::move(basis);
    return p;
  }

  [[nodiscard]] Eigen::VectorXd stacked() const {
    Eigen::VectorXd a(alpha_plus.size() + alpha_minus.size());
    a << alpha_plus, alpha_minus;
    return a;
  }

  void validate() const {
    basis.validate();
    if (alpha_plus.size() != basis.coefficients_per_sign() ||
        alpha_minus.size() != basis.coefficients_per_sign()) {
      throw ConfigError("commutation parameters do not match their kernel basis");
    }
  }
};

/// Unclamped branch values f^+(phi) (positive = true) or f^-(phi).
inline Eigen::VectorXd branch_values(double phi, const CommutationParams& params, bool positive) {
  return detail::commutation_values(gamma_row(phi, params.basis),
                                    positive ? params.alpha_plus : params.alpha_minus,
                                    params.basis.coil_count);
}

struct CurrentCommand {
  Eigen::VectorXd u;         // squared currents, A^2
  double clamp = 0.0;        // largest negative value removed by the clamp
  bool clamp_reported = false;  // clamp exceeded 1e-6 |T*|
};

/// Control law u = f^+(phi) T* for T* >= 0 and u = -f^-(phi) T* otherwise,
/// clamped at zero from below.
inline CurrentCommand eval_f(double phi, double torque, const CommutationParams& params) {
  CurrentCommand out;
  out.u = branch_values(phi, params, torque >= 0.0) * std::abs(torque);
  for (Eigen::Index c = 0; c < out.u.size(); ++c) {
    if (out.u[c] < 0.0) {
      out.clamp = std::max(out.clamp, -out.u[c]);
      out.u[c] = 0.0;
    }
  }
  out.clamp_reported = out.clamp > 1e-6 * std::abs(torque);
  return out;
}

/// T = g(phi, theta) u.
inline double realized_torque(double phi, const Eigen::VectorXd& u, const Eigen::VectorXd& theta,
                              const GBasis& gbasis) {
  if (u.size() != gbasis.coil_count()) {
    throw std::invalid_argument("realized_torque: current vector has wrong size");
  }
  return gbasis.gains(phi, theta).dot(u);
}

/// True relative torque b^{+/-}(phi_i) = g(phi_i) f^{+/-}(phi_i) on a grid.
struct MismatchProfile {
  std::vector<double> angles;
  Eigen::VectorXd b_plus;
  Eigen::VectorXd b_minus;

  /// max_i max(|b+ - 1|, |b- + 1|)
  [[nodiscard]] double max_deviation() const {
    const double p = (b_plus.array() - 1.0).abs().maxCoeff();
    const double m = (b_minus.array() + 1.0).abs().maxCoeff();
    return std::max(p, m);
  }
};

inline MismatchProfile torque_mismatch_profile(const CommutationParams& params,
                                               const Eigen::VectorXd& theta, const GBasis& gbasis,
                                               const ErrorGrid& grid) {
  detail::check_compatible(params.basis, gbasis);
  MismatchProfile prof;
  prof.angles = grid.angles;
  prof.b_plus.resize(grid.size());
  prof.b_minus.resize(grid.size());
  for (int i = 0; i < grid.size(); ++i) {
    const double phi = grid.angles[static_cast<std::size_t>(i)];
    const Eigen::VectorXd g = gbasis.gains(phi, theta);
    const Eigen::RowVectorXd gamma = gamma_row(phi, params.basis);
    prof.b_plus[i] = g.dot(detail::commutation_values(gamma, params.alpha_plus, params.basis.coil_count));
    prof.b_minus[i] = g.dot(detail::commutation_values(gamma, params.alpha_minus, params.basis.coil_count));
  }
  return prof;
}

/// Smallest branch value on the design grid and on a finer check grid.
struct FeasibilityReport {
  double grid_min = 0.0;
  double fine_grid_min = 0.0;
  bool fine_grid_warning = false;  // fine_grid_min < -1e-6
};

inline FeasibilityReport check_feasibility(const CommutationParams& params, int grid_points,
                                           int refinement = 10) {
  auto min_over = [&](int points) {
    const ErrorGrid g = ErrorGrid::uniform(points, params.basis.tooth_count);
    double lo = std::numeric_limits<double>::infinity();
    for (const double phi : g.angles) {
      lo = std::min({lo, branch_values(phi, params, true).minCoeff(),
                     branch_values(phi, params, false).minCoeff()});
    }
    return lo;
  };
  FeasibilityReport r;
  r.grid_min = min_over(grid_points);
  r.fine_grid_min = min_over(grid_points * refinement);
  r.fine_grid_warning = r.fine_grid_min < -1e-6;
  return r;
}

// ---------------------------------------------------------------------------
// Conventional benchmark: torque sharing with saturated nominal inversion.

/// Clamp bounds for the inverted gain 1/ghat_c, units A^2/(N*m).
struct SaturationLimits {
  double x_min = 0.0;
  double x_max = std::numeric_limits<double>::infinity();

  [[nodiscard]] double apply(double x) const { return std::clamp(x, x_min, x_max); }

  void validate() const {
    if (!(x_min <= x_max)) throw ConfigError("saturation: x_min must not exceed x_max");
  }
};

/// Raised-cosine torque sharing. Coil c (0-based) owns the sector of width
/// 1/n_c tooth pitches centered at positive_center - c/n_c (tooth fractions)
/// for positive torque and half a pitch further for negative torque. Shares
/// ramp over overlap_fraction of the pitch around each sector boundary.
struct TsfSpec {
  double overlap_fraction = 0.15;
  int coil_count = 3;
  int tooth_count = 131;
  double positive_center = 0.25;

  void validate() const {
    if (coil_count < 1) throw ConfigError("tsf: coil_count must be >= 1");
    if (tooth_count < 1) throw ConfigError("tsf: tooth_count must be >= 1");
    if (!(overlap_fraction > 0.0 && overlap_fraction <= 0.5)) {
      throw ConfigError("tsf: overlap_fraction must lie in (0, 0.5]");
    }
    if (coil_count > 1 && overlap_fraction > 1.0 / coil_count) {
      throw ConfigError("tsf: overlap_fraction must not exceed 1/n_c");
    }
  }
};

/// Shares of each coil at phi for the positive or negative torque branch; the
/// shares sum to one.
inline Eigen::VectorXd tsf(double phi, const TsfSpec& spec, bool positive = true) {
  Eigen::VectorXd share = Eigen::VectorXd::Zero(spec.coil_count);
  if (spec.coil_count == 1) {
    share[0] = 1.0;
    return share;
  }
  const double x = wrap_to_tooth(phi, spec.tooth_count) / tooth_pitch(spec.tooth_count);
  const double half_sector = 0.5 / spec.coil_count;
  const double w = spec.overlap_fraction;
  for (int c = 0; c < spec.coil_count; ++c) {
    const double center =
        spec.positive_center + (positive ? 0.0 : 0.5) - static_cast<double>(c) / spec.coil_count;
    double d = x - center;
    d -= std::round(d);  // wrapped offset in [-1/2, 1/2]
    const double a = std::abs(d) - half_sector;
    if (a <= -0.5 * w) {
      share[c] = 1.0;
    } else if (a < 0.5 * w) {
      share[c] = 0.5 * (1.0 - std::sin(std::numbers::pi * a / w));
    }
  }
  return share;
}

/// Tooth fraction at which the first tooth harmonic of coil 1's nominal gain
/// peaks; used to align the torque sharing sectors with the model.
inline double estimate_positive_center(const Eigen::VectorXd& theta, const GBasis& gbasis,
                                       int samples = 720) {
  double s = 0.0, c = 0.0;
  const double pitch = tooth_pitch(gbasis.tooth_count());
  for (int i = 0; i < samples; ++i) {
    const double x = static_cast<double>(i) / samples;
    const double g = gbasis.gains(x * pitch, theta)[0];
    s += g * std::sin(2.0 * std::numbers::pi * x);
    c += g * std::cos(2.0 * std::numbers::pi * x);
  }
  // g ~ R sin(2 pi x + psi) with psi = atan2(c, s); peak where the argument is pi/2.
  double x = (0.5 * std::numbers::pi - std::atan2(c, s)) / (2.0 * std::numbers::pi);
  x -= std::floor(x);
  return x;
}

inline TsfSpec make_tsf_spec(const ProbabilisticSrmModel& model, double overlap_fraction = 0.15) {
  TsfSpec spec;
  spec.overlap_fraction = overlap_fraction;
  spec.coil_count = model.basis().coil_count();
  spec.tooth_count = model.basis().tooth_count();
  spec.positive_center = estimate_positive_center(model.theta_mean(), model.basis());
  spec.validate();
  return spec;
}

/// x_min = 0 and x_max = 10 / max_{phi, c} |ghat_c(phi, theta)|.
inline SaturationLimits default_saturation(const Eigen::VectorXd& theta, const GBasis& gbasis,
                                           int samples = 1000) {
  double peak = 0.0;
  const double pitch = tooth_pitch(gbasis.tooth_count());
  for (int i = 0; i < samples; ++i) {
    peak = std::max(peak, gbasis.gains(pitch * i / samples, theta).cwiseAbs().maxCoeff());
  }
  if (!(peak > 0.0)) throw ModelError("saturation: nominal model has zero gain everywhere");
  return {0.0, 10.0 / peak};
}

/// Conventional commutation u_c = share_c(phi) * sat(+/-1/ghat_c(phi)) * |T*|,
/// where the sign of T* picks the sharing branch and the inverted gain.
inline Eigen::VectorXd eval_f_conv(double phi, double torque, const Eigen::VectorXd& theta_nominal,
                                   const GBasis& gbasis, const TsfSpec& spec,
                                   const SaturationLimits& sat) {
  Eigen::VectorXd u = Eigen::VectorXd::Zero(gbasis.coil_count());
  if (torque == 0.0) return u;
  const bool positive = torque > 0.0;
  const Eigen::VectorXd share = tsf(phi, spec, positive);
  const Eigen::VectorXd g = gbasis.gains(phi, theta_nominal);
  for (Eigen::Index c = 0; c < u.size(); ++c) {
    if (share[c] == 0.0) continue;
    const double inv = g[c] == 0.0 ? sat.x_max : (positive ? 1.0 : -1.0) / g[c];
    u[c] = share[c] * sat.apply(inv) * std::abs(torque);
  }
  return u;
}

// ---------------------------------------------------------------------------
// Evaluators used by the closed-loop simulation. Each writes u for (phi, T*).

class RobustCommutation {
 public:
  explicit RobustCommutation(CommutationParams params) : params_(std::move(params)) {
    params_.validate();
    const int nc = params_.basis.coil_count;
    const int na = params_.basis.size();
    plus_ = Eigen::Map<const Eigen::MatrixXd>(params_.alpha_plus.data(), na, nc).transpose();
    minus_ = Eigen::Map<const Eigen::MatrixXd>(params_.alpha_minus.data(), na, nc).transpose();
  }

  [[nodiscard]] int coil_count() const { return params_.basis.coil_count; }
  [[nodiscard]] const CommutationParams& params() const { return params_; }

  void operator()(double phi, double torque, Eigen::Ref<Eigen::VectorXd> u) const {
    const Eigen::VectorXd gamma = gamma_row(phi, params_.basis).transpose();
    u.noalias() = (torque >= 0.0 ? plus_ : minus_) * gamma;
    u *= std::abs(torque);
    u = u.cwiseMax(0.0);
  }

 private:
  CommutationParams params_;
  Eigen::MatrixXd plus_;   // n_c x n_alpha
  Eigen::MatrixXd minus_;
};

class ConventionalCommutation {
 public:
  ConventionalCommutation(Eigen::VectorXd theta_nominal, GBasis gbasis, TsfSpec spec,
                          SaturationLimits sat)
      : theta_(std::move(theta_nominal)),
        gbasis_(std::move(gbasis)),
        spec_(spec),
        sat_(sat) {
    spec_.validate();
    sat_.validate();
  }

  /// Benchmark built from a model's nominal parameters with default saturation.
  static ConventionalCommutation for_model(const ProbabilisticSrmModel& model,
                                           double overlap_fraction = 0.15) {
    return {model.theta_mean(), model.basis(), make_tsf_spec(model, overlap_fraction),
            default_saturation(model.theta_mean(), model.basis())};
  }

  [[nodiscard]] int coil_count() const { return gbasis_.coil_count(); }
  [[nodiscard]] const TsfSpec& tsf_spec() const { return spec_; }
  [[nodiscard]] const SaturationLimits& saturation() const { return sat_; }

  void operator()(double phi, double torque, Eigen::Ref<Eigen::VectorXd> u) const {
    u = eval_f_conv(phi, torque, theta_, gbasis_, spec_, sat_);
  }

 private:
  Eigen::VectorXd theta_;
  GBasis gbasis_;
  TsfSpec spec_;
  SaturationLimits sat_;
};

}  // namespace srmcomm
