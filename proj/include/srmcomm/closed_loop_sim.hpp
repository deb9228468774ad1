#pragma once

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <cmath>
#include <complex>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <vector>

#include "srmcomm/error.hpp"
#include "srmcomm/kernel_basis.hpp"
#include "srmcomm/srm_model.hpp"

namespace srmcomm {

/// Zero-order-hold discretization of G(s) = 1/(s(s+1)); state [angle, velocity].
struct PlantDiscrete {
  Eigen::Matrix2d transition;
  Eigen::Vector2d input;
  double step = 0.0;
};

inline PlantDiscrete discretize_plant(double h) {
  if (!(h > 0.0)) throw ConfigError("plant: sample step must be > 0");
  const double decay = std::exp(-h);
  const double rise = -std::expm1(-h);  // 1 - e^{-h}
  PlantDiscrete p;
  p.step = h;
  p.transition << 1.0, rise, 0.0, decay;
  p.input << h - rise, rise;
  return p;
}

/// Discrete PID with derivative filter, obtained from the continuous serial form
/// C(s) = kp (1 + wi/s)(s/wd + 1)/(s/wt + 1) by the trapezoidal map.
struct PidDiscrete {
  double bandwidth_hz = 0.0;
  double step = 0.0;
  double kp = 0.0;
  double omega_i = 0.0;
  double omega_d = 0.0;
  double omega_t = 0.0;
  // u_k = b0 e_k + b1 e_{k-1} + b2 e_{k-2} - a1 u_{k-1} - a2 u_{k-2}
  double b0 = 0.0, b1 = 0.0, b2 = 0.0;
  double a1 = 0.0, a2 = 0.0;
  double closed_loop_radius = 0.0;

  [[nodiscard]] std::complex<double> continuous_response(double omega) const {
    const std::complex<double> s(0.0, omega);
    return kp * (1.0 + omega_i / s) * (s / omega_d + 1.0) / (s / omega_t + 1.0);
  }
};

/// Transposed direct-form II state of the controller.
struct PidState {
  double s1 = 0.0;
  double s2 = 0.0;

  double update(const PidDiscrete& pid, double e) {
    const double u = pid.b0 * e + s1;
    s1 = pid.b1 * e - pid.a1 * u + s2;
    s2 = pid.b2 * e - pid.a2 * u;
    return u;
  }
};

inline std::complex<double> plant_response(double omega) {
  const std::complex<double> s(0.0, omega);
  return 1.0 / (s * (s + 1.0));
}

/// Phase margin of the continuous loop at the design crossover, degrees.
inline double phase_margin_deg(const PidDiscrete& pid) {
  const double w = 2.0 * std::numbers::pi * pid.bandwidth_hz;
  return 180.0 + std::arg(pid.continuous_response(w) * plant_response(w)) * 180.0 / std::numbers::pi;
}

/// Closed-loop map of [angle, velocity, s1, s2] with unit torque gain and zero reference.
inline Eigen::Matrix4d closed_loop_matrix(const PidDiscrete& pid, const PlantDiscrete& plant) {
  // u = -b0 x1 + s1
  Eigen::RowVector4d u;
  u << -pid.b0, 0.0, 1.0, 0.0;
  Eigen::Matrix4d m = Eigen::Matrix4d::Zero();
  m.topLeftCorner<2, 2>() = plant.transition;
  m.topRows<2>() += plant.input * u;
  Eigen::RowVector4d e;
  e << -1.0, 0.0, 0.0, 0.0;
  m.row(2) = pid.b1 * e - pid.a1 * u;
  m(2, 3) += 1.0;
  m.row(3) = pid.b2 * e - pid.a2 * u;
  return m;
}

inline PidDiscrete design_pid(double bandwidth_hz, double h) {
  if (!(h > 0.0)) throw ConfigError("pid: sample step must be > 0");
  if (!(bandwidth_hz > 0.0)) throw ConfigError("pid: bandwidth must be > 0");
  if (bandwidth_hz > 0.05 / h) {
    throw ConfigError("pid: bandwidth must not exceed 5% of the sample rate");
  }
  PidDiscrete pid;
  pid.bandwidth_hz = bandwidth_hz;
  pid.step = h;
  const double w = 2.0 * std::numbers::pi * bandwidth_hz;
  pid.omega_i = w / 10.0;
  pid.omega_d = w / 3.0;
  pid.omega_t = 3.0 * w;
  pid.kp = 1.0;
  pid.kp = 1.0 / std::abs(pid.continuous_response(w) * plant_response(w));

  // C(s) = kp wt/wd (s^2 + (wi + wd) s + wi wd) / (s^2 + wt s)
  const double g = pid.kp * pid.omega_t / pid.omega_d;
  const double n2 = g, n1 = g * (pid.omega_i + pid.omega_d), n0 = g * pid.omega_i * pid.omega_d;
  const double d2 = 1.0, d1 = pid.omega_t, d0 = 0.0;
  const double k = 2.0 / h;
  const double k2 = k * k;
  const double a0 = d2 * k2 + d1 * k + d0;
  pid.b0 = (n2 * k2 + n1 * k + n0) / a0;
  pid.b1 = (2.0 * n0 - 2.0 * n2 * k2) / a0;
  pid.b2 = (n2 * k2 - n1 * k + n0) / a0;
  pid.a1 = (2.0 * d0 - 2.0 * d2 * k2) / a0;
  pid.a2 = (d2 * k2 - d1 * k + d0) / a0;

  const PlantDiscrete plant = discretize_plant(h);
  const Eigen::Matrix4d cl = closed_loop_matrix(pid, plant);
  pid.closed_loop_radius = cl.eigenvalues().cwiseAbs().maxCoeff();
  if (!(pid.closed_loop_radius < 1.0)) {
    throw ConfigError("pid: designed loop is not stable");
  }
  return pid;
}

/// Hold at zero, then a constant-velocity sweep over teeth_span tooth pitches.
struct ReferenceSpec {
  double sample_rate_hz = 5000.0;
  double velocity_teeth_per_s = 0.3;
  double teeth_span = 5.0;
  double hold_duration_s = 0.5;
  int tooth_count = 131;

  [[nodiscard]] double step() const { return 1.0 / sample_rate_hz; }
  [[nodiscard]] double velocity_rad_per_s() const {
    return velocity_teeth_per_s * tooth_pitch(tooth_count);
  }
  [[nodiscard]] long hold_samples() const {
    return std::lround(hold_duration_s * sample_rate_hz);
  }
  [[nodiscard]] long ramp_samples() const {
    return std::lround(teeth_span / velocity_teeth_per_s * sample_rate_hz);
  }
  [[nodiscard]] long sample_count() const { return hold_samples() + ramp_samples() + 1; }

  /// Reference angle at sample k for direction +1 or -1.
  [[nodiscard]] double at(long k, int direction) const {
    const long moving = k - hold_samples();
    if (moving <= 0) return 0.0;
    return direction * velocity_rad_per_s() * static_cast<double>(moving) * step();
  }

  void validate() const {
    if (!(sample_rate_hz > 0.0)) throw ConfigError("reference: sample_rate_hz must be > 0");
    if (!(velocity_teeth_per_s > 0.0)) {
      throw ConfigError("reference: reference_velocity_teeth_per_s must be > 0");
    }
    if (!(teeth_span >= 2.0)) throw ConfigError("reference: teeth_span must be >= 2");
    if (!(hold_duration_s >= 0.0)) throw ConfigError("reference: hold_duration_s must be >= 0");
    if (tooth_count < 1) throw ConfigError("reference: tooth_count must be >= 1");
  }
};

struct DirectionTrace {
  int direction = 1;
  std::vector<double> time;
  std::vector<double> reference;
  std::vector<double> angle;
  std::vector<double> error;
  std::vector<double> torque_command;
  std::vector<Eigen::VectorXd> currents;  // empty unless full traces are requested
  bool aborted = false;
  double e_rms = 0.0;
};

struct SimResult {
  DirectionTrace positive;
  DirectionTrace negative;
  double e_rms_plus = 0.0;
  double e_rms_minus = 0.0;
  double e_rms = 0.0;
  bool aborted = false;
};

struct SimOptions {
  bool record_currents = false;
  double divergence_limit_rad = 1.0;
};

/// RMS of e from the first sample where |angle| reaches (span - 1) tooth
/// pitches through the last sample.
inline double window_rms(const std::vector<double>& angle, const std::vector<double>& error,
                         double teeth_span, int tooth_count) {
  if (angle.size() != error.size()) throw std::invalid_argument("window_rms: trace size mismatch");
  if (!(teeth_span >= 2.0)) throw std::invalid_argument("window_rms: trace must cover >= 2 teeth");
  const double start = (teeth_span - 1.0) * tooth_pitch(tooth_count);
  std::size_t first = angle.size();
  for (std::size_t k = 0; k < angle.size(); ++k) {
    if (std::abs(angle[k]) >= start) {
      first = k;
      break;
    }
  }
  if (first >= angle.size()) {
    throw std::invalid_argument("window_rms: trace does not reach the last tooth");
  }
  double sum = 0.0;
  for (std::size_t k = first; k < error.size(); ++k) sum += error[k] * error[k];
  return std::sqrt(sum / static_cast<double>(error.size() - first));
}

inline double combine_e_rms(double plus, double minus) {
  return std::sqrt(0.5 * (plus * plus + minus * minus));
}

/// Fills the per-direction and combined metrics of a result from its traces.
inline void compute_e_rms(SimResult& result, double teeth_span, int tooth_count) {
  result.aborted = result.positive.aborted || result.negative.aborted;
  if (result.aborted) {
    result.e_rms_plus = result.e_rms_minus = result.e_rms = std::numeric_limits<double>::quiet_NaN();
    return;
  }
  result.e_rms_plus = result.positive.e_rms =
      window_rms(result.positive.angle, result.positive.error, teeth_span, tooth_count);
  result.e_rms_minus = result.negative.e_rms =
      window_rms(result.negative.angle, result.negative.error, teeth_span, tooth_count);
  result.e_rms = combine_e_rms(result.e_rms_plus, result.e_rms_minus);
}

/// One direction of the loop: e = r - phi, T* = C(e), u = f(phi, T*),
/// T = g(phi, theta_true) u, plant advanced one step.
template <class Commutation>
DirectionTrace simulate_direction(const Eigen::VectorXd& theta_true, const GBasis& gbasis,
                                  const Commutation& commutation, const PidDiscrete& pid,
                                  const PlantDiscrete& plant, const ReferenceSpec& ref,
                                  int direction, const SimOptions& options = {}) {
  ref.validate();
  if (std::abs(pid.step - plant.step) > 1e-15 * plant.step ||
      std::abs(plant.step - ref.step()) > 1e-12 * plant.step) {
    throw ConfigError("simulation: controller, plant and reference sample steps differ");
  }
  const long n = ref.sample_count();
  DirectionTrace tr;
  tr.direction = direction;
  for (auto* v : {&tr.time, &tr.reference, &tr.angle, &tr.error, &tr.torque_command}) {
    v->reserve(static_cast<std::size_t>(n));
  }
  Eigen::Vector2d x = Eigen::Vector2d::Zero();
  PidState state;
  Eigen::VectorXd u(gbasis.coil_count());
  for (long k = 0; k < n; ++k) {
    const double r = ref.at(k, direction);
    const double phi = x[0];
    const double e = r - phi;
    tr.time.push_back(static_cast<double>(k) * plant.step);
    tr.reference.push_back(r);
    tr.angle.push_back(phi);
    tr.error.push_back(e);
    if (std::abs(e) > options.divergence_limit_rad) {
      tr.aborted = true;
      break;
    }
    const double torque_cmd = state.update(pid, e);
    commutation(phi, torque_cmd, u);
    tr.torque_command.push_back(torque_cmd);
    if (options.record_currents) tr.currents.push_back(u);
    const double torque = gbasis.gains(phi, theta_true).dot(u);
    x = plant.transition * x + plant.input * torque;
  }
  return tr;
}

/// Runs both directions and computes the windowed tracking metrics.
template <class Commutation>
SimResult simulate_tracking(const SrmRealization& realization, const GBasis& gbasis,
                            const Commutation& commutation, const PidDiscrete& pid,
                            const PlantDiscrete& plant, const ReferenceSpec& ref,
                            const SimOptions& options = {}) {
  SimResult result;
  result.positive = simulate_direction(realization.theta_true, gbasis, commutation, pid, plant,
                                       ref, +1, options);
  result.negative = simulate_direction(realization.theta_true, gbasis, commutation, pid, plant,
                                       ref, -1, options);
  compute_e_rms(result, ref.teeth_span, ref.tooth_count);
  return result;
}

}  // namespace srmcomm
