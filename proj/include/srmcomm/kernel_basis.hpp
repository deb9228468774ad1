#pragma once

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "srmcomm/error.hpp"

namespace srmcomm {

/// Largest supported Matérn smoothness index.
inline constexpr int kMaxSmoothness = 20;

/// Spatial period of one rotor tooth in radians.
inline double tooth_pitch(int tooth_count) {
  return 2.0 * std::numbers::pi / static_cast<double>(tooth_count);
}

/// Reduces an angle into [0, 2*pi/n_t).
inline double wrap_to_tooth(double phi, int tooth_count) {
  const double pitch = tooth_pitch(tooth_count);
  double r = std::fmod(phi, pitch);
  if (r < 0.0) r += pitch;
  if (r >= pitch) r -= pitch;
  return r;
}

namespace detail {

// Polynomial coefficients of the half-integer Matérn kernel, indexed by the
// power of z = 2*sqrt(2*mu+1)*rho:
//   coeff[mu][mu - n] = mu!/(2mu)! * (mu+n)!/(n!(mu-n)!)
// 40! overflows 64-bit integers, so the factorials are tabulated as doubles;
// they are exact up to 22! and correctly rounded beyond.
struct MaternTable {
  std::array<std::array<double, kMaxSmoothness + 1>, kMaxSmoothness + 1> coeff{};

  MaternTable() {
    std::array<double, 2 * kMaxSmoothness + 1> fact{};
    fact[0] = 1.0;
    for (int k = 1; k <= 2 * kMaxSmoothness; ++k) fact[k] = fact[k - 1] * k;
    for (int mu = 0; mu <= kMaxSmoothness; ++mu) {
      for (int n = 0; n <= mu; ++n) {
        coeff[mu][mu - n] =
            fact[mu] / fact[2 * mu] * fact[mu + n] / (fact[n] * fact[mu - n]);
      }
    }
  }
};

inline const MaternTable& matern_table() {
  static const MaternTable table;
  return table;
}

}  // namespace detail

/// Half-integer Matérn kernel of smoothness nu = mu + 1/2 evaluated at a
/// scaled distance rho. Equals 1 at rho = 0 and decreases strictly.
inline double matern_kernel(double rho, int mu) {
  if (!(rho >= 0.0)) throw std::domain_error("matern_kernel: rho must be >= 0");
  if (mu < 0) throw std::domain_error("matern_kernel: mu must be >= 0");
  if (mu > kMaxSmoothness) {
    throw ConfigError("matern_kernel: smoothness " + std::to_string(mu) +
                      " exceeds supported maximum " + std::to_string(kMaxSmoothness));
  }
  const double root = std::sqrt(2.0 * mu + 1.0);
  const double z = 2.0 * root * rho;
  const auto& c = detail::matern_table().coeff[mu];
  double poly = c[mu];
  for (int p = mu - 1; p >= 0; --p) poly = poly * z + c[p];
  return std::exp(-root * rho) * poly;
}

/// Chordal distance between the unit-circle embeddings of two angles at the
/// tooth frequency, divided by the length scale. Periodic in phi with the
/// tooth pitch.
inline double chordal_distance(double phi, double center, int tooth_count,
                               double length_scale) {
  if (!(length_scale > 0.0)) {
    throw std::domain_error("chordal_distance: length scale must be > 0");
  }
  const double nt = static_cast<double>(tooth_count);
  const double a = wrap_to_tooth(phi, tooth_count) * nt;
  const double b = center * nt;
  const double ds = std::sin(b) - std::sin(a);
  const double dc = std::cos(b) - std::cos(a);
  return std::sqrt(ds * ds + dc * dc) / length_scale;
}

/// Tooth-periodic Matérn basis of the commutation functions.
struct KernelBasisSpec {
  std::vector<double> centers;  // radians, strictly increasing in [0, pitch)
  double length_scale = 0.3;
  int smoothness = 3;
  int tooth_count = 131;
  int coil_count = 3;

  [[nodiscard]] int size() const { return static_cast<int>(centers.size()); }
  [[nodiscard]] int coefficients_per_sign() const { return coil_count * size(); }

  void validate() const {
    if (centers.empty()) throw ConfigError("kernel basis: at least one center required");
    if (!(length_scale > 0.0)) throw ConfigError("kernel basis: length_scale must be > 0");
    if (smoothness < 0 || smoothness > kMaxSmoothness) {
      throw ConfigError("kernel basis: smoothness must lie in [0, " +
                        std::to_string(kMaxSmoothness) + "]");
    }
    if (tooth_count < 1) throw ConfigError("kernel basis: tooth_count must be >= 1");
    if (coil_count < 1) throw ConfigError("kernel basis: coil_count must be >= 1");
    const double pitch = tooth_pitch(tooth_count);
    for (std::size_t i = 0; i < centers.size(); ++i) {
      if (!(centers[i] >= 0.0 && centers[i] < pitch)) {
        throw ConfigError("kernel basis: center outside [0, 2*pi/n_t)");
      }
      if (i > 0 && !(centers[i] > centers[i - 1])) {
        throw ConfigError("kernel basis: centers must be strictly increasing");
      }
    }
  }

  /// n_alpha centers spaced pitch/n_alpha apart starting at 0.
  static KernelBasisSpec evenly_spaced(int basis_count, double length_scale, int smoothness,
                                       int tooth_count, int coil_count) {
    if (basis_count < 1) throw ConfigError("kernel basis: basis_count must be >= 1");
    if (tooth_count < 1) throw ConfigError("kernel basis: tooth_count must be >= 1");
    KernelBasisSpec spec;
    spec.length_scale = length_scale;
    spec.smoothness = smoothness;
    spec.tooth_count = tooth_count;
    spec.coil_count = coil_count;
    const double step = tooth_pitch(tooth_count) / basis_count;
    spec.centers.reserve(static_cast<std::size_t>(basis_count));
    for (int i = 0; i < basis_count; ++i) spec.centers.push_back(step * i);
    spec.validate();
    return spec;
  }
};

/// Row of kernel values gamma(phi), one entry per center.
inline Eigen::RowVectorXd gamma_row(double phi, const KernelBasisSpec& spec) {
  Eigen::RowVectorXd row(spec.size());
  for (int i = 0; i < spec.size(); ++i) {
    row[i] = matern_kernel(
        chordal_distance(phi, spec.centers[static_cast<std::size_t>(i)], spec.tooth_count,
                         spec.length_scale),
        spec.smoothness);
  }
  return row;
}

/// Block commutation basis I_{n_c} kron gamma(phi), shape n_c x (n_c * n_alpha).
inline Eigen::MatrixXd psi_f(double phi, const KernelBasisSpec& spec) {
  const int na = spec.size();
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(spec.coil_count, spec.coil_count * na);
  const Eigen::RowVectorXd g = gamma_row(phi, spec);
  for (int c = 0; c < spec.coil_count; ++c) out.block(c, c * na, 1, na) = g;
  return out;
}

}  // namespace srmcomm
