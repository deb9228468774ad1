#pragma once

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

#include "srmcomm/error.hpp"
#include "srmcomm/kernel_basis.hpp"
#include "srmcomm/random.hpp"

namespace srmcomm {

/// Gaussian bumps on the tooth circle. Coil c owns centers[c] and widths[c];
/// every coil has the same number of functions.
struct RbfLayout {
  std::vector<std::vector<double>> centers;  // radians
  std::vector<std::vector<double>> widths;   // radians, > 0
};

/// Tooth-frequency Fourier series per coil: [sin(k e + k p_c), cos(k e + k p_c)]
/// for k = 1..harmonic_count, where e = n_t * phi and p_c is the coil phase.
struct FourierLayout {
  int harmonic_count = 1;
  std::vector<double> phase_offsets;  // electrical radians, one per coil
};

/// Basis psi_g of the torque-current-angle model, periodic in the tooth pitch.
class GBasis {
 public:
  using Layout = std::variant<RbfLayout, FourierLayout>;

  GBasis(Layout layout, int tooth_count, int coil_count)
      : layout_(std::move(layout)), tooth_count_(tooth_count), coil_count_(coil_count) {
    validate();
  }

  [[nodiscard]] const Layout& layout() const { return layout_; }
  [[nodiscard]] int tooth_count() const { return tooth_count_; }
  [[nodiscard]] int coil_count() const { return coil_count_; }
  [[nodiscard]] bool is_rbf() const { return std::holds_alternative<RbfLayout>(layout_); }

  [[nodiscard]] int functions_per_coil() const {
    return std::visit(
        [](const auto& l) -> int {
          using T = std::decay_t<decltype(l)>;
          if constexpr (std::is_same_v<T, RbfLayout>) {
            return static_cast<int>(l.centers.front().size());
          } else {
            return 2 * l.harmonic_count;
          }
        },
        layout_);
  }

  [[nodiscard]] int parameter_count() const { return coil_count_ * functions_per_coil(); }

  /// Writes the functions_per_coil() basis values of coil c at phi into out.
  void coil_functions(int c, double phi, double* out) const {
    const double e = static_cast<double>(tooth_count_) * wrap_to_tooth(phi, tooth_count_);
    if (const auto* rbf = std::get_if<RbfLayout>(&layout_)) {
      const auto& centers = rbf->centers[static_cast<std::size_t>(c)];
      const auto& widths = rbf->widths[static_cast<std::size_t>(c)];
      const double nt = static_cast<double>(tooth_count_);
      for (std::size_t j = 0; j < centers.size(); ++j) {
        // Chord on the tooth circle; behaves like nt*|dphi| for small offsets.
        const double chord = 2.0 * std::sin(0.5 * (e - nt * centers[j]));
        const double s = nt * widths[j];
        out[j] = std::exp(-0.5 * chord * chord / (s * s));
      }
    } else {
      const auto& f = std::get<FourierLayout>(layout_);
      const double p = f.phase_offsets[static_cast<std::size_t>(c)];
      for (int k = 1; k <= f.harmonic_count; ++k) {
        const double arg = k * (e + p);
        out[2 * (k - 1)] = std::sin(arg);
        out[2 * (k - 1) + 1] = std::cos(arg);
      }
    }
  }

  /// Model gains ghat_c(phi, theta) for every coil.
  [[nodiscard]] Eigen::VectorXd gains(double phi, const Eigen::VectorXd& theta) const {
    if (theta.size() != parameter_count()) {
      throw std::invalid_argument("GBasis::gains: theta has " + std::to_string(theta.size()) +
                                  " entries, basis expects " +
                                  std::to_string(parameter_count()));
    }
    const int fpc = functions_per_coil();
    Eigen::VectorXd buffer(fpc);
    Eigen::VectorXd g(coil_count_);
    for (int c = 0; c < coil_count_; ++c) {
      coil_functions(c, phi, buffer.data());
      g[c] = buffer.dot(theta.segment(c * fpc, fpc));
    }
    return g;
  }

  void validate() const {
    if (tooth_count_ < 1) throw ConfigError("g basis: tooth_count must be >= 1");
    if (coil_count_ < 1) throw ConfigError("g basis: coil_count must be >= 1");
    if (const auto* rbf = std::get_if<RbfLayout>(&layout_)) {
      if (static_cast<int>(rbf->centers.size()) != coil_count_ ||
          static_cast<int>(rbf->widths.size()) != coil_count_) {
        throw ConfigError("g basis: RBF layout needs one center/width list per coil");
      }
      const std::size_t per_coil = rbf->centers.front().size();
      if (per_coil == 0) throw ConfigError("g basis: RBF layout has no functions");
      for (int c = 0; c < coil_count_; ++c) {
        const auto& cs = rbf->centers[static_cast<std::size_t>(c)];
        const auto& ws = rbf->widths[static_cast<std::size_t>(c)];
        if (cs.size() != per_coil || ws.size() != per_coil) {
          throw ConfigError("g basis: every coil needs the same number of RBFs");
        }
        for (double w : ws) {
          if (!(w > 0.0)) throw ConfigError("g basis: RBF widths must be > 0");
        }
      }
    } else {
      const auto& f = std::get<FourierLayout>(layout_);
      if (f.harmonic_count < 1) throw ConfigError("g basis: harmonic_count must be >= 1");
      if (static_cast<int>(f.phase_offsets.size()) != coil_count_) {
        throw ConfigError("g basis: Fourier layout needs one phase offset per coil");
      }
    }
  }

 private:
  Layout layout_;
  int tooth_count_;
  int coil_count_;
};

/// Model basis matrix psi_g(phi), shape n_c x n_theta, block layout per coil.
inline Eigen::MatrixXd psi_g(double phi, const GBasis& basis) {
  const int fpc = basis.functions_per_coil();
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(basis.coil_count(), basis.parameter_count());
  Eigen::VectorXd buffer(fpc);
  for (int c = 0; c < basis.coil_count(); ++c) {
    basis.coil_functions(c, phi, buffer.data());
    out.block(c, c * fpc, 1, fpc) = buffer.transpose();
  }
  return out;
}

/// ghat(phi, theta) as a row vector of per-coil torque gains (N*m/A^2).
inline Eigen::RowVectorXd eval_g(double phi, const Eigen::VectorXd& theta,
                                 const GBasis& basis) {
  return basis.gains(phi, theta).transpose();
}

/// Torque-current-angle model with Gaussian parameters theta ~ N(mean, cov).
class ProbabilisticSrmModel {
 public:
  ProbabilisticSrmModel(GBasis basis, Eigen::VectorXd theta_mean, Eigen::MatrixXd theta_cov)
      : basis_(std::move(basis)),
        theta_mean_(std::move(theta_mean)),
        theta_cov_(std::move(theta_cov)) {
    const int n = basis_.parameter_count();
    if (theta_mean_.size() != n) {
      throw ModelError("model: theta_mean has " + std::to_string(theta_mean_.size()) +
                       " entries, basis expects " + std::to_string(n));
    }
    if (theta_cov_.rows() != n || theta_cov_.cols() != n) {
      throw ModelError("model: theta_cov must be " + std::to_string(n) + "x" +
                       std::to_string(n));
    }
    if (!theta_mean_.allFinite() || !theta_cov_.allFinite()) {
      throw ModelError("model: non-finite parameters");
    }
    const double scale = std::max(1.0, theta_cov_.cwiseAbs().maxCoeff());
    if ((theta_cov_ - theta_cov_.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale) {
      throw ModelError("model: theta_cov is not symmetric");
    }
    factorize();
  }

  [[nodiscard]] const GBasis& basis() const { return basis_; }
  [[nodiscard]] const Eigen::VectorXd& theta_mean() const { return theta_mean_; }
  [[nodiscard]] const Eigen::MatrixXd& theta_cov() const { return theta_cov_; }
  /// Factor L with L * L^T = theta_cov.
  [[nodiscard]] const Eigen::MatrixXd& cov_factor() const { return factor_; }
  /// True when the Cholesky factorization failed and the eigenvalue route was used.
  [[nodiscard]] bool used_eigen_fallback() const { return eigen_fallback_; }

 private:
  void factorize() {
    Eigen::LLT<Eigen::MatrixXd> llt(theta_cov_);
    if (llt.info() == Eigen::Success) {
      factor_ = llt.matrixL();
      return;
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(theta_cov_);
    if (eig.info() != Eigen::Success) {
      throw ModelError("model: eigen-decomposition of theta_cov failed");
    }
    const double norm = std::max(eig.eigenvalues().cwiseAbs().maxCoeff(), 1e-300);
    if (eig.eigenvalues().minCoeff() < -1e-10 * norm) {
      throw ModelError("model: theta_cov is not positive semidefinite");
    }
    factor_ = eig.eigenvectors() *
              eig.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
    eigen_fallback_ = true;
  }

  GBasis basis_;
  Eigen::VectorXd theta_mean_;
  Eigen::MatrixXd theta_cov_;
  Eigen::MatrixXd factor_;
  bool eigen_fallback_ = false;
};

/// One simulated motor: its true parameters and where they came from.
struct SrmRealization {
  Eigen::VectorXd theta_true;
  std::uint64_t seed = 0;
  double variance_scale = 0.0;
};

/// Draws theta_i = mean + sqrt(lambda) * L * z. The standard-normal vector z
/// is always drawn so the generator advances identically for every lambda;
/// deviations from the mean therefore scale exactly with sqrt(lambda).
inline SrmRealization sample_srm(const ProbabilisticSrmModel& model, double lambda, Rng& rng,
                                 std::uint64_t seed = 0) {
  if (!(lambda >= 0.0)) throw std::domain_error("sample_srm: lambda must be >= 0");
  const Eigen::Index n = model.theta_mean().size();
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::VectorXd z(n);
  for (Eigen::Index i = 0; i < n; ++i) z[i] = normal(rng);
  SrmRealization out;
  out.seed = seed;
  out.variance_scale = lambda;
  if (lambda == 0.0) {
    out.theta_true = model.theta_mean();
  } else {
    out.theta_true = model.theta_mean() + std::sqrt(lambda) * (model.cov_factor() * z);
  }
  return out;
}

inline SrmRealization sample_srm(const ProbabilisticSrmModel& model, double lambda,
                                 std::uint64_t seed) {
  Rng rng(seed);
  return sample_srm(model, lambda, rng, seed);
}

namespace detail {

inline ProbabilisticSrmModel make_sim_rbf_90(bool structured_spread) {
  constexpr int kTeeth = 131;
  constexpr int kCoils = 3;
  constexpr int kPerCoil = 30;
  constexpr double kWidthFactor = 1.0;  // RBF width in units of center spacing
  const double pitch = tooth_pitch(kTeeth);
  const double spacing = pitch / kPerCoil;

  RbfLayout layout;
  for (int c = 0; c < kCoils; ++c) {
    std::vector<double> centers, widths;
    for (int j = 0; j < kPerCoil; ++j) {
      centers.push_back(spacing * j);
      widths.push_back(kWidthFactor * spacing);
    }
    layout.centers.push_back(std::move(centers));
    layout.widths.push_back(std::move(widths));
  }
  GBasis basis(layout, kTeeth, kCoils);

  // Fixed-seed coil amplitude spread so the three lobes are not identical.
  Rng rng(131);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::array<double, kCoils> amplitude{};
  for (double& a : amplitude) a = 1.0 + 0.03 * normal(rng);

  // Least-squares fits in the RBF basis of each coil's skewed lobe
  //   s_c(e) = A_c * sin(e_c) * (1 + 0.2 cos(e_c)),  e_c = n_t*phi + 2*pi*(c-1)/3,
  // and of the lobe's sensitivities to angular offset (ds/de) and amplitude.
  constexpr int kFitPoints = 600;
  constexpr double kRidge = 1e-8;
  Eigen::MatrixXd design = Eigen::MatrixXd::Zero(kFitPoints + kPerCoil, kPerCoil);
  Eigen::VectorXd buffer(kPerCoil);
  for (int i = 0; i < kFitPoints; ++i) {
    basis.coil_functions(0, pitch * i / kFitPoints, buffer.data());
    design.row(i) = buffer.transpose();
  }
  design.bottomRows(kPerCoil) = std::sqrt(kRidge) * Eigen::MatrixXd::Identity(kPerCoil, kPerCoil);
  const Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design);
  auto fit = [&](auto&& fn) {
    Eigen::VectorXd target = Eigen::VectorXd::Zero(kFitPoints + kPerCoil);
    for (int i = 0; i < kFitPoints; ++i) target[i] = fn(2.0 * std::numbers::pi * i / kFitPoints);
    return Eigen::VectorXd(qr.solve(target));
  };

  const int n = basis.parameter_count();
  Eigen::VectorXd theta(n);
  Eigen::MatrixXd slope = Eigen::MatrixXd::Zero(n, kCoils);  // d theta / d offset_c
  for (int c = 0; c < kCoils; ++c) {
    const double a = amplitude[static_cast<std::size_t>(c)];
    const double shift = 2.0 * std::numbers::pi * c / kCoils;
    theta.segment(c * kPerCoil, kPerCoil) = fit([&](double e) {
      return a * std::sin(e + shift) * (1.0 + 0.2 * std::cos(e + shift));
    });
    slope.col(c).segment(c * kPerCoil, kPerCoil) = fit([&](double e) {
      const double x = e + shift;
      return a * (std::cos(x) + 0.2 * std::cos(2.0 * x));
    });
  }

  // Structured manufacturing spread, in electrical radians for offsets:
  //   rotor/encoder offset common to all coils, sigma 0.05
  //   per-coil angular offset, sigma 0.02
  //   per-coil amplitude, sigma 3%
  //   residual shape: Matérn-3/2 over the RBF centers, sigma 1% of RMS(theta)
  // The smooth variant keeps only the shape term, at 5% of RMS(theta).
  constexpr double kCommonOffset = 0.05;
  constexpr double kCoilOffset = 0.02;
  constexpr double kAmplitude = 0.03;
  constexpr double kCorrelationLength = 0.5;  // chord units on the tooth circle
  const double residual = structured_spread ? 0.01 : 0.05;
  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(n, n);
  if (structured_spread) {
    const Eigen::VectorXd common = slope.rowwise().sum();
    cov += kCommonOffset * kCommonOffset * common * common.transpose();
    cov += kCoilOffset * kCoilOffset * slope * slope.transpose();
    for (int c = 0; c < kCoils; ++c) {
      Eigen::VectorXd lobe = Eigen::VectorXd::Zero(n);
      lobe.segment(c * kPerCoil, kPerCoil) = theta.segment(c * kPerCoil, kPerCoil);
      cov += kAmplitude * kAmplitude * lobe * lobe.transpose();
    }
  }
  const double rms = std::sqrt(theta.squaredNorm() / static_cast<double>(n));
  const double sigma = residual * rms;
  for (int c = 0; c < kCoils; ++c) {
    for (int j = 0; j < kPerCoil; ++j) {
      for (int k = 0; k < kPerCoil; ++k) {
        const double rho = chordal_distance(spacing * j, spacing * k, kTeeth, kCorrelationLength);
        cov(c * kPerCoil + j, c * kPerCoil + k) += sigma * sigma * matern_kernel(rho, 1);
      }
    }
  }
  cov = 0.5 * (cov + cov.transpose()).eval();
  return {basis, theta, cov};
}

inline ProbabilisticSrmModel make_sine_3coil(int harmonics) {
  constexpr int kTeeth = 131;
  constexpr int kCoils = 3;
  FourierLayout layout;
  layout.harmonic_count = harmonics;
  for (int c = 0; c < kCoils; ++c) layout.phase_offsets.push_back(2.0 * std::numbers::pi * c / kCoils);
  GBasis basis(layout, kTeeth, kCoils);
  Eigen::VectorXd theta = Eigen::VectorXd::Zero(basis.parameter_count());
  for (int c = 0; c < kCoils; ++c) theta[c * basis.functions_per_coil()] = 1.0;
  const Eigen::MatrixXd cov =
      5e-3 * Eigen::MatrixXd::Identity(basis.parameter_count(), basis.parameter_count());
  return {basis, theta, cov};
}

}  // namespace detail

/// Names accepted by make_nominal_model.
inline const std::vector<std::string>& nominal_model_presets() {
  static const std::vector<std::string> names = {"sim-rbf-90", "sim-rbf-90-smooth", "sine-3coil",
                                                 "sine-3coil-uncertain"};
  return names;
}

/// Shipped scenario models:
///   sim-rbf-90            3 coils, 131 teeth, 30 RBFs per coil; offset, amplitude and
///                         shape spread
///   sim-rbf-90-smooth     same nominal model, correlated shape spread only (5%)
///   sine-3coil            unit sinusoids 120 degrees apart, Sigma = 5e-3 I
///   sine-3coil-uncertain  same nominal shape on a 5-harmonic basis, Sigma = 5e-3 I
inline ProbabilisticSrmModel make_nominal_model(const std::string& preset) {
  if (preset == "sim-rbf-90") return detail::make_sim_rbf_90(true);
  if (preset == "sim-rbf-90-smooth") return detail::make_sim_rbf_90(false);
  if (preset == "sine-3coil") return detail::make_sine_3coil(1);
  if (preset == "sine-3coil-uncertain") return detail::make_sine_3coil(5);
  throw ConfigError("unknown model preset '" + preset + "'");
}

}  // namespace srmcomm
