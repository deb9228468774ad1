#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "srmcomm/closed_loop_sim.hpp"
#include "srmcomm/commutation.hpp"
#include "srmcomm/error.hpp"
#include "srmcomm/io.hpp"
#include "srmcomm/kernel_basis.hpp"
#include "srmcomm/qp_solver.hpp"
#include "srmcomm/random.hpp"
#include "srmcomm/ripple_objective.hpp"
#include "srmcomm/srm_model.hpp"

namespace srmcomm {

// ---------------------------------------------------------------------------
// Configuration

struct KernelConfig {
  int basis_count = 50;
  double length_scale = 0.3;
  int smoothness = 3;
  int error_grid_points = 100;
};

struct SimulationConfig {
  double sample_rate_hz = 5000.0;
  double bandwidth_hz = 20.0;
  double reference_velocity_teeth_per_s = 0.3;
  double teeth_span = 5.0;
  double hold_duration_s = 0.5;
};

struct MonteCarloConfig {
  int srm_count = 20;
  int full_scale_srm_count = 100;
  std::vector<double> lambdas{1.0};
  std::uint64_t master_seed = 20240101;
  int threads = 0;  // 0: hardware concurrency
};

struct StudyConfig {
  std::string model_preset = "sim-rbf-90";
  std::optional<std::filesystem::path> model_file;
  KernelConfig kernel;
  double design_variance_scale = 1.0;
  QpSettings qp;
  double tsf_overlap_fraction = 0.15;
  SimulationConfig simulation;
  MonteCarloConfig monte_carlo;
  std::optional<std::filesystem::path> output_directory;

  void validate() const {
    if (model_file && !std::filesystem::exists(*model_file)) {
      throw ConfigError("model file " + model_file->string() + " does not exist");
    }
    if (kernel.basis_count < 1) throw ConfigError("kernel.basis_count must be >= 1");
    if (!(kernel.length_scale > 0.0)) throw ConfigError("kernel.length_scale must be > 0");
    if (kernel.smoothness < 0 || kernel.smoothness > kMaxSmoothness) {
      throw ConfigError("kernel.smoothness out of range");
    }
    if (kernel.error_grid_points < kernel.basis_count) {
      throw ConfigError("kernel.error_grid_points must be >= kernel.basis_count");
    }
    if (!(design_variance_scale >= 0.0)) throw ConfigError("design.variance_scale must be >= 0");
    if (!(qp.tolerance > 0.0) || !(qp.feasibility_tolerance > 0.0)) {
      throw ConfigError("qp tolerances must be > 0");
    }
    if (qp.max_iterations < 1) throw ConfigError("qp.max_iterations must be >= 1");
    if (!(tsf_overlap_fraction > 0.0 && tsf_overlap_fraction <= 0.5)) {
      throw ConfigError("tsf.overlap_fraction must lie in (0, 0.5]");
    }
    if (!(simulation.bandwidth_hz > 0.0)) throw ConfigError("simulation.bandwidth_hz must be > 0");
    if (!(simulation.sample_rate_hz > 2.0 * simulation.bandwidth_hz)) {
      throw ConfigError("simulation.sample_rate_hz must exceed twice the bandwidth");
    }
    if (!(simulation.reference_velocity_teeth_per_s > 0.0)) {
      throw ConfigError("simulation.reference_velocity_teeth_per_s must be > 0");
    }
    if (!(simulation.teeth_span >= 2.0)) throw ConfigError("simulation.teeth_span must be >= 2");
    if (!(simulation.hold_duration_s >= 0.0)) {
      throw ConfigError("simulation.hold_duration_s must be >= 0");
    }
    if (monte_carlo.srm_count < 1 || monte_carlo.full_scale_srm_count < 1) {
      throw ConfigError("monte_carlo SRM counts must be >= 1");
    }
    if (monte_carlo.lambdas.empty()) throw ConfigError("monte_carlo.lambdas must not be empty");
    for (double l : monte_carlo.lambdas) {
      if (!(l >= 0.0) || !std::isfinite(l)) throw ConfigError("monte_carlo.lambdas must be >= 0");
    }
    if (monte_carlo.threads < 0) throw ConfigError("monte_carlo.threads must be >= 0");
  }
};

/// Parses a config document. Relative file paths resolve against base_dir.
inline StudyConfig parse_config(const Json& j, const std::filesystem::path& base_dir = {}) {
  StudyConfig cfg;
  JsonReader root(j, "config");
  if (root.has("model")) {
    JsonReader m = root.child("model");
    if (m.has("preset") == m.has("file")) {
      throw ConfigError("config.model: give exactly one of \"preset\" or \"file\"");
    }
    if (m.has("preset")) cfg.model_preset = m.require<std::string>("preset");
    if (m.has("file")) {
      std::filesystem::path p = m.require<std::string>("file");
      cfg.model_file = p.is_relative() ? base_dir / p : p;
    }
    m.finish();
  }
  if (root.has("kernel")) {
    JsonReader k = root.child("kernel");
    cfg.kernel.basis_count = k.get("basis_count", cfg.kernel.basis_count);
    cfg.kernel.length_scale = k.get("length_scale", cfg.kernel.length_scale);
    cfg.kernel.smoothness = k.get("smoothness", cfg.kernel.smoothness);
    cfg.kernel.error_grid_points = k.get("error_grid_points", cfg.kernel.error_grid_points);
    k.finish();
  }
  if (root.has("design")) {
    JsonReader d = root.child("design");
    cfg.design_variance_scale = d.get("variance_scale", cfg.design_variance_scale);
    d.finish();
  }
  if (root.has("qp")) {
    JsonReader q = root.child("qp");
    cfg.qp.tolerance = q.get("tolerance", cfg.qp.tolerance);
    cfg.qp.feasibility_tolerance = q.get("feasibility_tolerance", cfg.qp.feasibility_tolerance);
    cfg.qp.max_iterations = q.get("max_iterations", cfg.qp.max_iterations);
    cfg.qp.regularization = q.get("regularization", cfg.qp.regularization);
    cfg.qp.polish = q.get("polish", cfg.qp.polish);
    q.finish();
  }
  if (root.has("tsf")) {
    JsonReader t = root.child("tsf");
    cfg.tsf_overlap_fraction = t.get("overlap_fraction", cfg.tsf_overlap_fraction);
    t.finish();
  }
  if (root.has("simulation")) {
    JsonReader s = root.child("simulation");
    auto& sim = cfg.simulation;
    sim.sample_rate_hz = s.get("sample_rate_hz", sim.sample_rate_hz);
    sim.bandwidth_hz = s.get("bandwidth_hz", sim.bandwidth_hz);
    sim.reference_velocity_teeth_per_s =
        s.get("reference_velocity_teeth_per_s", sim.reference_velocity_teeth_per_s);
    sim.teeth_span = s.get("teeth_span", sim.teeth_span);
    sim.hold_duration_s = s.get("hold_duration_s", sim.hold_duration_s);
    s.finish();
  }
  if (root.has("monte_carlo")) {
    JsonReader m = root.child("monte_carlo");
    auto& mc = cfg.monte_carlo;
    mc.srm_count = m.get("srm_count", mc.srm_count);
    mc.full_scale_srm_count = m.get("full_scale_srm_count", mc.full_scale_srm_count);
    mc.lambdas = m.get("lambdas", mc.lambdas);
    mc.master_seed = m.get("master_seed", mc.master_seed);
    mc.threads = m.get("threads", mc.threads);
    m.finish();
  }
  if (root.has("output_directory")) {
    std::filesystem::path p = root.require<std::string>("output_directory");
    cfg.output_directory = p.is_relative() ? base_dir / p : p;
  }
  root.finish();
  cfg.validate();
  return cfg;
}

inline StudyConfig load_config(const std::filesystem::path& path) {
  return parse_config(read_json_file(path), path.parent_path());
}

inline ProbabilisticSrmModel load_model(const StudyConfig& cfg) {
  if (cfg.model_file) return model_from_json(read_json_file(*cfg.model_file));
  return make_nominal_model(cfg.model_preset);
}

inline KernelBasisSpec make_kernel_basis(const StudyConfig& cfg, const ProbabilisticSrmModel& model) {
  return KernelBasisSpec::evenly_spaced(cfg.kernel.basis_count, cfg.kernel.length_scale,
                                        cfg.kernel.smoothness, model.basis().tooth_count(),
                                        model.basis().coil_count());
}

inline ReferenceSpec make_reference(const StudyConfig& cfg, int tooth_count) {
  ReferenceSpec ref;
  ref.sample_rate_hz = cfg.simulation.sample_rate_hz;
  ref.velocity_teeth_per_s = cfg.simulation.reference_velocity_teeth_per_s;
  ref.teeth_span = cfg.simulation.teeth_span;
  ref.hold_duration_s = cfg.simulation.hold_duration_s;
  ref.tooth_count = tooth_count;
  ref.validate();
  return ref;
}

// ---------------------------------------------------------------------------
// Design

struct DesignOutcome {
  double variance_scale = 0.0;
  QpProblem qp;
  QpSolution solution;
  CommutationParams params;
  FeasibilityReport feasibility;
  MismatchProfile nominal_profile;
  double expected_cost = 0.0;  // including the constant term
};

/// Assembles and solves the design QP at the given variance scale. A solve that
/// does not reach the KKT tolerances is a SolverError.
inline DesignOutcome run_design(const ProbabilisticSrmModel& model, const KernelBasisSpec& fbasis,
                                int grid_points, double variance_scale,
                                const QpSettings& settings = {}) {
  DesignOutcome out;
  out.variance_scale = variance_scale;
  const ErrorGrid grid = ErrorGrid::uniform(grid_points, fbasis.tooth_count);
  out.qp = assemble_qp(model, grid, fbasis, variance_scale);
  out.solution = solve_qp(out.qp, settings);
  if (out.solution.status != QpStatus::Optimal) {
    throw SolverError(std::string("design QP finished with status ") +
                      to_string(out.solution.status));
  }
  out.params = CommutationParams::from_stacked(out.solution.alpha_star, fbasis);
  out.feasibility = check_feasibility(out.params, grid_points);
  out.nominal_profile = torque_mismatch_profile(out.params, model.theta_mean(), model.basis(), grid);
  out.expected_cost = out.solution.objective_value + out.qp.constant;
  return out;
}

inline DesignOutcome run_design(const StudyConfig& cfg, const ProbabilisticSrmModel& model,
                                double variance_scale) {
  return run_design(model, make_kernel_basis(cfg, model), cfg.kernel.error_grid_points,
                    variance_scale, cfg.qp);
}

inline Json design_report_json(const DesignOutcome& d) {
  return Json{{"variance_scale", d.variance_scale},
              {"variable_count", d.qp.variable_count()},
              {"constraint_count", d.qp.constraint_count()},
              {"status", to_string(d.solution.status)},
              {"iterations", d.solution.iterations},
              {"polished", d.solution.polished},
              {"objective_value", d.solution.objective_value},
              {"expected_cost", d.expected_cost},
              {"kkt", to_json(d.solution.kkt)},
              {"grid_feasibility_margin", d.feasibility.grid_min},
              {"fine_grid_feasibility_margin", d.feasibility.fine_grid_min},
              {"fine_grid_warning", d.feasibility.fine_grid_warning},
              {"nominal_max_torque_deviation", d.nominal_profile.max_deviation()}};
}

// ---------------------------------------------------------------------------
// Monte Carlo

/// min, q1, median, q3, max with linear-interpolation quantiles.
struct BoxStats {
  double min = 0.0;
  double q1 = 0.0;
  double median = 0.0;
  double q3 = 0.0;
  double max = 0.0;
  int count = 0;
};

inline double quantile_sorted(const std::vector<double>& sorted, double p) {
  if (sorted.empty()) throw std::invalid_argument("quantile of empty sample");
  const double h = (static_cast<double>(sorted.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

inline BoxStats box_stats(std::vector<double> values) {
  BoxStats s;
  s.count = static_cast<int>(values.size());
  if (values.empty()) {
    s.min = s.q1 = s.median = s.q3 = s.max = std::numeric_limits<double>::quiet_NaN();
    return s;
  }
  std::sort(values.begin(), values.end());
  s.min = values.front();
  s.q1 = quantile_sorted(values, 0.25);
  s.median = quantile_sorted(values, 0.5);
  s.q3 = quantile_sorted(values, 0.75);
  s.max = values.back();
  return s;
}

enum class Method { Robust, Conventional };

inline const char* to_string(Method m) { return m == Method::Robust ? "robust" : "conventional"; }

struct RunRecord {
  double lambda = 0.0;
  int srm_index = 0;
  std::uint64_t seed = 0;
  Method method = Method::Robust;
  double e_rms_plus = 0.0;
  double e_rms_minus = 0.0;
  double e_rms = 0.0;
  bool aborted = false;
};

struct LambdaSummary {
  double lambda = 0.0;
  BoxStats robust;
  BoxStats conventional;
  int robust_aborted = 0;
  int conventional_aborted = 0;
  double improvement = 0.0;  // 1 - median_robust / median_conventional
  double design_expected_cost = 0.0;
  double design_objective = 0.0;
};

struct StudyResult {
  std::vector<RunRecord> records;  // ordered by lambda, SRM index, method
  std::vector<LambdaSummary> summaries;
  std::vector<DesignOutcome> designs;
  int srm_count = 0;
  std::uint64_t master_seed = 0;
};

inline LambdaSummary summarize(double lambda, const std::vector<RunRecord>& records) {
  LambdaSummary s;
  s.lambda = lambda;
  std::vector<double> robust, conventional;
  for (const RunRecord& r : records) {
    if (r.lambda != lambda) continue;
    const bool is_robust = r.method == Method::Robust;
    if (r.aborted) {
      ++(is_robust ? s.robust_aborted : s.conventional_aborted);
      continue;
    }
    (is_robust ? robust : conventional).push_back(r.e_rms);
  }
  s.robust = box_stats(robust);
  s.conventional = box_stats(conventional);
  s.improvement = 1.0 - s.robust.median / s.conventional.median;
  return s;
}

/// Runs f(i) for i in [0, n) on a pool of threads. The first exception is rethrown.
template <class F>
void parallel_for(int n, int threads, F&& f) {
  if (threads <= 0) threads = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  threads = std::min(threads, std::max(n, 1));
  std::atomic<int> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1)) {
      try {
        f(i);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next.store(n);
      }
    }
  };
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(threads));
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);
}

/// For each lambda: designs the robust function with lambda * Sigma, then
/// simulates SRMs theta_i = theta_hat + sqrt(lambda) L z_i under the robust and
/// the conventional commutation. z_i depends only on (master seed, i), so the
/// same base samples are reused across lambda and across SRM counts.
inline StudyResult run_study(const StudyConfig& cfg, const ProbabilisticSrmModel& model,
                             const std::vector<double>& lambdas, int srm_count) {
  if (srm_count < 1) throw ConfigError("SRM count must be >= 1");
  StudyResult out;
  out.srm_count = srm_count;
  out.master_seed = cfg.monte_carlo.master_seed;
  const GBasis& gbasis = model.basis();
  const ReferenceSpec ref = make_reference(cfg, gbasis.tooth_count());
  const PlantDiscrete plant = discretize_plant(ref.step());
  const PidDiscrete pid = design_pid(cfg.simulation.bandwidth_hz, ref.step());
  const ConventionalCommutation conventional =
      ConventionalCommutation::for_model(model, cfg.tsf_overlap_fraction);

  for (const double lambda : lambdas) {
    if (!(lambda >= 0.0)) throw ConfigError("lambda must be >= 0");
    out.designs.push_back(run_design(cfg, model, lambda));
  }

  const int nl = static_cast<int>(lambdas.size());
  out.records.resize(static_cast<std::size_t>(nl) * srm_count * 2);
  std::vector<RobustCommutation> robust;
  robust.reserve(out.designs.size());
  for (const auto& d : out.designs) robust.emplace_back(d.params);

  parallel_for(nl * srm_count, cfg.monte_carlo.threads, [&](int task) {
    const int li = task / srm_count;
    const int i = task % srm_count;
    const double lambda = lambdas[static_cast<std::size_t>(li)];
    const std::uint64_t seed = derive_seed(cfg.monte_carlo.master_seed, static_cast<std::uint64_t>(i));
    const SrmRealization srm = sample_srm(model, lambda, seed);
    const std::size_t base = (static_cast<std::size_t>(task)) * 2;
    auto fill = [&](RunRecord& rec, Method m, const SimResult& r) {
      rec.lambda = lambda;
      rec.srm_index = i;
      rec.seed = seed;
      rec.method = m;
      rec.e_rms_plus = r.e_rms_plus;
      rec.e_rms_minus = r.e_rms_minus;
      rec.e_rms = r.e_rms;
      rec.aborted = r.aborted;
    };
    fill(out.records[base], Method::Robust,
         simulate_tracking(srm, gbasis, robust[static_cast<std::size_t>(li)], pid, plant, ref));
    fill(out.records[base + 1], Method::Conventional,
         simulate_tracking(srm, gbasis, conventional, pid, plant, ref));
  });

  for (int li = 0; li < nl; ++li) {
    LambdaSummary s = summarize(lambdas[static_cast<std::size_t>(li)], out.records);
    s.design_expected_cost = out.designs[static_cast<std::size_t>(li)].expected_cost;
    s.design_objective = out.designs[static_cast<std::size_t>(li)].solution.objective_value;
    out.summaries.push_back(s);
  }
  return out;
}

inline Json to_json(const BoxStats& s) {
  return Json{{"count", s.count}, {"min", s.min},       {"q1", s.q1},
              {"median", s.median}, {"q3", s.q3}, {"max", s.max}};
}

inline Json summary_json(const StudyResult& r) {
  Json per_lambda = Json::array();
  for (const LambdaSummary& s : r.summaries) {
    per_lambda.push_back(Json{{"lambda", s.lambda},
                              {"design_expected_cost", s.design_expected_cost},
                              {"robust_e_rms_rad", to_json(s.robust)},
                              {"conventional_e_rms_rad", to_json(s.conventional)},
                              {"robust_aborted", s.robust_aborted},
                              {"conventional_aborted", s.conventional_aborted},
                              {"improvement", s.improvement}});
  }
  return Json{{"srm_count", r.srm_count},
              {"master_seed", r.master_seed},
              {"lambdas", per_lambda}};
}

inline void write_runs_csv(std::ostream& os, const StudyResult& r) {
  CsvWriter w(os, {"lambda", "srm_index", "seed", "method", "e_rms_plus_rad", "e_rms_minus_rad",
                   "e_rms_rad", "aborted"});
  for (const RunRecord& rec : r.records) {
    w.row() << rec.lambda << rec.srm_index << rec.seed << to_string(rec.method) << rec.e_rms_plus
            << rec.e_rms_minus << rec.e_rms << rec.aborted;
  }
}

// ---------------------------------------------------------------------------
// Torque ripple profiles

struct RippleRow {
  int srm_index = -1;  // -1: nominal parameters
  Method method = Method::Robust;
  int sign = 1;
  double angle = 0.0;
  double b = 0.0;
};

struct RippleResult {
  std::vector<RippleRow> rows;
  // max_i |b - sign| per SRM (nominal first) and method
  std::vector<double> robust_max_deviation;
  std::vector<double> conventional_max_deviation;
};

/// b(phi) = g(phi, theta) u(phi, +/-1) over the design grid for the nominal SRM
/// and srm_count sampled SRMs at the given variance scale.
inline RippleResult run_ripple(const StudyConfig& cfg, const ProbabilisticSrmModel& model,
                               const CommutationParams& params, double lambda, int srm_count) {
  const GBasis& gbasis = model.basis();
  const ErrorGrid grid = ErrorGrid::uniform(cfg.kernel.error_grid_points, gbasis.tooth_count());
  const RobustCommutation robust(params);
  const ConventionalCommutation conventional =
      ConventionalCommutation::for_model(model, cfg.tsf_overlap_fraction);
  RippleResult out;
  Eigen::VectorXd u(gbasis.coil_count());
  for (int s = -1; s < srm_count; ++s) {
    const Eigen::VectorXd theta =
        s < 0 ? model.theta_mean()
              : sample_srm(model, lambda, derive_seed(cfg.monte_carlo.master_seed,
                                                      static_cast<std::uint64_t>(s)))
                    .theta_true;
    for (const Method m : {Method::Robust, Method::Conventional}) {
      double worst = 0.0;
      for (const int sign : {1, -1}) {
        for (const double phi : grid.angles) {
          if (m == Method::Robust) {
            robust(phi, sign, u);
          } else {
            conventional(phi, sign, u);
          }
          const double b = gbasis.gains(phi, theta).dot(u);
          worst = std::max(worst, std::abs(b - sign));
          out.rows.push_back({s, m, sign, phi, b});
        }
      }
      (m == Method::Robust ? out.robust_max_deviation : out.conventional_max_deviation)
          .push_back(worst);
    }
  }
  return out;
}

inline void write_ripple_csv(std::ostream& os, const RippleResult& r) {
  CsvWriter w(os, {"srm_index", "method", "sign", "angle_rad", "b"});
  for (const RippleRow& row : r.rows) {
    w.row() << row.srm_index << to_string(row.method) << row.sign << row.angle << row.b;
  }
}

}  // namespace srmcomm
