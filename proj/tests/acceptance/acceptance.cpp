// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any failure.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "../test_support.hpp"
#include "srmcomm/study.hpp"

using namespace srmcomm;
using namespace srmcomm::testing;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double rel(double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1e-300); }

double matern_reference(double r, int mu) {
  switch (mu) {
    case 0: return std::exp(-r);
    case 1: return (1.0 + std::sqrt(3.0) * r) * std::exp(-std::sqrt(3.0) * r);
    case 2: return (1.0 + std::sqrt(5.0) * r + 5.0 * r * r / 3.0) * std::exp(-std::sqrt(5.0) * r);
    case 3:
      return (1.0 + std::sqrt(7.0) * r + 14.0 * r * r / 5.0 +
              7.0 * std::sqrt(7.0) * r * r * r / 15.0) *
             std::exp(-std::sqrt(7.0) * r);
  }
  return NAN;
}

const std::filesystem::path kConfigDir = SRMCOMM_CONFIG_DIR;

struct DesignScale {
  StudyConfig cfg = load_config(kConfigDir / "default.json");
  ProbabilisticSrmModel model = load_model(cfg);
  KernelBasisSpec fbasis = make_kernel_basis(cfg, model);
  ErrorGrid grid = ErrorGrid::uniform(cfg.kernel.error_grid_points, fbasis.tooth_count);
};

const DesignScale& design_scale() {
  static const DesignScale p;
  return p;
}

Outcome kernel_closed_forms() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(101);
  std::uniform_real_distribution<double> rho(0.0, 10.0);
  double worst = 0.0;
  for (int mu = 0; mu <= 3; ++mu) {
    for (int i = 0; i < 100; ++i) {
      const double r = rho(rng);
      worst = std::max(worst, rel(matern_kernel(r, mu), matern_reference(r, mu)));
    }
  }
  const double t = seconds_since(t0);
  return {worst <= 1e-12 && t < 1.0, fmt("max rel err %.2e, %.3f s", worst, t)};
}

Outcome cost_expectation() {
  const auto t0 = Clock::now();
  const ProbabilisticSrmModel model = small_fourier_model();
  const KernelBasisSpec f = KernelBasisSpec::evenly_spaced(4, 0.3, 3, 131, 1);
  const ErrorGrid grid = ErrorGrid::uniform(10, 131);
  const QpProblem qp = assemble_qp(model, grid, f);
  std::mt19937_64 arng(202);
  double worst = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    const Eigen::VectorXd a = random_nonnegative(qp.variable_count(), arng);
    if ((qp.constraints * a).minCoeff() < 0.0) return {false, "random alpha infeasible"};
    Rng rng(3000 + static_cast<std::uint64_t>(trial));
    const McEstimate est = mc_cost_oracle(model, grid, f, a, 100000, rng);
    worst = std::max(worst, rel(eval_cost(qp, a), est.mean));
  }
  const double t = seconds_since(t0);
  return {worst <= 0.01 && t < 10.0, fmt("max rel diff %.2e, %.2f s", worst, t)};
}

Outcome trace_equivalence() {
  const DesignScale& p = design_scale();
  const auto t0 = Clock::now();
  const QpProblem qp = assemble_qp(p.model, p.grid, p.fbasis);
  std::mt19937_64 rng(303);
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::VectorXd a = random_normal(qp.variable_count(), rng);
    worst = std::max(worst, rel(eval_cost(qp, a), trace_cost(a, p.model, p.grid, p.fbasis)));
  }
  const double t = seconds_since(t0);
  return {worst <= 1e-10 && t < 5.0, fmt("max rel err %.2e, %.2f s", worst, t)};
}

Outcome gradient_check() {
  const DesignScale& p = design_scale();
  const auto t0 = Clock::now();
  const QpProblem qp = assemble_qp(p.model, p.grid, p.fbasis);
  std::mt19937_64 rng(404);
  const double h = 1e-5;
  double worst = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    const Eigen::VectorXd a = random_normal(qp.variable_count(), rng);
    const Eigen::VectorXd grad = 2.0 * qp.hessian * a + qp.linear;
    Eigen::VectorXd fd(a.size());
    for (Eigen::Index k = 0; k < a.size(); ++k) {
      Eigen::VectorXd ap = a, am = a;
      ap[k] += h;
      am[k] -= h;
      fd[k] = (eval_cost(qp, ap) - eval_cost(qp, am)) / (2.0 * h);
    }
    worst = std::max(worst, (grad - fd).norm() / grad.norm());
  }
  const double t = seconds_since(t0);
  return {worst <= 1e-6 && t < 5.0, fmt("max rel err %.2e, %.2f s", worst, t)};
}

Outcome qp_solver() {
  std::mt19937_64 rng(31415);
  double worst_obj = 0.0, worst_kkt = 0.0;
  int not_optimal = 0;
  for (int k = 0; k < 50; ++k) {
    const RandomQp q = random_qp(rng);
    const QpSolution s = solve_qp(q.H, q.b, q.B);
    if (s.status != QpStatus::Optimal) ++not_optimal;
    worst_kkt = std::max({worst_kkt, s.kkt.stationarity, s.kkt.primal_infeasibility,
                          s.kkt.dual_infeasibility, s.kkt.complementarity});
    const double fr = objective(q, solve_qp_projected_gradient(q.H, q.b, q.B));
    const double fs = objective(q, s.alpha_star);
    worst_obj = std::max(worst_obj, std::abs(fs - fr) / std::max(1.0, std::abs(fr)));
  }
  const DesignScale& p = design_scale();
  const auto t0 = Clock::now();
  const QpProblem qp = assemble_qp(p.model, p.grid, p.fbasis, p.cfg.design_variance_scale);
  const QpSolution big = solve_qp(qp, p.cfg.qp);
  const double t = seconds_since(t0);
  const bool pass = not_optimal == 0 && worst_obj <= 1e-6 && worst_kkt <= 1e-8 &&
                    qp.variable_count() == 300 && qp.constraint_count() == 600 &&
                    big.status == QpStatus::Optimal && t < 10.0;
  return {pass, fmt("random: max rel obj diff %.2e, max KKT %.2e, %d not optimal; "
                    "%lldx%lld design QP %s in %.2f s",
                    worst_obj, worst_kkt, not_optimal, static_cast<long long>(qp.variable_count()),
                    static_cast<long long>(qp.constraint_count()), to_string(big.status), t)};
}

Outcome nominal_design() {
  const DesignScale& p = design_scale();
  const DesignOutcome d = run_design(p.cfg, p.model, p.cfg.design_variance_scale);
  const double plus = (d.nominal_profile.b_plus.array() - 1.0).abs().maxCoeff();
  const double minus = (d.nominal_profile.b_minus.array() + 1.0).abs().maxCoeff();
  return {plus <= 0.1 && minus <= 0.1,
          fmt("max |b+ - 1| = %.4f, max |b- + 1| = %.4f", plus, minus)};
}

struct Sweep {
  StudyResult result;
  double seconds = 0.0;
};

Sweep run_sweep() {
  const DesignScale& p = design_scale();
  const auto t0 = Clock::now();
  Sweep s{run_study(p.cfg, p.model, {0.0, 0.1, 0.5, 1.0, 2.0}, 20), 0.0};
  s.seconds = seconds_since(t0);
  return s;
}

const Sweep& first_sweep() {
  static const Sweep s = run_sweep();
  return s;
}

const LambdaSummary& at(const StudyResult& r, double lambda) {
  for (const LambdaSummary& s : r.summaries) {
    if (s.lambda == lambda) return s;
  }
  throw std::logic_error("lambda missing from sweep");
}

Outcome monte_carlo_headline() {
  const Sweep& s = first_sweep();
  const LambdaSummary& one = at(s.result, 1.0);
  bool pass = one.improvement >= 0.15 && s.seconds < 600.0;
  std::string detail = fmt("lambda 1: robust %.3e vs conventional %.3e (%+.1f%%)",
                           one.robust.median, one.conventional.median, -100.0 * one.improvement);
  for (double l : {0.1, 0.5, 2.0}) {
    const LambdaSummary& x = at(s.result, l);
    pass = pass && x.robust.median < x.conventional.median;
    detail += fmt("; lambda %g: %+.1f%%", l, -100.0 * x.improvement);
  }
  for (const LambdaSummary& x : s.result.summaries) {
    pass = pass && x.robust_aborted == 0 && x.conventional_aborted == 0;
  }
  detail += fmt("; sweep %.0f s", s.seconds);
  return {pass, detail};
}

Outcome zero_lambda() {
  const LambdaSummary& z = at(first_sweep().result, 0.0);
  const double ratio = z.robust.median / z.conventional.median;
  return {ratio <= 3.0, fmt("robust %.3e, conventional %.3e, ratio %.3f", z.robust.median,
                            z.conventional.median, ratio)};
}

Outcome scaling_law() {
  const DesignScale& p = design_scale();
  const auto t0 = Clock::now();
  const Eigen::VectorXd ref =
      run_design(p.model, p.fbasis, p.cfg.kernel.error_grid_points, 1.0, p.cfg.qp).solution.alpha_star;
  double worst = 0.0;
  for (double c : {0.5, 2.0}) {
    const ProbabilisticSrmModel scaled(p.model.basis(), c * p.model.theta_mean(),
                                       c * c * p.model.theta_cov());
    const Eigen::VectorXd a =
        run_design(scaled, p.fbasis, p.cfg.kernel.error_grid_points, 1.0, p.cfg.qp).solution.alpha_star;
    const Eigen::VectorXd expect = ref / c;
    worst = std::max(worst, (a - expect).norm() / expect.norm());
  }
  const double t = seconds_since(t0);
  return {worst <= 1e-6 && t < 30.0, fmt("max rel err %.2e, %.2f s", worst, t)};
}

Outcome determinism() {
  const Sweep& a = first_sweep();
  const Sweep b = run_sweep();
  const std::string ja = summary_json(a.result).dump(2);
  const std::string jb = summary_json(b.result).dump(2);
  std::ostringstream ca, cb;
  write_runs_csv(ca, a.result);
  write_runs_csv(cb, b.result);
  return {ja == jb && ca.str() == cb.str(),
          fmt("summary %zu bytes, runs csv %zu bytes, %s", ja.size(), ca.str().size(),
              ja == jb ? "identical" : "differ")};
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"kernel closed forms", kernel_closed_forms},
      {"cost expectation vs Monte Carlo", cost_expectation},
      {"assembled cost vs trace expression", trace_equivalence},
      {"gradient vs finite differences", gradient_check},
      {"QP solver", qp_solver},
      {"nominal design quality", nominal_design},
      {"Monte Carlo sweep", monte_carlo_headline},
      {"zero-variance concession", zero_lambda},
      {"scaling law", scaling_law},
      {"determinism", determinism},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    if (!o.pass) ++failed;
    std::printf("%s %2zu %s: %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first,
                o.detail.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
