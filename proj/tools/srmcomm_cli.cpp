#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "srmcomm/io.hpp"
#include "srmcomm/study.hpp"

namespace fs = std::filesystem;
using namespace srmcomm;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitSolver = 3;

struct Common {
  std::string config;
  std::string out;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "study configuration (JSON)")->required();
  cmd->add_option("--out", c.out, "output directory");
}

fs::path output_dir(const Common& c, const StudyConfig& cfg) {
  if (!c.out.empty()) return c.out;
  if (cfg.output_directory) return *cfg.output_directory;
  throw ConfigError("no output directory: pass --out or set output_directory");
}

std::string lambda_tag(std::size_t index) { return "lambda" + std::to_string(index); }

void write_design_outputs(const fs::path& dir, const std::string& stem, const DesignOutcome& d) {
  write_json_file(dir / (stem + ".json"), to_json(d.params));
  write_json_file(dir / (stem + "_report.json"), design_report_json(d));
  auto prof = open_output(dir / (stem + "_nominal_profile.csv"));
  write_profile_csv(prof, d.nominal_profile);
}

int cmd_design(const Common& c, bool dump_qp, int lookup_samples) {
  const StudyConfig cfg = load_config(c.config);
  const fs::path dir = output_dir(c, cfg);
  const ProbabilisticSrmModel model = load_model(cfg);
  QpSettings qs = cfg.qp;
  qs.record_log = true;
  const KernelBasisSpec fbasis = make_kernel_basis(cfg, model);
  const DesignOutcome d =
      run_design(model, fbasis, cfg.kernel.error_grid_points, cfg.design_variance_scale, qs);
  write_design_outputs(dir, "commutation", d);
  {
    auto os = open_output(dir / "qp_iterations.csv");
    write_iteration_log_csv(os, d.solution.log);
  }
  {
    auto os = open_output(dir / "lookup_table.csv");
    write_lookup_table_csv(os, d.params, lookup_samples);
  }
  if (dump_qp) write_json_file(dir / "qp.json", to_json(d.qp));
  std::cerr << "design: " << d.qp.variable_count() << " variables, " << d.qp.constraint_count()
            << " constraints, status " << to_string(d.solution.status) << ", "
            << d.solution.iterations << " iterations, expected cost " << d.expected_cost << '\n';
  if (d.feasibility.fine_grid_warning) {
    std::cerr << "warning: commutation function dips to " << d.feasibility.fine_grid_min
              << " between design grid points\n";
  }
  return 0;
}

int run_and_write_study(const StudyConfig& cfg, const fs::path& dir,
                        const std::vector<double>& lambdas, int srm_count, bool traces) {
  const ProbabilisticSrmModel model = load_model(cfg);
  const StudyResult r = run_study(cfg, model, lambdas, srm_count);
  for (std::size_t i = 0; i < r.designs.size(); ++i) {
    write_design_outputs(dir / "designs", "commutation_" + lambda_tag(i), r.designs[i]);
  }
  {
    auto os = open_output(dir / "runs.csv");
    write_runs_csv(os, r);
  }
  write_json_file(dir / "summary.json", summary_json(r));

  if (traces) {
    const ReferenceSpec ref = make_reference(cfg, model.basis().tooth_count());
    const PlantDiscrete plant = discretize_plant(ref.step());
    const PidDiscrete pid = design_pid(cfg.simulation.bandwidth_hz, ref.step());
    const ConventionalCommutation conv =
        ConventionalCommutation::for_model(model, cfg.tsf_overlap_fraction);
    SimOptions opt;
    opt.record_currents = true;
    for (std::size_t i = 0; i < lambdas.size(); ++i) {
      const SrmRealization srm = sample_srm(model, lambdas[i], derive_seed(cfg.monte_carlo.master_seed, 0));
      const RobustCommutation rob(r.designs[i].params);
      const int nc = model.basis().coil_count();
      auto a = open_output(dir / "traces" / (lambda_tag(i) + "_srm0_robust.csv"));
      write_trace_csv(a, simulate_tracking(srm, model.basis(), rob, pid, plant, ref, opt), nc);
      auto b = open_output(dir / "traces" / (lambda_tag(i) + "_srm0_conventional.csv"));
      write_trace_csv(b, simulate_tracking(srm, model.basis(), conv, pid, plant, ref, opt), nc);
    }
  }

  for (const LambdaSummary& s : r.summaries) {
    std::fprintf(stderr,
                 "lambda %-6g robust median %.4e rad, conventional median %.4e rad, "
                 "improvement %+.1f%%%s\n",
                 s.lambda, s.robust.median, s.conventional.median, 100.0 * s.improvement,
                 (s.robust_aborted + s.conventional_aborted) ? " (aborted runs excluded)" : "");
  }
  return 0;
}

int cmd_montecarlo(const Common& c, bool full_scale, bool traces) {
  const StudyConfig cfg = load_config(c.config);
  const int m = full_scale ? cfg.monte_carlo.full_scale_srm_count : cfg.monte_carlo.srm_count;
  return run_and_write_study(cfg, output_dir(c, cfg), cfg.monte_carlo.lambdas, m, traces);
}

int cmd_sweep(const Common& c, const std::vector<double>& lambdas, bool full_scale, bool traces) {
  StudyConfig cfg = load_config(c.config);
  if (!lambdas.empty()) cfg.monte_carlo.lambdas = lambdas;
  cfg.validate();
  const int m = full_scale ? cfg.monte_carlo.full_scale_srm_count : cfg.monte_carlo.srm_count;
  return run_and_write_study(cfg, output_dir(c, cfg), cfg.monte_carlo.lambdas, m, traces);
}

int cmd_ripple(const Common& c, const std::string& params_path) {
  const StudyConfig cfg = load_config(c.config);
  const fs::path dir = output_dir(c, cfg);
  const ProbabilisticSrmModel model = load_model(cfg);
  CommutationParams params;
  if (!params_path.empty()) {
    params = commutation_params_from_json(read_json_file(params_path));
  } else {
    params = run_design(cfg, model, cfg.design_variance_scale).params;
  }
  const RippleResult r =
      run_ripple(cfg, model, params, cfg.design_variance_scale, cfg.monte_carlo.srm_count);
  {
    auto os = open_output(dir / "ripple.csv");
    write_ripple_csv(os, r);
  }
  const auto median = [](std::vector<double> v) { return box_stats(std::move(v)).median; };
  std::vector<double> rob(r.robust_max_deviation.begin() + 1, r.robust_max_deviation.end());
  std::vector<double> conv(r.conventional_max_deviation.begin() + 1,
                           r.conventional_max_deviation.end());
  write_json_file(dir / "ripple_summary.json",
                  Json{{"variance_scale", cfg.design_variance_scale},
                       {"srm_count", cfg.monte_carlo.srm_count},
                       {"nominal_robust_max_deviation", r.robust_max_deviation.front()},
                       {"nominal_conventional_max_deviation", r.conventional_max_deviation.front()},
                       {"robust_max_deviation", r.robust_max_deviation},
                       {"conventional_max_deviation", r.conventional_max_deviation},
                       {"median_robust_max_deviation", median(rob)},
                       {"median_conventional_max_deviation", median(conv)}});
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Robust commutation design and Monte Carlo evaluation for switched reluctance motors"};
  app.require_subcommand(1);

  Common design_opts, mc_opts, sweep_opts, ripple_opts;
  bool dump_qp = false;
  int lookup_samples = 1000;
  bool full_scale = false, sweep_full_scale = false;
  bool traces = false, sweep_traces = false;
  std::vector<double> lambdas;
  std::string params_path;

  auto* design = app.add_subcommand("design", "solve the design QP and write the commutation function");
  add_common(design, design_opts);
  design->add_flag("--dump-qp", dump_qp, "also write the assembled QP as JSON");
  design->add_option("--lookup-samples", lookup_samples, "lookup table rows per tooth pitch")
      ->check(CLI::PositiveNumber);

  auto* mc = app.add_subcommand("montecarlo", "closed-loop Monte Carlo study");
  add_common(mc, mc_opts);
  mc->add_flag("--full-scale", full_scale, "use full_scale_srm_count SRMs");
  mc->add_flag("--traces", traces, "write time traces of SRM 0");

  auto* sweep = app.add_subcommand("sweep", "Monte Carlo study over a list of variance scales");
  add_common(sweep, sweep_opts);
  sweep->add_option("--lambdas", lambdas, "comma-separated variance scales")->delimiter(',');
  sweep->add_flag("--full-scale", sweep_full_scale, "use full_scale_srm_count SRMs");
  sweep->add_flag("--traces", sweep_traces, "write time traces of SRM 0");

  auto* ripple = app.add_subcommand("ripple", "torque ripple profiles over one tooth pitch");
  add_common(ripple, ripple_opts);
  ripple->add_option("--params", params_path, "commutation JSON from a previous design run");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*design) return cmd_design(design_opts, dump_qp, lookup_samples);
    if (*mc) return cmd_montecarlo(mc_opts, full_scale, traces);
    if (*sweep) return cmd_sweep(sweep_opts, lambdas, sweep_full_scale, sweep_traces);
    if (*ripple) return cmd_ripple(ripple_opts, params_path);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const SolverError& e) {
    std::cerr << "solver failure: " << e.what() << '\n';
    return kExitSolver;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
