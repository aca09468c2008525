// Command-line front end: invariant-set computation, target tightening, single
// closed-loop runs and the tightening-level sweep, all driven by one JSON config.
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "zmpc/config.hpp"
#include "zmpc/detail/codec.hpp"

namespace {

constexpr int kExitError = 1;
constexpr int kExitConfig = 2;
constexpr int kExitEmptyInvariantSet = 3;
constexpr int kExitEmptyModifiedSet = 4;
constexpr int kExitAborted = 5;

struct CommonArgs {
  std::string config_path;
  std::string out_dir;
  std::optional<std::int64_t> seed;
  std::optional<double> gamma;
  std::optional<std::string> variant;
};

void add_common(CLI::App* cmd, CommonArgs& a) {
  cmd->add_option("--config", a.config_path,
                  "JSON experiment config; omit to use the built-in benchmark");
  cmd->add_option("--out", a.out_dir, "Override run.output_dir");
  cmd->add_option("--seed", a.seed, "Replace run.seeds with this single seed");
  cmd->add_option("--gamma", a.gamma, "Override controller.gamma");
  cmd->add_option("--variant", a.variant,
                  "Override controller.variant (nominal | proposed | "
                  "original-zone-modified-terminal | no-terminal)");
}

zmpc::ExperimentConfig resolve(const CommonArgs& a) {
  zmpc::ExperimentConfig c =
      a.config_path.empty() ? zmpc::default_config() : zmpc::load_config(a.config_path);
  if (!a.out_dir.empty()) c.output_dir = a.out_dir;
  if (a.seed) c.seeds = {std::uint64_t(*a.seed)};
  if (a.gamma) c.gamma = *a.gamma;
  if (a.variant) c.variant = zmpc::variant_from_string(*a.variant);
  return c;
}

// Every artifact-producing command writes into a directory named by the content
// hash of the resolved config, so reruns of the same setup land in one place.
std::string make_run_dir(const zmpc::ExperimentConfig& c) {
  const std::string dir =
      c.output_dir + "/run-" + zmpc::detail::hex64(zmpc::config_hash(c));
  std::filesystem::create_directories(dir);
  std::ofstream(dir + "/config.json") << zmpc::emit_config(c);
  return dir;
}

void save_pipeline_grids(const std::string& dir, const zmpc::Pipeline& p) {
  std::filesystem::create_directories(dir + "/grids");
  zmpc::save_grid_set(dir + "/grids/target.json", p.cis_actual);
  if (p.cis_modified)
    zmpc::save_grid_set(dir + "/grids/modified-target.json", *p.cis_modified);
}

nlohmann::ordered_json vec_json(const zmpc::Vector& v) {
  return nlohmann::ordered_json(std::vector<double>(v.begin(), v.end()));
}

void print_grid_summary(const std::string& label, const zmpc::GriddedInvariantSet& s,
                        const zmpc::BoxSet& inner) {
  const zmpc::BoxSet bb = s.bounding_box();
  std::cout << label << ": " << s.member_count() << " / " << s.cell_count()
            << " cells, margin " << s.margin() << "\n  bounding box lb=["
            << bb.lb.transpose() << "] ub=[" << bb.ub.transpose() << "]\n  inner box lb=["
            << inner.lb.transpose() << "] ub=[" << inner.ub.transpose() << "]\n";
}

int cmd_cis(const CommonArgs& args) {
  const zmpc::ExperimentConfig cfg = resolve(args);
  const zmpc::Pipeline p = zmpc::build_pipeline(cfg);
  const std::string dir = make_run_dir(cfg);
  save_pipeline_grids(dir, p);
  print_grid_summary("target set", p.cis_actual, p.terminal_actual);
  if (p.cis_modified) print_grid_summary("modified target set", *p.cis_modified,
                                         *p.terminal_modified);
  std::cout << "artifacts: " << dir << "\n";
  return 0;
}

int cmd_shrink(const CommonArgs& args) {
  zmpc::ExperimentConfig cfg = resolve(args);
  const zmpc::Pipeline p = zmpc::build_pipeline(cfg);
  zmpc::XdMaxResult xd;
  zmpc::Vector s;
  zmpc::BoxSet modified;
  if (p.xd) {
    xd = *p.xd;
    s = p.shrinkage;
    modified = *p.modified_target;
  } else {
    // The nominal variant skips tightening; compute it here for reporting.
    xd = zmpc::estimate_xd_max(p.model, p.cis_actual.bounding_box(), cfg.input_bounds,
                               cfg.disturbance_bounds, p.tracked_mask);
    const zmpc::ShrinkageSpec spec = zmpc::make_shrinkage(cfg.gamma, p.tracked_mask, xd.xd_max,
                                                          cfg.shrink_lower, cfg.shrink_upper);
    s = spec.s;
    modified = zmpc::shrink_target(cfg.target, spec);
  }
  nlohmann::ordered_json j;
  j["gamma"] = cfg.gamma;
  j["xd_max"] = vec_json(xd.xd_max);
  j["xd_max_norm"] = xd.xd_max.norm();
  j["argmax_x"] = vec_json(xd.argmax_x);
  j["argmax_u"] = vec_json(xd.argmax_u);
  j["argmax_w"] = vec_json(xd.argmax_w);
  j["s"] = vec_json(s);
  j["modified_target"] = {{"lb", vec_json(modified.lb)}, {"ub", vec_json(modified.ub)}};
  const std::string dir = make_run_dir(cfg);
  std::ofstream(dir + "/shrink.json") << j.dump(2) << "\n";
  std::cout << j.dump(2) << "\n";
  return 0;
}

int cmd_run(const CommonArgs& args) {
  const zmpc::ExperimentConfig cfg = resolve(args);
  const zmpc::Pipeline p = zmpc::build_pipeline(cfg);
  const std::string dir = make_run_dir(cfg);
  save_pipeline_grids(dir, p);
  const zmpc::ZoneCostSpec actual_zone{cfg.c1, cfg.c2, cfg.target};
  bool any_aborted = false;
  for (size_t k = 0; k < cfg.seeds.size(); ++k) {
    const std::uint64_t seed = cfg.seeds[k];
    zmpc::DisturbanceGenerator gen(cfg.disturbance_bounds, seed, cfg.disturbance_mode);
    const zmpc::ClosedLoopRecord rec = zmpc::simulate(
        p.model, p.controller, cfg.x0, gen, zmpc::SimulateOptions{cfg.steps, cfg.abort_budget});
    const zmpc::RunMetrics m =
        zmpc::compute_metrics(rec, actual_zone, cfg.state_bounds, p.controller.econ_coeff);
    const std::string suffix =
        cfg.seeds.size() == 1 ? std::string() : "-seed" + std::to_string(seed);
    zmpc::write_trajectory_csv(dir + "/trajectory" + suffix + ".csv", rec);
    zmpc::write_metrics_json(dir + "/metrics" + suffix + ".json", m, rec);
    std::cout << "seed " << seed << ": steps " << rec.steps.size()
              << (rec.aborted ? " (aborted at step " + std::to_string(rec.abort_step) + ")" : "")
              << ", zone cost " << m.accumulated_zone_cost_actual << ", econ cost "
              << m.accumulated_economic_cost << ", entry "
              << (m.first_entry_step ? std::to_string(*m.first_entry_step) : std::string("-"))
              << ", violations after entry " << m.violations_after_entry << "\n";
    any_aborted = any_aborted || rec.aborted;
  }
  std::cout << "artifacts: " << dir << "\n";
  if (any_aborted) {
    std::cerr << "error: closed-loop run aborted (consecutive infeasible solves)\n";
    return kExitAborted;
  }
  return 0;
}

int cmd_sweep(const CommonArgs& args, const std::vector<double>& gammas) {
  const zmpc::ExperimentConfig cfg = resolve(args);
  if (cfg.variant == zmpc::Variant::nominal)
    throw zmpc::ConfigError("sweep: the nominal variant does not depend on gamma");
  const zmpc::Pipeline p = zmpc::build_pipeline(cfg);
  zmpc::GammaSweepContext ctx;
  ctx.actual_target = cfg.target;
  ctx.state_bounds = cfg.state_bounds;
  ctx.input_bounds = cfg.input_bounds;
  ctx.disturbance_bounds = cfg.disturbance_bounds;
  ctx.xd_max = p.xd->xd_max;
  ctx.tracked_mask = p.tracked_mask;
  ctx.shrink_lower = cfg.shrink_lower;
  ctx.shrink_upper = cfg.shrink_upper;
  ctx.cis_cells = cfg.cis_cells;
  ctx.cis_inputs = cfg.cis_inputs;
  ctx.verify_samples = cfg.verify_samples;
  ctx.controller = p.controller;
  ctx.x0 = cfg.x0;
  ctx.steps = cfg.steps;
  ctx.abort_budget = cfg.abort_budget;
  ctx.seeds = cfg.seeds;
  const std::vector<zmpc::GammaSweepRow> rows = zmpc::gamma_sweep(p.model, ctx, gammas);
  const std::string dir = make_run_dir(cfg);
  zmpc::write_sweep_csv(dir + "/sweep.csv", rows);
  for (const zmpc::GammaSweepRow& row : rows) {
    std::cout << "gamma " << row.gamma << ": ";
    if (!row.setup_ok) {
      std::cout << row.note << "\n";
      continue;
    }
    std::cout << "runs " << row.runs << " (aborted " << row.aborted << "), violations "
              << row.mean_violations_after_entry << ", avg magnitude "
              << (row.mean_avg_violation_magnitude
                      ? std::to_string(*row.mean_avg_violation_magnitude)
                      : std::string("-"))
              << ", zone cost " << row.mean_zone_cost_actual << ", econ cost "
              << row.mean_economic_cost << "\n";
  }
  std::cout << "artifacts: " << dir << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Robust zone-tracking MPC toolkit"};
  app.require_subcommand(1);

  CommonArgs args;
  CLI::App* print_cmd =
      app.add_subcommand("print-default-config", "Write the benchmark config to stdout");
  CLI::App* cis_cmd =
      app.add_subcommand("cis", "Compute, cache and summarize the invariant sets");
  CLI::App* shrink_cmd =
      app.add_subcommand("shrink", "Report the disturbance displacement bound and tightened target");
  CLI::App* run_cmd = app.add_subcommand("run", "Closed-loop run for each configured seed");
  CLI::App* sweep_cmd = app.add_subcommand("sweep", "Closed-loop statistics per tightening level");
  for (CLI::App* cmd : {cis_cmd, shrink_cmd, run_cmd, sweep_cmd}) add_common(cmd, args);
  std::vector<double> gammas{0.3, 0.5, 0.6, 0.7, 1.0, 3.0};
  sweep_cmd->add_option("--gammas", gammas, "Tightening levels to sweep");

  CLI11_PARSE(app, argc, argv);

  try {
    if (print_cmd->parsed()) {
      std::cout << zmpc::emit_config(zmpc::default_config());
      return 0;
    }
    if (cis_cmd->parsed()) return cmd_cis(args);
    if (shrink_cmd->parsed()) return cmd_shrink(args);
    if (run_cmd->parsed()) return cmd_run(args);
    if (sweep_cmd->parsed()) return cmd_sweep(args, gammas);
  } catch (const zmpc::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const zmpc::EmptyInvariantSet& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitEmptyInvariantSet;
  } catch (const zmpc::EmptyModifiedSet& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitEmptyModifiedSet;
  } catch (const zmpc::AbortedRun& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitAborted;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitError;
  }
  return kExitError;
}
