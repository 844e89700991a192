// tokrl: command-line front end.
//
//   tokrl run CONFIG [--out DIR] [--section.key=value ...]
//   tokrl run --manifest DIR/manifest.json [--out DIR]
//   tokrl verify {consistency|discrepancy|gradients|telescoping|all}
//   tokrl sweep CONFIG --grid algo.gamma_w=0.95,0.9 [--grid ...] [--section.key=value ...]
//   tokrl plotdata RUN_DIR... [--window N] [--out FILE]
//   tokrl dp CONFIG --mode {action,bad,naive,soft} [--gamma-w G] [--beta B] [--q-out FILE]
//   tokrl dp --sweep FILE [--chain-length K]

#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "tokrl/config.hpp"
#include "tokrl/experiment.hpp"
#include "tokrl/oracle.hpp"
#include "tokrl/verify.hpp"

namespace fs = std::filesystem;
using namespace tokrl;

namespace {

ExperimentConfig load_with_overrides(const std::string& path, const std::vector<std::string>& extras) {
  auto config = path.empty() ? ExperimentConfig() : ExperimentConfig::load(path);
  for (const auto& e : extras) {
    if (!e.starts_with("--")) throw UsageError(fmt::format("unexpected argument '{}'", e));
    config.apply_override(e);
  }
  return config;
}

int cmd_run(const std::string& config_path, const std::string& manifest, const std::string& out,
            const std::vector<std::string>& extras) {
  ExperimentConfig config;
  if (!manifest.empty()) {
    if (!config_path.empty() || !extras.empty()) {
      throw UsageError("--manifest re-runs a stored config exactly; it takes no config file or overrides");
    }
    config = config_from_manifest(manifest);
  } else {
    config = load_with_overrides(config_path, extras);
  }
  const fs::path dir = out.empty() ? output_root(config) / config.label() : fs::path(out);
  const auto result = run_experiment(config, dir, &std::cerr);
  std::cout << dir.string() << "\n";
  return result.ok ? 0 : 1;
}

int cmd_dp(const std::string& config_path, const std::vector<std::string>& extras, const std::string& mode,
           double gamma_w, double beta, const std::string& q_out) {
  const auto config = load_with_overrides(config_path, extras);
  const double gamma_a = std::stod(config.get("algo.gamma_a"));
  const auto env = config.env_factory()();
  const auto model = enumerate_prefix_model(*env);
  BackupMode m;
  if (mode == "action") m = BackupMode::action_level(gamma_a);
  else if (mode == "bad") m = BackupMode::bad(gamma_a);
  else if (mode == "naive") m = BackupMode::naive(gamma_w, gamma_a);
  else if (mode == "soft") m = BackupMode::soft_bad(beta, gamma_a);
  else throw UsageError(fmt::format("unknown dp mode '{}' (action, bad, naive, soft)", mode));
  const auto dp = value_iteration(model, m);
  const auto action = value_iteration(model, BackupMode::action_level(gamma_a));
  std::cout << fmt::format("env {}\nobservations {}\nnodes {}\nmode {}\niterations {}\nresidual {:.3g}\n",
                           env->name(), model.reachable.size(), model.num_nodes(), m.label(),
                           dp.iterations, dp.residual);
  if (m.kind != BackupMode::Kind::SoftBAD) {
    std::cout << fmt::format("max |Q - Q_action| {:.6g}\n", check_consistency(dp, action));
  }
  std::cout << fmt::format("optimal discounted return {:.10g}\n",
                           optimal_discounted_return(model, gamma_a, std::stoul(config.get("env.max_episode_steps"))));
  if (!q_out.empty()) {
    std::ofstream out(q_out);
    out << "obs,prefix,q\n";
    for (std::size_t n = 0; n < model.num_nodes(); ++n) {
      const auto& node = model.nodes[n];
      out << fmt::format("{},\"{}\",{:.17g}\n", node.obs, env->vocab().render(node.prefix), dp.q_node[n]);
    }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Token-level credit assignment toolkit"};
  app.require_subcommand(1);

  std::string config_path, manifest, out;
  auto* run = app.add_subcommand("run", "train every seed of a config and write artifacts");
  run->add_option("config", config_path, "experiment config (INI)");
  run->add_option("--manifest", manifest, "re-run the config stored in a manifest");
  run->add_option("--out", out, "artifact directory (default: $TOKRL_OUT or output.dir, then the label)");
  run->allow_extras();

  std::string suite = "all";
  std::uint64_t verify_seed = 7;
  auto* ver = app.add_subcommand("verify", "run property suites");
  ver->add_option("suite", suite, "consistency, discrepancy, gradients, telescoping or all");
  ver->add_option("--seed", verify_seed, "seed for randomized probes");

  std::vector<std::string> grid_axes;
  SweepOptions sweep_opts;
  auto* sw = app.add_subcommand("sweep", "Cartesian grid of runs");
  sw->add_option("config", config_path, "base experiment config");
  sw->add_option("--grid", grid_axes, "axis as section.key=v1,v2 (repeatable)");
  sw->add_option("--max-runs", sweep_opts.max_runs, "refuse grids needing more runs (points x seeds)");
  sw->add_option("--jobs", sweep_opts.jobs, "runs executed concurrently");
  sw->add_option("--out", out, "sweep directory");
  sw->allow_extras();

  std::vector<std::string> run_dirs;
  std::size_t window = 1;
  auto* pd = app.add_subcommand("plotdata", "smoothed mean and std bands from run directories");
  pd->add_option("runs", run_dirs, "run directories")->required();
  pd->add_option("--window", window, "trailing moving-average window");
  pd->add_option("--out", out, "output CSV (default: stdout)");

  std::string dp_mode = "bad", q_out, sweep_out;
  double dp_gamma_w = 0.9, dp_beta = 0.1;
  std::size_t chain_length = 3;
  auto* dp = app.add_subcommand("dp", "exact dynamic programming over the prefix model");
  dp->add_option("config", config_path, "experiment config naming the env");
  dp->add_option("--mode", dp_mode, "action, bad, naive or soft");
  dp->add_option("--gamma-w", dp_gamma_w, "intra-action discount for --mode naive");
  dp->add_option("--beta", dp_beta, "temperature for --mode soft");
  dp->add_option("--q-out", q_out, "write node values as CSV");
  dp->add_option("--sweep", sweep_out, "write the naive discrepancy sweep on the chain family as CSV");
  dp->add_option("--chain-length", chain_length, "chain length K for --sweep");
  dp->allow_extras();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) return cmd_run(config_path, manifest, out, run->remaining());
    if (*ver) {
      const auto report = verify(suite, verify_seed);
      write_report(std::cout, report);
      return report.ok() ? 0 : 1;
    }
    if (*sw) {
      const auto config = load_with_overrides(config_path, sw->remaining());
      SweepGrid grid;
      for (const auto& a : grid_axes) {
        auto axis = parse_grid_axis(a);
        config.get(axis.first);  // validates the key
        grid.push_back(std::move(axis));
      }
      const fs::path dir = out.empty() ? output_root(config) / (config.label() + "_sweep") : fs::path(out);
      const auto result = run_sweep(config, grid, dir, sweep_opts, &std::cerr);
      std::cout << result.table.string() << "\n";
      for (const auto& r : result.runs) {
        if (!r.ok) return 1;
      }
      return 0;
    }
    if (*pd) {
      std::vector<fs::path> dirs(run_dirs.begin(), run_dirs.end());
      const auto rows = plot_data(dirs, window);
      if (out.empty()) {
        write_plot_csv(std::cout, rows);
      } else {
        std::ofstream f(out);
        write_plot_csv(f, rows);
      }
      return 0;
    }
    if (*dp) {
      if (!sweep_out.empty()) {
        std::ofstream f(sweep_out);
        write_sweep_csv(f, discrepancy_sweep(chain_length, {1.0, 0.95, 0.9, 0.8, 0.5}, {2, 4, 8}));
        return 0;
      }
      return cmd_dp(config_path, dp->remaining(), dp_mode, dp_gamma_w, dp_beta, q_out);
    }
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
