#pragma once

// Run orchestration: multi-seed training with on-disk artifacts, grid
// sweeps and smoothed plot data.
//
// A run directory holds
//   config.cfg           canonical config text
//   metrics_seed<N>.csv  one row per update
//   merged.csv           env_steps,update,mean,std,seeds (across seeds)
//   manifest.json        config text, hash, version, seeds, wall time, status
//   FAILED               present only when a seed aborted

#include <filesystem>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "tokrl/config.hpp"

namespace tokrl {

std::string code_version();

// $TOKRL_OUT when set, otherwise output.dir.
std::filesystem::path output_root(const ExperimentConfig& config);

struct RunResult {
  std::filesystem::path dir;
  bool ok = true;
  std::string error;
  double wall_seconds = 0.0;
};

// Trains every seed of `config` into `dir` (created if needed).
RunResult run_experiment(const ExperimentConfig& config, const std::filesystem::path& dir,
                         std::ostream* log = nullptr);

// Rebuilds the config stored in a manifest; ModelMismatchError when the
// stored hash does not match the stored text.
ExperimentConfig config_from_manifest(const std::filesystem::path& manifest_path);

struct MergedRow {
  std::size_t env_steps = 0;
  std::size_t update = 0;
  double mean = 0.0;
  double std = 0.0;  // population std across seeds
  std::size_t seeds = 0;  // seeds with a finite value
};

std::vector<MergedRow> merge_metrics(const std::vector<std::vector<UpdateMetrics>>& per_seed);
void write_merged_csv(std::ostream& out, const std::vector<MergedRow>& rows);
std::vector<MergedRow> read_merged_csv(std::istream& in);
std::vector<UpdateMetrics> read_metrics_csv(std::istream& in);

using SweepGrid = std::vector<std::pair<std::string, std::vector<std::string>>>;

// "a.b=1,2,3" -> {"a.b", {"1","2","3"}}.
std::pair<std::string, std::vector<std::string>> parse_grid_axis(std::string_view text);

struct SweepOptions {
  std::size_t max_runs = 64;  // grid points times seeds
  std::size_t jobs = 1;
};

struct SweepResult {
  std::vector<RunResult> runs;
  std::filesystem::path table;  // sweep.csv
};

// Cartesian product over `grid`; an empty grid is a single baseline run.
// Writes sweep.csv with columns <grid keys...>,env_steps,mean_return.
SweepResult run_sweep(const ExperimentConfig& base, const SweepGrid& grid,
                      const std::filesystem::path& dir, const SweepOptions& options = {},
                      std::ostream* log = nullptr);

struct PlotRow {
  std::string label;
  std::size_t env_steps = 0;
  double mean = 0.0;
  double lo = 0.0;
  double hi = 0.0;
};

// Trailing moving average of a series; non-finite entries are skipped.
std::vector<double> moving_average(const std::vector<double>& xs, std::size_t window);

// Smoothed mean and mean +- std from each run's merged.csv.
std::vector<PlotRow> plot_data(const std::vector<std::filesystem::path>& run_dirs,
                               std::size_t window);
void write_plot_csv(std::ostream& out, const std::vector<PlotRow>& rows);

}  // namespace tokrl
