#include "tokrl/experiment.hpp"

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <future>
#include <limits>
#include <sstream>

#include <fmt/format.h>
#include <json.hpp>

#ifndef TOKRL_VERSION
#define TOKRL_VERSION "unknown"
#endif

namespace tokrl {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream in(line);
  std::string cell;
  while (std::getline(in, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double to_double(const std::string& s) {
  if (s == "nan" || s == "-nan") return std::numeric_limits<double>::quiet_NaN();
  return std::stod(s);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError(fmt::format("cannot write '{}'", path.string()));
  out << text;
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError(fmt::format("cannot read '{}'", path.string()));
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

std::string hash_hex(std::uint64_t h) { return fmt::format("{:016x}", h); }

std::string sanitize(std::string s) {
  for (auto& c : s) {
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '.' && c != '-' && c != '_' && c != '=') c = '_';
  }
  return s;
}

}  // namespace

std::string code_version() { return TOKRL_VERSION; }

fs::path output_root(const ExperimentConfig& config) {
  if (const char* env = std::getenv("TOKRL_OUT"); env != nullptr && *env != '\0') return env;
  return config.get("output.dir");
}

std::vector<MergedRow> merge_metrics(const std::vector<std::vector<UpdateMetrics>>& per_seed) {
  std::size_t rows = 0;
  for (const auto& s : per_seed) rows = std::max(rows, s.size());
  std::vector<MergedRow> out;
  for (std::size_t i = 0; i < rows; ++i) {
    MergedRow row;
    std::vector<double> xs;
    for (const auto& s : per_seed) {
      if (i >= s.size()) continue;
      row.env_steps = s[i].env_steps;
      row.update = s[i].update;
      if (std::isfinite(s[i].mean_return)) xs.push_back(s[i].mean_return);
    }
    row.seeds = xs.size();
    if (xs.empty()) {
      row.mean = row.std = std::numeric_limits<double>::quiet_NaN();
    } else {
      double sum = 0.0;
      for (double x : xs) sum += x;
      row.mean = sum / static_cast<double>(xs.size());
      double var = 0.0;
      for (double x : xs) var += (x - row.mean) * (x - row.mean);
      row.std = std::sqrt(var / static_cast<double>(xs.size()));
    }
    out.push_back(row);
  }
  return out;
}

void write_merged_csv(std::ostream& out, const std::vector<MergedRow>& rows) {
  out << "env_steps,update,mean,std,seeds\n";
  for (const auto& r : rows) {
    out << fmt::format("{},{},{:.10g},{:.10g},{}\n", r.env_steps, r.update, r.mean, r.std, r.seeds);
  }
}

std::vector<MergedRow> read_merged_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != "env_steps,update,mean,std,seeds") {
    throw ConfigError("merged CSV has an unexpected header");
  }
  std::vector<MergedRow> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto c = split_csv_line(line);
    if (c.size() != 5) throw ConfigError(fmt::format("malformed merged CSV row '{}'", line));
    out.push_back({std::stoul(c[0]), std::stoul(c[1]), to_double(c[2]), to_double(c[3]), std::stoul(c[4])});
  }
  return out;
}

std::vector<UpdateMetrics> read_metrics_csv(std::istream& in) {
  std::string line;
  std::getline(in, line);
  std::vector<UpdateMetrics> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto c = split_csv_line(line);
    if (c.size() != 10) throw ConfigError(fmt::format("malformed metrics CSV row '{}'", line));
    UpdateMetrics m;
    m.env_steps = std::stoul(c[0]);
    m.update = std::stoul(c[1]);
    m.mean_return = to_double(c[2]);
    m.std_return = to_double(c[3]);
    m.policy_loss = to_double(c[4]);
    m.value_loss = to_double(c[5]);
    m.entropy = to_double(c[6]);
    m.approx_kl = to_double(c[7]);
    m.clip_frac = to_double(c[8]);
    m.seed = std::stoull(c[9]);
    out.push_back(m);
  }
  return out;
}

RunResult run_experiment(const ExperimentConfig& config, const fs::path& dir, std::ostream* log) {
  const auto start = std::chrono::steady_clock::now();
  fs::create_directories(dir);
  fs::remove(dir / "FAILED");
  const auto text = config.serialize();
  write_text(dir / "config.cfg", text);

  RunResult result;
  result.dir = dir;
  const auto seeds = config.seeds();
  std::vector<std::vector<UpdateMetrics>> per_seed;

  auto write_manifest = [&](const std::string& status) {
    result.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    json m;
    m["label"] = config.label();
    m["config"] = text;
    m["config_hash"] = hash_hex(config.hash());
    m["version"] = code_version();
    m["seeds"] = seeds;
    m["wall_seconds"] = result.wall_seconds;
    m["status"] = status;
    if (!result.error.empty()) m["error"] = result.error;
    write_text(dir / "manifest.json", m.dump(2) + "\n");
  };

  try {
    const auto factory = config.env_factory();
    for (const auto seed : seeds) {
      auto tc = config.train_config(seed);
      if (tc.checkpoint_every > 0) {
        tc.checkpoint_dir = (dir / fmt::format("checkpoints_seed{}", seed)).string();
      }
      std::ofstream csv(dir / fmt::format("metrics_seed{}.csv", seed), std::ios::binary);
      write_metrics_header(csv);
      csv.flush();
      per_seed.emplace_back();
      TrainHooks hooks;
      hooks.on_update = [&](const UpdateMetrics& m, const Actor&, const Critic&) {
        write_metrics_row(csv, m);
        csv.flush();
        per_seed.back().push_back(m);
      };
      if (log != nullptr) *log << fmt::format("[{}] seed {} ...\n", config.label(), seed) << std::flush;
      train(tc, factory, hooks);
    }
  } catch (const std::exception& e) {
    result.ok = false;
    result.error = e.what();
  }

  std::ofstream merged(dir / "merged.csv", std::ios::binary);
  write_merged_csv(merged, merge_metrics(per_seed));
  merged.close();
  if (!result.ok) write_text(dir / "FAILED", result.error + "\n");
  write_manifest(result.ok ? "ok" : "failed");
  if (log != nullptr) {
    *log << fmt::format("[{}] {} in {:.1f}s -> {}\n", config.label(), result.ok ? "done" : "FAILED",
                        result.wall_seconds, dir.string());
    if (!result.ok) *log << "  error: " << result.error << "\n";
  }
  return result;
}

ExperimentConfig config_from_manifest(const fs::path& manifest_path) {
  json m;
  try {
    m = json::parse(read_text(manifest_path));
  } catch (const json::exception& e) {
    throw ConfigError(fmt::format("cannot parse manifest '{}': {}", manifest_path.string(), e.what()));
  }
  if (!m.contains("config") || !m.contains("config_hash")) {
    throw ConfigError(fmt::format("manifest '{}' lacks config or config_hash", manifest_path.string()));
  }
  auto config = ExperimentConfig::parse(m["config"].get<std::string>());
  const auto stored = m["config_hash"].get<std::string>();
  if (hash_hex(config.hash()) != stored) {
    throw ModelMismatchError(fmt::format("manifest config hash {} does not match its config text ({})",
                                         stored, hash_hex(config.hash())));
  }
  return config;
}

std::pair<std::string, std::vector<std::string>> parse_grid_axis(std::string_view text) {
  while (text.starts_with('-')) text.remove_prefix(1);
  const auto eq = text.find('=');
  if (eq == std::string_view::npos) {
    throw UsageError(fmt::format("grid axis '{}' is not of the form section.key=v1,v2", text));
  }
  std::string key(text.substr(0, eq));
  auto values = split_list(text.substr(eq + 1));
  if (values.empty()) throw UsageError(fmt::format("grid axis '{}' has no values", key));
  return {key, values};
}

SweepResult run_sweep(const ExperimentConfig& base, const SweepGrid& grid, const fs::path& dir,
                      const SweepOptions& options, std::ostream* log) {
  std::vector<ExperimentConfig> points{base};
  std::vector<std::vector<std::string>> point_values{{}};
  for (const auto& [key, values] : grid) {
    std::vector<ExperimentConfig> next;
    std::vector<std::vector<std::string>> next_values;
    for (std::size_t i = 0; i < points.size(); ++i) {
      for (const auto& v : values) {
        auto c = points[i];
        c.set(key, v);
        next.push_back(std::move(c));
        auto pv = point_values[i];
        pv.push_back(v);
        next_values.push_back(std::move(pv));
      }
    }
    points = std::move(next);
    point_values = std::move(next_values);
  }
  const auto total = points.size() * base.seeds().size();
  if (total > options.max_runs) {
    throw UsageError(fmt::format("sweep needs {} runs ({} grid points x {} seeds), over the budget of {}",
                                 total, points.size(), base.seeds().size(), options.max_runs));
  }

  std::vector<fs::path> dirs;
  for (std::size_t i = 0; i < points.size(); ++i) {
    std::string name;
    for (std::size_t k = 0; k < grid.size(); ++k) {
      if (!name.empty()) name += "__";
      name += grid[k].first + "=" + point_values[i][k];
    }
    if (name.empty()) name = "baseline";
    points[i].set("output.name", base.label() + "__" + name);
    dirs.push_back(dir / sanitize(name));
  }

  SweepResult result;
  result.runs.resize(points.size());
  const auto jobs = std::max<std::size_t>(1, options.jobs);
  for (std::size_t first = 0; first < points.size(); first += jobs) {
    std::vector<std::future<RunResult>> batch;
    for (std::size_t i = first; i < std::min(points.size(), first + jobs); ++i) {
      batch.push_back(std::async(jobs == 1 ? std::launch::deferred : std::launch::async,
                                 [&, i] { return run_experiment(points[i], dirs[i], jobs == 1 ? log : nullptr); }));
    }
    for (std::size_t k = 0; k < batch.size(); ++k) result.runs[first + k] = batch[k].get();
  }

  fs::create_directories(dir);
  result.table = dir / "sweep.csv";
  std::ofstream out(result.table, std::ios::binary);
  for (const auto& [key, values] : grid) out << key << ",";
  out << "env_steps,mean_return\n";
  for (std::size_t i = 0; i < points.size(); ++i) {
    std::ifstream in(dirs[i] / "merged.csv");
    for (const auto& row : read_merged_csv(in)) {
      for (const auto& v : point_values[i]) out << v << ",";
      out << fmt::format("{},{:.10g}\n", row.env_steps, row.mean);
    }
  }
  return result;
}

std::vector<double> moving_average(const std::vector<double>& xs, std::size_t window) {
  if (window == 0) throw UsageError("smoothing window must be at least 1");
  if (window > xs.size()) {
    throw UsageError(fmt::format("smoothing window {} exceeds series length {}", window, xs.size()));
  }
  std::vector<double> out(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const auto lo = i + 1 >= window ? i + 1 - window : 0;
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t k = lo; k <= i; ++k) {
      if (std::isfinite(xs[k])) {
        sum += xs[k];
        ++n;
      }
    }
    out[i] = n == 0 ? std::numeric_limits<double>::quiet_NaN() : sum / static_cast<double>(n);
  }
  return out;
}

std::vector<PlotRow> plot_data(const std::vector<fs::path>& run_dirs, std::size_t window) {
  std::vector<PlotRow> out;
  for (const auto& dir : run_dirs) {
    std::ifstream in(dir / "merged.csv");
    if (!in) throw ConfigError(fmt::format("'{}' has no merged.csv", dir.string()));
    const auto rows = read_merged_csv(in);
    std::string label = dir.filename().string();
    if (label.empty()) label = dir.parent_path().filename().string();
    if (fs::exists(dir / "manifest.json")) {
      const auto m = json::parse(read_text(dir / "manifest.json"));
      if (m.contains("label")) label = m["label"].get<std::string>();
    }
    std::vector<double> mean, std;
    for (const auto& r : rows) {
      mean.push_back(r.mean);
      std.push_back(r.std);
    }
    const auto sm = moving_average(mean, window);
    const auto ss = moving_average(std, window);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      out.push_back({label, rows[i].env_steps, sm[i], sm[i] - ss[i], sm[i] + ss[i]});
    }
  }
  return out;
}

void write_plot_csv(std::ostream& out, const std::vector<PlotRow>& rows) {
  out << "label,env_steps,mean,lo,hi\n";
  for (const auto& r : rows) {
    out << fmt::format("{},{},{:.10g},{:.10g},{:.10g}\n", r.label, r.env_steps, r.mean, r.lo, r.hi);
  }
}

}  // namespace tokrl
