#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "vimo/config.hpp"
#include "vimo/metrics.hpp"

namespace vimo::experiments {

enum class Axis { locators, temporal, integrator, strategy, lambda, action_space, initial_frame };

Axis parse_axis(const std::string& name);
std::string to_string(Axis axis);

/// One trained configuration of a sweep.
struct Cell {
  std::string label;
  RunConfig config;
};

/// The sweep grid of an axis around `base`. The strategy axis has a single
/// training cell; its rows come from evaluating that one model several ways.
std::vector<Cell> ablation_cells(const RunConfig& base, Axis axis);

struct AblationRow {
  std::string label;
  metrics::CostReport report;
};

/// Trains every cell under `out_dir/<label>` (reusing completed runs) and
/// returns one row per table entry. `jobs` > 1 trains cells concurrently.
std::vector<AblationRow> run_ablation(const RunConfig& base, Axis axis,
                                      const std::filesystem::path& out_dir, std::size_t jobs = 1,
                                      const std::function<void(const std::string&)>& progress = {});

std::string ablation_csv(Axis axis, const std::vector<AblationRow>& rows);

/// Scatter of accuracy against modeled GFLOPs, one point per run directory
/// (sorted by name). Throws std::runtime_error if a run has no report.
struct Plot {
  std::string svg;
  std::string csv;
};
Plot plot_runs(std::vector<std::filesystem::path> run_dirs);

}  // namespace vimo::experiments
