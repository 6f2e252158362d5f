#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "vimo/config.hpp"
#include "vimo/data.hpp"
#include "vimo/experiments.hpp"
#include "vimo/pipeline.hpp"

namespace fs = std::filesystem;
using namespace vimo;

namespace {

constexpr int kConfigError = 1;
constexpr int kRuntimeError = 2;

struct ConfigFlags {
  std::string file;
  std::vector<std::string> sets;
};

void add_config_flags(CLI::App* cmd, ConfigFlags& flags) {
  cmd->add_option("-c,--config", flags.file, "key = value config file");
  cmd->add_option("-s,--set", flags.sets, "override one key (key=value), repeatable");
}

// defaults < file < VIMO_* environment < --set
RunConfig resolve_config(const ConfigFlags& flags) {
  RunConfig cfg;
  if (!flags.file.empty()) cfg = load_config_file(flags.file, cfg);
  apply_env_overrides(cfg);
  for (const auto& kv : flags.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t"), e = s.find_last_not_of(" \t");
      return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
    };
    set_config_value(cfg, trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)));
  }
  validate(cfg);
  return cfg;
}

// Refuses to replace a file with different content unless forced.
void write_output(const fs::path& path, const std::string& content, bool force) {
  if (fs::exists(path) && !force) {
    std::ifstream in(path, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    if (ss.str() == content) return;
    throw pipeline::RunExists("'" + path.string() + "' exists; pass --force to overwrite");
  }
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << content;
}

void progress(const std::string& msg) { std::fprintf(stderr, "[vimo] %s\n", msg.c_str()); }

SamplingMode parse_mode(const std::string& s) {
  if (s == "adaptive" || s == "argmax") return SamplingMode::argmax;
  if (s == "uniform") return SamplingMode::uniform;
  if (s == "random") return SamplingMode::random;
  throw ConfigError("unknown eval mode '" + s + "'");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"vimo: adaptive multi-locator video recognition"};
  app.require_subcommand(1);

  ConfigFlags train_cfg, eval_cfg, ablate_cfg, gen_cfg;
  std::string run_dir, out_dir, out_path, mode = "adaptive", trajectories, axis_name;
  double fraction = 0.25;
  bool force = false;
  std::size_t jobs = 1;
  std::vector<std::string> plot_dirs;

  auto* train = app.add_subcommand("train", "run all three training stages");
  add_config_flags(train, train_cfg);
  train->add_option("-r,--run-dir", run_dir, "run directory")->required();
  train->add_flag("-f,--force", force, "discard an existing run directory");

  auto* eval = app.add_subcommand("eval", "evaluate a trained run on the test split");
  eval->add_option("-r,--run-dir", run_dir, "run directory")->required();
  eval->add_option("-m,--mode", mode, "adaptive, uniform or random")
      ->check(CLI::IsMember({"adaptive", "argmax", "uniform", "random"}));
  eval->add_option("--fraction", fraction, "frame fraction for uniform/random")
      ->check(CLI::Range(0.0, 1.0));
  eval->add_option("-t,--trajectories", trajectories, "write locator trajectories as CSV");
  eval->add_option("-o,--out", out_path, "write the report here instead of stdout");
  eval->add_flag("-f,--force", force, "overwrite existing outputs");

  auto* ablate = app.add_subcommand("ablate", "sweep one ablation axis");
  add_config_flags(ablate, ablate_cfg);
  ablate->add_option("-a,--axis", axis_name,
                     "locators, temporal, integrator, strategy, lambda, action_space, initial_frame")
      ->required();
  ablate->add_option("-d,--out-dir", out_dir, "parent of the cell run directories")->required();
  ablate->add_option("-j,--jobs", jobs, "cells trained concurrently")->check(CLI::PositiveNumber);
  ablate->add_flag("-f,--force", force, "overwrite an existing table");

  auto* plot = app.add_subcommand("plot", "accuracy vs GFLOPs scatter over runs");
  plot->add_option("runs", plot_dirs, "completed run directories")->required();
  plot->add_option("-o,--out", out_path, "output stem (writes .svg and .csv)")->required();
  plot->add_flag("-f,--force", force, "overwrite existing outputs");

  auto* gen = app.add_subcommand("gen-data", "write the synthetic dataset as VIMF files");
  add_config_flags(gen, gen_cfg);
  gen->add_option("-d,--out-dir", out_dir, "destination (train/ and test/)")->required();
  gen->add_flag("-f,--force", force, "write into a non-empty directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kConfigError;
  }

  try {
    if (*train) {
      const RunConfig cfg = resolve_config(train_cfg);
      auto result = pipeline::train_run(cfg, run_dir, force, progress);
      std::printf("%s", metrics::serialize(result.report).c_str());
      std::printf("# checksum %016llx\n", static_cast<unsigned long long>(result.checksum));
    } else if (*eval) {
      auto [cfg, model] = pipeline::load_run(run_dir);
      const auto split = pipeline::load_data(cfg);
      std::string traj;
      pipeline::EvalOptions eo;
      eo.mode = parse_mode(mode);
      eo.fraction = fraction;
      eo.seed = data::derive_seed(cfg.seed, 0xe7a1);
      if (!trajectories.empty()) {
        traj = trajectory_csv_header();
        eo.trajectory_csv = &traj;
      }
      const auto report = pipeline::evaluate(model, cfg, split.test, eo);
      const std::string text = metrics::serialize(report);
      if (!trajectories.empty()) write_output(trajectories, traj, force);
      if (out_path.empty())
        std::printf("%s", text.c_str());
      else
        write_output(out_path, text, force);
    } else if (*ablate) {
      const auto axis = experiments::parse_axis(axis_name);
      const RunConfig base = resolve_config(ablate_cfg);
      const auto rows = experiments::run_ablation(base, axis, out_dir, jobs, progress);
      const std::string csv = experiments::ablation_csv(axis, rows);
      write_output(fs::path(out_dir) / (axis_name + ".csv"), csv, force);
      std::printf("%s", csv.c_str());
    } else if (*plot) {
      std::vector<fs::path> dirs(plot_dirs.begin(), plot_dirs.end());
      const auto p = experiments::plot_runs(dirs);
      write_output(out_path + ".svg", p.svg, force);
      write_output(out_path + ".csv", p.csv, force);
    } else if (*gen) {
      const RunConfig cfg = resolve_config(gen_cfg);
      if (fs::exists(out_dir) && !fs::is_empty(out_dir) && !force)
        throw pipeline::RunExists("'" + out_dir + "' is not empty; pass --force");
      const auto split = data::generate_synthetic(pipeline::synthetic_spec(cfg));
      data::write_split(out_dir, split);
      std::printf("wrote %zu train and %zu test videos to %s\n", split.train.size(),
                  split.test.size(), out_dir.c_str());
    }
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kConfigError;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kRuntimeError;
  }
  return 0;
}
