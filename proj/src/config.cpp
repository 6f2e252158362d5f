#include "vimo/config.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <limits>
#include <sstream>

namespace vimo {

namespace {

struct Entry {
  std::string key;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

std::string format_real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

Entry count(std::string key, std::size_t RunConfig::*m, std::size_t lo = 0) {
  return {key,
          [=](RunConfig& c, const std::string& v) {
            if (v.empty() || !std::all_of(v.begin(), v.end(), ::isdigit))
              throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
            const auto n = std::stoull(v);
            if (n < lo) throw ConfigError(key + ": must be >= " + std::to_string(lo));
            c.*m = n;
          },
          [=](const RunConfig& c) { return std::to_string(c.*m); }};
}

Entry seed_entry() {
  return {"seed",
          [](RunConfig& c, const std::string& v) {
            if (v.empty() || !std::all_of(v.begin(), v.end(), ::isdigit))
              throw ConfigError("seed: expected a non-negative integer, got '" + v + "'");
            c.seed = std::stoull(v);
          },
          [](const RunConfig& c) { return std::to_string(c.seed); }};
}

Entry real(std::string key, double RunConfig::*m, double lo, double hi, bool open_lo = false) {
  return {key,
          [=](RunConfig& c, const std::string& v) {
            double x = 0;
            std::size_t used = 0;
            try {
              x = std::stod(v, &used);
            } catch (const std::exception&) {
              used = 0;
            }
            if (used == 0 || used != v.size() || !std::isfinite(x))
              throw ConfigError(key + ": expected a real number, got '" + v + "'");
            if (x < lo || x > hi || (open_lo && x == lo))
              throw ConfigError(key + ": " + v + " out of range");
            c.*m = x;
          },
          [=](const RunConfig& c) { return format_real(c.*m); }};
}

Entry flag(std::string key, bool RunConfig::*m) {
  return {key,
          [=](RunConfig& c, const std::string& v) {
            if (v == "true" || v == "1") c.*m = true;
            else if (v == "false" || v == "0") c.*m = false;
            else throw ConfigError(key + ": expected true/false, got '" + v + "'");
          },
          [=](const RunConfig& c) { return std::string(c.*m ? "true" : "false"); }};
}

template <typename E>
Entry choice(std::string key, E RunConfig::*m, std::vector<std::pair<std::string, E>> names) {
  return {key,
          [=](RunConfig& c, const std::string& v) {
            for (const auto& [n, e] : names)
              if (n == v) {
                c.*m = e;
                return;
              }
            std::string allowed;
            for (const auto& [n, e] : names) allowed += (allowed.empty() ? "" : ", ") + n;
            throw ConfigError(key + ": '" + v + "' is not one of " + allowed);
          },
          [=](const RunConfig& c) {
            for (const auto& [n, e] : names)
              if (e == c.*m) return n;
            return std::string("?");
          }};
}

const std::vector<std::pair<std::string, TemporalKind>> kTemporalNames{
    {"lstm", TemporalKind::lstm},
    {"mean_pool", TemporalKind::mean_pool},
    {"max_pool", TemporalKind::max_pool},
    {"sum_pool", TemporalKind::sum_pool}};

const std::vector<std::pair<std::string, IntegratorKind>> kIntegratorNames{
    {"mean_pool", IntegratorKind::mean_pool},
    {"max_pool", IntegratorKind::max_pool},
    {"forward", IntegratorKind::forward},
    {"transformer", IntegratorKind::transformer}};

const std::vector<Entry>& entries() {
  constexpr double inf = std::numeric_limits<double>::infinity();
  static const std::vector<Entry> table = [&] {
    using C = RunConfig;
    std::vector<Entry> t;
    t.push_back(seed_entry());
    t.push_back({"data_dir", [](C& c, const std::string& v) { c.data_dir = v; },
                 [](const C& c) { return c.data_dir; }});
    t.push_back(count("frames", &C::frames, 1));
    t.push_back(count("feature_dim", &C::feature_dim, 1));
    t.push_back(count("num_classes", &C::num_classes, 2));
    t.push_back(count("units", &C::units, 1));
    t.push_back(count("salient_per_unit", &C::salient_per_unit, 1));
    t.push_back(real("noise_std", &C::noise_std, 0, inf));
    t.push_back(real("distractor_fraction", &C::distractor_fraction, 0, 1));
    t.push_back(real("salient_gain", &C::salient_gain, 0, inf));
    t.push_back(real("context_gain", &C::context_gain, 0, inf));
    t.push_back(count("boundary_jitter", &C::boundary_jitter));
    t.push_back(count("n_train", &C::n_train, 1));
    t.push_back(count("n_test", &C::n_test, 1));
    t.push_back(choice<SpatialKind>("spatial", &C::spatial,
                                    {{"passthrough", SpatialKind::passthrough},
                                     {"mlp", SpatialKind::mlp_embedder}}));
    t.push_back(count("spatial_hidden", &C::spatial_hidden, 1));
    t.push_back(count("spatial_out", &C::spatial_out, 1));
    t.push_back(real("spatial_cost", &C::spatial_cost, 0, inf));
    t.push_back(count("locators", &C::locators, 1));
    t.push_back(count("max_moves", &C::max_moves, 1));
    t.push_back(count("delta", &C::delta, 1));
    t.push_back(real("lambda", &C::lambda, 0, inf));
    t.push_back(choice<FramePenalty>("frame_penalty", &C::frame_penalty,
                                     {{"cumulative", FramePenalty::cumulative},
                                      {"per_step", FramePenalty::per_step}}));
    t.push_back(flag("fuse_initial_frame", &C::fuse_initial_frame));
    t.push_back(flag("region_fence", &C::region_fence));
    t.push_back(choice<TemporalKind>("temporal", &C::temporal, kTemporalNames));
    t.push_back(count("temporal_hidden", &C::temporal_hidden, 1));
    t.push_back(count("policy_hidden", &C::policy_hidden, 1));
    t.push_back(count("policy_layers", &C::policy_layers, 1));
    t.push_back(choice<IntegratorKind>("integrator", &C::integrator, kIntegratorNames));
    t.push_back(count("forward_hidden", &C::forward_hidden, 1));
    t.push_back(count("model_dim", &C::model_dim, 1));
    t.push_back(count("encoder_layers", &C::encoder_layers, 1));
    t.push_back(count("heads", &C::heads, 1));
    t.push_back(count("ff_dim", &C::ff_dim));
    t.push_back(flag("position_embeddings", &C::position_embeddings));
    t.push_back(real("gamma", &C::gamma, 0, 1));
    t.push_back(real("tau", &C::tau, 0, 1));
    t.push_back(real("target_entropy", &C::target_entropy, 0, std::log(4.0)));
    t.push_back(real("initial_alpha", &C::initial_alpha, 0, inf, true));
    t.push_back(count("replay_capacity", &C::replay_capacity, 1));
    t.push_back(count("sac_batch", &C::sac_batch, 1));
    t.push_back(count("critic_hidden", &C::critic_hidden, 1));
    t.push_back(count("critic_layers", &C::critic_layers, 1));
    t.push_back(count("updates_per_batch", &C::updates_per_batch, 1));
    t.push_back(real("policy_lr", &C::policy_lr, 0, inf, true));
    t.push_back(real("critic_lr", &C::critic_lr, 0, inf, true));
    t.push_back(real("alpha_lr", &C::alpha_lr, 0, inf, true));
    t.push_back(count("batch_size", &C::batch_size, 1));
    t.push_back(real("warmup_fraction", &C::warmup_fraction, 0, 1, true));
    t.push_back(count("warmup_epochs", &C::warmup_epochs));
    t.push_back(real("warmup_lr", &C::warmup_lr, 0, inf, true));
    t.push_back(count("policy_epochs", &C::policy_epochs));
    t.push_back(count("finetune_cycles", &C::finetune_cycles));
    t.push_back(count("finetune_period", &C::finetune_period, 1));
    t.push_back(real("finetune_lr", &C::finetune_lr, 0, inf, true));
    t.push_back(choice<FinetuneFirst>("finetune_first", &C::finetune_first,
                                      {{"backbone", FinetuneFirst::backbone},
                                       {"policy", FinetuneFirst::policy}}));
    t.push_back(real("frame_basis", &C::frame_basis, 0, inf, true));
    return t;
  }();
  return table;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value) {
  for (const auto& e : entries())
    if (e.key == key) {
      e.set(cfg, value);
      return;
    }
  throw ConfigError("unknown config key '" + key + "'");
}

RunConfig parse_config(const std::string& text, RunConfig base) {
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(lineno) + ": expected 'key = value'");
    set_config_value(base, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return base;
}

RunConfig load_config_file(const std::string& path, RunConfig base) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), std::move(base));
}

void apply_env_overrides(RunConfig& cfg) {
  for (const auto& e : entries()) {
    std::string name = "VIMO_" + e.key;
    std::transform(name.begin(), name.end(), name.begin(), ::toupper);
    if (const char* v = std::getenv(name.c_str())) e.set(cfg, v);
  }
}

std::string config_to_text(const RunConfig& cfg) {
  std::string out;
  for (const auto& e : entries()) out += e.key + " = " + e.get(cfg) + "\n";
  return out;
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& e : entries()) keys.push_back(e.key);
  return keys;
}

void validate(const RunConfig& cfg) {
  if (cfg.data_dir.empty()) {
    if (cfg.units * 2 > cfg.frames) throw ConfigError("units: too many units for frames");
    if (cfg.feature_dim < cfg.num_classes) throw ConfigError("feature_dim must be >= num_classes");
    if (cfg.locators > cfg.frames) throw ConfigError("locators must not exceed frames");
  }
  if (cfg.integrator == IntegratorKind::transformer && cfg.model_dim % cfg.heads != 0)
    throw ConfigError("heads must divide model_dim");
  if (cfg.policy_layers < 1 || cfg.critic_layers < 1) throw ConfigError("layers must be >= 1");
}

std::string to_string(TemporalKind k) {
  for (const auto& [n, e] : kTemporalNames)
    if (e == k) return n;
  return "?";
}

std::string to_string(IntegratorKind k) {
  for (const auto& [n, e] : kIntegratorNames)
    if (e == k) return n;
  return "?";
}

}  // namespace vimo
