#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "vimo/integrator.hpp"
#include "vimo/locator.hpp"
#include "vimo/spatial.hpp"

namespace vimo {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class FramePenalty { cumulative, per_step };
enum class FinetuneFirst { backbone, policy };

/// Every tunable of a run. Defaults are the reference default settings
/// (3 locators, LSTM, transformer, λ = 0.1, strides {0, 3, 6, 9}).
struct RunConfig {
  std::uint64_t seed = 1;

  // Data: a VIMF directory (train/ and test/) or the synthetic generator.
  std::string data_dir;
  std::size_t frames = 120;
  std::size_t feature_dim = 64;
  std::size_t num_classes = 10;
  std::size_t units = 3;
  std::size_t salient_per_unit = 2;
  double noise_std = 0.1;
  double distractor_fraction = 0.25;
  double salient_gain = 1.0;
  double context_gain = 1.0;
  std::size_t boundary_jitter = 0;
  std::size_t n_train = 2000;
  std::size_t n_test = 500;

  SpatialKind spatial = SpatialKind::passthrough;
  std::size_t spatial_hidden = 512;
  std::size_t spatial_out = 1024;
  double spatial_cost = kPassthroughFrameCost;

  std::size_t locators = 3;
  std::size_t max_moves = 4;
  std::size_t delta = 3;
  double lambda = 0.1;
  FramePenalty frame_penalty = FramePenalty::cumulative;
  bool fuse_initial_frame = true;
  bool region_fence = false;

  TemporalKind temporal = TemporalKind::lstm;
  std::size_t temporal_hidden = 256;
  std::size_t policy_hidden = 512;
  std::size_t policy_layers = 4;

  IntegratorKind integrator = IntegratorKind::transformer;
  std::size_t forward_hidden = 512;
  std::size_t model_dim = 256;
  std::size_t encoder_layers = 8;
  std::size_t heads = 4;
  std::size_t ff_dim = 0;
  bool position_embeddings = false;

  double gamma = 0.99;
  double tau = 0.99;
  double target_entropy = 0.6 * std::log(4.0);
  double initial_alpha = 1.0;
  std::size_t replay_capacity = 50000;
  std::size_t sac_batch = 64;
  std::size_t critic_hidden = 512;
  std::size_t critic_layers = 5;
  std::size_t updates_per_batch = 1;
  double policy_lr = 1e-5;
  double critic_lr = 5e-5;
  double alpha_lr = 5e-4;

  std::size_t batch_size = 8;
  double warmup_fraction = 0.25;
  std::size_t warmup_epochs = 15;
  double warmup_lr = 1e-5;
  std::size_t policy_epochs = 30;
  std::size_t finetune_cycles = 2;
  std::size_t finetune_period = 5;
  double finetune_lr = 1e-5;
  FinetuneFirst finetune_first = FinetuneFirst::backbone;

  double frame_basis = 120.0;
};

/// Applies one key/value; throws ConfigError on unknown keys, type
/// mismatches, and out-of-range values.
void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value);

/// Parses flat "key = value" text ('#' starts a comment) on top of `base`.
RunConfig parse_config(const std::string& text, RunConfig base = {});
RunConfig load_config_file(const std::string& path, RunConfig base = {});

/// Applies VIMO_<KEY> environment variables (key upper-cased).
void apply_env_overrides(RunConfig& cfg);

/// Canonical text: every key in declaration order, round-trips through parse_config.
std::string config_to_text(const RunConfig& cfg);
std::vector<std::string> config_keys();

/// Cross-field checks (e.g. heads divide model_dim). Throws ConfigError.
void validate(const RunConfig& cfg);

std::string to_string(TemporalKind k);
std::string to_string(IntegratorKind k);

}  // namespace vimo
