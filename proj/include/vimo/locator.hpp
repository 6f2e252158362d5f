#pragma once

#include <array>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "vimo/data.hpp"
#include "vimo/nn.hpp"
#include "vimo/spatial.hpp"

namespace vimo {

/// Strides {0, δ, 2δ, 3δ}; action 0 stops the locator early.
struct ActionSpace {
  static constexpr std::size_t kNumActions = 4;
  std::size_t delta = 3;

  std::size_t stride(std::size_t action) const;
};

enum class TemporalKind { lstm, mean_pool, max_pool, sum_pool };

/// Per-locator temporal network: an LSTM or a parameter-free pooling of the
/// observed frame embeddings.
struct TemporalNet {
  TemporalKind kind = TemporalKind::lstm;
  std::size_t input_dim = 0;
  std::optional<nn::LstmCell> cell;

  TemporalNet() = default;
  TemporalNet(TemporalKind kind, std::size_t input_dim, std::size_t hidden_dim,
              std::mt19937_64& rng);

  std::size_t context_dim() const;
  ParamList params() const;
  /// FLOPs of folding one observation into the context.
  std::uint64_t flops_per_observation() const;
};

struct LocatorState {
  std::size_t index = 0;
  std::size_t position = 0;
  std::size_t steps = 0;       // t
  std::size_t n_selected = 0;  // frames observed
  std::size_t max_moves = 4;   // m
  Tensor hidden;               // h_{i,t}; frozen as the unit embedding once stopped
  Tensor cell;                 // LSTM only
  bool stopped = false;
  std::size_t fused = 0;  // frames folded into the current context
  std::vector<std::size_t> observed;
};

/// Locator i starts at floor(i·T/N). Throws std::invalid_argument unless
/// 1 <= N <= T.
std::vector<LocatorState> init_locators(std::size_t num_locators, std::size_t num_frames,
                                        std::size_t max_moves, std::size_t context_dim);

/// Encodes the frame at the locator's position and folds it into the
/// context. Force-stops the locator once t reaches m.
void observe(LocatorState& state, const data::VideoSample& video,
             const SpatialEncoder& encoder, const TemporalNet& temporal,
             FrameCounter& counter);

/// h_{i,t} ⊕ n_{i,t}/m, detached.
Tensor policy_observation(const LocatorState& state);

/// π(a_{i,t}) over the four actions. Reads only `state`.
Tensor decide(const LocatorState& state, const nn::Mlp& policy);

/// Outcome of applying an action to the movement state machine.
enum class MoveResult { stopped, moved };

/// k = 0 stops; k > 0 advances by k·δ and stops if the new position is at
/// or beyond `limit` (T, or the next locator's start when fenced).
MoveResult apply_action(LocatorState& state, std::size_t action, const ActionSpace& space,
                        std::size_t limit);

struct LocatorNets {
  TemporalNet temporal;
  nn::Mlp policy;

  ParamList params() const;
  ParamList backbone_params() const { return prefixed("temporal", temporal.params()); }
  ParamList policy_params() const { return prefixed("policy", policy.params()); }
};

enum class SamplingMode { sample, argmax, uniform, random };

struct EpisodeConfig {
  std::size_t num_locators = 3;
  std::size_t max_moves = 4;
  ActionSpace actions;
  bool fuse_initial_frame = true;
  /// Adaptive locators may not move past the next locator's start.
  bool region_fence = false;
};

/// One decision made by one locator at one lockstep step.
struct Decision {
  std::size_t locator = 0;
  std::size_t step = 0;  // t at decision time
  std::size_t action = 0;
  std::vector<double> obs_before;  // s_{i,t}
  std::vector<double> obs_after;   // s_{i,t+1}
  bool done = false;
};

struct TrajectoryRow {
  std::size_t locator = 0;
  std::size_t t = 0;
  std::size_t position = 0;
  long action = -1;  // -1 for observations without a decision
  bool stopped = false;
};

struct EpisodeOptions {
  SamplingMode mode = SamplingMode::argmax;
  /// Fraction of each region observed by uniform/random modes.
  double fraction = 0.25;
  std::mt19937_64* rng = nullptr;  // required for sample/random
  /// Invoked once after the initial observations (step 0) and after every
  /// lockstep step with the current states.
  std::function<void(std::size_t step, std::span<const LocatorState>)> after_step;
};

struct EpisodeResult {
  std::vector<Tensor> unit_embeddings;
  std::vector<LocatorState> final_states;
  /// Decisions grouped by lockstep step (index 0 is step t = 1).
  std::vector<std::vector<Decision>> steps;
  std::vector<TrajectoryRow> trajectory;
  std::size_t frames_observed = 0;
  std::size_t decisions = 0;
};

/// Region [start_i, start_{i+1}) of locator i under the placement rule.
std::pair<std::size_t, std::size_t> locator_region(std::size_t index, std::size_t num_locators,
                                                   std::size_t num_frames);

/// Frame indices a uniform/random baseline observes in one region:
/// round(fraction·len) frames (at least one).
std::vector<std::size_t> baseline_positions(std::size_t start, std::size_t end, double fraction,
                                            bool random, std::mt19937_64* rng);

EpisodeResult run_episode(const data::VideoSample& video, const SpatialEncoder& encoder,
                          std::span<const LocatorNets> nets, const EpisodeConfig& config,
                          const EpisodeOptions& options, FrameCounter& counter);

std::string trajectory_csv_header();
std::string trajectory_csv_rows(std::size_t video_id, std::span<const TrajectoryRow> rows);

}  // namespace vimo
