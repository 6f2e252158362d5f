#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>

#include "vimo/config.hpp"
#include "vimo/data.hpp"
#include "vimo/integrator.hpp"
#include "vimo/locator.hpp"
#include "vimo/metrics.hpp"
#include "vimo/sac.hpp"

namespace vimo::pipeline {

/// Everything that runs at inference time.
struct Model {
  SpatialEncoder encoder;
  std::vector<LocatorNets> locators;
  Integrator integrator;
  Classifier classifier;

  /// Spatial (when trainable), temporal, integration, and classifier parameters.
  ParamList backbone_params() const;
  ParamList policy_params() const;
  ParamList params() const;
};

Model build_model(const RunConfig& cfg, std::size_t feature_dim, std::size_t num_classes,
                  std::uint64_t seed);
EpisodeConfig episode_config(const RunConfig& cfg);
/// Width of one locator's policy observation h ⊕ n/m.
std::size_t observation_dim(const Model& model);
/// Width of the centralized critics' global snapshot.
std::size_t global_dim(const Model& model);

/// Synthetic data per the config, or the VIMF directory in data_dir.
data::DatasetSplit load_data(const RunConfig& cfg);
data::SyntheticSpec synthetic_spec(const RunConfig& cfg);

metrics::CostModel cost_model(const Model& model);

struct EvalOptions {
  SamplingMode mode = SamplingMode::argmax;
  double fraction = 0.25;
  std::uint64_t seed = 0;  // random baselines
  std::string* trajectory_csv = nullptr;
};

/// Runs one episode per video without recording and aggregates metrics.
/// Throws std::invalid_argument on an empty split.
metrics::CostReport evaluate(const Model& model, const RunConfig& cfg,
                             std::span<const data::VideoSample> videos,
                             const EvalOptions& options = {});

/// Thrown when a stage changes parameters it must leave untouched.
class FreezeViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// The three training stages over one model and its centralized critics.
class Trainer {
 public:
  Trainer(const RunConfig& cfg, const data::DatasetSplit& data);

  /// Random-fraction episodes, cross-entropy on the backbone; policies and
  /// critics stay fixed. Returns CSV "epoch,loss,train_acc".
  std::string stage1_warmup();
  /// SAC on sampled episodes with the backbone frozen. Returns CSV
  /// "step,policy_loss,critic_loss,alpha_loss,alpha,mean_reward,mean_frames".
  std::string stage2_policy();
  /// Alternating backbone/policy blocks. Returns (backbone CSV, policy CSV).
  std::pair<std::string, std::string> stage3_finetune();

  Model& model() { return model_; }
  const Model& model() const { return model_; }
  rl::CtdeTrainer& sac() { return *sac_; }
  /// Model and critic/temperature parameters, as saved in checkpoints.
  ParamList checkpoint_params() const;

  /// Transitions of one sampled episode; exposed for inspection.
  struct Collected {
    std::vector<rl::Transition> transitions;
    std::size_t frames = 0;
  };
  Collected collect_episode(const data::VideoSample& video, std::mt19937_64& rng) const;

 private:
  void backbone_epoch(SamplingMode mode, double fraction, Adam& opt, std::mt19937_64& rng,
                      std::uint64_t shuffle_seed, std::size_t epoch, std::string& log,
                      std::size_t log_index);
  void policy_epoch(rl::ReplayBuffer& buffer, std::mt19937_64& rng, std::uint64_t shuffle_seed,
                    std::size_t epoch, std::string& log, std::size_t& step);

  RunConfig cfg_;
  const data::DatasetSplit& data_;
  Model model_;
  std::unique_ptr<rl::CtdeTrainer> sac_;
};

struct RunResult {
  metrics::CostReport report;
  std::uint64_t checksum = 0;  // over checkpoint_params after the final stage
  std::size_t stages_run = 0;  // stages executed by this call (resume skips the rest)
};

/// Trains all stages and evaluates the adaptive policy. With a non-empty
/// `dir`, writes config.txt, checkpoints/stage{1,2,3}.vimc, logs/*.csv and
/// report.txt, resuming from the latest stage checkpoint. A directory
/// holding a different config or a finished report is left untouched unless
/// `force` is set.
RunResult train_run(const RunConfig& cfg, const std::filesystem::path& dir = {},
                    bool force = false,
                    const std::function<void(const std::string&)>& progress = {});

/// Rebuilds a model from a run directory's config and final checkpoint.
std::pair<RunConfig, Model> load_run(const std::filesystem::path& dir);

class RunExists : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace vimo::pipeline
