#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "vimo/locator.hpp"
#include "vimo/nn.hpp"
#include "vimo/optim.hpp"

namespace vimo::rl {

struct Transition {
  std::size_t locator = 0;
  std::vector<double> s;       // local observation s_{i,t}
  std::size_t action = 0;
  double reward = 0.0;         // shared by every locator at this step
  std::vector<double> s_next;  // s_{i,t+1}
  bool done = false;
  std::vector<double> g;       // global snapshot seen by locator i's critic
  std::vector<double> g_next;
};

/// Concatenates every locator's observation and one-hot action. Missing
/// actions (stopped locators, next-step snapshots) leave zero slots, and the
/// slot of `own` is always zeroed because its critic scores every action of
/// that locator.
std::vector<double> global_snapshot(std::span<const std::vector<double>> observations,
                                    std::span<const std::optional<std::size_t>> actions,
                                    std::size_t own);

/// Shared reward (P_t − P_{t−1}) − λ·N_t. Throws std::invalid_argument for λ < 0.
double compute_reward(double p_gt, double p_prev_gt, double lambda, double frames);

/// target ← τ·local + (1−τ)·target, matched by position with name/shape checks.
void soft_update(const ParamList& local, const ParamList& target, double tau);

/// Double critics over the global snapshot, each emitting one value per
/// action, with target copies that only soft_update touches.
struct CriticEnsemble {
  nn::Mlp q1, q2, q1_target, q2_target;

  CriticEnsemble() = default;
  /// `layers` linear layers of width `hidden` ending in 4 action values.
  CriticEnsemble(std::size_t input_dim, std::size_t hidden, std::size_t layers,
                 std::mt19937_64& rng);

  ParamList params() const;
  ParamList target_params() const;
  Tensor min_q(const Tensor& g) const;
  Tensor min_target_q(const Tensor& g) const;
};

/// α = exp(log α), so it stays positive through any number of updates.
struct Temperature {
  Tensor log_alpha = Tensor::parameter({1}, {0.0});
  double target_entropy = 0.6 * std::log(4.0);

  double alpha() const { return std::exp(log_alpha.item()); }
  ParamList params() const { return {{"log_alpha", log_alpha}}; }
};

/// FIFO ring of transitions with seeded sampling without replacement.
class ReplayBuffer {
 public:
  ReplayBuffer(std::size_t capacity, std::uint64_t seed);

  void push(Transition t);
  std::size_t size() const { return items_.size(); }
  std::size_t capacity() const { return capacity_; }
  const Transition& at(std::size_t i) const;
  /// Throws std::invalid_argument if fewer than `batch` transitions are held.
  std::vector<const Transition*> sample(std::size_t batch);

 private:
  std::size_t capacity_;
  std::size_t head_ = 0;  // oldest element once full
  std::vector<Transition> items_;
  std::mt19937_64 rng_;
};

using Batch = std::span<const Transition* const>;

/// V(g', s') = π(s')ᵀ[min_j Q̄_j(g') − α·log π(s')] per row.
std::vector<double> soft_state_value(const Tensor& probs, const Tensor& log_probs,
                                     const Tensor& min_q, double alpha);

/// Mean over the batch of ½(Q_j(g)[a] − y)² summed over j ∈ {1, 2}, with
/// y = r + γ(1−done)·V. All transitions must belong to one locator.
Tensor critic_loss(Batch batch, const CriticEnsemble& critics, const nn::Mlp& policy,
                   double alpha, double gamma);

/// Mean of π(s)ᵀ[α·log π(s) − min_j Q_j(g)]; critic values are constants.
Tensor policy_loss(Batch batch, const CriticEnsemble& critics, const nn::Mlp& policy,
                   double alpha);

/// Mean of π(s)ᵀ[−α(log π(s) + H̄)] with π constant; differentiable in log α.
Tensor alpha_loss(Batch batch, const nn::Mlp& policy, const Temperature& temperature);

struct SacConfig {
  double gamma = 0.99;
  double tau = 0.99;
  double target_entropy = 0.6 * std::log(4.0);
  double initial_alpha = 1.0;
  std::size_t capacity = 50000;
  std::size_t batch_size = 64;
  double policy_lr = 1e-5;
  double critic_lr = 5e-5;
  double alpha_lr = 5e-4;
  std::size_t critic_hidden = 512;
  std::size_t critic_layers = 5;
};

struct LossReport {
  double policy_loss = 0.0;
  double critic_loss = 0.0;
  double alpha_loss = 0.0;
  double alpha = 0.0;
};

/// Centralized training of N decentralized policies: per-locator critics on
/// global snapshots, per-locator policies on local observations, shared α.
class CtdeTrainer {
 public:
  CtdeTrainer(std::span<LocatorNets> nets, std::size_t global_dim, const SacConfig& config,
              std::mt19937_64& rng);

  /// One optimizer step for critics, every policy, and α, then soft updates.
  LossReport train_step(ReplayBuffer& buffer);
  /// Fresh Adam moments, so a stage behaves the same whether or not it
  /// follows another in the same process.
  void reset_optimizers();

  const SacConfig& config() const { return config_; }
  std::vector<CriticEnsemble>& critics() { return critics_; }
  const std::vector<CriticEnsemble>& critics() const { return critics_; }
  Temperature& temperature() { return temperature_; }
  const Temperature& temperature() const { return temperature_; }
  /// critic{i}.* (locals and targets) and log_alpha.
  ParamList params() const;

 private:
  std::span<LocatorNets> nets_;
  SacConfig config_;
  std::vector<CriticEnsemble> critics_;
  Temperature temperature_;
  std::unique_ptr<Adam> critic_opt_;
  std::vector<Adam> policy_opts_;
  std::unique_ptr<Adam> alpha_opt_;
};

}  // namespace vimo::rl
