#include "vimo/sac.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <stdexcept>

namespace vimo::rl {

namespace {

constexpr std::size_t kActions = ActionSpace::kNumActions;

Tensor rows_of(Batch batch, std::vector<double> Transition::*field) {
  std::vector<Tensor> rows;
  rows.reserve(batch.size());
  for (const auto* t : batch) rows.push_back(Tensor::vector(t->*field));
  return stack_rows(rows);
}

Tensor action_mask(Batch batch) {
  Tensor mask = Tensor::zeros({batch.size(), kActions});
  auto v = mask.mutable_values();
  for (std::size_t b = 0; b < batch.size(); ++b) v[b * kActions + batch[b]->action] = 1.0;
  return mask;
}

// Q[b, a_b] as a [B] vector.
Tensor select_actions(const Tensor& q, const Tensor& mask) {
  Tensor picked = matmul(mul(q, mask), Tensor::full({kActions, 1}, 1.0));
  return reshape(picked, {mask.dim(0)});
}

void require_batch(Batch batch) {
  if (batch.empty()) throw std::invalid_argument("empty batch");
  for (const auto* t : batch)
    if (t->locator != batch.front()->locator)
      throw std::invalid_argument("batch mixes locators");
}

}  // namespace

std::vector<double> global_snapshot(std::span<const std::vector<double>> observations,
                                    std::span<const std::optional<std::size_t>> actions,
                                    std::size_t own) {
  if (observations.size() != actions.size())
    throw std::invalid_argument("one action slot per observation required");
  std::vector<double> g;
  for (std::size_t j = 0; j < observations.size(); ++j) {
    g.insert(g.end(), observations[j].begin(), observations[j].end());
    std::array<double, kActions> onehot{};
    if (actions[j] && j != own) onehot.at(*actions[j]) = 1.0;
    g.insert(g.end(), onehot.begin(), onehot.end());
  }
  return g;
}

double compute_reward(double p_gt, double p_prev_gt, double lambda, double frames) {
  if (lambda < 0.0) throw std::invalid_argument("lambda must be non-negative");
  if (frames < 0.0) throw std::invalid_argument("frame count must be non-negative");
  return (p_gt - p_prev_gt) - lambda * frames;
}

void soft_update(const ParamList& local, const ParamList& target, double tau) {
  if (tau < 0.0 || tau > 1.0) throw std::invalid_argument("tau must lie in [0, 1]");
  if (local.size() != target.size()) throw std::invalid_argument("parameter count mismatch");
  for (std::size_t i = 0; i < local.size(); ++i) {
    const auto& l = local[i].tensor;
    Tensor t = target[i].tensor;  // handle copy shares storage
    if (l.shape() != t.shape())
      throw std::invalid_argument("shape mismatch for " + local[i].name);
    auto lv = l.values();
    auto tv = t.mutable_values();
    for (std::size_t k = 0; k < lv.size(); ++k) tv[k] = tau * lv[k] + (1.0 - tau) * tv[k];
  }
}

CriticEnsemble::CriticEnsemble(std::size_t input_dim, std::size_t hidden, std::size_t layers,
                               std::mt19937_64& rng) {
  if (layers == 0) throw std::invalid_argument("critic needs at least one layer");
  std::vector<std::size_t> dims{input_dim};
  for (std::size_t l = 1; l < layers; ++l) dims.push_back(hidden);
  dims.push_back(kActions);
  q1 = nn::Mlp(dims, nn::Activation::relu, rng);
  q2 = nn::Mlp(dims, nn::Activation::relu, rng);
  q1_target = nn::Mlp(dims, nn::Activation::relu, rng);
  q2_target = nn::Mlp(dims, nn::Activation::relu, rng);
  soft_update(q1.params(), q1_target.params(), 1.0);
  soft_update(q2.params(), q2_target.params(), 1.0);
}

ParamList CriticEnsemble::params() const {
  ParamList out = prefixed("q1", q1.params());
  append(out, prefixed("q2", q2.params()));
  return out;
}

ParamList CriticEnsemble::target_params() const {
  ParamList out = prefixed("q1_target", q1_target.params());
  append(out, prefixed("q2_target", q2_target.params()));
  return out;
}

Tensor CriticEnsemble::min_q(const Tensor& g) const {
  return minimum(q1.forward(g), q2.forward(g));
}

Tensor CriticEnsemble::min_target_q(const Tensor& g) const {
  return minimum(q1_target.forward(g), q2_target.forward(g));
}

ReplayBuffer::ReplayBuffer(std::size_t capacity, std::uint64_t seed)
    : capacity_(capacity), rng_(seed) {
  if (capacity == 0) throw std::invalid_argument("replay capacity must be positive");
  items_.reserve(std::min<std::size_t>(capacity, 4096));
}

void ReplayBuffer::push(Transition t) {
  if (items_.size() < capacity_) {
    items_.push_back(std::move(t));
    return;
  }
  items_[head_] = std::move(t);
  head_ = (head_ + 1) % capacity_;
}

const Transition& ReplayBuffer::at(std::size_t i) const {
  if (i >= items_.size()) throw std::out_of_range("replay index out of range");
  return items_[(head_ + i) % items_.size()];
}

std::vector<const Transition*> ReplayBuffer::sample(std::size_t batch) {
  if (batch == 0 || batch > items_.size())
    throw std::invalid_argument("replay buffer holds " + std::to_string(items_.size()) +
                                " transitions, batch needs " + std::to_string(batch));
  std::vector<std::size_t> idx(items_.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::vector<const Transition*> out;
  out.reserve(batch);
  for (std::size_t j = 0; j < batch; ++j) {
    std::uniform_int_distribution<std::size_t> pick(j, idx.size() - 1);
    std::swap(idx[j], idx[pick(rng_)]);
    out.push_back(&items_[idx[j]]);
  }
  return out;
}

std::vector<double> soft_state_value(const Tensor& probs, const Tensor& log_probs,
                                     const Tensor& min_q, double alpha) {
  const std::size_t rows = probs.dim(0), cols = probs.dim(1);
  std::vector<double> v(rows, 0.0);
  for (std::size_t b = 0; b < rows; ++b)
    for (std::size_t k = 0; k < cols; ++k)
      v[b] += probs.at(b, k) * (min_q.at(b, k) - alpha * log_probs.at(b, k));
  return v;
}

Tensor critic_loss(Batch batch, const CriticEnsemble& critics, const nn::Mlp& policy,
                   double alpha, double gamma) {
  require_batch(batch);
  std::vector<double> y(batch.size());
  {
    NoGradScope guard;
    Tensor next_logits = policy.forward(rows_of(batch, &Transition::s_next));
    auto values = soft_state_value(softmax(next_logits), log_softmax(next_logits),
                                   critics.min_target_q(rows_of(batch, &Transition::g_next)), alpha);
    for (std::size_t b = 0; b < batch.size(); ++b)
      y[b] = batch[b]->reward + (batch[b]->done ? 0.0 : gamma * values[b]);
  }
  Tensor g = rows_of(batch, &Transition::g);
  Tensor mask = action_mask(batch);
  Tensor target = Tensor::vector(y);
  Tensor d1 = sub(select_actions(critics.q1.forward(g), mask), target);
  Tensor d2 = sub(select_actions(critics.q2.forward(g), mask), target);
  Tensor total = add(sum(mul(d1, d1)), sum(mul(d2, d2)));
  return scale(total, 0.5 / static_cast<double>(batch.size()));
}

Tensor policy_loss(Batch batch, const CriticEnsemble& critics, const nn::Mlp& policy,
                   double alpha) {
  require_batch(batch);
  Tensor q;
  {
    NoGradScope guard;
    q = critics.min_q(rows_of(batch, &Transition::g));
  }
  Tensor logits = policy.forward(rows_of(batch, &Transition::s));
  Tensor probs = softmax(logits);
  Tensor inner = sub(scale(log_softmax(logits), alpha), q);
  return scale(sum(mul(probs, inner)), 1.0 / static_cast<double>(batch.size()));
}

Tensor alpha_loss(Batch batch, const nn::Mlp& policy, const Temperature& temperature) {
  require_batch(batch);
  Tensor weights;
  {
    NoGradScope guard;
    Tensor logits = policy.forward(rows_of(batch, &Transition::s));
    Tensor probs = softmax(logits);
    // Σ_k π_k(log π_k + H̄) per row, summed over the batch.
    Tensor shifted = add_scalar(log_softmax(logits), temperature.target_entropy);
    weights = sum(mul(probs, shifted));
  }
  Tensor alpha = exp(temperature.log_alpha);
  return scale(scale_by(reshape(weights, {1}), alpha), -1.0 / static_cast<double>(batch.size()));
}

CtdeTrainer::CtdeTrainer(std::span<LocatorNets> nets, std::size_t global_dim,
                         const SacConfig& config, std::mt19937_64& rng)
    : nets_(nets), config_(config) {
  if (nets.empty()) throw std::invalid_argument("no locators to train");
  for (std::size_t i = 0; i < nets.size(); ++i)
    critics_.emplace_back(global_dim, config.critic_hidden, config.critic_layers, rng);
  temperature_.log_alpha.mutable_values()[0] = std::log(config.initial_alpha);
  temperature_.target_entropy = config.target_entropy;
  reset_optimizers();
}

void CtdeTrainer::reset_optimizers() {
  ParamList critic_params;
  for (std::size_t i = 0; i < critics_.size(); ++i)
    append(critic_params, prefixed("critic" + std::to_string(i), critics_[i].params()));
  critic_opt_ = std::make_unique<Adam>(critic_params, AdamOptions{.lr = config_.critic_lr});
  policy_opts_.clear();
  for (auto& n : nets_) policy_opts_.emplace_back(n.policy_params(), AdamOptions{.lr = config_.policy_lr});
  alpha_opt_ = std::make_unique<Adam>(temperature_.params(), AdamOptions{.lr = config_.alpha_lr});
}

ParamList CtdeTrainer::params() const {
  ParamList out;
  for (std::size_t i = 0; i < critics_.size(); ++i) {
    const std::string p = "critic" + std::to_string(i);
    append(out, prefixed(p, critics_[i].params()));
    append(out, prefixed(p, critics_[i].target_params()));
  }
  append(out, temperature_.params());
  return out;
}

LossReport CtdeTrainer::train_step(ReplayBuffer& buffer) {
  auto sampled = buffer.sample(config_.batch_size);
  std::map<std::size_t, std::vector<const Transition*>> groups;
  for (const auto* t : sampled) {
    if (t->locator >= nets_.size()) throw std::out_of_range("transition from unknown locator");
    groups[t->locator].push_back(t);
  }
  const double total = static_cast<double>(sampled.size());
  const double alpha = temperature_.alpha();
  LossReport report;
  report.alpha = alpha;

  // Each locator contributes its share of the batch mean.
  auto weighted = [&](auto&& loss_of) {
    Tape tape;
    std::optional<Tensor> acc;
    {
      TapeScope scope(tape);
      for (const auto& [i, group] : groups) {
        Tensor part = scale(loss_of(i, group), static_cast<double>(group.size()) / total);
        acc = acc ? add(*acc, part) : part;
      }
    }
    backward(*acc, tape);
    return acc->item();
  };

  critic_opt_->zero_grad();
  report.critic_loss = weighted([&](std::size_t i, const auto& group) {
    return critic_loss(group, critics_[i], nets_[i].policy, alpha, config_.gamma);
  });
  critic_opt_->step();

  for (auto& opt : policy_opts_) opt.zero_grad();
  report.policy_loss = weighted([&](std::size_t i, const auto& group) {
    return policy_loss(group, critics_[i], nets_[i].policy, alpha);
  });
  for (auto& opt : policy_opts_) opt.step();

  alpha_opt_->zero_grad();
  report.alpha_loss = weighted([&](std::size_t i, const auto& group) {
    return alpha_loss(group, nets_[i].policy, temperature_);
  });
  alpha_opt_->step();

  for (auto& c : critics_) {
    soft_update(c.q1.params(), c.q1_target.params(), config_.tau);
    soft_update(c.q2.params(), c.q2_target.params(), config_.tau);
  }
  return report;
}

}  // namespace vimo::rl
