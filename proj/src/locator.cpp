#include "vimo/locator.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace vimo {

std::size_t ActionSpace::stride(std::size_t action) const {
  if (action >= kNumActions) throw std::out_of_range("action index out of range");
  return action * delta;
}

TemporalNet::TemporalNet(TemporalKind k, std::size_t in, std::size_t hidden_dim,
                         std::mt19937_64& rng)
    : kind(k), input_dim(in) {
  if (kind == TemporalKind::lstm) cell.emplace(in, hidden_dim, rng);
}

std::size_t TemporalNet::context_dim() const {
  return cell ? cell->hidden_dim : input_dim;
}

ParamList TemporalNet::params() const {
  if (cell) return prefixed("lstm", cell->params());
  return {};
}

std::uint64_t TemporalNet::flops_per_observation() const {
  if (cell) return cell->flops();
  // One add (plus a scale for mean pooling) per element.
  return kind == TemporalKind::mean_pool ? 2 * input_dim : input_dim;
}

ParamList LocatorNets::params() const {
  ParamList out = backbone_params();
  append(out, policy_params());
  return out;
}

std::vector<LocatorState> init_locators(std::size_t num_locators, std::size_t num_frames,
                                        std::size_t max_moves, std::size_t context_dim) {
  if (num_locators == 0 || num_locators > num_frames)
    throw std::invalid_argument("need 1 <= num_locators <= num_frames");
  if (max_moves == 0) throw std::invalid_argument("max_moves must be positive");
  std::vector<LocatorState> states(num_locators);
  for (std::size_t i = 0; i < num_locators; ++i) {
    auto& s = states[i];
    s.index = i;
    s.position = i * num_frames / num_locators;
    s.max_moves = max_moves;
    s.hidden = Tensor::zeros({context_dim});
    s.cell = Tensor::zeros({context_dim});
  }
  return states;
}

namespace {

void reset_context(LocatorState& s) {
  s.hidden = Tensor::zeros(s.hidden.shape());
  s.cell = Tensor::zeros(s.cell.shape());
  s.fused = 0;
}

}  // namespace

void observe(LocatorState& state, const data::VideoSample& video,
             const SpatialEncoder& encoder, const TemporalNet& temporal,
             FrameCounter& counter) {
  if (state.stopped) throw std::logic_error("observe on a stopped locator");
  if (state.position >= video.num_frames()) throw std::out_of_range("locator beyond video");
  Tensor e = encoder.encode_frame(video.frame(state.position), counter);
  switch (temporal.kind) {
    case TemporalKind::lstm:
      std::tie(state.hidden, state.cell) = temporal.cell->step(e, state.hidden, state.cell);
      break;
    case TemporalKind::mean_pool: {
      const double n = static_cast<double>(state.fused);
      state.hidden = add(scale(state.hidden, n / (n + 1.0)), scale(e, 1.0 / (n + 1.0)));
      break;
    }
    case TemporalKind::max_pool:
      state.hidden = state.fused == 0 ? e : maximum(state.hidden, e);
      break;
    case TemporalKind::sum_pool:
      state.hidden = add(state.hidden, e);
      break;
  }
  ++state.fused;
  ++state.steps;
  ++state.n_selected;
  state.observed.push_back(state.position);
  if (state.steps >= state.max_moves) state.stopped = true;
}

Tensor policy_observation(const LocatorState& state) {
  const double frac =
      static_cast<double>(state.n_selected) / static_cast<double>(state.max_moves);
  return concat({detach(state.hidden), Tensor::vector({frac})});
}

Tensor decide(const LocatorState& state, const nn::Mlp& policy) {
  if (state.stopped || state.steps >= state.max_moves)
    throw std::logic_error("decide on a stopped locator");
  NoGradScope guard;
  return softmax(policy.forward(policy_observation(state)));
}

MoveResult apply_action(LocatorState& state, std::size_t action, const ActionSpace& space,
                        std::size_t limit) {
  if (state.stopped) throw std::logic_error("action on a stopped locator");
  const std::size_t stride = space.stride(action);
  if (stride == 0 || state.position + stride >= limit) {
    state.stopped = true;
    return MoveResult::stopped;
  }
  state.position += stride;
  return MoveResult::moved;
}

std::pair<std::size_t, std::size_t> locator_region(std::size_t index, std::size_t num_locators,
                                                   std::size_t num_frames) {
  if (index >= num_locators) throw std::out_of_range("locator index out of range");
  return {index * num_frames / num_locators, (index + 1) * num_frames / num_locators};
}

std::vector<std::size_t> baseline_positions(std::size_t start, std::size_t end, double fraction,
                                            bool random, std::mt19937_64* rng) {
  if (end <= start) throw std::invalid_argument("empty region");
  if (!(fraction > 0.0) || fraction > 1.0) throw std::invalid_argument("fraction must be in (0, 1]");
  const std::size_t len = end - start;
  std::size_t count = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(len)));
  count = std::clamp<std::size_t>(count, 1, len);
  std::vector<std::size_t> out;
  out.reserve(count);
  if (!random) {
    for (std::size_t j = 0; j < count; ++j) out.push_back(start + j * len / count);
    return out;
  }
  if (!rng) throw std::invalid_argument("random baseline needs an rng");
  std::vector<std::size_t> all(len);
  std::iota(all.begin(), all.end(), start);
  // Partial Fisher-Yates keeps the draw independent of library shuffle details.
  for (std::size_t j = 0; j < count; ++j) {
    std::uniform_int_distribution<std::size_t> pick(j, len - 1);
    std::swap(all[j], all[pick(*rng)]);
  }
  out.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(count));
  std::sort(out.begin(), out.end());
  return out;
}

namespace {

std::size_t choose(const Tensor& probs, SamplingMode mode, std::mt19937_64* rng) {
  const auto& p = probs.values();
  if (mode == SamplingMode::argmax)
    return static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin());
  if (!rng) throw std::invalid_argument("sampling needs an rng");
  const double u = std::uniform_real_distribution<double>(0.0, 1.0)(*rng);
  double acc = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) {
    acc += p[k];
    if (u < acc) return k;
  }
  return p.size() - 1;
}

EpisodeResult finish(std::vector<LocatorState> states, EpisodeResult r) {
  for (const auto& s : states) {
    r.unit_embeddings.push_back(s.hidden);
    r.frames_observed += s.n_selected;
  }
  for (const auto& step : r.steps) r.decisions += step.size();
  r.final_states = std::move(states);
  return r;
}

EpisodeResult run_baseline(const data::VideoSample& video, const SpatialEncoder& encoder,
                           std::span<const LocatorNets> nets, const EpisodeConfig& config,
                           const EpisodeOptions& options, FrameCounter& counter) {
  const std::size_t T = video.num_frames(), N = config.num_locators;
  const bool random = options.mode == SamplingMode::random;
  std::vector<std::vector<std::size_t>> plan(N);
  std::size_t longest = 0;
  for (std::size_t i = 0; i < N; ++i) {
    auto [start, end] = locator_region(i, N, T);
    plan[i] = baseline_positions(start, end, options.fraction, random, options.rng);
    longest = std::max(longest, plan[i].size());
  }
  auto states = init_locators(N, T, 1, nets[0].temporal.context_dim());
  for (std::size_t i = 0; i < N; ++i) states[i].max_moves = plan[i].size();

  EpisodeResult r;
  for (std::size_t j = 0; j < longest; ++j) {
    for (std::size_t i = 0; i < N; ++i) {
      if (j >= plan[i].size()) continue;
      auto& s = states[i];
      s.position = plan[i][j];
      observe(s, video, encoder, nets[i].temporal, counter);
      r.trajectory.push_back({i, s.steps, s.position, -1, s.stopped});
    }
    if (options.after_step) options.after_step(j, states);
  }
  return finish(std::move(states), std::move(r));
}

}  // namespace

EpisodeResult run_episode(const data::VideoSample& video, const SpatialEncoder& encoder,
                          std::span<const LocatorNets> nets, const EpisodeConfig& config,
                          const EpisodeOptions& options, FrameCounter& counter) {
  if (nets.size() != config.num_locators)
    throw std::invalid_argument("one network set per locator required");
  for (const auto& n : nets)
    if (n.temporal.input_dim != encoder.output_dim())
      throw std::invalid_argument("temporal input width does not match encoder output");
  if (options.mode == SamplingMode::uniform || options.mode == SamplingMode::random)
    return run_baseline(video, encoder, nets, config, options, counter);

  const std::size_t T = video.num_frames(), N = config.num_locators;
  auto states = init_locators(N, T, config.max_moves, nets[0].temporal.context_dim());
  EpisodeResult r;
  for (std::size_t i = 0; i < N; ++i) {
    observe(states[i], video, encoder, nets[i].temporal, counter);
    r.trajectory.push_back({i, states[i].steps, states[i].position, -1, states[i].stopped});
  }
  if (options.after_step) options.after_step(0, states);

  for (std::size_t step = 1;; ++step) {
    std::vector<Decision> decisions;
    for (std::size_t i = 0; i < N; ++i) {
      auto& s = states[i];
      if (s.stopped) continue;
      Decision d;
      d.locator = i;
      d.step = s.steps;
      d.obs_before = policy_observation(s).to_vector();
      d.action = choose(decide(s, nets[i].policy), options.mode, options.rng);
      const std::size_t limit =
          config.region_fence ? locator_region(i, N, T).second : T;
      const MoveResult moved = apply_action(s, d.action, config.actions, limit);
      if (!config.fuse_initial_frame && step == 1) reset_context(s);
      if (moved == MoveResult::moved) observe(s, video, encoder, nets[i].temporal, counter);
      d.obs_after = policy_observation(s).to_vector();
      d.done = s.stopped;
      r.trajectory.push_back({i, s.steps, s.position, static_cast<long>(d.action), s.stopped});
      decisions.push_back(std::move(d));
    }
    if (decisions.empty()) break;
    r.steps.push_back(std::move(decisions));
    if (options.after_step) options.after_step(step, states);
  }
  return finish(std::move(states), std::move(r));
}

std::string trajectory_csv_header() { return "video,locator,t,position,action,stopped\n"; }

std::string trajectory_csv_rows(std::size_t video_id, std::span<const TrajectoryRow> rows) {
  std::ostringstream out;
  for (const auto& row : rows)
    out << video_id << ',' << row.locator << ',' << row.t << ',' << row.position << ','
        << row.action << ',' << (row.stopped ? 1 : 0) << '\n';
  return out.str();
}

}  // namespace vimo
