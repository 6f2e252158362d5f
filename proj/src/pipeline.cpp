#include "vimo/pipeline.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "vimo/checkpoint.hpp"

namespace vimo::pipeline {

namespace {

// Independent RNG streams per stage and purpose.
enum Stream : std::uint64_t {
  kModelInit = 1,
  kWarmupShuffle,
  kWarmupEpisodes,
  kPolicyShuffle,
  kPolicyEpisodes,
  kPolicyReplay,
  kFinetuneShuffle,
  kFinetuneEpisodes,
  kFinetuneReplay,
  kCriticInit,
};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

void require_unchanged(std::uint64_t before, const ParamList& params, const char* what) {
  if (checksum(params) != before) throw FreezeViolation(std::string(what) + " changed while frozen");
}

}  // namespace

ParamList Model::backbone_params() const {
  ParamList out = prefixed("spatial", encoder.params());
  for (std::size_t i = 0; i < locators.size(); ++i)
    append(out, prefixed("locator" + std::to_string(i), locators[i].backbone_params()));
  append(out, prefixed("integrator", integrator.params()));
  append(out, prefixed("classifier", classifier.params()));
  return out;
}

ParamList Model::policy_params() const {
  ParamList out;
  for (std::size_t i = 0; i < locators.size(); ++i)
    append(out, prefixed("locator" + std::to_string(i), locators[i].policy_params()));
  return out;
}

ParamList Model::params() const {
  ParamList out = backbone_params();
  append(out, policy_params());
  return out;
}

Model build_model(const RunConfig& cfg, std::size_t feature_dim, std::size_t num_classes,
                  std::uint64_t seed) {
  validate(cfg);
  std::mt19937_64 rng(data::derive_seed(seed, kModelInit));
  Model m;
  m.encoder = cfg.spatial == SpatialKind::passthrough
                  ? SpatialEncoder::passthrough(feature_dim, cfg.spatial_cost)
                  : SpatialEncoder::mlp_embedder(feature_dim, cfg.spatial_hidden, cfg.spatial_out, rng);
  for (std::size_t i = 0; i < cfg.locators; ++i) {
    TemporalNet temporal(cfg.temporal, m.encoder.output_dim(), cfg.temporal_hidden, rng);
    std::vector<std::size_t> dims{temporal.context_dim() + 1};
    for (std::size_t l = 1; l < cfg.policy_layers; ++l) dims.push_back(cfg.policy_hidden);
    dims.push_back(ActionSpace::kNumActions);
    nn::Mlp policy(dims, nn::Activation::relu, rng);
    m.locators.push_back({std::move(temporal), std::move(policy)});
  }
  IntegratorConfig ic;
  ic.kind = cfg.integrator;
  ic.unit_dim = m.locators.front().temporal.context_dim();
  ic.num_units = cfg.locators;
  ic.forward_hidden = cfg.forward_hidden;
  ic.model_dim = cfg.model_dim;
  ic.layers = cfg.encoder_layers;
  ic.heads = cfg.heads;
  ic.ff_dim = cfg.ff_dim;
  ic.position_embeddings = cfg.position_embeddings;
  m.integrator = Integrator(ic, rng);
  m.classifier = Classifier(m.integrator.output_dim(), num_classes, rng);
  return m;
}

EpisodeConfig episode_config(const RunConfig& cfg) {
  EpisodeConfig e;
  e.num_locators = cfg.locators;
  e.max_moves = cfg.max_moves;
  e.actions.delta = cfg.delta;
  e.fuse_initial_frame = cfg.fuse_initial_frame;
  e.region_fence = cfg.region_fence;
  return e;
}

std::size_t observation_dim(const Model& model) {
  return model.locators.front().temporal.context_dim() + 1;
}

std::size_t global_dim(const Model& model) {
  return model.locators.size() * (observation_dim(model) + ActionSpace::kNumActions);
}

data::SyntheticSpec synthetic_spec(const RunConfig& cfg) {
  data::SyntheticSpec s;
  s.frames = cfg.frames;
  s.feature_dim = cfg.feature_dim;
  s.num_classes = cfg.num_classes;
  s.units = cfg.units;
  s.salient_per_unit = cfg.salient_per_unit;
  s.noise_std = cfg.noise_std;
  s.distractor_fraction = cfg.distractor_fraction;
  s.salient_gain = cfg.salient_gain;
  s.context_gain = cfg.context_gain;
  s.boundary_jitter = cfg.boundary_jitter;
  s.n_train = cfg.n_train;
  s.n_test = cfg.n_test;
  s.seed = cfg.seed;
  return s;
}

data::DatasetSplit load_data(const RunConfig& cfg) {
  if (cfg.data_dir.empty()) return data::generate_synthetic(synthetic_spec(cfg));
  auto split = data::load_split(cfg.data_dir);
  if (split.train.empty() || split.test.empty())
    throw std::runtime_error("data_dir needs non-empty train/ and test/ splits");
  return split;
}

metrics::CostModel cost_model(const Model& model) {
  metrics::CostModel c;
  c.spatial_per_frame = model.encoder.declared_cost();
  c.temporal_per_frame = model.locators.front().temporal.flops_per_observation();
  // Policy MLP plus one per action for the softmax.
  c.policy_per_decision = model.locators.front().policy.flops() + ActionSpace::kNumActions;
  const std::size_t n = model.locators.size();
  c.integration_by_units[n] = model.integrator.flops(n);
  c.classifier = model.classifier.flops();
  return c;
}

metrics::CostReport evaluate(const Model& model, const RunConfig& cfg,
                             std::span<const data::VideoSample> videos,
                             const EvalOptions& options) {
  if (videos.empty()) throw std::invalid_argument("cannot evaluate an empty split");
  NoGradScope guard;
  const auto ecfg = episode_config(cfg);
  std::mt19937_64 rng(options.seed);
  EpisodeOptions eo;
  eo.mode = options.mode;
  eo.fraction = options.fraction;
  eo.rng = &rng;
  std::vector<std::vector<double>> scores;
  std::vector<std::size_t> labels;
  std::vector<metrics::EpisodeTrace> traces;
  FrameCounter counter;
  for (std::size_t v = 0; v < videos.size(); ++v) {
    auto r = run_episode(videos[v], model.encoder, model.locators, ecfg, eo, counter);
    scores.push_back(model.classifier.classify(model.integrator.integrate(r.unit_embeddings)).to_vector());
    labels.push_back(videos[v].label);
    traces.push_back({r.frames_observed, r.decisions, r.unit_embeddings.size()});
    if (options.trajectory_csv) *options.trajectory_csv += trajectory_csv_rows(v, r.trajectory);
  }
  auto report = metrics::flops_ledger(traces, cost_model(model));
  report.top1 = metrics::top1_accuracy(scores, labels);
  report.mAP = metrics::mean_average_precision(scores, labels);
  report.frame_rate = metrics::frame_rate(report.frames_mean, cfg.frame_basis);
  return report;
}

// ---------------------------------------------------------------------------
// Trainer
// ---------------------------------------------------------------------------

Trainer::Trainer(const RunConfig& cfg, const data::DatasetSplit& data)
    : cfg_(cfg), data_(data) {
  if (data.train.empty() || data.test.empty()) throw std::invalid_argument("empty split");
  model_ = build_model(cfg, data.train.front().feature_dim(), data.num_classes, cfg.seed);
  rl::SacConfig sc;
  sc.gamma = cfg.gamma;
  sc.tau = cfg.tau;
  sc.target_entropy = cfg.target_entropy;
  sc.initial_alpha = cfg.initial_alpha;
  sc.capacity = cfg.replay_capacity;
  sc.batch_size = cfg.sac_batch;
  sc.policy_lr = cfg.policy_lr;
  sc.critic_lr = cfg.critic_lr;
  sc.alpha_lr = cfg.alpha_lr;
  sc.critic_hidden = cfg.critic_hidden;
  sc.critic_layers = cfg.critic_layers;
  std::mt19937_64 rng(data::derive_seed(cfg.seed, kCriticInit));
  sac_ = std::make_unique<rl::CtdeTrainer>(model_.locators, global_dim(model_), sc, rng);
}

ParamList Trainer::checkpoint_params() const {
  ParamList out = prefixed("model", model_.params());
  append(out, prefixed("sac", sac_->params()));
  return out;
}

void Trainer::backbone_epoch(SamplingMode mode, double fraction, Adam& opt, std::mt19937_64& rng,
                             std::uint64_t shuffle_seed, std::size_t epoch, std::string& log,
                             std::size_t log_index) {
  const auto ecfg = episode_config(cfg_);
  EpisodeOptions eo;
  eo.mode = mode;
  eo.fraction = fraction;
  eo.rng = &rng;
  FrameCounter counter;
  double loss_total = 0;
  std::size_t correct = 0;
  data::BatchIterator batches(data_.train.size(), cfg_.batch_size, shuffle_seed, true);
  for (const auto& batch : batches.epoch(epoch)) {
    Tape tape;
    std::optional<Tensor> loss;
    {
      TapeScope scope(tape);
      for (std::size_t idx : batch) {
        const auto& video = data_.train[idx];
        auto r = run_episode(video, model_.encoder, model_.locators, ecfg, eo, counter);
        Tensor logits = model_.classifier.logits(model_.integrator.integrate(r.unit_embeddings));
        const auto& lv = logits.values();
        correct += static_cast<std::size_t>(std::max_element(lv.begin(), lv.end()) - lv.begin()) ==
                   video.label;
        Tensor ce = cross_entropy(logits, video.label);
        loss = loss ? add(*loss, ce) : ce;
      }
      loss = scale(*loss, 1.0 / static_cast<double>(batch.size()));
    }
    opt.zero_grad();
    backward(*loss, tape);
    opt.step();
    loss_total += loss->item() * static_cast<double>(batch.size());
  }
  opt.zero_grad();
  const double n = static_cast<double>(data_.train.size());
  log += std::to_string(log_index) + "," + fmt(loss_total / n) + "," +
         fmt(static_cast<double>(correct) / n) + "\n";
}

Trainer::Collected Trainer::collect_episode(const data::VideoSample& video,
                                            std::mt19937_64& rng) const {
  NoGradScope guard;
  std::vector<std::vector<std::vector<double>>> snaps;  // [step][locator] observation
  std::vector<double> p_gt;
  std::vector<std::size_t> frames;  // cumulative frames after each step
  EpisodeOptions eo;
  eo.mode = SamplingMode::sample;
  eo.rng = &rng;
  eo.after_step = [&](std::size_t, std::span<const LocatorState> states) {
    std::vector<std::vector<double>> obs;
    std::size_t total = 0;
    for (const auto& s : states) {
      obs.push_back(policy_observation(s).to_vector());
      total += s.n_selected;
    }
    snaps.push_back(std::move(obs));
    frames.push_back(total);
    p_gt.push_back(intermediate_predict(states, model_.integrator, model_.classifier)[video.label]);
  };
  FrameCounter counter;
  auto r = run_episode(video, model_.encoder, model_.locators, episode_config(cfg_), eo, counter);

  Collected out;
  out.frames = r.frames_observed;
  const std::size_t N = model_.locators.size();
  const std::vector<std::optional<std::size_t>> no_actions(N);
  for (std::size_t t = 1; t <= r.steps.size(); ++t) {
    const double n_t = cfg_.frame_penalty == FramePenalty::cumulative
                           ? static_cast<double>(frames[t])
                           : static_cast<double>(frames[t] - frames[t - 1]);
    const double reward = rl::compute_reward(p_gt[t], p_gt[t - 1], cfg_.lambda, n_t);
    std::vector<std::optional<std::size_t>> actions(N);
    for (const auto& d : r.steps[t - 1]) actions[d.locator] = d.action;
    for (const auto& d : r.steps[t - 1]) {
      rl::Transition tr;
      tr.locator = d.locator;
      tr.s = snaps[t - 1][d.locator];
      tr.action = d.action;
      tr.reward = reward;
      tr.s_next = snaps[t][d.locator];
      tr.done = d.done;
      tr.g = rl::global_snapshot(snaps[t - 1], actions, d.locator);
      tr.g_next = rl::global_snapshot(snaps[t], no_actions, d.locator);
      out.transitions.push_back(std::move(tr));
    }
  }
  return out;
}

void Trainer::policy_epoch(rl::ReplayBuffer& buffer, std::mt19937_64& rng,
                           std::uint64_t shuffle_seed, std::size_t epoch, std::string& log,
                           std::size_t& step) {
  data::BatchIterator batches(data_.train.size(), cfg_.batch_size, shuffle_seed, true);
  for (const auto& batch : batches.epoch(epoch)) {
    double reward_sum = 0;
    std::size_t transitions = 0, frames = 0;
    for (std::size_t idx : batch) {
      auto c = collect_episode(data_.train[idx], rng);
      frames += c.frames;
      for (auto& t : c.transitions) {
        reward_sum += t.reward;
        ++transitions;
        buffer.push(std::move(t));
      }
    }
    if (buffer.size() < cfg_.sac_batch) continue;
    for (std::size_t u = 0; u < cfg_.updates_per_batch; ++u) {
      auto rep = sac_->train_step(buffer);
      log += std::to_string(step++) + "," + fmt(rep.policy_loss) + "," + fmt(rep.critic_loss) +
             "," + fmt(rep.alpha_loss) + "," + fmt(rep.alpha) + "," +
             fmt(transitions ? reward_sum / static_cast<double>(transitions) : 0.0) + "," +
             fmt(static_cast<double>(frames) / static_cast<double>(batch.size())) + "\n";
    }
  }
}

std::string Trainer::stage1_warmup() {
  const auto frozen = checksum(model_.policy_params());
  const auto critics = checksum(sac_->params());
  Adam opt(model_.backbone_params(), {.lr = cfg_.warmup_lr});
  std::mt19937_64 rng(data::derive_seed(cfg_.seed, kWarmupEpisodes));
  const auto shuffle = data::derive_seed(cfg_.seed, kWarmupShuffle);
  std::string log = "epoch,loss,train_acc\n";
  for (std::size_t e = 0; e < cfg_.warmup_epochs; ++e)
    backbone_epoch(SamplingMode::random, cfg_.warmup_fraction, opt, rng, shuffle, e, log, e);
  require_unchanged(frozen, model_.policy_params(), "policy parameters");
  require_unchanged(critics, sac_->params(), "critic parameters");
  return log;
}

std::string Trainer::stage2_policy() {
  const auto frozen = checksum(model_.backbone_params());
  sac_->reset_optimizers();
  rl::ReplayBuffer buffer(cfg_.replay_capacity, data::derive_seed(cfg_.seed, kPolicyReplay));
  std::mt19937_64 rng(data::derive_seed(cfg_.seed, kPolicyEpisodes));
  const auto shuffle = data::derive_seed(cfg_.seed, kPolicyShuffle);
  std::string log = "step,policy_loss,critic_loss,alpha_loss,alpha,mean_reward,mean_frames\n";
  std::size_t step = 0;
  for (std::size_t e = 0; e < cfg_.policy_epochs; ++e) policy_epoch(buffer, rng, shuffle, e, log, step);
  require_unchanged(frozen, model_.backbone_params(), "backbone parameters");
  return log;
}

std::pair<std::string, std::string> Trainer::stage3_finetune() {
  sac_->reset_optimizers();
  Adam opt(model_.backbone_params(), {.lr = cfg_.finetune_lr});
  rl::ReplayBuffer buffer(cfg_.replay_capacity, data::derive_seed(cfg_.seed, kFinetuneReplay));
  std::mt19937_64 rng(data::derive_seed(cfg_.seed, kFinetuneEpisodes));
  const auto shuffle = data::derive_seed(cfg_.seed, kFinetuneShuffle);
  std::string backbone_log = "epoch,loss,train_acc\n";
  std::string policy_log = "step,policy_loss,critic_loss,alpha_loss,alpha,mean_reward,mean_frames\n";
  std::size_t epoch = 0, backbone_epochs = 0, step = 0;
  const bool backbone_first = cfg_.finetune_first == FinetuneFirst::backbone;
  for (std::size_t cycle = 0; cycle < cfg_.finetune_cycles; ++cycle) {
    for (int half = 0; half < 2; ++half) {
      const bool backbone_block = (half == 0) == backbone_first;
      if (backbone_block) {
        const auto frozen = checksum(model_.policy_params());
        for (std::size_t k = 0; k < cfg_.finetune_period; ++k)
          backbone_epoch(SamplingMode::argmax, 0.0, opt, rng, shuffle, epoch++, backbone_log,
                         backbone_epochs++);
        require_unchanged(frozen, model_.policy_params(), "policy parameters");
      } else {
        const auto frozen = checksum(model_.backbone_params());
        for (std::size_t k = 0; k < cfg_.finetune_period; ++k)
          policy_epoch(buffer, rng, shuffle, epoch++, policy_log, step);
        require_unchanged(frozen, model_.backbone_params(), "backbone parameters");
      }
    }
  }
  return {backbone_log, policy_log};
}

// ---------------------------------------------------------------------------
// Run directories
// ---------------------------------------------------------------------------

namespace {

namespace fs = std::filesystem;

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << text;
  if (!out) throw std::runtime_error("cannot write '" + p.string() + "'");
}

fs::path stage_checkpoint(const fs::path& dir, int stage) {
  return dir / "checkpoints" / ("stage" + std::to_string(stage) + ".vimc");
}

}  // namespace

RunResult train_run(const RunConfig& cfg, const fs::path& dir, bool force,
                    const std::function<void(const std::string&)>& progress) {
  auto say = [&](const std::string& msg) {
    if (progress) progress(msg);
  };
  validate(cfg);
  const std::string config_text = config_to_text(cfg);
  int completed = 0;
  if (!dir.empty()) {
    if (force && fs::exists(dir)) fs::remove_all(dir);
    if (fs::exists(dir / "config.txt")) {
      if (read_file(dir / "config.txt") != config_text)
        throw RunExists("run directory '" + dir.string() + "' holds a different config");
      if (fs::exists(dir / "report.txt"))
        throw RunExists("run directory '" + dir.string() + "' is already complete");
      for (int s = 3; s >= 1 && completed == 0; --s)
        if (fs::exists(stage_checkpoint(dir, s))) completed = s;
    }
    fs::create_directories(dir / "checkpoints");
    fs::create_directories(dir / "logs");
    write_file(dir / "config.txt", config_text);
  }

  auto split = load_data(cfg);
  Trainer trainer(cfg, split);
  if (completed > 0) {
    say("resuming after stage " + std::to_string(completed));
    auto params = trainer.checkpoint_params();
    assign_values(params, load_checkpoint(stage_checkpoint(dir, completed)));
  }

  RunResult result;
  auto finish_stage = [&](int stage) {
    ++result.stages_run;
    if (!dir.empty()) save_checkpoint(stage_checkpoint(dir, stage), trainer.checkpoint_params());
  };
  if (completed < 1) {
    say("stage 1: warm-up");
    auto log = trainer.stage1_warmup();
    if (!dir.empty()) write_file(dir / "logs" / "stage1.csv", log);
    finish_stage(1);
  }
  if (completed < 2) {
    say("stage 2: policy learning");
    auto log = trainer.stage2_policy();
    if (!dir.empty()) write_file(dir / "logs" / "stage2.csv", log);
    finish_stage(2);
  }
  if (completed < 3) {
    say("stage 3: fine-tuning");
    auto [backbone_log, policy_log] = trainer.stage3_finetune();
    if (!dir.empty()) {
      write_file(dir / "logs" / "stage3_backbone.csv", backbone_log);
      write_file(dir / "logs" / "stage3_policy.csv", policy_log);
    }
    finish_stage(3);
  }
  say("evaluating");
  result.report = evaluate(trainer.model(), cfg, split.test);
  result.checksum = checksum(trainer.checkpoint_params());
  if (!dir.empty()) write_file(dir / "report.txt", metrics::serialize(result.report));
  return result;
}

std::pair<RunConfig, Model> load_run(const fs::path& dir) {
  if (!fs::exists(dir / "config.txt")) throw std::runtime_error("no config.txt in '" + dir.string() + "'");
  RunConfig cfg = parse_config(read_file(dir / "config.txt"));
  int stage = 0;
  for (int s = 3; s >= 1 && stage == 0; --s)
    if (fs::exists(stage_checkpoint(dir, s))) stage = s;
  if (stage == 0) throw std::runtime_error("no checkpoint in '" + dir.string() + "'");
  auto tensors = load_checkpoint(stage_checkpoint(dir, stage));
  // Feature width and class count come from the stored classifier and encoder.
  std::size_t feature_dim = 0, classes = 0;
  for (const auto& p : tensors) {
    if (p.name == "model.classifier.weight") classes = p.tensor.dim(0);
    if (p.name == "model.locator0.temporal.lstm.weight") feature_dim = p.tensor.dim(1) - cfg.temporal_hidden;
  }
  if (classes == 0) throw FormatError("checkpoint lacks the classifier");
  if (feature_dim == 0) {
    if (cfg.spatial == SpatialKind::mlp_embedder) {
      for (const auto& p : tensors)
        if (p.name == "model.spatial.mlp.layer0.weight") feature_dim = p.tensor.dim(1);
    } else {
      feature_dim = cfg.data_dir.empty() ? cfg.feature_dim : load_data(cfg).train.front().feature_dim();
    }
  }
  Model model = build_model(cfg, feature_dim, classes, cfg.seed);
  ParamList wanted = prefixed("model", model.params());
  ParamList subset;
  for (const auto& p : tensors)
    if (p.name.rfind("model.", 0) == 0) subset.push_back(p);
  assign_values(wanted, subset);
  return {cfg, std::move(model)};
}

}  // namespace vimo::pipeline
