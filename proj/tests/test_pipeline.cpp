#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "doctest.h"
#include "vimo/pipeline.hpp"

using namespace vimo;
using namespace vimo::pipeline;
namespace fs = std::filesystem;

namespace {

RunConfig tiny() {
  RunConfig c;
  c.frames = 30;
  c.feature_dim = 16;
  c.num_classes = 4;
  c.n_train = 24;
  c.n_test = 10;
  c.temporal_hidden = 8;
  c.policy_hidden = 8;
  c.policy_layers = 2;
  c.model_dim = 8;
  c.encoder_layers = 1;
  c.heads = 2;
  c.critic_hidden = 8;
  c.critic_layers = 2;
  c.sac_batch = 8;
  c.batch_size = 4;
  c.warmup_epochs = 2;
  c.warmup_lr = 1e-3;
  c.policy_epochs = 2;
  c.finetune_cycles = 1;
  c.finetune_period = 1;
  return c;
}

std::size_t lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

fs::path fresh_dir(const std::string& name) {
  auto d = fs::temp_directory_path() / ("vimo_test_" + name);
  fs::remove_all(d);
  return d;
}

std::set<std::string> listing(const fs::path& dir) {
  std::set<std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    out.insert(fs::relative(e.path(), dir).generic_string());
  return out;
}

}  // namespace

TEST_CASE("stages respect their freeze contracts") {
  const auto cfg = tiny();
  auto split = load_data(cfg);
  Trainer t(cfg, split);
  const auto policy0 = checksum(t.model().policy_params());
  const auto backbone0 = checksum(t.model().backbone_params());
  const auto critics0 = checksum(t.sac().params());

  auto log1 = t.stage1_warmup();
  CHECK(lines(log1) == 1 + cfg.warmup_epochs);
  CHECK(checksum(t.model().policy_params()) == policy0);
  CHECK(checksum(t.sac().params()) == critics0);
  const auto backbone1 = checksum(t.model().backbone_params());
  CHECK(backbone1 != backbone0);

  auto log2 = t.stage2_policy();
  CHECK(lines(log2) > 1);
  CHECK(checksum(t.model().backbone_params()) == backbone1);
  CHECK(checksum(t.model().policy_params()) != policy0);

  auto [bb, pol] = t.stage3_finetune();
  CHECK(lines(bb) == 1 + cfg.finetune_period);
  CHECK(lines(pol) > 1);
}

TEST_CASE("no policy step before the buffer holds a batch") {
  auto cfg = tiny();
  cfg.sac_batch = 100000;
  cfg.replay_capacity = 100000;
  auto split = load_data(cfg);
  Trainer t(cfg, split);
  const auto policy0 = checksum(t.model().policy_params());
  CHECK(lines(t.stage2_policy()) == 1);
  CHECK(checksum(t.model().policy_params()) == policy0);
}

TEST_CASE("warm-up loss drops below the uniform-prediction loss on default data") {
  RunConfig cfg;
  cfg.temporal_hidden = 16;
  cfg.model_dim = 16;
  cfg.encoder_layers = 1;
  cfg.critic_hidden = 8;
  cfg.critic_layers = 2;
  cfg.policy_hidden = 8;
  cfg.policy_layers = 2;
  cfg.warmup_epochs = 5;
  cfg.warmup_lr = 1e-3;
  auto split = load_data(cfg);
  Trainer t(cfg, split);
  std::istringstream log(t.stage1_warmup());
  std::string line, last;
  while (std::getline(log, line)) last = line;
  const double loss = std::stod(last.substr(last.find(',') + 1));
  CHECK(loss < std::log(10.0));
}

TEST_CASE("evaluation budgets and determinism") {
  RunConfig cfg;
  cfg.n_train = 10;
  cfg.n_test = 12;
  cfg.temporal_hidden = 8;
  cfg.policy_hidden = 8;
  cfg.model_dim = 8;
  cfg.encoder_layers = 1;
  auto split = load_data(cfg);
  auto model = build_model(cfg, split.train.front().feature_dim(), split.num_classes, cfg.seed);

  EvalOptions u25{.mode = SamplingMode::uniform, .fraction = 0.25};
  auto r = evaluate(model, cfg, split.test, u25);
  CHECK(r.frames_mean == 30.0);
  CHECK(r.frame_rate == 0.25);

  auto a = evaluate(model, cfg, split.test);
  auto b = evaluate(model, cfg, split.test);
  CHECK(a == b);
  CHECK(a.frame_rate > 0.0);
  CHECK(a.frame_rate <= 1.0);
  CHECK(a.frames_mean <= 12.0);

  EvalOptions rnd{.mode = SamplingMode::random, .fraction = 0.25, .seed = 7};
  CHECK(evaluate(model, cfg, split.test, rnd) == evaluate(model, cfg, split.test, rnd));
  CHECK_THROWS_AS(evaluate(model, cfg, std::span<const data::VideoSample>{}), std::invalid_argument);
}

TEST_CASE("full runs are reproducible and leave the declared layout") {
  const auto cfg = tiny();
  auto dir = fresh_dir("run");
  auto first = train_run(cfg, dir);
  CHECK(first.stages_run == 3);
  auto second = train_run(cfg);
  CHECK(second.report == first.report);
  CHECK(second.checksum == first.checksum);

  CHECK(listing(dir) == std::set<std::string>{
                            "config.txt", "report.txt", "checkpoints", "checkpoints/stage1.vimc",
                            "checkpoints/stage2.vimc", "checkpoints/stage3.vimc", "logs",
                            "logs/stage1.csv", "logs/stage2.csv", "logs/stage3_backbone.csv",
                            "logs/stage3_policy.csv"});

  // Completed directories are never overwritten implicitly.
  const auto before = fs::last_write_time(dir / "report.txt");
  CHECK_THROWS_AS(train_run(cfg, dir), RunExists);
  auto other = cfg;
  other.lambda = 0.2;
  CHECK_THROWS_AS(train_run(other, dir), RunExists);
  CHECK(fs::last_write_time(dir / "report.txt") == before);

  auto [loaded_cfg, model] = load_run(dir);
  CHECK(config_to_text(loaded_cfg) == config_to_text(cfg));
  auto split = load_data(cfg);
  CHECK(evaluate(model, cfg, split.test) == first.report);

  SUBCASE("interrupted after stage one resumes at stage two") {
    for (const char* f : {"report.txt", "checkpoints/stage2.vimc", "checkpoints/stage3.vimc",
                          "logs/stage2.csv", "logs/stage3_backbone.csv", "logs/stage3_policy.csv"})
      fs::remove(dir / f);
    auto resumed = train_run(cfg, dir);
    CHECK(resumed.stages_run == 2);
    CHECK(resumed.report == first.report);
    CHECK(resumed.checksum == first.checksum);
  }
  SUBCASE("force starts over") {
    auto forced = train_run(cfg, dir, true);
    CHECK(forced.stages_run == 3);
    CHECK(forced.checksum == first.checksum);
  }
  fs::remove_all(dir);
}
