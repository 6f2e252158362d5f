#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "vimo/config.hpp"

using namespace vimo;

TEST_CASE("empty input gives the defaults") {
  RunConfig cfg = parse_config("");
  CHECK_NOTHROW(validate(cfg));
  CHECK(config_to_text(cfg) == config_to_text(RunConfig{}));
  CHECK(config_to_text(parse_config("# only a comment\n\n   \n")) == config_to_text(RunConfig{}));
}

TEST_CASE("default settings literal") {
  const RunConfig d;
  CHECK(d.locators == 3);
  CHECK(d.max_moves == 4);
  CHECK(d.delta == 3);
  CHECK(d.lambda == 0.1);
  CHECK(d.temporal == TemporalKind::lstm);
  CHECK(d.integrator == IntegratorKind::transformer);
  CHECK(d.fuse_initial_frame);
  CHECK_FALSE(d.region_fence);
  CHECK_FALSE(d.position_embeddings);
  CHECK(d.frame_penalty == FramePenalty::cumulative);
  CHECK(d.finetune_first == FinetuneFirst::backbone);
  CHECK(d.gamma == 0.99);
  CHECK(d.target_entropy == 0.6 * std::log(4.0));
  CHECK(d.policy_lr == 1e-5);
  CHECK(d.critic_lr == 5e-5);
  CHECK(d.alpha_lr == 5e-4);
  CHECK(d.warmup_lr == 1e-5);
  CHECK(d.finetune_lr == 1e-5);
  CHECK(d.finetune_period == 5);
  CHECK(d.batch_size == 8);
  CHECK(d.warmup_fraction == 0.25);
  CHECK(d.warmup_epochs == 15);
  CHECK(d.policy_epochs == 30);
  CHECK(d.finetune_cycles == 2);
  CHECK(d.frames == 120);
  CHECK(d.feature_dim == 64);
  CHECK(d.num_classes == 10);
  CHECK(d.units == 3);
  CHECK(d.salient_per_unit == 2);
  CHECK(d.n_train == 2000);
  CHECK(d.n_test == 500);
  CHECK(d.frame_basis == 120.0);
}

TEST_CASE("values, types and ranges") {
  CHECK(parse_config("lambda = 0.1").lambda == 0.1);
  CHECK(parse_config("lambda=0.2  # trailing comment\n").lambda == 0.2);
  CHECK(parse_config("temporal = mean_pool\nintegrator = forward").temporal == TemporalKind::mean_pool);
  CHECK(parse_config("fuse_initial_frame = false").fuse_initial_frame == false);
  CHECK_THROWS_AS(parse_config("delta = -1"), ConfigError);
  CHECK_THROWS_AS(parse_config("delta = 0"), ConfigError);
  CHECK_THROWS_AS(parse_config("lambda = -0.5"), ConfigError);
  CHECK_THROWS_AS(parse_config("tau = 1.5"), ConfigError);
  CHECK_THROWS_WITH_AS(parse_config("lamda = 0.1"), doctest::Contains("lamda"), ConfigError);
  CHECK_THROWS_AS(parse_config("locators = three"), ConfigError);
  CHECK_THROWS_AS(parse_config("temporal = gru"), ConfigError);
  CHECK_THROWS_AS(parse_config("fuse_initial_frame = maybe"), ConfigError);
  CHECK_THROWS_AS(parse_config("no equals sign"), ConfigError);
  RunConfig bad;
  bad.heads = 3;
  CHECK_THROWS_AS(validate(bad), ConfigError);
}

TEST_CASE("canonical text round trips") {
  RunConfig cfg;
  cfg.lambda = 0.15;
  cfg.noise_std = 1.0 / 3.0;
  cfg.temporal = TemporalKind::sum_pool;
  cfg.integrator = IntegratorKind::max_pool;
  cfg.region_fence = true;
  cfg.data_dir = "/tmp/some dir";
  cfg.seed = 1234567890123ull;
  const auto text = config_to_text(cfg);
  CHECK(config_to_text(parse_config(text)) == text);
  CHECK(parse_config(text).noise_std == cfg.noise_std);
  CHECK(config_keys().size() == static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n')));
}

TEST_CASE("file, environment and explicit precedence") {
  auto path = std::filesystem::temp_directory_path() / "vimo_test_config.conf";
  std::ofstream(path) << "lambda = 0.05\ndelta = 2\n";
  RunConfig cfg = load_config_file(path.string());
  CHECK(cfg.lambda == 0.05);
  CHECK(cfg.delta == 2);
  ::setenv("VIMO_DELTA", "5", 1);
  apply_env_overrides(cfg);
  ::unsetenv("VIMO_DELTA");
  CHECK(cfg.delta == 5);
  CHECK(cfg.lambda == 0.05);
  set_config_value(cfg, "delta", "1");
  CHECK(cfg.delta == 1);
  CHECK_THROWS_AS(load_config_file("/nonexistent/vimo.conf"), ConfigError);
  std::filesystem::remove(path);
}
