#include <cmath>

#include "doctest.h"
#include "map_oracle.hpp"
#include "vimo/metrics.hpp"

using namespace vimo::metrics;

TEST_CASE("top1 examples") {
  std::vector<std::vector<double>> all{{0.9, 0.1}, {0.2, 0.8}};
  std::vector<std::size_t> labels{0, 1};
  CHECK(top1_accuracy(all, labels) == 1.0);
  std::vector<std::vector<double>> tie{{0.5, 0.5}};
  std::vector<std::size_t> zero{0}, one{1};
  CHECK(top1_accuracy(tie, zero) == 1.0);
  CHECK(top1_accuracy(tie, one) == 0.0);
  std::vector<std::vector<double>> four{{1, 0}, {0, 1}, {1, 0}, {1, 0}};
  std::vector<std::size_t> l4{0, 1, 0, 1};
  CHECK(top1_accuracy(four, l4) == 0.75);
  CHECK_THROWS_AS(top1_accuracy({}, {}), std::invalid_argument);
}

TEST_CASE("average precision examples") {
  std::vector<std::vector<double>> s{{0.9}, {0.8}, {0.1}};
  std::vector<std::size_t> l{0, 1, 0};
  // Single class column 0, positives at ranks 1 and 3.
  CHECK(average_precision(s, l, 0) == (1.0 + 2.0 / 3.0) / 2.0);
  std::vector<std::vector<double>> sep{{0.9, 0.1}, {0.8, 0.3}, {0.2, 0.7}};
  std::vector<std::size_t> sl{0, 0, 1};
  CHECK(mean_average_precision(sep, sl) == 1.0);
  std::vector<std::size_t> none{5, 5, 5};
  CHECK_THROWS_AS(mean_average_precision(sep, none), std::invalid_argument);
}

TEST_CASE("mAP equals the brute-force oracles") {
  for (const auto& c : vimo::testing::generate_map_cases(3000, 17)) {
    CHECK(mean_average_precision(c.scores, c.labels) ==
          vimo::testing::brute_force_map(c.scores, c.labels));
    if (c.scores.size() <= 7)
      for (std::size_t k = 0; k < c.scores.front().size(); ++k) {
        const double a = average_precision(c.scores, c.labels, k);
        const double b = vimo::testing::permutation_ap(c.scores, c.labels, k);
        CHECK(((std::isnan(a) && std::isnan(b)) || a == b));
      }
  }
}

TEST_CASE("frame rate") {
  CHECK(std::abs(frame_rate(8.52) - 0.071) < 1e-12);
  CHECK(frame_rate(120) == 1.0);
  CHECK(frame_rate(0) == 0.0);
  CHECK_THROWS_AS(frame_rate(1, 0), std::invalid_argument);
}

TEST_CASE("flops ledger") {
  CostModel model;
  model.spatial_per_frame = 4.54e9;
  model.temporal_per_frame = 1000;
  model.policy_per_decision = 300;
  model.integration_by_units = {{3, 5000}};
  model.classifier = 77;
  std::vector<EpisodeTrace> traces{{4, 5, 3}, {7, 6, 3}};
  auto r = flops_ledger(traces, model);
  CHECK(r.frames_mean == 5.5);
  CHECK(r.flops_spatial == 4.54e9 * 5.5);
  CHECK(r.flops_temporal == 5500);
  CHECK(r.flops_policy == 1650);
  CHECK(r.flops_integration == 5000);
  CHECK(r.flops_classifier == 77);
  CHECK(r.flops_total == r.flops_spatial + r.flops_temporal + r.flops_policy +
                             r.flops_integration + r.flops_classifier);

  std::vector<EpisodeTrace> doubled{{8, 5, 3}, {14, 6, 3}};
  CHECK(flops_ledger(doubled, model).flops_spatial == 2 * r.flops_spatial);
  std::vector<EpisodeTrace> odd{{1, 1, 4}};
  CHECK_THROWS_AS(flops_ledger(odd, model), std::invalid_argument);
}

TEST_CASE("cost report serialization") {
  CostReport r{0.5, 0.61234567, 0.071, 8.52, 3.87e10, 3.868e10, 1e4, 2e3, 1e6, 77};
  const auto text = serialize(r);
  CHECK(text.find("mAP=0.612346\n") != std::string::npos);
  CHECK(text.find("flops_total=3.87e+10\n") != std::string::npos);
  CHECK(text.rfind("# ", 0) == 0);
  auto back = parse_cost_report(text);
  CHECK(back.top1 == 0.5);
  CHECK(back.flops_classifier == 77);
  CHECK(serialize(back) == text);
  CHECK_THROWS_AS(parse_cost_report("top1=0.5\n"), std::runtime_error);
}
