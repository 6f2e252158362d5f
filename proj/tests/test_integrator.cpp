#include <algorithm>
#include <cmath>
#include <random>

#include "doctest.h"
#include "gradcheck.hpp"
#include "vimo/integrator.hpp"

using namespace vimo;
using vimo::testing::gradcheck;
using vimo::testing::project;
using vimo::testing::random_tensor;
using vimo::testing::tensors_of;

namespace {

Integrator make(IntegratorKind kind, std::size_t dim, std::size_t n, std::mt19937_64& rng,
                std::size_t model_dim = 8) {
  IntegratorConfig cfg;
  cfg.kind = kind;
  cfg.unit_dim = dim;
  cfg.num_units = n;
  cfg.forward_hidden = 6;
  cfg.model_dim = model_dim;
  cfg.layers = 2;
  cfg.heads = 2;
  return Integrator(cfg, rng);
}

}  // namespace

TEST_CASE("pooling integrators") {
  std::mt19937_64 rng(1);
  std::vector<Tensor> units{Tensor::vector({1, 0}), Tensor::vector({0, 1})};
  CHECK(make(IntegratorKind::mean_pool, 2, 2, rng).integrate(units).to_vector() ==
        std::vector<double>{0.5, 0.5});
  CHECK(make(IntegratorKind::max_pool, 2, 2, rng).integrate(units).to_vector() ==
        std::vector<double>{1, 1});

  // Exact permutation invariance for the pools.
  std::vector<Tensor> many;
  for (int i = 0; i < 4; ++i) many.push_back(random_tensor({5}, rng, -1, 1, false));
  auto shuffled = many;
  std::reverse(shuffled.begin(), shuffled.end());
  for (auto kind : {IntegratorKind::mean_pool, IntegratorKind::max_pool}) {
    auto intg = make(kind, 5, 4, rng);
    auto a = intg.integrate(many).to_vector(), b = intg.integrate(shuffled).to_vector();
    for (std::size_t j = 0; j < 5; ++j) CHECK(std::abs(a[j] - b[j]) < 1e-15);
  }
  CHECK_THROWS_AS(make(IntegratorKind::mean_pool, 2, 2, rng).integrate(
                      std::vector<Tensor>{Tensor::vector({1, 2, 3})}),
                  NumericError);
}

TEST_CASE("forward and transformer integrators") {
  std::mt19937_64 rng(2);
  auto fwd = make(IntegratorKind::forward, 3, 2, rng);
  std::vector<Tensor> units{random_tensor({3}, rng, -1, 1, false),
                            random_tensor({3}, rng, -1, 1, false)};
  CHECK(fwd.integrate(units).size() == fwd.output_dim());

  auto single = make(IntegratorKind::transformer, 8, 1, rng);
  std::vector<Tensor> one{random_tensor({8}, rng, -1, 1, false)};
  CHECK(single.integrate(one).shape() == Shape{8});

  auto projected = make(IntegratorKind::transformer, 5, 3, rng, 8);
  std::vector<Tensor> three;
  for (int i = 0; i < 3; ++i) three.push_back(random_tensor({5}, rng, -1, 1, false));
  CHECK(projected.integrate(three).shape() == Shape{8});
  CHECK(projected.output_dim() == 8);
}

TEST_CASE("classifier examples") {
  std::mt19937_64 rng(3);
  Classifier cls(4, 5, rng);
  for (auto& p : cls.params())
    for (double& w : p.tensor.mutable_values()) w = 0.0;
  Tensor uniform = cls.classify(Tensor::vector({1, 2, 3, 4}));
  for (double p : uniform.values()) CHECK(p == 0.2);

  Classifier rnd(4, 5, rng);
  Tensor g = random_tensor({4}, rng, -2, 2, false);
  auto probs = rnd.classify(g).to_vector();
  auto logits = rnd.logits(g).to_vector();
  double total = 0;
  for (double p : probs) total += p;
  CHECK(std::abs(total - 1.0) < 1e-9);
  CHECK(std::max_element(probs.begin(), probs.end()) - probs.begin() ==
        std::max_element(logits.begin(), logits.end()) - logits.begin());
  CHECK_THROWS_AS(rnd.classify(Tensor::zeros({3})), NumericError);
  CHECK(rnd.flops() == 2u * 4 * 5 + 5);
}

TEST_CASE("intermediate prediction matches the final prediction") {
  std::mt19937_64 rng(4);
  auto intg = make(IntegratorKind::transformer, 6, 3, rng);
  Classifier cls(intg.output_dim(), 4, rng);
  auto states = init_locators(3, 30, 4, 6);
  CHECK_THROWS_AS(intermediate_predict(states, intg, cls), std::logic_error);
  for (auto& s : states) {
    s.hidden = random_tensor({6}, rng, -1, 1, false);
    s.n_selected = 1;
    s.stopped = true;
  }
  auto a = intermediate_predict(states, intg, cls).to_vector();
  auto b = intermediate_predict(states, intg, cls).to_vector();
  CHECK(a == b);
  std::vector<Tensor> units;
  for (const auto& s : states) units.push_back(s.hidden);
  CHECK(cls.classify(intg.integrate(units)).to_vector() == a);
}

TEST_CASE("finite-difference checks for integrators and classifier") {
  for (std::uint64_t cfg = 0; cfg < 5; ++cfg) {
    std::mt19937_64 rng(200 + cfg);
    const std::size_t n = 1 + cfg % 3, d = 3 + cfg % 2;
    std::vector<Tensor> units;
    for (std::size_t i = 0; i < n; ++i) units.push_back(random_tensor({d}, rng));
    for (auto kind : {IntegratorKind::mean_pool, IntegratorKind::max_pool,
                      IntegratorKind::forward, IntegratorKind::transformer}) {
      auto intg = make(kind, d, n, rng, 4);
      Classifier cls(intg.output_dim(), 3, rng);
      auto inputs = tensors_of(intg.params());
      auto head = tensors_of(cls.params());
      inputs.insert(inputs.end(), head.begin(), head.end());
      inputs.insert(inputs.end(), units.begin(), units.end());
      const std::size_t label = cfg % 3;
      CHECK(gradcheck([&] { return cross_entropy(cls.logits(intg.integrate(units)), label); },
                      inputs) < 1e-4);
      CHECK(gradcheck([&] { return project(cls.classify(intg.integrate(units)), cfg); }, inputs) <
            1e-4);
    }
  }
}
