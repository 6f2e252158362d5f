#pragma once

#include <optional>
#include <random>
#include <span>

#include "vimo/locator.hpp"
#include "vimo/nn.hpp"

namespace vimo {

enum class IntegratorKind { mean_pool, max_pool, forward, transformer };

struct IntegratorConfig {
  IntegratorKind kind = IntegratorKind::transformer;
  std::size_t unit_dim = 0;
  std::size_t num_units = 3;
  /// Width of the two-layer forward network over concatenated units.
  std::size_t forward_hidden = 512;
  std::size_t model_dim = 256;
  std::size_t layers = 8;
  std::size_t heads = 4;
  std::size_t ff_dim = 0;  // 0 means 2·model_dim
  bool position_embeddings = false;
};

/// Multi-unit integration: aggregates N unit embeddings into one global
/// representation G_v.
class Integrator {
 public:
  Integrator() = default;
  Integrator(const IntegratorConfig& config, std::mt19937_64& rng);

  IntegratorKind kind() const { return config_.kind; }
  std::size_t output_dim() const;
  Tensor integrate(std::span<const Tensor> units) const;
  ParamList params() const;
  std::uint64_t flops(std::size_t num_units) const;

 private:
  IntegratorConfig config_;
  std::optional<nn::Mlp> forward_;
  std::optional<nn::Linear> projection_;
  std::optional<nn::TransformerEncoder> encoder_;
};

struct Classifier {
  nn::Linear head;

  Classifier() = default;
  Classifier(std::size_t in, std::size_t classes, std::mt19937_64& rng) : head(in, classes, rng) {}

  std::size_t num_classes() const { return head.out_dim(); }
  Tensor logits(const Tensor& global) const { return head.forward(global); }
  Tensor classify(const Tensor& global) const { return softmax(logits(global)); }
  ParamList params() const { return head.params(); }
  /// Linear head plus one per logit for the softmax.
  std::uint64_t flops() const { return head.flops() + head.out_dim(); }
};

/// Class probabilities from the locators' current contexts; stopped locators
/// contribute their frozen embeddings. Evaluated without recording.
Tensor intermediate_predict(std::span<const LocatorState> states, const Integrator& integrator,
                            const Classifier& classifier);

}  // namespace vimo
