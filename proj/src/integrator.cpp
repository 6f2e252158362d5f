#include "vimo/integrator.hpp"

#include <stdexcept>

namespace vimo {

Integrator::Integrator(const IntegratorConfig& config, std::mt19937_64& rng) : config_(config) {
  if (config.unit_dim == 0 || config.num_units == 0)
    throw std::invalid_argument("integrator needs positive unit width and count");
  switch (config.kind) {
    case IntegratorKind::mean_pool:
    case IntegratorKind::max_pool:
      break;
    case IntegratorKind::forward:
      forward_.emplace(std::vector<std::size_t>{config.unit_dim * config.num_units,
                                                config.forward_hidden, config.forward_hidden},
                       nn::Activation::relu, rng);
      break;
    case IntegratorKind::transformer: {
      if (config.unit_dim != config.model_dim) projection_.emplace(config.unit_dim, config.model_dim, rng);
      const std::size_t ff = config.ff_dim ? config.ff_dim : 2 * config.model_dim;
      encoder_.emplace(config.layers, config.model_dim, config.heads, ff, config.num_units,
                       config.position_embeddings, rng);
      break;
    }
  }
}

std::size_t Integrator::output_dim() const {
  switch (config_.kind) {
    case IntegratorKind::forward:
      return config_.forward_hidden;
    case IntegratorKind::transformer:
      return config_.model_dim;
    default:
      return config_.unit_dim;
  }
}

Tensor Integrator::integrate(std::span<const Tensor> units) const {
  if (units.empty()) throw std::invalid_argument("integrate needs at least one unit");
  for (const auto& u : units)
    if (u.rank() != 1 || u.size() != config_.unit_dim)
      throw NumericError("integrate: unit width " + shape_str(u.shape()) + ", expected " +
                         std::to_string(config_.unit_dim));
  switch (config_.kind) {
    case IntegratorKind::mean_pool:
      return mean_rows(stack_rows(units));
    case IntegratorKind::max_pool:
      return max_rows(stack_rows(units));
    case IntegratorKind::forward:
      if (units.size() != config_.num_units)
        throw NumericError("forward integrator expects a fixed unit count");
      return forward_->forward(concat(units));
    case IntegratorKind::transformer: {
      Tensor tokens = stack_rows(units);
      if (projection_) tokens = projection_->forward(tokens);
      // Mean over the output tokens; there is no class token.
      return mean_rows(encoder_->forward(tokens));
    }
  }
  throw std::logic_error("unknown integrator kind");
}

ParamList Integrator::params() const {
  ParamList out;
  if (forward_) append(out, prefixed("forward", forward_->params()));
  if (projection_) append(out, prefixed("projection", projection_->params()));
  if (encoder_) append(out, prefixed("encoder", encoder_->params()));
  return out;
}

std::uint64_t Integrator::flops(std::size_t n) const {
  const std::uint64_t d = config_.unit_dim;
  switch (config_.kind) {
    case IntegratorKind::mean_pool:
    case IntegratorKind::max_pool:
      return n * d;
    case IntegratorKind::forward:
      return forward_->flops();
    case IntegratorKind::transformer: {
      std::uint64_t total = encoder_->flops(n) + n * config_.model_dim;
      if (projection_) total += n * projection_->flops();
      return total;
    }
  }
  return 0;
}

Tensor intermediate_predict(std::span<const LocatorState> states, const Integrator& integrator,
                            const Classifier& classifier) {
  NoGradScope guard;
  std::vector<Tensor> units;
  units.reserve(states.size());
  for (const auto& s : states) {
    if (s.n_selected == 0) throw std::logic_error("intermediate_predict before any observation");
    units.push_back(s.hidden);
  }
  return classifier.classify(integrator.integrate(units));
}

}  // namespace vimo
