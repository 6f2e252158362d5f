#include "vimo/optim.hpp"

#include <cmath>

namespace vimo {

void adam_update(std::span<double> params, std::span<const double> grads,
                 AdamState& state, const AdamOptions& opts) {
  if (grads.size() != params.size()) {
    throw NumericError("adam_update: gradient size mismatch");
  }
  if (state.m.empty()) {
    state.m.assign(params.size(), 0.0);
    state.v.assign(params.size(), 0.0);
  }
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw NumericError("adam_update: state size mismatch");
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(opts.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(opts.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    state.m[i] = opts.beta1 * state.m[i] + (1.0 - opts.beta1) * g;
    state.v[i] = opts.beta2 * state.v[i] + (1.0 - opts.beta2) * g * g;
    const double m_hat = state.m[i] / c1;
    const double v_hat = state.v[i] / c2;
    params[i] -= opts.lr * m_hat / (std::sqrt(v_hat) + opts.eps);
  }
}

Adam::Adam(ParamList params, AdamOptions opts)
    : params_(std::move(params)), opts_(opts), states_(params_.size()) {}

void Adam::step() {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& t = params_[i].tensor;
    const auto g = t.grad();
    adam_update(t.mutable_values(), g, states_[i], opts_);
    for (double v : t.values()) {
      if (!std::isfinite(v)) {
        throw NumericError("optimizer step produced non-finite value in '" +
                           params_[i].name + "'");
      }
    }
  }
}

void Adam::zero_grad() { vimo::zero_grad(params_); }

}  // namespace vimo
