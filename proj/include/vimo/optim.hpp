#pragma once

#include <span>
#include <vector>

#include "vimo/params.hpp"

namespace vimo {

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  long step = 0;
};

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// One bias-corrected Adam step applied in place to `params`.
void adam_update(std::span<double> params, std::span<const double> grads,
                 AdamState& state, const AdamOptions& opts);

/// Adam over a parameter collection. Throws NumericError if any parameter
/// becomes non-finite after a step.
class Adam {
 public:
  Adam(ParamList params, AdamOptions opts);

  void step();
  void zero_grad();
  const ParamList& params() const { return params_; }
  double lr() const { return opts_.lr; }

 private:
  ParamList params_;
  AdamOptions opts_;
  std::vector<AdamState> states_;
};

}  // namespace vimo
