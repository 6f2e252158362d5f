#pragma once

#include <atomic>
#include <cstdint>
#include <optional>
#include <random>

#include "vimo/nn.hpp"

namespace vimo {

/// Counts encoder invocations; every observed frame is charged exactly once.
struct FrameCounter {
  std::atomic<std::size_t> frames{0};
  void reset() { frames.store(0); }
  std::size_t value() const { return frames.load(); }
};

enum class SpatialKind { passthrough, mlp_embedder };

/// Modeled per-frame cost of the frozen image backbone in the precomputed
/// feature regime, calibrated so 8.52 frames/video give 38.7 GFLOPs.
inline constexpr double kPassthroughFrameCost = 4.54e9;

/// Frame encoder shared by every locator of a model.
class SpatialEncoder {
 public:
  /// Passthrough: output equals input, cost defaults to the calibrated constant.
  static SpatialEncoder passthrough(std::size_t dim, double cost = kPassthroughFrameCost);
  /// Trainable two-layer MLP in → hidden → out.
  static SpatialEncoder mlp_embedder(std::size_t in, std::size_t hidden, std::size_t out,
                                     std::mt19937_64& rng);

  SpatialKind kind() const { return kind_; }
  std::size_t input_dim() const { return input_dim_; }
  std::size_t output_dim() const { return output_dim_; }

  Tensor encode_frame(const Tensor& frame, FrameCounter& counter) const;
  /// FLOPs charged per encode_frame call.
  double declared_cost() const { return declared_cost_; }
  ParamList params() const;

 private:
  SpatialKind kind_ = SpatialKind::passthrough;
  std::size_t input_dim_ = 0;
  std::size_t output_dim_ = 0;
  double declared_cost_ = 0.0;
  std::optional<nn::Mlp> mlp_;
};

}  // namespace vimo
