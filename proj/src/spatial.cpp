#include "vimo/spatial.hpp"

#include <string>

namespace vimo {

SpatialEncoder SpatialEncoder::passthrough(std::size_t dim, double cost) {
  SpatialEncoder enc;
  enc.kind_ = SpatialKind::passthrough;
  enc.input_dim_ = dim;
  enc.output_dim_ = dim;
  enc.declared_cost_ = cost;
  return enc;
}

SpatialEncoder SpatialEncoder::mlp_embedder(std::size_t in, std::size_t hidden,
                                            std::size_t out, std::mt19937_64& rng) {
  SpatialEncoder enc;
  enc.kind_ = SpatialKind::mlp_embedder;
  enc.input_dim_ = in;
  enc.output_dim_ = out;
  enc.mlp_ = nn::Mlp({in, hidden, out}, nn::Activation::relu, rng);
  // Matrix products only: 2·(in·hidden + hidden·out).
  double cost = 0.0;
  for (const auto& layer : enc.mlp_->layers) cost += static_cast<double>(layer.flops());
  enc.declared_cost_ = cost;
  return enc;
}

Tensor SpatialEncoder::encode_frame(const Tensor& frame, FrameCounter& counter) const {
  if (frame.rank() != 1 || frame.size() != input_dim_) {
    throw NumericError("encode_frame: expected width " + std::to_string(input_dim_) +
                       ", got " + shape_str(frame.shape()));
  }
  counter.frames.fetch_add(1);
  if (kind_ == SpatialKind::passthrough) return frame;
  return mlp_->forward(frame);
}

ParamList SpatialEncoder::params() const {
  if (!mlp_) return {};
  return prefixed("mlp", mlp_->params());
}

}  // namespace vimo
