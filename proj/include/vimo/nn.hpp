#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <utility>
#include <vector>

#include "vimo/params.hpp"
#include "vimo/tensor.hpp"

namespace vimo::nn {

struct Linear {
  Tensor weight;  // [out x in]
  Tensor bias;    // [out]

  Linear() = default;
  Linear(std::size_t in, std::size_t out, std::mt19937_64& rng);

  std::size_t in_dim() const { return weight.dim(1); }
  std::size_t out_dim() const { return weight.dim(0); }

  Tensor forward(const Tensor& x) const { return linear(x, weight, bias); }
  ParamList params() const;
  /// 2·in·out per input row.
  std::uint64_t flops() const;
};

/// Gate order in the stacked weight: input, forget, cell, output.
struct LstmCell {
  std::size_t input_dim = 0;
  std::size_t hidden_dim = 0;
  Tensor weight;  // [4H x (in + H)]
  Tensor bias;    // [4H]

  LstmCell() = default;
  LstmCell(std::size_t input, std::size_t hidden, std::mt19937_64& rng);

  /// Returns (h, c).
  std::pair<Tensor, Tensor> step(const Tensor& x, const Tensor& h_prev,
                                 const Tensor& c_prev) const;
  ParamList params() const;
  /// 8·(in+hidden)·hidden + 24·hidden.
  std::uint64_t flops() const;
};

enum class Activation { relu, tanh };

Tensor activate(Activation act, const Tensor& x);

/// Alternating linear/activation layers with no activation after the last.
struct Mlp {
  std::vector<Linear> layers;
  Activation activation = Activation::relu;

  Mlp() = default;
  /// `dims` lists widths input → hidden... → output; needs at least two.
  Mlp(const std::vector<std::size_t>& dims, Activation act, std::mt19937_64& rng);

  std::size_t in_dim() const { return layers.front().in_dim(); }
  std::size_t out_dim() const { return layers.back().out_dim(); }

  Tensor forward(const Tensor& x) const;
  ParamList params() const;
  /// Linear FLOPs plus one per activation element.
  std::uint64_t flops() const;
};

Tensor mlp_forward(const std::vector<Linear>& layers, Activation act, const Tensor& x);

struct LayerNorm {
  Tensor gamma;
  Tensor beta;
  double eps = 1e-5;

  LayerNorm() = default;
  explicit LayerNorm(std::size_t width);

  Tensor forward(const Tensor& x) const { return layer_norm(x, gamma, beta, eps); }
  ParamList params() const;
};

struct MultiHeadSelfAttention {
  std::size_t model_dim = 0;
  std::size_t heads = 0;
  Linear query, key, value, output;

  MultiHeadSelfAttention() = default;
  MultiHeadSelfAttention(std::size_t dim, std::size_t num_heads, std::mt19937_64& rng);

  /// units: [N x D] -> [N x D]. When `weights` is given it receives one
  /// [N x N] attention matrix per head.
  Tensor forward(const Tensor& units, std::vector<Tensor>* weights = nullptr) const;
  ParamList params() const;
  std::uint64_t flops(std::size_t tokens) const;
};

/// Pre-norm block: x + MHSA(LN(x)), then x + FF(LN(x)).
struct EncoderBlock {
  LayerNorm norm1, norm2;
  MultiHeadSelfAttention attention;
  Linear ff_in, ff_out;

  EncoderBlock() = default;
  EncoderBlock(std::size_t dim, std::size_t heads, std::size_t ff_dim,
               std::mt19937_64& rng);

  Tensor forward(const Tensor& units) const;
  ParamList params() const;
  std::uint64_t flops(std::size_t tokens) const;
};

struct TransformerEncoder {
  std::vector<EncoderBlock> blocks;
  LayerNorm final_norm;
  /// Learned embeddings indexed by token ordinal; empty when disabled.
  std::optional<Tensor> positions;

  TransformerEncoder() = default;
  TransformerEncoder(std::size_t layers, std::size_t dim, std::size_t heads,
                     std::size_t ff_dim, std::size_t max_tokens,
                     bool position_embeddings, std::mt19937_64& rng);

  std::size_t model_dim() const { return final_norm.gamma.size(); }

  Tensor forward(const Tensor& units) const;
  ParamList params() const;
  std::uint64_t flops(std::size_t tokens) const;
};

}  // namespace vimo::nn
