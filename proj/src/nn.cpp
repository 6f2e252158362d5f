#include "vimo/nn.hpp"

#include <cmath>
#include <string>

namespace vimo::nn {

Linear::Linear(std::size_t in, std::size_t out, std::mt19937_64& rng)
    : weight(Tensor::parameter({out, in}, uniform_init(out * in, in, rng))),
      bias(Tensor::parameter({out}, uniform_init(out, in, rng))) {}

ParamList Linear::params() const { return {{"weight", weight}, {"bias", bias}}; }

std::uint64_t Linear::flops() const { return 2ull * in_dim() * out_dim(); }

LstmCell::LstmCell(std::size_t input, std::size_t hidden, std::mt19937_64& rng)
    : input_dim(input),
      hidden_dim(hidden),
      weight(Tensor::parameter({4 * hidden, input + hidden},
                               uniform_init(4 * hidden * (input + hidden), hidden, rng))),
      bias(Tensor::parameter({4 * hidden}, uniform_init(4 * hidden, hidden, rng))) {}

std::pair<Tensor, Tensor> LstmCell::step(const Tensor& x, const Tensor& h_prev,
                                         const Tensor& c_prev) const {
  if (x.rank() != 1 || x.size() != input_dim || h_prev.size() != hidden_dim ||
      c_prev.size() != hidden_dim) {
    throw NumericError("lstm_step: expected x[" + std::to_string(input_dim) +
                       "], h/c[" + std::to_string(hidden_dim) + "], got x" +
                       shape_str(x.shape()));
  }
  const std::size_t H = hidden_dim;
  Tensor gates = linear(concat({x, h_prev}), weight, bias);
  Tensor i = sigmoid(slice(gates, 0, H));
  Tensor f = sigmoid(slice(gates, H, H));
  Tensor g = vimo::tanh(slice(gates, 2 * H, H));
  Tensor o = sigmoid(slice(gates, 3 * H, H));
  Tensor c = add(mul(f, c_prev), mul(i, g));
  Tensor h = mul(o, vimo::tanh(c));
  return {h, c};
}

ParamList LstmCell::params() const { return {{"weight", weight}, {"bias", bias}}; }

std::uint64_t LstmCell::flops() const {
  return 8ull * (input_dim + hidden_dim) * hidden_dim + 24ull * hidden_dim;
}

Tensor activate(Activation act, const Tensor& x) {
  return act == Activation::relu ? relu(x) : vimo::tanh(x);
}

Mlp::Mlp(const std::vector<std::size_t>& dims, Activation act, std::mt19937_64& rng)
    : activation(act) {
  if (dims.size() < 2) throw NumericError("Mlp needs at least input and output widths");
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    layers.emplace_back(dims[i], dims[i + 1], rng);
  }
}

Tensor mlp_forward(const std::vector<Linear>& layers, Activation act, const Tensor& x) {
  if (layers.empty()) throw NumericError("mlp_forward: no layers");
  Tensor y = x;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (i > 0 && layers[i].in_dim() != layers[i - 1].out_dim()) {
      throw NumericError("mlp_forward: consecutive layer widths disagree");
    }
    y = layers[i].forward(y);
    if (i + 1 < layers.size()) y = activate(act, y);
  }
  return y;
}

Tensor Mlp::forward(const Tensor& x) const { return mlp_forward(layers, activation, x); }

ParamList Mlp::params() const {
  ParamList out;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    append(out, prefixed("layer" + std::to_string(i), layers[i].params()));
  }
  return out;
}

std::uint64_t Mlp::flops() const {
  std::uint64_t total = 0;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    total += layers[i].flops();
    if (i + 1 < layers.size()) total += layers[i].out_dim();
  }
  return total;
}

LayerNorm::LayerNorm(std::size_t width)
    : gamma(Tensor::parameter({width}, std::vector<double>(width, 1.0))),
      beta(Tensor::parameter({width}, std::vector<double>(width, 0.0))) {}

ParamList LayerNorm::params() const { return {{"gamma", gamma}, {"beta", beta}}; }

MultiHeadSelfAttention::MultiHeadSelfAttention(std::size_t dim, std::size_t num_heads,
                                               std::mt19937_64& rng)
    : model_dim(dim), heads(num_heads) {
  if (num_heads == 0 || dim % num_heads != 0) {
    throw NumericError("attention: model_dim " + std::to_string(dim) +
                       " not divisible by heads " + std::to_string(num_heads));
  }
  query = Linear(dim, dim, rng);
  key = Linear(dim, dim, rng);
  value = Linear(dim, dim, rng);
  output = Linear(dim, dim, rng);
}

Tensor MultiHeadSelfAttention::forward(const Tensor& units,
                                       std::vector<Tensor>* weights) const {
  if (units.rank() != 2 || units.dim(0) == 0 || units.dim(1) != model_dim) {
    throw NumericError("attention: expected [N x " + std::to_string(model_dim) +
                       "], got " + shape_str(units.shape()));
  }
  const std::size_t head_dim = model_dim / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(head_dim));
  Tensor q = query.forward(units);
  Tensor k = key.forward(units);
  Tensor v = value.forward(units);
  std::vector<Tensor> per_head;
  per_head.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    Tensor qh = slice_cols(q, h * head_dim, head_dim);
    Tensor kh = slice_cols(k, h * head_dim, head_dim);
    Tensor vh = slice_cols(v, h * head_dim, head_dim);
    Tensor attn = softmax(scale(matmul(qh, transpose(kh)), inv_sqrt));
    if (weights != nullptr) weights->push_back(attn);
    per_head.push_back(matmul(attn, vh));
  }
  return output.forward(concat_cols(per_head));
}

ParamList MultiHeadSelfAttention::params() const {
  ParamList out;
  append(out, prefixed("query", query.params()));
  append(out, prefixed("key", key.params()));
  append(out, prefixed("value", value.params()));
  append(out, prefixed("output", output.params()));
  return out;
}

std::uint64_t MultiHeadSelfAttention::flops(std::size_t tokens) const {
  const std::uint64_t n = tokens, d = model_dim;
  const std::uint64_t projections = 4 * n * 2 * d * d;
  const std::uint64_t scores = 2 * n * n * d;
  const std::uint64_t softmax_elems = n * n * heads;
  const std::uint64_t mix = 2 * n * n * d;
  return projections + scores + softmax_elems + mix;
}

EncoderBlock::EncoderBlock(std::size_t dim, std::size_t heads, std::size_t ff_dim,
                           std::mt19937_64& rng)
    : norm1(dim), norm2(dim), attention(dim, heads, rng), ff_in(dim, ff_dim, rng),
      ff_out(ff_dim, dim, rng) {}

Tensor EncoderBlock::forward(const Tensor& units) const {
  Tensor x = add(units, attention.forward(norm1.forward(units)));
  Tensor ff = ff_out.forward(relu(ff_in.forward(norm2.forward(x))));
  return add(x, ff);
}

ParamList EncoderBlock::params() const {
  ParamList out;
  append(out, prefixed("norm1", norm1.params()));
  append(out, prefixed("attention", attention.params()));
  append(out, prefixed("norm2", norm2.params()));
  append(out, prefixed("ff_in", ff_in.params()));
  append(out, prefixed("ff_out", ff_out.params()));
  return out;
}

std::uint64_t EncoderBlock::flops(std::size_t tokens) const {
  const std::uint64_t n = tokens;
  const std::uint64_t d = attention.model_dim;
  const std::uint64_t f = ff_in.out_dim();
  const std::uint64_t norms = 2 * n * d;
  const std::uint64_t residuals = 2 * n * d;
  const std::uint64_t feed_forward = n * (ff_in.flops() + ff_out.flops()) + n * f;
  return norms + residuals + attention.flops(tokens) + feed_forward;
}

TransformerEncoder::TransformerEncoder(std::size_t layers, std::size_t dim,
                                       std::size_t heads, std::size_t ff_dim,
                                       std::size_t max_tokens,
                                       bool position_embeddings,
                                       std::mt19937_64& rng)
    : final_norm(dim) {
  for (std::size_t i = 0; i < layers; ++i) blocks.emplace_back(dim, heads, ff_dim, rng);
  if (position_embeddings) {
    positions = Tensor::parameter({max_tokens, dim},
                                  uniform_init(max_tokens * dim, dim, rng));
  }
}

Tensor TransformerEncoder::forward(const Tensor& units) const {
  if (units.rank() != 2 || units.dim(0) == 0 || units.dim(1) != model_dim()) {
    throw NumericError("transformer: expected [N x " + std::to_string(model_dim()) +
                       "], got " + shape_str(units.shape()));
  }
  Tensor x = units;
  if (positions) {
    const std::size_t n = units.dim(0);
    if (n > positions->dim(0)) {
      throw NumericError("transformer: more tokens than position embeddings");
    }
    std::vector<Tensor> rows;
    for (std::size_t i = 0; i < n; ++i) rows.push_back(row(*positions, i));
    x = add(x, stack_rows(rows));
  }
  for (const auto& block : blocks) x = block.forward(x);
  return final_norm.forward(x);
}

ParamList TransformerEncoder::params() const {
  ParamList out;
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    append(out, prefixed("block" + std::to_string(i), blocks[i].params()));
  }
  append(out, prefixed("final_norm", final_norm.params()));
  if (positions) out.push_back({"positions", *positions});
  return out;
}

std::uint64_t TransformerEncoder::flops(std::size_t tokens) const {
  const std::uint64_t nd = static_cast<std::uint64_t>(tokens) * model_dim();
  std::uint64_t total = nd;  // final norm
  if (positions) total += nd;
  for (const auto& block : blocks) total += block.flops(tokens);
  return total;
}

}  // namespace vimo::nn
