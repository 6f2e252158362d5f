#include "vimo/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace vimo {

namespace {

thread_local Tape* g_active_tape = nullptr;

using ImplPtr = std::shared_ptr<detail::TensorImpl>;
using BackwardFn = std::function<void(const detail::TensorImpl&)>;

void check_finite(std::span<const double> values, const char* op) {
  for (double v : values) {
    if (!std::isfinite(v)) {
      throw NumericError(std::string("non-finite value produced by ") + op);
    }
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw NumericError(std::string(op) + ": shape mismatch " +
                       shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

bool any_requires_grad(std::initializer_list<const Tensor*> inputs) {
  for (const Tensor* t : inputs) {
    if (t->requires_grad()) return true;
  }
  return false;
}

// Builds the output tensor and, when recording, appends the backward rule.
// `make_backward` is only invoked when a node is actually recorded so that
// inference pays nothing for closure construction.
template <typename MakeBackward>
Tensor finish(const char* op, Shape shape, std::vector<double> values,
              std::initializer_list<const Tensor*> inputs,
              MakeBackward&& make_backward) {
  check_finite(values, op);
  auto out = std::make_shared<detail::TensorImpl>();
  out->shape = std::move(shape);
  out->values = std::move(values);
  Tape* tape = g_active_tape;
  if (tape != nullptr && any_requires_grad(inputs)) {
    out->requires_grad = true;
    Tape::Node node;
    node.output = out;
    for (const Tensor* t : inputs) node.inputs.push_back(t->impl());
    node.backward = make_backward();
    tape->record(std::move(node));
  }
  return Tensor(std::move(out));
}

std::span<double> grad_of(const Tensor& t) { return t.impl()->ensure_grad(); }

}  // namespace

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::span<double> detail::TensorImpl::ensure_grad() {
  if (grad.empty()) grad.assign(values.size(), 0.0);
  return grad;
}

// ---------------------------------------------------------------------------
// Tensor
// ---------------------------------------------------------------------------

Tensor::Tensor() : impl_(std::make_shared<detail::TensorImpl>()) {
  impl_->shape = {0};
}

Tensor::Tensor(std::shared_ptr<detail::TensorImpl> impl)
    : impl_(std::move(impl)) {}

Tensor Tensor::from(Shape shape, std::vector<double> values) {
  if (shape_size(shape) != values.size()) {
    throw NumericError("Tensor::from: shape " + shape_str(shape) +
                       " does not match " + std::to_string(values.size()) +
                       " values");
  }
  check_finite(values, "Tensor::from");
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = std::move(shape);
  impl->values = std::move(values);
  return Tensor(std::move(impl));
}

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }

Tensor Tensor::full(Shape shape, double value) {
  std::vector<double> values(shape_size(shape), value);
  return from(std::move(shape), std::move(values));
}

Tensor Tensor::vector(std::vector<double> values) {
  Shape shape{values.size()};
  return from(std::move(shape), std::move(values));
}

Tensor Tensor::scalar(double value) { return from({1}, {value}); }

Tensor Tensor::parameter(Shape shape, std::vector<double> values) {
  Tensor t = from(std::move(shape), std::move(values));
  t.set_requires_grad(true);
  return t;
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= rank()) throw NumericError("Tensor::dim: axis out of range");
  return impl_->shape[axis];
}

std::size_t Tensor::rows() const {
  if (rank() == 1) return 1;
  if (rank() == 2) return impl_->shape[0];
  throw NumericError("rows() on tensor of rank " + std::to_string(rank()));
}

std::size_t Tensor::cols() const {
  if (rank() == 1) return impl_->shape[0];
  if (rank() == 2) return impl_->shape[1];
  throw NumericError("cols() on tensor of rank " + std::to_string(rank()));
}

double Tensor::at(std::size_t r, std::size_t c) const {
  return impl_->values[r * cols() + c];
}

double Tensor::item() const {
  if (size() != 1) {
    throw NumericError("item() on tensor of shape " + shape_str(shape()));
  }
  return impl_->values[0];
}

std::vector<double> Tensor::grad() const {
  if (impl_->grad.empty()) return std::vector<double>(size(), 0.0);
  return impl_->grad;
}

void Tensor::zero_grad() {
  if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

Tensor Tensor::clone() const {
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = impl_->shape;
  impl->values = impl_->values;
  impl->requires_grad = impl_->requires_grad;
  return Tensor(std::move(impl));
}

// ---------------------------------------------------------------------------
// Tape
// ---------------------------------------------------------------------------

void Tape::backward(const Tensor& loss) {
  if (loss.size() != 1) {
    throw NumericError("backward: loss must be a scalar, got " +
                       shape_str(loss.shape()));
  }
  if (!loss.requires_grad()) return;
  loss.impl()->ensure_grad()[0] += 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    const detail::TensorImpl& out = *it->output;
    if (out.grad.empty()) continue;
    it->backward(out);
    for (const auto& in : it->inputs) {
      if (!in->grad.empty()) check_finite(in->grad, "backward");
    }
  }
}

TapeScope::TapeScope(Tape& tape) : previous_(g_active_tape) {
  g_active_tape = &tape;
}
TapeScope::~TapeScope() { g_active_tape = previous_; }

NoGradScope::NoGradScope() : previous_(g_active_tape) {
  g_active_tape = nullptr;
}
NoGradScope::~NoGradScope() { g_active_tape = previous_; }

Tape* active_tape() { return g_active_tape; }

void backward(const Tensor& loss, Tape& tape) { tape.backward(loss); }

// ---------------------------------------------------------------------------
// Elementwise
// ---------------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a[i] + b[i];
  return finish("add", a.shape(), std::move(v), {&a, &b}, [a, b] {
    return [a, b](const detail::TensorImpl& out) {
      if (a.requires_grad()) {
        auto g = grad_of(a);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += out.grad[i];
      }
      if (b.requires_grad()) {
        auto g = grad_of(b);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += out.grad[i];
      }
    };
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a[i] - b[i];
  return finish("sub", a.shape(), std::move(v), {&a, &b}, [a, b] {
    return [a, b](const detail::TensorImpl& out) {
      if (a.requires_grad()) {
        auto g = grad_of(a);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += out.grad[i];
      }
      if (b.requires_grad()) {
        auto g = grad_of(b);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] -= out.grad[i];
      }
    };
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a[i] * b[i];
  return finish("mul", a.shape(), std::move(v), {&a, &b}, [a, b] {
    return [a, b](const detail::TensorImpl& out) {
      if (a.requires_grad()) {
        auto g = grad_of(a);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += out.grad[i] * b[i];
      }
      if (b.requires_grad()) {
        auto g = grad_of(b);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += out.grad[i] * a[i];
      }
    };
  });
}

Tensor minimum(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "minimum");
  std::vector<double> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::min(a[i], b[i]);
  return finish("minimum", a.shape(), std::move(v), {&a, &b}, [a, b] {
    return [a, b](const detail::TensorImpl& out) {
      for (std::size_t i = 0; i < out.grad.size(); ++i) {
        const Tensor& pick = a[i] <= b[i] ? a : b;
        if (pick.requires_grad()) grad_of(pick)[i] += out.grad[i];
      }
    };
  });
}

Tensor maximum(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "maximum");
  std::vector<double> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::max(a[i], b[i]);
  return finish("maximum", a.shape(), std::move(v), {&a, &b}, [a, b] {
    return [a, b](const detail::TensorImpl& out) {
      for (std::size_t i = 0; i < out.grad.size(); ++i) {
        const Tensor& pick = a[i] >= b[i] ? a : b;
        if (pick.requires_grad()) grad_of(pick)[i] += out.grad[i];
      }
    };
  });
}

Tensor scale(const Tensor& x, double factor) {
  std::vector<double> v(x.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = x[i] * factor;
  return finish("scale", x.shape(), std::move(v), {&x}, [x, factor] {
    return [x, factor](const detail::TensorImpl& out) {
      auto g = grad_of(x);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += out.grad[i] * factor;
    };
  });
}

Tensor add_scalar(const Tensor& x, double offset) {
  std::vector<double> v(x.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = x[i] + offset;
  return finish("add_scalar", x.shape(), std::move(v), {&x}, [x] {
    return [x](const detail::TensorImpl& out) {
      auto g = grad_of(x);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += out.grad[i];
    };
  });
}

Tensor scale_by(const Tensor& x, const Tensor& s) {
  if (s.size() != 1) throw NumericError("scale_by: factor must be a scalar");
  const double f = s[0];
  std::vector<double> v(x.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = x[i] * f;
  return finish("scale_by", x.shape(), std::move(v), {&x, &s}, [x, s] {
    return [x, s](const detail::TensorImpl& out) {
      const double f = s[0];
      if (x.requires_grad()) {
        auto g = grad_of(x);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += out.grad[i] * f;
      }
      if (s.requires_grad()) {
        double acc = 0.0;
        for (std::size_t i = 0; i < out.grad.size(); ++i) acc += out.grad[i] * x[i];
        grad_of(s)[0] += acc;
      }
    };
  });
}

namespace {

// Unary op whose derivative is expressed through input x and output y.
template <typename Fwd, typename Deriv>
Tensor unary(const char* op, const Tensor& x, Fwd fwd, Deriv deriv) {
  std::vector<double> v(x.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = fwd(x[i]);
  auto out_values = v;  // kept for derivative rules that use the output
  return finish(op, x.shape(), std::move(v), {&x},
                [x, deriv, y = std::move(out_values)] {
                  return [x, deriv, y](const detail::TensorImpl& out) {
                    auto g = grad_of(x);
                    for (std::size_t i = 0; i < g.size(); ++i) {
                      g[i] += out.grad[i] * deriv(x[i], y[i]);
                    }
                  };
                });
}

}  // namespace

Tensor tanh(const Tensor& x) {
  return unary(
      "tanh", x, [](double v) { return std::tanh(v); },
      [](double, double y) { return 1.0 - y * y; });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      "sigmoid", x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor relu(const Tensor& x) {
  return unary(
      "relu", x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor exp(const Tensor& x) {
  return unary(
      "exp", x, [](double v) { return std::exp(v); },
      [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
  for (double v : x.values()) {
    if (!(v > 0.0)) throw NumericError("log of non-positive value");
  }
  return unary(
      "log", x, [](double v) { return std::log(v); },
      [](double v, double) { return 1.0 / v; });
}

Tensor elementwise(ElementwiseOp op, std::span<const Tensor> inputs) {
  const bool binary = op == ElementwiseOp::add || op == ElementwiseOp::sub ||
                      op == ElementwiseOp::mul;
  if (inputs.size() != (binary ? 2u : 1u)) {
    throw NumericError("elementwise: wrong number of inputs");
  }
  switch (op) {
    case ElementwiseOp::add: return add(inputs[0], inputs[1]);
    case ElementwiseOp::sub: return sub(inputs[0], inputs[1]);
    case ElementwiseOp::mul: return mul(inputs[0], inputs[1]);
    case ElementwiseOp::tanh: return tanh(inputs[0]);
    case ElementwiseOp::sigmoid: return sigmoid(inputs[0]);
    case ElementwiseOp::relu: return relu(inputs[0]);
    case ElementwiseOp::exp: return exp(inputs[0]);
    case ElementwiseOp::log: return log(inputs[0]);
  }
  throw NumericError("elementwise: unknown op");
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.values()) acc += v;
  return finish("sum", {1}, {acc}, {&x}, [x] {
    return [x](const detail::TensorImpl& out) {
      auto g = grad_of(x);
      for (double& gi : g) gi += out.grad[0];
    };
  });
}

Tensor mean(const Tensor& x) {
  if (x.size() == 0) throw NumericError("mean of empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.size()));
}

Tensor dot(const Tensor& a, const Tensor& b) { return sum(mul(a, b)); }

// ---------------------------------------------------------------------------
// Matrix products
// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2) {
    throw NumericError("matmul: operands must be rank 2");
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw NumericError("matmul: inner dimensions disagree " +
                       shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  std::vector<double> v(m * n, 0.0);
  const double* pa = a.values().data();
  const double* pb = b.values().data();
  for (std::size_t i = 0; i < m; ++i) {
    double* out_row = v.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = pa[i * k + p];
      const double* b_row = pb + p * n;
      for (std::size_t j = 0; j < n; ++j) out_row[j] += aip * b_row[j];
    }
  }
  return finish("matmul", {m, n}, std::move(v), {&a, &b}, [a, b, m, k, n] {
    return [a, b, m, k, n](const detail::TensorImpl& out) {
      const double* go = out.grad.data();
      if (a.requires_grad()) {
        // dA = dY · Bᵀ
        auto ga = grad_of(a);
        const double* pb = b.values().data();
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t p = 0; p < k; ++p) {
            double acc = 0.0;
            for (std::size_t j = 0; j < n; ++j) acc += go[i * n + j] * pb[p * n + j];
            ga[i * k + p] += acc;
          }
        }
      }
      if (b.requires_grad()) {
        // dB = Aᵀ · dY
        auto gb = grad_of(b);
        const double* pa = a.values().data();
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t p = 0; p < k; ++p) {
            const double aip = pa[i * k + p];
            for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += aip * go[i * n + j];
          }
        }
      }
    };
  });
}

Tensor transpose(const Tensor& x) {
  if (x.rank() != 2) throw NumericError("transpose: operand must be rank 2");
  const std::size_t r = x.dim(0), c = x.dim(1);
  std::vector<double> v(r * c);
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) v[j * r + i] = x[i * c + j];
  }
  return finish("transpose", {c, r}, std::move(v), {&x}, [x, r, c] {
    return [x, r, c](const detail::TensorImpl& out) {
      auto g = grad_of(x);
      for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < c; ++j) g[i * c + j] += out.grad[j * r + i];
      }
    };
  });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (weight.rank() != 2 || bias.rank() != 1 || x.rank() > 2) {
    throw NumericError("linear: expected W rank 2, b rank 1, x rank 1 or 2");
  }
  const std::size_t out_dim = weight.dim(0), in_dim = weight.dim(1);
  if (bias.dim(0) != out_dim || x.cols() != in_dim) {
    throw NumericError("linear: shape mismatch x" + shape_str(x.shape()) +
                       " W" + shape_str(weight.shape()) + " b" +
                       shape_str(bias.shape()));
  }
  const std::size_t batch = x.rows();
  std::vector<double> v(batch * out_dim);
  const double* px = x.values().data();
  const double* pw = weight.values().data();
  const double* pbias = bias.values().data();
  for (std::size_t r = 0; r < batch; ++r) {
    const double* xr = px + r * in_dim;
    for (std::size_t o = 0; o < out_dim; ++o) {
      const double* wo = pw + o * in_dim;
      double acc = 0.0;
      for (std::size_t i = 0; i < in_dim; ++i) acc += wo[i] * xr[i];
      v[r * out_dim + o] = acc + pbias[o];
    }
  }
  Shape shape = x.rank() == 1 ? Shape{out_dim} : Shape{batch, out_dim};
  return finish(
      "linear", std::move(shape), std::move(v), {&x, &weight, &bias},
      [x, weight, bias, batch, in_dim, out_dim] {
        return [x, weight, bias, batch, in_dim, out_dim](
                   const detail::TensorImpl& out) {
          const double* go = out.grad.data();
          const double* px = x.values().data();
          const double* pw = weight.values().data();
          if (x.requires_grad()) {
            auto gx = grad_of(x);
            for (std::size_t r = 0; r < batch; ++r) {
              double* gxr = gx.data() + r * in_dim;
              for (std::size_t o = 0; o < out_dim; ++o) {
                const double g = go[r * out_dim + o];
                if (g == 0.0) continue;
                const double* wo = pw + o * in_dim;
                for (std::size_t i = 0; i < in_dim; ++i) gxr[i] += g * wo[i];
              }
            }
          }
          if (weight.requires_grad()) {
            auto gw = grad_of(weight);
            for (std::size_t r = 0; r < batch; ++r) {
              const double* xr = px + r * in_dim;
              for (std::size_t o = 0; o < out_dim; ++o) {
                const double g = go[r * out_dim + o];
                if (g == 0.0) continue;
                double* gwo = gw.data() + o * in_dim;
                for (std::size_t i = 0; i < in_dim; ++i) gwo[i] += g * xr[i];
              }
            }
          }
          if (bias.requires_grad()) {
            auto gb = grad_of(bias);
            for (std::size_t r = 0; r < batch; ++r) {
              for (std::size_t o = 0; o < out_dim; ++o) gb[o] += go[r * out_dim + o];
            }
          }
        };
      });
}

// ---------------------------------------------------------------------------
// Softmax family
// ---------------------------------------------------------------------------

Tensor softmax(const Tensor& x) {
  if (x.size() == 0) throw NumericError("softmax of empty tensor");
  const std::size_t rows = x.rows(), cols = x.cols();
  std::vector<double> v(x.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.values().data() + r * cols;
    double* yr = v.data() + r * cols;
    const double mx = *std::max_element(xr, xr + cols);
    double z = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      yr[j] = std::exp(xr[j] - mx);
      z += yr[j];
    }
    for (std::size_t j = 0; j < cols; ++j) yr[j] /= z;
  }
  auto y = v;
  return finish("softmax", x.shape(), std::move(v), {&x},
                [x, rows, cols, y = std::move(y)] {
                  return [x, rows, cols, y](const detail::TensorImpl& out) {
                    auto g = grad_of(x);
                    for (std::size_t r = 0; r < rows; ++r) {
                      const std::size_t off = r * cols;
                      double s = 0.0;
                      for (std::size_t j = 0; j < cols; ++j) {
                        s += out.grad[off + j] * y[off + j];
                      }
                      for (std::size_t j = 0; j < cols; ++j) {
                        g[off + j] += y[off + j] * (out.grad[off + j] - s);
                      }
                    }
                  };
                });
}

Tensor log_softmax(const Tensor& x) {
  if (x.size() == 0) throw NumericError("log_softmax of empty tensor");
  const std::size_t rows = x.rows(), cols = x.cols();
  std::vector<double> v(x.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.values().data() + r * cols;
    double* yr = v.data() + r * cols;
    const double mx = *std::max_element(xr, xr + cols);
    double z = 0.0;
    for (std::size_t j = 0; j < cols; ++j) z += std::exp(xr[j] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t j = 0; j < cols; ++j) yr[j] = xr[j] - lse;
  }
  auto y = v;
  return finish("log_softmax", x.shape(), std::move(v), {&x},
                [x, rows, cols, y = std::move(y)] {
                  return [x, rows, cols, y](const detail::TensorImpl& out) {
                    auto g = grad_of(x);
                    for (std::size_t r = 0; r < rows; ++r) {
                      const std::size_t off = r * cols;
                      double s = 0.0;
                      for (std::size_t j = 0; j < cols; ++j) s += out.grad[off + j];
                      for (std::size_t j = 0; j < cols; ++j) {
                        g[off + j] += out.grad[off + j] - std::exp(y[off + j]) * s;
                      }
                    }
                  };
                });
}

Tensor cross_entropy(const Tensor& logits, std::size_t label) {
  if (logits.rank() != 1) throw NumericError("cross_entropy: logits must be rank 1");
  if (label >= logits.size()) {
    throw NumericError("cross_entropy: label " + std::to_string(label) +
                       " out of range for " + std::to_string(logits.size()) +
                       " classes");
  }
  return scale(gather(log_softmax(logits), label), -1.0);
}

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps) {
  const std::size_t rows = x.rows(), cols = x.cols();
  if (gamma.size() != cols || beta.size() != cols) {
    throw NumericError("layer_norm: gamma/beta width mismatch");
  }
  std::vector<double> xhat(x.size());
  std::vector<double> inv_std(rows);
  std::vector<double> v(x.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.values().data() + r * cols;
    double mu = 0.0;
    for (std::size_t j = 0; j < cols; ++j) mu += xr[j];
    mu /= static_cast<double>(cols);
    double var = 0.0;
    for (std::size_t j = 0; j < cols; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<double>(cols);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < cols; ++j) {
      xhat[r * cols + j] = (xr[j] - mu) * inv_std[r];
      v[r * cols + j] = xhat[r * cols + j] * gamma[j] + beta[j];
    }
  }
  return finish(
      "layer_norm", x.shape(), std::move(v), {&x, &gamma, &beta},
      [x, gamma, beta, rows, cols, xhat = std::move(xhat),
       inv_std = std::move(inv_std)] {
        return [x, gamma, beta, rows, cols, xhat, inv_std](
                   const detail::TensorImpl& out) {
          const double n = static_cast<double>(cols);
          for (std::size_t r = 0; r < rows; ++r) {
            const std::size_t off = r * cols;
            if (gamma.requires_grad()) {
              auto gg = grad_of(gamma);
              for (std::size_t j = 0; j < cols; ++j) {
                gg[j] += out.grad[off + j] * xhat[off + j];
              }
            }
            if (beta.requires_grad()) {
              auto gb = grad_of(beta);
              for (std::size_t j = 0; j < cols; ++j) gb[j] += out.grad[off + j];
            }
            if (x.requires_grad()) {
              auto gx = grad_of(x);
              double sum_d = 0.0, sum_dx = 0.0;
              for (std::size_t j = 0; j < cols; ++j) {
                const double d = out.grad[off + j] * gamma[j];
                sum_d += d;
                sum_dx += d * xhat[off + j];
              }
              for (std::size_t j = 0; j < cols; ++j) {
                const double d = out.grad[off + j] * gamma[j];
                gx[off + j] +=
                    inv_std[r] * (d - sum_d / n - xhat[off + j] * sum_dx / n);
              }
            }
          }
        };
      });
}

// ---------------------------------------------------------------------------
// Shape manipulation
// ---------------------------------------------------------------------------

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_size(shape) != x.size()) {
    throw NumericError("reshape: " + shape_str(x.shape()) + " -> " +
                       shape_str(shape));
  }
  auto v = x.to_vector();
  return finish("reshape", std::move(shape), std::move(v), {&x}, [x] {
    return [x](const detail::TensorImpl& out) {
      auto g = grad_of(x);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += out.grad[i];
    };
  });
}

namespace {

// Generic gather-by-index primitive: out[i] = src[index[i]].
Tensor index_copy(const char* op, const Tensor& x, Shape shape,
                  std::vector<std::size_t> index) {
  std::vector<double> v(index.size());
  for (std::size_t i = 0; i < index.size(); ++i) v[i] = x[index[i]];
  return finish(op, std::move(shape), std::move(v), {&x},
                [x, index = std::move(index)] {
                  return [x, index](const detail::TensorImpl& out) {
                    auto g = grad_of(x);
                    for (std::size_t i = 0; i < index.size(); ++i) {
                      g[index[i]] += out.grad[i];
                    }
                  };
                });
}

// Multi-input concatenation: part p contributes a contiguous range of the
// output under `placement`, which maps (part, element) -> output index.
template <typename Placement>
Tensor join(const char* op, std::span<const Tensor> parts, Shape shape,
            Placement placement) {
  std::vector<double> v(shape_size(shape));
  for (std::size_t p = 0; p < parts.size(); ++p) {
    for (std::size_t i = 0; i < parts[p].size(); ++i) {
      v[placement(p, i)] = parts[p][i];
    }
  }
  check_finite(v, op);
  auto out = std::make_shared<detail::TensorImpl>();
  out->shape = std::move(shape);
  out->values = std::move(v);
  Tape* tape = active_tape();
  bool any = false;
  for (const auto& t : parts) any = any || t.requires_grad();
  if (tape != nullptr && any) {
    out->requires_grad = true;
    Tape::Node node;
    node.output = out;
    std::vector<Tensor> keep(parts.begin(), parts.end());
    for (const auto& t : keep) node.inputs.push_back(t.impl());
    node.backward = [keep, placement](const detail::TensorImpl& o) {
      for (std::size_t p = 0; p < keep.size(); ++p) {
        if (!keep[p].requires_grad()) continue;
        auto g = grad_of(keep[p]);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[placement(p, i)];
      }
    };
    tape->record(std::move(node));
  }
  return Tensor(std::move(out));
}

}  // namespace

Tensor concat(std::span<const Tensor> parts) {
  if (parts.empty()) throw NumericError("concat: no inputs");
  std::vector<std::size_t> offsets;
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.rank() != 1) throw NumericError("concat: inputs must be rank 1");
    offsets.push_back(total);
    total += p.size();
  }
  return join("concat", parts, {total},
              [offsets](std::size_t p, std::size_t i) { return offsets[p] + i; });
}

Tensor concat(std::initializer_list<Tensor> parts) {
  return concat(std::span<const Tensor>(parts.begin(), parts.size()));
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw NumericError("concat_cols: no inputs");
  const std::size_t rows = parts[0].rows();
  std::vector<std::size_t> offsets, widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.rank() != 2 || p.rows() != rows) {
      throw NumericError("concat_cols: inputs must be rank 2 with equal rows");
    }
    offsets.push_back(total);
    widths.push_back(p.cols());
    total += p.cols();
  }
  return join("concat_cols", parts, {rows, total},
              [offsets, widths, total](std::size_t p, std::size_t i) {
                return (i / widths[p]) * total + offsets[p] + i % widths[p];
              });
}

Tensor stack_rows(std::span<const Tensor> rows) {
  if (rows.empty()) throw NumericError("stack_rows: no inputs");
  const std::size_t width = rows[0].size();
  for (const auto& r : rows) {
    if (r.rank() != 1 || r.size() != width) {
      throw NumericError("stack_rows: rows must be rank 1 with equal width");
    }
  }
  return join("stack_rows", rows, {rows.size(), width},
              [width](std::size_t p, std::size_t i) { return p * width + i; });
}

Tensor row(const Tensor& x, std::size_t r) {
  if (x.rank() != 2 || r >= x.dim(0)) throw NumericError("row: out of range");
  const std::size_t c = x.dim(1);
  std::vector<std::size_t> idx(c);
  std::iota(idx.begin(), idx.end(), r * c);
  return index_copy("row", x, {c}, std::move(idx));
}

Tensor slice(const Tensor& x, std::size_t start, std::size_t len) {
  if (x.rank() != 1 || start + len > x.size()) {
    throw NumericError("slice: out of range");
  }
  std::vector<std::size_t> idx(len);
  std::iota(idx.begin(), idx.end(), start);
  return index_copy("slice", x, {len}, std::move(idx));
}

Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t len) {
  if (x.rank() != 2 || start + len > x.dim(1)) {
    throw NumericError("slice_cols: out of range");
  }
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  std::vector<std::size_t> idx;
  idx.reserve(rows * len);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < len; ++j) idx.push_back(r * cols + start + j);
  }
  return index_copy("slice_cols", x, {rows, len}, std::move(idx));
}

Tensor gather(const Tensor& x, std::size_t index) {
  if (index >= x.size()) throw NumericError("gather: index out of range");
  return index_copy("gather", x, {1}, {index});
}

Tensor sum_rows(const Tensor& x) {
  if (x.rank() != 2) throw NumericError("sum_rows: operand must be rank 2");
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  std::vector<double> v(cols, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < cols; ++j) v[j] += x[r * cols + j];
  }
  return finish("sum_rows", {cols}, std::move(v), {&x}, [x, rows, cols] {
    return [x, rows, cols](const detail::TensorImpl& out) {
      auto g = grad_of(x);
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < cols; ++j) g[r * cols + j] += out.grad[j];
      }
    };
  });
}

Tensor mean_rows(const Tensor& x) {
  if (x.rank() != 2 || x.dim(0) == 0) throw NumericError("mean_rows: empty or not rank 2");
  return scale(sum_rows(x), 1.0 / static_cast<double>(x.dim(0)));
}

Tensor max_rows(const Tensor& x) {
  if (x.rank() != 2 || x.dim(0) == 0) throw NumericError("max_rows: empty or not rank 2");
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  std::vector<std::size_t> idx(cols);
  for (std::size_t j = 0; j < cols; ++j) {
    std::size_t best = j;
    for (std::size_t r = 1; r < rows; ++r) {
      if (x[r * cols + j] > x[best]) best = r * cols + j;
    }
    idx[j] = best;
  }
  return index_copy("max_rows", x, {cols}, std::move(idx));
}

Tensor detach(const Tensor& x) {
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = x.shape();
  impl->values = x.to_vector();
  return Tensor(std::move(impl));
}

}  // namespace vimo
