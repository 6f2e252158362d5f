#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace vimo {

using Shape = std::vector<std::size_t>;

/// Raised on shape mismatches, invalid arguments to primitives, and any
/// non-finite value produced by an operation.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::size_t shape_size(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct TensorImpl {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;  // empty until a gradient is first accumulated
  bool requires_grad = false;

  std::span<double> ensure_grad();
};

}  // namespace detail

/// Dense row-major array of f64 values with an optional gradient slot.
///
/// Copies are shallow: two Tensor handles may refer to the same storage.
/// Operations never mutate their inputs; only the optimizer and explicit
/// `mutable_values()` callers write in place.
class Tensor {
 public:
  Tensor();

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor from(Shape shape, std::vector<double> values);
  static Tensor vector(std::vector<double> values);
  static Tensor scalar(double value);
  /// Leaf tensor that accumulates gradients.
  static Tensor parameter(Shape shape, std::vector<double> values);

  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t size() const { return impl_->values.size(); }
  std::size_t dim(std::size_t axis) const;
  /// Rows/cols of a rank-2 tensor; a rank-1 tensor reads as a single row.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> values() const { return impl_->values; }
  std::span<double> mutable_values() { return impl_->values; }
  std::vector<double> to_vector() const { return impl_->values; }
  double operator[](std::size_t i) const { return impl_->values[i]; }
  double at(std::size_t r, std::size_t c) const;
  double item() const;

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool flag) { impl_->requires_grad = flag; }
  bool has_grad() const { return !impl_->grad.empty(); }
  /// Accumulated gradient; all zeros when nothing has been accumulated yet.
  std::vector<double> grad() const;
  std::span<double> mutable_grad() { return impl_->ensure_grad(); }
  void zero_grad();

  /// Deep copy detached from any tape.
  Tensor clone() const;

  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

  const std::shared_ptr<detail::TensorImpl>& impl() const { return impl_; }
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl);

 private:
  std::shared_ptr<detail::TensorImpl> impl_;
};

/// Ordered record of primitive applications for reverse-mode differentiation.
///
/// Recording order is a topological order of the computation, so replaying
/// it backwards visits every node after all of its consumers.
class Tape {
 public:
  struct Node {
    std::shared_ptr<detail::TensorImpl> output;
    std::vector<std::shared_ptr<detail::TensorImpl>> inputs;
    std::function<void(const detail::TensorImpl& out)> backward;
  };

  void record(Node node) { nodes_.push_back(std::move(node)); }
  std::size_t size() const { return nodes_.size(); }
  bool empty() const { return nodes_.empty(); }
  void clear() { nodes_.clear(); }

  /// Seeds d(loss)/d(loss) = 1 and propagates to every reachable tensor
  /// that requires gradients. Gradients accumulate additively.
  void backward(const Tensor& loss);

  const std::vector<Node>& nodes() const { return nodes_; }

 private:
  std::vector<Node> nodes_;
};

/// Makes `tape` the recording target for operations on this thread until
/// destruction. Scopes nest; the innermost wins.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

/// Suspends recording (evaluation with frozen parameters).
class NoGradScope {
 public:
  NoGradScope();
  ~NoGradScope();
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Tape* previous_;
};

Tape* active_tape();

void backward(const Tensor& loss, Tape& tape);

// ---------------------------------------------------------------------------
// Primitives. Binary ops require equal shapes; the only broadcast is
// scalar-with-tensor through `scale` and `add_scalar`.
// ---------------------------------------------------------------------------

enum class ElementwiseOp { add, sub, mul, tanh, sigmoid, relu, exp, log };

Tensor elementwise(ElementwiseOp op, std::span<const Tensor> inputs);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor minimum(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double offset);
/// Scalar tensor `s` (size 1) times every element of `x`.
Tensor scale_by(const Tensor& x, const Tensor& s);

Tensor tanh(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor dot(const Tensor& a, const Tensor& b);

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& x);
/// x·Wᵀ + b for x of shape [in] or [B×in], W [out×in], b [out].
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

/// Softmax over a rank-1 tensor, or over each row of a rank-2 tensor.
Tensor softmax(const Tensor& x);
Tensor log_softmax(const Tensor& x);
Tensor cross_entropy(const Tensor& logits, std::size_t label);

/// Row-wise layer normalization with affine gamma/beta of width cols().
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps);

Tensor reshape(const Tensor& x, Shape shape);
/// Concatenates rank-1 tensors.
Tensor concat(std::span<const Tensor> parts);
Tensor concat(std::initializer_list<Tensor> parts);
/// Concatenates rank-2 tensors with equal row counts along columns.
Tensor concat_cols(std::span<const Tensor> parts);
/// Stacks rank-1 tensors of equal length into a [n×len] matrix.
Tensor stack_rows(std::span<const Tensor> rows);
Tensor row(const Tensor& x, std::size_t r);
Tensor slice(const Tensor& x, std::size_t start, std::size_t len);
Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t len);
Tensor gather(const Tensor& x, std::size_t index);

/// Column-wise reductions of a [n×w] matrix to a [w] vector.
Tensor mean_rows(const Tensor& x);
Tensor max_rows(const Tensor& x);
Tensor sum_rows(const Tensor& x);

/// Elementwise max of two equal-shape tensors; ties route gradient to `a`.
Tensor maximum(const Tensor& a, const Tensor& b);

/// Same values, no gradient path.
Tensor detach(const Tensor& x);

}  // namespace vimo
