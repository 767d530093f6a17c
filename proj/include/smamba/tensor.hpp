#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace smamba {

using Shape = std::vector<std::size_t>;

// Raised on incompatible operand shapes or invalid op arguments.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Raised when a forward op produces NaN/Inf from finite inputs, or an
// optimizer meets a non-finite gradient.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class Tensor;

namespace detail {

struct Node;

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::shared_ptr<Node> grad_fn;

  void accumulate(std::span<const double> g);
  std::vector<double>& grad_buffer();
};

using BackwardFn = std::function<void(std::span<const double> grad_out,
                                      std::span<const double> out)>;

// One recorded op. `backward` receives the gradient and value of the op's
// output and accumulates into the grads of `inputs` that require them.
struct Node {
  std::string name;
  std::vector<std::shared_ptr<TensorImpl>> inputs;
  BackwardFn backward;
};

}  // namespace detail

// Dense row-major real tensor with an optional differentiation record.
// Copies are shallow: two Tensor handles may share storage and graph node.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double v) { return Tensor(Shape{1}, v); }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  // Negative indices count from the back.
  std::size_t dim(int axis) const;
  std::size_t numel() const { return impl_->data.size(); }

  std::span<const double> data() const { return impl_->data; }
  std::span<double> mutable_data() { return impl_->data; }
  const std::vector<double>& values() const { return impl_->data; }
  double at(std::size_t i) const { return impl_->data[i]; }
  double item() const;

  bool requires_grad() const { return impl_ && impl_->requires_grad; }
  Tensor& set_requires_grad(bool on);
  bool has_grad() const { return impl_ && !impl_->grad.empty(); }
  // Gradient values, zeros if none accumulated yet.
  std::vector<double> grad() const;
  void zero_grad();

  // Fresh leaf sharing no graph with this tensor (values copied).
  Tensor detach() const;
  Tensor clone() const { return detach(); }

  std::shared_ptr<detail::TensorImpl> impl() const { return impl_; }
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}

 private:
  std::shared_ptr<detail::TensorImpl> impl_;
};

// Thread-local switch; while disabled no op records graph nodes.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

// Builds the op output and, when any input needs a gradient, attaches a
// node. `backward` is only invoked during a backward pass.
Tensor make_result(Shape shape, std::vector<double> data, const char* name,
                   const std::vector<Tensor>& inputs, detail::BackwardFn backward);

// Set of watched parameters for one reverse pass.
class DiffContext {
 public:
  DiffContext() = default;
  explicit DiffContext(std::vector<Tensor> params) : params_(std::move(params)) {}

  void watch(const Tensor& p) { params_.push_back(p); }
  const std::vector<Tensor>& params() const { return params_; }

 private:
  std::vector<Tensor> params_;
};

// Reverse pass from a scalar loss. Watched parameter grads are reset first,
// then every recorded node reachable from `loss` is visited exactly once in
// reverse topological order. Returns one gradient per watched parameter
// (zeros when unreachable).
std::vector<std::vector<double>> backward(const Tensor& loss, const DiffContext& ctx);

// Same traversal without a watch list; grads land on leaves.
void backward(const Tensor& loss);

// Throws NumericError if any value is NaN/Inf.
void check_finite(std::span<const double> values, const char* what);

}  // namespace smamba
