#include "smamba/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

namespace smamba {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

namespace detail {

std::vector<double>& TensorImpl::grad_buffer() {
  if (grad.empty()) grad.assign(data.size(), 0.0);
  return grad;
}

void TensorImpl::accumulate(std::span<const double> g) {
  auto& buf = grad_buffer();
  for (std::size_t i = 0; i < buf.size(); ++i) buf[i] += g[i];
}

}  // namespace detail

namespace {

void validate_shape(const Shape& shape) {
  if (shape.empty()) throw ShapeError("tensor rank must be >= 1");
  for (std::size_t d : shape)
    if (d == 0) throw ShapeError("tensor dims must be positive, got " + shape_str(shape));
}

thread_local bool g_grad_enabled = true;

}  // namespace

Tensor::Tensor(Shape shape, double fill) : impl_(std::make_shared<detail::TensorImpl>()) {
  validate_shape(shape);
  impl_->data.assign(shape_numel(shape), fill);
  impl_->shape = std::move(shape);
}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : impl_(std::make_shared<detail::TensorImpl>()) {
  validate_shape(shape);
  if (shape_numel(shape) != data.size())
    throw ShapeError("data length " + std::to_string(data.size()) + " does not match shape " +
                     shape_str(shape));
  impl_->shape = std::move(shape);
  impl_->data = std::move(data);
}

std::size_t Tensor::dim(int axis) const {
  const int r = static_cast<int>(rank());
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) throw ShapeError("axis out of range");
  return impl_->shape[static_cast<std::size_t>(a)];
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  return impl_->data[0];
}

Tensor& Tensor::set_requires_grad(bool on) {
  impl_->requires_grad = on;
  if (!on) impl_->grad.clear();
  return *this;
}

std::vector<double> Tensor::grad() const {
  if (impl_->grad.empty()) return std::vector<double>(numel(), 0.0);
  return impl_->grad;
}

void Tensor::zero_grad() { impl_->grad.clear(); }

Tensor Tensor::detach() const { return Tensor(shape(), impl_->data); }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_enabled() { return g_grad_enabled; }

void check_finite(std::span<const double> values, const char* what) {
  for (double v : values)
    if (!std::isfinite(v)) throw NumericError(std::string("non-finite value produced by ") + what);
}

Tensor make_result(Shape shape, std::vector<double> data, const char* name,
                   const std::vector<Tensor>& inputs, detail::BackwardFn backward) {
  check_finite(data, name);
  Tensor out(std::move(shape), std::move(data));
  if (!g_grad_enabled) return out;
  const bool needs = std::any_of(inputs.begin(), inputs.end(),
                                 [](const Tensor& t) { return t.requires_grad(); });
  if (!needs) return out;
  auto node = std::make_shared<detail::Node>();
  node->name = name;
  node->inputs.reserve(inputs.size());
  for (const auto& t : inputs) node->inputs.push_back(t.impl());
  node->backward = std::move(backward);
  auto impl = out.impl();
  impl->requires_grad = true;
  impl->grad_fn = std::move(node);
  return out;
}

namespace {

// Post-order DFS; iterative so deep graphs do not exhaust the stack.
std::vector<detail::TensorImpl*> topo_order(detail::TensorImpl* root) {
  std::vector<detail::TensorImpl*> order;
  std::unordered_set<detail::TensorImpl*> seen;
  std::vector<std::pair<detail::TensorImpl*, std::size_t>> stack;
  stack.emplace_back(root, 0);
  seen.insert(root);
  while (!stack.empty()) {
    auto& [t, next] = stack.back();
    const auto* fn = t->grad_fn.get();
    if (fn && next < fn->inputs.size()) {
      detail::TensorImpl* child = fn->inputs[next++].get();
      if (child->requires_grad && child->grad_fn && seen.insert(child).second)
        stack.emplace_back(child, 0);
      continue;
    }
    order.push_back(t);
    stack.pop_back();
  }
  return order;
}

void run_backward(const Tensor& loss) {
  if (loss.numel() != 1)
    throw ShapeError("backward requires a scalar loss, got shape " + shape_str(loss.shape()));
  auto root = loss.impl();
  if (!root->requires_grad) return;
  root->grad.assign(1, 1.0);
  if (!root->grad_fn) return;
  const auto order = topo_order(root.get());
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::TensorImpl* t = *it;
    if (t->grad.empty()) continue;
    t->grad_fn->backward(t->grad, t->data);
    // Intermediate grads are no longer needed once propagated.
    if (t != root.get()) std::vector<double>().swap(t->grad);
  }
}

}  // namespace

std::vector<std::vector<double>> backward(const Tensor& loss, const DiffContext& ctx) {
  for (const auto& p : ctx.params()) p.impl()->grad.clear();
  run_backward(loss);
  std::vector<std::vector<double>> grads;
  grads.reserve(ctx.params().size());
  for (const auto& p : ctx.params()) grads.push_back(p.grad());
  return grads;
}

void backward(const Tensor& loss) { run_backward(loss); }

}  // namespace smamba
