// SPDX-License-Identifier: Apache-2.0
#include "vlmoe/tensor.hpp"

#include <cmath>
#include <sstream>

namespace vlmoe {

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << "x";
    os << s[i];
  }
  os << "]";
  return os.str();
}

std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (int d : s) {
    if (d <= 0) throw ShapeError("non-positive extent in shape " + shape_str(s));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  auto impl = std::make_shared<TensorImpl>();
  std::size_t n = shape_numel(shape);
  impl->shape = std::move(shape);
  impl->data.assign(n, 0.0);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  for (auto& x : t.impl_->data) x = value;
  return t;
}

Tensor Tensor::from_data(Shape shape, std::vector<double> values,
                         bool requires_grad) {
  std::size_t n = shape_numel(shape);
  if (n != values.size()) {
    throw ShapeError("data length " + std::to_string(values.size()) +
                     " does not match shape " + shape_str(shape));
  }
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(values);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double value) {
  return from_data({1}, {value});
}

int Tensor::dim(int axis) const {
  if (axis < 0 || axis >= rank())
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " +
                     shape_str(impl_->shape));
  return impl_->shape[static_cast<std::size_t>(axis)];
}

double Tensor::value() const {
  if (numel() != 1) throw ShapeError("value() requires a scalar tensor");
  return impl_->data[0];
}

double Tensor::at(int i) const {
  return impl_->data[static_cast<std::size_t>(i)];
}

double Tensor::at(int i, int j) const {
  return impl_->data[static_cast<std::size_t>(i) *
                         static_cast<std::size_t>(impl_->shape[1]) +
                     static_cast<std::size_t>(j)];
}

Tensor& Tensor::set_requires_grad(bool v) {
  impl_->requires_grad = v;
  return *this;
}

const std::vector<double>* Tensor::grad() const {
  return impl_->grad ? impl_->grad.get() : nullptr;
}

std::vector<double>& Tensor::grad_or_create() {
  if (!impl_->grad)
    impl_->grad = std::make_unique<std::vector<double>>(numel(), 0.0);
  return *impl_->grad;
}

void Tensor::zero_grad() {
  if (impl_->grad) std::fill(impl_->grad->begin(), impl_->grad->end(), 0.0);
}

void Tensor::drop_grad() { impl_->grad.reset(); }

Tensor Tensor::clone() const {
  Tensor t = Tensor::from_data(impl_->shape, impl_->data, impl_->requires_grad);
  return t;
}

namespace {
thread_local std::vector<Tape*> g_tape_stack;
}

Tape* Tape::active() {
  return g_tape_stack.empty() ? nullptr : g_tape_stack.back();
}

TapeScope::TapeScope(Tape* tape) { g_tape_stack.push_back(tape); }

TapeScope::~TapeScope() { g_tape_stack.pop_back(); }

bool grad_enabled() { return Tape::active() != nullptr; }

void Tape::record(Node node) {
  outputs_.insert(node.out.get());
  nodes_.push_back(std::move(node));
}

void Tape::backward(const Tensor& loss, bool flush_to_leaves) {
  if (!loss.defined() || loss.numel() != 1)
    throw ValueError("backward requires a scalar loss");
  grads_.clear();
  grads_[loss.impl()] = {1.0};
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    if (grads_.find(it->out.get()) == grads_.end()) continue;
    it->backward(*this);
  }
  if (flush_to_leaves) {
    for (auto& [impl, buf] : grads_) {
      if (!impl->requires_grad || produced(impl)) continue;
      auto* mut = const_cast<TensorImpl*>(impl);
      if (!mut->grad)
        mut->grad = std::make_unique<std::vector<double>>(buf.size(), 0.0);
      for (std::size_t i = 0; i < buf.size(); ++i) (*mut->grad)[i] += buf[i];
    }
  }
}

const std::vector<double>* Tape::grad_of(const Tensor& t) const {
  return grad_of(t.impl());
}

const std::vector<double>* Tape::grad_of(const TensorImpl* t) const {
  auto it = grads_.find(t);
  return it == grads_.end() ? nullptr : &it->second;
}

std::vector<double>& Tape::grad_buffer(const TensorImpl* t, std::size_t n) {
  auto [it, inserted] = grads_.try_emplace(t);
  if (inserted) it->second.assign(n, 0.0);
  return it->second;
}

void Tape::clear() {
  nodes_.clear();
  grads_.clear();
  outputs_.clear();
}

void require_finite(const std::vector<double>& v, const char* op) {
  // |x| accumulation vectorizes; NaN and Inf both propagate into the sum.
  // Network values stay far below the ~1e300 scale where the sum itself
  // could overflow spuriously.
  double acc = 0.0;
  for (double x : v) acc += std::abs(x);
  if (!std::isfinite(acc))
    throw NumericError(std::string(op) + ": non-finite value produced");
}

}  // namespace vlmoe
