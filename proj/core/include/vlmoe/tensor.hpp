// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "vlmoe/errors.hpp"

namespace vlmoe {

using Shape = std::vector<int>;

std::string shape_str(const Shape& s);
std::size_t shape_numel(const Shape& s);

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  bool requires_grad = false;
  // Leaf gradient buffer, populated by Tape::backward. Same shape as data.
  std::unique_ptr<std::vector<double>> grad;
};

// Dense 64-bit tensor with value semantics over a shared payload. Data is
// immutable through the op layer; mutable_data() is reserved for parameter
// initialization and optimizer updates, which never run inside a taped graph.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<double> values,
                          bool requires_grad = false);
  static Tensor scalar(double value);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  int rank() const { return static_cast<int>(impl_->shape.size()); }
  int dim(int axis) const;
  std::size_t numel() const { return impl_->data.size(); }

  const std::vector<double>& data() const { return impl_->data; }
  std::vector<double>& mutable_data() { return impl_->data; }
  double value() const;            // scalar tensors
  double at(int i) const;          // rank-1
  double at(int i, int j) const;   // rank-2

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool v);

  const std::vector<double>* grad() const;
  std::vector<double>& grad_or_create();
  void zero_grad();
  void drop_grad();

  // Deep copy of values; grad buffer not copied.
  Tensor clone() const;

  TensorImpl* impl() const { return impl_.get(); }
  std::shared_ptr<TensorImpl> impl_ptr() const { return impl_; }

 private:
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<TensorImpl> impl_;
};

// Reverse-mode tape: one node per differentiable op, recorded in execution
// order. backward walks the record once in reverse. A tape must only be
// active on one thread at a time.
class Tape {
 public:
  struct Node {
    std::shared_ptr<TensorImpl> out;
    std::vector<std::shared_ptr<TensorImpl>> parents;
    // Reads grad_of(out), accumulates into grad_buffer(parent).
    std::function<void(Tape&)> backward;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active();

  void record(Node node);
  bool produced(const TensorImpl* t) const { return outputs_.count(t) > 0; }
  std::size_t size() const { return nodes_.size(); }

  // Populates dLoss/dLeaf for every requires_grad leaf reachable from loss.
  // With flush_to_leaves the buffers are also accumulated into
  // TensorImpl::grad; otherwise read them through grad_of (used when several
  // tapes share parameters across threads).
  void backward(const Tensor& loss, bool flush_to_leaves = true);

  const std::vector<double>* grad_of(const Tensor& t) const;
  const std::vector<double>* grad_of(const TensorImpl* t) const;
  std::vector<double>& grad_buffer(const TensorImpl* t, std::size_t n);

  void clear();

 private:
  friend class TapeScope;
  std::vector<Node> nodes_;
  std::unordered_map<const TensorImpl*, std::vector<double>> grads_;
  std::unordered_set<const TensorImpl*> outputs_;
};

// Makes a tape the active one for the current thread while alive.
class TapeScope {
 public:
  explicit TapeScope(Tape* tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;
};

// Disables recording for the current thread while alive.
class NoGradGuard : public TapeScope {
 public:
  NoGradGuard() : TapeScope(nullptr) {}
};

bool grad_enabled();

// Throws NumericError when v contains NaN or Inf.
void require_finite(const std::vector<double>& v, const char* op);

}  // namespace vlmoe
