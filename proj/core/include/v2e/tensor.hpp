#pragma once

// Minimal reverse-mode automatic differentiation over dense double tensors.
//
// A Tensor is a shared handle to a graph node. Operations in ops.hpp build
// the graph eagerly; calling backward() on a scalar result accumulates
// gradients into every reachable node that requires them.

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace v2e::ag {

using Shape = std::vector<int64_t>;

int64_t numel_of(const Shape& shape);
std::string shape_str(const Shape& shape);

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until touched by backward
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  std::vector<double>& grad_buffer();
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values,
                     bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int64_t dim(int axis) const;
  int rank() const { return static_cast<int>(node_->shape.size()); }
  int64_t numel() const { return static_cast<int64_t>(node_->value.size()); }

  std::span<const double> data() const { return node_->value; }
  std::span<double> mutable_data() { return node_->value; }
  // Gradient accumulated by backward(); zeros when never touched.
  std::vector<double> grad() const;
  double item() const;
  double at(std::initializer_list<int64_t> index) const;

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  void zero_grad() { node_->grad.clear(); }

  // Seeds d(this)/d(this) = 1. Requires a single-element tensor.
  void backward() const;

  // Same values, no history.
  Tensor detach() const;
  Tensor clone() const;

  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& node_ptr() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Rounds every op output (and propagated gradient) to IEEE binary16 while
// alive. Used to emulate reduced-precision forward/backward passes.
class HalfPrecisionGuard {
 public:
  HalfPrecisionGuard();
  ~HalfPrecisionGuard();
  HalfPrecisionGuard(const HalfPrecisionGuard&) = delete;
  HalfPrecisionGuard& operator=(const HalfPrecisionGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();
bool half_precision_enabled();
double round_to_half(double x);

// Creates a result node wired to `parents`. When recording is disabled or no
// parent requires a gradient, the backward closure is dropped.
Tensor make_result(Shape shape, std::vector<double> value,
                   std::vector<Tensor> parents,
                   std::function<void(Node&)> backward_fn);

}  // namespace v2e::ag
