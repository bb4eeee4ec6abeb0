#include "v2e/tensor.hpp"

#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace v2e::ag {

namespace {
thread_local bool g_grad_enabled = true;
thread_local bool g_half_precision = false;
}  // namespace

int64_t numel_of(const Shape& shape) {
  int64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::vector<double>& Node::grad_buffer() {
  if (grad.empty()) grad.assign(value.size(), 0.0);
  return grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  auto node = std::make_shared<Node>();
  node->value.assign(static_cast<size_t>(numel_of(shape)), value);
  node->shape = std::move(shape);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::from(Shape shape, std::vector<double> values,
                    bool requires_grad) {
  if (numel_of(shape) != static_cast<int64_t>(values.size())) {
    throw std::invalid_argument("Tensor::from: shape " + shape_str(shape) +
                                " does not match " +
                                std::to_string(values.size()) + " values");
  }
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from({1}, {value}, requires_grad);
}

int64_t Tensor::dim(int axis) const {
  const int r = rank();
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) throw std::out_of_range("Tensor::dim: bad axis");
  return node_->shape[static_cast<size_t>(axis)];
}

std::vector<double> Tensor::grad() const {
  if (node_->grad.empty()) return std::vector<double>(node_->value.size(), 0.0);
  return node_->grad;
}

double Tensor::item() const {
  if (node_->value.size() != 1) {
    throw std::logic_error("Tensor::item on tensor of shape " +
                           shape_str(node_->shape));
  }
  return node_->value[0];
}

double Tensor::at(std::initializer_list<int64_t> index) const {
  if (index.size() != node_->shape.size()) {
    throw std::out_of_range("Tensor::at: rank mismatch");
  }
  int64_t flat = 0;
  size_t axis = 0;
  for (auto i : index) {
    if (i < 0 || i >= node_->shape[axis]) {
      throw std::out_of_range("Tensor::at: index out of range");
    }
    flat = flat * node_->shape[axis] + i;
    ++axis;
  }
  return node_->value[static_cast<size_t>(flat)];
}

void Tensor::backward() const {
  if (node_->value.size() != 1) {
    throw std::logic_error("backward() requires a single-element tensor");
  }
  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, size_t>> stack{{node_.get(), 0}};
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) {
        stack.emplace_back(parent, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  node_->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
  }
}

Tensor Tensor::detach() const {
  return from(node_->shape, node_->value, false);
}

Tensor Tensor::clone() const {
  return from(node_->shape, node_->value, node_->requires_grad);
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) {
  g_grad_enabled = false;
}
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

HalfPrecisionGuard::HalfPrecisionGuard() : previous_(g_half_precision) {
  g_half_precision = true;
}
HalfPrecisionGuard::~HalfPrecisionGuard() { g_half_precision = previous_; }

bool grad_enabled() { return g_grad_enabled; }
bool half_precision_enabled() { return g_half_precision; }

double round_to_half(double x) {
  if (!std::isfinite(x) || x == 0.0) return x;
  const double a = std::fabs(x);
  // Largest finite binary16 is 65504; the rounding boundary to inf is 65520.
  if (a >= 65520.0) return std::copysign(std::numeric_limits<double>::infinity(), x);
  int e = 0;
  std::frexp(a, &e);  // a = m * 2^e, m in [0.5, 1)
  const int exponent = std::max(e - 1, -14);
  const double quantum = std::ldexp(1.0, exponent - 10);
  return std::copysign(std::nearbyint(a / quantum) * quantum, x);
}

Tensor make_result(Shape shape, std::vector<double> value,
                   std::vector<Tensor> parents,
                   std::function<void(Node&)> backward_fn) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  const bool half = g_half_precision;
  if (half) {
    for (auto& v : node->value) v = round_to_half(v);
  }
  bool needs = false;
  if (g_grad_enabled) {
    for (const auto& p : parents) needs = needs || p.requires_grad();
  }
  if (needs) {
    node->requires_grad = true;
    node->parents.reserve(parents.size());
    for (auto& p : parents) node->parents.push_back(p.node_ptr());
    if (half) {
      node->backward_fn = [fn = std::move(backward_fn)](Node& self) {
        for (auto& g : self.grad) g = round_to_half(g);
        fn(self);
      };
    } else {
      node->backward_fn = std::move(backward_fn);
    }
  }
  return Tensor(std::move(node));
}

}  // namespace v2e::ag
