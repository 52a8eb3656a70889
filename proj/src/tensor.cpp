#include "mvlt/tensor.hpp"

#include <algorithm>
#include <unordered_set>

#include "mvlt/error.hpp"

namespace mvlt {

std::string shape_str(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

Buffer& detail::Node::grad_buffer() {
  if (grad.empty()) grad.assign(data.size(), 0.0);
  return grad;
}

Tensor::Tensor(Shape shape, Buffer data, bool requires_grad) {
  for (auto d : shape) {
    if (d == 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
  }
  if (shape_numel(shape) != data.size()) {
    throw DimensionError("shape " + shape_str(shape) + " needs " +
                         std::to_string(shape_numel(shape)) + " values, got " +
                         std::to_string(data.size()));
  }
  node_ = std::make_shared<detail::Node>();
  node_->shape = std::move(shape);
  node_->data = std::move(data);
  node_->requires_grad = requires_grad;
}

Tensor::Tensor(Shape shape, const std::vector<double>& data, bool requires_grad)
    : Tensor(std::move(shape), Buffer(data.begin(), data.end()), requires_grad) {}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  auto n = shape_numel(shape);
  return Tensor(std::move(shape), Buffer(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor({1}, Buffer{value}, requires_grad);
}

Tensor Tensor::vector(std::vector<double> values, bool requires_grad) {
  auto n = values.size();
  return Tensor({n}, values, requires_grad);
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows,
                      bool requires_grad) {
  Buffer data;
  std::size_t cols = rows.size() ? rows.begin()->size() : 0;
  for (const auto& r : rows) {
    if (r.size() != cols) throw DimensionError("ragged matrix literal");
    data.insert(data.end(), r.begin(), r.end());
  }
  return Tensor({rows.size(), cols}, std::move(data), requires_grad);
}

detail::Node& Tensor::node() const {
  if (!node_) throw ContractError("use of an undefined tensor");
  return *node_;
}

const Shape& Tensor::shape() const { return node().shape; }
std::size_t Tensor::numel() const { return node().data.size(); }

std::size_t Tensor::cols() const {
  const auto& s = shape();
  return s.empty() ? 1 : s.back();
}

std::size_t Tensor::rows() const { return numel() / cols(); }

std::span<double> Tensor::data() { return node().data; }
std::span<const double> Tensor::data() const { return node().data; }

double Tensor::item() const {
  if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
  return node().data[0];
}

double Tensor::at(std::size_t r, std::size_t c) const { return node().data[r * cols() + c]; }

bool Tensor::requires_grad() const { return node().requires_grad; }

void Tensor::set_requires_grad(bool flag) {
  if (!is_leaf()) throw ContractError("requires_grad can only be changed on leaf tensors");
  node().requires_grad = flag;
}

bool Tensor::has_grad() const { return !node().grad.empty(); }
std::span<double> Tensor::grad() { return node().grad_buffer(); }
std::span<const double> Tensor::grad() const { return node().grad_buffer(); }

void Tensor::zero_grad() { node().grad.assign(numel(), 0.0); }
void Tensor::clear_grad() {
  node().grad.clear();
  node().grad.shrink_to_fit();
}

bool Tensor::is_leaf() const { return node().is_leaf(); }

Tensor Tensor::detach() const { return Tensor(node().shape, node().data, false); }

Tensor Tensor::make_result(Shape shape, Buffer data, std::vector<Tensor> parents,
                           std::function<void(detail::Node&)> backward_fn) {
  Tensor out(std::move(shape), std::move(data), false);
  bool any = std::any_of(parents.begin(), parents.end(),
                         [](const Tensor& p) { return p.requires_grad(); });
  if (any) {
    auto& n = out.node();
    n.requires_grad = true;
    n.parents.reserve(parents.size());
    for (auto& p : parents) n.parents.push_back(p.node_);
    n.backward_fn = std::move(backward_fn);
  }
  return out;
}

void Tensor::backward() const {
  auto& root = node();
  if (root.data.size() != 1) {
    throw ContractError("backward() requires a scalar, got shape " + shape_str(root.shape));
  }
  if (!root.requires_grad) return;

  // Iterative post-order DFS gives a topological order (parents first).
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<std::pair<detail::Node*, std::size_t>> stack{{&root, 0}};
  seen.insert(&root);
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      detail::Node* p = n->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  for (auto* n : order) {
    if (!n->is_leaf()) n->grad.clear();
  }
  root.grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = *it;
    if (n->is_leaf() || n->grad.empty()) continue;
    n->backward_fn(*n);
    n->grad.clear();
    n->grad.shrink_to_fit();
  }
}

std::vector<const void*> reachable_leaves(const Tensor& root) {
  std::vector<const void*> leaves;
  std::unordered_set<const detail::Node*> seen;
  std::vector<const detail::Node*> stack{&root.node()};
  seen.insert(stack.back());
  while (!stack.empty()) {
    const detail::Node* n = stack.back();
    stack.pop_back();
    if (n->is_leaf()) {
      if (n->requires_grad) leaves.push_back(n);
      continue;
    }
    for (const auto& p : n->parents) {
      if (p->requires_grad && seen.insert(p.get()).second) stack.push_back(p.get());
    }
  }
  return leaves;
}

}  // namespace mvlt
