#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <new>
#include <span>
#include <string>
#include <vector>

namespace mvlt {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

// Cache-line aligned allocator so vectorized kernels take the same path for
// equal shapes regardless of where the heap placed the buffer.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t alignment{64};

  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), alignment)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, alignment); }

  template <class U>
  bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

using Buffer = std::vector<double, AlignedAllocator<double>>;

namespace detail {

// One vertex of the recorded computation. Leaves own parameters or inputs;
// interior nodes keep the closure that pushes their gradient to parents.
struct Node {
  Shape shape;
  Buffer data;
  Buffer grad;  // empty means "no gradient yet"
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  bool is_leaf() const { return !backward_fn; }
  // Returns the gradient buffer, zero-allocating it on first use.
  Buffer& grad_buffer();
};

}  // namespace detail

/// Dense row-major array of 64-bit floats with an optional gradient slot.
///
/// `Tensor` is a shared handle: copies alias the same storage, which is how a
/// parameter is referenced from several places of the model. Operations in
/// ops.hpp record a backward closure when any input requires a gradient, and
/// `backward()` on a scalar result accumulates d(result)/d(leaf) into the grad
/// slot of every reachable leaf that requires one.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, Buffer data, bool requires_grad = false);
  Tensor(Shape shape, const std::vector<double>& data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  // 1-D tensor or a rows x cols matrix from nested initializer lists.
  static Tensor vector(std::vector<double> values, bool requires_grad = false);
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows,
                       bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t numel() const;
  // Matrix view: cols is the last extent, rows the product of the others.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<double> data();
  std::span<const double> data() const;
  double item() const;
  double at(std::size_t r, std::size_t c) const;

  bool requires_grad() const;
  void set_requires_grad(bool flag);
  bool has_grad() const;
  std::span<double> grad();
  std::span<const double> grad() const;
  void zero_grad();
  void clear_grad();

  bool is_leaf() const;
  // A new leaf holding a copy of the values, detached from the graph.
  Tensor detach() const;
  Tensor clone() const { return detach(); }

  // Reverse-mode sweep from this scalar.
  void backward() const;

  // Storage identity: true when both handles refer to the same node.
  bool same_storage(const Tensor& other) const { return node_ == other.node_; }
  const void* storage_id() const { return node_.get(); }

  // Used by op implementations to build interior graph nodes.
  static Tensor make_result(Shape shape, Buffer data,
                            std::vector<Tensor> parents,
                            std::function<void(detail::Node&)> backward_fn);
  detail::Node& node() const;

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;
};

/// Storage ids of every requires-grad leaf reachable from `root` through the
/// recorded graph.
std::vector<const void*> reachable_leaves(const Tensor& root);

}  // namespace mvlt
