#pragma once

// Dense row-major tensors with tape-based reverse-mode differentiation.
//
// A Tensor is a cheap handle onto shared storage. Operations executed while a
// Tape is active on the current thread, and that read at least one tensor with
// requires_grad set, are recorded on that tape; Tape::backward replays them in
// reverse order. With no active tape nothing is recorded, so inference over
// frozen weights never touches shared mutable state.
//
// Complex values are carried as a pair of real tensors (ComplexTensor) and all
// complex arithmetic is lowered to real operations, so the tape only ever
// differentiates real scalars.

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace simba {

class Rng;

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

enum class Dtype { real32, real64 };

template <typename T>
constexpr Dtype dtype_of();
template <>
constexpr Dtype dtype_of<float>() {
  return Dtype::real32;
}
template <>
constexpr Dtype dtype_of<double>() {
  return Dtype::real64;
}

std::string_view dtype_name(Dtype dtype);
std::size_t dtype_size(Dtype dtype);

namespace detail {

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until a gradient reaches this node
  bool requires_grad = false;

  std::vector<T>& grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), T(0));
    return grad;
  }
};

}  // namespace detail

template <typename T>
class Tensor {
 public:
  using value_type = T;
  using NodePtr = std::shared_ptr<detail::Node<T>>;

  Tensor();
  explicit Tensor(Shape shape, T fill = T(0));
  Tensor(Shape shape, std::vector<T> data, bool requires_grad = false);

  static Tensor scalar(T value);
  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), T(0)); }
  static Tensor ones(Shape shape) { return Tensor(std::move(shape), T(1)); }
  static Tensor full(Shape shape, T value) { return Tensor(std::move(shape), value); }
  static Tensor randn(Shape shape, Rng& rng, double stddev = 1.0);
  static Tensor uniform(Shape shape, Rng& rng, double lo, double hi);

  bool defined() const noexcept { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t ndim() const { return node_->shape.size(); }
  // Negative axes count from the back.
  std::size_t dim(int axis) const;
  std::size_t numel() const { return node_->data.size(); }

  std::span<const T> data() const { return node_->data; }
  // In-place access for initialization and optimizer updates only.
  std::span<T> mutable_data() { return node_->data; }
  T item() const;
  T operator[](std::size_t flat_index) const { return node_->data[flat_index]; }

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool flag);

  bool has_grad() const { return !node_->grad.empty(); }
  // Copy of the accumulated gradient; zeros when nothing reached this tensor.
  Tensor grad() const;
  std::span<T> mutable_grad() { return node_->grad_buffer(); }
  void zero_grad();

  // Same values, cut from any graph.
  Tensor detach() const;
  template <typename U>
  Tensor<U> cast() const;

  const NodePtr& node() const { return node_; }

 private:
  NodePtr node_;
};

template <typename T>
struct ComplexTensor {
  Tensor<T> re;
  Tensor<T> im;

  const Shape& shape() const { return re.shape(); }
};

// Ordered record of differentiable operations. Constructing a Tape makes it
// the active tape for scalar type T on this thread; destruction restores the
// previous one.
template <typename T>
class Tape {
 public:
  using Backward = std::function<void(detail::Node<T>& out)>;

  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active();

  void record(std::shared_ptr<detail::Node<T>> out, Backward fn);
  // loss must be a single-element tensor. Gradients accumulate into every
  // reachable leaf with requires_grad set.
  void backward(const Tensor<T>& loss);
  std::size_t size() const { return entries_.size(); }
  void clear() { entries_.clear(); }

 private:
  struct Entry {
    std::shared_ptr<detail::Node<T>> out;
    Backward fn;
  };
  std::vector<Entry> entries_;
  Tape* previous_;
};

// Suspends recording on this thread for the lifetime of the guard.
template <typename T>
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  Tape<T>* saved_;
};

using Tensor32 = Tensor<float>;
using Tensor64 = Tensor<double>;

}  // namespace simba
