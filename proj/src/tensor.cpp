#include "simba/tensor.hpp"

#include <algorithm>
#include <numeric>

#include "op_support.hpp"
#include "simba/error.hpp"
#include "simba/rng.hpp"

namespace simba {

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

std::string_view dtype_name(Dtype dtype) {
  return dtype == Dtype::real32 ? "real32" : "real64";
}

std::size_t dtype_size(Dtype dtype) { return dtype == Dtype::real32 ? 4 : 8; }

namespace detail {

template <typename T>
Tape<T>*& active_tape_slot() {
  thread_local Tape<T>* slot = nullptr;
  return slot;
}

template Tape<float>*& active_tape_slot<float>();
template Tape<double>*& active_tape_slot<double>();

}  // namespace detail

template <typename T>
Tensor<T>::Tensor() = default;

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : node_(std::make_shared<detail::Node<T>>()) {
  node_->data.assign(shape_numel(shape), fill);
  node_->shape = std::move(shape);
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data, bool requires_grad)
    : node_(std::make_shared<detail::Node<T>>()) {
  if (shape_numel(shape) != data.size())
    throw DimensionError("Tensor: shape " + shape_str(shape) + " needs " +
                         std::to_string(shape_numel(shape)) + " elements, got " +
                         std::to_string(data.size()));
  node_->shape = std::move(shape);
  node_->data = std::move(data);
  node_->requires_grad = requires_grad;
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value) {
  return Tensor(Shape{}, std::vector<T>{value});
}

template <typename T>
Tensor<T> Tensor<T>::randn(Shape shape, Rng& rng, double stddev) {
  Tensor t(std::move(shape));
  for (T& v : t.node_->data) v = static_cast<T>(rng.normal() * stddev);
  return t;
}

template <typename T>
Tensor<T> Tensor<T>::uniform(Shape shape, Rng& rng, double lo, double hi) {
  Tensor t(std::move(shape));
  for (T& v : t.node_->data) v = static_cast<T>(rng.uniform(lo, hi));
  return t;
}

template <typename T>
std::size_t Tensor<T>::dim(int axis) const {
  return node_->shape[detail::normalize_axis(axis, ndim(), "Tensor::dim")];
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1)
    throw ContractError("Tensor::item: tensor of shape " + shape_str(shape()) +
                        " is not a single element");
  return node_->data[0];
}

template <typename T>
Tensor<T>& Tensor<T>::set_requires_grad(bool flag) {
  node_->requires_grad = flag;
  return *this;
}

template <typename T>
Tensor<T> Tensor<T>::grad() const {
  if (node_->grad.empty()) return Tensor(node_->shape, T(0));
  return Tensor(node_->shape, node_->grad);
}

template <typename T>
void Tensor<T>::zero_grad() {
  if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), T(0));
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  return Tensor(node_->shape, node_->data);
}

template <typename T>
template <typename U>
Tensor<U> Tensor<T>::cast() const {
  std::vector<U> out(node_->data.begin(), node_->data.end());
  return Tensor<U>(node_->shape, std::move(out));
}

template <typename T>
Tape<T>::Tape() : previous_(detail::active_tape_slot<T>()) {
  detail::active_tape_slot<T>() = this;
}

template <typename T>
Tape<T>::~Tape() {
  detail::active_tape_slot<T>() = previous_;
}

template <typename T>
Tape<T>* Tape<T>::active() {
  return detail::active_tape_slot<T>();
}

template <typename T>
void Tape<T>::record(std::shared_ptr<detail::Node<T>> out, Backward fn) {
  entries_.push_back({std::move(out), std::move(fn)});
}

template <typename T>
void Tape<T>::backward(const Tensor<T>& loss) {
  if (!loss.defined() || loss.numel() != 1)
    throw ContractError("backward: loss must be a scalar, got shape " +
                        (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
  if (!loss.requires_grad()) return;
  // Backward must not record new operations.
  NoGradGuard<T> guard;
  loss.node()->grad_buffer()[0] += T(1);
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    if (it->out->grad.empty()) continue;  // not on a path to the loss
    it->fn(*it->out);
  }
}

template <typename T>
NoGradGuard<T>::NoGradGuard() : saved_(detail::active_tape_slot<T>()) {
  detail::active_tape_slot<T>() = nullptr;
}

template <typename T>
NoGradGuard<T>::~NoGradGuard() {
  detail::active_tape_slot<T>() = saved_;
}

template class Tensor<float>;
template class Tensor<double>;
template Tensor<double> Tensor<float>::cast<double>() const;
template Tensor<float> Tensor<double>::cast<float>() const;
template Tensor<float> Tensor<float>::cast<float>() const;
template Tensor<double> Tensor<double>::cast<double>() const;
template class Tape<float>;
template class Tape<double>;
template class NoGradGuard<float>;
template class NoGradGuard<double>;

}  // namespace simba
