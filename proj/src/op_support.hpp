#pragma once

// Internal helpers shared by the operation implementations.

#include <initializer_list>
#include <type_traits>
#include <utility>
#include <vector>

#include "simba/error.hpp"
#include "simba/tensor.hpp"

namespace simba::detail {

template <typename T>
Tape<T>*& active_tape_slot();

// True when an active tape exists and any input participates in a graph.
template <typename T>
bool should_record(std::initializer_list<const Tensor<T>*> inputs) {
  if (active_tape_slot<T>() == nullptr) return false;
  for (const Tensor<T>* t : inputs)
    if (t != nullptr && t->defined() && t->requires_grad()) return true;
  return false;
}

// Wraps computed data into a tensor and, when record is set, registers the
// backward callback on the active tape. The callback is invoked as
// fn(grad_out) or, if it accepts two arguments, fn(grad_out, out_data).
template <typename T, typename Fn>
Tensor<T> make_output(Shape shape, std::vector<T> data, bool record, Fn&& backward) {
  Tensor<T> out(std::move(shape), std::move(data));
  if (record) {
    out.node()->requires_grad = true;
    active_tape_slot<T>()->record(out.node(), [fn = std::forward<Fn>(backward)](Node<T>& node) {
      if constexpr (std::is_invocable_v<Fn, const std::vector<T>&, const std::vector<T>&>)
        fn(node.grad, node.data);
      else
        fn(node.grad);
    });
  }
  return out;
}

// Gradient buffer of t if it should receive gradient, else nullptr.
template <typename T>
std::vector<T>* grad_sink(const Tensor<T>& t) {
  if (!t.defined() || !t.requires_grad()) return nullptr;
  return &t.node()->grad_buffer();
}

inline std::size_t normalize_axis(int axis, std::size_t ndim, const char* op) {
  const int n = static_cast<int>(ndim);
  if (axis < -n || axis >= n)
    throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) +
                         " out of range for rank " + std::to_string(ndim));
  return static_cast<std::size_t>(axis < 0 ? axis + n : axis);
}

}  // namespace simba::detail
