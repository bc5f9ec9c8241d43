#pragma once

// Differentiable tensor operations. Binary elementwise operations broadcast
// on leading axes only: the shape of one operand must be a suffix of the
// other's, e.g. (B, N, D) + (D).

#include <cstdint>
#include <vector>

#include "simba/tensor.hpp"

namespace simba {

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, T value);
template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor);
template <typename T>
Tensor<T> neg(const Tensor<T>& x);

template <typename T>
Tensor<T> exp(const Tensor<T>& x);
// Natural log; non-positive inputs are a ParameterError.
template <typename T>
Tensor<T> log(const Tensor<T>& x);
template <typename T>
Tensor<T> square(const Tensor<T>& x);
template <typename T>
Tensor<T> tanh(const Tensor<T>& x);
template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x);
template <typename T>
Tensor<T> relu(const Tensor<T>& x);
template <typename T>
Tensor<T> silu(const Tensor<T>& x);
// log(1 + exp(x)), never exactly zero for finite input.
template <typename T>
Tensor<T> softplus(const Tensor<T>& x);
// tanh approximation.
template <typename T>
Tensor<T> gelu(const Tensor<T>& x);

template <typename T>
Tensor<T> sum(const Tensor<T>& x);
template <typename T>
Tensor<T> mean(const Tensor<T>& x);
// Mean over one axis; the axis is removed from the result.
template <typename T>
Tensor<T> mean_axis(const Tensor<T>& x, int axis);

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape);
template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& order);
// Swaps the last two axes.
template <typename T>
Tensor<T> transpose(const Tensor<T>& x);
template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, int axis);
// Half-open range [begin, end) along axis.
template <typename T>
Tensor<T> slice(const Tensor<T>& x, int axis, std::size_t begin, std::size_t end);
template <typename T>
Tensor<T> flip(const Tensor<T>& x, int axis);
// Repeats an extent-1 axis n times.
template <typename T>
Tensor<T> expand(const Tensor<T>& x, int axis, std::size_t n);

// (..., M, K) x (K, N) -> (..., M, N), or batched with identical leading axes.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
// x W (+ bias). An undefined bias tensor is skipped.
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias = {});

// Normalizes over the last axis. gamma/beta may be undefined (no affine).
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     double eps);

// Inverted dropout. Identity (same storage) when !train or p == 0.
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double p, bool train, Rng* rng);

// Mean cross entropy of logits (N, K) against (1 - s) one-hot + s / K.
template <typename T>
Tensor<T> cross_entropy_smoothed(const Tensor<T>& logits, const std::vector<std::int64_t>& labels,
                                 double smoothing);
template <typename T>
Tensor<T> mse_loss(const Tensor<T>& pred, const Tensor<T>& target);
template <typename T>
Tensor<T> mae_loss(const Tensor<T>& pred, const Tensor<T>& target);

}  // namespace simba
