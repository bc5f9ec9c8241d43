#pragma once

#include <algorithm>
#include <cmath>
#include <span>

#include "simba/gradcheck.hpp"
#include "simba/ops.hpp"
#include "simba/rng.hpp"
#include "simba/tensor.hpp"

namespace simba::testing {

inline Tensor64 rand_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  return Tensor64::uniform(std::move(shape), rng, lo, hi);
}

// sum(w * y) with fixed random weights, so every output element carries a
// distinct gradient.
inline Tensor64 weighted_sum(const Tensor64& y, std::uint64_t seed = 99) {
  Rng rng(seed);
  return sum(mul(y, Tensor64::uniform(y.shape(), rng, -1.0, 1.0)));
}

template <typename A, typename B>
double max_abs_diff(const A& a, const B& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  return m;
}

inline double max_rel_diff(std::span<const double> a, std::span<const double> b) {
  double scale = 0.0;
  for (double v : b) scale = std::max(scale, std::abs(v));
  return max_abs_diff(a, b) / std::max(scale, 1e-300);
}

}  // namespace simba::testing
