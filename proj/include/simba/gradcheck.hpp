#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "simba/tensor.hpp"

namespace simba {

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  // Denominator floor: |a - n| / max(|a|, |n|, floor). Gradients far below the
  // floor are compared in absolute terms, where central differences at step h
  // cannot resolve them anyway.
  double floor = 1e-3;
  // 0 checks every element; otherwise a seeded random subset per tensor.
  std::size_t max_probes_per_tensor = 0;
  std::uint64_t seed = 0;
};

struct GradCheckEntry {
  std::string name;
  std::size_t probes = 0;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
};

struct GradCheckResult {
  std::vector<GradCheckEntry> entries;
  double max_rel_error = 0.0;
  bool passed = false;
};

struct NamedTensor {
  std::string name;
  Tensor64 tensor;
};

// Compares reverse-mode gradients of loss_fn with respect to each input
// against central finite differences. loss_fn must read the inputs through
// the given handles and return a scalar; it is called once under a tape and
// then repeatedly without one while single elements are perturbed in place.
GradCheckResult check_gradients(const std::function<Tensor64()>& loss_fn,
                                const std::vector<NamedTensor>& inputs,
                                const GradCheckOptions& options = {});

}  // namespace simba
