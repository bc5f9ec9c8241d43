#include "simba/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "simba/error.hpp"
#include "simba/rng.hpp"

namespace simba {

GradCheckResult check_gradients(const std::function<Tensor64()>& loss_fn,
                                const std::vector<NamedTensor>& inputs,
                                const GradCheckOptions& options) {
  std::vector<bool> saved_flags;
  for (const auto& in : inputs) {
    saved_flags.push_back(in.tensor.requires_grad());
    Tensor64 t = in.tensor;
    t.set_requires_grad(true);
    t.zero_grad();
  }
  {
    Tape<double> tape;
    Tensor64 loss = loss_fn();
    tape.backward(loss);
  }

  GradCheckResult result;
  result.passed = true;
  Rng rng(options.seed);
  for (std::size_t ti = 0; ti < inputs.size(); ++ti) {
    Tensor64 t = inputs[ti].tensor;
    const Tensor64 grad = t.grad();
    const std::vector<double> analytic(grad.data().begin(), grad.data().end());

    std::vector<std::size_t> probes(t.numel());
    std::iota(probes.begin(), probes.end(), std::size_t{0});
    if (options.max_probes_per_tensor != 0 && probes.size() > options.max_probes_per_tensor) {
      for (std::size_t i = 0; i < options.max_probes_per_tensor; ++i)
        std::swap(probes[i], probes[i + rng.below(probes.size() - i)]);
      probes.resize(options.max_probes_per_tensor);
    }

    GradCheckEntry entry{inputs[ti].name, probes.size(), 0.0, 0.0};
    auto values = t.mutable_data();
    for (std::size_t idx : probes) {
      const double original = values[idx];
      values[idx] = original + options.step;
      const double plus = loss_fn().item();
      values[idx] = original - options.step;
      const double minus = loss_fn().item();
      values[idx] = original;
      const double numeric = (plus - minus) / (2.0 * options.step);
      const double abs_err = std::abs(numeric - analytic[idx]);
      const double denom = std::max({std::abs(numeric), std::abs(analytic[idx]), options.floor});
      double rel = abs_err / denom;
      if (!std::isfinite(rel)) rel = INFINITY;
      entry.max_abs_error = std::max(entry.max_abs_error, abs_err);
      entry.max_rel_error = std::max(entry.max_rel_error, rel);
    }
    result.max_rel_error = std::max(result.max_rel_error, entry.max_rel_error);
    if (!(entry.max_rel_error < options.tolerance)) result.passed = false;
    result.entries.push_back(std::move(entry));
  }

  for (std::size_t ti = 0; ti < inputs.size(); ++ti) {
    Tensor64 t = inputs[ti].tensor;
    t.zero_grad();
    t.set_requires_grad(saved_flags[ti]);
  }
  return result;
}

}  // namespace simba
