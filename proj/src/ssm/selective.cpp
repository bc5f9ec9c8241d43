#include <algorithm>
#include <cmath>

#include "op_support.hpp"
#include "simba/ops.hpp"
#include "simba/rng.hpp"
#include "simba/ssm.hpp"

namespace simba {

using detail::grad_sink;
using detail::make_output;
using detail::should_record;

template <typename T>
Tensor<T> selective_scan(const Tensor<T>& x, const Tensor<T>& delta, const Tensor<T>& a,
                         const Tensor<T>& b_t, const Tensor<T>& c_t, const Tensor<T>& d_skip) {
  if (x.ndim() != 3)
    throw DimensionError("selective_scan: x must be (B, L, P), got " + shape_str(x.shape()));
  const std::size_t nb = x.shape()[0], len = x.shape()[1], p = x.shape()[2];
  if (a.ndim() != 2 || a.shape()[0] != p)
    throw DimensionError("selective_scan: A " + shape_str(a.shape()) + " does not match x " +
                         shape_str(x.shape()));
  const std::size_t k = a.shape()[1];
  if (delta.shape() != x.shape())
    throw DimensionError("selective_scan: delta " + shape_str(delta.shape()) +
                         " does not match x " + shape_str(x.shape()));
  const Shape bc_shape{nb, len, k};
  if (b_t.shape() != bc_shape || c_t.shape() != bc_shape)
    throw DimensionError("selective_scan: B " + shape_str(b_t.shape()) + " and C " +
                         shape_str(c_t.shape()) + " must be " + shape_str(bc_shape));
  if (d_skip.shape() != Shape{p})
    throw DimensionError("selective_scan: D " + shape_str(d_skip.shape()) + " must be (" +
                         std::to_string(p) + ")");
  for (T v : a.data())
    if (!(v < T(0))) throw InvariantError("selective_scan: A entries must be negative");
  for (T v : delta.data())
    if (!(v > T(0))) throw InvariantError("selective_scan: step sizes must be positive");

  const bool record = should_record({&x, &delta, &a, &b_t, &c_t, &d_skip});
  const auto& xd = x.data();
  const auto& dd = delta.data();
  const auto& ad = a.data();
  const auto& bd = b_t.data();
  const auto& cd = c_t.data();
  const auto& sd = d_skip.data();

  std::vector<T> y(nb * len * p);
  // Hidden states and decays per (b, t, p, k), kept only for backward.
  std::vector<T> states, decays;
  if (record) {
    states.resize(nb * len * p * k);
    decays.resize(nb * len * p * k);
  }
  std::vector<T> h(p * k);
  for (std::size_t b = 0; b < nb; ++b) {
    std::fill(h.begin(), h.end(), T(0));
    for (std::size_t t = 0; t < len; ++t) {
      const std::size_t row = (b * len + t);
      const T* bk = &bd[row * k];
      const T* ck = &cd[row * k];
      for (std::size_t c = 0; c < p; ++c) {
        const T xv = xd[row * p + c];
        const T dt = dd[row * p + c];
        const T dx = dt * xv;
        T* hc = &h[c * k];
        const T* ac = &ad[c * k];
        T acc = 0;
        for (std::size_t j = 0; j < k; ++j) {
          const T decay = std::exp(dt * ac[j]);
          hc[j] = decay * hc[j] + dx * bk[j];
          acc += ck[j] * hc[j];
          if (record) {
            states[(row * p + c) * k + j] = hc[j];
            decays[(row * p + c) * k + j] = decay;
          }
        }
        y[row * p + c] = acc + sd[c] * xv;
      }
    }
  }

  return make_output(
      x.shape(), std::move(y), record,
      [x, delta, a, b_t, c_t, d_skip, states = std::move(states), decays = std::move(decays), nb,
       len, p, k](const std::vector<T>& g) {
        auto* gx = grad_sink(x);
        auto* gdelta = grad_sink(delta);
        auto* ga = grad_sink(a);
        auto* gb = grad_sink(b_t);
        auto* gc = grad_sink(c_t);
        auto* gd = grad_sink(d_skip);
        const auto& xd = x.data();
        const auto& dd = delta.data();
        const auto& ad = a.data();
        const auto& bd = b_t.data();
        const auto& cd = c_t.data();
        const auto& sd = d_skip.data();
        // gh holds dL/dh_t, accumulated from later steps through the decay.
        std::vector<T> gh(p * k);
        for (std::size_t b = 0; b < nb; ++b) {
          std::fill(gh.begin(), gh.end(), T(0));
          for (std::size_t t = len; t-- > 0;) {
            const std::size_t row = b * len + t;
            const T* bk = &bd[row * k];
            const T* ck = &cd[row * k];
            for (std::size_t c = 0; c < p; ++c) {
              const std::size_t idx = row * p + c;
              const T gy = g[idx];
              const T xv = xd[idx];
              const T dt = dd[idx];
              const T* hs = &states[idx * k];
              const T* dec = &decays[idx * k];
              const T* hprev = t > 0 ? &states[(idx - p) * k] : nullptr;
              const T* ac = &ad[c * k];
              T* ghc = &gh[c * k];
              T gxv = gy * sd[c];
              T gdt = 0;
              if (gd) (*gd)[c] += gy * xv;
              for (std::size_t j = 0; j < k; ++j) {
                if (gc) (*gc)[row * k + j] += gy * hs[j];
                const T ghj = ghc[j] + ck[j] * gy;
                const T hp = hprev ? hprev[j] : T(0);
                const T gdecay = ghj * hp * dec[j];  // dL/d(dt * A)
                gdt += gdecay * ac[j] + ghj * bk[j] * xv;
                if (ga) (*ga)[c * k + j] += gdecay * dt;
                if (gb) (*gb)[row * k + j] += ghj * dt * xv;
                gxv += ghj * dt * bk[j];
                ghc[j] = ghj * dec[j];
              }
              if (gx) (*gx)[idx] += gxv;
              if (gdelta) (*gdelta)[idx] += gdt;
            }
          }
        }
      });
}

template <typename T>
Tensor<T> causal_conv1d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  if (x.ndim() != 3)
    throw DimensionError("causal_conv1d: x must be (B, L, P), got " + shape_str(x.shape()));
  const std::size_t nb = x.shape()[0], len = x.shape()[1], p = x.shape()[2];
  if (weight.ndim() != 2 || weight.shape()[0] != p || weight.shape()[1] == 0)
    throw DimensionError("causal_conv1d: weight " + shape_str(weight.shape()) +
                         " does not match x " + shape_str(x.shape()));
  if (bias.shape() != Shape{p})
    throw DimensionError("causal_conv1d: bias " + shape_str(bias.shape()) + " must be (" +
                         std::to_string(p) + ")");
  const std::size_t w = weight.shape()[1];
  const auto& xd = x.data();
  const auto& wd = weight.data();
  const auto& bd = bias.data();
  std::vector<T> y(x.numel());
  for (std::size_t b = 0; b < nb; ++b)
    for (std::size_t t = 0; t < len; ++t) {
      T* yr = &y[(b * len + t) * p];
      for (std::size_t c = 0; c < p; ++c) yr[c] = bd[c];
      for (std::size_t j = 0; j < w; ++j) {
        // tap j reads position t - (w - 1) + j
        if (t + j < w - 1) continue;
        const T* xr = &xd[(b * len + t + j - (w - 1)) * p];
        for (std::size_t c = 0; c < p; ++c) yr[c] += wd[c * w + j] * xr[c];
      }
    }
  return make_output(x.shape(), std::move(y), should_record({&x, &weight, &bias}),
                     [x, weight, bias, nb, len, p, w](const std::vector<T>& g) {
                       auto* gx = grad_sink(x);
                       auto* gw = grad_sink(weight);
                       auto* gbias = grad_sink(bias);
                       const auto& xd = x.data();
                       const auto& wd = weight.data();
                       for (std::size_t b = 0; b < nb; ++b)
                         for (std::size_t t = 0; t < len; ++t) {
                           const T* gr = &g[(b * len + t) * p];
                           if (gbias)
                             for (std::size_t c = 0; c < p; ++c) (*gbias)[c] += gr[c];
                           for (std::size_t j = 0; j < w; ++j) {
                             if (t + j < w - 1) continue;
                             const std::size_t src = (b * len + t + j - (w - 1)) * p;
                             for (std::size_t c = 0; c < p; ++c) {
                               if (gx) (*gx)[src + c] += gr[c] * wd[c * w + j];
                               if (gw) (*gw)[c * w + j] += gr[c] * xd[src + c];
                             }
                           }
                         }
                     });
}

template <typename T>
SsmParams<T> SsmParams<T>::init(std::size_t dim, const SsmConfig& config, Rng& rng) {
  if (dim == 0 || config.expand == 0 || config.state == 0 || config.conv_width == 0)
    throw ParameterError("SsmParams::init: dimensions must be positive");
  const std::size_t p = config.expand * dim, k = config.state, w = config.conv_width;
  auto bound = [](std::size_t fan_in) { return 1.0 / std::sqrt(static_cast<double>(fan_in)); };
  SsmParams s;
  s.in_x = Tensor<T>::uniform({dim, p}, rng, -bound(dim), bound(dim));
  s.in_z = Tensor<T>::uniform({dim, p}, rng, -bound(dim), bound(dim));
  s.conv_weight = Tensor<T>::uniform({p, w}, rng, -bound(w), bound(w));
  s.conv_bias = Tensor<T>::uniform({p}, rng, -bound(w), bound(w));
  s.proj_b = Tensor<T>::uniform({p, k}, rng, -bound(p), bound(p));
  s.proj_c = Tensor<T>::uniform({p, k}, rng, -bound(p), bound(p));
  s.proj_delta = Tensor<T>::uniform({p, 1}, rng, -bound(p), bound(p));
  s.delta_up = Tensor<T>::uniform({1, p}, rng, -1.0, 1.0);

  // Initial step sizes log-uniform in [1e-3, 1e-1], stored pre-softplus.
  std::vector<T> db(p);
  for (auto& v : db) {
    const double dt = std::exp(rng.uniform(std::log(1e-3), std::log(1e-1)));
    v = static_cast<T>(dt + std::log(-std::expm1(-dt)));
  }
  s.delta_bias = Tensor<T>({p}, std::move(db));

  std::vector<T> al(p * k);
  for (std::size_t c = 0; c < p; ++c)
    for (std::size_t j = 0; j < k; ++j) al[c * k + j] = static_cast<T>(std::log(double(j + 1)));
  s.a_log = Tensor<T>({p, k}, std::move(al));
  s.d_skip = Tensor<T>::ones({p});
  s.proj_out = Tensor<T>::uniform({p, dim}, rng, -bound(p), bound(p));
  s.reverse = config.reverse;
  for (Tensor<T>* t : {&s.in_x, &s.in_z, &s.conv_weight, &s.conv_bias, &s.proj_b, &s.proj_c,
                       &s.proj_delta, &s.delta_up, &s.delta_bias, &s.a_log, &s.d_skip, &s.proj_out})
    t->set_requires_grad(true);
  return s;
}

template <typename T>
Tensor<T> mamba_block(const Tensor<T>& x, const SsmParams<T>& params, SsmProbe* probe) {
  if (x.ndim() != 3 || x.shape()[2] != params.dim())
    throw DimensionError("mamba_block: expected (B, N, " + std::to_string(params.dim()) +
                         "), got " + shape_str(x.shape()));
  const Tensor<T> in = params.reverse ? flip(x, 1) : x;
  const Tensor<T> xp = matmul(in, params.in_x);
  const Tensor<T> z = matmul(in, params.in_z);
  const Tensor<T> xc = silu(causal_conv1d(xp, params.conv_weight, params.conv_bias));
  const Tensor<T> bt = matmul(xc, params.proj_b);
  const Tensor<T> ct = matmul(xc, params.proj_c);
  const Tensor<T> dt = softplus(
      add(matmul(matmul(xc, params.proj_delta), params.delta_up), params.delta_bias));
  const Tensor<T> a = neg(exp(params.a_log));
  if (probe != nullptr) {
    for (T v : dt.data()) probe->min_delta = std::min(probe->min_delta, double(v));
    for (T v : a.data()) probe->max_a = std::max(probe->max_a, double(v));
    ++probe->calls;
  }
  const Tensor<T> y = mul(selective_scan(xc, dt, a, bt, ct, params.d_skip), silu(z));
  const Tensor<T> out = matmul(y, params.proj_out);
  return params.reverse ? flip(out, 1) : out;
}

#define SIMBA_INSTANTIATE_SSM(T)                                                             \
  template Tensor<T> selective_scan(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,    \
                                    const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);   \
  template Tensor<T> causal_conv1d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);    \
  template struct SsmParams<T>;                                                              \
  template Tensor<T> mamba_block(const Tensor<T>&, const SsmParams<T>&, SsmProbe*);

SIMBA_INSTANTIATE_SSM(float)
SIMBA_INSTANTIATE_SSM(double)

}  // namespace simba
