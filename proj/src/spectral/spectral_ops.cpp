#include <Eigen/Core>
#include <cmath>

#include "op_support.hpp"
#include "simba/error.hpp"
#include "simba/ops.hpp"
#include "simba/rng.hpp"
#include "simba/spectral.hpp"

namespace simba {

using detail::grad_sink;
using detail::make_output;
using detail::normalize_axis;
using detail::should_record;

namespace {

struct Lanes {
  std::size_t outer = 1, extent = 1, inner = 1;
};

Lanes lanes_of(const Shape& shape, std::size_t axis) {
  Lanes l;
  for (std::size_t i = 0; i < axis; ++i) l.outer *= shape[i];
  l.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) l.inner *= shape[i];
  return l;
}

// Orthonormal half-spectrum of each lane of x (extent n) into re/im (extent n/2+1).
template <typename T>
void rfft_lanes(std::span<const T> x, const Lanes& l, std::vector<T>& re, std::vector<T>& im) {
  const std::size_t n = l.extent, bins = n / 2 + 1;
  const double s = 1.0 / std::sqrt(static_cast<double>(n));
  std::vector<cdouble> buf(n);
  for (std::size_t o = 0; o < l.outer; ++o)
    for (std::size_t i = 0; i < l.inner; ++i) {
      for (std::size_t k = 0; k < n; ++k) buf[k] = {static_cast<double>(x[(o * n + k) * l.inner + i]), 0.0};
      fft_inplace(buf);
      // exactly real for real input; Bluestein leaves rounding residue
      buf[0].imag(0.0);
      if (n % 2 == 0) buf[n / 2].imag(0.0);
      for (std::size_t k = 0; k < bins; ++k) {
        re[(o * bins + k) * l.inner + i] = static_cast<T>(buf[k].real() * s);
        im[(o * bins + k) * l.inner + i] = static_cast<T>(buf[k].imag() * s);
      }
    }
}

// Real part of the orthonormal inverse of a zero-padded or Hermitian-extended
// half spectrum. With hermitian=false bins above n/2 are treated as zero,
// which is the adjoint of rfft_lanes.
template <typename T>
void irfft_lanes(std::span<const T> re, std::span<const T> im, const Lanes& out_lanes, bool hermitian,
                 std::span<T> out, bool accumulate) {
  const std::size_t n = out_lanes.extent, bins = n / 2 + 1;
  const double s = 1.0 / std::sqrt(static_cast<double>(n));
  std::vector<cdouble> buf(n);
  for (std::size_t o = 0; o < out_lanes.outer; ++o)
    for (std::size_t i = 0; i < out_lanes.inner; ++i) {
      std::fill(buf.begin(), buf.end(), cdouble{});
      for (std::size_t k = 0; k < bins; ++k) {
        const std::size_t src = (o * bins + k) * out_lanes.inner + i;
        buf[k] = {static_cast<double>(re[src]), static_cast<double>(im[src])};
      }
      if (hermitian)
        for (std::size_t k = bins; k < n; ++k) buf[k] = std::conj(buf[n - k]);
      fft_inplace(buf, true);
      for (std::size_t k = 0; k < n; ++k) {
        T& dst = out[(o * n + k) * out_lanes.inner + i];
        const T v = static_cast<T>(buf[k].real() * s);
        dst = accumulate ? dst + v : v;
      }
    }
}

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
T shrink(T v, T lambda) {
  if (v > lambda) return v - lambda;
  if (v < -lambda) return v + lambda;
  return T(0);
}

}  // namespace

template <typename T>
SpectrumHalf<T> fft_real(const Tensor<T>& x, int axis) {
  const std::size_t ax = normalize_axis(axis, x.ndim(), "fft_real");
  const Lanes l = lanes_of(x.shape(), ax);
  if (l.extent == 0) throw DimensionError("fft_real: empty transform axis in " + shape_str(x.shape()));
  Shape shape = x.shape();
  shape[ax] = l.extent / 2 + 1;
  std::vector<T> re(shape_numel(shape)), im(shape_numel(shape));
  rfft_lanes<T>(x.data(), l, re, im);

  const bool record = should_record({&x});
  // Both outputs feed one shared adjoint; each half accumulates its part.
  auto backward_part = [x, l, shape](bool imag_part) {
    return [x, l, shape, imag_part](const std::vector<T>& g) {
      auto* gx = grad_sink(x);
      if (!gx) return;
      std::vector<T> zeros(g.size(), T(0));
      std::span<const T> gre = imag_part ? std::span<const T>(zeros) : std::span<const T>(g);
      std::span<const T> gim = imag_part ? std::span<const T>(g) : std::span<const T>(zeros);
      irfft_lanes<T>(gre, gim, l, false, *gx, true);
    };
  };
  Tensor<T> out_re = make_output(shape, std::move(re), record, backward_part(false));
  Tensor<T> out_im = make_output(shape, std::move(im), record, backward_part(true));
  return {out_re, out_im};
}

template <typename T>
Tensor<T> ifft_real(const SpectrumHalf<T>& spectrum, std::size_t n, int axis) {
  const Tensor<T>& re = spectrum.re;
  const Tensor<T>& im = spectrum.im;
  if (re.shape() != im.shape())
    throw DimensionError("ifft_real: real part " + shape_str(re.shape()) + " and imaginary part " +
                         shape_str(im.shape()) + " differ");
  const std::size_t ax = normalize_axis(axis, re.ndim(), "ifft_real");
  if (n == 0 || re.shape()[ax] != n / 2 + 1)
    throw DimensionError("ifft_real: spectrum " + shape_str(re.shape()) + " has " +
                         std::to_string(re.shape()[ax]) + " bins on axis " + std::to_string(ax) +
                         ", inconsistent with length " + std::to_string(n));
  Shape shape = re.shape();
  shape[ax] = n;
  const Lanes out_lanes = lanes_of(shape, ax);
  std::vector<T> out(shape_numel(shape));
  irfft_lanes<T>(re.data(), im.data(), out_lanes, true, out, false);

  return make_output(std::move(shape), std::move(out), should_record({&re, &im}),
                     [re, im, out_lanes, n](const std::vector<T>& g) {
                       auto* gre = grad_sink(re);
                       auto* gim = grad_sink(im);
                       if (!gre && !gim) return;
                       const std::size_t bins = n / 2 + 1;
                       std::vector<T> sre(re.numel()), sim(re.numel());
                       rfft_lanes<T>(g, out_lanes, sre, sim);
                       for (std::size_t o = 0; o < out_lanes.outer; ++o)
                         for (std::size_t k = 0; k < bins; ++k) {
                           // interior bins stand for a conjugate pair
                           const bool single = k == 0 || (n % 2 == 0 && k == n / 2);
                           const T c = single ? T(1) : T(2);
                           for (std::size_t i = 0; i < out_lanes.inner; ++i) {
                             const std::size_t idx = (o * bins + k) * out_lanes.inner + i;
                             if (gre) (*gre)[idx] += c * sre[idx];
                             if (gim) (*gim)[idx] += single ? T(0) : c * sim[idx];
                           }
                         }
                     });
}

template <typename T>
Tensor<T> emm(const Tensor<T>& input, const Tensor<T>& weight) {
  if (weight.ndim() != 3 || weight.shape()[1] != weight.shape()[2] || input.ndim() < 2 ||
      input.shape()[input.ndim() - 2] != weight.shape()[0] ||
      input.shape().back() != weight.shape()[1])
    throw DimensionError("emm: input " + shape_str(input.shape()) + " does not match weight " +
                         shape_str(weight.shape()) + " (expected (..., Cb, Cd) and (Cb, Cd, Cd))");
  const std::size_t cb = weight.shape()[0], cd = weight.shape()[1], c = cb * cd;
  const std::size_t rows = c == 0 ? 0 : input.numel() / c;
  using Map = Eigen::Map<const RowMatrix<T>>;
  using MutMap = Eigen::Map<RowMatrix<T>>;
  std::vector<T> out(input.numel());
  {
    Map in(input.data().data(), rows, c);
    MutMap y(out.data(), rows, c);
    for (std::size_t b = 0; b < cb; ++b) {
      Map w(weight.data().data() + b * cd * cd, cd, cd);
      y.middleCols(b * cd, cd).noalias() = in.middleCols(b * cd, cd) * w;
    }
  }
  return make_output(input.shape(), std::move(out), should_record({&input, &weight}),
                     [input, weight, rows, cb, cd, c](const std::vector<T>& g) {
                       auto* gi = grad_sink(input);
                       auto* gw = grad_sink(weight);
                       Map gy(g.data(), rows, c);
                       Map in(input.data().data(), rows, c);
                       for (std::size_t b = 0; b < cb; ++b) {
                         Map w(weight.data().data() + b * cd * cd, cd, cd);
                         if (gi) {
                           MutMap gin(gi->data(), rows, c);
                           gin.middleCols(b * cd, cd).noalias() += gy.middleCols(b * cd, cd) * w.transpose();
                         }
                         if (gw) {
                           MutMap gwb(gw->data() + b * cd * cd, cd, cd);
                           gwb.noalias() += in.middleCols(b * cd, cd).transpose() * gy.middleCols(b * cd, cd);
                         }
                       }
                     });
}

template <typename T>
ComplexTensor<T> complex_gate_layer(const ComplexTensor<T>& h, const ComplexTensor<T>& weight,
                                    const ComplexTensor<T>& bias, GateActivation activation) {
  if (h.re.shape() != h.im.shape() || weight.re.shape() != weight.im.shape() ||
      bias.re.shape() != bias.im.shape())
    throw DimensionError("complex_gate_layer: real and imaginary parts differ in shape");
  if (weight.re.ndim() != 3 ||
      bias.re.shape() != Shape{weight.re.shape()[0], weight.re.shape()[1]})
    throw DimensionError("complex_gate_layer: bias " + shape_str(bias.re.shape()) +
                         " does not match weight " + shape_str(weight.re.shape()));
  Tensor<T> re = add(sub(emm(h.re, weight.re), emm(h.im, weight.im)), bias.re);
  Tensor<T> im = add(add(emm(h.re, weight.im), emm(h.im, weight.re)), bias.im);
  if (activation == GateActivation::relu) {
    re = relu(re);
    im = relu(im);
  }
  return {re, im};
}

template <typename T>
Tensor<T> soft_shrink(const Tensor<T>& x, double lambda) {
  if (!(lambda >= 0.0)) throw ParameterError("soft_shrink: lambda must be non-negative");
  const T lam = static_cast<T>(lambda);
  std::vector<T> out(x.numel());
  auto xv = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = shrink(xv[i], lam);
  return make_output(x.shape(), std::move(out), should_record({&x}),
                     [x, lam](const std::vector<T>& g) {
                       auto* gx = grad_sink(x);
                       if (!gx) return;
                       auto xv = x.data();
                       for (std::size_t i = 0; i < g.size(); ++i)
                         if (xv[i] > lam || xv[i] < -lam) (*gx)[i] += g[i];
                     });
}

template <typename T>
ComplexTensor<T> soft_shrink(const ComplexTensor<T>& x, double lambda) {
  return {soft_shrink(x.re, lambda), soft_shrink(x.im, lambda)};
}

std::size_t einfft_mixed_dim(std::size_t channels, FftAxis axis) {
  return axis == FftAxis::sequence ? channels : channels / 2 + 1;
}

template <typename T>
EinFftParams<T> EinFftParams<T>::init(std::size_t channels, const EinFftConfig& config, Rng& rng) {
  const std::size_t mixed = einfft_mixed_dim(channels, config.fft_axis);
  if (config.num_blocks == 0 || mixed % config.num_blocks != 0)
    throw ConfigError("", "einfft: mixed dimension " + std::to_string(mixed) +
                              " is not divisible by num_blocks " +
                              std::to_string(config.num_blocks));
  EinFftParams p;
  p.num_blocks = config.num_blocks;
  p.block_dim = mixed / config.num_blocks;
  p.sparsity_threshold = config.sparsity_threshold;
  p.fft_axis = config.fft_axis;
  const Shape wshape{p.num_blocks, p.block_dim, p.block_dim};
  const Shape bshape{p.num_blocks, p.block_dim};
  p.w1 = {Tensor<T>::randn(wshape, rng, config.init_scale), Tensor<T>::randn(wshape, rng, config.init_scale)};
  p.w2 = {Tensor<T>::randn(wshape, rng, config.init_scale), Tensor<T>::randn(wshape, rng, config.init_scale)};
  p.b1 = {Tensor<T>::zeros(bshape), Tensor<T>::zeros(bshape)};
  p.b2 = {Tensor<T>::zeros(bshape), Tensor<T>::zeros(bshape)};
  p.validate();
  return p;
}

template <typename T>
void EinFftParams<T>::validate() const {
  if (num_blocks == 0 || block_dim == 0) throw ConfigError("", "einfft: empty block structure");
  if (!(num_blocks < block_dim))
    throw ConfigError("", "einfft: num_blocks (" + std::to_string(num_blocks) +
                              ") must be smaller than block_dim (" + std::to_string(block_dim) + ")");
  if (!(sparsity_threshold >= 0.0))
    throw ConfigError("", "einfft: sparsity_threshold must be non-negative");
  const Shape wshape{num_blocks, block_dim, block_dim};
  const Shape bshape{num_blocks, block_dim};
  for (const auto* w : {&w1, &w2})
    if (w->re.shape() != wshape || w->im.shape() != wshape)
      throw ConfigError("", "einfft: weight shape " + shape_str(w->re.shape()) + ", expected " +
                                shape_str(wshape));
  for (const auto* b : {&b1, &b2})
    if (b->re.shape() != bshape || b->im.shape() != bshape)
      throw ConfigError("", "einfft: bias shape " + shape_str(b->re.shape()) + ", expected " +
                                shape_str(bshape));
}

template <typename T>
Tensor<T> einfft_forward(const Tensor<T>& x, const EinFftParams<T>& params) {
  if (x.ndim() != 3)
    throw DimensionError("einfft_forward: expected (B, N, C), got " + shape_str(x.shape()));
  params.validate();
  const std::size_t batch = x.shape()[0], tokens = x.shape()[1], channels = x.shape()[2];
  const bool along_sequence = params.fft_axis == FftAxis::sequence;
  const int axis = along_sequence ? 1 : 2;
  const std::size_t mixed = einfft_mixed_dim(channels, params.fft_axis);
  if (mixed % params.num_blocks != 0 || mixed != params.mixed_dim())
    throw ConfigError("", "einfft_forward: mixed dimension " + std::to_string(mixed) +
                              " does not match " + std::to_string(params.num_blocks) + " blocks of " +
                              std::to_string(params.block_dim));
  const std::size_t n = along_sequence ? tokens : channels;
  SpectrumHalf<T> spec = fft_real(x, axis);
  const Shape spec_shape = spec.re.shape();
  const Shape blocked{batch, spec_shape[1], params.num_blocks, params.block_dim};
  ComplexTensor<T> h{reshape(spec.re, blocked), reshape(spec.im, blocked)};
  h = complex_gate_layer(h, params.w1, params.b1, GateActivation::relu);
  h = complex_gate_layer(h, params.w2, params.b2, GateActivation::none);
  h = soft_shrink(h, params.sparsity_threshold);
  SpectrumHalf<T> out{reshape(h.re, spec_shape), reshape(h.im, spec_shape)};
  return ifft_real(out, n, axis);
}

#define SIMBA_INSTANTIATE_SPECTRAL(T)                                                        \
  template SpectrumHalf<T> fft_real(const Tensor<T>&, int);                                  \
  template Tensor<T> ifft_real(const SpectrumHalf<T>&, std::size_t, int);                    \
  template Tensor<T> emm(const Tensor<T>&, const Tensor<T>&);                                \
  template ComplexTensor<T> complex_gate_layer(const ComplexTensor<T>&, const ComplexTensor<T>&, \
                                               const ComplexTensor<T>&, GateActivation);     \
  template Tensor<T> soft_shrink(const Tensor<T>&, double);                                  \
  template ComplexTensor<T> soft_shrink(const ComplexTensor<T>&, double);                    \
  template struct EinFftParams<T>;                                                           \
  template Tensor<T> einfft_forward(const Tensor<T>&, const EinFftParams<T>&);

SIMBA_INSTANTIATE_SPECTRAL(float)
SIMBA_INSTANTIATE_SPECTRAL(double)

}  // namespace simba
