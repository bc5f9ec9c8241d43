#pragma once

// Fourier transforms, block-diagonal Einstein matrix multiplication (EMM) and
// the EinFFT frequency-domain channel mixer.

#include <complex>
#include <cstddef>
#include <span>
#include <vector>

#include "simba/tensor.hpp"

namespace simba {

class Rng;

using cdouble = std::complex<double>;

// Unnormalized in-place DFT of any length (mixed radix, Bluestein for large
// prime factors). Forward uses exp(-2 pi i k n / N); inverse uses the
// conjugate kernel without the 1/N factor.
void fft_inplace(std::span<cdouble> data, bool inverse = false);

enum class FftNorm { none, ortho };

// Full-spectrum complex transform, out of place.
std::vector<cdouble> fft_full(std::span<const cdouble> input, bool inverse,
                              FftNorm norm = FftNorm::ortho);

// ⌊N/2⌋ + 1 bins of an orthonormally scaled real-input transform.
template <typename T>
using SpectrumHalf = ComplexTensor<T>;

template <typename T>
SpectrumHalf<T> fft_real(const Tensor<T>& x, int axis);

// Inverse of fft_real; n is the original extent along axis. The imaginary
// parts of the DC bin (and of the Nyquist bin for even n) are ignored.
template <typename T>
Tensor<T> ifft_real(const SpectrumHalf<T>& spectrum, std::size_t n, int axis);

// Y[..., b, :] = I[..., b, :] W[b] for input (..., Cb, Cd), weight (Cb, Cd, Cd).
// Equivalent to multiplying the flattened channels by one block-diagonal
// (Cb*Cd) x (Cb*Cd) matrix.
template <typename T>
Tensor<T> emm(const Tensor<T>& input, const Tensor<T>& weight);

enum class GateActivation { none, relu };

// One complex spectral gating layer, lowered to real EMMs:
//   Re = act(EMM(Re h, Wr) - EMM(Im h, Wi) + Br)
//   Im = act(EMM(Re h, Wi) + EMM(Im h, Wr) + Bi)
template <typename T>
ComplexTensor<T> complex_gate_layer(const ComplexTensor<T>& h, const ComplexTensor<T>& weight,
                                    const ComplexTensor<T>& bias, GateActivation activation);

// sign(x) * max(|x| - lambda, 0), elementwise.
template <typename T>
Tensor<T> soft_shrink(const Tensor<T>& x, double lambda);
template <typename T>
ComplexTensor<T> soft_shrink(const ComplexTensor<T>& x, double lambda);

enum class FftAxis { sequence, channel };

struct EinFftConfig {
  std::size_t num_blocks = 4;
  double sparsity_threshold = 0.01;
  FftAxis fft_axis = FftAxis::sequence;
  double init_scale = 0.02;
};

template <typename T>
struct EinFftParams {
  std::size_t num_blocks = 0;
  std::size_t block_dim = 0;
  ComplexTensor<T> w1, w2;  // (Cb, Cd, Cd)
  ComplexTensor<T> b1, b2;  // (Cb, Cd)
  double sparsity_threshold = 0.01;
  FftAxis fft_axis = FftAxis::sequence;

  // channels is C of the (B, N, C) input. The mixed dimension is C for the
  // sequence axis and ⌊C/2⌋ + 1 frequency bins for the channel axis.
  static EinFftParams init(std::size_t channels, const EinFftConfig& config, Rng& rng);

  std::size_t mixed_dim() const { return num_blocks * block_dim; }
  // Throws ConfigError unless Cb < Cd, lambda >= 0 and all shapes agree.
  void validate() const;
};

std::size_t einfft_mixed_dim(std::size_t channels, FftAxis axis);

// x (B, N, C) -> (B, N, C): FFT along the configured axis, two gating layers
// (ReLU, then none), soft-shrink, inverse FFT.
template <typename T>
Tensor<T> einfft_forward(const Tensor<T>& x, const EinFftParams<T>& params);

}  // namespace simba
