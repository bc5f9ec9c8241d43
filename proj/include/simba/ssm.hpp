#pragma once

// State-space sequence mixing.
//
// The LTI half (LtiSsm, discretize_bilinear, lti_scan, lti_kernel,
// lti_conv_apply) is a double-precision reference used to check that the
// recurrent and convolutional views of one system agree. The selective half
// (selective_scan, mamba_block) is the differentiable production path.

#include <Eigen/Dense>
#include <cstddef>
#include <limits>
#include <span>
#include <vector>

#include "simba/tensor.hpp"

namespace simba {

class Rng;

// x'(t) = A x(t) + B u(t),  y(t) = C x(t) + D u(t), sampled with step Δ.
struct LtiSsm {
  Eigen::MatrixXd a;     // (K, K)
  Eigen::VectorXd b;     // (K)
  Eigen::RowVectorXd c;  // (K)
  double d = 0.0;
  double step = 1.0;

  static LtiSsm diagonal(const Eigen::VectorXd& a_diag, const Eigen::VectorXd& b,
                         const Eigen::RowVectorXd& c, double d, double step);
  std::size_t state_size() const { return static_cast<std::size_t>(b.size()); }
};

struct DiscreteLti {
  Eigen::MatrixXd a;
  Eigen::VectorXd b;
  Eigen::RowVectorXd c;
  double d = 0.0;
};

// Ā = (I - Δ/2 A)^-1 (I + Δ/2 A),  B̄ = (I - Δ/2 A)^-1 Δ B,  C̄ = C.
// Throws NumericError (with the condition number) when I - Δ/2 A is singular.
DiscreteLti discretize_bilinear(const LtiSsm& system);

template <typename T>
struct ZohDiagonal {
  Tensor<T> a_bar;  // (P, K)
  Tensor<T> b_bar;  // (P, K)
};

// Ā = exp(Δ A), B̄ = Δ B for diagonal A (P, K) < 0, B (K) or (P, K), Δ (P).
template <typename T>
ZohDiagonal<T> discretize_zoh_diag(const Tensor<T>& a_diag, const Tensor<T>& b,
                                   const Tensor<T>& step);

// x_k = Ā x_{k-1} + B̄ u_k, y_k = C̄ x_k + D u_k with x_{-1} = 0.
std::vector<double> lti_scan(const DiscreteLti& system, std::span<const double> u);
std::vector<double> lti_scan(const LtiSsm& system, std::span<const double> u);

// (C̄B̄, C̄ĀB̄, ..., C̄Ā^{L-1}B̄)
std::vector<double> lti_kernel(const DiscreteLti& system, std::size_t length);

// Causal convolution y = K̄ * u + D u through a zero-padded FFT.
std::vector<double> lti_conv_apply(std::span<const double> kernel, std::span<const double> u,
                                   double d);

double spectral_radius(const Eigen::MatrixXd& m);

// h_t = exp(Δ_t A) h_{t-1} + Δ_t B_t x_t,  y_t = <C_t, h_t> + D x_t per channel,
// sequential in time with h_{-1} = 0.
//   x, delta: (B, L, P); a: (P, K); b_t, c_t: (B, L, K); d_skip: (P)
template <typename T>
Tensor<T> selective_scan(const Tensor<T>& x, const Tensor<T>& delta, const Tensor<T>& a,
                         const Tensor<T>& b_t, const Tensor<T>& c_t, const Tensor<T>& d_skip);

// Depthwise causal convolution: x (B, L, P), weight (P, W), bias (P). Output
// position t sees inputs t-W+1 .. t (zero left padding).
template <typename T>
Tensor<T> causal_conv1d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias);

struct SsmConfig {
  std::size_t expand = 2;  // P = expand * D
  std::size_t state = 16;  // K
  std::size_t conv_width = 4;
  bool reverse = false;  // scan the time-reversed sequence
};

template <typename T>
struct SsmParams {
  Tensor<T> in_x, in_z;                // (D, P)
  Tensor<T> conv_weight;               // (P, W)
  Tensor<T> conv_bias;                 // (P)
  Tensor<T> proj_b, proj_c;            // (P, K)
  Tensor<T> proj_delta;                // (P, 1)
  Tensor<T> delta_up;                  // (1, P)
  Tensor<T> delta_bias;                // (P)
  Tensor<T> a_log;                     // (P, K); A = -exp(a_log)
  Tensor<T> d_skip;                    // (P)
  Tensor<T> proj_out;                  // (P, D)
  bool reverse = false;

  static SsmParams init(std::size_t dim, const SsmConfig& config, Rng& rng);
  std::size_t dim() const { return in_x.shape()[0]; }
  std::size_t inner() const { return in_x.shape()[1]; }
  std::size_t state() const { return a_log.shape()[1]; }
};

// Observations collected during a forward pass.
struct SsmProbe {
  double min_delta = std::numeric_limits<double>::infinity();
  double max_a = -std::numeric_limits<double>::infinity();
  std::size_t calls = 0;
};

// X (B, N, D) -> (B, N, D): in-projections, causal conv + SiLU, input-dependent
// B, C, Δ = softplus(.), selective scan, SiLU(z) gating, out-projection.
// No normalization or residual; the caller owns both.
template <typename T>
Tensor<T> mamba_block(const Tensor<T>& x, const SsmParams<T>& params, SsmProbe* probe = nullptr);

}  // namespace simba
