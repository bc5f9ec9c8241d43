#include <Eigen/Eigenvalues>
#include <Eigen/SVD>
#include <cmath>
#include <sstream>

#include "simba/error.hpp"
#include "simba/ops.hpp"
#include "simba/spectral.hpp"
#include "simba/ssm.hpp"

namespace simba {

LtiSsm LtiSsm::diagonal(const Eigen::VectorXd& a_diag, const Eigen::VectorXd& b,
                        const Eigen::RowVectorXd& c, double d, double step) {
  LtiSsm s;
  s.a = a_diag.asDiagonal();
  s.b = b;
  s.c = c;
  s.d = d;
  s.step = step;
  return s;
}

DiscreteLti discretize_bilinear(const LtiSsm& system) {
  const auto k = system.a.rows();
  if (system.a.cols() != k || system.b.size() != k || system.c.size() != k)
    throw DimensionError("discretize_bilinear: A is " + std::to_string(system.a.rows()) + "x" +
                         std::to_string(system.a.cols()) + " but B has " +
                         std::to_string(system.b.size()) + " and C has " +
                         std::to_string(system.c.size()) + " entries");
  if (!(system.step > 0.0)) throw InvariantError("discretize_bilinear: step must be positive");
  const Eigen::MatrixXd id = Eigen::MatrixXd::Identity(k, k);
  const Eigen::MatrixXd resolvent = id - 0.5 * system.step * system.a;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(resolvent);
  const auto& sv = svd.singularValues();
  const double smax = sv(0), smin = sv(sv.size() - 1);
  if (!(smin > 1e-12 * smax)) {
    std::ostringstream os;
    os << "discretize_bilinear: I - step/2 * A is singular (condition number "
       << (smin > 0 ? smax / smin : INFINITY) << ")";
    throw NumericError(os.str());
  }
  Eigen::PartialPivLU<Eigen::MatrixXd> lu(resolvent);
  DiscreteLti out;
  out.a = lu.solve(id + 0.5 * system.step * system.a);
  out.b = lu.solve(system.step * system.b);
  out.c = system.c;
  out.d = system.d;
  return out;
}

std::vector<double> lti_scan(const DiscreteLti& system, std::span<const double> u) {
  std::vector<double> y(u.size());
  Eigen::VectorXd state = Eigen::VectorXd::Zero(system.b.size());
  for (std::size_t t = 0; t < u.size(); ++t) {
    state = system.a * state + system.b * u[t];
    y[t] = system.c.dot(state) + system.d * u[t];
  }
  return y;
}

std::vector<double> lti_scan(const LtiSsm& system, std::span<const double> u) {
  return lti_scan(discretize_bilinear(system), u);
}

std::vector<double> lti_kernel(const DiscreteLti& system, std::size_t length) {
  if (length == 0) throw ParameterError("lti_kernel: length must be positive");
  std::vector<double> kernel(length);
  Eigen::VectorXd v = system.b;
  for (std::size_t i = 0; i < length; ++i) {
    kernel[i] = system.c.dot(v);
    v = system.a * v;
  }
  return kernel;
}

std::vector<double> lti_conv_apply(std::span<const double> kernel, std::span<const double> u,
                                   double d) {
  if (kernel.size() != u.size())
    throw DimensionError("lti_conv_apply: kernel length " + std::to_string(kernel.size()) +
                         " differs from input length " + std::to_string(u.size()));
  const std::size_t len = u.size();
  if (len == 0) return {};
  std::size_t m = 1;
  while (m < 2 * len - 1) m <<= 1;
  std::vector<cdouble> fk(m), fu(m);
  for (std::size_t i = 0; i < len; ++i) {
    fk[i] = kernel[i];
    fu[i] = u[i];
  }
  fft_inplace(fk);
  fft_inplace(fu);
  for (std::size_t i = 0; i < m; ++i) fk[i] *= fu[i];
  fft_inplace(fk, true);
  std::vector<double> y(len);
  const double inv_m = 1.0 / static_cast<double>(m);
  for (std::size_t i = 0; i < len; ++i) y[i] = fk[i].real() * inv_m + d * u[i];
  return y;
}

double spectral_radius(const Eigen::MatrixXd& m) {
  Eigen::EigenSolver<Eigen::MatrixXd> solver(m, false);
  return solver.eigenvalues().cwiseAbs().maxCoeff();
}

template <typename T>
ZohDiagonal<T> discretize_zoh_diag(const Tensor<T>& a_diag, const Tensor<T>& b,
                                   const Tensor<T>& step) {
  if (a_diag.ndim() != 2)
    throw DimensionError("discretize_zoh_diag: A must be (P, K), got " + shape_str(a_diag.shape()));
  const std::size_t p = a_diag.shape()[0], k = a_diag.shape()[1];
  const bool shared_b = b.shape() == Shape{k};
  if (!shared_b && b.shape() != Shape{p, k})
    throw DimensionError("discretize_zoh_diag: B " + shape_str(b.shape()) + " does not match A " +
                         shape_str(a_diag.shape()));
  if (step.shape() != Shape{p})
    throw DimensionError("discretize_zoh_diag: step " + shape_str(step.shape()) +
                         " does not match A " + shape_str(a_diag.shape()));
  for (T v : a_diag.data())
    if (!(v < T(0))) throw InvariantError("discretize_zoh_diag: A entries must be negative");
  const Tensor<T> dt = expand(reshape(step, {p, 1}), 1, k);
  const Tensor<T> bk = shared_b ? expand(reshape(b, {1, k}), 0, p) : b;
  return {exp(mul(dt, a_diag)), mul(dt, bk)};
}

template ZohDiagonal<float> discretize_zoh_diag(const Tensor<float>&, const Tensor<float>&,
                                                const Tensor<float>&);
template ZohDiagonal<double> discretize_zoh_diag(const Tensor<double>&, const Tensor<double>&,
                                                 const Tensor<double>&);

}  // namespace simba
