#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>

#include "simba/spectral.hpp"

namespace simba {

namespace {

// Lengths whose largest prime factor exceeds this go through Bluestein.
constexpr std::size_t kMaxDirectRadix = 32;

class FftPlan {
 public:
  explicit FftPlan(std::size_t n);

  // Unnormalized forward transform in place.
  void forward(cdouble* data) const;

 private:
  void work(const cdouble* in, std::size_t in_stride, cdouble* out, std::size_t n,
            std::size_t fstride, std::size_t level) const;
  void bluestein(cdouble* data) const;

  std::size_t n_;
  std::vector<std::size_t> factors_;
  std::vector<cdouble> twiddles_;  // exp(-2 pi i k / n)

  const FftPlan* inner_ = nullptr;  // power-of-two plan of length m_
  std::size_t m_ = 0;
  std::vector<cdouble> chirp_;      // exp(-pi i k^2 / n)
  std::vector<cdouble> chirp_fft_;  // transform of the conjugate chirp filter
};

const FftPlan& plan_for(std::size_t n) {
  static std::mutex mutex;
  static std::map<std::size_t, std::unique_ptr<FftPlan>> cache;
  {
    std::lock_guard lock(mutex);
    auto it = cache.find(n);
    if (it != cache.end()) return *it->second;
  }
  // Built unlocked: a Bluestein plan requests its inner plan recursively.
  auto plan = std::make_unique<FftPlan>(n);
  std::lock_guard lock(mutex);
  auto [it, inserted] = cache.emplace(n, std::move(plan));
  return *it->second;
}

std::vector<std::size_t> factorize(std::size_t n) {
  std::vector<std::size_t> f;
  while (n % 4 == 0) {
    f.push_back(4);
    n /= 4;
  }
  for (std::size_t p = 2; p * p <= n; ++p)
    while (n % p == 0) {
      f.push_back(p);
      n /= p;
    }
  if (n > 1) f.push_back(n);
  return f;
}

FftPlan::FftPlan(std::size_t n) : n_(n) {
  twiddles_.resize(n);
  for (std::size_t k = 0; k < n; ++k) {
    const double angle = -2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n);
    twiddles_[k] = {std::cos(angle), std::sin(angle)};
  }
  if (n <= 1) return;
  factors_ = factorize(n);
  if (*std::max_element(factors_.begin(), factors_.end()) <= kMaxDirectRadix) return;

  factors_.clear();
  m_ = 1;
  while (m_ < 2 * n - 1) m_ <<= 1;
  inner_ = &plan_for(m_);
  chirp_.resize(n);
  for (std::size_t k = 0; k < n; ++k) {
    // k^2 mod 2n keeps the angle argument small
    const std::size_t k2 = (k * k) % (2 * n);
    const double angle = -std::numbers::pi * static_cast<double>(k2) / static_cast<double>(n);
    chirp_[k] = {std::cos(angle), std::sin(angle)};
  }
  chirp_fft_.assign(m_, cdouble{});
  chirp_fft_[0] = std::conj(chirp_[0]);
  for (std::size_t k = 1; k < n; ++k) chirp_fft_[k] = chirp_fft_[m_ - k] = std::conj(chirp_[k]);
  inner_->forward(chirp_fft_.data());
}

void FftPlan::forward(cdouble* data) const {
  if (n_ <= 1) return;
  if (inner_ != nullptr) {
    bluestein(data);
    return;
  }
  std::vector<cdouble> input(data, data + n_);
  work(input.data(), 1, data, n_, 1, 0);
}

// Decimation in time: out[r*m .. r*m+m) receives the sub-transform of the
// r-th decimated sequence, then butterflies of radix p combine them in place.
void FftPlan::work(const cdouble* in, std::size_t in_stride, cdouble* out, std::size_t n,
                   std::size_t fstride, std::size_t level) const {
  if (n == 1) {
    out[0] = in[0];
    return;
  }
  const std::size_t p = factors_[level];
  const std::size_t m = n / p;
  for (std::size_t r = 0; r < p; ++r)
    work(in + r * in_stride, in_stride * p, out + r * m, m, fstride * p, level + 1);

  if (p == 2) {
    for (std::size_t k = 0; k < m; ++k) {
      const cdouble t = out[m + k] * twiddles_[k * fstride];
      out[m + k] = out[k] - t;
      out[k] += t;
    }
    return;
  }
  const std::size_t root_step = n_ / p;  // twiddle index of exp(-2 pi i / p)
  std::vector<cdouble> t(p);
  for (std::size_t k = 0; k < m; ++k) {
    for (std::size_t r = 0; r < p; ++r) t[r] = out[r * m + k] * twiddles_[(r * k * fstride) % n_];
    for (std::size_t q = 0; q < p; ++q) {
      cdouble acc = t[0];
      for (std::size_t r = 1; r < p; ++r) acc += t[r] * twiddles_[((r * q) % p) * root_step];
      out[q * m + k] = acc;
    }
  }
}

void FftPlan::bluestein(cdouble* data) const {
  std::vector<cdouble> a(m_, cdouble{});
  for (std::size_t k = 0; k < n_; ++k) a[k] = data[k] * chirp_[k];
  inner_->forward(a.data());
  for (std::size_t k = 0; k < m_; ++k) a[k] *= chirp_fft_[k];
  // inverse via conjugation
  for (auto& v : a) v = std::conj(v);
  inner_->forward(a.data());
  const double inv_m = 1.0 / static_cast<double>(m_);
  for (std::size_t k = 0; k < n_; ++k) data[k] = std::conj(a[k]) * inv_m * chirp_[k];
}

}  // namespace

void fft_inplace(std::span<cdouble> data, bool inverse) {
  if (data.size() <= 1) return;
  const FftPlan& plan = plan_for(data.size());
  if (!inverse) {
    plan.forward(data.data());
    return;
  }
  for (auto& v : data) v = std::conj(v);
  plan.forward(data.data());
  for (auto& v : data) v = std::conj(v);
}

std::vector<cdouble> fft_full(std::span<const cdouble> input, bool inverse, FftNorm norm) {
  std::vector<cdouble> out(input.begin(), input.end());
  fft_inplace(out, inverse);
  if (norm == FftNorm::ortho && !out.empty()) {
    const double s = 1.0 / std::sqrt(static_cast<double>(out.size()));
    for (auto& v : out) v *= s;
  }
  return out;
}

}  // namespace simba
