#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>

#include "internal.hpp"
#include "simba/container.hpp"
#include "simba/error.hpp"
#include "simba/ops.hpp"
#include "simba/rng.hpp"
#include "simba/spectral.hpp"
#include "simba/ssm.hpp"
#include "simba/train.hpp"

namespace simba {

namespace {

// Best per-call time over several batches, each long enough to swamp clock
// resolution.
template <typename F>
double time_call(F&& f) {
  using clock = std::chrono::steady_clock;
  std::size_t reps = 1;
  for (;;) {
    const auto t0 = clock::now();
    for (std::size_t i = 0; i < reps; ++i) f();
    const double s = std::chrono::duration<double>(clock::now() - t0).count();
    if (s >= 0.02 || reps >= (1u << 20)) break;
    reps *= 2;
  }
  double best = INFINITY;
  for (int trial = 0; trial < 5; ++trial) {
    const auto t0 = clock::now();
    for (std::size_t i = 0; i < reps; ++i) f();
    best = std::min(best, std::chrono::duration<double>(clock::now() - t0).count() / double(reps));
  }
  return best;
}

double least_squares_slope(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = double(x.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx += x[i], sy += y[i], sxx += x[i] * x[i], sxy += x[i] * y[i];
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

volatile double sink = 0.0;

struct Row {
  std::string path;
  std::size_t size, blocks;
  double seconds, flops;
};

std::vector<Row> bench_ssm(const std::vector<std::size_t>& sizes) {
  constexpr std::size_t k = 16;
  Rng rng(0);
  Eigen::VectorXd a(k), b(k);
  Eigen::RowVectorXd c(k);
  for (std::size_t i = 0; i < k; ++i) {
    a[Eigen::Index(i)] = -rng.uniform(0.1, 2.0);
    b[Eigen::Index(i)] = rng.uniform(-1, 1);
    c[Eigen::Index(i)] = rng.uniform(-1, 1);
  }
  const DiscreteLti sys = discretize_bilinear(LtiSsm::diagonal(a, b, c, 0.5, 0.1));
  std::vector<Row> rows;
  for (std::size_t l : sizes) {
    std::vector<double> u(l);
    for (auto& v : u) v = rng.uniform(-1, 1);
    const std::vector<double> kernel = lti_kernel(sys, l);
    std::size_t m = 1;
    while (m < 2 * l) m *= 2;
    const double kk = double(k);
    rows.push_back({"scan", l, 0, time_call([&] { sink = sink + lti_scan(sys, u).back(); }),
                    double(l) * (2 * kk * kk + 4 * kk + 2)});
    rows.push_back({"kernel", l, 0, time_call([&] { sink = sink + lti_kernel(sys, l).back(); }),
                    double(l) * (2 * kk * kk + 2 * kk)});
    rows.push_back({"fft_conv", l, 0,
                    time_call([&] { sink = sink + lti_conv_apply(kernel, u, sys.d).back(); }),
                    15.0 * double(m) * std::log2(double(m)) + 6.0 * double(m)});
  }
  return rows;
}

std::vector<Row> bench_einfft(const std::vector<std::size_t>& sizes) {
  constexpr std::size_t n = 4096, cb = 4;
  Rng rng(0);
  std::vector<Row> rows;
  for (std::size_t c : sizes) {
    if (c % cb != 0) throw ConfigError("--sizes", "channel count " + std::to_string(c) + " is not divisible by 4");
    const std::size_t cd = c / cb;
    const Tensor64 x = Tensor64::uniform({n, cb, cd}, rng, -1, 1);
    const Tensor64 w = Tensor64::uniform({cb, cd, cd}, rng, -1, 1);
    std::vector<double> dense(c * c, 0.0);
    for (std::size_t blk = 0; blk < cb; ++blk)
      for (std::size_t i = 0; i < cd; ++i)
        for (std::size_t j = 0; j < cd; ++j)
          dense[(blk * cd + i) * c + blk * cd + j] = w.data()[(blk * cd + i) * cd + j];
    const Tensor64 wd({c, c}, std::move(dense));
    const Tensor64 xf = reshape(x, {n, c});
    const double nn = double(n), cc = double(c), dd = double(cd);
    rows.push_back({"emm", c, cb, time_call([&] { sink = sink + emm(x, w).data()[0]; }),
                    nn * double(cb) * dd * dd});
    rows.push_back({"dense", c, cb, time_call([&] { sink = sink + matmul(xf, wd).data()[0]; }),
                    nn * cc * cc});
  }
  return rows;
}

}  // namespace

int cmd_bench(const std::string& suite, const std::vector<std::size_t>& sizes_in,
              const std::filesystem::path& csv_path, std::ostream& out) {
  std::vector<std::size_t> sizes = sizes_in;
  std::vector<Row> rows;
  if (suite == "ssm-kernel") {
    if (sizes.empty()) sizes = {256, 512, 1024, 2048, 4096, 8192, 16384};
    rows = bench_ssm(sizes);
  } else if (suite == "einfft") {
    if (sizes.empty()) sizes = {64, 128, 256, 512};
    rows = bench_einfft(sizes);
  } else {
    throw ConfigError("--suite", "unknown suite '" + suite + "' (ssm-kernel, einfft)");
  }
  for (auto s : sizes)
    if (s == 0) throw ConfigError("--sizes", "sizes must be positive");

  std::ostringstream csv;
  csv << "suite,path,size,blocks,seconds,flops\n";
  for (const auto& r : rows)
    csv << suite << ',' << r.path << ',' << r.size << ',' << r.blocks << ','
        << format_double(r.seconds) << ',' << format_double(r.flops) << '\n';
  if (csv_path.empty()) {
    out << csv.str();
    return 0;
  }
  write_file_atomic(csv_path, csv.str());
  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> fits;
  for (const auto& r : rows) {
    fits[r.path].first.push_back(std::log(double(r.size)));
    fits[r.path].second.push_back(std::log(r.seconds));
  }
  if (sizes.size() >= 2)
    for (const auto& [path, xy] : fits)
      out << path << " log-log slope " << format_double(least_squares_slope(xy.first, xy.second))
          << '\n';
  out << "wrote " << csv_path.string() << '\n';
  return 0;
}

}  // namespace simba
