#include <cmath>

#include "doctest.h"
#include "simba/error.hpp"
#include "simba/ssm.hpp"
#include "support.hpp"

using namespace simba;
using simba::testing::max_abs_diff;
using simba::testing::max_rel_diff;
using simba::testing::rand_tensor;
using simba::testing::weighted_sum;

namespace {

LtiSsm scalar_system() {
  return LtiSsm::diagonal(Eigen::VectorXd::Constant(1, -1.0), Eigen::VectorXd::Constant(1, 1.0),
                          Eigen::RowVectorXd::Constant(1, 1.0), 0.0, 1.0);
}

LtiSsm random_stable(Rng& rng, std::size_t k) {
  Eigen::VectorXd a(k), b(k);
  Eigen::RowVectorXd c(k);
  for (std::size_t i = 0; i < k; ++i) {
    a(i) = -rng.uniform(0.05, 3.0);
    b(i) = rng.uniform(-1, 1);
    c(i) = rng.uniform(-1, 1);
  }
  return LtiSsm::diagonal(a, b, c, rng.uniform(-1, 1), rng.uniform(0.01, 0.5));
}

std::vector<double> random_signal(Rng& rng, std::size_t n) {
  std::vector<double> u(n);
  for (auto& v : u) v = rng.uniform(-1, 1);
  return u;
}

}  // namespace

TEST_CASE("bilinear discretization") {
  SUBCASE("scalar system") {
    auto d = discretize_bilinear(scalar_system());
    CHECK(d.a(0, 0) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
    CHECK(d.b(0) == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
    CHECK(d.c(0) == 1.0);
  }
  SUBCASE("zero-step limit") {
    Rng rng(1);
    LtiSsm s = random_stable(rng, 6);
    s.step = 1e-8;
    auto d = discretize_bilinear(s);
    CHECK((d.a - Eigen::MatrixXd::Identity(6, 6)).norm() < 1e-6);
  }
  SUBCASE("stable A maps inside the unit circle") {
    Rng rng(2);
    for (int trial = 0; trial < 20; ++trial) {
      LtiSsm s = random_stable(rng, 8);
      s.step = rng.uniform(0.01, 10.0);
      CHECK(spectral_radius(discretize_bilinear(s).a) < 1.0);
    }
  }
  SUBCASE("singular resolvent") {
    // I - 1/2 * 2 = 0
    LtiSsm s = LtiSsm::diagonal(Eigen::VectorXd::Constant(1, 2.0), Eigen::VectorXd::Ones(1),
                                Eigen::RowVectorXd::Ones(1), 0.0, 1.0);
    try {
      discretize_bilinear(s);
      FAIL("expected NumericError");
    } catch (const NumericError& e) {
      CHECK(std::string(e.what()).find("condition number") != std::string::npos);
    }
  }
  SUBCASE("non-positive step") {
    LtiSsm s = scalar_system();
    s.step = 0.0;
    CHECK_THROWS_AS(discretize_bilinear(s), InvariantError);
  }
}

TEST_CASE("zoh diagonal discretization") {
  Tensor64 a({1, 1}, {-1.0});
  Tensor64 b({1}, {1.0});
  auto z = discretize_zoh_diag(a, b, Tensor64({1}, {std::log(2.0)}));
  CHECK(z.a_bar[0] == doctest::Approx(0.5).epsilon(1e-15));
  auto frozen = discretize_zoh_diag(a, b, Tensor64({1}, {0.0}));
  CHECK(frozen.a_bar[0] == 1.0);
  CHECK(frozen.b_bar[0] == 0.0);

  Rng rng(3);
  Tensor64 ar = rand_tensor({4, 6}, rng, -5.0, -0.01);
  Tensor64 br = rand_tensor({4, 6}, rng);
  Tensor64 dt = rand_tensor({4}, rng, 0.001, 2.0);
  auto r = discretize_zoh_diag(ar, br, dt);
  for (double v : r.a_bar.data()) {
    CHECK(v > 0.0);
    CHECK(v < 1.0);
  }
  CHECK_THROWS_AS(discretize_zoh_diag(Tensor64({1, 1}, {0.0}), b, Tensor64({1}, {1.0})),
                  InvariantError);
}

TEST_CASE("lti scan and kernel") {
  auto d = discretize_bilinear(scalar_system());
  SUBCASE("zero input") {
    auto y = lti_scan(d, std::vector<double>(5, 0.0));
    for (double v : y) CHECK(v == 0.0);
  }
  SUBCASE("three-step unroll") {
    auto y = lti_scan(d, std::vector<double>{1, 0, 0});
    CHECK(y[0] == doctest::Approx(2.0 / 3).epsilon(1e-15));
    CHECK(y[1] == doctest::Approx(2.0 / 9).epsilon(1e-15));
    CHECK(y[2] == doctest::Approx(2.0 / 27).epsilon(1e-15));
    auto k = lti_kernel(d, 3);
    CHECK(k[0] == doctest::Approx(2.0 / 3).epsilon(1e-15));
    CHECK(k[1] == doctest::Approx(2.0 / 9).epsilon(1e-15));
    CHECK(k[2] == doctest::Approx(2.0 / 27).epsilon(1e-15));
  }
  SUBCASE("single step") {
    DiscreteLti dd = d;
    dd.d = 0.5;
    auto y = lti_scan(dd, std::vector<double>{3.0});
    CHECK(y[0] == doctest::Approx(2.0 / 3 * 3.0 + 1.5));
    CHECK(lti_kernel(d, 1).size() == 1);
  }
  SUBCASE("kernel decays at the spectral radius") {
    Rng rng(4);
    for (int trial = 0; trial < 10; ++trial) {
      auto sys = discretize_bilinear(random_stable(rng, 5));
      const double rho = spectral_radius(sys.a);
      auto k = lti_kernel(sys, 400);
      // |K_i| <= |C| |B| rho^i for a diagonal (normal) Ā
      const double bound = sys.c.norm() * sys.b.norm();
      for (std::size_t i = 0; i < k.size(); ++i)
        CHECK(std::abs(k[i]) <= bound * std::pow(rho, double(i)) * (1 + 1e-9) + 1e-300);
    }
  }
}

TEST_CASE("convolution view equals the recurrence") {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t k = 1 + rng.below(16), len = 1 + rng.below(256);
    auto sys = discretize_bilinear(random_stable(rng, k));
    auto u = random_signal(rng, len);
    auto ref = lti_scan(sys, u);
    auto y = lti_conv_apply(lti_kernel(sys, len), u, sys.d);
    CHECK(max_rel_diff(y, ref) < 1e-8);
  }
  Rng r2(6);
  auto u = random_signal(r2, 20);
  std::vector<double> delta(20, 0.0);
  delta[0] = 1.0;
  CHECK(max_abs_diff(lti_conv_apply(delta, u, 0.0), u) < 1e-14);
  auto kern = random_signal(r2, 20);
  CHECK(max_abs_diff(lti_conv_apply(kern, delta, 0.0), kern) < 1e-14);
  CHECK_THROWS_AS(lti_conv_apply(kern, std::vector<double>(3), 0.0), DimensionError);
}

TEST_CASE("selective scan") {
  Rng rng(7);
  const std::size_t nb = 2, len = 9, p = 3, k = 4;
  Tensor64 a = rand_tensor({p, k}, rng, -2.0, -0.1);
  Tensor64 d_skip = rand_tensor({p}, rng);
  SUBCASE("zero input") {
    Tensor64 y = selective_scan(Tensor64({nb, len, p}), rand_tensor({nb, len, p}, rng, 0.1, 1.0), a,
                                rand_tensor({nb, len, k}, rng), rand_tensor({nb, len, k}, rng),
                                d_skip);
    for (double v : y.data()) CHECK(v == 0.0);
  }
  SUBCASE("single step closed form") {
    Tensor64 x = rand_tensor({1, 1, p}, rng);
    Tensor64 dt = rand_tensor({1, 1, p}, rng, 0.1, 1.0);
    Tensor64 bt = rand_tensor({1, 1, k}, rng), ct = rand_tensor({1, 1, k}, rng);
    Tensor64 y = selective_scan(x, dt, a, bt, ct, d_skip);
    for (std::size_t c = 0; c < p; ++c) {
      double ref = d_skip[c] * x[c];
      for (std::size_t j = 0; j < k; ++j) ref += ct[j] * dt[c] * bt[j] * x[c];
      CHECK(y[c] == doctest::Approx(ref).epsilon(1e-14));
    }
  }
  SUBCASE("time-constant parameters reduce to an LTI scan") {
    for (int trial = 0; trial < 10; ++trial) {
      const std::size_t n = 1 + rng.below(64);
      Tensor64 x = rand_tensor({1, n, p}, rng);
      Tensor64 dstep = rand_tensor({p}, rng, 0.01, 1.0);
      Tensor64 b1 = rand_tensor({k}, rng), c1 = rand_tensor({k}, rng);
      Tensor64 dt({1, n, p}), bt({1, n, k}), ct({1, n, k});
      for (std::size_t t = 0; t < n; ++t) {
        for (std::size_t c = 0; c < p; ++c) dt.mutable_data()[t * p + c] = dstep[c];
        for (std::size_t j = 0; j < k; ++j) {
          bt.mutable_data()[t * k + j] = b1[j];
          ct.mutable_data()[t * k + j] = c1[j];
        }
      }
      Tensor64 y = selective_scan(x, dt, a, bt, ct, d_skip);
      auto z = discretize_zoh_diag(a, b1, dstep);
      for (std::size_t c = 0; c < p; ++c) {
        DiscreteLti sys;
        sys.a = Eigen::MatrixXd::Zero(k, k);
        sys.b.resize(k);
        sys.c.resize(k);
        for (std::size_t j = 0; j < k; ++j) {
          sys.a(j, j) = z.a_bar[c * k + j];
          sys.b(j) = z.b_bar[c * k + j];
          sys.c(j) = c1[j];
        }
        sys.d = d_skip[c];
        std::vector<double> u(n), got(n);
        for (std::size_t t = 0; t < n; ++t) {
          u[t] = x[t * p + c];
          got[t] = y[t * p + c];
        }
        CHECK(max_rel_diff(got, lti_scan(sys, u)) < 1e-8);
      }
    }
  }
  SUBCASE("state norm does not grow without input") {
    // Impulse at t = 0 then zeros: with C = e_j, y_t reads state j directly.
    const std::size_t n = 40;
    Tensor64 x({1, n, 1});
    x.mutable_data()[0] = 1.0;
    Tensor64 a1 = rand_tensor({1, k}, rng, -1.0, -0.05);
    Tensor64 dt = rand_tensor({1, n, 1}, rng, 0.05, 1.0);
    Tensor64 bt = rand_tensor({1, n, k}, rng);
    double prev = INFINITY;
    for (std::size_t t = 0; t < n; ++t) {
      double norm2 = 0;
      for (std::size_t j = 0; j < k; ++j) {
        Tensor64 ct({1, n, k});
        for (std::size_t s = 0; s < n; ++s) ct.mutable_data()[s * k + j] = 1.0;
        const double h = selective_scan(x, dt, a1, bt, ct, Tensor64({1}))[t];
        norm2 += h * h;
      }
      CHECK(norm2 <= prev);
      prev = norm2;
    }
  }
  SUBCASE("invariant violations") {
    Tensor64 x = rand_tensor({1, 2, p}, rng);
    Tensor64 bt = rand_tensor({1, 2, k}, rng), ct = rand_tensor({1, 2, k}, rng);
    Tensor64 good_dt = rand_tensor({1, 2, p}, rng, 0.1, 1.0);
    Tensor64 bad_dt = good_dt.detach();
    bad_dt.mutable_data()[1] = 0.0;
    CHECK_THROWS_AS(selective_scan(x, bad_dt, a, bt, ct, d_skip), InvariantError);
    Tensor64 bad_a = a.detach();
    bad_a.mutable_data()[0] = 0.0;
    CHECK_THROWS_AS(selective_scan(x, good_dt, bad_a, bt, ct, d_skip), InvariantError);
  }
}

TEST_CASE("causal conv1d") {
  Rng rng(8);
  Tensor64 x = rand_tensor({2, 6, 3}, rng);
  Tensor64 w = rand_tensor({3, 4}, rng);
  Tensor64 bias = rand_tensor({3}, rng);
  Tensor64 y = causal_conv1d(x, w, bias);
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t t = 0; t < 6; ++t)
      for (std::size_t c = 0; c < 3; ++c) {
        double ref = bias[c];
        for (std::size_t j = 0; j < 4; ++j) {
          const long src = long(t) - 3 + long(j);
          if (src >= 0) ref += w[c * 4 + j] * x[(b * 6 + std::size_t(src)) * 3 + c];
        }
        CHECK(y[(b * 6 + t) * 3 + c] == doctest::Approx(ref).epsilon(1e-14));
      }
}

TEST_CASE("mamba block") {
  Rng rng(9);
  SsmConfig cfg;
  cfg.state = 4;
  SUBCASE("shape contract") {
    auto p = SsmParams<double>::init(64, cfg, rng);
    CHECK(p.inner() == 128);
    Tensor64 x = rand_tensor({2, 96, 64}, rng);
    CHECK(mamba_block(x, p).shape() == x.shape());
  }
  SUBCASE("zero out-projection gives zero output") {
    auto p = SsmParams<double>::init(8, cfg, rng);
    for (auto& v : p.proj_out.mutable_data()) v = 0.0;
    Tensor64 y = mamba_block(rand_tensor({2, 5, 8}, rng), p);
    for (double v : y.data()) CHECK(v == 0.0);
  }
  SUBCASE("causality") {
    for (bool reverse : {false, true}) {
      SsmConfig c2 = cfg;
      c2.reverse = reverse;
      auto p = SsmParams<double>::init(8, c2, rng);
      for (int trial = 0; trial < 5; ++trial) {
        const std::size_t n = 12;
        Tensor64 x = rand_tensor({1, n, 8}, rng);
        const std::size_t t0 = 1 + rng.below(n - 2);
        Tensor64 x2 = x.detach();
        for (std::size_t c = 0; c < 8; ++c) x2.mutable_data()[t0 * 8 + c] += 0.7;
        Tensor64 y = mamba_block(x, p), y2 = mamba_block(x2, p);
        for (std::size_t t = 0; t < n; ++t) {
          double diff = 0;
          for (std::size_t c = 0; c < 8; ++c)
            diff = std::max(diff, std::abs(y[t * 8 + c] - y2[t * 8 + c]));
          // forward scans cannot see the future; reverse scans cannot see the past
          const bool unaffected = reverse ? t > t0 : t < t0;
          if (unaffected) CHECK(diff == 0.0);
          if (t == t0) CHECK(diff > 0.0);
        }
      }
    }
  }
  SUBCASE("probe sees positive steps and negative A") {
    auto p = SsmParams<double>::init(8, cfg, rng);
    SsmProbe probe;
    mamba_block(rand_tensor({2, 7, 8}, rng, -10, 10), p, &probe);
    CHECK(probe.calls == 1);
    CHECK(probe.min_delta > 0.0);
    CHECK(probe.max_a < 0.0);
  }
}

TEST_CASE("ssm gradients") {
  Rng rng(10);
  auto check = [](const char* name, const std::function<Tensor64()>& fn,
                  const std::vector<NamedTensor>& inputs) {
    auto r = check_gradients(fn, inputs);
    INFO(name << " max rel error " << r.max_rel_error);
    CHECK(r.passed);
  };
  const std::size_t nb = 2, len = 5, p = 3, k = 4;
  Tensor64 x = rand_tensor({nb, len, p}, rng);
  Tensor64 dt = rand_tensor({nb, len, p}, rng, 0.1, 1.0);
  Tensor64 a = rand_tensor({p, k}, rng, -2.0, -0.2);
  Tensor64 bt = rand_tensor({nb, len, k}, rng), ct = rand_tensor({nb, len, k}, rng);
  Tensor64 d_skip = rand_tensor({p}, rng);
  check("selective_scan", [&] { return weighted_sum(selective_scan(x, dt, a, bt, ct, d_skip)); },
        {{"x", x}, {"delta", dt}, {"A", a}, {"B", bt}, {"C", ct}, {"D", d_skip}});

  Tensor64 w = rand_tensor({p, 4}, rng), bias = rand_tensor({p}, rng);
  check("causal_conv1d", [&] { return weighted_sum(causal_conv1d(x, w, bias)); },
        {{"x", x}, {"weight", w}, {"bias", bias}});

  SsmConfig cfg;
  cfg.state = 3;
  for (bool reverse : {false, true}) {
    cfg.reverse = reverse;
    auto sp = SsmParams<double>::init(4, cfg, rng);
    Tensor64 xin = rand_tensor({2, 6, 4}, rng);
    check("mamba_block", [&] { return weighted_sum(mamba_block(xin, sp)); },
          {{"x", xin}, {"in_x", sp.in_x}, {"in_z", sp.in_z}, {"conv_weight", sp.conv_weight},
           {"conv_bias", sp.conv_bias}, {"proj_b", sp.proj_b}, {"proj_c", sp.proj_c},
           {"proj_delta", sp.proj_delta}, {"delta_up", sp.delta_up},
           {"delta_bias", sp.delta_bias}, {"a_log", sp.a_log}, {"d_skip", sp.d_skip},
           {"proj_out", sp.proj_out}});
  }
}
