#include <cmath>
#include <functional>
#include <memory>

#include "doctest.h"
#include "simba/error.hpp"
#include "support.hpp"

using namespace simba;
using simba::testing::rand_tensor;
using simba::testing::weighted_sum;

TEST_CASE("elementwise and matmul basics") {
  Tensor64 m({2, 2}, {1, 2, 3, 4});
  Tensor64 eye({2, 2}, {1, 0, 0, 1});
  Tensor64 p = matmul(m, eye);
  CHECK(std::vector<double>(p.data().begin(), p.data().end()) == std::vector<double>{1, 2, 3, 4});

  Tensor64 s = add(Tensor64({3}, {1, 2, 3}), Tensor64({3}, {1, 1, 1}));
  CHECK(std::vector<double>(s.data().begin(), s.data().end()) == std::vector<double>{2, 3, 4});
}

TEST_CASE("matmul shape mismatch names both shapes") {
  Tensor64 a({3, 4}), b({5, 2});
  try {
    matmul(a, b);
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[3, 4]") != std::string::npos);
    CHECK(msg.find("[5, 2]") != std::string::npos);
  }
}

TEST_CASE("broadcast on leading axes only") {
  Tensor64 x({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor64 row({3}, {10, 20, 30});
  Tensor64 y = add(x, row);
  CHECK(y[0] == 11);
  CHECK(y[5] == 36);
  CHECK_THROWS_AS(add(x, Tensor64({2}, {1, 2})), DimensionError);
}

TEST_CASE("activations at known points") {
  auto at = [](Tensor64 (*fn)(const Tensor64&), double v) {
    return fn(Tensor64({1}, {v}))[0];
  };
  CHECK(at(silu<double>, 0.0) == 0.0);
  CHECK(at(silu<double>, 1.0) == doctest::Approx(1.0 / (1.0 + std::exp(-1.0))).epsilon(1e-12));
  CHECK(at(silu<double>, 1.0) == doctest::Approx(0.73106).epsilon(1e-5));
  CHECK(at(silu<double>, 40.0) == doctest::Approx(40.0).epsilon(1e-12));
  CHECK(at(softplus<double>, 0.0) == doctest::Approx(0.693147).epsilon(1e-6));
  CHECK(at(softplus<double>, -800.0) > 0.0);
  CHECK(at(softplus<double>, 800.0) == doctest::Approx(800.0));
  CHECK(at(relu<double>, -2.0) == 0.0);
  CHECK(at(sigmoid<double>, 0.0) == 0.5);
  CHECK(softplus(Tensor32({1}, {-200.0f}))[0] > 0.0f);
}

TEST_CASE("layer_norm of a constant vector is zero") {
  Tensor64 x = Tensor64::full({2, 5}, 3.25);
  Tensor64 y = layer_norm(x, Tensor64(), Tensor64(), 1e-5);
  for (double v : y.data()) CHECK(v == 0.0);
}

TEST_CASE("dropout") {
  Rng rng(3);
  Tensor64 x = rand_tensor({1000}, rng);
  SUBCASE("eval mode is the identity bit for bit") {
    Tensor64 y = dropout(x, 0.5, false, &rng);
    CHECK(y.node() == x.node());
  }
  SUBCASE("p = 0 in train mode") {
    Tensor64 y = dropout(x, 0.0, true, &rng);
    CHECK(y.node() == x.node());
  }
  SUBCASE("train mode zeroes and rescales") {
    Tensor64 y = dropout(x, 0.25, true, &rng);
    std::size_t zeros = 0;
    for (std::size_t i = 0; i < x.numel(); ++i) {
      if (y[i] == 0.0)
        ++zeros;
      else
        CHECK(y[i] == doctest::Approx(x[i] / 0.75).epsilon(1e-15));
    }
    CHECK(zeros > 200);
    CHECK(zeros < 300);
  }
  CHECK_THROWS_AS(dropout(x, 1.0, true, &rng), ParameterError);
  CHECK_THROWS_AS(dropout(x, -0.1, true, &rng), ParameterError);
}

TEST_CASE("reshape roundtrip is exact") {
  Rng rng(1);
  Tensor64 x = rand_tensor({2, 3, 4}, rng);
  Tensor64 y = reshape(reshape(x, {6, 4}), {2, 3, 4});
  CHECK(y.shape() == x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) CHECK(y[i] == x[i]);
}

TEST_CASE("backward") {
  SUBCASE("quadratic") {
    Tensor64 x({3}, {1, 2, 3}, true);
    Tape<double> tape;
    tape.backward(sum(mul(x, x)));
    auto g = x.grad();
    CHECK(g[0] == 2.0);
    CHECK(g[1] == 4.0);
    CHECK(g[2] == 6.0);
  }
  SUBCASE("unused leaf gets zero gradient") {
    Tensor64 x({2}, {1, 2}, true);
    Tensor64 unused({2}, {5, 6}, true);
    Tape<double> tape;
    tape.backward(sum(x));
    auto g = unused.grad();
    CHECK(g[0] == 0.0);
    CHECK(g[1] == 0.0);
  }
  SUBCASE("gradients accumulate across uses") {
    Tensor64 x({1}, {3}, true);
    Tape<double> tape;
    tape.backward(sum(add(mul(x, x), x)));
    CHECK(x.grad()[0] == 7.0);
  }
  SUBCASE("non-scalar loss is a contract error") {
    Tensor64 x({2}, {1, 2}, true);
    Tape<double> tape;
    Tensor64 y = scale(x, 2.0);
    CHECK_THROWS_AS(tape.backward(y), ContractError);
  }
  SUBCASE("graph without differentiable ops is a no-op") {
    Tensor64 x({2}, {1, 2});
    Tape<double> tape;
    CHECK_NOTHROW(tape.backward(sum(x)));
    CHECK(tape.size() == 0);
  }
}

TEST_CASE("tape replays in reverse execution order") {
  Tape<double> tape;
  std::vector<int> order;
  for (int i = 0; i < 4; ++i) {
    auto node = std::make_shared<detail::Node<double>>();
    node->shape = {1};
    node->data = {0.0};
    node->grad = {1.0};
    node->requires_grad = true;
    tape.record(node, [&order, i](detail::Node<double>&) { order.push_back(i); });
  }
  Tensor64 loss({1}, {0.0}, true);
  tape.backward(loss);
  CHECK(order == std::vector<int>{3, 2, 1, 0});
}

TEST_CASE("sum of matmul matches finite differences") {
  Rng rng(11);
  Tensor64 a = rand_tensor({3, 4}, rng);
  Tensor64 b = rand_tensor({4, 2}, rng);
  auto r = check_gradients([&] { return sum(matmul(a, b)); }, {{"a", a}, {"b", b}});
  CHECK(r.passed);
  CHECK(r.max_rel_error < 1e-4);
}

namespace {

using Unary = std::function<Tensor64(const Tensor64&)>;

void check_unary(const char* name, const Unary& fn, double lo = -1.0, double hi = 1.0) {
  Rng rng(17);
  Tensor64 x = rand_tensor({3, 5}, rng, lo, hi);
  auto r = check_gradients([&] { return weighted_sum(fn(x)); }, {{"x", x}});
  INFO(name << " max rel error " << r.max_rel_error);
  CHECK(r.passed);
}

}  // namespace

TEST_CASE("per-op gradients") {
  Rng rng(5);
  Tensor64 a = rand_tensor({2, 3, 4}, rng);
  Tensor64 b = rand_tensor({2, 3, 4}, rng);
  Tensor64 row = rand_tensor({4}, rng);
  Tensor64 pos = rand_tensor({2, 3, 4}, rng, 0.5, 1.5);
  Tensor64 w = rand_tensor({4, 3}, rng);
  Tensor64 bias = rand_tensor({3}, rng);
  Tensor64 gamma = rand_tensor({4}, rng);
  Tensor64 beta = rand_tensor({4}, rng);

  auto check = [](const char* name, const std::function<Tensor64()>& fn,
                  const std::vector<NamedTensor>& inputs) {
    auto r = check_gradients(fn, inputs);
    INFO(name << " max rel error " << r.max_rel_error);
    CHECK(r.passed);
  };
  check("add", [&] { return weighted_sum(add(a, row)); }, {{"a", a}, {"row", row}});
  check("sub", [&] { return weighted_sum(sub(a, b)); }, {{"a", a}, {"b", b}});
  check("mul", [&] { return weighted_sum(mul(a, row)); }, {{"a", a}, {"row", row}});
  check("div", [&] { return weighted_sum(div(a, pos)); }, {{"a", a}, {"pos", pos}});
  check("matmul", [&] { return weighted_sum(matmul(a, w)); }, {{"a", a}, {"w", w}});
  check("batched matmul", [&] { return weighted_sum(matmul(a, transpose(b))); },
        {{"a", a}, {"b", b}});
  check("linear", [&] { return weighted_sum(linear(a, w, bias)); },
        {{"a", a}, {"w", w}, {"bias", bias}});
  check("layer_norm", [&] { return weighted_sum(layer_norm(a, gamma, beta, 1e-5)); },
        {{"a", a}, {"gamma", gamma}, {"beta", beta}});
  check("permute", [&] { return weighted_sum(permute(a, {2, 0, 1})); }, {{"a", a}});
  check("reshape", [&] { return weighted_sum(reshape(a, {6, 4})); }, {{"a", a}});
  check("concat", [&] { return weighted_sum(concat<double>({a, b}, 1)); }, {{"a", a}, {"b", b}});
  check("slice", [&] { return weighted_sum(slice(a, 2, 1, 3)); }, {{"a", a}});
  check("flip", [&] { return weighted_sum(flip(a, 1)); }, {{"a", a}});
  check("expand", [&] { return weighted_sum(expand(slice(a, 1, 2, 3), 1, 5)); }, {{"a", a}});
  check("mean_axis", [&] { return weighted_sum(mean_axis(a, 1)); }, {{"a", a}});
  check("mean", [&] { return mean(mul(a, b)); }, {{"a", a}, {"b", b}});
  check("mse", [&] { return mse_loss(a, b); }, {{"a", a}, {"b", b}});

  check_unary("exp", [](const Tensor64& x) { return exp(x); });
  check_unary("log", [](const Tensor64& x) { return log(x); }, 0.5, 2.0);
  check_unary("square", [](const Tensor64& x) { return square(x); });
  check_unary("tanh", [](const Tensor64& x) { return tanh(x); });
  check_unary("sigmoid", [](const Tensor64& x) { return sigmoid(x); });
  check_unary("silu", [](const Tensor64& x) { return silu(x); });
  check_unary("softplus", [](const Tensor64& x) { return softplus(x); });
  check_unary("gelu", [](const Tensor64& x) { return gelu(x); });
  check_unary("relu", [](const Tensor64& x) { return relu(x); }, 0.1, 1.0);
  check_unary("scale", [](const Tensor64& x) { return scale(x, -1.5); });
}

TEST_CASE("cross entropy gradient") {
  Rng rng(8);
  Tensor64 logits = rand_tensor({4, 5}, rng, -2.0, 2.0);
  std::vector<std::int64_t> labels{0, 3, 4, 1};
  auto r = check_gradients([&] { return cross_entropy_smoothed(logits, labels, 0.1); },
                           {{"logits", logits}});
  CHECK(r.passed);
}

TEST_CASE("float tensors compute alongside double") {
  Rng rng(2);
  Tensor32 x = Tensor32::uniform({4, 4}, rng, -1.0, 1.0);
  x.set_requires_grad(true);
  Tape<float> tape;
  tape.backward(sum(silu(matmul(x, x))));
  CHECK(x.has_grad());
  Tensor64 xd = x.cast<double>();
  CHECK(xd[3] == doctest::Approx(double(x[3])));
}
