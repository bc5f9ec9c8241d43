#include "simba/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "op_support.hpp"
#include "simba/error.hpp"
#include "simba/rng.hpp"

namespace simba {

using detail::grad_sink;
using detail::make_output;
using detail::normalize_axis;
using detail::should_record;

namespace {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using ConstMap = Eigen::Map<const RowMatrix<T>>;
template <typename T>
using MutMap = Eigen::Map<RowMatrix<T>>;

bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.begin(), small.end(), big.end() - static_cast<long>(small.size()));
}

Shape broadcast_shape(const char* op, const Shape& a, const Shape& b) {
  if (a == b) return a;
  if (is_suffix(b, a)) return a;
  if (is_suffix(a, b)) return b;
  throw DimensionError(std::string(op) + ": shapes " + shape_str(a) + " and " + shape_str(b) +
                       " are not broadcast-compatible (leading-axis broadcasting only)");
}

// out[i] = f(a[i % na], b[i % nb]); da/db give the partial derivatives.
template <typename T, typename F, typename Da, typename Db>
Tensor<T> binary(const char* op, const Tensor<T>& a, const Tensor<T>& b, F f, Da da, Db db) {
  Shape shape = broadcast_shape(op, a.shape(), b.shape());
  const std::size_t n = shape_numel(shape);
  const std::size_t na = a.numel(), nb = b.numel();
  std::vector<T> out(n);
  auto av = a.data();
  auto bv = b.data();
  if (na == n && nb == n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = f(av[i], bv[i]);
  } else {
    for (std::size_t i = 0; i < n; ++i) out[i] = f(av[i % na], bv[i % nb]);
  }
  const bool record = should_record({&a, &b});
  return make_output(std::move(shape), std::move(out), record,
                     [a, b, n, na, nb, da, db](const std::vector<T>& g) {
                       auto av = a.data();
                       auto bv = b.data();
                       if (auto* ga = grad_sink(a))
                         for (std::size_t i = 0; i < n; ++i)
                           (*ga)[i % na] += g[i] * da(av[i % na], bv[i % nb]);
                       if (auto* gb = grad_sink(b))
                         for (std::size_t i = 0; i < n; ++i)
                           (*gb)[i % nb] += g[i] * db(av[i % na], bv[i % nb]);
                     });
}

// y = f(x); df(x, y) is dy/dx.
template <typename T, typename F, typename Df>
Tensor<T> unary(const Tensor<T>& x, F f, Df df) {
  const std::size_t n = x.numel();
  std::vector<T> out(n);
  auto xv = x.data();
  for (std::size_t i = 0; i < n; ++i) out[i] = f(xv[i]);
  return make_output(x.shape(), std::move(out), should_record({&x}),
                     [x, df](const std::vector<T>& g, const std::vector<T>& y) {
                       auto* gx = grad_sink(x);
                       if (!gx) return;
                       auto xv = x.data();
                       for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i] * df(xv[i], y[i]);
                     });
}

template <typename T>
T stable_sigmoid(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

template <typename T>
T stable_softplus(T x) {
  T y = x > T(20) ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
  // exp underflows for very negative x; keep the result strictly positive.
  return std::max(y, std::numeric_limits<T>::min());
}

// Maps every output flat index to its source flat index.
std::vector<std::size_t> permutation_map(const Shape& in_shape, const std::vector<std::size_t>& order,
                                         Shape& out_shape) {
  const std::size_t rank = in_shape.size();
  std::vector<std::size_t> in_strides(rank, 1);
  for (std::size_t i = rank; i-- > 1;) in_strides[i - 1] = in_strides[i] * in_shape[i];
  out_shape.resize(rank);
  std::vector<std::size_t> strides(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    out_shape[i] = in_shape[order[i]];
    strides[i] = in_strides[order[i]];
  }
  const std::size_t n = shape_numel(in_shape);
  std::vector<std::size_t> map(n);
  std::vector<std::size_t> idx(rank, 0);
  std::size_t src = 0;
  for (std::size_t i = 0; i < n; ++i) {
    map[i] = src;
    for (std::size_t d = rank; d-- > 0;) {
      ++idx[d];
      src += strides[d];
      if (idx[d] < out_shape[d]) break;
      src -= strides[d] * out_shape[d];
      idx[d] = 0;
    }
  }
  return map;
}

struct AxisSplit {
  std::size_t outer = 1, extent = 1, inner = 1;
};

AxisSplit split_at(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

}  // namespace

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(
      "add", a, b, [](T x, T y) { return x + y; }, [](T, T) { return T(1); },
      [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(
      "sub", a, b, [](T x, T y) { return x - y; }, [](T, T) { return T(1); },
      [](T, T) { return T(-1); });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(
      "mul", a, b, [](T x, T y) { return x * y; }, [](T, T y) { return y; },
      [](T x, T) { return x; });
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(
      "div", a, b, [](T x, T y) { return x / y; }, [](T, T y) { return T(1) / y; },
      [](T x, T y) { return -x / (y * y); });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, T value) {
  return unary(
      x, [value](T v) { return v + value; }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
  return unary(
      x, [factor](T v) { return v * factor; }, [factor](T, T) { return factor; });
}

template <typename T>
Tensor<T> neg(const Tensor<T>& x) {
  return scale(x, T(-1));
}

template <typename T>
Tensor<T> exp(const Tensor<T>& x) {
  return unary(
      x, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <typename T>
Tensor<T> log(const Tensor<T>& x) {
  for (T v : x.data())
    if (!(v > T(0))) throw ParameterError("log: input must be positive");
  return unary(
      x, [](T v) { return std::log(v); }, [](T v, T) { return T(1) / v; });
}

template <typename T>
Tensor<T> square(const Tensor<T>& x) {
  return unary(
      x, [](T v) { return v * v; }, [](T v, T) { return T(2) * v; });
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& x) {
  return unary(
      x, [](T v) { return std::tanh(v); }, [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return unary(
      x, [](T v) { return stable_sigmoid(v); }, [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  return unary(
      x, [](T v) { return v > T(0) ? v : T(0); }, [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> silu(const Tensor<T>& x) {
  return unary(
      x, [](T v) { return v * stable_sigmoid(v); },
      [](T v, T) {
        const T s = stable_sigmoid(v);
        return s * (T(1) + v * (T(1) - s));
      });
}

template <typename T>
Tensor<T> softplus(const Tensor<T>& x) {
  return unary(
      x, [](T v) { return stable_softplus(v); }, [](T v, T) { return stable_sigmoid(v); });
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  constexpr T c = T(0.7978845608028654);  // sqrt(2 / pi)
  constexpr T k = T(0.044715);
  return unary(
      x,
      [](T v) { return T(0.5) * v * (T(1) + std::tanh(c * (v + k * v * v * v))); },
      [](T v, T) {
        const T t = std::tanh(c * (v + k * v * v * v));
        return T(0.5) * (T(1) + t) + T(0.5) * v * (T(1) - t * t) * c * (T(1) + T(3) * k * v * v);
      });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T total = T(0);
  for (T v : x.data()) total += v;
  return make_output(Shape{}, std::vector<T>{total}, should_record({&x}),
                     [x](const std::vector<T>& g) {
                       if (auto* gx = grad_sink(x))
                         for (T& v : *gx) v += g[0];
                     });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  if (x.numel() == 0) throw DimensionError("mean: empty tensor");
  return scale(sum(x), T(1) / static_cast<T>(x.numel()));
}

template <typename T>
Tensor<T> mean_axis(const Tensor<T>& x, int axis) {
  const std::size_t ax = normalize_axis(axis, x.ndim(), "mean_axis");
  const AxisSplit s = split_at(x.shape(), ax);
  if (s.extent == 0) throw DimensionError("mean_axis: empty axis");
  Shape shape = x.shape();
  shape.erase(shape.begin() + static_cast<long>(ax));
  std::vector<T> out(s.outer * s.inner, T(0));
  auto xv = x.data();
  const T w = T(1) / static_cast<T>(s.extent);
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t e = 0; e < s.extent; ++e)
      for (std::size_t i = 0; i < s.inner; ++i)
        out[o * s.inner + i] += w * xv[(o * s.extent + e) * s.inner + i];
  return make_output(std::move(shape), std::move(out), should_record({&x}),
                     [x, s, w](const std::vector<T>& g) {
                       auto* gx = grad_sink(x);
                       if (!gx) return;
                       for (std::size_t o = 0; o < s.outer; ++o)
                         for (std::size_t e = 0; e < s.extent; ++e)
                           for (std::size_t i = 0; i < s.inner; ++i)
                             (*gx)[(o * s.extent + e) * s.inner + i] += w * g[o * s.inner + i];
                     });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (shape_numel(shape) != x.numel())
    throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                         shape_str(shape));
  std::vector<T> data(x.data().begin(), x.data().end());
  return make_output(std::move(shape), std::move(data), should_record({&x}),
                     [x](const std::vector<T>& g) {
                       if (auto* gx = grad_sink(x))
                         for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i];
                     });
}

template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& order) {
  const std::size_t rank = x.ndim();
  std::vector<std::size_t> sorted = order;
  std::sort(sorted.begin(), sorted.end());
  std::vector<std::size_t> expect(rank);
  std::iota(expect.begin(), expect.end(), std::size_t{0});
  if (sorted != expect)
    throw DimensionError("permute: order is not a permutation of the axes of " +
                         shape_str(x.shape()));
  Shape shape;
  auto map = std::make_shared<std::vector<std::size_t>>(permutation_map(x.shape(), order, shape));
  std::vector<T> out(x.numel());
  auto xv = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[(*map)[i]];
  return make_output(std::move(shape), std::move(out), should_record({&x}),
                     [x, map](const std::vector<T>& g) {
                       if (auto* gx = grad_sink(x))
                         for (std::size_t i = 0; i < g.size(); ++i) (*gx)[(*map)[i]] += g[i];
                     });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& x) {
  if (x.ndim() < 2) throw DimensionError("transpose: needs rank >= 2, got " + shape_str(x.shape()));
  std::vector<std::size_t> order(x.ndim());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::swap(order[order.size() - 1], order[order.size() - 2]);
  return permute(x, order);
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, int axis) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  const std::size_t ax = normalize_axis(axis, parts[0].ndim(), "concat");
  Shape shape = parts[0].shape();
  shape[ax] = 0;
  for (const auto& p : parts) {
    Shape a = p.shape(), b = parts[0].shape();
    bool same_rank = a.size() == b.size();
    if (same_rank) a[ax] = b[ax] = 0;
    if (!same_rank || a != b)
      throw DimensionError("concat: shapes " + shape_str(parts[0].shape()) + " and " +
                           shape_str(p.shape()) + " differ off the concatenation axis");
    shape[ax] += p.shape()[ax];
  }
  const AxisSplit total = split_at(shape, ax);
  std::vector<T> out(shape_numel(shape));
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t ext = p.shape()[ax];
    auto pv = p.data();
    for (std::size_t o = 0; o < total.outer; ++o)
      std::copy_n(pv.begin() + static_cast<long>(o * ext * total.inner), ext * total.inner,
                  out.begin() + static_cast<long>((o * total.extent + offset) * total.inner));
    offset += ext;
  }
  bool record = false;
  for (const auto& p : parts) record = record || should_record({&p});
  return make_output(std::move(shape), std::move(out), record,
                     [parts, ax, total](const std::vector<T>& g) {
                       std::size_t offset = 0;
                       for (const auto& p : parts) {
                         const std::size_t ext = p.shape()[ax];
                         if (auto* gp = grad_sink(p))
                           for (std::size_t o = 0; o < total.outer; ++o)
                             for (std::size_t i = 0; i < ext * total.inner; ++i)
                               (*gp)[o * ext * total.inner + i] +=
                                   g[(o * total.extent + offset) * total.inner + i];
                         offset += ext;
                       }
                     });
}

template <typename T>
Tensor<T> slice(const Tensor<T>& x, int axis, std::size_t begin, std::size_t end) {
  const std::size_t ax = normalize_axis(axis, x.ndim(), "slice");
  const AxisSplit s = split_at(x.shape(), ax);
  if (begin > end || end > s.extent)
    throw DimensionError("slice: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                         ") out of bounds for axis of extent " + std::to_string(s.extent));
  Shape shape = x.shape();
  const std::size_t len = end - begin;
  shape[ax] = len;
  std::vector<T> out(s.outer * len * s.inner);
  auto xv = x.data();
  for (std::size_t o = 0; o < s.outer; ++o)
    std::copy_n(xv.begin() + static_cast<long>((o * s.extent + begin) * s.inner), len * s.inner,
                out.begin() + static_cast<long>(o * len * s.inner));
  return make_output(std::move(shape), std::move(out), should_record({&x}),
                     [x, s, begin, len](const std::vector<T>& g) {
                       auto* gx = grad_sink(x);
                       if (!gx) return;
                       for (std::size_t o = 0; o < s.outer; ++o)
                         for (std::size_t i = 0; i < len * s.inner; ++i)
                           (*gx)[(o * s.extent + begin) * s.inner + i] += g[o * len * s.inner + i];
                     });
}

template <typename T>
Tensor<T> flip(const Tensor<T>& x, int axis) {
  const std::size_t ax = normalize_axis(axis, x.ndim(), "flip");
  const AxisSplit s = split_at(x.shape(), ax);
  auto index = [s](std::size_t o, std::size_t e, std::size_t i) {
    return (o * s.extent + e) * s.inner + i;
  };
  std::vector<T> out(x.numel());
  auto xv = x.data();
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t e = 0; e < s.extent; ++e)
      for (std::size_t i = 0; i < s.inner; ++i)
        out[index(o, e, i)] = xv[index(o, s.extent - 1 - e, i)];
  return make_output(x.shape(), std::move(out), should_record({&x}),
                     [x, s, index](const std::vector<T>& g) {
                       auto* gx = grad_sink(x);
                       if (!gx) return;
                       for (std::size_t o = 0; o < s.outer; ++o)
                         for (std::size_t e = 0; e < s.extent; ++e)
                           for (std::size_t i = 0; i < s.inner; ++i)
                             (*gx)[index(o, s.extent - 1 - e, i)] += g[index(o, e, i)];
                     });
}

template <typename T>
Tensor<T> expand(const Tensor<T>& x, int axis, std::size_t n) {
  const std::size_t ax = normalize_axis(axis, x.ndim(), "expand");
  if (x.shape()[ax] != 1)
    throw DimensionError("expand: axis " + std::to_string(axis) + " of " + shape_str(x.shape()) +
                         " must have extent 1");
  Shape shape = x.shape();
  shape[ax] = n;
  const AxisSplit s = split_at(shape, ax);
  std::vector<T> out(shape_numel(shape));
  auto xv = x.data();
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t e = 0; e < s.extent; ++e)
      std::copy_n(&xv[o * s.inner], s.inner, &out[(o * s.extent + e) * s.inner]);
  return make_output(std::move(shape), std::move(out), should_record({&x}),
                     [x, s](const std::vector<T>& g) {
                       auto* gx = grad_sink(x);
                       if (!gx) return;
                       for (std::size_t o = 0; o < s.outer; ++o)
                         for (std::size_t e = 0; e < s.extent; ++e)
                           for (std::size_t i = 0; i < s.inner; ++i)
                             (*gx)[o * s.inner + i] += g[(o * s.extent + e) * s.inner + i];
                     });
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  auto fail = [&] {
    throw DimensionError("matmul: incompatible shapes " + shape_str(as) + " and " + shape_str(bs));
  };
  if (as.size() < 2 || bs.size() < 2) fail();
  const std::size_t m = as[as.size() - 2], k = as.back();
  if (bs[bs.size() - 2] != k) fail();
  const std::size_t n = bs.back();
  std::size_t batches = 1;
  bool batched_b = bs.size() > 2;
  if (batched_b) {
    if (as.size() != bs.size() || !std::equal(as.begin(), as.end() - 2, bs.begin())) fail();
    for (std::size_t i = 0; i + 2 < as.size(); ++i) batches *= as[i];
  }
  // With a 2-D right operand all leading axes of a fold into the row count.
  const std::size_t rows = batched_b ? m : a.numel() / k;
  if (!batched_b) batches = 1;
  Shape shape = as;
  shape.back() = n;
  std::vector<T> out(shape_numel(shape));
  for (std::size_t bi = 0; bi < batches; ++bi) {
    ConstMap<T> A(a.data().data() + bi * rows * k, rows, k);
    ConstMap<T> B(b.data().data() + (batched_b ? bi * k * n : 0), k, n);
    MutMap<T> C(out.data() + bi * rows * n, rows, n);
    C.noalias() = A * B;
  }
  return make_output(
      std::move(shape), std::move(out), should_record({&a, &b}),
      [a, b, batches, rows, k, n, batched_b](const std::vector<T>& g) {
        auto* ga = grad_sink(a);
        auto* gb = grad_sink(b);
        for (std::size_t bi = 0; bi < batches; ++bi) {
          ConstMap<T> G(g.data() + bi * rows * n, rows, n);
          const std::size_t boff = batched_b ? bi * k * n : 0;
          if (ga) {
            ConstMap<T> B(b.data().data() + boff, k, n);
            MutMap<T> GA(ga->data() + bi * rows * k, rows, k);
            GA.noalias() += G * B.transpose();
          }
          if (gb) {
            ConstMap<T> A(a.data().data() + bi * rows * k, rows, k);
            MutMap<T> GB(gb->data() + boff, k, n);
            GB.noalias() += A.transpose() * G;
          }
        }
      });
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  Tensor<T> y = matmul(x, weight);
  return bias.defined() ? add(y, bias) : y;
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     double eps) {
  if (x.ndim() == 0) throw DimensionError("layer_norm: scalar input");
  if (!(eps > 0)) throw ParameterError("layer_norm: eps must be positive");
  const std::size_t d = x.shape().back();
  const std::size_t rows = d == 0 ? 0 : x.numel() / d;
  for (const Tensor<T>* p : {&gamma, &beta})
    if (p->defined() && p->shape() != Shape{d})
      throw DimensionError("layer_norm: affine parameter " + shape_str(p->shape()) +
                           " does not match input " + shape_str(x.shape()));
  auto xhat = std::make_shared<std::vector<T>>(x.numel());
  auto inv_std = std::make_shared<std::vector<T>>(rows);
  std::vector<T> out(x.numel());
  auto xv = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = xv.data() + r * d;
    T mu = T(0);
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<T>(d);
    T var = T(0);
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<T>(d);
    const T is = T(1) / std::sqrt(var + static_cast<T>(eps));
    (*inv_std)[r] = is;
    for (std::size_t j = 0; j < d; ++j) {
      const T h = (row[j] - mu) * is;
      (*xhat)[r * d + j] = h;
      T v = h;
      if (gamma.defined()) v *= gamma.data()[j];
      if (beta.defined()) v += beta.data()[j];
      out[r * d + j] = v;
    }
  }
  return make_output(
      x.shape(), std::move(out), should_record({&x, &gamma, &beta}),
      [x, gamma, beta, xhat, inv_std, rows, d](const std::vector<T>& g) {
        auto* gx = grad_sink(x);
        auto* gg = grad_sink(gamma);
        auto* gbeta = grad_sink(beta);
        std::vector<T> dh(d);
        for (std::size_t r = 0; r < rows; ++r) {
          const T* gr = g.data() + r * d;
          const T* hr = xhat->data() + r * d;
          T mean_dh = T(0), mean_dh_h = T(0);
          for (std::size_t j = 0; j < d; ++j) {
            if (gg) (*gg)[j] += gr[j] * hr[j];
            if (gbeta) (*gbeta)[j] += gr[j];
            dh[j] = gamma.defined() ? gr[j] * gamma.data()[j] : gr[j];
            mean_dh += dh[j];
            mean_dh_h += dh[j] * hr[j];
          }
          if (!gx) continue;
          mean_dh /= static_cast<T>(d);
          mean_dh_h /= static_cast<T>(d);
          const T is = (*inv_std)[r];
          for (std::size_t j = 0; j < d; ++j)
            (*gx)[r * d + j] += is * (dh[j] - mean_dh - hr[j] * mean_dh_h);
        }
      });
}

template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double p, bool train, Rng* rng) {
  if (!(p >= 0.0 && p < 1.0))
    throw ParameterError("dropout: p must lie in [0, 1), got " + std::to_string(p));
  if (!train || p == 0.0) return x;
  if (rng == nullptr) throw ContractError("dropout: train mode needs a generator");
  const T keep_scale = static_cast<T>(1.0 / (1.0 - p));
  auto mask = std::make_shared<std::vector<T>>(x.numel());
  for (T& m : *mask) m = rng->bernoulli(p) ? T(0) : keep_scale;
  std::vector<T> out(x.numel());
  auto xv = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * (*mask)[i];
  return make_output(x.shape(), std::move(out), should_record({&x}),
                     [x, mask](const std::vector<T>& g) {
                       if (auto* gx = grad_sink(x))
                         for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i] * (*mask)[i];
                     });
}

template <typename T>
Tensor<T> cross_entropy_smoothed(const Tensor<T>& logits, const std::vector<std::int64_t>& labels,
                                 double smoothing) {
  if (logits.ndim() != 2)
    throw DimensionError("cross_entropy: logits must be (N, K), got " + shape_str(logits.shape()));
  if (!(smoothing >= 0.0 && smoothing < 1.0))
    throw ParameterError("cross_entropy: smoothing must lie in [0, 1)");
  const std::size_t n = logits.shape()[0], k = logits.shape()[1];
  if (labels.size() != n)
    throw DimensionError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(n) + " rows");
  for (auto l : labels)
    if (l < 0 || static_cast<std::size_t>(l) >= k)
      throw ParameterError("cross_entropy: label " + std::to_string(l) + " outside [0, " +
                           std::to_string(k) + ")");
  const T off = static_cast<T>(smoothing / static_cast<double>(k));
  const T on = static_cast<T>(1.0 - smoothing) + off;
  auto probs = std::make_shared<std::vector<T>>(n * k);
  auto lv = logits.data();
  T total = T(0);
  for (std::size_t r = 0; r < n; ++r) {
    const T* row = lv.data() + r * k;
    const T mx = *std::max_element(row, row + k);
    T z = T(0);
    for (std::size_t j = 0; j < k; ++j) z += std::exp(row[j] - mx);
    const T log_z = std::log(z) + mx;
    for (std::size_t j = 0; j < k; ++j) {
      const T logp = row[j] - log_z;
      (*probs)[r * k + j] = std::exp(logp);
      const T q = static_cast<std::size_t>(labels[r]) == j ? on : off;
      total -= q * logp;
    }
  }
  total /= static_cast<T>(n);
  return make_output(Shape{}, std::vector<T>{total}, should_record({&logits}),
                     [logits, labels, probs, n, k, on, off](const std::vector<T>& g) {
                       auto* gl = grad_sink(logits);
                       if (!gl) return;
                       const T w = g[0] / static_cast<T>(n);
                       for (std::size_t r = 0; r < n; ++r)
                         for (std::size_t j = 0; j < k; ++j) {
                           const T q = static_cast<std::size_t>(labels[r]) == j ? on : off;
                           (*gl)[r * k + j] += w * ((*probs)[r * k + j] - q);
                         }
                     });
}

template <typename T>
Tensor<T> mse_loss(const Tensor<T>& pred, const Tensor<T>& target) {
  if (pred.shape() != target.shape())
    throw DimensionError("mse_loss: shapes " + shape_str(pred.shape()) + " and " +
                         shape_str(target.shape()) + " differ");
  return mean(square(sub(pred, target)));
}

template <typename T>
Tensor<T> mae_loss(const Tensor<T>& pred, const Tensor<T>& target) {
  if (pred.shape() != target.shape())
    throw DimensionError("mae_loss: shapes " + shape_str(pred.shape()) + " and " +
                         shape_str(target.shape()) + " differ");
  Tensor<T> diff = sub(pred, target);
  Tensor<T> absd = unary(
      diff, [](T v) { return std::abs(v); },
      [](T v, T) { return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0)); });
  return mean(absd);
}

#define SIMBA_INSTANTIATE_OPS(T)                                                               \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                  \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                  \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                  \
  template Tensor<T> div(const Tensor<T>&, const Tensor<T>&);                                  \
  template Tensor<T> add_scalar(const Tensor<T>&, T);                                          \
  template Tensor<T> scale(const Tensor<T>&, T);                                               \
  template Tensor<T> neg(const Tensor<T>&);                                                    \
  template Tensor<T> exp(const Tensor<T>&);                                                    \
  template Tensor<T> log(const Tensor<T>&);                                                    \
  template Tensor<T> square(const Tensor<T>&);                                                 \
  template Tensor<T> tanh(const Tensor<T>&);                                                   \
  template Tensor<T> sigmoid(const Tensor<T>&);                                                \
  template Tensor<T> relu(const Tensor<T>&);                                                   \
  template Tensor<T> silu(const Tensor<T>&);                                                   \
  template Tensor<T> softplus(const Tensor<T>&);                                               \
  template Tensor<T> gelu(const Tensor<T>&);                                                   \
  template Tensor<T> sum(const Tensor<T>&);                                                    \
  template Tensor<T> mean(const Tensor<T>&);                                                   \
  template Tensor<T> mean_axis(const Tensor<T>&, int);                                         \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                         \
  template Tensor<T> permute(const Tensor<T>&, const std::vector<std::size_t>&);               \
  template Tensor<T> transpose(const Tensor<T>&);                                              \
  template Tensor<T> concat(const std::vector<Tensor<T>>&, int);                               \
  template Tensor<T> slice(const Tensor<T>&, int, std::size_t, std::size_t);                   \
  template Tensor<T> flip(const Tensor<T>&, int);                                              \
  template Tensor<T> expand(const Tensor<T>&, int, std::size_t);                               \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                               \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);             \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, double); \
  template Tensor<T> dropout(const Tensor<T>&, double, bool, Rng*);                            \
  template Tensor<T> cross_entropy_smoothed(const Tensor<T>&, const std::vector<std::int64_t>&, \
                                            double);                                           \
  template Tensor<T> mse_loss(const Tensor<T>&, const Tensor<T>&);                             \
  template Tensor<T> mae_loss(const Tensor<T>&, const Tensor<T>&);

SIMBA_INSTANTIATE_OPS(float)
SIMBA_INSTANTIATE_OPS(double)

}  // namespace simba
