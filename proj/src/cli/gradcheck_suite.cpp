#include <functional>
#include <map>
#include <ostream>

#include "internal.hpp"
#include "simba/error.hpp"
#include "simba/gradcheck.hpp"
#include "simba/model.hpp"
#include "simba/ops.hpp"
#include "simba/spectral.hpp"
#include "simba/ssm.hpp"
#include "simba/train.hpp"

namespace simba {

namespace {

struct Check {
  std::string group;
  std::function<GradCheckResult(Rng&)> run;
};

Tensor64 rnd(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  return Tensor64::uniform(std::move(shape), rng, lo, hi);
}

// Scalar loss with a distinct random weight on every output element.
Tensor64 weighted(const Tensor64& y, std::uint64_t seed = 17) {
  Rng rng(seed);
  return sum(mul(y, Tensor64::uniform(y.shape(), rng, -1.0, 1.0)));
}

Tensor64 weighted(const ComplexTensor<double>& y) { return add(weighted(y.re, 17), weighted(y.im, 18)); }

GradCheckResult unary(Rng& rng, Tensor64 (*op)(const Tensor64&), double lo = -2, double hi = 2) {
  Tensor64 x = rnd({3, 5}, rng, lo, hi);
  return check_gradients([&, op] { return weighted(op(x)); }, {{"x", x}});
}

GradCheckResult params_check(const std::function<Tensor64()>& loss, std::vector<NamedTensor> inputs,
                             std::size_t probes = 0) {
  GradCheckOptions opts;
  opts.max_probes_per_tensor = probes;
  return check_gradients(loss, inputs, opts);
}

template <typename P>
std::vector<NamedTensor> named(const P& list, std::vector<NamedTensor> extra = {}) {
  for (const auto& p : list) extra.push_back({p.name, p.tensor});
  return extra;
}

BlockConfig small_block(ChannelMixer mixer) {
  BlockConfig c;
  c.dim = 8;
  c.ssm.state = 4;
  c.einfft.num_blocks = 2;
  c.mixer = mixer;
  c.dropout = 0.0;
  return c;
}

const std::map<std::string, Check>& registry() {
  static const std::map<std::string, Check> checks = {
      // tensor ops
      {"linear", {"ops", [](Rng& rng) {
         Tensor64 x = rnd({2, 3, 4}, rng), w = rnd({4, 5}, rng), b = rnd({5}, rng);
         return check_gradients([&] { return weighted(linear(x, w, b)); }, {{"x", x}, {"weight", w}, {"bias", b}});
       }}},
      {"matmul", {"ops", [](Rng& rng) {
         Tensor64 a = rnd({2, 3, 4}, rng), b = rnd({2, 4, 2}, rng);
         return check_gradients([&] { return weighted(matmul(a, b)); }, {{"a", a}, {"b", b}});
       }}},
      {"layer_norm", {"ops", [](Rng& rng) {
         Tensor64 x = rnd({2, 3, 6}, rng), g = rnd({6}, rng), b = rnd({6}, rng);
         return check_gradients([&] { return weighted(layer_norm(x, g, b, 1e-5)); },
                                {{"x", x}, {"gamma", g}, {"beta", b}});
       }}},
      {"silu", {"ops", [](Rng& rng) { return unary(rng, &silu<double>); }}},
      {"softplus", {"ops", [](Rng& rng) { return unary(rng, &softplus<double>); }}},
      {"gelu", {"ops", [](Rng& rng) { return unary(rng, &gelu<double>); }}},
      {"sigmoid", {"ops", [](Rng& rng) { return unary(rng, &sigmoid<double>); }}},
      {"tanh", {"ops", [](Rng& rng) { return unary(rng, &tanh<double>); }}},
      {"exp", {"ops", [](Rng& rng) { return unary(rng, &exp<double>); }}},
      {"log", {"ops", [](Rng& rng) { return unary(rng, &log<double>, 0.5, 2.0); }}},
      {"mean_axis", {"ops", [](Rng& rng) {
         Tensor64 x = rnd({2, 3, 4}, rng);
         return check_gradients([&] { return weighted(mean_axis(x, 1)); }, {{"x", x}});
       }}},
      {"permute", {"ops", [](Rng& rng) {
         Tensor64 x = rnd({2, 3, 4}, rng);
         return check_gradients([&] { return weighted(permute(x, {2, 0, 1})); }, {{"x", x}});
       }}},
      {"concat", {"ops", [](Rng& rng) {
         Tensor64 a = rnd({2, 3}, rng), b = rnd({2, 2}, rng);
         return check_gradients([&] { return weighted(concat<double>({a, b}, 1)); }, {{"a", a}, {"b", b}});
       }}},
      {"cross_entropy", {"ops", [](Rng& rng) {
         Tensor64 x = rnd({4, 5}, rng, -3, 3);
         return check_gradients([&] { return cross_entropy_smoothed(x, {0, 4, 2, 2}, 0.1); }, {{"logits", x}});
       }}},
      {"mse", {"ops", [](Rng& rng) {
         Tensor64 a = rnd({3, 4}, rng), b = rnd({3, 4}, rng);
         return check_gradients([&] { return mse_loss(a, b); }, {{"pred", a}, {"target", b}});
       }}},
      // spectral
      {"fft_real", {"spectral", [](Rng& rng) {
         Tensor64 x = rnd({2, 12, 3}, rng);
         auto r = check_gradients([&] { return weighted(fft_real(x, 1)); }, {{"x.even", x}});
         Tensor64 y = rnd({2, 7, 3}, rng);
         auto odd = check_gradients([&] { return weighted(fft_real(y, 1)); }, {{"x.odd", y}});
         r.entries.push_back(odd.entries[0]);
         r.max_rel_error = std::max(r.max_rel_error, odd.max_rel_error);
         r.passed = r.passed && odd.passed;
         return r;
       }}},
      {"ifft_real", {"spectral", [](Rng& rng) {
         ComplexTensor<double> s{rnd({2, 7, 3}, rng), rnd({2, 7, 3}, rng)};
         return check_gradients([&] { return weighted(ifft_real(s, 12, 1)); }, {{"re", s.re}, {"im", s.im}});
       }}},
      {"emm", {"spectral", [](Rng& rng) {
         Tensor64 x = rnd({2, 5, 3, 4}, rng), w = rnd({3, 4, 4}, rng);
         return check_gradients([&] { return weighted(emm(x, w)); }, {{"input", x}, {"weight", w}});
       }}},
      {"complex_gate", {"spectral", [](Rng& rng) {
         ComplexTensor<double> h{rnd({2, 5, 2, 3}, rng), rnd({2, 5, 2, 3}, rng)};
         ComplexTensor<double> w{rnd({2, 3, 3}, rng), rnd({2, 3, 3}, rng)};
         ComplexTensor<double> b{rnd({2, 3}, rng), rnd({2, 3}, rng)};
         return check_gradients(
             [&] { return weighted(complex_gate_layer(h, w, b, GateActivation::relu)); },
             {{"h.re", h.re}, {"h.im", h.im}, {"w.re", w.re}, {"w.im", w.im}, {"b.re", b.re}, {"b.im", b.im}});
       }}},
      {"soft_shrink", {"spectral", [](Rng& rng) {
         Tensor64 x = rnd({4, 6}, rng);
         return check_gradients([&] { return weighted(soft_shrink(x, 0.1)); }, {{"x", x}});
       }}},
      {"einfft", {"spectral", [](Rng& rng) {
         EinFftConfig cfg;
         cfg.num_blocks = 2;
         cfg.init_scale = 0.5;
         auto p = EinFftParams<double>::init(8, cfg, rng);
         Tensor64 x = rnd({2, 6, 8}, rng);
         return check_gradients([&] { return weighted(einfft_forward(x, p)); },
                                {{"x", x}, {"w1.re", p.w1.re}, {"w1.im", p.w1.im}, {"b1.re", p.b1.re},
                                 {"b1.im", p.b1.im}, {"w2.re", p.w2.re}, {"w2.im", p.w2.im},
                                 {"b2.re", p.b2.re}, {"b2.im", p.b2.im}});
       }}},
      {"einfft_channel", {"spectral", [](Rng& rng) {
         EinFftConfig cfg;
         cfg.num_blocks = 2;
         cfg.init_scale = 0.5;
         cfg.fft_axis = FftAxis::channel;
         auto p = EinFftParams<double>::init(14, cfg, rng);
         Tensor64 x = rnd({2, 5, 14}, rng);
         return check_gradients([&] { return weighted(einfft_forward(x, p)); },
                                {{"x", x}, {"w1.re", p.w1.re}, {"w1.im", p.w1.im}, {"w2.re", p.w2.re},
                                 {"w2.im", p.w2.im}, {"b2.re", p.b2.re}});
       }}},
      // ssm
      {"discretize_zoh", {"ssm", [](Rng& rng) {
         Tensor64 a = rnd({3, 4}, rng, -2, -0.1), b = rnd({3, 4}, rng), d = rnd({3}, rng, 0.1, 1);
         return check_gradients(
             [&] {
               auto z = discretize_zoh_diag(a, b, d);
               return add(weighted(z.a_bar, 3), weighted(z.b_bar, 4));
             },
             {{"a", a}, {"b", b}, {"delta", d}});
       }}},
      {"selective_scan", {"ssm", [](Rng& rng) {
         Tensor64 x = rnd({2, 7, 3}, rng), delta = rnd({2, 7, 3}, rng, 0.1, 1.0);
         Tensor64 a = rnd({3, 4}, rng, -2, -0.1), bt = rnd({2, 7, 4}, rng), ct = rnd({2, 7, 4}, rng);
         Tensor64 d = rnd({3}, rng);
         return check_gradients([&] { return weighted(selective_scan(x, delta, a, bt, ct, d)); },
                                {{"x", x}, {"delta", delta}, {"a", a}, {"b_t", bt}, {"c_t", ct}, {"d_skip", d}});
       }}},
      {"causal_conv1d", {"ssm", [](Rng& rng) {
         Tensor64 x = rnd({2, 6, 3}, rng), w = rnd({3, 4}, rng), b = rnd({3}, rng);
         return check_gradients([&] { return weighted(causal_conv1d(x, w, b)); },
                                {{"x", x}, {"weight", w}, {"bias", b}});
       }}},
      {"mamba_block", {"ssm", [](Rng& rng) {
         SsmConfig cfg;
         cfg.state = 4;
         auto p = SsmParams<double>::init(6, cfg, rng);
         Tensor64 x = rnd({2, 5, 6}, rng);
         return check_gradients([&] { return weighted(mamba_block(x, p)); },
                                {{"x", x}, {"in_x", p.in_x}, {"in_z", p.in_z}, {"conv_weight", p.conv_weight},
                                 {"conv_bias", p.conv_bias}, {"proj_b", p.proj_b}, {"proj_c", p.proj_c},
                                 {"proj_delta", p.proj_delta}, {"delta_up", p.delta_up},
                                 {"delta_bias", p.delta_bias}, {"a_log", p.a_log}, {"d_skip", p.d_skip},
                                 {"proj_out", p.proj_out}});
       }}},
      {"mamba_block_reverse", {"ssm", [](Rng& rng) {
         SsmConfig cfg;
         cfg.state = 4;
         cfg.reverse = true;
         auto p = SsmParams<double>::init(6, cfg, rng);
         Tensor64 x = rnd({2, 5, 6}, rng);
         return check_gradients([&] { return weighted(mamba_block(x, p)); },
                                {{"x", x}, {"in_x", p.in_x}, {"a_log", p.a_log}, {"delta_bias", p.delta_bias},
                                 {"proj_out", p.proj_out}});
       }}},
      // assembled
      {"block", {"block", [](Rng& rng) {
         auto p = BlockParams<double>::init(small_block(ChannelMixer::einfft), rng);
         Tensor64 x = rnd({2, 6, 8}, rng);
         ParamList<double> list;
         p.collect("", list);
         return check_gradients([&] { return weighted(simba_block(x, p, {})); }, named(list, {{"x", x}}));
       }}},
      {"block_mlp", {"block", [](Rng& rng) {
         auto p = BlockParams<double>::init(small_block(ChannelMixer::mlp), rng);
         Tensor64 x = rnd({2, 6, 8}, rng);
         ParamList<double> list;
         p.collect("", list);
         return check_gradients([&] { return weighted(simba_block(x, p, {})); }, named(list, {{"x", x}}));
       }}},
      {"model", {"model", [](Rng& rng) {
         // SiMBA-micro end to end; a seeded subset of entries per tensor.
         auto m = VisionModel<double>::init(VisionConfig::micro(), rng);
         Tensor64 images = rnd({1, 3, 32, 32}, rng, 0, 1);
         return params_check([&] { return weighted(m.forward(images, {})); },
                             named(m.parameters(), {{"images", images}}), 4);
       }}},
      {"forecast", {"model", [](Rng& rng) {
         ForecastConfig c;
         c.channels = 3;
         c.lookback = 12;
         c.horizon = 6;
         c.block = small_block(ChannelMixer::einfft);
         auto m = ForecastModel<double>::init(c, rng);
         Tensor64 s = rnd({2, 12, 3}, rng);
         return params_check([&] { return weighted(m.forward(s, {})); }, named(m.parameters(), {{"series", s}}), 6);
       }}},
  };
  return checks;
}

}  // namespace

std::vector<std::string> gradcheck_scopes() {
  std::vector<std::string> out{"all", "ops", "spectral", "ssm"};
  for (const auto& [name, check] : registry()) out.push_back(name);
  return out;
}

int cmd_gradcheck(const std::string& scope, std::uint64_t seed, std::ostream& out) {
  std::vector<std::string> selected;
  for (const auto& [name, check] : registry())
    if (scope == "all" || scope == name || scope == check.group) selected.push_back(name);
  if (selected.empty()) {
    std::string known;
    for (const auto& s : gradcheck_scopes()) known += (known.empty() ? "" : ", ") + s;
    throw ConfigError("--scope", "unknown scope '" + scope + "' (" + known + ")");
  }
  bool all_passed = true;
  double worst = 0.0;
  for (const auto& name : selected) {
    Rng rng = Rng(seed).fork(name);
    const GradCheckResult r = registry().at(name).run(rng);
    for (const auto& e : r.entries)
      out << name << ' ' << e.name << " probes " << e.probes << " max_rel "
          << format_double(e.max_rel_error) << '\n';
    out << (r.passed ? "PASS " : "FAIL ") << name << " max_rel " << format_double(r.max_rel_error)
        << '\n';
    all_passed = all_passed && r.passed;
    worst = std::max(worst, r.max_rel_error);
  }
  out << (all_passed ? "PASS" : "FAIL") << " overall max_rel " << format_double(worst) << '\n';
  return all_passed ? 0 : 3;
}

}  // namespace simba
