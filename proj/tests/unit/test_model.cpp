#include <cmath>

#include "doctest.h"
#include "simba/error.hpp"
#include "simba/model.hpp"
#include "support.hpp"

using namespace simba;
using simba::testing::max_abs_diff;
using simba::testing::rand_tensor;
using simba::testing::weighted_sum;

namespace {

template <typename T>
void zero(Tensor<T> t) {
  for (auto& v : t.mutable_data()) v = T(0);
}

template <typename T>
void zero_sublayer_outputs(BlockParams<T>& b) {
  zero(b.ssm.proj_out);
  if (b.config.mixer == ChannelMixer::einfft) {
    zero(b.einfft.w2.re);
    zero(b.einfft.w2.im);
    zero(b.einfft.b2.re);
    zero(b.einfft.b2.im);
  } else if (b.config.mixer == ChannelMixer::mlp) {
    zero(b.mlp.fc2);
    zero(b.mlp.b2);
  }
}

BlockConfig small_block(std::size_t dim) {
  BlockConfig c;
  c.dim = dim;
  c.ssm.state = 4;
  c.einfft.num_blocks = 2;
  c.dropout = 0.0;
  return c;
}

}  // namespace

TEST_CASE("simba block") {
  Rng rng(1);
  SUBCASE("shape") {
    BlockConfig c;
    auto p = BlockParams<double>::init(c, rng);
    Tensor64 x = rand_tensor({2, 49, 32}, rng);
    CHECK(simba_block(x, p, {}).shape() == x.shape());
  }
  SUBCASE("zeroed output projections give the identity map") {
    for (ChannelMixer mixer : {ChannelMixer::einfft, ChannelMixer::mlp, ChannelMixer::none}) {
      BlockConfig c = small_block(8);
      c.mixer = mixer;
      auto p = BlockParams<double>::init(c, rng);
      zero_sublayer_outputs(p);
      Tensor64 x = rand_tensor({2, 5, 8}, rng);
      CHECK(max_abs_diff(simba_block(x, p, {}).data(), x.data()) == 0.0);
    }
  }
  SUBCASE("dropout needs a generator in train mode") {
    BlockConfig c = small_block(8);
    c.dropout = 0.1;
    auto p = BlockParams<double>::init(c, rng);
    Tensor64 x = rand_tensor({1, 4, 8}, rng);
    ForwardContext ctx;
    ctx.train = true;
    CHECK_THROWS_AS(simba_block(x, p, ctx), ContractError);
    Rng drop(4);
    ctx.rng = &drop;
    CHECK(simba_block(x, p, ctx).shape() == x.shape());
  }
  SUBCASE("config validation") {
    BlockConfig c;
    c.dropout = 1.0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = BlockConfig{};
    c.dim = 30;  // not divisible by 4 blocks
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = BlockConfig{};
    c.norm_eps = 0.0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
  }
}

TEST_CASE("two stacked blocks pass the gradient check") {
  Rng rng(2);
  BlockConfig c = small_block(8);
  c.einfft.init_scale = 0.5;
  auto b1 = BlockParams<double>::init(c, rng);
  auto b2 = BlockParams<double>::init(c, rng);
  Tensor64 x = rand_tensor({2, 6, 8}, rng);
  std::vector<NamedTensor> inputs{{"x", x}};
  ParamList<double> params;
  b1.collect("b1.", params);
  b2.collect("b2.", params);
  for (auto& p : params) inputs.push_back({p.name, p.tensor});
  auto r = check_gradients([&] { return weighted_sum(simba_block(simba_block(x, b1, {}), b2, {})); },
                           inputs);
  for (const auto& e : r.entries) {
    INFO(e.name << " " << e.max_rel_error);
    CHECK(e.max_rel_error < 1e-4);
  }
}

TEST_CASE("patch embedding and merging") {
  Rng rng(3);
  Tensor64 images = rand_tensor({2, 3, 32, 32}, rng, 0, 1);
  Tensor64 w = rand_tensor({48, 16}, rng);
  Tensor64 tokens = patch_embed(images, w, 4);
  CHECK(tokens.shape() == Shape{2, 64, 16});
  // token (row 1, col 2) of image 1 sees pixels [4..8) x [8..12)
  double ref = 0;
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 4; ++j)
        ref += images[((1 * 3 + c) * 32 + 4 + i) * 32 + 8 + j] * w[((c * 4 + i) * 4 + j) * 16 + 5];
  CHECK(tokens[(1 * 64 + 1 * 8 + 2) * 16 + 5] == doctest::Approx(ref).epsilon(1e-12));

  Tensor64 zeros = patch_embed(Tensor64({1, 3, 32, 32}), w, 4);
  for (double v : zeros.data()) CHECK(v == 0.0);

  Tensor64 merged = patch_merge(tokens, 8, Tensor64::ones({64}), Tensor64::zeros({64}),
                                rand_tensor({64, 24}, rng), 1e-5);
  CHECK(merged.shape() == Shape{2, 16, 24});
  CHECK_THROWS_AS(patch_embed(Tensor64({1, 3, 30, 30}), w, 4), DimensionError);
  CHECK_THROWS_AS(patch_merge(Tensor64({1, 9, 4}), 3, Tensor64::ones({16}), Tensor64::zeros({16}),
                              Tensor64({16, 4}), 1e-5),
                  DimensionError);
}

TEST_CASE("vision model") {
  Rng rng(4);
  VisionConfig cfg = VisionConfig::micro();
  auto model = VisionModel<float>::init(cfg, rng);
  const std::size_t n = count_parameters(model.parameters());
  MESSAGE("SiMBA-micro parameters: " << n);
  CHECK(n > 300000);
  CHECK(n < 500000);

  Tensor32 images = Tensor32::uniform({3, 3, 32, 32}, rng, 0.0, 1.0);
  Tensor32 logits = model.forward(images, {});
  CHECK(logits.shape() == Shape{3, 10});

  SUBCASE("batch order permutes logits") {
    Tensor32 swapped = concat<float>(
        {slice(images, 0, 2, 3), slice(images, 0, 0, 1), slice(images, 0, 1, 2)}, 0);
    Tensor32 l2 = model.forward(swapped, {});
    for (std::size_t k = 0; k < 10; ++k) {
      CHECK(l2[0 * 10 + k] == doctest::Approx(logits[2 * 10 + k]).epsilon(1e-5));
      CHECK(l2[1 * 10 + k] == doctest::Approx(logits[0 * 10 + k]).epsilon(1e-5));
    }
  }
  SUBCASE("same seed, identical logits") {
    Rng again(4);
    auto m2 = VisionModel<float>::init(cfg, again);
    Tensor32 l2 = m2.forward(images, {});
    for (std::size_t i = 0; i < l2.numel(); ++i) CHECK(l2[i] == logits[i]);
  }
  SUBCASE("zeroed sublayers and head leave the head bias") {
    auto m = VisionModel<double>::init(cfg, rng);
    for (auto& stage : m.stages)
      for (auto& b : stage) zero_sublayer_outputs(b);
    zero(m.head_weight);
    for (std::size_t k = 0; k < 10; ++k) m.head_bias.mutable_data()[k] = 0.1 * double(k);
    Tensor64 l = m.forward(rand_tensor({2, 3, 32, 32}, rng, 0, 1), {});
    for (std::size_t b = 0; b < 2; ++b)
      for (std::size_t k = 0; k < 10; ++k) CHECK(l[b * 10 + k] == 0.1 * double(k));
  }
  SUBCASE("finite output for large inputs") {
    Tensor32 big = Tensor32::uniform({2, 3, 32, 32}, rng, -10.0, 10.0);
    for (float v : model.forward(big, {}).data()) CHECK(std::isfinite(v));
  }
  SUBCASE("no parameter is shared") {
    auto params = model.parameters();
    for (std::size_t i = 0; i < params.size(); ++i)
      for (std::size_t j = i + 1; j < params.size(); ++j)
        CHECK(params[i].tensor.node() != params[j].tensor.node());
  }
  SUBCASE("config errors") {
    VisionConfig bad = cfg;
    bad.image_size = 48;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = cfg;
    bad.depths = {1, 0, 1, 1};
    CHECK_THROWS_AS(bad.validate(), ConfigError);
  }
}

TEST_CASE("forecast model") {
  Rng rng(5);
  ForecastConfig cfg;
  cfg.block.dim = 16;
  cfg.block.ssm.state = 8;
  cfg.block.einfft.num_blocks = 2;
  auto model = ForecastModel<float>::init(cfg, rng);
  Tensor32 x = Tensor32::uniform({8, 96, 7}, rng, -1.0, 1.0);
  CHECK(model.forward(x, {}).shape() == Shape{8, 96, 7});

  SUBCASE("constant input with zeroed sublayers forecasts a constant") {
    auto m = ForecastModel<double>::init(cfg, rng);
    for (auto& b : m.blocks) zero_sublayer_outputs(b);
    Tensor64 flat({2, 96, 7});
    for (std::size_t i = 0; i < flat.numel(); ++i) flat.mutable_data()[i] = 0.3 * double(i % 7);
    Tensor64 y = m.forward(flat, {});
    for (std::size_t b = 0; b < 2; ++b)
      for (std::size_t t = 0; t < 96; ++t)
        for (std::size_t c = 0; c < 7; ++c)
          CHECK(y[(b * 96 + t) * 7 + c] == doctest::Approx(y[b * 96 * 7 + c]).epsilon(1e-12));
  }
  SUBCASE("finite output for large inputs") {
    Tensor32 big = Tensor32::uniform({2, 96, 7}, rng, -10.0, 10.0);
    for (float v : model.forward(big, {}).data()) CHECK(std::isfinite(v));
  }
  SUBCASE("gradient check end to end") {
    ForecastConfig small;
    small.channels = 3;
    small.lookback = 10;
    small.horizon = 4;
    small.depth = 1;
    small.block = small_block(8);
    small.block.einfft.init_scale = 0.5;
    auto m = ForecastModel<double>::init(small, rng);
    Tensor64 s = rand_tensor({2, 10, 3}, rng);
    std::vector<NamedTensor> inputs{{"series", s}};
    for (auto& p : m.parameters()) inputs.push_back({p.name, p.tensor});
    auto r = check_gradients([&] { return weighted_sum(m.forward(s, {})); }, inputs);
    for (const auto& e : r.entries) {
      INFO(e.name << " " << e.max_rel_error);
      CHECK(e.max_rel_error < 1e-4);
    }
  }
}
