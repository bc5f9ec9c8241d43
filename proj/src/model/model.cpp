#include "simba/model.hpp"

#include <cmath>

#include "simba/error.hpp"
#include "simba/ops.hpp"
#include "simba/rng.hpp"

namespace simba {

namespace {

template <typename T>
Tensor<T> linear_weight(std::size_t in, std::size_t out, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  return Tensor<T>::uniform({in, out}, rng, -bound, bound);
}

template <typename T>
void track_all(const ParamList<T>& params) {
  for (const auto& p : params) {
    Tensor<T> t = p.tensor;
    t.set_requires_grad(true);
  }
}

}  // namespace

const char* mixer_name(ChannelMixer mixer) {
  switch (mixer) {
    case ChannelMixer::einfft: return "einfft";
    case ChannelMixer::mlp: return "mlp";
    case ChannelMixer::none: return "none";
  }
  return "?";
}

ChannelMixer parse_mixer(const std::string& name) {
  if (name == "einfft") return ChannelMixer::einfft;
  if (name == "mlp") return ChannelMixer::mlp;
  if (name == "none") return ChannelMixer::none;
  throw ConfigError("mixer", "unknown channel mixer '" + name + "' (einfft, mlp, none)");
}

void BlockConfig::validate() const {
  if (dim == 0) throw ConfigError("dim", "must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout", "must lie in [0, 1)");
  if (!(norm_eps > 0.0)) throw ConfigError("norm_eps", "must be positive");
  if (ssm.expand == 0) throw ConfigError("ssm/expand", "must be positive");
  if (ssm.state == 0) throw ConfigError("ssm/state", "must be positive");
  if (ssm.conv_width == 0) throw ConfigError("ssm/conv_width", "must be positive");
  if (mixer == ChannelMixer::mlp && mlp_ratio == 0) throw ConfigError("mlp_ratio", "must be positive");
  if (mixer == ChannelMixer::einfft) {
    const std::size_t mixed = einfft_mixed_dim(dim, einfft.fft_axis);
    if (einfft.num_blocks == 0 || mixed % einfft.num_blocks != 0)
      throw ConfigError("einfft/num_blocks", "mixed dimension " + std::to_string(mixed) +
                                                 " is not divisible by " +
                                                 std::to_string(einfft.num_blocks));
    if (!(einfft.num_blocks < mixed / einfft.num_blocks))
      throw ConfigError("einfft/num_blocks", "must be smaller than the block size " +
                                                 std::to_string(mixed / einfft.num_blocks));
    if (!(einfft.sparsity_threshold >= 0.0))
      throw ConfigError("einfft/sparsity_threshold", "must be non-negative");
  }
}

template <typename T>
BlockParams<T> BlockParams<T>::init(const BlockConfig& config, Rng& rng) {
  config.validate();
  const std::size_t d = config.dim;
  BlockParams p;
  p.config = config;
  p.norm1_gamma = Tensor<T>::ones({d});
  p.norm1_beta = Tensor<T>::zeros({d});
  p.norm2_gamma = Tensor<T>::ones({d});
  p.norm2_beta = Tensor<T>::zeros({d});
  Rng ssm_rng = rng.fork("ssm");
  p.ssm = SsmParams<T>::init(d, config.ssm, ssm_rng);
  Rng mix_rng = rng.fork("mixer");
  if (config.mixer == ChannelMixer::einfft) {
    p.einfft = EinFftParams<T>::init(d, config.einfft, mix_rng);
  } else if (config.mixer == ChannelMixer::mlp) {
    const std::size_t h = config.mlp_ratio * d;
    p.mlp.fc1 = linear_weight<T>(d, h, mix_rng);
    p.mlp.b1 = Tensor<T>::zeros({h});
    p.mlp.fc2 = linear_weight<T>(h, d, mix_rng);
    p.mlp.b2 = Tensor<T>::zeros({d});
  }
  // advance the caller's stream so sibling blocks differ
  rng.next_u64();
  return p;
}

template <typename T>
void BlockParams<T>::collect(const std::string& prefix, ParamList<T>& out) const {
  out.push_back({prefix + "norm1.gamma", norm1_gamma, false});
  out.push_back({prefix + "norm1.beta", norm1_beta, false});
  const std::string s = prefix + "ssm.";
  out.push_back({s + "in_x", ssm.in_x, true});
  out.push_back({s + "in_z", ssm.in_z, true});
  out.push_back({s + "conv_weight", ssm.conv_weight, true});
  out.push_back({s + "conv_bias", ssm.conv_bias, false});
  out.push_back({s + "proj_b", ssm.proj_b, true});
  out.push_back({s + "proj_c", ssm.proj_c, true});
  out.push_back({s + "proj_delta", ssm.proj_delta, true});
  out.push_back({s + "delta_up", ssm.delta_up, true});
  out.push_back({s + "delta_bias", ssm.delta_bias, false});
  out.push_back({s + "a_log", ssm.a_log, false});
  out.push_back({s + "d_skip", ssm.d_skip, false});
  out.push_back({s + "proj_out", ssm.proj_out, true});
  if (config.mixer == ChannelMixer::none) return;
  out.push_back({prefix + "norm2.gamma", norm2_gamma, false});
  out.push_back({prefix + "norm2.beta", norm2_beta, false});
  if (config.mixer == ChannelMixer::einfft) {
    const std::string e = prefix + "einfft.";
    out.push_back({e + "w1.re", einfft.w1.re, true});
    out.push_back({e + "w1.im", einfft.w1.im, true});
    out.push_back({e + "b1.re", einfft.b1.re, false});
    out.push_back({e + "b1.im", einfft.b1.im, false});
    out.push_back({e + "w2.re", einfft.w2.re, true});
    out.push_back({e + "w2.im", einfft.w2.im, true});
    out.push_back({e + "b2.re", einfft.b2.re, false});
    out.push_back({e + "b2.im", einfft.b2.im, false});
  } else {
    const std::string m = prefix + "mlp.";
    out.push_back({m + "fc1", mlp.fc1, true});
    out.push_back({m + "b1", mlp.b1, false});
    out.push_back({m + "fc2", mlp.fc2, true});
    out.push_back({m + "b2", mlp.b2, false});
  }
}

template <typename T>
Tensor<T> simba_block(const Tensor<T>& x, const BlockParams<T>& p, const ForwardContext& ctx) {
  const BlockConfig& c = p.config;
  if (x.ndim() != 3 || x.shape()[2] != c.dim)
    throw DimensionError("simba_block: expected (B, N, " + std::to_string(c.dim) + "), got " +
                         shape_str(x.shape()));
  const Tensor<T> h = layer_norm(x, p.norm1_gamma, p.norm1_beta, c.norm_eps);
  Tensor<T> y = add(x, dropout(mamba_block(h, p.ssm, ctx.probe), c.dropout, ctx.train, ctx.rng));
  if (c.mixer == ChannelMixer::none) return y;
  const Tensor<T> h2 = layer_norm(y, p.norm2_gamma, p.norm2_beta, c.norm_eps);
  Tensor<T> mixed;
  if (c.mixer == ChannelMixer::einfft) {
    mixed = einfft_forward(h2, p.einfft);
  } else {
    mixed = linear(gelu(linear(h2, p.mlp.fc1, p.mlp.b1)), p.mlp.fc2, p.mlp.b2);
  }
  return add(y, dropout(mixed, c.dropout, ctx.train, ctx.rng));
}

template <typename T>
Tensor<T> patch_embed(const Tensor<T>& images, const Tensor<T>& weight, std::size_t patch) {
  if (images.ndim() != 4)
    throw DimensionError("patch_embed: expected (B, C, H, W), got " + shape_str(images.shape()));
  const std::size_t b = images.shape()[0], c = images.shape()[1], h = images.shape()[2],
                    w = images.shape()[3];
  if (patch == 0 || h % patch != 0 || w % patch != 0)
    throw DimensionError("patch_embed: image " + std::to_string(h) + "x" + std::to_string(w) +
                         " is not divisible by patch " + std::to_string(patch));
  if (weight.shape() != Shape{c * patch * patch, weight.ndim() == 2 ? weight.shape()[1] : 0})
    throw DimensionError("patch_embed: weight " + shape_str(weight.shape()) + " does not take " +
                         std::to_string(c * patch * patch) + " inputs");
  const std::size_t gh = h / patch, gw = w / patch;
  Tensor<T> t = reshape(images, {b, c, gh, patch, gw, patch});
  t = permute(t, {0, 2, 4, 1, 3, 5});
  t = reshape(t, {b, gh * gw, c * patch * patch});
  return matmul(t, weight);
}

template <typename T>
Tensor<T> patch_merge(const Tensor<T>& tokens, std::size_t grid, const Tensor<T>& gamma,
                      const Tensor<T>& beta, const Tensor<T>& weight, double eps) {
  if (tokens.ndim() != 3 || tokens.shape()[1] != grid * grid)
    throw DimensionError("patch_merge: tokens " + shape_str(tokens.shape()) + " are not a " +
                         std::to_string(grid) + "x" + std::to_string(grid) + " grid");
  if (grid % 2 != 0)
    throw DimensionError("patch_merge: grid " + std::to_string(grid) + " is not divisible by 2");
  const std::size_t b = tokens.shape()[0], d = tokens.shape()[2], g2 = grid / 2;
  Tensor<T> t = reshape(tokens, {b, g2, 2, g2, 2, d});
  t = permute(t, {0, 1, 3, 2, 4, 5});
  t = reshape(t, {b, g2 * g2, 4 * d});
  return matmul(layer_norm(t, gamma, beta, eps), weight);
}

void VisionConfig::validate() const {
  if (dims.empty()) throw ConfigError("dims", "at least one stage is required");
  if (depths.size() != dims.size())
    throw ConfigError("depths", "has " + std::to_string(depths.size()) + " entries but dims has " +
                                    std::to_string(dims.size()));
  for (std::size_t i = 0; i < depths.size(); ++i)
    if (depths[i] == 0) throw ConfigError("depths/" + std::to_string(i), "must be at least 1");
  if (patch == 0) throw ConfigError("patch", "must be positive");
  if (in_channels == 0) throw ConfigError("in_channels", "must be positive");
  if (num_classes < 2) throw ConfigError("num_classes", "must be at least 2");
  const std::size_t down = patch << (dims.size() - 1);
  if (image_size == 0 || image_size % down != 0)
    throw ConfigError("image_size", std::to_string(image_size) +
                                        " is not divisible by the total downsampling " +
                                        std::to_string(down));
  for (std::size_t i = 0; i < dims.size(); ++i) {
    BlockConfig b = block;
    b.dim = dims[i];
    try {
      b.validate();
    } catch (const ConfigError& e) {
      throw ConfigError("block/" + e.path(), "stage " + std::to_string(i) + ": " + e.detail());
    }
  }
}

VisionConfig VisionConfig::micro() { return VisionConfig{}; }

template <typename T>
VisionModel<T> VisionModel<T>::init(const VisionConfig& config, Rng& rng) {
  config.validate();
  VisionModel m;
  m.config = config;
  const std::size_t patch_in = config.in_channels * config.patch * config.patch;
  Rng stem_rng = rng.fork("stem");
  m.stem = linear_weight<T>(patch_in, config.dims[0], stem_rng);
  for (std::size_t s = 0; s < config.dims.size(); ++s) {
    Rng stage_rng = rng.fork("stage" + std::to_string(s));
    if (s > 0) {
      const std::size_t in = 4 * config.dims[s - 1];
      m.merges.push_back({Tensor<T>::ones({in}), Tensor<T>::zeros({in}),
                          linear_weight<T>(in, config.dims[s], stage_rng)});
    }
    BlockConfig bc = config.block;
    bc.dim = config.dims[s];
    std::vector<BlockParams<T>> blocks;
    for (std::size_t i = 0; i < config.depths[s]; ++i) {
      Rng block_rng = stage_rng.fork("block" + std::to_string(i));
      blocks.push_back(BlockParams<T>::init(bc, block_rng));
    }
    m.stages.push_back(std::move(blocks));
  }
  const std::size_t last = config.dims.back();
  m.norm_gamma = Tensor<T>::ones({last});
  m.norm_beta = Tensor<T>::zeros({last});
  Rng head_rng = rng.fork("head");
  m.head_weight = linear_weight<T>(last, config.num_classes, head_rng);
  m.head_bias = Tensor<T>::zeros({config.num_classes});
  track_all(m.parameters());
  return m;
}

template <typename T>
ParamList<T> VisionModel<T>::parameters() const {
  ParamList<T> out;
  out.push_back({"stem", stem, true});
  for (std::size_t s = 0; s < stages.size(); ++s) {
    const std::string sp = "stages." + std::to_string(s) + ".";
    if (s > 0) {
      const Merge& mg = merges[s - 1];
      out.push_back({sp + "merge.gamma", mg.gamma, false});
      out.push_back({sp + "merge.beta", mg.beta, false});
      out.push_back({sp + "merge.weight", mg.weight, true});
    }
    for (std::size_t i = 0; i < stages[s].size(); ++i)
      stages[s][i].collect(sp + "blocks." + std::to_string(i) + ".", out);
  }
  out.push_back({"norm.gamma", norm_gamma, false});
  out.push_back({"norm.beta", norm_beta, false});
  out.push_back({"head.weight", head_weight, true});
  out.push_back({"head.bias", head_bias, false});
  return out;
}

template <typename T>
Tensor<T> VisionModel<T>::forward(const Tensor<T>& images, const ForwardContext& ctx) const {
  const VisionConfig& c = config;
  if (images.ndim() != 4 || images.shape()[1] != c.in_channels ||
      images.shape()[2] != c.image_size || images.shape()[3] != c.image_size)
    throw DimensionError("VisionModel::forward: expected (B, " + std::to_string(c.in_channels) +
                         ", " + std::to_string(c.image_size) + ", " +
                         std::to_string(c.image_size) + "), got " + shape_str(images.shape()));
  Tensor<T> x = patch_embed(images, stem, c.patch);
  std::size_t grid = c.image_size / c.patch;
  for (std::size_t s = 0; s < stages.size(); ++s) {
    if (s > 0) {
      const Merge& mg = merges[s - 1];
      x = patch_merge(x, grid, mg.gamma, mg.beta, mg.weight, c.block.norm_eps);
      grid /= 2;
    }
    for (const auto& block : stages[s]) x = simba_block(x, block, ctx);
  }
  x = layer_norm(x, norm_gamma, norm_beta, c.block.norm_eps);
  return linear(mean_axis(x, 1), head_weight, head_bias);
}

void ForecastConfig::validate() const {
  if (channels == 0) throw ConfigError("channels", "must be positive");
  if (lookback == 0) throw ConfigError("lookback", "must be positive");
  if (horizon == 0) throw ConfigError("horizon", "must be positive");
  if (depth == 0) throw ConfigError("depth", "must be positive");
  try {
    block.validate();
  } catch (const ConfigError& e) {
    throw ConfigError("block/" + e.path(), e.detail());
  }
}

template <typename T>
ForecastModel<T> ForecastModel<T>::init(const ForecastConfig& config, Rng& rng) {
  config.validate();
  ForecastModel m;
  m.config = config;
  const std::size_t c = config.channels, d = config.block.dim;
  Rng embed_rng = rng.fork("embed");
  m.embed_weight = linear_weight<T>(c, d, embed_rng);
  m.embed_bias = Tensor<T>::zeros({d});
  for (std::size_t i = 0; i < config.depth; ++i) {
    Rng block_rng = rng.fork("block" + std::to_string(i));
    m.blocks.push_back(BlockParams<T>::init(config.block, block_rng));
  }
  m.norm_gamma = Tensor<T>::ones({d});
  m.norm_beta = Tensor<T>::zeros({d});
  Rng head_rng = rng.fork("head");
  m.proj_weight = linear_weight<T>(d, c, head_rng);
  m.proj_bias = Tensor<T>::zeros({c});
  m.head_weight = linear_weight<T>(config.lookback, config.horizon, head_rng);
  m.head_bias = Tensor<T>::zeros({config.horizon});
  track_all(m.parameters());
  return m;
}

template <typename T>
ParamList<T> ForecastModel<T>::parameters() const {
  ParamList<T> out;
  out.push_back({"embed.weight", embed_weight, true});
  out.push_back({"embed.bias", embed_bias, false});
  for (std::size_t i = 0; i < blocks.size(); ++i)
    blocks[i].collect("blocks." + std::to_string(i) + ".", out);
  out.push_back({"norm.gamma", norm_gamma, false});
  out.push_back({"norm.beta", norm_beta, false});
  out.push_back({"proj.weight", proj_weight, true});
  out.push_back({"proj.bias", proj_bias, false});
  out.push_back({"head.weight", head_weight, true});
  out.push_back({"head.bias", head_bias, false});
  return out;
}

template <typename T>
Tensor<T> ForecastModel<T>::forward(const Tensor<T>& series, const ForwardContext& ctx) const {
  const ForecastConfig& c = config;
  if (series.ndim() != 3 || series.shape()[1] != c.lookback || series.shape()[2] != c.channels)
    throw DimensionError("ForecastModel::forward: expected (B, " + std::to_string(c.lookback) +
                         ", " + std::to_string(c.channels) + "), got " +
                         shape_str(series.shape()));
  const Tensor<T> last = slice(series, 1, c.lookback - 1, c.lookback);  // (B, 1, C)
  const Tensor<T> level = reshape(mean_axis(series, 1), {series.dim(0), 1, c.channels});
  Tensor<T> x = sub(series, expand(level, 1, c.lookback));
  x = linear(x, embed_weight, embed_bias);
  for (const auto& block : blocks) x = simba_block(x, block, ctx);
  x = layer_norm(x, norm_gamma, norm_beta, c.block.norm_eps);
  x = linear(x, proj_weight, proj_bias);          // (B, L, C)
  x = permute(x, {0, 2, 1});                      // (B, C, L)
  x = linear(x, head_weight, head_bias);          // (B, C, T)
  x = permute(x, {0, 2, 1});                      // (B, T, C)
  return add(x, expand(last, 1, c.horizon));
}

template <typename T>
std::size_t count_parameters(const ParamList<T>& params) {
  std::size_t n = 0;
  for (const auto& p : params) n += p.tensor.numel();
  return n;
}

#define SIMBA_INSTANTIATE_MODEL(T)                                                           \
  template struct BlockParams<T>;                                                            \
  template Tensor<T> simba_block(const Tensor<T>&, const BlockParams<T>&,                    \
                                 const ForwardContext&);                                     \
  template Tensor<T> patch_embed(const Tensor<T>&, const Tensor<T>&, std::size_t);           \
  template Tensor<T> patch_merge(const Tensor<T>&, std::size_t, const Tensor<T>&,            \
                                 const Tensor<T>&, const Tensor<T>&, double);                \
  template struct VisionModel<T>;                                                            \
  template struct ForecastModel<T>;                                                          \
  template std::size_t count_parameters(const ParamList<T>&);

SIMBA_INSTANTIATE_MODEL(float)
SIMBA_INSTANTIATE_MODEL(double)

}  // namespace simba
