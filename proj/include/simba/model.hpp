#pragma once

// SiMBA blocks and the two assembled heads: a hierarchical image classifier
// and a multivariate forecaster.

#include <cstddef>
#include <string>
#include <vector>

#include "simba/spectral.hpp"
#include "simba/ssm.hpp"
#include "simba/tensor.hpp"

namespace simba {

class Rng;

enum class ChannelMixer { einfft, mlp, none };

const char* mixer_name(ChannelMixer mixer);
ChannelMixer parse_mixer(const std::string& name);

struct BlockConfig {
  std::size_t dim = 32;
  SsmConfig ssm;
  EinFftConfig einfft;
  ChannelMixer mixer = ChannelMixer::einfft;
  std::size_t mlp_ratio = 4;
  double dropout = 0.1;
  double norm_eps = 1e-5;

  // ConfigError on bad values; field paths are relative ("dropout", ...).
  void validate() const;
};

template <typename T>
struct NamedParam {
  std::string name;
  Tensor<T> tensor;
  bool decay = true;  // subject to weight decay
};

template <typename T>
using ParamList = std::vector<NamedParam<T>>;

struct ForwardContext {
  bool train = false;
  Rng* rng = nullptr;          // dropout masks; required when train is set
  SsmProbe* probe = nullptr;   // optional observation of Δ and A
};

template <typename T>
struct MlpParams {
  Tensor<T> fc1, b1, fc2, b2;
};

template <typename T>
struct BlockParams {
  BlockConfig config;
  Tensor<T> norm1_gamma, norm1_beta, norm2_gamma, norm2_beta;
  SsmParams<T> ssm;
  EinFftParams<T> einfft;  // when mixer == einfft
  MlpParams<T> mlp;        // when mixer == mlp

  static BlockParams init(const BlockConfig& config, Rng& rng);
  void collect(const std::string& prefix, ParamList<T>& out) const;
};

// X += dropout(mamba(norm(X))); X += dropout(mixer(norm(X))).
template <typename T>
Tensor<T> simba_block(const Tensor<T>& x, const BlockParams<T>& params, const ForwardContext& ctx);

// (B, C, H, W) -> (B, (H/p)(W/p), D) through a bias-free patch projection
// weight of shape (C*p*p, D).
template <typename T>
Tensor<T> patch_embed(const Tensor<T>& images, const Tensor<T>& weight, std::size_t patch);

// (B, h*w, D) tokens on an h x w grid -> (B, h*w/4, D') by concatenating each
// 2x2 neighbourhood, normalizing and projecting (4D, D').
template <typename T>
Tensor<T> patch_merge(const Tensor<T>& tokens, std::size_t grid, const Tensor<T>& gamma,
                      const Tensor<T>& beta, const Tensor<T>& weight, double eps);

struct VisionConfig {
  std::size_t image_size = 32;
  std::size_t in_channels = 3;
  std::size_t patch = 4;
  std::vector<std::size_t> dims{32, 64, 96, 128};
  std::vector<std::size_t> depths{1, 1, 2, 1};
  std::size_t num_classes = 10;
  BlockConfig block;  // dim is replaced per stage

  void validate() const;
  static VisionConfig micro();
};

template <typename T>
struct VisionModel {
  VisionConfig config;
  Tensor<T> stem;                                  // (C p p, d1)
  std::vector<std::vector<BlockParams<T>>> stages;
  struct Merge {
    Tensor<T> gamma, beta, weight;                 // norm over 4D, (4D, D')
  };
  std::vector<Merge> merges;                       // between consecutive stages
  Tensor<T> norm_gamma, norm_beta;
  Tensor<T> head_weight, head_bias;                // (d4, classes), (classes)

  static VisionModel init(const VisionConfig& config, Rng& rng);
  ParamList<T> parameters() const;
  // images (B, C, H, W) -> logits (B, classes)
  Tensor<T> forward(const Tensor<T>& images, const ForwardContext& ctx) const;
};

struct ForecastConfig {
  std::size_t channels = 7;
  std::size_t lookback = 96;
  std::size_t horizon = 96;
  std::size_t depth = 2;
  BlockConfig block;

  void validate() const;
};

// The embedding sees the lookback centered on its per-channel mean; the last
// lookback value is added to the prediction, so an all-zero head forecasts
// persistence.
template <typename T>
struct ForecastModel {
  ForecastConfig config;
  Tensor<T> embed_weight, embed_bias;  // (C, D), (D)
  std::vector<BlockParams<T>> blocks;
  Tensor<T> norm_gamma, norm_beta;
  Tensor<T> proj_weight, proj_bias;    // (D, C), (C)
  Tensor<T> head_weight, head_bias;    // (L_in, T), (T)

  static ForecastModel init(const ForecastConfig& config, Rng& rng);
  ParamList<T> parameters() const;
  // series (B, L_in, C) -> (B, T, C)
  Tensor<T> forward(const Tensor<T>& series, const ForwardContext& ctx) const;
};

template <typename T>
std::size_t count_parameters(const ParamList<T>& params);

}  // namespace simba
