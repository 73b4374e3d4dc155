#pragma once

#include "ifer/types.hpp"

#include <torch/torch.h>

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace ifer {

/// Convolution with a per-sample, per-input-channel scaled kernel.
///
/// x is [B, Cin, H, W], weight [Cout, Cin, k, k], style [B, Cin] (or [Cin]).
/// With demodulation each output channel's modulated kernel is renormalized by
/// 1 / sqrt(sum w'^2 + eps). Padding keeps the spatial size.
torch::Tensor modulated_conv(const torch::Tensor& x, const torch::Tensor& weight, const torch::Tensor& style,
                             bool demodulate, double eps = 1e-8);

struct GeneratorConfig {
  int64_t resolution = 64;
  int64_t code_dim = 128;
  int64_t struct_dim = 128;
  int64_t z_dim = 128;
  int64_t mapping_layers = 4;
  std::vector<int64_t> channels{128, 64, 64, 32, 16};  // at 4, 8, ..., resolution
  std::vector<int64_t> feature_resolutions{4, 8, 16};

  /// 2 * log2(resolution) - 2 style inputs (one conv at 4x4, two per upsampling level, toRGB).
  int64_t n_layers() const;
  void validate() const;
  std::map<std::string, std::string> record() const;
};

/// Modulated convolution layer with its own learnable affine style map.
class ModulatedConvImpl : public torch::nn::Module {
 public:
  ModulatedConvImpl(int64_t in_channels, int64_t out_channels, int64_t kernel, int64_t code_dim, bool demodulate,
                    bool activate);

  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& code);

  torch::nn::Linear affine{nullptr};
  torch::Tensor weight;
  torch::Tensor bias;

 private:
  bool demodulate_;
  bool activate_;
  double gain_;
};
TORCH_MODULE(ModulatedConv);

/// z -> w MLP used to sample the generator during pretraining.
class MappingNetworkImpl : public torch::nn::Module {
 public:
  MappingNetworkImpl(int64_t z_dim, int64_t w_dim, int64_t layers);

  torch::Tensor forward(const torch::Tensor& z);

  /// Mean of m mapped samples drawn with the given seed.
  torch::Tensor mean_latent(int64_t m, uint64_t seed);

  int64_t z_dim() const { return z_dim_; }

 private:
  int64_t z_dim_;
  torch::nn::Sequential net_{nullptr};
};
TORCH_MODULE(MappingNetwork);

struct SynthesisTrace {
  torch::Tensor image;      // [B, 3, R, R] in [0, 1]
  FeaturePyramid features;  // coarse to fine
};

class ToyGeneratorImpl : public torch::nn::Module {
 public:
  explicit ToyGeneratorImpl(GeneratorConfig config = {});

  /// The structure code replaces the learned constant input.
  SynthesisTrace synthesize(const StructureCode& sc, const LatentCodes& codes);
  /// Starts from the learned constant (pretraining and sampling).
  SynthesisTrace synthesize_from_constant(const LatentCodes& codes);

  /// Broadcast z-space samples through the mapping network to all layers.
  LatentCodes sample_codes(const torch::Tensor& z);

  MappingNetwork mapping{nullptr};
  torch::Tensor constant_input;
  torch::Tensor w_avg;

  const GeneratorConfig& config() const { return config_; }

 private:
  SynthesisTrace run(const torch::Tensor& base, const LatentCodes& codes);

  GeneratorConfig config_;
  torch::nn::ModuleList layers_{nullptr};
  ModulatedConv to_rgb_{nullptr};
};
TORCH_MODULE(ToyGenerator);

/// Layers [0, crossover) from a, the rest from b.
LatentCodes style_mix(const LatentCodes& a, const LatentCodes& b, int64_t crossover);

}  // namespace ifer
