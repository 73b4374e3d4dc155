#pragma once

#include "ifer/types.hpp"

#include <torch/torch.h>

#include <array>
#include <map>
#include <string>

namespace ifer {

inline constexpr int64_t kNumExpressions = 7;

/// Which features reach the classifier.
enum class FusionMode {
  modulation,      // latent codes modulate a convolution over the structure code
  latents_only,    // mean-pooled latent codes
  structure_only,  // plain convolution over the structure code
};

std::string to_string(FusionMode mode);
FusionMode fusion_mode_from_string(const std::string& name);

struct FerHeadConfig {
  int64_t n_codes = 10;
  int64_t code_dim = 128;
  int64_t struct_dim = 128;
  int64_t mlp_dim = 128;
  int64_t fused_channels = 128;
  int64_t hidden = 64;
  FusionMode mode = FusionMode::modulation;

  std::map<std::string, std::string> record() const;
};

class FerHeadImpl : public torch::nn::Module {
 public:
  explicit FerHeadImpl(FerHeadConfig config = {});

  /// s = A(sum_l M_l(code_l)); the fusion kernel is modulated by s (with
  /// demodulation) and applied to the structure code. Returns [B, c_out, 4, 4].
  torch::Tensor modulate_fuse(const LatentCodes& codes, const StructureCode& sc);

  /// Summed per-layer MLP projections before the affine map, [B, mlp_dim].
  torch::Tensor summed_projection(const LatentCodes& codes);

  /// Fused features under the configured mode (the ablation paths bypass modulation).
  torch::Tensor fuse(const LatentCodes& codes, const StructureCode& sc);

  /// Global average pool, batch norm, MLP; unnormalized scores [B, 7].
  torch::Tensor logits(const torch::Tensor& fused);
  /// Softmax of logits; rows sum to one.
  torch::Tensor classify(const torch::Tensor& fused);

  /// End to end: codes and structure code to class probabilities.
  torch::Tensor forward(const LatentCodes& codes, const StructureCode& sc);

  /// Sets the batch-norm running statistics to the mean and unbiased variance of
  /// pooled fused features [N, c]. Run after training, once the encoder is final.
  void calibrate(const torch::Tensor& pooled);

  torch::nn::ModuleList code_mlps{nullptr};
  torch::nn::Linear affine{nullptr};
  torch::Tensor fusion_weight;
  torch::Tensor fusion_bias;
  torch::nn::Linear latent_proj{nullptr};
  torch::nn::Conv2d structure_conv{nullptr};
  torch::nn::Sequential classifier{nullptr};

  const FerHeadConfig& config() const { return config_; }

 private:
  FerHeadConfig config_;
};
TORCH_MODULE(FerHead);

/// -log p[label], batch mean. probs is [B, 7], labels [B] int64.
torch::Tensor fer_loss(const torch::Tensor& probs, const torch::Tensor& labels);

}  // namespace ifer
