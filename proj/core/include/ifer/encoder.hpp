#pragma once

#include "ifer/types.hpp"

#include <torch/torch.h>

#include <array>
#include <map>
#include <string>

namespace ifer {

/// Architecture of the staged window/global attention encoder.
///
/// Stage sides are image_size / patch_size, then /2, /2, and the last stage keeps
/// the side of the third. The three deepest stages feed the fine, medium and
/// coarse latent branches; the last stage is also projected into the structure code.
struct EncoderConfig {
  int64_t image_size = 64;
  int64_t patch_size = 4;
  std::array<int64_t, 4> widths{32, 64, 128, 128};
  std::array<int64_t, 4> heads{1, 2, 4, 4};
  int64_t window = 4;
  int64_t mlp_ratio = 2;
  int64_t n_codes = 10;
  int64_t code_dim = 128;
  std::array<int64_t, 3> code_split{3, 4, 3};  // coarse, medium, fine
  int64_t struct_dim = 128;

  std::array<int64_t, 4> stage_sides() const;
  void validate() const;
  std::map<std::string, std::string> record() const;
};

struct AttentionResult {
  torch::Tensor output;   // [B, C, H, W]
  torch::Tensor weights;  // [B * windows, heads, T, T]
};

/// Multi-head self-attention restricted to non-overlapping square windows.
class WindowAttentionImpl : public torch::nn::Module {
 public:
  WindowAttentionImpl(int64_t dim, int64_t heads);

  torch::Tensor forward(const torch::Tensor& x, int64_t window);
  AttentionResult forward_with_weights(const torch::Tensor& x, int64_t window);

  torch::nn::Linear qkv{nullptr};
  torch::nn::Linear proj{nullptr};

 private:
  int64_t dim_;
  int64_t heads_;
};
TORCH_MODULE(WindowAttention);

/// [B, C, H, W] -> [B * windows, window * window, C], row-major windows.
torch::Tensor partition_windows(const torch::Tensor& x, int64_t window);
/// Inverse of partition_windows.
torch::Tensor merge_windows(const torch::Tensor& tokens, int64_t batch, int64_t height, int64_t width,
                            int64_t window);

/// Pre-norm transformer block whose attention is windowed.
class AttentionBlockImpl : public torch::nn::Module {
 public:
  AttentionBlockImpl(int64_t dim, int64_t heads, int64_t mlp_ratio);

  torch::Tensor forward(const torch::Tensor& x, int64_t window);
  AttentionResult forward_with_weights(const torch::Tensor& x, int64_t window);

 private:
  torch::nn::LayerNorm norm1_{nullptr}, norm2_{nullptr};
  WindowAttention attn_{nullptr};
  torch::nn::Sequential mlp_{nullptr};
};
TORCH_MODULE(AttentionBlock);

/// Window attention and 2x max-pool alternate until the map side equals the
/// window; a final full attention is then projected to k latent vectors.
class LocalToGlobalBranchImpl : public torch::nn::Module {
 public:
  LocalToGlobalBranchImpl(int64_t dim, int64_t heads, int64_t side, int64_t window, int64_t k,
                          int64_t code_dim, int64_t mlp_ratio = 2);

  /// Returns [B, k, code_dim].
  torch::Tensor forward(const torch::Tensor& fm);

  int64_t pool_steps() const { return pool_steps_; }

 private:
  int64_t side_, window_, k_, code_dim_, pool_steps_;
  torch::nn::ModuleList local_{nullptr};
  AttentionBlock global_{nullptr};
  torch::nn::Linear to_codes_{nullptr};
};
TORCH_MODULE(LocalToGlobalBranch);

struct EncoderOutput {
  LatentCodes codes;
  StructureCode structure;
  FeaturePyramid pyramid;  // stage maps, fine to coarse (16, 8, 4 at desk scale)
};

class AsitEncoderImpl : public torch::nn::Module {
 public:
  explicit AsitEncoderImpl(EncoderConfig config = {});

  /// Validates the input and runs the encoder. Images are [B, 3, S, S] in [0, 1].
  EncoderOutput forward(const torch::Tensor& images);

  /// Same as forward, also returning the last stage's attention weights.
  std::pair<EncoderOutput, torch::Tensor> forward_with_attention(const torch::Tensor& images);

  /// Sets the vector added to every emitted code (the generator's mean latent).
  void set_latent_offset(const torch::Tensor& w_avg);

  const EncoderConfig& config() const { return config_; }

 private:
  EncoderOutput run(const torch::Tensor& images, torch::Tensor* last_attention);

  EncoderConfig config_;
  torch::nn::Conv2d patch_embed_{nullptr};
  torch::Tensor pos_embed_;
  std::vector<AttentionBlock> stages_;
  torch::nn::Conv2d down1_{nullptr}, down2_{nullptr}, stage4_proj_{nullptr};
  LocalToGlobalBranch coarse_{nullptr}, medium_{nullptr}, fine_{nullptr};
  torch::nn::Conv2d structure_proj_{nullptr};
  torch::Tensor latent_offset_;
};
TORCH_MODULE(AsitEncoder);

/// Received-attention heatmap per image, [B, S, S] in [0, 1].
///
/// Attention of the last stage is averaged over heads and queries, laid out on
/// the stage grid, upsampled to the image size and min-max normalized.
torch::Tensor attention_map(AsitEncoder& encoder, const torch::Tensor& images);

/// Min-max normalizes each [H, W] slice; slices with a degenerate range become zeros.
torch::Tensor normalize_heatmap(const torch::Tensor& raw);

}  // namespace ifer
