#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace ifer {

/// Stem convolution followed by strided 3x3 blocks; channels[0] is the stem width.
struct TrunkConfig {
  int64_t image_size = 64;
  std::vector<int64_t> channels{16, 32, 64, 128, 128};

  void validate() const;
  std::map<std::string, std::string> record(const std::string& prefix) const;
};

/// Convolutional feature trunk shared by the pretraining critic, the siamese
/// critic encoders and the proxy metrics.
class ConvTrunkImpl : public torch::nn::Module {
 public:
  explicit ConvTrunkImpl(TrunkConfig config = {});

  /// Outputs of every strided block, fine to coarse.
  std::vector<torch::Tensor> features(const torch::Tensor& images);
  /// Global average pool of the last block, [B, C_last].
  torch::Tensor embed(const torch::Tensor& images);

  int64_t out_channels() const { return config_.channels.back(); }
  const TrunkConfig& config() const { return config_; }

 private:
  TrunkConfig config_;
  torch::nn::Conv2d stem_{nullptr};
  torch::nn::ModuleList blocks_{nullptr};
};
TORCH_MODULE(ConvTrunk);

/// Least-squares patch critic used only for toy generator pretraining.
class PatchCriticImpl : public torch::nn::Module {
 public:
  explicit PatchCriticImpl(TrunkConfig config = {});
  torch::Tensor forward(const torch::Tensor& images);  // [B, 1, s, s]

  ConvTrunk trunk{nullptr};

 private:
  torch::nn::Conv2d head_{nullptr};
};
TORCH_MODULE(PatchCritic);

/// Trunk + global average pool + linear embedding.
class SiameseEncoderImpl : public torch::nn::Module {
 public:
  SiameseEncoderImpl(TrunkConfig config, int64_t embed_dim);
  torch::Tensor forward(const torch::Tensor& images);  // [B, embed_dim], unnormalized

  ConvTrunk trunk{nullptr};

 private:
  torch::nn::Linear head_{nullptr};
};
TORCH_MODULE(SiameseEncoder);

enum class AugStrength { strong, weak };

struct AugRange {
  double crop_min_scale = 1.0;  // side fraction kept, in (0, 1]
  double flip_prob = 0.0;
  double brightness = 0.0;      // additive offset drawn from [-b, b]
  double contrast = 0.0;        // gain drawn from [1 - c, 1 + c]
};

struct AugPolicy {
  AugRange strong{0.7, 0.5, 0.15, 0.25};
  AugRange weak{0.95, 0.0, 0.03, 0.05};

  static AugPolicy identity() { return {AugRange{}, AugRange{}}; }
  const AugRange& range(AugStrength s) const { return s == AugStrength::strong ? strong : weak; }
};

/// Deterministic per-image crop-resize, flip and brightness/contrast jitter.
/// Differentiable with respect to the input images.
torch::Tensor augment(const torch::Tensor& images, uint64_t seed, AugStrength strength,
                      const AugPolicy& policy = {});

/// theta_k <- a * theta_k + (1 - a) * theta_q for every parameter, matched by name.
void momentum_update(const torch::nn::Module& query, torch::nn::Module& key, double momentum);

struct CriticConfig {
  TrunkConfig trunk{};
  int64_t embed_dim = 128;
  double momentum = 0.999;
  AugPolicy policy{};

  std::map<std::string, std::string> record() const;
};

/// Siamese image-inversion critic: query encoder m_q, momentum encoder m_k.
class InversionCriticImpl : public torch::nn::Module {
 public:
  explicit InversionCriticImpl(CriticConfig config = {});

  /// cos(m_q(strong(img1)), m_k(weak(img2))) per batch element, in [-1, 1].
  /// The m_k path carries no gradient.
  torch::Tensor score(const torch::Tensor& img1, const torch::Tensor& img2, uint64_t seed);

  /// Copies m_q's parameters into m_k.
  void sync_key();
  /// Initializes both trunks from a pretrained trunk.
  void load_trunk(const ConvTrunk& trunk);
  /// Applies the configured momentum update to m_k.
  void update_key();

  SiameseEncoder query{nullptr};
  SiameseEncoder key{nullptr};

  const CriticConfig& config() const { return config_; }

 private:
  CriticConfig config_;
};
TORCH_MODULE(InversionCritic);

/// Cosine of L2-normalized embeddings, clamped to [-1, 1].
torch::Tensor cosine_score(const torch::Tensor& a, const torch::Tensor& b);

/// (D(x,x) - 1)^2 + (D(y,x) + 1)^2, batch mean.
torch::Tensor critic_loss_from_scores(const torch::Tensor& real_score, const torch::Tensor& fake_score);
/// (D(y,x) - 1)^2, batch mean.
torch::Tensor encoder_adv_loss_from_scores(const torch::Tensor& fake_score);

/// Critic objective; the inversion y is detached so only m_q receives gradients.
torch::Tensor critic_loss(InversionCritic& critic, const torch::Tensor& x, const torch::Tensor& y, uint64_t seed);
/// Encoder objective; gradients flow through y, the critic's parameters are frozen.
torch::Tensor encoder_adv_loss(InversionCritic& critic, const torch::Tensor& x, const torch::Tensor& y,
                               uint64_t seed);

}  // namespace ifer
