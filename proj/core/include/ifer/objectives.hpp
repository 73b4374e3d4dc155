#pragma once

#include "ifer/critic.hpp"
#include "ifer/types.hpp"

#include <torch/torch.h>

#include <string>
#include <utility>
#include <vector>

namespace ifer {

/// Mean squared error over all elements.
torch::Tensor pixel_loss(const torch::Tensor& x, const torch::Tensor& y);

/// 10 log10(1 / MSE) in dB, capped at 100 dB when MSE < 1e-10.
double psnr(const torch::Tensor& x, const torch::Tensor& y);
double psnr_from_mse(double mse);

/// SSIM with uniform 8x8 sliding windows, averaged over windows, channels and batch.
torch::Tensor ssim(const torch::Tensor& x, const torch::Tensor& y);

/// Frozen feature trunk standing in for LPIPS, identity/MoCo and FID networks.
/// Every number it produces is a proxy metric.
class PerceptualTrunk {
 public:
  explicit PerceptualTrunk(ConvTrunk trunk);

  /// Sum over trunk layers of the mean squared difference of channel-normalized
  /// features, averaged over the batch.
  torch::Tensor perceptual_distance(const torch::Tensor& x, const torch::Tensor& y);
  /// 1 - cos(embed(x), embed(y)), batch mean, in [0, 2].
  torch::Tensor consistency(const torch::Tensor& x, const torch::Tensor& y);
  torch::Tensor embed(const torch::Tensor& images);

  ConvTrunk& trunk() { return trunk_; }

 private:
  ConvTrunk trunk_;
};

/// 1 - cos(a, b) per row, batch mean.
torch::Tensor consistency_from_embeddings(const torch::Tensor& a, const torch::Tensor& b);

/// Mean over layers (and batch) of ||code_l - w_avg||^2.
torch::Tensor latent_reg(const LatentCodes& codes, const torch::Tensor& w_avg);

/// Frechet distance between Gaussians; square root via symmetric eigendecomposition.
double frechet_distance(const torch::Tensor& mu_a, const torch::Tensor& cov_a, const torch::Tensor& mu_b,
                        const torch::Tensor& cov_b);
/// Frechet distance of the Gaussian fits of two embedding sets ([n, d] each).
double frechet_from_embeddings(const torch::Tensor& a, const torch::Tensor& b);

/// Frechet distance of trunk embeddings; each set needs at least 32 images.
double fid_proxy(PerceptualTrunk& trunk, const torch::Tensor& set_a, const torch::Tensor& set_b);

inline constexpr int64_t kMinFidSetSize = 32;

struct LossWeights {
  double pixel = 0.8;
  double perceptual = 1.0;
  double consistency = 0.1;
  double latent_reg = 1e-4;
  double adversarial = 1e-3;
  double alignment = 1.0;

  void validate() const;
};

struct LossBreakdown {
  torch::Tensor total;  // differentiable
  double total_value = 0.0;
  double pixel = 0.0;
  double perceptual = 0.0;
  double consistency = 0.0;
  double latent_reg = 0.0;
  double adversarial = 0.0;
  double alignment = 0.0;

  std::vector<std::pair<std::string, double>> terms() const;
  /// Weighted sum of the reported terms.
  double recombine(const LossWeights& w) const;
};

struct InversionLossInputs {
  torch::Tensor x;  // source images
  torch::Tensor y;  // inversions
  LatentCodes codes;
  torch::Tensor w_avg;
  InversionCritic* critic = nullptr;
  uint64_t critic_seed = 0;
  const FeaturePyramid* encoder_pyramid = nullptr;
  const FeaturePyramid* generator_pyramid = nullptr;
};

/// Weighted composite of pixel, perceptual, consistency, latent regularization,
/// adversarial and alignment terms. Terms with zero weight are not evaluated.
LossBreakdown composite_inversion_loss(const InversionLossInputs& in, PerceptualTrunk& trunk,
                                       const LossWeights& weights);

}  // namespace ifer
