#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <vector>

// Slow, independent re-derivations used as test oracles. None of these call
// into the library's own implementations of the same quantity.
namespace ifer::testing {

/// theta_k after T momentum steps toward a constant theta_q.
double ema_closed_form(double theta_k, double theta_q, double a, int steps);

/// Per-sample loop: scale the kernel, optionally renormalize each output
/// channel, convolve with same padding.
torch::Tensor reference_modulated_conv(const torch::Tensor& x, const torch::Tensor& weight, const torch::Tensor& style,
                                       bool demodulate, double eps = 1e-8);

using Matrix = std::vector<std::vector<double>>;

/// Scalar-loop version of the batch-pairwise similarity distribution.
Matrix reference_layer_distribution(const torch::Tensor& feats);
/// Mean over rows of KL(p_row || q_row).
double reference_kl_rows(const Matrix& p, const Matrix& q);

/// Full self-attention over every position of a [B, C, H, W] map, computed
/// per image and head from the given projections.
torch::Tensor reference_full_attention(const torch::Tensor& x, const torch::Tensor& qkv_weight,
                                       const torch::Tensor& qkv_bias, const torch::Tensor& proj_weight,
                                       const torch::Tensor& proj_bias, int64_t heads);

/// SSIM with explicit loops over every 8x8 window (population statistics).
double reference_ssim(const torch::Tensor& x, const torch::Tensor& y);

/// Frechet distance between Gaussians with diagonal covariances.
double frechet_diagonal(const std::vector<double>& mu_a, const std::vector<double>& var_a,
                        const std::vector<double>& mu_b, const std::vector<double>& var_b);

}  // namespace ifer::testing
