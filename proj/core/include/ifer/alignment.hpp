#pragma once

#include "ifer/types.hpp"

#include <torch/torch.h>

namespace ifer {

/// Batch-pairwise similarity distribution of one layer, [B, B - 1].
///
/// Each map is average-pooled to a vector; row a is the softmax over the dot
/// products with every other image b != a (columns keep batch order, skipping a).
torch::Tensor layer_distribution(const torch::Tensor& feats);

/// Mean over rows of KL(p_row || q_row); p and q are row-stochastic.
torch::Tensor kl_rows(const torch::Tensor& p, const torch::Tensor& q);

/// Sum over paired layers of KL(E_dis || G_dis). Layers are paired by
/// resolution; generator features are treated as constants.
torch::Tensor alignment_loss(const FeaturePyramid& encoder_pyramid, const FeaturePyramid& generator_pyramid);

}  // namespace ifer
