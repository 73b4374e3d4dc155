#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <string>
#include <vector>

namespace ifer {

enum class Provenance { encoder, sampled, mixed };

std::string to_string(Provenance p);

/// Per-layer style vectors, batch-first: codes is [B, N, d].
struct LatentCodes {
  torch::Tensor codes;
  Provenance provenance = Provenance::encoder;

  int64_t batch() const { return codes.size(0); }
  int64_t count() const { return codes.size(1); }
  int64_t dim() const { return codes.size(2); }

  /// Layer l across the batch, [B, d].
  torch::Tensor layer(int64_t l) const { return codes.select(1, l); }

  void validate() const;
};

/// Spatial code that replaces the generator's learned constant, [B, d_s, 4, 4].
struct StructureCode {
  torch::Tensor data;

  void validate(int64_t expected_channels, int64_t expected_side) const;
};

/// Intermediate feature maps [B, C, r, r], one per aligned layer.
struct FeaturePyramid {
  std::vector<torch::Tensor> maps;

  std::size_t size() const { return maps.size(); }
  std::vector<int64_t> resolutions() const;
  FeaturePyramid detached() const;
};

/// Throws ShapeError unless t is [B, C, S, S] with S a power of two.
void check_feature_map(const torch::Tensor& t, const std::string& what);

/// Throws ValidationError if any element is NaN or infinite.
void check_finite(const torch::Tensor& t, const std::string& what);

}  // namespace ifer
