#include "ifer/types.hpp"

#include "ifer/errors.hpp"
#include "ifer/util.hpp"

namespace ifer {

std::string to_string(Provenance p) {
  switch (p) {
    case Provenance::encoder: return "encoder";
    case Provenance::sampled: return "sampled";
    case Provenance::mixed: return "mixed";
  }
  return "unknown";
}

void LatentCodes::validate() const {
  if (!codes.defined() || codes.dim() != 3)
    throw ShapeError("latent codes must be [B, N, d]");
  check_finite(codes, "latent codes");
}

void StructureCode::validate(int64_t expected_channels, int64_t expected_side) const {
  if (!data.defined() || data.dim() != 4 || data.size(1) != expected_channels ||
      data.size(2) != expected_side || data.size(3) != expected_side) {
    throw ShapeError("structure code must be [B, " + std::to_string(expected_channels) + ", " +
                     std::to_string(expected_side) + ", " + std::to_string(expected_side) + "]");
  }
}

std::vector<int64_t> FeaturePyramid::resolutions() const {
  std::vector<int64_t> out;
  out.reserve(maps.size());
  for (const auto& m : maps) out.push_back(m.size(-1));
  return out;
}

FeaturePyramid FeaturePyramid::detached() const {
  FeaturePyramid out;
  for (const auto& m : maps) out.maps.push_back(m.detach());
  return out;
}

void check_feature_map(const torch::Tensor& t, const std::string& what) {
  if (!t.defined() || t.dim() != 4)
    throw ShapeError(what + ": expected a [B, C, H, W] feature map");
  if (t.size(2) != t.size(3) || !is_power_of_two(t.size(2)))
    throw ShapeError(what + ": feature map must be square with power-of-two side, got " +
                     std::to_string(t.size(2)) + "x" + std::to_string(t.size(3)));
}

void check_finite(const torch::Tensor& t, const std::string& what) {
  if (!torch::isfinite(t).all().item<bool>())
    throw ValidationError(what + " contains NaN or infinite values");
}

}  // namespace ifer
