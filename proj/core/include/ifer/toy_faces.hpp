#pragma once

#include <torch/torch.h>

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace ifer {

enum class Expression : int { neutral = 0, happy, sad, surprise, fear, disgust, anger };

inline constexpr std::array<const char*, 7> kExpressionNames{"neutral", "happy",   "sad",  "surprise",
                                                             "fear",    "disgust", "anger"};

std::string to_string(Expression e);
Expression expression_from_string(const std::string& name);

enum class Split { train, val, test };

std::string to_string(Split s);
Split split_from_string(const std::string& name);

/// Parameters of one procedural face. Positions are in pixels of a 64x64 canvas.
struct FaceParams {
  double cx = 32.0, cy = 33.0;  // face ellipse center, [26, 38]
  double ax = 19.0, ay = 23.0;  // half-axes, ax in [15, 22], ay in [19, 26]
  std::array<double, 3> skin{0.85, 0.68, 0.55};  // each in [0, 1]
  double eye_open = 0.5;        // [0, 1]
  double brow = 0.0;            // [-1, 1]; positive raises the inner ends
  double mouth_curve = 0.0;     // [-1, 1]; positive is a smile
  double mouth_open = 0.0;      // [0, 1]
  uint64_t jitter_seed = 0;

  void validate() const;
  bool operator==(const FaceParams&) const = default;
};

/// Deterministic region lookup; every valid parameter set maps to one class.
Expression expression_label(const FaceParams& p);

/// Anti-aliased 3x64x64 image in [0, 1]. The jitter seed perturbs colors and
/// positions without touching the label-defining parameters.
torch::Tensor render_face(const FaceParams& p);

/// Axis-aligned face bounding box [x0, y0, x1, y1] after jitter.
std::array<double, 4> face_box(const FaceParams& p);

struct FaceSample {
  torch::Tensor image;
  Expression label;
  FaceParams params;
};

/// Class-balanced parameter draws (sample i has class i mod 7). Jitter seeds
/// carry the split in their top bits, so splits never share a parameter set.
std::vector<FaceParams> sample_params(int64_t n, uint64_t seed, Split split);
std::vector<FaceSample> sample_dataset(int64_t n, uint64_t seed, Split split);

/// Stacks images to [n, 3, 64, 64] and labels to [n].
torch::Tensor stack_images(const std::vector<FaceSample>& samples);
torch::Tensor stack_labels(const std::vector<FaceSample>& samples);

uint64_t dataset_hash(const std::vector<FaceSample>& samples);

/// Writes img_NNNNN.png files plus manifest.csv (path, class, params).
void export_dataset(const std::vector<FaceSample>& samples, const std::filesystem::path& dir);

inline constexpr int64_t kFaceSize = 64;

}  // namespace ifer
