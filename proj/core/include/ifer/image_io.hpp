#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <vector>

namespace ifer {

/// Reads an 8-bit image as [3, size, size] RGB in [0, 1], resizing if needed;
/// size <= 0 keeps the stored dimensions.
/// Throws LoadError if the file cannot be decoded.
torch::Tensor read_png(const std::filesystem::path& path, int64_t size);

/// Writes a [3, H, W] tensor in [0, 1] as 8-bit RGB PNG.
void write_png(const std::filesystem::path& path, const torch::Tensor& image);

/// Concatenates [3, H, W] panels left to right.
torch::Tensor panel_row(const std::vector<torch::Tensor>& panels);

/// Blends a JET-colored heatmap ([H, W] in [0, 1]) over an image.
torch::Tensor overlay_heatmap(const torch::Tensor& image, const torch::Tensor& heat, double alpha = 0.5);

/// Quantizes to 8 bits and back, matching what a PNG round trip yields.
torch::Tensor quantize8(const torch::Tensor& image);

}  // namespace ifer
