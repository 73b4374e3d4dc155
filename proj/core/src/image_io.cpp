#include "ifer/image_io.hpp"

#include "ifer/errors.hpp"

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

namespace ifer {

namespace {

cv::Mat to_bgr8(const torch::Tensor& image) {
  if (image.dim() != 3 || image.size(0) != 3) throw ShapeError("expected a [3, H, W] image");
  auto hwc = quantize8(image).mul(255.0).round().to(torch::kUInt8).permute({1, 2, 0}).contiguous();
  cv::Mat rgb(static_cast<int>(hwc.size(0)), static_cast<int>(hwc.size(1)), CV_8UC3, hwc.data_ptr());
  cv::Mat bgr;
  cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
  return bgr;
}

torch::Tensor from_bgr8(const cv::Mat& bgr) {
  cv::Mat rgb;
  cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
  auto t = torch::from_blob(rgb.data, {rgb.rows, rgb.cols, 3}, torch::kUInt8).clone();
  return t.permute({2, 0, 1}).to(torch::kFloat32).div(255.0).contiguous();
}

}  // namespace

torch::Tensor quantize8(const torch::Tensor& image) {
  return image.detach().to(torch::kCPU, torch::kFloat32).clamp(0.0, 1.0).mul(255.0).round().div(255.0);
}

torch::Tensor read_png(const std::filesystem::path& path, int64_t size) {
  cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) throw LoadError("cannot decode image " + path.string());
  if (size > 0 && (bgr.rows != size || bgr.cols != size)) {
    cv::Mat resized;
    cv::resize(bgr, resized, cv::Size(static_cast<int>(size), static_cast<int>(size)), 0, 0, cv::INTER_AREA);
    bgr = resized;
  }
  return from_bgr8(bgr);
}

void write_png(const std::filesystem::path& path, const torch::Tensor& image) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), to_bgr8(image))) throw LoadError("cannot write image " + path.string());
}

torch::Tensor panel_row(const std::vector<torch::Tensor>& panels) {
  if (panels.empty()) throw ShapeError("panel_row: no panels");
  std::vector<torch::Tensor> parts;
  for (const auto& p : panels) parts.push_back(p.detach().to(torch::kCPU, torch::kFloat32));
  return torch::cat(parts, 2);
}

torch::Tensor overlay_heatmap(const torch::Tensor& image, const torch::Tensor& heat, double alpha) {
  auto h8 = heat.detach().to(torch::kCPU, torch::kFloat32).clamp(0.0, 1.0).mul(255.0).round().to(torch::kUInt8).contiguous();
  cv::Mat gray(static_cast<int>(h8.size(0)), static_cast<int>(h8.size(1)), CV_8UC1, h8.data_ptr());
  cv::Mat colored;
  cv::applyColorMap(gray, colored, cv::COLORMAP_JET);
  cv::Mat base = to_bgr8(image);
  cv::Mat blended;
  cv::addWeighted(base, 1.0 - alpha, colored, alpha, 0.0, blended);
  return from_bgr8(blended);
}

}  // namespace ifer
