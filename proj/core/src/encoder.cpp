#include "ifer/encoder.hpp"

#include "ifer/errors.hpp"
#include "ifer/util.hpp"

#include <cmath>

namespace ifer {

namespace F = torch::nn::functional;

std::array<int64_t, 4> EncoderConfig::stage_sides() const {
  const int64_t s0 = image_size / patch_size;
  return {s0, s0 / 2, s0 / 4, s0 / 4};
}

void EncoderConfig::validate() const {
  if (patch_size <= 0 || image_size % patch_size != 0)
    throw ConfigError("encoder: patch size " + std::to_string(patch_size) + " does not divide image size " +
                      std::to_string(image_size));
  const auto sides = stage_sides();
  if (!is_power_of_two(sides[0]) || sides[2] < 1)
    throw ConfigError("encoder: first stage side " + std::to_string(sides[0]) +
                      " must be a power of two of at least 4");
  if (window < 1) throw ConfigError("encoder: window must be >= 1");
  for (int i = 0; i < 4; ++i) {
    const int64_t w = std::min(window, sides[i]);
    if (sides[i] % w != 0)
      throw ConfigError("encoder: window " + std::to_string(w) + " does not divide stage side " +
                        std::to_string(sides[i]));
    if (widths[i] % heads[i] != 0)
      throw ConfigError("encoder: width " + std::to_string(widths[i]) + " not divisible by " +
                        std::to_string(heads[i]) + " heads");
  }
  if (code_split[0] + code_split[1] + code_split[2] != n_codes)
    throw ConfigError("encoder: code split " + std::to_string(code_split[0]) + "/" +
                      std::to_string(code_split[1]) + "/" + std::to_string(code_split[2]) +
                      " does not sum to " + std::to_string(n_codes));
}

std::map<std::string, std::string> EncoderConfig::record() const {
  return {
      {"encoder.image_size", std::to_string(image_size)},
      {"encoder.patch_size", std::to_string(patch_size)},
      {"encoder.widths", join({widths.begin(), widths.end()})},
      {"encoder.heads", join({heads.begin(), heads.end()})},
      {"encoder.window", std::to_string(window)},
      {"encoder.mlp_ratio", std::to_string(mlp_ratio)},
      {"encoder.n_codes", std::to_string(n_codes)},
      {"encoder.code_dim", std::to_string(code_dim)},
      {"encoder.code_split", join({code_split.begin(), code_split.end()})},
      {"encoder.struct_dim", std::to_string(struct_dim)},
  };
}

torch::Tensor partition_windows(const torch::Tensor& x, int64_t window) {
  const auto B = x.size(0), C = x.size(1), H = x.size(2), W = x.size(3);
  return x.reshape({B, C, H / window, window, W / window, window})
      .permute({0, 2, 4, 3, 5, 1})
      .reshape({B * (H / window) * (W / window), window * window, C});
}

torch::Tensor merge_windows(const torch::Tensor& tokens, int64_t batch, int64_t height, int64_t width,
                            int64_t window) {
  const auto C = tokens.size(-1);
  return tokens.reshape({batch, height / window, width / window, window, window, C})
      .permute({0, 5, 1, 3, 2, 4})
      .reshape({batch, C, height, width});
}

WindowAttentionImpl::WindowAttentionImpl(int64_t dim, int64_t heads) : dim_(dim), heads_(heads) {
  qkv = register_module("qkv", torch::nn::Linear(dim, 3 * dim));
  proj = register_module("proj", torch::nn::Linear(dim, dim));
}

torch::Tensor WindowAttentionImpl::forward(const torch::Tensor& x, int64_t window) {
  return forward_with_weights(x, window).output;
}

AttentionResult WindowAttentionImpl::forward_with_weights(const torch::Tensor& x, int64_t window) {
  check_feature_map(x, "window_attention input");
  const auto B = x.size(0), H = x.size(2), W = x.size(3);
  if (window < 1 || H % window != 0 || W % window != 0)
    throw ShapeError("window_attention: window " + std::to_string(window) + " does not divide feature map side " +
                     std::to_string(H));
  if (x.size(1) != dim_)
    throw ShapeError("window_attention: expected " + std::to_string(dim_) + " channels, got " +
                     std::to_string(x.size(1)));

  auto tokens = partition_windows(x, window);  // [N, T, C]
  const auto N = tokens.size(0), T = tokens.size(1);
  const auto head_dim = dim_ / heads_;
  auto qkv_t = qkv(tokens).reshape({N, T, 3, heads_, head_dim}).permute({2, 0, 3, 1, 4});
  auto q = qkv_t[0], k = qkv_t[1], v = qkv_t[2];
  auto weights = torch::softmax(torch::matmul(q, k.transpose(-2, -1)) / std::sqrt(double(head_dim)), -1);
  auto out = torch::matmul(weights, v).transpose(1, 2).reshape({N, T, dim_});
  out = proj(out);
  return {merge_windows(out, B, H, W, window), weights};
}

AttentionBlockImpl::AttentionBlockImpl(int64_t dim, int64_t heads, int64_t mlp_ratio) {
  norm1_ = register_module("norm1", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim})));
  attn_ = register_module("attn", WindowAttention(dim, heads));
  norm2_ = register_module("norm2", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim})));
  mlp_ = register_module("mlp", torch::nn::Sequential(torch::nn::Linear(dim, dim * mlp_ratio), torch::nn::GELU(),
                                                      torch::nn::Linear(dim * mlp_ratio, dim)));
}

torch::Tensor AttentionBlockImpl::forward(const torch::Tensor& x, int64_t window) {
  return forward_with_weights(x, window).output;
}

AttentionResult AttentionBlockImpl::forward_with_weights(const torch::Tensor& x, int64_t window) {
  auto normed = norm1_(x.permute({0, 2, 3, 1})).permute({0, 3, 1, 2});
  auto attended = attn_->forward_with_weights(normed, window);
  auto h = (x + attended.output).permute({0, 2, 3, 1});
  h = h + mlp_->forward(norm2_(h));
  return {h.permute({0, 3, 1, 2}).contiguous(), attended.weights};
}

LocalToGlobalBranchImpl::LocalToGlobalBranchImpl(int64_t dim, int64_t heads, int64_t side, int64_t window, int64_t k,
                                                 int64_t code_dim, int64_t mlp_ratio)
    : side_(side), window_(window), k_(k), code_dim_(code_dim) {
  if (window < 1 || side < window)
    throw ConfigError("local_to_global_branch: feature map side " + std::to_string(side) +
                      " is smaller than window " + std::to_string(window));
  if (side % window != 0 || !is_power_of_two(side / window))
    throw ConfigError("local_to_global_branch: side " + std::to_string(side) + " is not window " +
                      std::to_string(window) + " times a power of two");
  pool_steps_ = ilog2(side / window);
  local_ = register_module("local", torch::nn::ModuleList());
  for (int64_t i = 0; i < pool_steps_; ++i) local_->push_back(AttentionBlock(dim, heads, mlp_ratio));
  global_ = register_module("global", AttentionBlock(dim, heads, mlp_ratio));
  to_codes_ = register_module("to_codes", torch::nn::Linear(window * window * dim, k * code_dim));
}

torch::Tensor LocalToGlobalBranchImpl::forward(const torch::Tensor& fm) {
  if (fm.size(-1) != side_)
    throw ConfigError("local_to_global_branch: expected side " + std::to_string(side_) + ", got " +
                      std::to_string(fm.size(-1)));
  auto x = fm;
  for (const auto& block : *local_) {
    x = block->as<AttentionBlock>()->forward(x, window_);
    x = F::max_pool2d(x, F::MaxPool2dFuncOptions(2));
  }
  x = global_->forward(x, window_);
  return to_codes_(x.flatten(1)).reshape({fm.size(0), k_, code_dim_});
}

AsitEncoderImpl::AsitEncoderImpl(EncoderConfig config) : config_(config) {
  config_.validate();
  const auto& w = config_.widths;
  const auto sides = config_.stage_sides();
  patch_embed_ = register_module(
      "patch_embed",
      torch::nn::Conv2d(torch::nn::Conv2dOptions(3, w[0], config_.patch_size).stride(config_.patch_size)));
  pos_embed_ = register_parameter("pos_embed", torch::randn({1, w[0], sides[0], sides[0]}) * 0.02);
  for (int i = 0; i < 4; ++i)
    stages_.push_back(register_module("stage" + std::to_string(i + 1),
                                      AttentionBlock(w[i], config_.heads[i], config_.mlp_ratio)));
  down1_ = register_module("down1", torch::nn::Conv2d(torch::nn::Conv2dOptions(w[0], w[1], 2).stride(2)));
  down2_ = register_module("down2", torch::nn::Conv2d(torch::nn::Conv2dOptions(w[1], w[2], 2).stride(2)));
  if (w[2] != w[3]) stage4_proj_ = register_module("stage4_proj", torch::nn::Conv2d(w[2], w[3], 1));

  const auto win = [&](int i) { return std::min(config_.window, sides[i]); };
  const auto& split = config_.code_split;
  coarse_ = register_module("coarse", LocalToGlobalBranch(w[3], config_.heads[3], sides[3], win(3), split[0],
                                                          config_.code_dim, config_.mlp_ratio));
  medium_ = register_module("medium", LocalToGlobalBranch(w[2], config_.heads[2], sides[2], win(2), split[1],
                                                          config_.code_dim, config_.mlp_ratio));
  fine_ = register_module("fine", LocalToGlobalBranch(w[1], config_.heads[1], sides[1], win(1), split[2],
                                                      config_.code_dim, config_.mlp_ratio));
  structure_proj_ = register_module("structure_proj", torch::nn::Conv2d(w[3], config_.struct_dim, 1));
  latent_offset_ = register_buffer("latent_offset", torch::zeros({config_.code_dim}));
}

void AsitEncoderImpl::set_latent_offset(const torch::Tensor& w_avg) {
  if (w_avg.numel() != config_.code_dim)
    throw ShapeError("latent offset must have " + std::to_string(config_.code_dim) + " entries");
  torch::NoGradGuard no_grad;
  latent_offset_.copy_(w_avg.reshape({config_.code_dim}));
}

EncoderOutput AsitEncoderImpl::forward(const torch::Tensor& images) { return run(images, nullptr); }

std::pair<EncoderOutput, torch::Tensor> AsitEncoderImpl::forward_with_attention(const torch::Tensor& images) {
  torch::Tensor attention;
  auto out = run(images, &attention);
  return {std::move(out), attention};
}

EncoderOutput AsitEncoderImpl::run(const torch::Tensor& images, torch::Tensor* last_attention) {
  const auto S = config_.image_size;
  if (images.dim() != 4 || images.size(1) != 3 || images.size(2) != S || images.size(3) != S)
    throw ShapeError("encode: expected images of shape [B, 3, " + std::to_string(S) + ", " + std::to_string(S) +
                     "], got " + c10::str(images.sizes()));
  check_finite(images, "encode input");

  const auto sides = config_.stage_sides();
  const auto win = [&](int i) { return std::min(config_.window, sides[i]); };

  auto x = patch_embed_(images) + pos_embed_;
  auto f1 = stages_[0]->forward(x, win(0));
  auto f2 = stages_[1]->forward(down1_(f1), win(1));
  auto f3 = stages_[2]->forward(down2_(f2), win(2));
  auto f4_in = stage4_proj_ ? stage4_proj_(f3) : f3;
  auto last = stages_[3]->forward_with_weights(f4_in, sides[3]);  // full attention
  auto f4 = last.output;
  if (last_attention) *last_attention = last.weights;

  auto codes = torch::cat({coarse_(f4), medium_(f3), fine_(f2)}, 1) + latent_offset_;

  EncoderOutput out;
  out.codes = LatentCodes{codes, Provenance::encoder};
  out.structure = StructureCode{structure_proj_(f4)};
  out.pyramid.maps = {f1, f2, f4};
  return out;
}

torch::Tensor normalize_heatmap(const torch::Tensor& raw) {
  auto flat = raw.flatten(1);
  auto lo = std::get<0>(flat.min(1, true));
  auto hi = std::get<0>(flat.max(1, true));
  auto range = hi - lo;
  auto degenerate = range < 1e-12;
  auto normalized = (flat - lo) / torch::where(degenerate, torch::ones_like(range), range);
  normalized = torch::where(degenerate, torch::zeros_like(normalized), normalized).clamp(0.0, 1.0);
  return normalized.reshape(raw.sizes());
}

torch::Tensor attention_map(AsitEncoder& encoder, const torch::Tensor& images) {
  torch::NoGradGuard no_grad;
  auto [out, weights] = encoder->forward_with_attention(images);
  const auto B = images.size(0);
  const auto side = encoder->config().stage_sides()[3];
  // Last stage attends over the whole map: one window per image.
  auto received = weights.mean(1).mean(1);  // [B, T]
  auto grid = received.reshape({B, 1, side, side});
  auto up = F::interpolate(grid, F::InterpolateFuncOptions()
                                     .size(std::vector<int64_t>{images.size(2), images.size(3)})
                                     .mode(torch::kBilinear)
                                     .align_corners(false));
  return normalize_heatmap(up.squeeze(1));
}

}  // namespace ifer
