#include "ifer/fer_head.hpp"

#include "ifer/errors.hpp"
#include "ifer/synthesis.hpp"

#include <cmath>

namespace ifer {

namespace F = torch::nn::functional;

namespace {

torch::Tensor lrelu(const torch::Tensor& x) {
  return F::leaky_relu(x, F::LeakyReLUFuncOptions().negative_slope(0.2));
}

}  // namespace

std::string to_string(FusionMode mode) {
  switch (mode) {
    case FusionMode::modulation: return "modulation";
    case FusionMode::latents_only: return "latents_only";
    case FusionMode::structure_only: return "structure_only";
  }
  return "unknown";
}

FusionMode fusion_mode_from_string(const std::string& name) {
  if (name == "modulation") return FusionMode::modulation;
  if (name == "latents_only") return FusionMode::latents_only;
  if (name == "structure_only") return FusionMode::structure_only;
  throw ConfigError("unknown fusion mode '" + name + "' (modulation, latents_only, structure_only)");
}

std::map<std::string, std::string> FerHeadConfig::record() const {
  return {
      {"fer.n_codes", std::to_string(n_codes)},       {"fer.code_dim", std::to_string(code_dim)},
      {"fer.struct_dim", std::to_string(struct_dim)}, {"fer.mlp_dim", std::to_string(mlp_dim)},
      {"fer.fused_channels", std::to_string(fused_channels)}, {"fer.hidden", std::to_string(hidden)},
      {"fer.mode", to_string(mode)},
  };
}

FerHeadImpl::FerHeadImpl(FerHeadConfig config) : config_(config) {
  const auto c = config_.fused_channels;
  switch (config_.mode) {
    case FusionMode::modulation:
      code_mlps = register_module("code_mlps", torch::nn::ModuleList());
      for (int64_t l = 0; l < config_.n_codes; ++l)
        code_mlps->push_back(torch::nn::Sequential(
            torch::nn::Linear(config_.code_dim, config_.mlp_dim),
            torch::nn::LeakyReLU(torch::nn::LeakyReLUOptions().negative_slope(0.2)),
            torch::nn::Linear(config_.mlp_dim, config_.mlp_dim)));
      affine = register_module("affine", torch::nn::Linear(config_.mlp_dim, config_.struct_dim));
      {
        torch::NoGradGuard no_grad;
        affine->bias.fill_(1.0);
      }
      fusion_weight = register_parameter("fusion_weight", torch::randn({c, config_.struct_dim, 3, 3}));
      fusion_bias = register_parameter("fusion_bias", torch::zeros({c}));
      break;
    case FusionMode::latents_only:
      latent_proj = register_module("latent_proj", torch::nn::Linear(config_.code_dim, c));
      break;
    case FusionMode::structure_only:
      structure_conv = register_module(
          "structure_conv", torch::nn::Conv2d(torch::nn::Conv2dOptions(config_.struct_dim, c, 3).padding(1)));
      break;
  }
  classifier = register_module(
      "classifier", torch::nn::Sequential(torch::nn::BatchNorm1d(c), torch::nn::Linear(c, config_.hidden),
                                          torch::nn::LeakyReLU(torch::nn::LeakyReLUOptions().negative_slope(0.2)),
                                          torch::nn::Linear(config_.hidden, kNumExpressions)));
}

torch::Tensor FerHeadImpl::summed_projection(const LatentCodes& codes) {
  if (codes.codes.dim() != 3 || codes.count() != config_.n_codes)
    throw ConfigError("feature modulation: expected " + std::to_string(config_.n_codes) + " latent codes, got " +
                      std::to_string(codes.codes.dim() == 3 ? codes.count() : -1));
  torch::Tensor sum;
  for (int64_t l = 0; l < config_.n_codes; ++l) {
    auto p = code_mlps[l]->as<torch::nn::Sequential>()->forward(codes.layer(l));
    sum = sum.defined() ? sum + p : p;
  }
  return sum;
}

torch::Tensor FerHeadImpl::modulate_fuse(const LatentCodes& codes, const StructureCode& sc) {
  if (config_.mode != FusionMode::modulation)
    throw ConfigError("modulate_fuse: head was built for mode " + to_string(config_.mode));
  sc.validate(config_.struct_dim, sc.data.size(-1));
  auto style = affine(summed_projection(codes));
  const double gain = 1.0 / std::sqrt(double(config_.struct_dim * 9));
  auto out = modulated_conv(sc.data, fusion_weight * gain, style, true) + fusion_bias.view({1, -1, 1, 1});
  return lrelu(out);
}

torch::Tensor FerHeadImpl::fuse(const LatentCodes& codes, const StructureCode& sc) {
  switch (config_.mode) {
    case FusionMode::modulation: return modulate_fuse(codes, sc);
    case FusionMode::latents_only: {
      if (codes.count() != config_.n_codes)
        throw ConfigError("latents-only path: expected " + std::to_string(config_.n_codes) + " latent codes");
      return lrelu(latent_proj(codes.codes.mean(1))).unsqueeze(-1).unsqueeze(-1);
    }
    case FusionMode::structure_only: return lrelu(structure_conv(sc.data));
  }
  throw ConfigError("unreachable fusion mode");
}

torch::Tensor FerHeadImpl::logits(const torch::Tensor& fused) { return classifier->forward(fused.mean({2, 3})); }

torch::Tensor FerHeadImpl::classify(const torch::Tensor& fused) { return torch::softmax(logits(fused), -1); }

torch::Tensor FerHeadImpl::forward(const LatentCodes& codes, const StructureCode& sc) {
  return classify(fuse(codes, sc));
}

void FerHeadImpl::calibrate(const torch::Tensor& pooled) {
  if (pooled.dim() != 2 || pooled.size(1) != config_.fused_channels || pooled.size(0) < 2)
    throw ShapeError("calibrate: expected [N >= 2, " + std::to_string(config_.fused_channels) + "] pooled features");
  torch::NoGradGuard no_grad;
  auto bn = classifier[0]->as<torch::nn::BatchNorm1d>();
  bn->running_mean.copy_(pooled.mean(0));
  bn->running_var.copy_(pooled.var(0));
}

torch::Tensor fer_loss(const torch::Tensor& probs, const torch::Tensor& labels) {
  if (probs.dim() != 2 || probs.size(1) != kNumExpressions)
    throw ShapeError("fer_loss: expected [B, 7] probabilities");
  if (labels.numel() != probs.size(0)) throw ShapeError("fer_loss: one label per row required");
  auto lab = labels.to(torch::kLong).reshape({-1});
  if (lab.numel() > 0 && (lab.min().item<int64_t>() < 0 || lab.max().item<int64_t>() >= kNumExpressions))
    throw ValidationError("fer_loss: labels must be in [0, 6]");
  auto picked = probs.gather(1, lab.unsqueeze(1)).squeeze(1);
  return -picked.clamp_min(1e-30).log().mean();
}

}  // namespace ifer
