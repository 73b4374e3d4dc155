#include "ifer/synthesis.hpp"

#include "ifer/errors.hpp"
#include "ifer/util.hpp"

#include <cmath>

namespace ifer {

namespace F = torch::nn::functional;

torch::Tensor modulated_conv(const torch::Tensor& x, const torch::Tensor& weight, const torch::Tensor& style,
                             bool demodulate, double eps) {
  if (weight.dim() != 4) throw ShapeError("modulated_conv: kernel must be [out, in, k, k]");
  const auto in_channels = weight.size(1);
  if (x.dim() != 4 || x.size(1) != in_channels)
    throw ShapeError("modulated_conv: input has " + std::to_string(x.dim() == 4 ? x.size(1) : -1) +
                     " channels, kernel expects " + std::to_string(in_channels));
  auto s = style.dim() == 1 ? style.unsqueeze(0).expand({x.size(0), style.size(0)}) : style;
  if (s.dim() != 2 || s.size(1) != in_channels || s.size(0) != x.size(0))
    throw ShapeError("modulated_conv: style length " + std::to_string(style.size(-1)) +
                     " does not match kernel in-channels " + std::to_string(in_channels));

  // Scaling the input per channel is the same as scaling the kernel per in-channel.
  auto out = F::conv2d(x * s.unsqueeze(-1).unsqueeze(-1), weight,
                       F::Conv2dFuncOptions().padding(weight.size(2) / 2));
  if (demodulate) {
    auto w_sq = weight.pow(2).sum({2, 3});                        // [Cout, Cin]
    auto demod = torch::rsqrt(torch::matmul(s.pow(2), w_sq.t()) + eps);  // [B, Cout]
    out = out * demod.unsqueeze(-1).unsqueeze(-1);
  }
  return out;
}

int64_t GeneratorConfig::n_layers() const { return 2 * ilog2(resolution) - 2; }

void GeneratorConfig::validate() const {
  if (!is_power_of_two(resolution) || resolution < 8)
    throw ConfigError("generator: resolution must be a power of two >= 8");
  const auto levels = ilog2(resolution) - 1;  // 4, 8, ..., resolution
  if (static_cast<int64_t>(channels.size()) != levels)
    throw ConfigError("generator: expected " + std::to_string(levels) + " channel widths for resolution " +
                      std::to_string(resolution) + ", got " + std::to_string(channels.size()));
  for (auto r : feature_resolutions)
    if (!is_power_of_two(r) || r < 4 || r > resolution)
      throw ConfigError("generator: feature resolution " + std::to_string(r) + " out of range");
}

std::map<std::string, std::string> GeneratorConfig::record() const {
  return {
      {"generator.resolution", std::to_string(resolution)},
      {"generator.code_dim", std::to_string(code_dim)},
      {"generator.struct_dim", std::to_string(struct_dim)},
      {"generator.z_dim", std::to_string(z_dim)},
      {"generator.mapping_layers", std::to_string(mapping_layers)},
      {"generator.channels", join(channels)},
      {"generator.feature_resolutions", join(feature_resolutions)},
  };
}

ModulatedConvImpl::ModulatedConvImpl(int64_t in_channels, int64_t out_channels, int64_t kernel, int64_t code_dim,
                                     bool demodulate, bool activate)
    : demodulate_(demodulate), activate_(activate) {
  gain_ = 1.0 / std::sqrt(double(in_channels * kernel * kernel));
  affine = register_module("affine", torch::nn::Linear(code_dim, in_channels));
  {
    torch::NoGradGuard no_grad;
    affine->bias.fill_(1.0);
  }
  weight = register_parameter("weight", torch::randn({out_channels, in_channels, kernel, kernel}));
  bias = register_parameter("bias", torch::zeros({out_channels}));
}

torch::Tensor ModulatedConvImpl::forward(const torch::Tensor& x, const torch::Tensor& code) {
  auto style = affine(code);
  auto out = modulated_conv(x, weight * gain_, style, demodulate_) + bias.view({1, -1, 1, 1});
  if (activate_) out = F::leaky_relu(out, F::LeakyReLUFuncOptions().negative_slope(0.2)) * std::sqrt(2.0);
  return out;
}

MappingNetworkImpl::MappingNetworkImpl(int64_t z_dim, int64_t w_dim, int64_t layers) : z_dim_(z_dim) {
  net_ = register_module("net", torch::nn::Sequential());
  for (int64_t i = 0; i < layers; ++i) {
    net_->push_back(torch::nn::Linear(i == 0 ? z_dim : w_dim, w_dim));
    net_->push_back(torch::nn::LeakyReLU(torch::nn::LeakyReLUOptions().negative_slope(0.2)));
  }
}

torch::Tensor MappingNetworkImpl::forward(const torch::Tensor& z) {
  auto normed = z * torch::rsqrt(z.pow(2).mean(-1, true) + 1e-8);
  return net_->forward(normed);
}

torch::Tensor MappingNetworkImpl::mean_latent(int64_t m, uint64_t seed) {
  if (m <= 0) throw ValidationError("mean_latent: sample count must be >= 1, got " + std::to_string(m));
  torch::NoGradGuard no_grad;
  auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
  const auto options = parameters().front().options();
  torch::Tensor sum;
  constexpr int64_t kChunk = 4096;
  for (int64_t done = 0; done < m; done += kChunk) {
    const auto n = std::min(kChunk, m - done);
    auto z = torch::randn({n, z_dim_}, gen, options);
    auto part = forward(z).to(torch::kFloat64).sum(0);
    sum = sum.defined() ? sum + part : part;
  }
  return (sum / double(m)).to(options.dtype());
}

ToyGeneratorImpl::ToyGeneratorImpl(GeneratorConfig config) : config_(std::move(config)) {
  config_.validate();
  const auto& ch = config_.channels;
  mapping = register_module("mapping", MappingNetwork(config_.z_dim, config_.code_dim, config_.mapping_layers));
  constant_input = register_parameter("constant_input", torch::randn({1, config_.struct_dim, 4, 4}));
  w_avg = register_buffer("w_avg", torch::zeros({config_.code_dim}));
  layers_ = register_module("layers", torch::nn::ModuleList());
  layers_->push_back(ModulatedConv(config_.struct_dim, ch[0], 3, config_.code_dim, true, true));
  for (std::size_t level = 1; level < ch.size(); ++level) {
    layers_->push_back(ModulatedConv(ch[level - 1], ch[level], 3, config_.code_dim, true, true));
    layers_->push_back(ModulatedConv(ch[level], ch[level], 3, config_.code_dim, true, true));
  }
  to_rgb_ = register_module("to_rgb", ModulatedConv(ch.back(), 3, 1, config_.code_dim, false, false));
  {
    torch::NoGradGuard no_grad;
    to_rgb_->weight.mul_(0.25);
  }
}

SynthesisTrace ToyGeneratorImpl::synthesize(const StructureCode& sc, const LatentCodes& codes) {
  sc.validate(config_.struct_dim, 4);
  return run(sc.data, codes);
}

SynthesisTrace ToyGeneratorImpl::synthesize_from_constant(const LatentCodes& codes) {
  return run(constant_input.expand({codes.batch(), -1, -1, -1}), codes);
}

LatentCodes ToyGeneratorImpl::sample_codes(const torch::Tensor& z) {
  auto w = mapping(z);
  return LatentCodes{w.unsqueeze(1).expand({-1, config_.n_layers(), -1}), Provenance::sampled};
}

SynthesisTrace ToyGeneratorImpl::run(const torch::Tensor& base, const LatentCodes& codes) {
  if (codes.codes.dim() != 3 || codes.count() != config_.n_layers())
    throw ConfigError("synthesize: generator has " + std::to_string(config_.n_layers()) + " layers but " +
                      std::to_string(codes.codes.dim() == 3 ? codes.count() : -1) + " latent codes were given");
  if (codes.dim() != config_.code_dim)
    throw ShapeError("synthesize: code dimension " + std::to_string(codes.dim()) + " != " +
                     std::to_string(config_.code_dim));

  SynthesisTrace trace;
  const auto& want = config_.feature_resolutions;
  auto capture = [&](const torch::Tensor& x) {
    if (std::find(want.begin(), want.end(), x.size(-1)) != want.end()) trace.features.maps.push_back(x);
  };

  int64_t l = 0;
  auto x = layers_[l]->as<ModulatedConv>()->forward(base, codes.layer(l));
  ++l;
  capture(x);
  while (l + 1 < config_.n_layers()) {
    x = F::interpolate(x, F::InterpolateFuncOptions()
                              .scale_factor(std::vector<double>{2.0, 2.0})
                              .mode(torch::kBilinear)
                              .align_corners(false));
    x = layers_[l]->as<ModulatedConv>()->forward(x, codes.layer(l));
    ++l;
    x = layers_[l]->as<ModulatedConv>()->forward(x, codes.layer(l));
    ++l;
    capture(x);
  }
  auto rgb = to_rgb_->forward(x, codes.layer(l));
  trace.image = (rgb + 0.5).clamp(0.0, 1.0);
  return trace;
}

LatentCodes style_mix(const LatentCodes& a, const LatentCodes& b, int64_t crossover) {
  if (a.codes.sizes() != b.codes.sizes())
    throw ShapeError("style_mix: parents have different shapes " + c10::str(a.codes.sizes()) + " and " +
                     c10::str(b.codes.sizes()));
  if (crossover < 0 || crossover > a.count())
    throw ValidationError("style_mix: crossover " + std::to_string(crossover) + " outside [0, " +
                          std::to_string(a.count()) + "]");
  auto mixed = torch::cat({a.codes.narrow(1, 0, crossover), b.codes.narrow(1, crossover, b.count() - crossover)}, 1);
  return LatentCodes{mixed, Provenance::mixed};
}

}  // namespace ifer
