#include "ifer/critic.hpp"

#include "ifer/errors.hpp"
#include "ifer/util.hpp"

#include <random>
#include <unordered_map>

namespace ifer {

namespace F = torch::nn::functional;

namespace {

double uniform01(std::mt19937_64& rng) { return double(rng() >> 11) * 0x1.0p-53; }
double uniform(std::mt19937_64& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

torch::Tensor lrelu(const torch::Tensor& x) {
  return F::leaky_relu(x, F::LeakyReLUFuncOptions().negative_slope(0.2));
}

}  // namespace

void TrunkConfig::validate() const {
  if (channels.size() < 2) throw ConfigError("trunk: need a stem width and at least one block width");
  const auto blocks = static_cast<int64_t>(channels.size()) - 1;
  if (!is_power_of_two(image_size) || (image_size >> blocks) < 1)
    throw ConfigError("trunk: " + std::to_string(blocks) + " strided blocks do not fit image size " +
                      std::to_string(image_size));
}

std::map<std::string, std::string> TrunkConfig::record(const std::string& prefix) const {
  return {{prefix + ".image_size", std::to_string(image_size)}, {prefix + ".channels", join(channels)}};
}

ConvTrunkImpl::ConvTrunkImpl(TrunkConfig config) : config_(std::move(config)) {
  config_.validate();
  const auto& ch = config_.channels;
  stem_ = register_module("stem", torch::nn::Conv2d(torch::nn::Conv2dOptions(3, ch[0], 3).padding(1)));
  blocks_ = register_module("blocks", torch::nn::ModuleList());
  for (std::size_t i = 1; i < ch.size(); ++i)
    blocks_->push_back(torch::nn::Conv2d(torch::nn::Conv2dOptions(ch[i - 1], ch[i], 3).stride(2).padding(1)));
}

std::vector<torch::Tensor> ConvTrunkImpl::features(const torch::Tensor& images) {
  std::vector<torch::Tensor> out;
  auto x = lrelu(stem_(images * 2.0 - 1.0));
  for (const auto& block : *blocks_) {
    x = lrelu(block->as<torch::nn::Conv2d>()->forward(x));
    out.push_back(x);
  }
  return out;
}

torch::Tensor ConvTrunkImpl::embed(const torch::Tensor& images) { return features(images).back().mean({2, 3}); }

PatchCriticImpl::PatchCriticImpl(TrunkConfig config) {
  trunk = register_module("trunk", ConvTrunk(config));
  head_ = register_module("head", torch::nn::Conv2d(torch::nn::Conv2dOptions(trunk->out_channels(), 1, 3).padding(1)));
}

torch::Tensor PatchCriticImpl::forward(const torch::Tensor& images) { return head_(trunk->features(images).back()); }

SiameseEncoderImpl::SiameseEncoderImpl(TrunkConfig config, int64_t embed_dim) {
  trunk = register_module("trunk", ConvTrunk(std::move(config)));
  head_ = register_module("head", torch::nn::Linear(trunk->out_channels(), embed_dim));
}

torch::Tensor SiameseEncoderImpl::forward(const torch::Tensor& images) { return head_(trunk->embed(images)); }

torch::Tensor augment(const torch::Tensor& images, uint64_t seed, AugStrength strength, const AugPolicy& policy) {
  if (images.dim() != 4 || images.size(1) != 3)
    throw ShapeError("augment: expected [B, 3, H, W] images, got " + c10::str(images.sizes()));
  const auto& r = policy.range(strength);
  const auto B = images.size(0);

  std::vector<double> theta(B * 6), gain(B), offset(B);
  bool geometric = false, photometric = false;
  for (int64_t i = 0; i < B; ++i) {
    std::mt19937_64 rng(mix_seed(seed, static_cast<uint64_t>(i)));
    const double s = uniform(rng, r.crop_min_scale, 1.0);
    const double tx = uniform(rng, -(1.0 - s), 1.0 - s);
    const double ty = uniform(rng, -(1.0 - s), 1.0 - s);
    const bool flip = uniform01(rng) < r.flip_prob;
    offset[i] = uniform(rng, -r.brightness, r.brightness);
    gain[i] = uniform(rng, 1.0 - r.contrast, 1.0 + r.contrast);
    const double sx = flip ? -s : s;
    theta[i * 6 + 0] = sx;
    theta[i * 6 + 1] = 0.0;
    theta[i * 6 + 2] = tx;
    theta[i * 6 + 3] = 0.0;
    theta[i * 6 + 4] = s;
    theta[i * 6 + 5] = ty;
    geometric = geometric || s != 1.0 || flip || tx != 0.0 || ty != 0.0;
    photometric = photometric || gain[i] != 1.0 || offset[i] != 0.0;
  }

  auto out = images;
  const auto opts = images.options();
  if (geometric) {
    auto th = torch::tensor(theta, torch::kFloat64).reshape({B, 2, 3}).to(opts.dtype());
    auto grid = F::affine_grid(th, images.sizes(), false);
    out = F::grid_sample(out, grid,
                         F::GridSampleFuncOptions().mode(torch::kBilinear).padding_mode(torch::kBorder).align_corners(false));
  }
  if (photometric) {
    auto g = torch::tensor(gain, torch::kFloat64).to(opts.dtype()).view({B, 1, 1, 1});
    auto o = torch::tensor(offset, torch::kFloat64).to(opts.dtype()).view({B, 1, 1, 1});
    auto mean = out.mean({1, 2, 3}, true);
    out = ((out - mean) * g + mean + o).clamp(0.0, 1.0);
  }
  return out;
}

void momentum_update(const torch::nn::Module& query, torch::nn::Module& key, double momentum) {
  if (!(momentum >= 0.0 && momentum < 1.0))
    throw ValidationError("momentum_update: momentum weight must be in [0, 1), got " + std::to_string(momentum));
  auto key_params = key.named_parameters(true);
  auto query_params = query.named_parameters(true);
  if (key_params.size() != query_params.size())
    throw ShapeError("momentum_update: parameter counts differ (" + std::to_string(query_params.size()) + " vs " +
                     std::to_string(key_params.size()) + ")");
  torch::NoGradGuard no_grad;
  for (const auto& item : query_params) {
    auto* target = key_params.find(item.key());
    if (!target) throw ShapeError("momentum_update: array '" + item.key() + "' missing from momentum encoder");
    if (target->sizes() != item.value().sizes())
      throw ShapeError("momentum_update: array '" + item.key() + "' has shape " + c10::str(target->sizes()) +
                       " but source has " + c10::str(item.value().sizes()));
    target->mul_(momentum).add_(item.value(), 1.0 - momentum);
  }
}

std::map<std::string, std::string> CriticConfig::record() const {
  auto r = trunk.record("critic.trunk");
  r["critic.embed_dim"] = std::to_string(embed_dim);
  return r;
}

InversionCriticImpl::InversionCriticImpl(CriticConfig config) : config_(std::move(config)) {
  query = register_module("query", SiameseEncoder(config_.trunk, config_.embed_dim));
  key = register_module("key", SiameseEncoder(config_.trunk, config_.embed_dim));
  sync_key();
}

void InversionCriticImpl::sync_key() {
  momentum_update(*query, *key, 0.0);
  set_requires_grad(*key, false);
}

void InversionCriticImpl::load_trunk(const ConvTrunk& trunk) {
  torch::NoGradGuard no_grad;
  auto src = trunk->named_parameters(true);
  for (auto& item : query->trunk->named_parameters(true)) {
    auto* from = src.find(item.key());
    if (!from || from->sizes() != item.value().sizes())
      throw ConfigError("critic: pretrained trunk does not match array '" + item.key() + "'");
    item.value().copy_(*from);
  }
  sync_key();
}

void InversionCriticImpl::update_key() { momentum_update(*query, *key, config_.momentum); }

torch::Tensor InversionCriticImpl::score(const torch::Tensor& img1, const torch::Tensor& img2, uint64_t seed) {
  auto q = query->forward(augment(img1, mix_seed(seed, 1), AugStrength::strong, config_.policy));
  torch::Tensor k;
  {
    torch::NoGradGuard no_grad;
    k = key->forward(augment(img2.detach(), mix_seed(seed, 2), AugStrength::weak, config_.policy));
  }
  return cosine_score(q, k);
}

torch::Tensor cosine_score(const torch::Tensor& a, const torch::Tensor& b) {
  auto na = F::normalize(a, F::NormalizeFuncOptions().dim(-1).eps(1e-12));
  auto nb = F::normalize(b, F::NormalizeFuncOptions().dim(-1).eps(1e-12));
  return (na * nb).sum(-1).clamp(-1.0, 1.0);
}

torch::Tensor critic_loss_from_scores(const torch::Tensor& real_score, const torch::Tensor& fake_score) {
  return ((real_score - 1.0).pow(2) + (fake_score + 1.0).pow(2)).mean();
}

torch::Tensor encoder_adv_loss_from_scores(const torch::Tensor& fake_score) {
  return (fake_score - 1.0).pow(2).mean();
}

torch::Tensor critic_loss(InversionCritic& critic, const torch::Tensor& x, const torch::Tensor& y, uint64_t seed) {
  auto real = critic->score(x, x, mix_seed(seed, 11));
  auto fake = critic->score(y.detach(), x, mix_seed(seed, 12));
  return critic_loss_from_scores(real, fake);
}

torch::Tensor encoder_adv_loss(InversionCritic& critic, const torch::Tensor& x, const torch::Tensor& y,
                               uint64_t seed) {
  FreezeGuard frozen(*critic);
  return encoder_adv_loss_from_scores(critic->score(y, x, mix_seed(seed, 12)));
}

}  // namespace ifer
