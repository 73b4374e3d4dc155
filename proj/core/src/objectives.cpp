#include "ifer/objectives.hpp"

#include "ifer/alignment.hpp"
#include "ifer/errors.hpp"
#include "ifer/util.hpp"

#include <cmath>
#include <functional>

namespace ifer {

namespace F = torch::nn::functional;

namespace {

void check_same_shape(const torch::Tensor& x, const torch::Tensor& y, const char* what) {
  if (x.sizes() != y.sizes())
    throw ShapeError(std::string(what) + ": shapes differ, " + c10::str(x.sizes()) + " vs " + c10::str(y.sizes()));
}

torch::Tensor channel_normalize(const torch::Tensor& f) {
  return f / (f.pow(2).sum(1, true).sqrt() + 1e-10);
}

}  // namespace

torch::Tensor pixel_loss(const torch::Tensor& x, const torch::Tensor& y) {
  check_same_shape(x, y, "pixel_loss");
  return (x - y).pow(2).mean();
}

double psnr_from_mse(double mse) { return mse < 1e-10 ? 100.0 : 10.0 * std::log10(1.0 / mse); }

double psnr(const torch::Tensor& x, const torch::Tensor& y) {
  check_same_shape(x, y, "psnr");
  return psnr_from_mse((x.to(torch::kFloat64) - y.to(torch::kFloat64)).pow(2).mean().item<double>());
}

torch::Tensor ssim(const torch::Tensor& x, const torch::Tensor& y) {
  check_same_shape(x, y, "ssim");
  if (x.dim() != 4) throw ShapeError("ssim: expected [B, C, H, W] images");
  constexpr double c1 = 0.01 * 0.01;
  constexpr double c2 = 0.03 * 0.03;
  const int64_t win = std::min<int64_t>({8, x.size(2), x.size(3)});
  auto pool = [&](const torch::Tensor& t) { return F::avg_pool2d(t, F::AvgPool2dFuncOptions(win).stride(1)); };
  auto mx = pool(x), my = pool(y);
  auto vx = pool(x * x) - mx * mx;
  auto vy = pool(y * y) - my * my;
  auto cxy = pool(x * y) - mx * my;
  auto map = ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
  return map.mean();
}

PerceptualTrunk::PerceptualTrunk(ConvTrunk trunk) : trunk_(std::move(trunk)) {
  trunk_->eval();
  set_requires_grad(*trunk_, false);
}

torch::Tensor PerceptualTrunk::perceptual_distance(const torch::Tensor& x, const torch::Tensor& y) {
  check_same_shape(x, y, "perceptual_distance");
  auto fx = trunk_->features(x);
  auto fy = trunk_->features(y);
  torch::Tensor total;
  for (std::size_t i = 0; i < fx.size(); ++i) {
    auto d = (channel_normalize(fx[i]) - channel_normalize(fy[i])).pow(2).mean();
    total = total.defined() ? total + d : d;
  }
  return total;
}

torch::Tensor consistency_from_embeddings(const torch::Tensor& a, const torch::Tensor& b) {
  return (1.0 - cosine_score(a, b)).mean();
}

torch::Tensor PerceptualTrunk::consistency(const torch::Tensor& x, const torch::Tensor& y) {
  check_same_shape(x, y, "consistency_loss");
  return consistency_from_embeddings(trunk_->embed(x), trunk_->embed(y));
}

torch::Tensor PerceptualTrunk::embed(const torch::Tensor& images) { return trunk_->embed(images); }

torch::Tensor latent_reg(const LatentCodes& codes, const torch::Tensor& w_avg) {
  if (w_avg.dim() != 1 || w_avg.size(0) != codes.dim())
    throw ShapeError("latent_reg: mean latent has " + std::to_string(w_avg.numel()) + " entries, codes have dim " +
                     std::to_string(codes.dim()));
  return (codes.codes - w_avg).pow(2).sum(-1).mean();
}

namespace {

torch::Tensor symmetric_sqrt(const torch::Tensor& m) {
  auto sym = 0.5 * (m + m.t());
  auto [evals, evecs] = torch::linalg_eigh(sym);
  return torch::matmul(evecs * evals.clamp_min(0.0).sqrt().unsqueeze(0), evecs.t());
}

}  // namespace

double frechet_distance(const torch::Tensor& mu_a, const torch::Tensor& cov_a, const torch::Tensor& mu_b,
                        const torch::Tensor& cov_b) {
  auto ma = mu_a.to(torch::kFloat64), mb = mu_b.to(torch::kFloat64);
  auto ca = cov_a.to(torch::kFloat64), cb = cov_b.to(torch::kFloat64);
  // Tr((Ca Cb)^1/2) = Tr((Ca^1/2 Cb Ca^1/2)^1/2); the inner product is symmetric PSD.
  auto root_a = symmetric_sqrt(ca);
  auto inner = torch::matmul(torch::matmul(root_a, cb), root_a);
  auto inner_sym = 0.5 * (inner + inner.t());
  auto evals = torch::linalg_eigvalsh(inner_sym).clamp_min(0.0);
  const double trace_root = evals.sqrt().sum().item<double>();
  const double mean_term = (ma - mb).pow(2).sum().item<double>();
  const double value = mean_term + ca.trace().item<double>() + cb.trace().item<double>() - 2.0 * trace_root;
  return std::max(value, 0.0);
}

double frechet_from_embeddings(const torch::Tensor& a, const torch::Tensor& b) {
  auto fit = [](const torch::Tensor& e) {
    auto d = e.to(torch::kFloat64);
    auto mu = d.mean(0);
    auto centered = d - mu;
    auto cov = torch::matmul(centered.t(), centered) / double(std::max<int64_t>(d.size(0) - 1, 1));
    return std::make_pair(mu, cov);
  };
  auto [mu_a, cov_a] = fit(a);
  auto [mu_b, cov_b] = fit(b);
  return frechet_distance(mu_a, cov_a, mu_b, cov_b);
}

double fid_proxy(PerceptualTrunk& trunk, const torch::Tensor& set_a, const torch::Tensor& set_b) {
  if (set_a.size(0) < kMinFidSetSize || set_b.size(0) < kMinFidSetSize)
    throw ValidationError("fid_proxy: each set needs at least " + std::to_string(kMinFidSetSize) + " images, got " +
                          std::to_string(set_a.size(0)) + " and " + std::to_string(set_b.size(0)));
  torch::NoGradGuard no_grad;
  auto embed_all = [&](const torch::Tensor& set) {
    std::vector<torch::Tensor> parts;
    for (int64_t i = 0; i < set.size(0); i += 64) parts.push_back(trunk.embed(set.narrow(0, i, std::min<int64_t>(64, set.size(0) - i))));
    return torch::cat(parts, 0);
  };
  return frechet_from_embeddings(embed_all(set_a), embed_all(set_b));
}

void LossWeights::validate() const {
  for (double w : {pixel, perceptual, consistency, latent_reg, adversarial, alignment})
    if (!(w >= 0.0)) throw ConfigError("loss weights must be non-negative");
}

std::vector<std::pair<std::string, double>> LossBreakdown::terms() const {
  return {{"pixel", pixel},           {"perceptual", perceptual}, {"consistency", consistency},
          {"latent_reg", latent_reg}, {"adversarial", adversarial}, {"alignment", alignment}};
}

double LossBreakdown::recombine(const LossWeights& w) const {
  return w.pixel * pixel + w.perceptual * perceptual + w.consistency * consistency + w.latent_reg * latent_reg +
         w.adversarial * adversarial + w.alignment * alignment;
}

LossBreakdown composite_inversion_loss(const InversionLossInputs& in, PerceptualTrunk& trunk,
                                       const LossWeights& weights) {
  weights.validate();
  LossBreakdown out;
  out.total = torch::zeros({}, in.y.options());
  auto add = [&](double weight, double& slot, const std::function<torch::Tensor()>& term) {
    if (weight <= 0.0) return;
    auto value = term();
    slot = value.item<double>();
    out.total = out.total + weight * value;
  };
  add(weights.pixel, out.pixel, [&] { return pixel_loss(in.x, in.y); });
  add(weights.perceptual, out.perceptual, [&] { return trunk.perceptual_distance(in.x, in.y); });
  add(weights.consistency, out.consistency, [&] { return trunk.consistency(in.x, in.y); });
  add(weights.latent_reg, out.latent_reg, [&] { return latent_reg(in.codes, in.w_avg); });
  add(weights.adversarial, out.adversarial, [&] {
    if (!in.critic) throw ConfigError("composite loss: adversarial weight set but no critic given");
    return encoder_adv_loss(*in.critic, in.x, in.y, in.critic_seed);
  });
  add(weights.alignment, out.alignment, [&] {
    if (!in.encoder_pyramid || !in.generator_pyramid)
      throw ConfigError("composite loss: alignment weight set but feature pyramids missing");
    return alignment_loss(*in.encoder_pyramid, *in.generator_pyramid);
  });
  out.total_value = out.total.item<double>();
  return out;
}

}  // namespace ifer
