#include "ifer/alignment.hpp"

#include "ifer/errors.hpp"

#include <algorithm>
#include <numeric>

namespace ifer {

namespace {

// Reductions over sorted values give the same bits for any batch order.
torch::Tensor canonical_sum(const torch::Tensor& t, int64_t dim) {
  return std::get<0>(t.sort(dim)).sum(dim);
}

torch::Tensor canonical_log_softmax(const torch::Tensor& logits) {
  auto m = std::get<0>(logits.max(1, true)).detach();
  auto lse = m + canonical_sum((logits - m).exp(), 1).unsqueeze(1).log();
  return logits - lse;
}

torch::Tensor off_diagonal_logits(const torch::Tensor& feats) {
  if (feats.dim() != 4) throw ShapeError("layer_distribution: expected [B, C, H, W] feature maps");
  const auto B = feats.size(0);
  if (B < 3)
    throw ValidationError("layer_distribution: batch size " + std::to_string(B) +
                          " < 3; with two images every row has a single entry and the distribution is degenerate");
  auto v = feats.mean({2, 3});
  auto sim = (v.unsqueeze(1) * v.unsqueeze(0)).sum(-1);
  auto mask = ~torch::eye(B, torch::TensorOptions().dtype(torch::kBool).device(feats.device()));
  return sim.masked_select(mask).reshape({B, B - 1});
}

std::vector<std::size_t> order_by_resolution(const FeaturePyramid& p) {
  std::vector<std::size_t> idx(p.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return p.maps[a].size(-1) < p.maps[b].size(-1); });
  return idx;
}

}  // namespace

torch::Tensor layer_distribution(const torch::Tensor& feats) {
  return canonical_log_softmax(off_diagonal_logits(feats)).exp();
}

torch::Tensor kl_rows(const torch::Tensor& p, const torch::Tensor& q) {
  if (p.sizes() != q.sizes()) throw ShapeError("kl_rows: distributions have different shapes");
  return (p * (p.log() - q.log())).sum(1).mean();
}

torch::Tensor alignment_loss(const FeaturePyramid& encoder_pyramid, const FeaturePyramid& generator_pyramid) {
  if (encoder_pyramid.size() != generator_pyramid.size() || encoder_pyramid.size() == 0)
    throw ConfigError("alignment_loss: encoder has " + std::to_string(encoder_pyramid.size()) +
                      " aligned layers, generator has " + std::to_string(generator_pyramid.size()));
  const auto e_order = order_by_resolution(encoder_pyramid);
  const auto g_order = order_by_resolution(generator_pyramid);

  torch::Tensor total;
  for (std::size_t i = 0; i < e_order.size(); ++i) {
    const auto& e = encoder_pyramid.maps[e_order[i]];
    const auto& g = generator_pyramid.maps[g_order[i]];
    if (e.size(-1) != g.size(-1) || e.size(0) != g.size(0))
      throw ConfigError("alignment_loss: encoder layer " + std::to_string(e_order[i]) + " (" +
                        std::to_string(e.size(-1)) + "x" + std::to_string(e.size(-1)) + ") cannot pair with generator layer " +
                        std::to_string(g_order[i]) + " (" + std::to_string(g.size(-1)) + "x" +
                        std::to_string(g.size(-1)) + ")");
    auto log_e = canonical_log_softmax(off_diagonal_logits(e));
    auto log_g = canonical_log_softmax(off_diagonal_logits(g.detach()));
    auto rows = canonical_sum(log_e.exp() * (log_e - log_g), 1);
    auto kl = canonical_sum(rows, 0) / double(rows.size(0));
    total = total.defined() ? total + kl : kl;
  }
  return total;
}

}  // namespace ifer
