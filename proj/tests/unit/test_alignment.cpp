#include "oracles.hpp"

#include "ifer/alignment.hpp"
#include "ifer/errors.hpp"

#include <ATen/CPUGeneratorImpl.h>
#include <gtest/gtest.h>

#include <cmath>

using namespace ifer;
using namespace ifer::testing;

namespace {

const auto kF64 = torch::TensorOptions().dtype(torch::kFloat64);

FeaturePyramid random_pyramid(int64_t b, at::Generator& gen, double scale = 1.0) {
  FeaturePyramid p;
  for (int64_t side : {16, 8, 4}) p.maps.push_back(scale * torch::randn({b, 3, side, side}, gen, kF64));
  return p;
}

FeaturePyramid permuted(const FeaturePyramid& p, const torch::Tensor& perm) {
  FeaturePyramid out;
  for (const auto& m : p.maps) out.maps.push_back(m.index_select(0, perm));
  return out;
}

}  // namespace

TEST(LayerDistribution, IdenticalFeaturesGiveUniformRows) {
  auto f = torch::randn({1, 4, 2, 2}).expand({3, 4, 2, 2});
  auto d = layer_distribution(f);
  EXPECT_TRUE(torch::allclose(d, torch::full({3, 2}, 0.5f)));
}

TEST(LayerDistribution, RowConcentratesOnHighDotPartner) {
  // Images 0 and 1 share a large vector; image 2 is orthogonal to both.
  auto f = torch::zeros({3, 2, 1, 1}, kF64);
  f[0][0] = 3.0;
  f[1][0] = 3.0;
  f[2][1] = 1.0;
  auto d = layer_distribution(f);
  auto want = reference_layer_distribution(f);
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 2; ++c) EXPECT_NEAR(d[r][c].item<double>(), want[r][c], 1e-12);
  EXPECT_GT(d[0][0].item<double>(), 0.999);  // row 0 -> image 1
  EXPECT_NEAR(d[0][0].item<double>(), 1.0 / (1.0 + std::exp(-9.0)), 1e-12);
}

TEST(LayerDistribution, MatchesLoopOracleAndIsRowStochastic) {
  auto gen = at::detail::createCPUGenerator(1);
  auto f = torch::randn({6, 5, 4, 4}, gen, kF64);
  auto d = layer_distribution(f);
  auto want = reference_layer_distribution(f);
  for (int r = 0; r < 6; ++r) {
    EXPECT_NEAR(d[r].sum().item<double>(), 1.0, 1e-6);
    for (int c = 0; c < 5; ++c) {
      EXPECT_NEAR(d[r][c].item<double>(), want[r][c], 1e-12);
      EXPECT_GT(d[r][c].item<double>(), 0.0);
      EXPECT_LT(d[r][c].item<double>(), 1.0);
    }
  }
}

TEST(LayerDistribution, BatchPermutationConjugatesMatrix) {
  auto gen = at::detail::createCPUGenerator(2);
  auto f = torch::randn({4, 3, 2, 2}, gen, kF64);
  const std::vector<int64_t> perm{2, 0, 3, 1};
  auto d = layer_distribution(f);
  auto dp = layer_distribution(f.index_select(0, torch::tensor(perm)));
  // Full BxB matrices with zero diagonals make the conjugation explicit.
  auto full = [](const torch::Tensor& rows) {
    const auto B = rows.size(0);
    auto m = torch::zeros({B, B}, rows.options());
    for (int64_t a = 0; a < B; ++a)
      for (int64_t c = 0, b = 0; b < B; ++b)
        if (b != a) m[a][b] = rows[a][c++];
    return m;
  };
  auto m = full(d), mp = full(dp);
  for (int64_t a = 0; a < 4; ++a)
    for (int64_t b = 0; b < 4; ++b) EXPECT_EQ(mp[a][b].item<double>(), m[perm[a]][perm[b]].item<double>());
}

TEST(LayerDistribution, RejectsBatchesBelowThree) {
  try {
    layer_distribution(torch::randn({2, 3, 4, 4}));
    FAIL() << "expected ValidationError";
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("degenerate"), std::string::npos);
  }
}

TEST(KlRows, HandComputedTwoRowCase) {
  auto p = torch::tensor({0.5, 0.5, 0.5, 0.5}, kF64).view({2, 2});
  auto q = torch::tensor({0.9, 0.1, 0.9, 0.1}, kF64).view({2, 2});
  const double want = 0.5 * std::log(0.5 / 0.9) + 0.5 * std::log(0.5 / 0.1);
  EXPECT_NEAR(want, 0.5108, 1e-4);
  EXPECT_NEAR(kl_rows(p, q).item<double>(), want, 1e-6);
  EXPECT_NEAR(reference_kl_rows({{0.5, 0.5}, {0.5, 0.5}}, {{0.9, 0.1}, {0.9, 0.1}}), want, 1e-12);
}

TEST(AlignmentLoss, ZeroForEqualPyramids) {
  auto gen = at::detail::createCPUGenerator(3);
  auto p = random_pyramid(5, gen);
  EXPECT_NEAR(alignment_loss(p, p).item<double>(), 0.0, 1e-6);
}

TEST(AlignmentLoss, NonNegativeOnRandomPyramids) {
  auto gen = at::detail::createCPUGenerator(4);
  for (int i = 0; i < 1000; ++i) {
    const int64_t b = 3 + i % 6;
    auto e = random_pyramid(b, gen, 0.5 + (i % 4)), g = random_pyramid(b, gen, 0.5 + (i % 3));
    ASSERT_GE(alignment_loss(e, g).item<double>(), 0.0) << i;
  }
}

TEST(AlignmentLoss, MatchesLoopOracle) {
  auto gen = at::detail::createCPUGenerator(5);
  auto e = random_pyramid(4, gen), g = random_pyramid(4, gen);
  double want = 0;
  for (int l = 0; l < 3; ++l)
    want += reference_kl_rows(reference_layer_distribution(e.maps[l]), reference_layer_distribution(g.maps[l]));
  EXPECT_NEAR(alignment_loss(e, g).item<double>(), want, 1e-10);
}

TEST(AlignmentLoss, InvariantUnderJointBatchPermutation) {
  auto gen = at::detail::createCPUGenerator(6);
  auto e = random_pyramid(6, gen), g = random_pyramid(6, gen);
  auto perm = torch::tensor({4, 1, 5, 0, 3, 2});
  EXPECT_EQ(alignment_loss(e, g).item<double>(), alignment_loss(permuted(e, perm), permuted(g, perm)).item<double>());
}

TEST(AlignmentLoss, PairsByResolutionWhateverTheOrder) {
  auto gen = at::detail::createCPUGenerator(7);
  auto e = random_pyramid(4, gen), g = random_pyramid(4, gen);
  FeaturePyramid g_coarse_first{{g.maps[2], g.maps[1], g.maps[0]}};
  EXPECT_EQ(alignment_loss(e, g).item<double>(), alignment_loss(e, g_coarse_first).item<double>());
}

TEST(AlignmentLoss, GradientReachesEncoderOnly) {
  auto gen = at::detail::createCPUGenerator(8);
  auto e = random_pyramid(4, gen), g = random_pyramid(4, gen);
  for (auto& m : e.maps) m.requires_grad_(true);
  for (auto& m : g.maps) m.requires_grad_(true);
  alignment_loss(e, g).backward();
  for (auto& m : g.maps) EXPECT_TRUE(!m.grad().defined() || m.grad().abs().max().item<double>() == 0.0);
  for (auto& m : e.maps) EXPECT_GT(m.grad().abs().max().item<double>(), 0.0);
}

TEST(AlignmentLoss, ResolutionMismatchNamesPair) {
  auto gen = at::detail::createCPUGenerator(9);
  auto e = random_pyramid(3, gen), g = random_pyramid(3, gen);
  g.maps[0] = torch::randn({3, 3, 32, 32}, kF64);
  try {
    alignment_loss(e, g);
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("32x32"), std::string::npos);
  }
  g.maps.pop_back();
  EXPECT_THROW(alignment_loss(e, g), ConfigError);
}
