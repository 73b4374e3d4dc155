#include "micro.hpp"
#include "oracles.hpp"

#include "ifer/errors.hpp"
#include "ifer/synthesis.hpp"

#include <ATen/CPUGeneratorImpl.h>
#include <gtest/gtest.h>

using namespace ifer;
using namespace ifer::testing;

namespace {

const auto kF64 = torch::TensorOptions().dtype(torch::kFloat64);

LatentCodes random_codes(int64_t b, int64_t n, int64_t d, uint64_t seed) {
  auto gen = at::detail::createCPUGenerator(seed);
  return LatentCodes{torch::randn({b, n, d}, gen)};
}

StructureCode random_structure(int64_t b, int64_t d, uint64_t seed) {
  auto gen = at::detail::createCPUGenerator(seed);
  return StructureCode{torch::randn({b, d, 4, 4}, gen)};
}

}  // namespace

TEST(ModulatedConv, UnitStyleWithoutDemodulationIsPlainConvolution) {
  auto x = torch::randn({2, 3, 6, 6}, kF64), w = torch::randn({5, 3, 3, 3}, kF64);
  auto got = modulated_conv(x, w, torch::ones({3}, kF64), false);
  EXPECT_LT((got - torch::conv2d(x, w, {}, 1, 1)).abs().max().item<double>(), 1e-12);
}

TEST(ModulatedConv, MatchesPerSampleKernelScaling) {
  auto x = torch::randn({3, 4, 5, 5}, kF64), w = torch::randn({6, 4, 3, 3}, kF64);
  auto s = torch::randn({3, 4}, kF64);
  for (bool demod : {false, true}) {
    auto got = modulated_conv(x, w, s, demod);
    EXPECT_LT((got - reference_modulated_conv(x, w, s, demod)).abs().max().item<double>(), 1e-10) << demod;
  }
}

TEST(ModulatedConv, PositiveStyleScalingIsAbsorbedByDemodulation) {
  torch::manual_seed(1);
  auto x = torch::randn({4, 8, 8, 8}), w = torch::randn({8, 8, 3, 3});
  auto s = torch::randn({4, 8});
  auto base = modulated_conv(x, w, s, true);
  for (double c : {0.01, 0.5, 3.0, 100.0})
    EXPECT_LT((modulated_conv(x, w, s * c, true) - base).abs().max().item<float>(), 1e-5) << c;
}

TEST(ModulatedConv, DemodulatedOutputHasUnitStd) {
  // Centre pixel of a 3x3 map sees the whole kernel, so demodulation fixes its variance.
  auto gen = at::detail::createCPUGenerator(11);
  const int64_t n = 10000;
  auto x = torch::randn({n, 8, 3, 3}, gen, kF64);
  auto w = torch::randn({6, 8, 3, 3}, gen, kF64);
  auto s = torch::randn({n, 8}, gen, kF64);
  auto centre = modulated_conv(x, w, s, true).select(3, 1).select(2, 1);  // [n, 6]
  auto std = centre.std(0);
  for (int64_t c = 0; c < 6; ++c) {
    EXPECT_GE(std[c].item<double>(), 0.7);
    EXPECT_LE(std[c].item<double>(), 1.3);
  }
}

TEST(ModulatedConv, RejectsStyleLengthMismatch) {
  EXPECT_THROW(modulated_conv(torch::zeros({1, 3, 4, 4}), torch::zeros({2, 3, 3, 3}), torch::ones({4}), true),
               ShapeError);
  EXPECT_THROW(modulated_conv(torch::zeros({1, 2, 4, 4}), torch::zeros({2, 3, 3, 3}), torch::ones({3}), true),
               ShapeError);
}

TEST(Synthesize, DeterministicAndClampedWithFeaturesCoarseToFine) {
  torch::manual_seed(2);
  ToyGenerator g;
  torch::NoGradGuard no_grad;
  auto sc = random_structure(2, 128, 1);
  auto codes = random_codes(2, 10, 128, 2);
  auto a = g->synthesize(sc, codes), b = g->synthesize(sc, codes);
  EXPECT_TRUE(torch::equal(a.image, b.image));
  EXPECT_EQ(a.image.sizes(), (std::vector<int64_t>{2, 3, 64, 64}));
  EXPECT_GE(a.image.min().item<float>(), 0.0f);
  EXPECT_LE(a.image.max().item<float>(), 1.0f);
  EXPECT_EQ(a.features.resolutions(), (std::vector<int64_t>{4, 8, 16}));
}

TEST(Synthesize, ZeroInputsGiveFiniteImage) {
  torch::manual_seed(3);
  ToyGenerator g(micro_generator(16));
  torch::NoGradGuard no_grad;
  auto y = g->synthesize(StructureCode{torch::zeros({1, 4, 4, 4})}, LatentCodes{torch::zeros({1, 6, 4})});
  EXPECT_TRUE(torch::isfinite(y.image).all().item<bool>());
}

TEST(Synthesize, StructureCodeReplacesConstant) {
  torch::manual_seed(4);
  ToyGenerator g(micro_generator(16));
  torch::NoGradGuard no_grad;
  auto codes = random_codes(1, 6, 4, 3);
  auto from_const = g->synthesize_from_constant(codes).image;
  auto from_sc = g->synthesize(random_structure(1, 4, 4), codes).image;
  EXPECT_GT((from_const - from_sc).pow(2).mean().item<float>(), 0.0f);
  auto same = g->synthesize(StructureCode{g->constant_input.clone()}, codes).image;
  EXPECT_TRUE(torch::equal(same, from_const));
}

TEST(Synthesize, LayerCountMismatchIsConfigError) {
  ToyGenerator g(micro_generator(8));
  EXPECT_EQ(g->config().n_layers(), 4);
  EXPECT_THROW(g->synthesize(random_structure(1, 4, 5), random_codes(1, 5, 4, 6)), ConfigError);
}

TEST(MeanLatent, SingleSampleIsThatSample) {
  torch::manual_seed(5);
  MappingNetwork m(8, 8, 4);
  auto gen = at::detail::createCPUGenerator(42);
  auto z = torch::randn({1, 8}, gen);
  torch::NoGradGuard no_grad;
  EXPECT_TRUE(torch::allclose(m->mean_latent(1, 42), m->forward(z)[0], 1e-6, 1e-7));
  EXPECT_TRUE(torch::equal(m->mean_latent(100, 9), m->mean_latent(100, 9)));
  EXPECT_THROW(m->mean_latent(0, 1), ValidationError);
}

TEST(MeanLatent, AgreesWithLargeSampleMeanWithinThreeSigma) {
  torch::manual_seed(6);
  MappingNetwork m(16, 16, 4);
  const int64_t small = 10000, large = 1000000;
  auto w_bar = m->mean_latent(small, 1001).to(torch::kFloat64);

  // Independent oracle: mean and spread of a million mapped samples from another stream.
  torch::NoGradGuard no_grad;
  auto gen = at::detail::createCPUGenerator(2002);
  auto sum = torch::zeros({16}, kF64), sq = torch::zeros({16}, kF64);
  for (int64_t done = 0; done < large; done += 50000) {
    auto w = m->forward(torch::randn({50000, 16}, gen)).to(torch::kFloat64);
    sum += w.sum(0);
    sq += w.pow(2).sum(0);
  }
  auto mean = sum / double(large);
  auto sigma = (sq / double(large) - mean.pow(2)).sqrt();
  auto bound = 3.0 * sigma / std::sqrt(double(small));
  auto dev = (w_bar - mean).abs();
  for (int64_t i = 0; i < 16; ++i) EXPECT_LE(dev[i].item<double>(), bound[i].item<double>()) << "coordinate " << i;
}

TEST(StyleMix, CrossoverEndpointsReturnParents) {
  auto a = random_codes(2, 10, 8, 7), b = random_codes(2, 10, 8, 8);
  EXPECT_TRUE(torch::equal(style_mix(a, b, 0).codes, b.codes));
  EXPECT_TRUE(torch::equal(style_mix(a, b, 10).codes, a.codes));
  auto m = style_mix(a, b, 3);
  EXPECT_EQ(m.provenance, Provenance::mixed);
  EXPECT_TRUE(torch::equal(m.codes.slice(1, 0, 3), a.codes.slice(1, 0, 3)));
  EXPECT_TRUE(torch::equal(m.codes.slice(1, 3), b.codes.slice(1, 3)));
  EXPECT_THROW(style_mix(a, b, 11), ValidationError);
  EXPECT_THROW(style_mix(a, b, -1), ValidationError);
}

TEST(StyleMix, MixedImageDiffersFromBothParents) {
  torch::manual_seed(9);
  ToyGenerator g;
  torch::NoGradGuard no_grad;
  auto sc = random_structure(1, 128, 10);
  auto a = random_codes(1, 10, 128, 11), b = random_codes(1, 10, 128, 12);
  auto ya = g->synthesize(sc, a).image, yb = g->synthesize(sc, b).image;
  auto ym = g->synthesize(sc, style_mix(a, b, 3)).image;
  EXPECT_GT((ym - ya).pow(2).mean().item<float>(), 0.0f);
  EXPECT_GT((ym - yb).pow(2).mean().item<float>(), 0.0f);
}

TEST(GeneratorConfig, Validation) {
  auto c = micro_generator(16);
  c.channels.pop_back();
  EXPECT_THROW(c.validate(), ConfigError);
  c = micro_generator(16);
  c.resolution = 12;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_EQ(GeneratorConfig{}.n_layers(), 10);
}
