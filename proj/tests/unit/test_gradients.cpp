#include "gradient_suite.hpp"

#include <gtest/gtest.h>

using namespace ifer::testing;

namespace {

void expect_close(const GradCheckResult& r) {
  EXPECT_LT(r.max_rel_error, 1e-4) << "worst tensor: " << r.worst;
  EXPECT_GT(r.probes, 0);
}

}  // namespace

TEST(GradCheck, PixelLoss) { expect_close(grad_pixel_loss()); }
TEST(GradCheck, PerceptualProxy) { expect_close(grad_perceptual()); }
TEST(GradCheck, Consistency) { expect_close(grad_consistency()); }
TEST(GradCheck, LatentReg) { expect_close(grad_latent_reg()); }
TEST(GradCheck, Alignment) { expect_close(grad_alignment()); }
TEST(GradCheck, EncoderAdversarial) { expect_close(grad_encoder_adv()); }
TEST(GradCheck, ModulatedConvDemodulated) { expect_close(grad_modulated_conv(true)); }
TEST(GradCheck, ModulatedConvPlain) { expect_close(grad_modulated_conv(false)); }
TEST(GradCheck, GeneratorPath) { expect_close(grad_generator()); }
TEST(GradCheck, Encoder) { expect_close(grad_encoder()); }
TEST(GradCheck, FerLoss) { expect_close(grad_fer_loss()); }

TEST(GradCheck, DetectsAWrongGradient) {
  // Value is sum(x^3) but autograd sees an extra x through the half-detached product.
  auto x = torch::randn({6}, torch::kFloat64).requires_grad_(true);
  auto f = [&] { return x.pow(3).sum() + (x * x.detach()).sum() - (x.detach() * x.detach()).sum(); };
  EXPECT_GT(grad_check(f, {{"x", x}}, 6).max_rel_error, 1e-2);
}
