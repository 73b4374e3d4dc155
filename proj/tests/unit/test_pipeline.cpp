#include "test_paths.hpp"

#include "ifer/errors.hpp"
#include "ifer/image_io.hpp"
#include "ifer/pipeline.hpp"
#include "ifer/toy_faces.hpp"
#include "ifer/util.hpp"

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>

using namespace ifer;
namespace fs = std::filesystem;

#ifndef IFER_CLI_PATH
#error "IFER_CLI_PATH must name the ifer executable"
#endif

namespace {

fs::path scratch_root() { return fs::temp_directory_path() / "ifer_pipeline_test"; }

RunConfig tiny(Stage stage, const std::string& out) {
  auto c = RunConfig::defaults(stage);
  c.seed = 3;
  c.out_dir = (scratch_root() / out).string();
  c.train_size = 40;
  c.heldout_size = 32;
  c.fer_train_size = 14;
  c.fer_test_size = 14;
  c.mean_latent_samples = 64;
  c.log_every = 1000;
  c.batch_size = stage == Stage::fer ? 7 : 4;
  c.iterations = 2;
  return c;
}

std::set<std::string> keys_of(const nlohmann::json& j) {
  std::set<std::string> out;
  for (auto& [k, v] : j.items()) out.insert(k);
  return out;
}

std::set<std::string> declared(const std::string& kind) {
  const auto& k = report_keys(kind);
  return {k.begin(), k.end()};
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string("IFER_OUTPUT_ROOT=") + scratch_root().string() + " " IFER_CLI_PATH " " + args +
                          " > " + (scratch_root() / "cli.log").string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

class Pipeline : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    fs::remove_all(scratch_root());
    gan_ = new StageResult(pretrain_generator(tiny(Stage::gan, "gan")));
    auto inv = tiny(Stage::inversion, "inversion");
    inv.init = gan_->checkpoint_path.string();
    inversion_ = new StageResult(train_inversion(inv));
    auto ft = tiny(Stage::finetune, "finetune");
    ft.init = inversion_->checkpoint_path.string();
    finetune_ = new StageResult(finetune_inversion(ft));
    auto fer = tiny(Stage::fer, "fer");
    fer.init = finetune_->checkpoint_path.string();
    fer_ = new StageResult(train_fer(fer));
  }
  static void TearDownTestSuite() {
    delete gan_;
    delete inversion_;
    delete finetune_;
    delete fer_;
  }

  static StageResult* gan_;
  static StageResult* inversion_;
  static StageResult* finetune_;
  static StageResult* fer_;
};

StageResult* Pipeline::gan_ = nullptr;
StageResult* Pipeline::inversion_ = nullptr;
StageResult* Pipeline::finetune_ = nullptr;
StageResult* Pipeline::fer_ = nullptr;

TEST_F(Pipeline, ReportsCarryDeclaredKeys) {
  EXPECT_EQ(keys_of(gan_->report), declared("gan"));
  EXPECT_EQ(keys_of(inversion_->report), declared("inversion"));
  EXPECT_EQ(keys_of(finetune_->report), declared("finetune"));
  EXPECT_EQ(keys_of(fer_->report), declared("fer"));
  for (auto* r : {gan_, inversion_, finetune_, fer_}) {
    EXPECT_TRUE(fs::exists(r->checkpoint_path));
    std::ifstream in(r->report_path);
    EXPECT_EQ(nlohmann::json::parse(in), r->report);
  }
  const double acc = fer_->report["accuracy"];
  EXPECT_GE(acc, 0.0);
  EXPECT_LE(acc, 1.0);
  EXPECT_EQ(fer_->report["confusion"].size(), 7u);
}

TEST_F(Pipeline, GeneratorStaysFrozenAfterPretraining) {
  auto ck_gan = Checkpoint::load(gan_->checkpoint_path);
  for (auto* r : {inversion_, finetune_, fer_}) {
    auto ck = Checkpoint::load(r->checkpoint_path);
    for (const auto& [name, t] : ck_gan.arrays)
      if (name.rfind("generator.", 0) == 0) EXPECT_TRUE(torch::equal(t, ck.arrays.at(name))) << name;
    EXPECT_EQ(r->report["generator_checksum"], gan_->report["generator_checksum"]);
  }
}

TEST_F(Pipeline, ZeroIterationPretrainIsInitializationPlusMeanLatent) {
  auto c = tiny(Stage::gan, "gan0");
  c.iterations = 0;
  auto r = pretrain_generator(c);
  auto ck = Checkpoint::load(r.checkpoint_path);
  seed_everything(c.seed);
  ToyGenerator fresh(c.generator);
  for (const auto& item : fresh->named_parameters())
    EXPECT_TRUE(torch::equal(item.value(), ck.arrays.at("generator." + item.key()))) << item.key();
  EXPECT_GT(ck.arrays.at("generator.w_avg").abs().sum().item<float>(), 0.0f);
}

TEST_F(Pipeline, ZeroIterationInversionLeavesEncoderAtInitialization) {
  auto c = tiny(Stage::inversion, "inv0");
  c.init = gan_->checkpoint_path.string();
  c.iterations = 0;
  auto r = train_inversion(c);
  auto ck = Checkpoint::load(r.checkpoint_path);
  auto gan = Checkpoint::load(gan_->checkpoint_path);
  seed_everything(c.seed);
  AsitEncoder fresh(c.encoder);
  fresh->set_latent_offset(gan.arrays.at("generator.w_avg"));
  for (const auto& item : fresh->named_parameters())
    EXPECT_TRUE(torch::equal(item.value(), ck.arrays.at("encoder." + item.key()))) << item.key();
  EXPECT_EQ(r.report["initial"], r.report["final"]);
}

TEST_F(Pipeline, StageOrderIsEnforced) {
  auto c = tiny(Stage::finetune, "bad_finetune");
  c.init = gan_->checkpoint_path.string();
  EXPECT_THROW(finetune_inversion(c), std::exception);
  auto e = tiny(Stage::evaluate, "bad_eval");
  e.init = inversion_->checkpoint_path.string();
  e.mode = "fer";
  EXPECT_THROW(evaluate(e), ConfigError);
  e.init = fer_->checkpoint_path.string();
  e.mode = "inversion";
  EXPECT_THROW(evaluate(e), ConfigError);
}

TEST_F(Pipeline, MismatchedArchitectureIsRejected) {
  auto c = tiny(Stage::inversion, "bad_arch");
  c.init = gan_->checkpoint_path.string();
  c.critic.trunk.channels = {8, 16, 32, 64, 64};
  EXPECT_THROW(train_inversion(c), LoadError);
}

TEST_F(Pipeline, EvaluateReports) {
  auto e = tiny(Stage::evaluate, "eval_inv");
  e.init = finetune_->checkpoint_path.string();
  auto inv = evaluate(e);
  EXPECT_EQ(keys_of(inv), declared("evaluate_inversion"));
  EXPECT_TRUE(fs::exists(scratch_root() / "eval_inv" / "report.json"));

  auto f = tiny(Stage::evaluate, "eval_fer");
  f.init = fer_->checkpoint_path.string();
  f.mode = "fer";
  auto fer = evaluate(f);
  EXPECT_EQ(keys_of(fer), declared("evaluate_fer"));
  EXPECT_EQ(fer["accuracy"], fer_->report["accuracy"]);
}

TEST_F(Pipeline, MetricsOfReconstructionsAgainstThemselves) {
  auto m = load_models(inversion_->checkpoint_path, RunConfig{});
  auto x = stack_images(sample_dataset(32, 5, Split::test));
  auto y = reconstruct(m.encoder, m.generator, x);
  PerceptualTrunk trunk(m.gan_critic->trunk);
  auto metrics = inversion_metrics(trunk, y, y);
  EXPECT_EQ(keys_of(metrics), declared("metrics_inversion"));
  EXPECT_EQ(metrics["mse"].get<double>(), 0.0);
  EXPECT_NEAR(metrics["ssim"].get<double>(), 1.0, 1e-6);
  EXPECT_NEAR(metrics["fid_proxy"].get<double>(), 0.0, 1e-6);
  EXPECT_TRUE(inversion_metrics(trunk, y.narrow(0, 0, 8), y.narrow(0, 0, 8))["fid_proxy"].is_null());
}

TEST_F(Pipeline, ClassificationMetrics) {
  auto labels = torch::tensor({0, 1, 2, 3, 4, 5, 6, 0}, torch::kLong);
  auto pred = torch::tensor({0, 1, 2, 3, 4, 5, 0, 1}, torch::kLong);
  auto m = classification_metrics(pred, labels);
  EXPECT_DOUBLE_EQ(m["accuracy"].get<double>(), 6.0 / 8);
  EXPECT_EQ(m["confusion"][6][0], 1);
  EXPECT_EQ(m["confusion"][0][1], 1);
  EXPECT_EQ(m["per_class"].size(), 7u);
}

TEST_F(Pipeline, CliVisualCommandsAndLayout) {
  ASSERT_EQ(run_cli("make-dataset --seed 4 --count 7 --out_dir faces"), 0);
  const auto faces = scratch_root() / "faces";
  ASSERT_TRUE(fs::exists(faces / "manifest.csv"));
  const auto a = (faces / "img_00000.png").string(), b = (faces / "img_00001.png").string();
  const auto ckpt = inversion_->checkpoint_path.string();

  ASSERT_EQ(run_cli("invert --seed 1 --init " + ckpt + " --images " + b + ",/nonexistent.png --out_dir inv"), 0);
  auto grid = read_png(scratch_root() / "inv" / "invert_img_00001.png", 0);
  EXPECT_EQ(grid.sizes(), (std::vector<int64_t>{3, 64, 128}));
  std::ifstream report(scratch_root() / "inv" / "report.json");
  auto j = nlohmann::json::parse(report);
  EXPECT_EQ(j["written"].size(), 1u);
  EXPECT_EQ(j["skipped"].size(), 1u);

  ASSERT_EQ(run_cli("mix --seed 1 --init " + ckpt + " --image_a " + a + " --image_b " + b + " --crossover 0 --out_dir mix"), 0);
  auto mixed = read_png(scratch_root() / "mix" / "mix.png", 0);
  EXPECT_EQ(mixed.sizes(), (std::vector<int64_t>{3, 64, 320}));
  EXPECT_TRUE(torch::equal(mixed.narrow(2, 256, 64), grid.narrow(2, 64, 64)));

  ASSERT_EQ(run_cli("viz-attn --seed 1 --init " + ckpt + " --images " + a + " --out_dir attn"), 0);
  EXPECT_EQ(read_png(scratch_root() / "attn" / "attn_img_00000.png", 0).sizes(), (std::vector<int64_t>{3, 64, 128}));
}

TEST_F(Pipeline, CliRejectsBadInvocations) {
  EXPECT_NE(run_cli("make-dataset --count 7"), 0);  // --seed is required
  EXPECT_EQ(run_cli("train-inversion --seed 1 --init /nonexistent.ifer"), 2);
  EXPECT_NE(run_cli("no-such-command --seed 1"), 0);
}
