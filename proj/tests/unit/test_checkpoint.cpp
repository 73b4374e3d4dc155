#include "micro.hpp"

#include "ifer/checkpoint.hpp"
#include "ifer/errors.hpp"
#include "ifer/synthesis.hpp"

#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>

using namespace ifer;
using namespace ifer::testing;

namespace {

Checkpoint sample_checkpoint() {
  torch::manual_seed(1);
  Checkpoint ck;
  ck.stage = "gan";
  ck.iteration = 1234;
  ck.capture_rng();
  ToyGenerator g(micro_generator(8));
  ck.architecture = g->config().record();
  ck.store("generator", *g);
  ck.arrays["extra.scalar"] = torch::tensor(3.5f).reshape({});
  ck.arrays["extra.special"] = torch::tensor({-0.0f, std::numeric_limits<float>::denorm_min(), 1e30f});
  return ck;
}

}  // namespace

TEST(Checkpoint, BytesRoundTripExactly) {
  auto ck = sample_checkpoint();
  auto bytes = ck.to_bytes();
  auto back = Checkpoint::from_bytes(bytes);
  EXPECT_EQ(back.to_bytes(), bytes);
  EXPECT_EQ(back.stage, "gan");
  EXPECT_EQ(back.iteration, 1234u);
  EXPECT_EQ(back.rng_state, ck.rng_state);
  EXPECT_EQ(back.architecture, ck.architecture);
  ASSERT_EQ(back.arrays.size(), ck.arrays.size());
  for (const auto& [name, t] : ck.arrays) {
    const auto& u = back.arrays.at(name);
    EXPECT_EQ(u.sizes(), t.sizes()) << name;
    EXPECT_EQ(std::memcmp(u.data_ptr(), t.contiguous().data_ptr(), t.numel() * sizeof(float)), 0) << name;
  }
  EXPECT_EQ(back.hash(), ck.hash());
}

TEST(Checkpoint, FileRoundTripAndLayout) {
  auto ck = sample_checkpoint();
  const auto path = std::filesystem::temp_directory_path() / "ifer_ckpt_test.ifer";
  ck.save(path);
  auto back = Checkpoint::load(path);
  EXPECT_EQ(back.to_bytes(), ck.to_bytes());
  auto bytes = ck.to_bytes();
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 9), "IFERCKPT1");
  EXPECT_EQ(bytes[9], 1);  // schema version, little-endian
  EXPECT_EQ(bytes[10] | bytes[11] | bytes[12], 0);
  std::filesystem::remove(path);
}

TEST(Checkpoint, RejectsCorruptInput) {
  auto bytes = sample_checkpoint().to_bytes();
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(Checkpoint::from_bytes(bad_magic), LoadError);
  auto bad_version = bytes;
  bad_version[9] = 2;
  EXPECT_THROW(Checkpoint::from_bytes(bad_version), LoadError);
  auto truncated = bytes;
  truncated.resize(bytes.size() - 3);
  EXPECT_THROW(Checkpoint::from_bytes(truncated), LoadError);
  auto trailing = bytes;
  trailing.push_back(0);
  EXPECT_THROW(Checkpoint::from_bytes(trailing), LoadError);
  EXPECT_THROW(Checkpoint::load("/nonexistent/ckpt.ifer"), LoadError);
}

TEST(Checkpoint, ArchitectureMismatchIsRejectedByKey) {
  auto ck = sample_checkpoint();
  EXPECT_NO_THROW(ck.require_architecture(ck.architecture));
  auto other = micro_generator(16).record();
  try {
    ck.require_architecture(other);
    FAIL() << "expected LoadError";
  } catch (const LoadError& e) {
    EXPECT_NE(std::string(e.what()).find("generator."), std::string::npos);
  }
}

TEST(Checkpoint, RestoreIntoModule) {
  auto ck = sample_checkpoint();
  torch::manual_seed(99);
  ToyGenerator g(micro_generator(8));
  ck.restore("generator", *g);
  for (const auto& item : g->named_parameters())
    EXPECT_TRUE(torch::equal(item.value(), ck.arrays.at("generator." + item.key())));
  EXPECT_TRUE(ck.has_prefix("generator"));
  EXPECT_FALSE(ck.has_prefix("encoder"));

  ToyGenerator wrong(micro_generator(16));
  EXPECT_THROW(ck.restore("generator", *wrong), LoadError);
  EXPECT_THROW(ck.restore("encoder", *g), LoadError);
}

TEST(Checkpoint, RngStateRestoresStream) {
  torch::manual_seed(7);
  Checkpoint ck;
  ck.capture_rng();
  auto a = torch::randn({16});
  auto restored = Checkpoint::from_bytes(ck.to_bytes());
  restored.restore_rng();
  EXPECT_TRUE(torch::equal(torch::randn({16}), a));
}
