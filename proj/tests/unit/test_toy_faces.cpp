#include "ifer/errors.hpp"
#include "ifer/pipeline.hpp"
#include "ifer/toy_faces.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <random>
#include <set>
#include <tuple>

using namespace ifer;

TEST(RenderFace, DeterministicAndInUnitRange) {
  FaceParams p;
  p.jitter_seed = 99;
  auto a = render_face(p), b = render_face(p);
  EXPECT_TRUE(torch::equal(a, b));
  EXPECT_EQ(a.sizes(), (std::vector<int64_t>{3, 64, 64}));
  EXPECT_GE(a.min().item<float>(), 0.0f);
  EXPECT_LE(a.max().item<float>(), 1.0f);
}

TEST(RenderFace, MouthCurvatureIsVisible) {
  FaceParams smile, frown;
  smile.mouth_curve = 1.0;
  frown.mouth_curve = -1.0;
  auto changed = (render_face(smile) - render_face(frown)).abs().amax(0) > 0.1f;  // [64, 64]
  EXPECT_GE(changed.sum().item<int64_t>(), 40);
  // Only the mouth moves: nothing above the image centre changes.
  EXPECT_EQ(changed.slice(0, 0, 32).sum().item<int64_t>(), 0);
}

TEST(RenderFace, RejectsOutOfRangeParameters) {
  FaceParams p;
  p.eye_open = 1.5;
  EXPECT_THROW(render_face(p), ValidationError);
  p = {};
  p.cx = 10;
  EXPECT_THROW(render_face(p), ValidationError);
  p = {};
  p.brow = -1.01;
  EXPECT_THROW(p.validate(), ValidationError);
}

TEST(ExpressionLabel, CentreIsNeutral) {
  FaceParams p;
  p.mouth_curve = 0;
  p.eye_open = 0.5;
  p.brow = 0;
  EXPECT_EQ(expression_label(p), Expression::neutral);
}

TEST(ExpressionLabel, TotalOverParameterSpaceAndIgnoresJitter) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u01(0, 1), sym(-1, 1);
  std::array<int, 7> seen{};
  for (int i = 0; i < 100000; ++i) {
    FaceParams p;
    p.eye_open = u01(rng);
    p.brow = sym(rng);
    p.mouth_curve = sym(rng);
    p.mouth_open = u01(rng);
    const auto label = static_cast<int>(expression_label(p));
    ASSERT_GE(label, 0);
    ASSERT_LT(label, 7);
    ++seen[label];
    p.jitter_seed = rng();
    ASSERT_EQ(static_cast<int>(expression_label(p)), label);
  }
  for (int c = 0; c < 7; ++c) EXPECT_GT(seen[c], 0) << kExpressionNames[c];
}

TEST(SampleDataset, SevenSamplesCoverEveryClassOnce) {
  auto data = sample_dataset(7, 3, Split::train);
  std::set<int> classes;
  for (const auto& s : data) {
    classes.insert(static_cast<int>(s.label));
    EXPECT_EQ(s.label, expression_label(s.params));
  }
  EXPECT_EQ(classes.size(), 7u);
}

TEST(SampleDataset, FixedSeedReproducesHash) {
  auto a = sample_dataset(21, 4, Split::val), b = sample_dataset(21, 4, Split::val);
  EXPECT_EQ(dataset_hash(a), dataset_hash(b));
  EXPECT_NE(dataset_hash(a), dataset_hash(sample_dataset(21, 5, Split::val)));
}

TEST(SampleDataset, SplitsShareNoParameterSet) {
  auto key = [](const FaceParams& p) {
    return std::make_tuple(p.cx, p.cy, p.ax, p.ay, p.skin, p.eye_open, p.brow, p.mouth_curve, p.mouth_open,
                           p.jitter_seed);
  };
  std::set<decltype(key(FaceParams{}))> train;
  for (const auto& p : sample_params(10000, 6, Split::train)) train.insert(key(p));
  for (auto split : {Split::val, Split::test})
    for (const auto& p : sample_params(10000, 6, split)) ASSERT_EQ(train.count(key(p)), 0u);
}

TEST(SampleDataset, ImagesAndLabelsStack) {
  auto data = sample_dataset(14, 7, Split::test);
  EXPECT_EQ(stack_images(data).sizes(), (std::vector<int64_t>{14, 3, 64, 64}));
  auto labels = stack_labels(data);
  EXPECT_EQ(torch::bincount(labels, {}, 7).min().item<int64_t>(), 2);
}

TEST(ExportDataset, ManifestRoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / "ifer_export_test";
  std::filesystem::remove_all(dir);
  auto data = sample_dataset(9, 8, Split::train);
  export_dataset(data, dir);
  EXPECT_TRUE(std::filesystem::exists(dir / "manifest.csv"));
  auto [images, labels] = load_manifest(dir);
  EXPECT_TRUE(torch::equal(labels, stack_labels(data)));
  // PNG stores 8 bits per channel.
  EXPECT_LE((images - stack_images(data)).abs().max().item<float>(), 0.5f / 255 + 1e-6f);
  std::filesystem::remove_all(dir);
}

TEST(Names, RoundTrip) {
  for (int c = 0; c < 7; ++c)
    EXPECT_EQ(expression_from_string(to_string(static_cast<Expression>(c))), static_cast<Expression>(c));
  EXPECT_THROW(expression_from_string("contempt"), ValidationError);
  EXPECT_EQ(split_from_string("val"), Split::val);
  EXPECT_THROW(split_from_string("dev"), ConfigError);
}
