#include <gtest/gtest.h>

#include <random>

#include "smis/image_io.hpp"
#include "smis/mask.hpp"
#include "smis/prototyping.hpp"

using namespace smis;

namespace {

SemanticMask random_mask(int w, int h, int classes, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> d(0, classes - 1);
  auto m = SemanticMask::dense(w, h, classes);
  for (auto& l : m.labels) l = static_cast<ClassId>(d(rng));
  return m;
}

}  // namespace

TEST(ResizeMask, UniformStaysUniform) {
  const auto m = SemanticMask::dense(8, 8, 3, 0);
  EXPECT_EQ(resize_mask_to_feature_grid(m, 4, 4), SemanticMask::dense(4, 4, 3, 0));
}

TEST(ResizeMask, HalvesArePreserved) {
  auto m = SemanticMask::dense(8, 8, 2, 0);
  for (int y = 0; y < 8; ++y)
    for (int x = 4; x < 8; ++x) m.at(x, y) = 1;
  const auto r = resize_mask_to_feature_grid(m, 4, 4);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) EXPECT_EQ(r.at(x, y), x < 2 ? 0 : 1);
}

TEST(ResizeMask, MatchesBlockMajorityOracle) {
  std::mt19937_64 rng(42);
  for (int trial = 0; trial < 50; ++trial) {
    const auto m = random_mask(8, 8, 4, rng);
    const auto r = resize_mask_to_feature_grid(m, 4, 4);
    for (int cy = 0; cy < 4; ++cy)
      for (int cx = 0; cx < 4; ++cx) {
        int votes[4] = {0, 0, 0, 0};
        for (int dy = 0; dy < 2; ++dy)
          for (int dx = 0; dx < 2; ++dx) ++votes[m.at(2 * cx + dx, 2 * cy + dy)];
        int best = 0;
        for (int c = 1; c < 4; ++c)
          if (votes[c] > votes[best]) best = c;
        ASSERT_EQ(r.at(cx, cy), best);
      }
  }
}

TEST(ResizeMask, ZeroTargetIsAnError) {
  EXPECT_THROW(resize_mask_to_feature_grid(SemanticMask::dense(4, 4, 2), 0, 4), InputError);
}

TEST(ResizeMask, UnknownDoesNotVote) {
  auto m = SemanticMask::sparse(4, 4, 3);
  m.at(0, 0) = 2;
  const auto r = resize_majority(m, 2, 2);
  EXPECT_EQ(r.at(0, 0), 2);
  EXPECT_EQ(r.at(1, 0), kUnknown);
  EXPECT_EQ(r.at(1, 1), kUnknown);
}

TEST(UpscaleMask, IdentityAndBlocks) {
  std::mt19937_64 rng(1);
  const auto m = random_mask(5, 3, 3, rng);
  EXPECT_EQ(upscale_mask(m, 5, 3), m);
  auto s = SemanticMask::sparse(2, 2, 2);
  s.at(1, 0) = 1;
  const auto up = upscale_mask(s, 4, 4);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) EXPECT_EQ(up.at(x, y), (x >= 2 && y < 2) ? 1 : kUnknown);
}

TEST(UpscaleMask, RoundTripThroughMajorityRecoversOriginal) {
  std::mt19937_64 rng(9);
  const auto m = random_mask(64, 64, 5, rng);
  const auto up = upscale_mask(m, 256, 256);
  EXPECT_EQ(resize_majority(up, 64, 64), m);
}

TEST(UpscaleMask, ShrinkingIsAnError) {
  EXPECT_THROW(upscale_mask(SemanticMask::dense(4, 4, 2), 2, 4), InputError);
}

TEST(SemanticMask, ValidateRejectsBadLabels) {
  auto d = SemanticMask::dense(2, 2, 2);
  d.at(0, 0) = kUnknown;
  EXPECT_THROW(d.validate(), InputError);
  auto s = SemanticMask::sparse(2, 2, 2);
  s.at(0, 0) = 2;
  EXPECT_THROW(s.validate(), InputError);
  s.at(0, 0) = 1;
  EXPECT_NO_THROW(s.validate());
}

TEST(OneHot, UnknownUsesTrailingChannel) {
  auto s = SemanticMask::sparse(2, 1, 2);
  s.at(0, 0) = 1;
  const auto v = one_hot<float>(s, 3);
  EXPECT_EQ(v(1, 0, 0), 1.0f);
  EXPECT_EQ(v(2, 0, 1), 1.0f);
  EXPECT_EQ(v(0, 0, 0) + v(0, 0, 1), 0.0f);
  EXPECT_THROW(one_hot<float>(s, 2), InputError);
}

TEST(MaskPng, RoundTripKeepsIndicesAndUnknown) {
  auto s = SemanticMask::sparse(7, 5, 4);
  s.at(3, 2) = 3;
  s.at(0, 4) = 0;
  const auto bytes = encode_mask_png(s);
  EXPECT_EQ(decode_mask_png(bytes, 4, MaskKind::sparse), s);
  EXPECT_EQ(encode_mask_png(s), bytes);
  EXPECT_THROW(decode_mask_png(bytes, 3, MaskKind::sparse), InputError);  // class 3 out of range
}

TEST(ImagePng, RoundTripWithinQuantisation) {
  Volume<float> img(3, 4, 6);
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<float> u(-1, 1);
  for (auto& v : img.data) v = u(rng);
  const auto back = decode_image_png(encode_image_png(img));
  ASSERT_TRUE(back.same_shape(img));
  for (std::size_t i = 0; i < img.size(); ++i) EXPECT_NEAR(back.data[i], img.data[i], 1.0 / 127.5);
  EXPECT_THROW(decode_image_png("garbage-bytes"), InputError);
}
