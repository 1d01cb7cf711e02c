#include <gtest/gtest.h>

#include <cmath>

#include "ditfuse/error.hpp"
#include "ditfuse/imaging.hpp"
#include "support.hpp"

using namespace ditfuse;
using ditfuse::test::random_image;
using ditfuse::test::random_mask;
using ditfuse::test::TempDir;

namespace {

ImageBuf uniform(std::size_t h, std::size_t w, float r, float g, float b) {
  ImageBuf img(h, w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      img.at(y, x, 0) = r;
      img.at(y, x, 1) = g;
      img.at(y, x, 2) = b;
    }
  return img;
}

// Direct 2-D Gaussian convolution with mirrored borders, no separability.
double brute_blur(const ImageBuf& img, std::size_t y, std::size_t x, std::size_t c, double sigma) {
  const int radius = static_cast<int>(std::ceil(3 * sigma));
  auto mirror = [](int i, int n) {
    while (i < 0 || i >= n) i = i < 0 ? -i - 1 : 2 * n - i - 1;
    return i;
  };
  double norm = 0;
  for (int k = -radius; k <= radius; ++k) norm += std::exp(-k * k / (2 * sigma * sigma));
  double acc = 0;
  for (int dy = -radius; dy <= radius; ++dy)
    for (int dx = -radius; dx <= radius; ++dx) {
      const double w = std::exp(-(dy * dy + dx * dx) / (2 * sigma * sigma)) / (norm * norm);
      acc += w * img.at(mirror(static_cast<int>(y) + dy, static_cast<int>(img.height())),
                        mirror(static_cast<int>(x) + dx, static_cast<int>(img.width())), c);
    }
  return std::clamp(acc, 0.0, 1.0);
}

}  // namespace

TEST(Degrade, ZeroNoiseIsIdentity) {
  Rng rng(1);
  auto img = random_image(12, 9, rng);
  auto out = degrade(img, MaskBuf(12, 9, true), {DegradeKind::GaussNoise, 0.0}, rng);
  EXPECT_EQ(out, img);
}

TEST(Degrade, BlurOfConstantIsConstant) {
  for (double sigma : {0.3, 1.0, 2.5, 7.0}) {
    auto img = uniform(10, 14, 0.25f, 0.5f, 0.75f);
    Rng rng(2);
    auto out = degrade(img, MaskBuf(10, 14, true), {DegradeKind::Blur, sigma}, rng);
    EXPECT_EQ(out, img) << sigma;
  }
}

TEST(Degrade, NoiseMaskMeanNearHalf) {
  Rng rng(3);
  auto img = uniform(16, 16, 0, 0, 0);
  auto out = degrade(img, MaskBuf(16, 16, true), {DegradeKind::NoiseMask, 0}, rng);
  double s = 0;
  for (float v : out.data()) s += v;
  const double m = s / static_cast<double>(out.data().size());
  EXPECT_GE(m, 0.40);
  EXPECT_LE(m, 0.60);
}

TEST(Degrade, BlurMatchesDirectConvolution) {
  Rng rng(4);
  auto img = random_image(11, 13, rng);
  for (double sigma : {0.7, 1.5, 3.0}) {
    auto out = degrade(img, MaskBuf(11, 13, true), {DegradeKind::Blur, sigma}, rng);
    for (std::size_t y = 0; y < 11; ++y)
      for (std::size_t x = 0; x < 13; ++x)
        for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(out.at(y, x, c), brute_blur(img, y, x, c, sigma), 1e-6);
  }
}

TEST(Degrade, OutsideRegionBitIdenticalForEveryKind) {
  Rng rng(5);
  for (int trial = 0; trial < 30; ++trial) {
    auto img = random_image(9, 11, rng);
    auto region = random_mask(9, 11, rng, 0.3);
    for (auto kind : {DegradeKind::Blur, DegradeKind::GaussNoise, DegradeKind::NoiseMask}) {
      auto out = degrade(img, region, {kind, 1.3}, rng);
      for (std::size_t y = 0; y < 9; ++y)
        for (std::size_t x = 0; x < 11; ++x)
          if (!region.at(y, x))
            for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(out.at(y, x, c), img.at(y, x, c));
      for (float v : out.data()) {
        EXPECT_GE(v, 0.0f);
        EXPECT_LE(v, 1.0f);
      }
    }
  }
}

TEST(Degrade, RectMatchesMaskForm) {
  Rng rng(6);
  auto img = random_image(16, 16, rng);
  Rect r{3, 4, 10, 13};
  for (auto kind : {DegradeKind::Blur, DegradeKind::GaussNoise, DegradeKind::NoiseMask}) {
    Rng r1(77), r2(77);
    ImageBuf out = img;
    degrade_rect(img, out, r, {kind, 1.1}, r1);
    EXPECT_EQ(out, degrade(img, rect_mask(16, 16, r), {kind, 1.1}, r2));
  }
}

TEST(Degrade, BadParamsRejected) {
  Rng rng(7);
  auto img = uniform(4, 4, 0.5f, 0.5f, 0.5f);
  try {
    degrade(img, MaskBuf(4, 4, true), {DegradeKind::Blur, 0.0}, rng);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::BadParam);
  }
  try {
    degrade(img, MaskBuf(3, 4, true), {DegradeKind::Blur, 1.0}, rng);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ShapeMismatch);
  }
}

TEST(Degrade, SeedDeterminism) {
  Rng src(8);
  auto img = random_image(8, 8, src);
  Rng a(42), b(42);
  EXPECT_EQ(degrade(img, MaskBuf(8, 8, true), {DegradeKind::GaussNoise, 0.1}, a),
            degrade(img, MaskBuf(8, 8, true), {DegradeKind::GaussNoise, 0.1}, b));
}

// ---------------------------------------------------------------- photometric

TEST(Photometric, HandValues) {
  auto half = uniform(1, 1, 0.5f, 0.5f, 0.5f);
  EXPECT_NEAR(adjust_photometric(half, SubTag::LightPlus).at(0, 0, 0), 0.6f, 1e-6);
  EXPECT_NEAR(adjust_photometric(half, SubTag::LightMinus).at(0, 0, 0), 0.4f, 1e-6);
  EXPECT_NEAR(adjust_photometric(half, SubTag::LightMinusMinus).at(0, 0, 0), 0.3f, 1e-6);
  EXPECT_NEAR(adjust_photometric(half, SubTag::ContrastPlus).at(0, 0, 0), 0.5f, 1e-6);
  EXPECT_NEAR(adjust_photometric(half, SubTag::ContrastMinus).at(0, 0, 0), 0.5f, 1e-6);
  EXPECT_EQ(adjust_photometric(uniform(1, 1, 0.9f, 0.9f, 0.9f), SubTag::LightPlusPlus).at(0, 0, 1), 1.0f);
  EXPECT_NEAR(adjust_photometric(uniform(1, 1, 0.9f, 0.9f, 0.9f), SubTag::ContrastPlus).at(0, 0, 2), 1.0f, 1e-6);
  EXPECT_NEAR(adjust_photometric(uniform(1, 1, 0.9f, 0.9f, 0.9f), SubTag::ContrastMinus).at(0, 0, 2), 0.78f, 1e-6);
}

TEST(Photometric, FusionSubtagRejected) {
  try {
    adjust_photometric(uniform(1, 1, 0, 0, 0), SubTag::MultiFocus);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::UnknownSubtag);
  }
}

TEST(Photometric, LightTagsMonotone) {
  Rng rng(9);
  for (auto tag : {SubTag::LightPlusPlus, SubTag::LightPlus, SubTag::LightMinus, SubTag::LightMinusMinus}) {
    for (int i = 0; i < 500; ++i) {
      float p1 = static_cast<float>(rng.uniform()), p2 = static_cast<float>(rng.uniform());
      if (p1 > p2) std::swap(p1, p2);
      const float o1 = adjust_photometric(uniform(1, 1, p1, p1, p1), tag).at(0, 0, 0);
      const float o2 = adjust_photometric(uniform(1, 1, p2, p2, p2), tag).at(0, 0, 0);
      EXPECT_LE(o1, o2);
      EXPECT_GE(o1, 0.0f);
      EXPECT_LE(o2, 1.0f);
    }
  }
}

// ---------------------------------------------------------------- overlay

TEST(Overlay, EmptyMaskIsIdentity) {
  Rng rng(10);
  auto img = random_image(5, 6, rng);
  EXPECT_EQ(overlay_mask(img, MaskBuf(5, 6, false)), img);
}

TEST(Overlay, BlendArithmetic) {
  auto out = overlay_mask(uniform(1, 1, 1, 0, 0), MaskBuf(1, 1, true));
  EXPECT_FLOAT_EQ(out.at(0, 0, 0), 0.5f);
  EXPECT_FLOAT_EQ(out.at(0, 0, 1), 0.0f);
  EXPECT_FLOAT_EQ(out.at(0, 0, 2), 0.5f);
  EXPECT_EQ(overlay_mask(uniform(3, 3, 0, 0, 0), MaskBuf(3, 3, true)), uniform(3, 3, 0, 0, 0.5f));
}

TEST(RecoverMask, RoundTripOverRandomMasks) {
  Rng rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    auto img = random_image(8, 10, rng);
    for (auto& v : img.data()) v = std::min(v, 0.99f);
    auto mask = random_mask(8, 10, rng, rng.uniform());
    EXPECT_EQ(recover_mask(overlay_mask(img, mask), img), mask);
  }
}

TEST(RecoverMask, EdgeCases) {
  Rng rng(12);
  auto img = random_image(4, 4, rng);
  EXPECT_EQ(recover_mask(img, img).count(), 0u);
  EXPECT_EQ(recover_mask(uniform(4, 4, 0, 0, 0.5f), uniform(4, 4, 0, 0, 0)).count(), 16u);
  EXPECT_THROW(recover_mask(img, uniform(4, 5, 0, 0, 0)), Error);
}

// ---------------------------------------------------------------- mean fusion

TEST(MeanFuse, Values) {
  Rng rng(13);
  auto a = random_image(3, 3, rng);
  EXPECT_EQ(mean_fuse(a, a), a);
  EXPECT_EQ(mean_fuse(uniform(2, 2, 0, 0, 0), uniform(2, 2, 1, 1, 1)), uniform(2, 2, 0.5f, 0.5f, 0.5f));
  EXPECT_NEAR(mean_fuse(uniform(1, 1, 0.2f, 0.2f, 0.2f), uniform(1, 1, 0.6f, 0.6f, 0.6f)).at(0, 0, 0), 0.4f, 1e-7);
  EXPECT_THROW(mean_fuse(a, uniform(3, 4, 0, 0, 0)), Error);
}

// ---------------------------------------------------------------- PNG

TEST(Png, EightBitRoundTrip) {
  Rng rng(14);
  auto img = quantize8(random_image(7, 5, rng));
  EXPECT_EQ(decode_png(encode_png(img)), img);
  TempDir dir("png");
  write_png(dir / "x.png", img);
  EXPECT_EQ(read_png(dir / "x.png"), img);
}

TEST(Png, QuantizationIsRoundToNearest) {
  auto img = quantize8(uniform(1, 1, 0.5f, 1.0f / 255.0f * 0.49f, 1.0f));
  EXPECT_FLOAT_EQ(img.at(0, 0, 0), 128.0f / 255.0f);
  EXPECT_FLOAT_EQ(img.at(0, 0, 1), 0.0f);
  EXPECT_FLOAT_EQ(img.at(0, 0, 2), 1.0f);
}

TEST(Png, MaskRoundTrip) {
  Rng rng(15);
  auto m = random_mask(6, 9, rng);
  TempDir dir("mask");
  write_mask_png(dir / "m.png", m);
  EXPECT_EQ(read_mask_png(dir / "m.png"), m);
}

TEST(Png, MissingFileIsIoError) {
  try {
    read_png("/nonexistent/ditfuse.png");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::IoError);
  }
}

TEST(Png, GarbageBytesIsIoError) {
  const std::vector<std::uint8_t> junk = {1, 2, 3, 4, 5, 6, 7, 8, 9};
  EXPECT_THROW(decode_png(junk), Error);
}
