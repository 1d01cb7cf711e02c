#include <gtest/gtest.h>

#include <cmath>

#include "ditfuse/error.hpp"
#include "ditfuse/metrics.hpp"
#include "support.hpp"

using namespace ditfuse;
using namespace ditfuse::test;

namespace {

ImageBuf gray_image(std::size_t h, std::size_t w, const std::function<float(std::size_t, std::size_t)>& f) {
  ImageBuf img(h, w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c) img.at(y, x, c) = f(y, x);
  return img;
}

GrayImage gray(std::size_t h, std::size_t w, const std::function<double(std::size_t, std::size_t)>& f) {
  GrayImage g{h, w, std::vector<double>(h * w)};
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) g.data[y * w + x] = f(y, x);
  return g;
}

MaskBuf rect_mask(std::size_t n, std::size_t y0, std::size_t y1, std::size_t x0, std::size_t x1) {
  MaskBuf m(n, n);
  for (std::size_t y = y0; y < y1; ++y)
    for (std::size_t x = x0; x < x1; ++x) m.set(y, x, true);
  return m;
}

}  // namespace

// ---------------------------------------------------------------- gray

TEST(Gray, Weights) {
  ImageBuf img(1, 1);
  img.at(0, 0, 0) = 1.0f;
  EXPECT_NEAR(to_gray_image(img).data[0], 0.299, 1e-7);
  img.at(0, 0, 1) = 1.0f;
  img.at(0, 0, 2) = 1.0f;
  EXPECT_NEAR(to_gray_image(img).data[0], 1.0, 1e-6);
}

// ---------------------------------------------------------------- mse / psnr

TEST(MsePsnr, IdenticalGivesInfinity) {
  Rng rng(1);
  auto a = random_image(5, 4, rng);
  auto r = mse_psnr(a, a, a);
  EXPECT_EQ(r.mse, 0.0);
  EXPECT_EQ(r.psnr, kPsnrInf);
}

TEST(MsePsnr, TwentyDecibels) {
  EXPECT_NEAR(psnr_from_mse(0.01), 20.0, 1e-9);
  // F = 0.1, A = B = 0 everywhere: mse 0.01.
  auto f = gray_image(4, 4, [](auto, auto) { return 0.1f; });
  auto z = gray_image(4, 4, [](auto, auto) { return 0.0f; });
  auto r = mse_psnr(f, z, z);
  EXPECT_NEAR(r.mse, 0.01, 1e-8);
  EXPECT_NEAR(r.psnr, 20.0, 1e-5);
}

TEST(MsePsnr, MeanFuseOfBlackAndWhite) {
  auto a = gray_image(3, 3, [](auto, auto) { return 0.0f; });
  auto b = gray_image(3, 3, [](auto, auto) { return 1.0f; });
  auto r = mse_psnr(mean_fuse(a, b), a, b);
  EXPECT_NEAR(r.mse, 0.25, 1e-12);
  EXPECT_NEAR(r.psnr, 10.0 * std::log10(4.0), 1e-9);
}

TEST(MsePsnr, AveragesBothSources) {
  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    auto f = random_image(4, 6, rng), a = random_image(4, 6, rng), b = random_image(4, 6, rng);
    auto gf = to_gray_image(f), ga = to_gray_image(a), gb = to_gray_image(b);
    double sa = 0, sb = 0;
    for (std::size_t i = 0; i < gf.data.size(); ++i) {
      sa += (gf.data[i] - ga.data[i]) * (gf.data[i] - ga.data[i]);
      sb += (gf.data[i] - gb.data[i]) * (gf.data[i] - gb.data[i]);
    }
    const double want = 0.5 * (sa + sb) / static_cast<double>(gf.data.size());
    EXPECT_NEAR(mse_psnr(f, a, b).mse, want, 1e-12);
  }
}

TEST(MsePsnr, MonotoneInMse) {
  Rng rng(3);
  double prev_mse = 1e-9, prev_psnr = psnr_from_mse(prev_mse);
  for (int i = 0; i < 500; ++i) {
    const double mse = prev_mse * (1.0 + rng.uniform(1e-6, 0.1));
    const double p = psnr_from_mse(mse);
    EXPECT_LT(p, prev_psnr);
    prev_mse = mse;
    prev_psnr = p;
  }
  EXPECT_EQ(psnr_from_mse(0.0), kPsnrInf);
}

TEST(MsePsnr, ShapeMismatch) {
  ImageBuf a(2, 2), b(2, 3);
  EXPECT_THROW(mse_psnr(a, a, b), Error);
  EXPECT_THROW(mse_psnr(b, a, a), Error);
}

// ---------------------------------------------------------------- EN / SD

TEST(Entropy, Examples) {
  EXPECT_EQ(entropy(gray(4, 4, [](auto, auto) { return 0.3; })), 0.0);
  EXPECT_NEAR(entropy(gray(4, 4, [](auto y, auto) { return y < 2 ? 0.0 : 1.0; })), 1.0, 1e-12);
  // Four equiprobable levels: 2 bits.
  EXPECT_NEAR(entropy(gray(4, 4, [](auto y, auto) { return static_cast<double>(y) * 80.0 / 255.0; })), 2.0, 1e-12);
}

TEST(Entropy, BinsByRounding) {
  // 0.5/255 rounds up to bin 1, 0.49/255 rounds down to bin 0.
  EXPECT_EQ(entropy(gray(1, 2, [](auto, auto x) { return x == 0 ? 0.0 : 0.49 / 255.0; })), 0.0);
  EXPECT_NEAR(entropy(gray(1, 2, [](auto, auto x) { return x == 0 ? 0.0 : 0.51 / 255.0; })), 1.0, 1e-12);
}

TEST(Entropy, BoundedByLogOfPixelCount) {
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    auto img = random_image(8, 8, rng);
    const double en = entropy(img);
    EXPECT_GE(en, 0.0);
    EXPECT_LE(en, 6.0 + 1e-12);
  }
}

TEST(Sd, Examples) {
  EXPECT_EQ(sd(gray(3, 3, [](auto, auto) { return 0.7; })), 0.0);
  EXPECT_NEAR(sd(gray(4, 4, [](auto, auto x) { return x % 2 ? 1.0 : 0.0; })), 0.5, 1e-15);
}

TEST(Sd, MatchesTwoPassFormula) {
  Rng rng(5);
  auto g = to_gray_image(random_image(7, 5, rng));
  double m = 0;
  for (double v : g.data) m += v;
  m /= static_cast<double>(g.data.size());
  double s = 0;
  for (double v : g.data) s += (v - m) * (v - m);
  EXPECT_NEAR(sd(g), std::sqrt(s / static_cast<double>(g.data.size())), 1e-12);
}

// ---------------------------------------------------------------- SF / AG

TEST(SpatialFrequency, Examples) {
  EXPECT_EQ(spatial_frequency(gray(4, 4, [](auto, auto) { return 0.2; })), 0.0);
  EXPECT_NEAR(spatial_frequency(gray(4, 6, [](auto, auto x) { return x % 2 ? 1.0 : 0.0; })), 1.0, 1e-15);
  EXPECT_NEAR(spatial_frequency(gray(5, 5, [](auto y, auto x) { return (x + y) % 2 ? 1.0 : 0.0; })), std::sqrt(2.0), 1e-15);
}

TEST(SpatialFrequency, BruteForce) {
  Rng rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t h = 2 + rng.index(6), w = 2 + rng.index(6);
    auto g = gray(h, w, [&](auto, auto) { return rng.uniform(); });
    double rf = 0, cf = 0;
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 1; x < w; ++x) rf += std::pow(g.at(y, x) - g.at(y, x - 1), 2);
    for (std::size_t y = 1; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) cf += std::pow(g.at(y, x) - g.at(y - 1, x), 2);
    rf /= static_cast<double>(h * (w - 1));
    cf /= static_cast<double>((h - 1) * w);
    EXPECT_NEAR(spatial_frequency(g), std::sqrt(rf + cf), 1e-12);
  }
}

TEST(AverageGradient, Examples) {
  EXPECT_EQ(average_gradient(gray(4, 4, [](auto, auto) { return 0.9; })), 0.0);
  const double s = 0.05;
  EXPECT_NEAR(average_gradient(gray(4, 8, [&](auto, auto x) { return s * static_cast<double>(x); })), s / std::sqrt(2.0), 1e-12);
  EXPECT_NEAR(average_gradient(gray(6, 6, [](auto y, auto x) { return (x + y) % 2 ? 1.0 : 0.0; })), 1.0, 1e-15);
}

TEST(AverageGradient, BruteForce) {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t h = 2 + rng.index(6), w = 2 + rng.index(6);
    auto g = gray(h, w, [&](auto, auto) { return rng.uniform(); });
    double s = 0;
    for (std::size_t y = 0; y + 1 < h; ++y)
      for (std::size_t x = 0; x + 1 < w; ++x) {
        const double dx = g.at(y, x + 1) - g.at(y, x), dy = g.at(y + 1, x) - g.at(y, x);
        s += std::sqrt((dx * dx + dy * dy) / 2.0);
      }
    EXPECT_NEAR(average_gradient(g), s / static_cast<double>((h - 1) * (w - 1)), 1e-12);
  }
}

TEST(Metrics, ImageFormsMatchGrayForms) {
  Rng rng(8);
  auto img = random_image(6, 7, rng);
  auto g = to_gray_image(img);
  EXPECT_EQ(entropy(img), entropy(g));
  EXPECT_EQ(sd(img), sd(g));
  EXPECT_EQ(spatial_frequency(img), spatial_frequency(g));
  EXPECT_EQ(average_gradient(img), average_gradient(g));
}

TEST(Metrics, DegenerateInputs) {
  EXPECT_THROW(entropy(GrayImage{}), Error);
  EXPECT_THROW(sd(GrayImage{}), Error);
  EXPECT_THROW(spatial_frequency(gray(1, 5, [](auto, auto) { return 0.0; })), Error);
  EXPECT_THROW(average_gradient(gray(5, 1, [](auto, auto) { return 0.0; })), Error);
  EXPECT_THROW(entropy(ImageBuf{}), Error);
}

// ---------------------------------------------------------------- mIoU

TEST(Miou, Examples) {
  auto full = rect_mask(4, 0, 4, 0, 4);
  auto left = rect_mask(4, 0, 4, 0, 2), right = rect_mask(4, 0, 4, 2, 4), top = rect_mask(4, 0, 2, 0, 4);

  auto same = miou({left}, {left}, {1});
  EXPECT_DOUBLE_EQ(same.mean, 1.0);

  auto disjoint = miou({left}, {right}, {1});
  EXPECT_DOUBLE_EQ(disjoint.mean, 0.0);

  auto third = miou({left}, {top}, {1});
  ASSERT_EQ(third.per_class.size(), 1u);
  EXPECT_DOUBLE_EQ(third.per_class[0].second, 1.0 / 3.0);

  // Class 0 never appears with a full mask on both sides, so only class 1 counts.
  auto absent = miou({full}, {full});
  ASSERT_EQ(absent.per_class.size(), 1u);
  EXPECT_EQ(absent.per_class[0].first, 1);
  EXPECT_DOUBLE_EQ(absent.mean, 1.0);
}

TEST(Miou, DatasetLevelPooling) {
  // IoU is pooled over the set, not averaged per image.
  auto a = rect_mask(2, 0, 2, 0, 2);      // 4 px
  auto b = rect_mask(2, 0, 1, 0, 1);      // 1 px
  auto empty = MaskBuf(2, 2);
  auto r = miou({a, empty}, {a, b}, {1});
  EXPECT_DOUBLE_EQ(r.mean, 4.0 / 5.0);
}

TEST(Miou, BruteForceConfusion) {
  Rng rng(9);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 1 + rng.index(4);
    const int k = 2 + static_cast<int>(rng.index(3));
    std::vector<std::vector<int>> preds(n), gts(n);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t px = 1 + rng.index(30);
      for (std::size_t p = 0; p < px; ++p) {
        preds[i].push_back(static_cast<int>(rng.index(static_cast<std::size_t>(k))));
        gts[i].push_back(static_cast<int>(rng.index(static_cast<std::size_t>(k))));
      }
    }
    std::vector<std::vector<long>> conf(k, std::vector<long>(k, 0));
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t p = 0; p < preds[i].size(); ++p) ++conf[gts[i][p]][preds[i][p]];
    std::vector<int> classes;
    for (int c = 0; c < k; ++c) classes.push_back(c);
    const auto r = miou(preds, gts, classes);
    double total = 0;
    std::size_t included = 0;
    for (int c = 0; c < k; ++c) {
      long tp = conf[c][c], row = 0, col = 0;
      for (int j = 0; j < k; ++j) {
        row += conf[c][j];
        col += conf[j][c];
      }
      const long uni = row + col - tp;
      if (uni == 0) continue;
      const double iou = static_cast<double>(tp) / static_cast<double>(uni);
      ASSERT_LT(included, r.per_class.size());
      EXPECT_EQ(r.per_class[included].first, c);
      EXPECT_EQ(r.per_class[included].second, iou);
      total += iou;
      ++included;
    }
    EXPECT_EQ(r.per_class.size(), included);
    EXPECT_DOUBLE_EQ(r.mean, total / static_cast<double>(included));
  }
}

TEST(Miou, Errors) {
  auto m = rect_mask(4, 0, 2, 0, 2);
  EXPECT_EQ([&] {
    try {
      miou({m}, {}, {1});
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::BadParam;
  }(), ErrorCode::LengthMismatch);
  EXPECT_THROW(miou({m}, {MaskBuf(3, 3)}, {1}), Error);
}
