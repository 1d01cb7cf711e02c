#include "ditfuse/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "ditfuse/error.hpp"

namespace ditfuse {

GrayImage to_gray_image(const ImageBuf& img) {
  if (img.empty()) fail(ErrorCode::BadParam, "metric on an empty image");
  GrayImage g{img.height(), img.width(), std::vector<double>(img.pixels())};
  for (std::size_t i = 0; i < img.pixels(); ++i) {
    const float* p = &img.data()[i * 3];
    g.data[i] = 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2];
  }
  return g;
}

double psnr_from_mse(double mse) { return mse == 0.0 ? kPsnrInf : 10.0 * std::log10(1.0 / mse); }

MsePsnr mse_psnr(const ImageBuf& fused, const ImageBuf& a, const ImageBuf& b) {
  auto same = [&](const ImageBuf& o) { return o.height() == fused.height() && o.width() == fused.width(); };
  if (!same(a) || !same(b)) fail(ErrorCode::ShapeMismatch, "mse_psnr needs equal image dims");
  const auto f = to_gray_image(fused), ga = to_gray_image(a), gb = to_gray_image(b);
  double sa = 0, sb = 0;
  for (std::size_t i = 0; i < f.data.size(); ++i) {
    sa += (f.data[i] - ga.data[i]) * (f.data[i] - ga.data[i]);
    sb += (f.data[i] - gb.data[i]) * (f.data[i] - gb.data[i]);
  }
  const double n = static_cast<double>(f.data.size());
  MsePsnr r;
  r.mse = 0.5 * (sa / n + sb / n);
  r.psnr = psnr_from_mse(r.mse);
  return r;
}

double entropy(const GrayImage& g) {
  if (g.data.empty()) fail(ErrorCode::BadParam, "entropy of an empty image");
  std::array<std::size_t, 256> hist{};
  for (double v : g.data) {
    const long bin = std::lround(std::clamp(v, 0.0, 1.0) * 255.0);
    ++hist[static_cast<std::size_t>(bin)];
  }
  const double n = static_cast<double>(g.data.size());
  double en = 0;
  for (auto c : hist) {
    if (c == 0) continue;
    const double p = static_cast<double>(c) / n;
    en -= p * std::log2(p);
  }
  return en == 0.0 ? 0.0 : en;
}

double sd(const GrayImage& g) {
  if (g.data.empty()) fail(ErrorCode::BadParam, "sd of an empty image");
  // Shifted by the first pixel so a constant image gives exactly zero.
  const double k = g.data.front();
  double mean = 0;
  for (double v : g.data) mean += v - k;
  mean /= static_cast<double>(g.data.size());
  double var = 0;
  for (double v : g.data) var += (v - k - mean) * (v - k - mean);
  return std::sqrt(var / static_cast<double>(g.data.size()));
}

namespace {

void need_2x2(const GrayImage& g, const char* what) {
  if (g.height < 2 || g.width < 2) fail(ErrorCode::BadParam, std::string(what) + " needs an image of at least 2×2");
}

}  // namespace

double spatial_frequency(const GrayImage& g) {
  need_2x2(g, "spatial_frequency");
  double rf = 0, cf = 0;
  for (std::size_t y = 0; y < g.height; ++y)
    for (std::size_t x = 1; x < g.width; ++x) rf += std::pow(g.at(y, x) - g.at(y, x - 1), 2);
  for (std::size_t y = 1; y < g.height; ++y)
    for (std::size_t x = 0; x < g.width; ++x) cf += std::pow(g.at(y, x) - g.at(y - 1, x), 2);
  rf /= static_cast<double>(g.height * (g.width - 1));
  cf /= static_cast<double>((g.height - 1) * g.width);
  return std::sqrt(rf + cf);
}

double average_gradient(const GrayImage& g) {
  need_2x2(g, "average_gradient");
  double s = 0;
  for (std::size_t y = 0; y + 1 < g.height; ++y)
    for (std::size_t x = 0; x + 1 < g.width; ++x) {
      const double dx = g.at(y, x + 1) - g.at(y, x);
      const double dy = g.at(y + 1, x) - g.at(y, x);
      s += std::sqrt((dx * dx + dy * dy) / 2.0);
    }
  return s / static_cast<double>((g.height - 1) * (g.width - 1));
}

double entropy(const ImageBuf& img) { return entropy(to_gray_image(img)); }
double sd(const ImageBuf& img) { return sd(to_gray_image(img)); }
double spatial_frequency(const ImageBuf& img) { return spatial_frequency(to_gray_image(img)); }
double average_gradient(const ImageBuf& img) { return average_gradient(to_gray_image(img)); }

MiouReport miou(const std::vector<std::vector<int>>& preds, const std::vector<std::vector<int>>& gts, const std::vector<int>& classes) {
  if (preds.size() != gts.size()) fail(ErrorCode::LengthMismatch, "prediction and ground-truth lists differ in length");
  MiouReport rep;
  double total = 0;
  for (int c : classes) {
    std::size_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
      if (preds[i].size() != gts[i].size()) fail(ErrorCode::ShapeMismatch, "mask " + std::to_string(i) + " differs in size");
      for (std::size_t k = 0; k < preds[i].size(); ++k) {
        const bool p = preds[i][k] == c, g = gts[i][k] == c;
        inter += p && g;
        uni += p || g;
      }
    }
    if (uni == 0) continue;
    const double iou = static_cast<double>(inter) / static_cast<double>(uni);
    rep.per_class.emplace_back(c, iou);
    total += iou;
  }
  rep.mean = rep.per_class.empty() ? 0.0 : total / static_cast<double>(rep.per_class.size());
  return rep;
}

MiouReport miou(const std::vector<MaskBuf>& preds, const std::vector<MaskBuf>& gts, const std::vector<int>& classes) {
  if (preds.size() != gts.size()) fail(ErrorCode::LengthMismatch, "prediction and ground-truth lists differ in length");
  auto labels = [](const std::vector<MaskBuf>& ms) {
    std::vector<std::vector<int>> out;
    out.reserve(ms.size());
    for (const auto& m : ms) out.emplace_back(m.data().begin(), m.data().end());
    return out;
  };
  return miou(labels(preds), labels(gts), classes);
}

}  // namespace ditfuse
