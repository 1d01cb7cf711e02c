#pragma once

#include <cstddef>
#include <limits>
#include <vector>

#include "ditfuse/imaging.hpp"

namespace ditfuse {

/// Gray image, row-major, values in [0,1].
struct GrayImage {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> data;

  double at(std::size_t y, std::size_t x) const { return data[y * width + x]; }
};

GrayImage to_gray_image(const ImageBuf& img);

struct MsePsnr {
  double mse = 0;
  double psnr = 0;  // +inf when mse == 0
};

inline constexpr double kPsnrInf = std::numeric_limits<double>::infinity();

/// mse = ½(mean((F−A)²) + mean((F−B)²)) on gray; psnr = 10·log10(1/mse).
MsePsnr mse_psnr(const ImageBuf& fused, const ImageBuf& a, const ImageBuf& b);
double psnr_from_mse(double mse);

/// Shannon entropy in bits of the 256-bin histogram of round(gray·255).
double entropy(const GrayImage& g);
/// Population standard deviation.
double sd(const GrayImage& g);
/// sqrt(RF² + CF²) with row/column first-difference RMS.
double spatial_frequency(const GrayImage& g);
/// Mean over (H−1)×(W−1) of sqrt((Δx² + Δy²)/2), forward differences.
double average_gradient(const GrayImage& g);

double entropy(const ImageBuf& img);
double sd(const ImageBuf& img);
double spatial_frequency(const ImageBuf& img);
double average_gradient(const ImageBuf& img);

struct MiouReport {
  /// IoU per class; classes whose union is empty over the dataset are absent.
  std::vector<std::pair<int, double>> per_class;
  double mean = 0;
};

/// Dataset-level IoU per class. preds[i] and gts[i] hold a class id per
/// pixel; `classes` lists the ids to score.
MiouReport miou(const std::vector<std::vector<int>>& preds, const std::vector<std::vector<int>>& gts, const std::vector<int>& classes);
/// Binary-mask convenience form: class 1 = set, class 0 = background.
MiouReport miou(const std::vector<MaskBuf>& preds, const std::vector<MaskBuf>& gts, const std::vector<int>& classes = {0, 1});

}  // namespace ditfuse
