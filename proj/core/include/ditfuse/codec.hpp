#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "ditfuse/imaging.hpp"

namespace ditfuse {

/// Latent image: (H/f)×(W/f) cells with C = 3·f² channels, row-major, channels last.
struct LatentGrid {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;
  std::vector<float> data;

  LatentGrid() = default;
  LatentGrid(std::size_t h, std::size_t w, std::size_t c, float fill = 0.0f) : height(h), width(w), channels(c), data(h * w * c, fill) {}

  std::size_t size() const { return data.size(); }
  float& at(std::size_t y, std::size_t x, std::size_t c) { return data[(y * width + x) * channels + c]; }
  float at(std::size_t y, std::size_t x, std::size_t c) const { return data[(y * width + x) * channels + c]; }
  bool same_shape(const LatentGrid& o) const { return height == o.height && width == o.width && channels == o.channels; }
  bool operator==(const LatentGrid&) const = default;
};

/// Invertible stand-in visual encoder: space-to-depth by `factor`, then a
/// fixed orthogonal channel mix Q. Decoding applies Qᵀ and depth-to-space.
class Codec {
 public:
  /// Q is drawn from a seeded Gaussian matrix by Householder QR.
  Codec(std::size_t factor, std::uint64_t seed);
  /// Explicit mixing matrix, row-major C×C. Must be orthogonal.
  Codec(std::size_t factor, std::vector<double> q);
  static Codec identity(std::size_t factor);

  std::size_t factor() const { return factor_; }
  std::size_t channels() const { return channels_; }
  const std::vector<double>& q() const { return q_; }

  LatentGrid encode(const ImageBuf& img) const;
  /// Inverse of encode; the result is clamped into [0,1].
  ImageBuf decode(const LatentGrid& lat) const;

 private:
  std::size_t factor_;
  std::size_t channels_;
  std::vector<double> q_;  // row-major C×C
};

double l2_norm(const LatentGrid& lat);

}  // namespace ditfuse
