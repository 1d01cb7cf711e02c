#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "ditfuse/rng.hpp"
#include "ditfuse/tags.hpp"

namespace ditfuse {

/// Float RGB image, row-major, interleaved channels, values in [0,1].
class ImageBuf {
 public:
  static constexpr std::size_t kChannels = 3;

  ImageBuf() = default;
  ImageBuf(std::size_t height, std::size_t width, float fill = 0.0f);
  ImageBuf(std::size_t height, std::size_t width, std::vector<float> data);

  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  std::size_t pixels() const { return height_ * width_; }
  bool empty() const { return data_.empty(); }

  float at(std::size_t y, std::size_t x, std::size_t c) const { return data_[(y * width_ + x) * kChannels + c]; }
  float& at(std::size_t y, std::size_t x, std::size_t c) { return data_[(y * width_ + x) * kChannels + c]; }

  const std::vector<float>& data() const { return data_; }
  std::vector<float>& data() { return data_; }

  /// Clamps every value into [0,1].
  void clamp();

  bool operator==(const ImageBuf& o) const = default;

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::vector<float> data_;
};

class MaskBuf {
 public:
  MaskBuf() = default;
  MaskBuf(std::size_t height, std::size_t width, bool fill = false);

  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  bool at(std::size_t y, std::size_t x) const { return data_[y * width_ + x] != 0; }
  void set(std::size_t y, std::size_t x, bool v) { data_[y * width_ + x] = v ? 1 : 0; }
  std::size_t count() const;

  const std::vector<std::uint8_t>& data() const { return data_; }

  bool operator==(const MaskBuf& o) const = default;

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::vector<std::uint8_t> data_;
};

/// Axis-aligned pixel rectangle [y0,y1) × [x0,x1).
struct Rect {
  std::size_t y0 = 0, x0 = 0, y1 = 0, x1 = 0;
};

MaskBuf rect_mask(std::size_t height, std::size_t width, Rect r);

enum class DegradeKind : std::uint8_t { Blur, GaussNoise, NoiseMask };

struct DegradeSpec {
  DegradeKind kind = DegradeKind::Blur;
  double sigma = 1.0;  // Blur: kernel sigma in px. GaussNoise: noise std. Unused for NoiseMask.

  bool operator==(const DegradeSpec&) const = default;
};

std::string_view to_string(DegradeKind kind);

/// Degrades the pixels of `img` inside `region`; everything else is copied bit-for-bit.
ImageBuf degrade(const ImageBuf& img, const MaskBuf& region, const DegradeSpec& spec, Rng& rng);

/// Same contract restricted to a rectangle, writing into `out` (which must match `img` dims).
void degrade_rect(const ImageBuf& img, ImageBuf& out, Rect region, const DegradeSpec& spec, Rng& rng);

/// Brightness / contrast edit for a control subtag. Throws UnknownSubtag for non-control tags.
ImageBuf adjust_photometric(const ImageBuf& img, SubTag subtag);

struct Rgb {
  float r = 0, g = 0, b = 0;
};

inline constexpr float kOverlayAlpha = 0.5f;
inline constexpr Rgb kOverlayBlue{0.0f, 0.0f, 1.0f};

ImageBuf overlay_mask(const ImageBuf& img, const MaskBuf& mask, float alpha = kOverlayAlpha, Rgb color = kOverlayBlue);

/// Pixel is in the mask iff its max-channel difference exceeds tol.
MaskBuf recover_mask(const ImageBuf& overlaid, const ImageBuf& original, float tol = 1e-3f);

ImageBuf mean_fuse(const ImageBuf& a, const ImageBuf& b);

/// 0.299 R + 0.587 G + 0.114 B, row-major.
std::vector<float> to_gray(const ImageBuf& img);

// PNG I/O, 8-bit RGB. Values map through v/255 and round(v*255).
ImageBuf read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const ImageBuf& img);
std::vector<std::uint8_t> encode_png(const ImageBuf& img);
ImageBuf decode_png(std::span<const std::uint8_t> bytes);

/// Masks are stored as 8-bit grayscale PNG, nonzero = set.
MaskBuf read_mask_png(const std::filesystem::path& path);
void write_mask_png(const std::filesystem::path& path, const MaskBuf& mask);

/// Quantizes to the 8-bit grid that PNG storage would produce.
ImageBuf quantize8(const ImageBuf& img);

}  // namespace ditfuse
