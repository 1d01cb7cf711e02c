#include "ditfuse/imaging.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>

#include "ditfuse/error.hpp"

namespace ditfuse {

ImageBuf::ImageBuf(std::size_t height, std::size_t width, float fill)
    : height_(height), width_(width), data_(height * width * kChannels, fill) {
  if (height == 0 || width == 0) fail(ErrorCode::BadParam, "image dims must be >= 1");
}

ImageBuf::ImageBuf(std::size_t height, std::size_t width, std::vector<float> data)
    : height_(height), width_(width), data_(std::move(data)) {
  if (height == 0 || width == 0) fail(ErrorCode::BadParam, "image dims must be >= 1");
  if (data_.size() != height * width * kChannels) fail(ErrorCode::ShapeMismatch, "image buffer size");
  clamp();
}

void ImageBuf::clamp() {
  for (auto& v : data_) v = std::clamp(v, 0.0f, 1.0f);
}

MaskBuf::MaskBuf(std::size_t height, std::size_t width, bool fill)
    : height_(height), width_(width), data_(height * width, fill ? 1 : 0) {}

std::size_t MaskBuf::count() const {
  return static_cast<std::size_t>(std::count_if(data_.begin(), data_.end(), [](auto v) { return v != 0; }));
}

MaskBuf rect_mask(std::size_t height, std::size_t width, Rect r) {
  MaskBuf m(height, width);
  for (std::size_t y = r.y0; y < r.y1; ++y)
    for (std::size_t x = r.x0; x < r.x1; ++x) m.set(y, x, true);
  return m;
}

std::string_view to_string(DegradeKind kind) {
  switch (kind) {
    case DegradeKind::Blur: return "blur";
    case DegradeKind::GaussNoise: return "gauss_noise";
    case DegradeKind::NoiseMask: return "noise_mask";
  }
  return "";
}

namespace {

void require_same_dims(const ImageBuf& a, const ImageBuf& b, const char* op) {
  if (a.height() != b.height() || a.width() != b.width()) {
    fail(ErrorCode::ShapeMismatch, std::string(op) + ": image dims differ");
  }
}

// Symmetric border reflection (edge pixel repeated): cba|abc|cba.
std::ptrdiff_t reflect(std::ptrdiff_t i, std::ptrdiff_t n) {
  if (n == 1) return 0;
  const std::ptrdiff_t period = 2 * n;
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - 1 - i;
}

std::vector<double> gaussian_kernel(double sigma) {
  const auto radius = static_cast<std::ptrdiff_t>(std::ceil(3.0 * sigma));
  std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
  double total = 0;
  for (std::ptrdiff_t i = -radius; i <= radius; ++i) {
    double w = std::exp(-static_cast<double>(i * i) / (2.0 * sigma * sigma));
    k[static_cast<std::size_t>(i + radius)] = w;
    total += w;
  }
  for (auto& w : k) w /= total;
  return k;
}

// Separable Gaussian blur evaluated only on `r`; values are identical to a
// whole-image blur sampled there.
std::vector<float> blur_window(const ImageBuf& img, Rect r, double sigma) {
  const auto kernel = gaussian_kernel(sigma);
  const auto radius = static_cast<std::ptrdiff_t>(kernel.size() / 2);
  const auto H = static_cast<std::ptrdiff_t>(img.height());
  const auto W = static_cast<std::ptrdiff_t>(img.width());
  const std::size_t rw = r.x1 - r.x0, rh = r.y1 - r.y0;
  const std::size_t hrows = rh + 2 * static_cast<std::size_t>(radius);
  constexpr std::size_t C = ImageBuf::kChannels;

  std::vector<double> horiz(hrows * rw * C);
  for (std::size_t hr = 0; hr < hrows; ++hr) {
    const auto y = reflect(static_cast<std::ptrdiff_t>(r.y0) - radius + static_cast<std::ptrdiff_t>(hr), H);
    for (std::size_t xi = 0; xi < rw; ++xi) {
      const auto x = static_cast<std::ptrdiff_t>(r.x0 + xi);
      for (std::size_t c = 0; c < C; ++c) {
        double acc = 0;
        for (std::ptrdiff_t k = -radius; k <= radius; ++k) {
          acc += kernel[static_cast<std::size_t>(k + radius)] *
                 img.at(static_cast<std::size_t>(y), static_cast<std::size_t>(reflect(x + k, W)), c);
        }
        horiz[(hr * rw + xi) * C + c] = acc;
      }
    }
  }
  std::vector<float> out(rh * rw * C);
  for (std::size_t yi = 0; yi < rh; ++yi)
    for (std::size_t xi = 0; xi < rw; ++xi)
      for (std::size_t c = 0; c < C; ++c) {
        double acc = 0;
        for (std::ptrdiff_t k = 0; k < static_cast<std::ptrdiff_t>(kernel.size()); ++k) {
          acc += kernel[static_cast<std::size_t>(k)] * horiz[((yi + static_cast<std::size_t>(k)) * rw + xi) * C + c];
        }
        out[(yi * rw + xi) * C + c] = std::clamp(static_cast<float>(acc), 0.0f, 1.0f);
      }
  return out;
}

void validate_spec(const DegradeSpec& spec) {
  if (spec.kind == DegradeKind::Blur && !(spec.sigma > 0)) fail(ErrorCode::BadParam, "blur sigma must be > 0");
  if (spec.kind == DegradeKind::GaussNoise && !(spec.sigma >= 0)) fail(ErrorCode::BadParam, "noise sigma must be >= 0");
}

// Applies `spec` over rectangle `r`, writing only where `inside(y,x)` holds.
// Random draws happen only for written pixels, in row-major order.
template <typename Pred>
void apply_degradation(const ImageBuf& img, ImageBuf& out, Rect r, const DegradeSpec& spec, Rng& rng, Pred inside) {
  constexpr std::size_t C = ImageBuf::kChannels;
  if (r.y0 >= r.y1 || r.x0 >= r.x1) return;
  switch (spec.kind) {
    case DegradeKind::Blur: {
      const auto blurred = blur_window(img, r, spec.sigma);
      const std::size_t rw = r.x1 - r.x0;
      for (std::size_t y = r.y0; y < r.y1; ++y)
        for (std::size_t x = r.x0; x < r.x1; ++x)
          if (inside(y, x))
            for (std::size_t c = 0; c < C; ++c) out.at(y, x, c) = blurred[((y - r.y0) * rw + (x - r.x0)) * C + c];
      break;
    }
    case DegradeKind::GaussNoise: {
      if (spec.sigma == 0) {
        for (std::size_t y = r.y0; y < r.y1; ++y)
          for (std::size_t x = r.x0; x < r.x1; ++x)
            if (inside(y, x))
              for (std::size_t c = 0; c < C; ++c) out.at(y, x, c) = img.at(y, x, c);
        break;
      }
      for (std::size_t y = r.y0; y < r.y1; ++y)
        for (std::size_t x = r.x0; x < r.x1; ++x)
          if (inside(y, x))
            for (std::size_t c = 0; c < C; ++c) {
              const double v = img.at(y, x, c) + spec.sigma * rng.normal();
              out.at(y, x, c) = static_cast<float>(std::clamp(v, 0.0, 1.0));
            }
      break;
    }
    case DegradeKind::NoiseMask: {
      for (std::size_t y = r.y0; y < r.y1; ++y)
        for (std::size_t x = r.x0; x < r.x1; ++x)
          if (inside(y, x))
            for (std::size_t c = 0; c < C; ++c) out.at(y, x, c) = static_cast<float>(rng.uniform());
      break;
    }
  }
}

}  // namespace

ImageBuf degrade(const ImageBuf& img, const MaskBuf& region, const DegradeSpec& spec, Rng& rng) {
  if (region.height() != img.height() || region.width() != img.width()) {
    fail(ErrorCode::ShapeMismatch, "degrade: region dims differ from image");
  }
  validate_spec(spec);
  ImageBuf out = img;
  Rect box{img.height(), img.width(), 0, 0};
  for (std::size_t y = 0; y < img.height(); ++y)
    for (std::size_t x = 0; x < img.width(); ++x)
      if (region.at(y, x)) {
        box.y0 = std::min(box.y0, y);
        box.x0 = std::min(box.x0, x);
        box.y1 = std::max(box.y1, y + 1);
        box.x1 = std::max(box.x1, x + 1);
      }
  apply_degradation(img, out, box, spec, rng, [&](std::size_t y, std::size_t x) { return region.at(y, x); });
  return out;
}

void degrade_rect(const ImageBuf& img, ImageBuf& out, Rect region, const DegradeSpec& spec, Rng& rng) {
  require_same_dims(img, out, "degrade_rect");
  if (region.y1 > img.height() || region.x1 > img.width()) fail(ErrorCode::ShapeMismatch, "degrade_rect: region outside image");
  validate_spec(spec);
  apply_degradation(img, out, region, spec, rng, [](std::size_t, std::size_t) { return true; });
}

ImageBuf adjust_photometric(const ImageBuf& img, SubTag subtag) {
  double gain = 1.0;
  double contrast = 0.0;
  switch (subtag) {
    case SubTag::LightPlusPlus: gain = 1.4; break;
    case SubTag::LightPlus: gain = 1.2; break;
    case SubTag::LightMinus: gain = 0.8; break;
    case SubTag::LightMinusMinus: gain = 0.6; break;
    case SubTag::ContrastPlus: contrast = 1.3; break;
    case SubTag::ContrastMinus: contrast = 0.7; break;
    default: fail(ErrorCode::UnknownSubtag, std::string(tag_name(subtag)) + " is not a control subtag");
  }
  ImageBuf out = img;
  for (auto& v : out.data()) {
    const double px = v;
    const double edited = contrast != 0.0 ? (px - 0.5) * contrast + 0.5 : px * gain;
    v = static_cast<float>(std::clamp(edited, 0.0, 1.0));
  }
  return out;
}

ImageBuf overlay_mask(const ImageBuf& img, const MaskBuf& mask, float alpha, Rgb color) {
  if (mask.height() != img.height() || mask.width() != img.width()) fail(ErrorCode::ShapeMismatch, "overlay_mask dims");
  if (!(alpha > 0.0f && alpha < 1.0f)) fail(ErrorCode::BadParam, "overlay alpha must be in (0,1)");
  ImageBuf out = img;
  const float rgb[3] = {color.r, color.g, color.b};
  for (std::size_t y = 0; y < img.height(); ++y)
    for (std::size_t x = 0; x < img.width(); ++x)
      if (mask.at(y, x))
        for (std::size_t c = 0; c < 3; ++c) out.at(y, x, c) = (1.0f - alpha) * img.at(y, x, c) + alpha * rgb[c];
  out.clamp();
  return out;
}

MaskBuf recover_mask(const ImageBuf& overlaid, const ImageBuf& original, float tol) {
  require_same_dims(overlaid, original, "recover_mask");
  MaskBuf mask(original.height(), original.width());
  for (std::size_t y = 0; y < original.height(); ++y)
    for (std::size_t x = 0; x < original.width(); ++x) {
      float diff = 0;
      for (std::size_t c = 0; c < 3; ++c) diff = std::max(diff, std::fabs(overlaid.at(y, x, c) - original.at(y, x, c)));
      mask.set(y, x, diff > tol);
    }
  return mask;
}

ImageBuf mean_fuse(const ImageBuf& a, const ImageBuf& b) {
  require_same_dims(a, b, "mean_fuse");
  ImageBuf out = a;
  for (std::size_t i = 0; i < out.data().size(); ++i) out.data()[i] = (a.data()[i] + b.data()[i]) * 0.5f;
  return out;
}

std::vector<float> to_gray(const ImageBuf& img) {
  std::vector<float> g(img.pixels());
  const auto& d = img.data();
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double v = 0.299 * d[i * 3] + 0.587 * d[i * 3 + 1] + 0.114 * d[i * 3 + 2];
    g[i] = static_cast<float>(std::clamp(v, 0.0, 1.0));
  }
  return g;
}

// ---------------------------------------------------------------------------
// PNG

namespace {

std::uint8_t to_byte(float v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

std::vector<std::uint8_t> to_bytes(const ImageBuf& img) {
  std::vector<std::uint8_t> bytes(img.data().size());
  std::transform(img.data().begin(), img.data().end(), bytes.begin(), to_byte);
  return bytes;
}

ImageBuf from_bytes(std::size_t h, std::size_t w, const std::vector<std::uint8_t>& bytes) {
  std::vector<float> data(bytes.size());
  std::transform(bytes.begin(), bytes.end(), data.begin(), [](std::uint8_t b) { return static_cast<float>(b) / 255.0f; });
  return ImageBuf(h, w, std::move(data));
}

struct PngImage {
  png_image image{};
  PngImage() {
    std::memset(&image, 0, sizeof image);
    image.version = PNG_IMAGE_VERSION;
  }
  ~PngImage() { png_image_free(&image); }
  PngImage(const PngImage&) = delete;
  PngImage& operator=(const PngImage&) = delete;
};

std::vector<std::uint8_t> read_png_pixels(const std::filesystem::path& path, png_uint_32 format, std::size_t& h,
                                          std::size_t& w) {
  PngImage png;
  if (!png_image_begin_read_from_file(&png.image, path.c_str())) {
    fail(ErrorCode::IoError, "cannot read PNG " + path.string() + ": " + png.image.message);
  }
  png.image.format = format;
  std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(png.image));
  if (!png_image_finish_read(&png.image, nullptr, buf.data(), 0, nullptr)) {
    fail(ErrorCode::IoError, "cannot decode PNG " + path.string() + ": " + png.image.message);
  }
  h = png.image.height;
  w = png.image.width;
  return buf;
}

void write_png_pixels(const std::filesystem::path& path, png_uint_32 format, std::size_t h, std::size_t w,
                      const std::vector<std::uint8_t>& pixels) {
  PngImage png;
  png.image.width = static_cast<png_uint_32>(w);
  png.image.height = static_cast<png_uint_32>(h);
  png.image.format = format;
  if (!png_image_write_to_file(&png.image, path.c_str(), 0, pixels.data(), 0, nullptr)) {
    fail(ErrorCode::IoError, "cannot write PNG " + path.string() + ": " + png.image.message);
  }
}

}  // namespace

ImageBuf read_png(const std::filesystem::path& path) {
  std::size_t h = 0, w = 0;
  auto bytes = read_png_pixels(path, PNG_FORMAT_RGB, h, w);
  return from_bytes(h, w, bytes);
}

void write_png(const std::filesystem::path& path, const ImageBuf& img) {
  write_png_pixels(path, PNG_FORMAT_RGB, img.height(), img.width(), to_bytes(img));
}

std::vector<std::uint8_t> encode_png(const ImageBuf& img) {
  PngImage png;
  png.image.width = static_cast<png_uint_32>(img.width());
  png.image.height = static_cast<png_uint_32>(img.height());
  png.image.format = PNG_FORMAT_RGB;
  const auto pixels = to_bytes(img);
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&png.image, nullptr, &size, 0, pixels.data(), 0, nullptr)) {
    fail(ErrorCode::IoError, std::string("PNG encode: ") + png.image.message);
  }
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&png.image, out.data(), &size, 0, pixels.data(), 0, nullptr)) {
    fail(ErrorCode::IoError, std::string("PNG encode: ") + png.image.message);
  }
  out.resize(size);
  return out;
}

ImageBuf decode_png(std::span<const std::uint8_t> bytes) {
  PngImage png;
  if (!png_image_begin_read_from_memory(&png.image, bytes.data(), bytes.size())) {
    fail(ErrorCode::IoError, std::string("PNG decode: ") + png.image.message);
  }
  png.image.format = PNG_FORMAT_RGB;
  std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(png.image));
  if (!png_image_finish_read(&png.image, nullptr, buf.data(), 0, nullptr)) {
    fail(ErrorCode::IoError, std::string("PNG decode: ") + png.image.message);
  }
  return from_bytes(png.image.height, png.image.width, buf);
}

MaskBuf read_mask_png(const std::filesystem::path& path) {
  std::size_t h = 0, w = 0;
  auto bytes = read_png_pixels(path, PNG_FORMAT_GRAY, h, w);
  MaskBuf m(h, w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) m.set(y, x, bytes[y * w + x] != 0);
  return m;
}

void write_mask_png(const std::filesystem::path& path, const MaskBuf& mask) {
  std::vector<std::uint8_t> bytes(mask.data().size());
  std::transform(mask.data().begin(), mask.data().end(), bytes.begin(), [](auto v) { return v ? 255 : 0; });
  write_png_pixels(path, PNG_FORMAT_GRAY, mask.height(), mask.width(), bytes);
}

ImageBuf quantize8(const ImageBuf& img) {
  return from_bytes(img.height(), img.width(), to_bytes(img));
}

}  // namespace ditfuse
