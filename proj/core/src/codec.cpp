#include "ditfuse/codec.hpp"

#include <cmath>

#include <Eigen/Dense>

#include "ditfuse/error.hpp"
#include "ditfuse/rng.hpp"

namespace ditfuse {

namespace {

void check_factor(std::size_t factor) {
  if (factor == 0) fail(ErrorCode::BadParam, "latent factor must be >= 1");
}

}  // namespace

Codec::Codec(std::size_t factor, std::uint64_t seed) : factor_(factor), channels_(3 * factor * factor) {
  check_factor(factor);
  const auto c = static_cast<Eigen::Index>(channels_);
  Rng rng(seed);
  Eigen::MatrixXd g(c, c);
  for (Eigen::Index i = 0; i < c; ++i)
    for (Eigen::Index j = 0; j < c; ++j) g(i, j) = rng.normal();
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(c, c);
  // Fix column signs against R's diagonal so Q is unique for a given draw.
  const Eigen::MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (Eigen::Index j = 0; j < c; ++j)
    if (r(j, j) < 0) q.col(j) = -q.col(j);
  q_.resize(channels_ * channels_);
  for (Eigen::Index i = 0; i < c; ++i)
    for (Eigen::Index j = 0; j < c; ++j) q_[static_cast<std::size_t>(i * c + j)] = q(i, j);
}

Codec::Codec(std::size_t factor, std::vector<double> q) : factor_(factor), channels_(3 * factor * factor), q_(std::move(q)) {
  check_factor(factor);
  if (q_.size() != channels_ * channels_) fail(ErrorCode::ShapeMismatch, "codec matrix must be C×C");
  for (std::size_t i = 0; i < channels_; ++i)
    for (std::size_t j = 0; j < channels_; ++j) {
      double dot = 0;
      for (std::size_t k = 0; k < channels_; ++k) dot += q_[k * channels_ + i] * q_[k * channels_ + j];
      if (std::fabs(dot - (i == j ? 1.0 : 0.0)) > 1e-5) fail(ErrorCode::BadParam, "codec matrix is not orthogonal");
    }
}

Codec Codec::identity(std::size_t factor) {
  const std::size_t c = 3 * factor * factor;
  std::vector<double> q(c * c, 0.0);
  for (std::size_t i = 0; i < c; ++i) q[i * c + i] = 1.0;
  return Codec(factor, std::move(q));
}

LatentGrid Codec::encode(const ImageBuf& img) const {
  const std::size_t f = factor_;
  if (img.empty() || img.height() % f != 0 || img.width() % f != 0) {
    fail(ErrorCode::IndivisibleDims, std::to_string(img.height()) + "x" + std::to_string(img.width()) +
                                         " not divisible by latent factor " + std::to_string(f));
  }
  LatentGrid lat(img.height() / f, img.width() / f, channels_);
  std::vector<double> cell(channels_);
  for (std::size_t y = 0; y < lat.height; ++y)
    for (std::size_t x = 0; x < lat.width; ++x) {
      for (std::size_t dy = 0; dy < f; ++dy)
        for (std::size_t dx = 0; dx < f; ++dx)
          for (std::size_t c = 0; c < 3; ++c) cell[(dy * f + dx) * 3 + c] = img.at(y * f + dy, x * f + dx, c);
      // Row vector times Q.
      for (std::size_t j = 0; j < channels_; ++j) {
        double acc = 0;
        for (std::size_t k = 0; k < channels_; ++k) acc += cell[k] * q_[k * channels_ + j];
        lat.at(y, x, j) = static_cast<float>(acc);
      }
    }
  return lat;
}

ImageBuf Codec::decode(const LatentGrid& lat) const {
  if (lat.channels != channels_) fail(ErrorCode::ShapeMismatch, "latent channel count does not match codec");
  const std::size_t f = factor_;
  ImageBuf img(lat.height * f, lat.width * f);
  std::vector<double> cell(channels_);
  for (std::size_t y = 0; y < lat.height; ++y)
    for (std::size_t x = 0; x < lat.width; ++x) {
      for (std::size_t k = 0; k < channels_; ++k) {
        double acc = 0;
        for (std::size_t j = 0; j < channels_; ++j) acc += static_cast<double>(lat.at(y, x, j)) * q_[k * channels_ + j];
        cell[k] = acc;
      }
      for (std::size_t dy = 0; dy < f; ++dy)
        for (std::size_t dx = 0; dx < f; ++dx)
          for (std::size_t c = 0; c < 3; ++c) img.at(y * f + dy, x * f + dx, c) = static_cast<float>(cell[(dy * f + dx) * 3 + c]);
    }
  img.clamp();
  return img;
}

double l2_norm(const LatentGrid& lat) {
  double s = 0;
  for (float v : lat.data) s += static_cast<double>(v) * v;
  return std::sqrt(s);
}

}  // namespace ditfuse
