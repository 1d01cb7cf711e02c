#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "ditfuse/imaging.hpp"
#include "ditfuse/prompt.hpp"
#include "ditfuse/rng.hpp"
#include "ditfuse/tensor.hpp"

namespace ditfuse::test {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("ditfuse_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

 private:
  std::filesystem::path path_;
};

template <typename T>
Tensor<T> random_tensor(Shape shape, Rng& rng, double scale = 1.0, bool requires_grad = false) {
  std::vector<T> v(shape_numel(shape));
  for (auto& x : v) x = static_cast<T>(rng.normal() * scale);
  return Tensor<T>(std::move(shape), std::move(v), requires_grad);
}

inline ImageBuf random_image(std::size_t h, std::size_t w, Rng& rng) {
  ImageBuf img(h, w);
  for (auto& v : img.data()) v = static_cast<float>(rng.uniform());
  return img;
}

inline MaskBuf random_mask(std::size_t h, std::size_t w, Rng& rng, double p = 0.5) {
  MaskBuf m(h, w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) m.set(y, x, rng.bernoulli(p));
  return m;
}

/// max over elements of the mixed error: absolute below `floor`, relative above.
inline double grad_error(std::span<const double> a, std::span<const double> b, double floor = 1e-6) {
  double worst = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double diff = std::fabs(a[i] - b[i]);
    const double mag = std::max(std::fabs(a[i]), std::fabs(b[i]));
    const double err = diff <= floor ? 0.0 : diff / std::max(mag, 1e-300);
    worst = std::max(worst, err);
  }
  return worst;
}

/// Compares backward() of loss(inputs) against central differences for every
/// input. Returns the worst mixed error.
inline double check_gradients(const std::function<Tensor<double>(const std::vector<Tensor<double>>&)>& loss,
                              std::vector<Tensor<double>> inputs, double h = 1e-5, double floor = 1e-6) {
  for (auto& x : inputs) x = Tensor<double>(x.shape(), std::vector<double>(x.data().begin(), x.data().end()), true);
  auto root = loss(inputs);
  root.backward();
  double worst = 0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    std::vector<double> analytic(inputs[k].grad().begin(), inputs[k].grad().end());
    if (analytic.empty()) analytic.assign(inputs[k].numel(), 0.0);
    auto f = [&](const Tensor<double>& xk) {
      auto args = inputs;
      for (auto& a : args) a = a.detach();
      args[k] = xk;
      return loss(args).item();
    };
    const auto numeric = finite_diff_grad<double>(f, inputs[k].detach(), h);
    worst = std::max(worst, grad_error(analytic, numeric.data(), floor));
  }
  return worst;
}

/// Brute-force reference for the hybrid mask: causal, or both positions in
/// the same image span.
inline bool brute_visible(const SequenceLayout& layout, std::size_t i, std::size_t j) {
  if (j <= i) return true;
  for (const auto& s : layout.segments) {
    if (!s.is_image()) continue;
    if (i >= s.begin && i < s.end && j >= s.begin && j < s.end) return true;
  }
  return false;
}

/// Random valid layout: text runs and image spans in random order, one noisy
/// span, timestep last.
inline SequenceLayout random_layout(Rng& rng) {
  SequenceLayout l;
  auto push = [&](SegmentKind k, std::size_t len, int idx) {
    const std::size_t b = l.tokens.size();
    for (std::size_t i = 0; i < len; ++i) l.tokens.push_back(k == SegmentKind::Text ? static_cast<int>(rng.index(256)) : -1);
    l.segments.push_back({k, b, b + len, idx});
  };
  const std::size_t n_parts = 1 + rng.index(6);
  const std::size_t noisy_at = rng.index(n_parts);
  int cond = 0;
  SegmentKind prev = SegmentKind::Timestep;
  for (std::size_t p = 0; p < n_parts; ++p) {
    SegmentKind k;
    if (p == noisy_at) {
      k = SegmentKind::NoisyImage;
    } else {
      k = rng.bernoulli(0.5) && prev != SegmentKind::Text ? SegmentKind::Text : SegmentKind::CondImage;
    }
    push(k, 1 + rng.index(6), k == SegmentKind::CondImage ? cond++ : -1);
    prev = k;
  }
  push(SegmentKind::Timestep, 1, -1);
  return l;
}

}  // namespace ditfuse::test
