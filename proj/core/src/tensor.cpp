#include "ditfuse/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

#include <Eigen/Core>

#include "ditfuse/error.hpp"

namespace ditfuse {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

namespace {

template <typename T>
using NodePtr = std::shared_ptr<detail::Node<T>>;

template <typename T>
void check_finite(const std::vector<T>& v, const char* op) {
  for (T x : v) {
    if (!std::isfinite(x)) fail(ErrorCode::NonFinite, std::string("non-finite value produced by ") + op);
  }
}

// Builds an op output. `backward` is attached only if some input tracks gradients.
template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> data, std::vector<NodePtr<T>> inputs, const char* op,
                      std::function<void(const std::vector<T>&)> backward) {
  check_finite(data, op);
  auto node = std::make_shared<detail::Node<T>>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->op = op;
  bool track = std::any_of(inputs.begin(), inputs.end(), [](const auto& n) { return n->requires_grad; });
  if (track) {
    node->requires_grad = true;
    node->parents = std::move(inputs);
    node->backward = std::move(backward);
  }
  return Tensor<T>(std::move(node));
}

template <typename T>
std::size_t last_dim(const Shape& s) {
  return s.empty() ? 1 : s.back();
}

template <typename T>
void require_rank2(const Tensor<T>& t, const char* op) {
  if (t.rank() != 2) fail(ErrorCode::ShapeMismatch, std::string(op) + " expects rank-2, got " + shape_str(t.shape()));
}

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using CMap = Eigen::Map<const RowMat<T>>;
template <typename T>
using MMap = Eigen::Map<RowMat<T>>;

// C[m×n] += A[m×k] · B[k×n]
template <typename T>
void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, T* c) {
  const auto M = static_cast<Eigen::Index>(m), K = static_cast<Eigen::Index>(k), N = static_cast<Eigen::Index>(n);
  MMap<T>(c, M, N).noalias() += CMap<T>(a, M, K) * CMap<T>(b, K, N);
}

// C[m×n] += A[m×k] · B[n×k]ᵀ
template <typename T>
void gemm_nt(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, T* c) {
  const auto M = static_cast<Eigen::Index>(m), K = static_cast<Eigen::Index>(k), N = static_cast<Eigen::Index>(n);
  MMap<T>(c, M, N).noalias() += CMap<T>(a, M, K) * CMap<T>(b, N, K).transpose();
}

// C[k×n] += A[m×k]ᵀ · B[m×n]
template <typename T>
void gemm_tn(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, T* c) {
  const auto M = static_cast<Eigen::Index>(m), K = static_cast<Eigen::Index>(k), N = static_cast<Eigen::Index>(n);
  MMap<T>(c, K, N).noalias() += CMap<T>(a, M, K).transpose() * CMap<T>(b, M, N);
}

}  // namespace

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data, bool requires_grad) {
  if (shape_numel(shape) != data.size()) {
    fail(ErrorCode::ShapeMismatch, "shape " + shape_str(shape) + " does not hold " + std::to_string(data.size()));
  }
  node_ = std::make_shared<detail::Node<T>>();
  node_->shape = std::move(shape);
  node_->data = std::move(data);
  node_->requires_grad = requires_grad;
}

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
  auto n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<T>(n, T(0)), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value, bool requires_grad) {
  auto n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<T>(n, value), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value, bool requires_grad) {
  return Tensor(Shape{}, std::vector<T>{value}, requires_grad);
}

template <typename T>
std::size_t Tensor<T>::cols() const {
  return last_dim<T>(node_->shape);
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) fail(ErrorCode::NotScalar, "item() on " + shape_str(shape()));
  return node_->data[0];
}

template <typename T>
void Tensor<T>::zero_grad() {
  if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), T(0));
}

template <typename T>
void Tensor<T>::backward() const {
  if (numel() != 1) fail(ErrorCode::NotScalar, "backward() root must be scalar, got " + shape_str(shape()));
  if (!node_->requires_grad) fail(ErrorCode::DetachedTensor, "backward() root is not on a graph");

  // Iterative post-order DFS gives a topological order.
  std::vector<detail::Node<T>*> order;
  std::unordered_set<detail::Node<T>*> seen;
  std::vector<std::pair<detail::Node<T>*, std::size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      auto* p = n->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  for (auto* n : order) {
    if (n->backward) n->grad.assign(n->data.size(), T(0));
  }
  node_->ensure_grad()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    auto* n = *it;
    if (n->backward) n->backward(n->grad);
  }
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  return Tensor(node_->shape, node_->data, false);
}

// ---------------------------------------------------------------------------
// Linear algebra

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) fail(ErrorCode::ShapeMismatch, "matmul " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  std::vector<T> out(m * n, T(0));
  gemm_nn(m, k, n, a.data().data(), b.data().data(), out.data());
  auto an = a.node(), bn = b.node();
  return make_result<T>({m, n}, std::move(out), {an, bn}, "matmul", [an, bn, m, k, n](const std::vector<T>& g) {
    if (an->requires_grad) gemm_nt(m, n, k, g.data(), bn->data.data(), an->ensure_grad().data());
    if (bn->requires_grad) gemm_tn(m, k, n, an->data.data(), g.data(), bn->ensure_grad().data());
  });
}

template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
  require_rank2(a, "matmul_nt");
  require_rank2(b, "matmul_nt");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
  if (b.dim(1) != k) fail(ErrorCode::ShapeMismatch, "matmul_nt " + shape_str(a.shape()) + " x " + shape_str(b.shape()) + "T");
  std::vector<T> out(m * n, T(0));
  gemm_nt(m, k, n, a.data().data(), b.data().data(), out.data());
  auto an = a.node(), bn = b.node();
  return make_result<T>({m, n}, std::move(out), {an, bn}, "matmul_nt", [an, bn, m, k, n](const std::vector<T>& g) {
    // dA = G·B, dB = Gᵀ·A
    if (an->requires_grad) gemm_nn(m, n, k, g.data(), bn->data.data(), an->ensure_grad().data());
    if (bn->requires_grad) gemm_tn(m, n, k, g.data(), an->data.data(), bn->ensure_grad().data());
  });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  require_rank2(a, "transpose");
  const std::size_t m = a.dim(0), n = a.dim(1);
  std::vector<T> out(m * n);
  auto src = a.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = src[i * n + j];
  auto an = a.node();
  return make_result<T>({n, m}, std::move(out), {an}, "transpose", [an, m, n](const std::vector<T>& g) {
    auto& ga = an->ensure_grad();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[j * m + i];
  });
}

// ---------------------------------------------------------------------------
// Elementwise

namespace {

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    fail(ErrorCode::ShapeMismatch, std::string(op) + " " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

}  // namespace

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "add");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  auto an = a.node(), bn = b.node();
  return make_result<T>(a.shape(), std::move(out), {an, bn}, "add", [an, bn](const std::vector<T>& g) {
    for (auto* p : {an.get(), bn.get()}) {
      if (!p->requires_grad) continue;
      auto& gp = p->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) gp[i] += g[i];
    }
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "sub");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  auto an = a.node(), bn = b.node();
  return make_result<T>(a.shape(), std::move(out), {an, bn}, "sub", [an, bn](const std::vector<T>& g) {
    if (an->requires_grad) {
      auto& ga = an->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (bn->requires_grad) {
      auto& gb = bn->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "mul");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  auto an = a.node(), bn = b.node();
  return make_result<T>(a.shape(), std::move(out), {an, bn}, "mul", [an, bn](const std::vector<T>& g) {
    if (an->requires_grad) {
      auto& ga = an->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bn->data[i];
    }
    if (bn->requires_grad) {
      auto& gb = bn->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * an->data[i];
    }
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * s;
  auto an = a.node();
  return make_result<T>(a.shape(), std::move(out), {an}, "scale", [an, s](const std::vector<T>& g) {
    auto& ga = an->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * s;
  });
}

template <typename T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& b) {
  const std::size_t n = x.cols();
  if (b.numel() != n) fail(ErrorCode::ShapeMismatch, "add_bias " + shape_str(x.shape()) + " + " + shape_str(b.shape()));
  const std::size_t m = x.rows();
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = x[i * n + j] + b[j];
  auto xn = x.node(), bn = b.node();
  return make_result<T>(x.shape(), std::move(out), {xn, bn}, "add_bias", [xn, bn, m, n](const std::vector<T>& g) {
    if (xn->requires_grad) {
      auto& gx = xn->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    }
    if (bn->requires_grad) {
      auto& gb = bn->ensure_grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
    }
  });
}

template <typename T>
Tensor<T> silu(const Tensor<T>& x) {
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    T v = x[i];
    out[i] = v / (T(1) + std::exp(-v));
  }
  auto xn = x.node();
  return make_result<T>(x.shape(), std::move(out), {xn}, "silu", [xn](const std::vector<T>& g) {
    auto& gx = xn->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      T v = xn->data[i];
      T s = T(1) / (T(1) + std::exp(-v));
      gx[i] += g[i] * s * (T(1) + v * (T(1) - s));
    }
  });
}

// ---------------------------------------------------------------------------
// Normalization and attention

template <typename T>
Tensor<T> layernorm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
  const std::size_t d = x.cols();
  if (d == 0 || gamma.numel() != d || beta.numel() != d) {
    fail(ErrorCode::ShapeMismatch, "layernorm " + shape_str(x.shape()) + " with gamma " + shape_str(gamma.shape()));
  }
  if (!(eps >= T(0))) fail(ErrorCode::BadParam, "layernorm eps must be >= 0");
  const std::size_t m = x.rows();
  std::vector<T> out(x.numel());
  auto xhat = std::make_shared<std::vector<T>>(x.numel());
  auto rstd = std::make_shared<std::vector<T>>(m);
  auto src = x.data();
  for (std::size_t i = 0; i < m; ++i) {
    const T* row = src.data() + i * d;
    T* hat = xhat->data() + i * d;
    const bool constant = std::all_of(row, row + d, [&](T v) { return v == row[0]; });
    if (constant) {
      // Exactly zero-centred; avoids ulp residue from the mean.
      std::fill(hat, hat + d, T(0));
      (*rstd)[i] = eps > T(0) ? T(1) / std::sqrt(eps) : T(0);
    } else {
      T mu = 0;
      for (std::size_t j = 0; j < d; ++j) mu += row[j];
      mu /= static_cast<T>(d);
      T var = 0;
      for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
      var /= static_cast<T>(d);
      const T r = T(1) / std::sqrt(var + eps);
      (*rstd)[i] = r;
      for (std::size_t j = 0; j < d; ++j) hat[j] = (row[j] - mu) * r;
    }
    for (std::size_t j = 0; j < d; ++j) out[i * d + j] = hat[j] * gamma[j] + beta[j];
  }
  auto xn = x.node(), gn = gamma.node(), bn = beta.node();
  return make_result<T>(x.shape(), std::move(out), {xn, gn, bn}, "layernorm",
                        [xn, gn, bn, xhat, rstd, m, d](const std::vector<T>& g) {
    if (gn->requires_grad || bn->requires_grad) {
      auto* gg = gn->requires_grad ? gn->ensure_grad().data() : nullptr;
      auto* gb = bn->requires_grad ? bn->ensure_grad().data() : nullptr;
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < d; ++j) {
          if (gg) gg[j] += g[i * d + j] * (*xhat)[i * d + j];
          if (gb) gb[j] += g[i * d + j];
        }
    }
    if (xn->requires_grad) {
      auto& gx = xn->ensure_grad();
      std::vector<T> dhat(d);
      for (std::size_t i = 0; i < m; ++i) {
        T mean_d = 0, mean_dx = 0;
        for (std::size_t j = 0; j < d; ++j) {
          dhat[j] = g[i * d + j] * gn->data[j];
          mean_d += dhat[j];
          mean_dx += dhat[j] * (*xhat)[i * d + j];
        }
        mean_d /= static_cast<T>(d);
        mean_dx /= static_cast<T>(d);
        const T r = (*rstd)[i];
        for (std::size_t j = 0; j < d; ++j) {
          gx[i * d + j] += r * (dhat[j] - mean_d - (*xhat)[i * d + j] * mean_dx);
        }
      }
    }
  });
}

template <typename T>
Tensor<T> softmax_masked(const Tensor<T>& scores, std::span<const std::uint8_t> visible) {
  const std::size_t n = scores.cols();
  const std::size_t m = scores.rows();
  if (visible.size() != m * n) {
    fail(ErrorCode::ShapeMismatch, "softmax_masked mask has " + std::to_string(visible.size()) + " entries for " +
                                       shape_str(scores.shape()));
  }
  std::vector<T> out(m * n, T(0));
  auto s = scores.data();
  for (std::size_t i = 0; i < m; ++i) {
    const std::uint8_t* vis = visible.data() + i * n;
    T mx = -std::numeric_limits<T>::infinity();
    bool any = false;
    for (std::size_t j = 0; j < n; ++j) {
      if (vis[j]) {
        mx = std::max(mx, s[i * n + j]);
        any = true;
      }
    }
    if (!any) fail(ErrorCode::EmptyRow, "softmax_masked row " + std::to_string(i) + " has no visible entry");
    T z = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (vis[j]) {
        out[i * n + j] = std::exp(s[i * n + j] - mx);
        z += out[i * n + j];
      }
    }
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] /= z;
  }
  auto sn = scores.node();
  auto probs = std::make_shared<std::vector<T>>(out);
  return make_result<T>(scores.shape(), std::move(out), {sn}, "softmax_masked", [sn, probs, m, n](const std::vector<T>& g) {
    auto& gs = sn->ensure_grad();
    const auto& y = *probs;
    for (std::size_t i = 0; i < m; ++i) {
      T dot = 0;
      for (std::size_t j = 0; j < n; ++j) dot += y[i * n + j] * g[i * n + j];
      for (std::size_t j = 0; j < n; ++j) gs[i * n + j] += y[i * n + j] * (g[i * n + j] - dot);
    }
  });
}

// ---------------------------------------------------------------------------
// Reductions

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T acc = 0;
  for (T v : x.data()) acc += v;
  auto xn = x.node();
  return make_result<T>(Shape{}, {acc}, {xn}, "sum", [xn](const std::vector<T>& g) {
    auto& gx = xn->ensure_grad();
    for (auto& v : gx) v += g[0];
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  if (x.numel() == 0) fail(ErrorCode::ShapeMismatch, "mean of empty tensor");
  T acc = 0;
  for (T v : x.data()) acc += v;
  const T inv = T(1) / static_cast<T>(x.numel());
  auto xn = x.node();
  return make_result<T>(Shape{}, {acc * inv}, {xn}, "mean", [xn, inv](const std::vector<T>& g) {
    auto& gx = xn->ensure_grad();
    for (auto& v : gx) v += g[0] * inv;
  });
}

// ---------------------------------------------------------------------------
// Layout

template <typename T>
Tensor<T> slice_rows(const Tensor<T>& x, std::size_t begin, std::size_t end) {
  require_rank2(x, "slice_rows");
  const std::size_t n = x.dim(1);
  if (begin > end || end > x.dim(0)) fail(ErrorCode::ShapeMismatch, "slice_rows out of range");
  std::vector<T> out(x.data().begin() + begin * n, x.data().begin() + end * n);
  auto xn = x.node();
  return make_result<T>({end - begin, n}, std::move(out), {xn}, "slice_rows", [xn, begin, n](const std::vector<T>& g) {
    auto& gx = xn->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) gx[begin * n + i] += g[i];
  });
}

template <typename T>
Tensor<T> slice_cols(const Tensor<T>& x, std::size_t begin, std::size_t end) {
  require_rank2(x, "slice_cols");
  const std::size_t m = x.dim(0), n = x.dim(1), w = end - begin;
  if (begin > end || end > n) fail(ErrorCode::ShapeMismatch, "slice_cols out of range");
  std::vector<T> out(m * w);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < w; ++j) out[i * w + j] = x[i * n + begin + j];
  auto xn = x.node();
  return make_result<T>({m, w}, std::move(out), {xn}, "slice_cols", [xn, begin, m, n, w](const std::vector<T>& g) {
    auto& gx = xn->ensure_grad();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < w; ++j) gx[i * n + begin + j] += g[i * w + j];
  });
}

template <typename T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) fail(ErrorCode::ShapeMismatch, "concat_rows of nothing");
  const std::size_t n = parts[0].cols();
  std::size_t m = 0;
  std::vector<NodePtr<T>> nodes;
  for (const auto& p : parts) {
    require_rank2(p, "concat_rows");
    if (p.cols() != n) fail(ErrorCode::ShapeMismatch, "concat_rows column mismatch");
    m += p.dim(0);
    nodes.push_back(p.node());
  }
  std::vector<T> out;
  out.reserve(m * n);
  for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  return make_result<T>({m, n}, std::move(out), nodes, "concat_rows", [nodes](const std::vector<T>& g) {
    std::size_t off = 0;
    for (const auto& p : nodes) {
      if (p->requires_grad) {
        auto& gp = p->ensure_grad();
        for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += g[off + i];
      }
      off += p->data.size();
    }
  });
}

template <typename T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) fail(ErrorCode::ShapeMismatch, "concat_cols of nothing");
  require_rank2(parts[0], "concat_cols");
  const std::size_t m = parts[0].dim(0);
  std::size_t n = 0;
  std::vector<NodePtr<T>> nodes;
  std::vector<std::size_t> widths;
  for (const auto& p : parts) {
    require_rank2(p, "concat_cols");
    if (p.dim(0) != m) fail(ErrorCode::ShapeMismatch, "concat_cols row mismatch");
    n += p.dim(1);
    widths.push_back(p.dim(1));
    nodes.push_back(p.node());
  }
  std::vector<T> out(m * n);
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const std::size_t w = widths[k];
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < w; ++j) out[i * n + off + j] = parts[k][i * w + j];
    off += w;
  }
  return make_result<T>({m, n}, std::move(out), nodes, "concat_cols", [nodes, widths, m, n](const std::vector<T>& g) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < nodes.size(); ++k) {
      const std::size_t w = widths[k];
      if (nodes[k]->requires_grad) {
        auto& gp = nodes[k]->ensure_grad();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < w; ++j) gp[i * w + j] += g[i * n + off + j];
      }
      off += w;
    }
  });
}

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& table, std::span<const int> ids) {
  require_rank2(table, "gather_rows");
  const std::size_t v = table.dim(0), d = table.dim(1);
  std::vector<T> out(ids.size() * d);
  std::vector<int> idx(ids.begin(), ids.end());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || static_cast<std::size_t>(idx[i]) >= v) {
      fail(ErrorCode::ShapeMismatch, "gather_rows id " + std::to_string(idx[i]) + " outside table of " + std::to_string(v));
    }
    std::copy_n(table.data().begin() + idx[i] * d, d, out.begin() + i * d);
  }
  auto tn = table.node();
  return make_result<T>({idx.size(), d}, std::move(out), {tn}, "gather_rows", [tn, idx, d](const std::vector<T>& g) {
    auto& gt = tn->ensure_grad();
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t j = 0; j < d; ++j) gt[idx[i] * d + j] += g[i * d + j];
  });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    fail(ErrorCode::ShapeMismatch, "reshape " + shape_str(x.shape()) + " to " + shape_str(shape));
  }
  std::vector<T> out(x.data().begin(), x.data().end());
  auto xn = x.node();
  return make_result<T>(std::move(shape), std::move(out), {xn}, "reshape", [xn](const std::vector<T>& g) {
    auto& gx = xn->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
}

template <typename T>
Tensor<T> finite_diff_grad(const std::function<T(const Tensor<T>&)>& f, const Tensor<T>& x, T h) {
  std::vector<T> base(x.data().begin(), x.data().end());
  std::vector<T> grad(base.size());
  for (std::size_t i = 0; i < base.size(); ++i) {
    auto plus = base, minus = base;
    plus[i] += h;
    minus[i] -= h;
    const T fp = f(Tensor<T>(x.shape(), std::move(plus)));
    const T fm = f(Tensor<T>(x.shape(), std::move(minus)));
    grad[i] = (fp - fm) / (T(2) * h);
  }
  return Tensor<T>(x.shape(), std::move(grad));
}

#define DITFUSE_INSTANTIATE(T)                                                                        \
  template class Tensor<T>;                                                                           \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                      \
  template Tensor<T> matmul_nt(const Tensor<T>&, const Tensor<T>&);                                   \
  template Tensor<T> transpose(const Tensor<T>&);                                                     \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                         \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                         \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                         \
  template Tensor<T> scale(const Tensor<T>&, T);                                                      \
  template Tensor<T> add_bias(const Tensor<T>&, const Tensor<T>&);                                    \
  template Tensor<T> layernorm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);              \
  template Tensor<T> silu(const Tensor<T>&);                                                          \
  template Tensor<T> softmax_masked(const Tensor<T>&, std::span<const std::uint8_t>);                 \
  template Tensor<T> sum(const Tensor<T>&);                                                           \
  template Tensor<T> mean(const Tensor<T>&);                                                          \
  template Tensor<T> slice_rows(const Tensor<T>&, std::size_t, std::size_t);                          \
  template Tensor<T> slice_cols(const Tensor<T>&, std::size_t, std::size_t);                          \
  template Tensor<T> concat_rows(const std::vector<Tensor<T>>&);                                      \
  template Tensor<T> concat_cols(const std::vector<Tensor<T>>&);                                      \
  template Tensor<T> gather_rows(const Tensor<T>&, std::span<const int>);                             \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                                \
  template Tensor<T> finite_diff_grad(const std::function<T(const Tensor<T>&)>&, const Tensor<T>&, T);

DITFUSE_INSTANTIATE(float)
DITFUSE_INSTANTIATE(double)

#undef DITFUSE_INSTANTIATE

}  // namespace ditfuse
