#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace ditfuse {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until first touched
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into parents that require grad.
  std::function<void(const std::vector<T>& grad_out)> backward;
  const char* op = "leaf";

  std::vector<T>& ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), T(0));
    return grad;
  }
};

}  // namespace detail

/// Dense row-major array with reverse-mode gradient tracking.
///
/// A Tensor is a cheap handle; copies share the same node. Op outputs are
/// immutable. Leaves (parameters) may be updated in place by an optimizer
/// through mutable_data().
template <typename T>
class Tensor {
 public:
  using value_type = T;
  using NodePtr = std::shared_ptr<detail::Node<T>>;

  Tensor() = default;
  Tensor(Shape shape, std::vector<T> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, T value, bool requires_grad = false);
  static Tensor scalar(T value, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t numel() const { return node_->data.size(); }
  // Last-axis view: rows = numel / cols.
  std::size_t cols() const;
  std::size_t rows() const { return numel() / cols(); }

  std::span<const T> data() const { return node_->data; }
  std::span<T> mutable_data() { return node_->data; }
  T operator[](std::size_t i) const { return node_->data[i]; }
  T item() const;

  bool requires_grad() const { return node_->requires_grad; }
  bool is_leaf() const { return !node_->backward; }
  bool has_grad() const { return node_->grad.size() == node_->data.size() && !node_->data.empty(); }
  std::span<const T> grad() const { return node_->grad; }
  void zero_grad();

  /// Populates grad of every requires_grad leaf reachable from this scalar.
  /// Leaf gradients accumulate across calls.
  void backward() const;

  /// Copy of the values with no graph attached.
  Tensor detach() const;

  const NodePtr& node() const { return node_; }
  explicit Tensor(NodePtr node) : node_(std::move(node)) {}

 private:
  NodePtr node_;
};

// Ops. All shapes are checked and mismatches raise ErrorCode::ShapeMismatch.

template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
/// a · bᵀ without materializing the transpose.
template <typename T> Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> transpose(const Tensor<T>& a);
template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> scale(const Tensor<T>& a, T s);
/// x[..×n] + b[n], broadcast over rows.
template <typename T> Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& b);
template <typename T>
Tensor<T> layernorm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps);
template <typename T> Tensor<T> silu(const Tensor<T>& x);
/// Row softmax over visible entries only; `visible` is rows×cols, nonzero = visible.
template <typename T> Tensor<T> softmax_masked(const Tensor<T>& scores, std::span<const std::uint8_t> visible);
template <typename T> Tensor<T> sum(const Tensor<T>& x);
template <typename T> Tensor<T> mean(const Tensor<T>& x);
template <typename T> Tensor<T> slice_rows(const Tensor<T>& x, std::size_t begin, std::size_t end);
template <typename T> Tensor<T> slice_cols(const Tensor<T>& x, std::size_t begin, std::size_t end);
template <typename T> Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts);
template <typename T> Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts);
/// Row lookup: out[i] = table[ids[i]].
template <typename T> Tensor<T> gather_rows(const Tensor<T>& table, std::span<const int> ids);
template <typename T> Tensor<T> reshape(const Tensor<T>& x, Shape shape);

/// Central-difference gradient of a scalar function, one element at a time.
template <typename T>
Tensor<T> finite_diff_grad(const std::function<T(const Tensor<T>&)>& f, const Tensor<T>& x, T h);

}  // namespace ditfuse
