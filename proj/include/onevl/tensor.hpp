#pragma once

// Dense row-major tensors with reverse-mode automatic differentiation.
//
// Every op records its parents and a backward closure when at least one input
// requires a gradient and no NoGradGuard is active. Calling backward() on a
// scalar walks the recorded graph once in reverse topological order and
// accumulates into the `grad` buffers of every tracked node.
//
// Apart from row-wise bias addition there is no broadcasting; shapes must
// match exactly and mismatches throw ShapeError.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace onevl {

using Shape = std::vector<std::size_t>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised in checked mode when an op produces NaN/Inf in its output or in a
/// gradient it propagates. The message names the op.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::size_t numel_of(const Shape& shape);
std::string shape_str(const Shape& shape);

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until the node receives a gradient
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  std::vector<double>& ensure_grad();
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor filled(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t dim() const { return node_->shape.size(); }
  std::size_t rows() const;
  std::size_t cols() const;
  std::size_t numel() const { return node_->data.size(); }

  std::span<const double> data() const { return node_->data; }
  std::span<double> mutable_data() { return node_->data; }
  double at(std::size_t r, std::size_t c) const;
  double item() const;

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on);
  bool has_grad() const { return !node_->grad.empty(); }
  /// Accumulated gradient; empty span when the tensor never received one.
  std::span<const double> grad() const { return node_->grad; }
  std::span<double> mutable_grad() { return node_->grad; }
  void zero_grad();

  /// Reverse-mode sweep from this tensor with d(this)/d(this) = seed.
  void backward(double seed = 1.0) const;

  /// Same values, no history, no gradient tracking.
  Tensor detach() const;
  Tensor clone() const;

  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& node_ptr() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

// Disables graph recording on this thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

bool grad_enabled();

// Checked mode: every op output and every propagated gradient is scanned for
// NaN/Inf. Off by default; enable per thread.
class CheckedModeGuard {
 public:
  explicit CheckedModeGuard(bool on = true);
  ~CheckedModeGuard();
  CheckedModeGuard(const CheckedModeGuard&) = delete;
  CheckedModeGuard& operator=(const CheckedModeGuard&) = delete;

 private:
  bool previous_;
};

bool checked_mode();

/// Nodes reachable from `root` that require gradients, parents before
/// children. Each node appears exactly once.
std::vector<Node*> topological_order(const Tensor& root);

// ---- ops -------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
/// x[m×n] + b, where b has n elements (shape {n} or {1,n}).
Tensor add_row_bias(const Tensor& x, const Tensor& bias);
Tensor reshape(const Tensor& a, Shape shape);

Tensor softmax_rows(const Tensor& x);
/// Row i may attend to columns j <= i + offset; other entries come out as 0.
Tensor causal_softmax_rows(const Tensor& x, std::size_t offset = 0);

inline constexpr double kLayerNormEps = 1e-5;
/// Per-row normalization with gain/bias of length cols. Rows whose entries are
/// all equal normalize to exactly zero before gain/bias.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias);
/// Exact (erf) GELU.
Tensor gelu(const Tensor& x);

/// Row lookup: out[i] = table[ids[i]].
Tensor embed(std::span<const std::int32_t> ids, const Tensor& table);
Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows);
Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end);
Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t end);
Tensor concat_rows(std::span<const Tensor> parts);
Tensor concat_cols(std::span<const Tensor> parts);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

/// Mean of -log softmax(logits[t])[targets[t]] over positions with mask[t].
/// Masked-out rows get zero loss and zero gradient. Throws on an empty mask.
Tensor cross_entropy(const Tensor& logits, std::span<const std::int32_t> targets,
                     const std::vector<bool>& mask);
/// Cross entropy with every position active.
Tensor cross_entropy(const Tensor& logits, std::span<const std::int32_t> targets);

/// Mean squared error over all elements. `target` is treated as a constant.
Tensor mse(const Tensor& pred, const Tensor& target);

/// Convenience: x·W + b.
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

}  // namespace onevl
