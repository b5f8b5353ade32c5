#include "onevl/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

namespace onevl {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

thread_local int g_no_grad_depth = 0;
thread_local bool g_checked = false;

void check_finite(const char* op, std::span<const double> values, const char* what) {
  for (double v : values) {
    if (!std::isfinite(v)) {
      throw NumericError(std::string("non-finite ") + what + " in op '" + op + "'");
    }
  }
}

void require_2d(const Tensor& t, const char* op) {
  if (t.dim() != 2) {
    throw ShapeError(std::string(op) + ": expected a 2-D tensor, got " + shape_str(t.shape()));
  }
}

// Builds the output node. `backward` is attached only when some parent is
// tracked; otherwise the result is a constant.
Tensor make_result(Shape shape, std::vector<double> data, const char* op,
                   std::vector<std::shared_ptr<Node>> parents,
                   std::function<void(Node&)> backward) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->op = op;
  if (g_checked) check_finite(op, node->data, "output");
  bool any = false;
  if (grad_enabled()) {
    for (const auto& p : parents) any = any || p->requires_grad;
  }
  if (any) {
    node->requires_grad = true;
    node->parents = std::move(parents);
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

CMapMat cmap(const Node& n) {
  return CMapMat(n.data.data(), static_cast<Eigen::Index>(n.shape[0]),
                 static_cast<Eigen::Index>(n.shape[1]));
}

MapMat gmap(Node& n) {
  auto& g = n.ensure_grad();
  return MapMat(g.data(), static_cast<Eigen::Index>(n.shape[0]),
                static_cast<Eigen::Index>(n.shape[1]));
}

CMapMat cgmap(const Node& n) {
  return CMapMat(n.grad.data(), static_cast<Eigen::Index>(n.shape[0]),
                 static_cast<Eigen::Index>(n.shape[1]));
}

}  // namespace

std::size_t numel_of(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

std::vector<double>& Node::ensure_grad() {
  if (grad.empty()) grad.assign(data.size(), 0.0);
  return grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return filled(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::filled(Shape shape, double value, bool requires_grad) {
  std::vector<double> values(numel_of(shape), value);
  return from(std::move(shape), std::move(values), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  if (numel_of(shape) != values.size()) {
    throw ShapeError("Tensor::from: " + std::to_string(values.size()) +
                     " values do not fill shape " + shape_str(shape));
  }
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(values);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from({}, {value}, requires_grad);
}

std::size_t Tensor::rows() const {
  if (dim() != 2) throw ShapeError("rows() on non-matrix " + shape_str(shape()));
  return node_->shape[0];
}

std::size_t Tensor::cols() const {
  if (dim() != 2) throw ShapeError("cols() on non-matrix " + shape_str(shape()));
  return node_->shape[1];
}

double Tensor::at(std::size_t r, std::size_t c) const { return node_->data.at(r * cols() + c); }

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  return node_->data[0];
}

void Tensor::set_requires_grad(bool on) { node_->requires_grad = on; }

void Tensor::zero_grad() { node_->grad.clear(); }

Tensor Tensor::detach() const { return from(shape(), node_->data, false); }

Tensor Tensor::clone() const { return from(shape(), node_->data, requires_grad()); }

NoGradGuard::NoGradGuard() { ++g_no_grad_depth; }
NoGradGuard::~NoGradGuard() { --g_no_grad_depth; }
bool grad_enabled() { return g_no_grad_depth == 0; }

CheckedModeGuard::CheckedModeGuard(bool on) : previous_(g_checked) { g_checked = on; }
CheckedModeGuard::~CheckedModeGuard() { g_checked = previous_; }
bool checked_mode() { return g_checked; }

std::vector<Node*> topological_order(const Tensor& root) {
  std::vector<Node*> order;
  if (!root.defined() || !root.requires_grad()) return order;
  std::unordered_set<Node*> seen;
  // Iterative post-order DFS; graphs are deep (one node per op).
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.node(), 0);
  seen.insert(root.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->requires_grad && seen.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;
}

void Tensor::backward(double seed) const {
  if (numel() != 1) throw ShapeError("backward() needs a single-element tensor, got " + shape_str(shape()));
  if (!requires_grad()) return;
  auto order = topological_order(*this);
  node_->ensure_grad()[0] += seed;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (!n->backward || n->grad.empty()) continue;
    n->backward(*n);
    if (g_checked) {
      for (const auto& p : n->parents) {
        if (p->requires_grad) check_finite(n->op, p->grad, "gradient");
      }
    }
  }
}

// ---- ops -------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_2d(a, "matmul");
  require_2d(b, "matmul");
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: inner dims differ " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  std::vector<double> out(a.rows() * b.cols());
  MapMat(out.data(), a.rows(), b.cols()).noalias() = cmap(*a.node()) * cmap(*b.node());
  return make_result({a.rows(), b.cols()}, std::move(out), "matmul", {a.node_ptr(), b.node_ptr()},
                     [](Node& self) {
                       Node& pa = *self.parents[0];
                       Node& pb = *self.parents[1];
                       auto dc = cgmap(self);
                       if (pa.requires_grad) gmap(pa).noalias() += dc * cmap(pb).transpose();
                       if (pb.requires_grad) gmap(pb).noalias() += cmap(pa).transpose() * dc;
                     });
}

Tensor transpose(const Tensor& a) {
  require_2d(a, "transpose");
  std::vector<double> out(a.numel());
  MapMat(out.data(), a.cols(), a.rows()) = cmap(*a.node()).transpose();
  return make_result({a.cols(), a.rows()}, std::move(out), "transpose", {a.node_ptr()},
                     [](Node& self) {
                       Node& pa = *self.parents[0];
                       gmap(pa) += cgmap(self).transpose();
                     });
}

namespace {

void require_same(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shapes differ " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same(a, b, "add");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  return make_result(a.shape(), std::move(out), "add", {a.node_ptr(), b.node_ptr()}, [](Node& self) {
    for (auto& p : self.parents) {
      if (!p->requires_grad) continue;
      auto& g = p->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same(a, b, "sub");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  return make_result(a.shape(), std::move(out), "sub", {a.node_ptr(), b.node_ptr()}, [](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    if (pa.requires_grad) {
      auto& g = pa.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (pb.requires_grad) {
      auto& g = pb.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same(a, b, "mul");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  return make_result(a.shape(), std::move(out), "mul", {a.node_ptr(), b.node_ptr()}, [](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    if (pa.requires_grad) {
      auto& g = pa.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb.data[i];
    }
    if (pb.requires_grad) {
      auto& g = pb.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa.data[i];
    }
  });
}

Tensor scale(const Tensor& a, double s) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * s;
  return make_result(a.shape(), std::move(out), "scale", {a.node_ptr()}, [s](Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * s;
  });
}

Tensor add_row_bias(const Tensor& x, const Tensor& bias) {
  require_2d(x, "add_row_bias");
  const std::size_t m = x.rows();
  const std::size_t n = x.cols();
  if (bias.numel() != n || bias.dim() > 2 || (bias.dim() == 2 && bias.rows() != 1)) {
    throw ShapeError("add_row_bias: bias " + shape_str(bias.shape()) + " does not match " +
                     shape_str(x.shape()));
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  for (std::size_t r = 0; r < m; ++r) {
    for (std::size_t c = 0; c < n; ++c) out[r * n + c] += bias.data()[c];
  }
  return make_result(x.shape(), std::move(out), "add_row_bias", {x.node_ptr(), bias.node_ptr()},
                     [m, n](Node& self) {
                       Node& px = *self.parents[0];
                       Node& pb = *self.parents[1];
                       if (px.requires_grad) {
                         auto& g = px.ensure_grad();
                         for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
                       }
                       if (pb.requires_grad) {
                         auto& g = pb.ensure_grad();
                         for (std::size_t r = 0; r < m; ++r) {
                           for (std::size_t c = 0; c < n; ++c) g[c] += self.grad[r * n + c];
                         }
                       }
                     });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (numel_of(shape) != a.numel()) {
    throw ShapeError("reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape));
  }
  std::vector<double> out(a.data().begin(), a.data().end());
  return make_result(std::move(shape), std::move(out), "reshape", {a.node_ptr()}, [](Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

namespace {

// Softmax over the first `limit(r)` entries of each row; the rest are zero.
template <class Limit>
std::vector<double> masked_softmax(const Tensor& x, Limit limit) {
  const std::size_t m = x.rows();
  const std::size_t n = x.cols();
  std::vector<double> out(m * n, 0.0);
  const double* in = x.data().data();
  for (std::size_t r = 0; r < m; ++r) {
    const std::size_t len = limit(r);
    const double* row = in + r * n;
    double* dst = out.data() + r * n;
    double mx = row[0];
    for (std::size_t c = 1; c < len; ++c) mx = std::max(mx, row[c]);
    double total = 0.0;
    for (std::size_t c = 0; c < len; ++c) {
      dst[c] = std::exp(row[c] - mx);
      total += dst[c];
    }
    const double inv = 1.0 / total;
    for (std::size_t c = 0; c < len; ++c) dst[c] *= inv;
  }
  return out;
}

void softmax_backward(Node& self) {
  Node& px = *self.parents[0];
  const std::size_t m = self.shape[0];
  const std::size_t n = self.shape[1];
  auto& g = px.ensure_grad();
  for (std::size_t r = 0; r < m; ++r) {
    const double* y = self.data.data() + r * n;
    const double* dy = self.grad.data() + r * n;
    double dot = 0.0;
    for (std::size_t c = 0; c < n; ++c) dot += y[c] * dy[c];
    double* dx = g.data() + r * n;
    for (std::size_t c = 0; c < n; ++c) dx[c] += y[c] * (dy[c] - dot);
  }
}

}  // namespace

Tensor softmax_rows(const Tensor& x) {
  require_2d(x, "softmax_rows");
  if (x.cols() == 0) throw ShapeError("softmax_rows: zero columns");
  const std::size_t n = x.cols();
  auto out = masked_softmax(x, [n](std::size_t) { return n; });
  return make_result(x.shape(), std::move(out), "softmax_rows", {x.node_ptr()}, softmax_backward);
}

Tensor causal_softmax_rows(const Tensor& x, std::size_t offset) {
  require_2d(x, "causal_softmax_rows");
  const std::size_t n = x.cols();
  if (x.rows() + offset > n) {
    throw ShapeError("causal_softmax_rows: " + std::to_string(x.rows()) + " rows at offset " +
                     std::to_string(offset) + " exceed " + std::to_string(n) + " columns");
  }
  auto out = masked_softmax(x, [offset](std::size_t r) { return r + offset + 1; });
  return make_result(x.shape(), std::move(out), "causal_softmax_rows", {x.node_ptr()},
                     softmax_backward);
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias) {
  require_2d(x, "layer_norm");
  const std::size_t m = x.rows();
  const std::size_t n = x.cols();
  if (gain.numel() != n || bias.numel() != n) {
    throw ShapeError("layer_norm: gain/bias length must equal " + std::to_string(n));
  }
  std::vector<double> xhat(m * n);
  std::vector<double> inv_std(m);
  std::vector<double> out(m * n);
  const double* in = x.data().data();
  for (std::size_t r = 0; r < m; ++r) {
    const double* row = in + r * n;
    const bool constant = std::all_of(row, row + n, [&](double v) { return v == row[0]; });
    double mu = 0.0;
    for (std::size_t c = 0; c < n; ++c) mu += row[c];
    mu /= static_cast<double>(n);
    double var = 0.0;
    if (!constant) {
      for (std::size_t c = 0; c < n; ++c) var += (row[c] - mu) * (row[c] - mu);
      var /= static_cast<double>(n);
    }
    inv_std[r] = 1.0 / std::sqrt(var + kLayerNormEps);
    for (std::size_t c = 0; c < n; ++c) {
      const double h = constant ? 0.0 : (row[c] - mu) * inv_std[r];
      xhat[r * n + c] = h;
      out[r * n + c] = h * gain.data()[c] + bias.data()[c];
    }
  }
  return make_result(
      x.shape(), std::move(out), "layer_norm", {x.node_ptr(), gain.node_ptr(), bias.node_ptr()},
      [m, n, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
        Node& px = *self.parents[0];
        Node& pg = *self.parents[1];
        Node& pb = *self.parents[2];
        const double* dy = self.grad.data();
        if (pg.requires_grad) {
          auto& g = pg.ensure_grad();
          for (std::size_t i = 0; i < m * n; ++i) g[i % n] += dy[i] * xhat[i];
        }
        if (pb.requires_grad) {
          auto& g = pb.ensure_grad();
          for (std::size_t i = 0; i < m * n; ++i) g[i % n] += dy[i];
        }
        if (px.requires_grad) {
          auto& g = px.ensure_grad();
          const double inv_n = 1.0 / static_cast<double>(n);
          for (std::size_t r = 0; r < m; ++r) {
            double s1 = 0.0;
            double s2 = 0.0;
            for (std::size_t c = 0; c < n; ++c) {
              const double dh = dy[r * n + c] * pg.data[c];
              s1 += dh;
              s2 += dh * xhat[r * n + c];
            }
            for (std::size_t c = 0; c < n; ++c) {
              const double dh = dy[r * n + c] * pg.data[c];
              g[r * n + c] += inv_std[r] * (dh - s1 * inv_n - xhat[r * n + c] * s2 * inv_n);
            }
          }
        }
      });
}

Tensor gelu(const Tensor& x) {
  constexpr double kInvSqrt2 = 0.70710678118654752440;
  constexpr double kInvSqrt2Pi = 0.39894228040143267794;
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = x.data()[i];
    out[i] = 0.5 * v * (1.0 + std::erf(v * kInvSqrt2));
  }
  return make_result(x.shape(), std::move(out), "gelu", {x.node_ptr()}, [](Node& self) {
    Node& px = *self.parents[0];
    auto& g = px.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double v = px.data[i];
      const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
      const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
      g[i] += self.grad[i] * (cdf + v * pdf);
    }
  });
}

Tensor embed(std::span<const std::int32_t> ids, const Tensor& table) {
  require_2d(table, "embed");
  const std::size_t n = table.cols();
  const std::size_t vocab = table.rows();
  std::vector<double> out(ids.size() * n);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab) {
      throw ShapeError("embed: id " + std::to_string(ids[i]) + " outside table of " +
                       std::to_string(vocab) + " rows");
    }
    std::copy_n(table.data().begin() + static_cast<std::ptrdiff_t>(ids[i] * n), n,
                out.begin() + static_cast<std::ptrdiff_t>(i * n));
  }
  std::vector<std::int32_t> idv(ids.begin(), ids.end());
  return make_result({ids.size(), n}, std::move(out), "embed", {table.node_ptr()},
                     [idv = std::move(idv), n](Node& self) {
                       auto& g = self.parents[0]->ensure_grad();
                       for (std::size_t i = 0; i < idv.size(); ++i) {
                         const std::size_t base = static_cast<std::size_t>(idv[i]) * n;
                         for (std::size_t c = 0; c < n; ++c) g[base + c] += self.grad[i * n + c];
                       }
                     });
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows) {
  require_2d(x, "gather_rows");
  const std::size_t n = x.cols();
  std::vector<double> out(rows.size() * n);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= x.rows()) throw ShapeError("gather_rows: row index out of range");
    std::copy_n(x.data().begin() + static_cast<std::ptrdiff_t>(rows[i] * n), n,
                out.begin() + static_cast<std::ptrdiff_t>(i * n));
  }
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return make_result({rows.size(), n}, std::move(out), "gather_rows", {x.node_ptr()},
                     [idx = std::move(idx), n](Node& self) {
                       auto& g = self.parents[0]->ensure_grad();
                       for (std::size_t i = 0; i < idx.size(); ++i) {
                         for (std::size_t c = 0; c < n; ++c) g[idx[i] * n + c] += self.grad[i * n + c];
                       }
                     });
}

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end) {
  require_2d(x, "slice_rows");
  if (begin > end || end > x.rows()) {
    throw ShapeError("slice_rows: [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") outside " + shape_str(x.shape()));
  }
  const std::size_t n = x.cols();
  std::vector<double> out(x.data().begin() + static_cast<std::ptrdiff_t>(begin * n),
                          x.data().begin() + static_cast<std::ptrdiff_t>(end * n));
  return make_result({end - begin, n}, std::move(out), "slice_rows", {x.node_ptr()},
                     [begin, n](Node& self) {
                       auto& g = self.parents[0]->ensure_grad();
                       for (std::size_t i = 0; i < self.grad.size(); ++i) g[begin * n + i] += self.grad[i];
                     });
}

Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t end) {
  require_2d(x, "slice_cols");
  if (begin > end || end > x.cols()) {
    throw ShapeError("slice_cols: [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") outside " + shape_str(x.shape()));
  }
  const std::size_t m = x.rows();
  const std::size_t n = x.cols();
  const std::size_t w = end - begin;
  std::vector<double> out(m * w);
  for (std::size_t r = 0; r < m; ++r) {
    std::copy_n(x.data().begin() + static_cast<std::ptrdiff_t>(r * n + begin), w,
                out.begin() + static_cast<std::ptrdiff_t>(r * w));
  }
  return make_result({m, w}, std::move(out), "slice_cols", {x.node_ptr()},
                     [m, n, w, begin](Node& self) {
                       auto& g = self.parents[0]->ensure_grad();
                       for (std::size_t r = 0; r < m; ++r) {
                         for (std::size_t c = 0; c < w; ++c) g[r * n + begin + c] += self.grad[r * w + c];
                       }
                     });
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const std::size_t n = parts.front().cols();
  std::size_t total = 0;
  for (const auto& p : parts) {
    require_2d(p, "concat_rows");
    if (p.cols() != n) throw ShapeError("concat_rows: column counts differ");
    total += p.rows();
  }
  std::vector<double> out;
  out.reserve(total * n);
  std::vector<std::shared_ptr<Node>> parents;
  for (const auto& p : parts) {
    out.insert(out.end(), p.data().begin(), p.data().end());
    parents.push_back(p.node_ptr());
  }
  return make_result({total, n}, std::move(out), "concat_rows", std::move(parents), [](Node& self) {
    std::size_t offset = 0;
    for (auto& p : self.parents) {
      const std::size_t len = p->data.size();
      if (p->requires_grad) {
        auto& g = p->ensure_grad();
        for (std::size_t i = 0; i < len; ++i) g[i] += self.grad[offset + i];
      }
      offset += len;
    }
  });
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const std::size_t m = parts.front().rows();
  std::size_t total = 0;
  for (const auto& p : parts) {
    require_2d(p, "concat_cols");
    if (p.rows() != m) throw ShapeError("concat_cols: row counts differ");
    total += p.cols();
  }
  std::vector<double> out(m * total);
  std::vector<std::shared_ptr<Node>> parents;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.cols();
    for (std::size_t r = 0; r < m; ++r) {
      std::copy_n(p.data().begin() + static_cast<std::ptrdiff_t>(r * w), w,
                  out.begin() + static_cast<std::ptrdiff_t>(r * total + offset));
    }
    offset += w;
    parents.push_back(p.node_ptr());
  }
  return make_result({m, total}, std::move(out), "concat_cols", std::move(parents),
                     [m, total](Node& self) {
                       std::size_t offset = 0;
                       for (auto& p : self.parents) {
                         const std::size_t w = p->shape[1];
                         if (p->requires_grad) {
                           auto& g = p->ensure_grad();
                           for (std::size_t r = 0; r < m; ++r) {
                             for (std::size_t c = 0; c < w; ++c) g[r * w + c] += self.grad[r * total + offset + c];
                           }
                         }
                         offset += w;
                       }
                     });
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  return make_result({}, {s}, "sum", {x.node_ptr()}, [](Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (double& v : g) v += self.grad[0];
  });
}

Tensor mean(const Tensor& x) {
  if (x.numel() == 0) throw ShapeError("mean of empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor cross_entropy(const Tensor& logits, std::span<const std::int32_t> targets,
                     const std::vector<bool>& mask) {
  require_2d(logits, "cross_entropy");
  const std::size_t t_len = logits.rows();
  const std::size_t vocab = logits.cols();
  if (targets.size() != t_len || mask.size() != t_len) {
    throw ShapeError("cross_entropy: " + std::to_string(t_len) + " rows but " +
                     std::to_string(targets.size()) + " targets / " + std::to_string(mask.size()) +
                     " mask entries");
  }
  const auto active = static_cast<std::size_t>(std::count(mask.begin(), mask.end(), true));
  if (active == 0) throw std::invalid_argument("cross_entropy: empty mask");
  std::vector<double> probs(t_len * vocab, 0.0);
  double loss = 0.0;
  const double* in = logits.data().data();
  for (std::size_t r = 0; r < t_len; ++r) {
    if (!mask[r]) continue;
    if (targets[r] < 0 || static_cast<std::size_t>(targets[r]) >= vocab) {
      throw ShapeError("cross_entropy: target id " + std::to_string(targets[r]) +
                       " outside vocabulary of " + std::to_string(vocab));
    }
    const double* row = in + r * vocab;
    const double mx = *std::max_element(row, row + vocab);
    double total = 0.0;
    for (std::size_t c = 0; c < vocab; ++c) {
      probs[r * vocab + c] = std::exp(row[c] - mx);
      total += probs[r * vocab + c];
    }
    for (std::size_t c = 0; c < vocab; ++c) probs[r * vocab + c] /= total;
    loss += -(row[targets[r]] - mx - std::log(total));
  }
  const double inv = 1.0 / static_cast<double>(active);
  std::vector<std::int32_t> tv(targets.begin(), targets.end());
  return make_result({}, {loss * inv}, "cross_entropy", {logits.node_ptr()},
                     [probs = std::move(probs), tv = std::move(tv), mask, vocab, inv](Node& self) {
                       auto& g = self.parents[0]->ensure_grad();
                       const double scale_by = self.grad[0] * inv;
                       for (std::size_t r = 0; r < tv.size(); ++r) {
                         if (!mask[r]) continue;
                         for (std::size_t c = 0; c < vocab; ++c) g[r * vocab + c] += scale_by * probs[r * vocab + c];
                         g[r * vocab + static_cast<std::size_t>(tv[r])] -= scale_by;
                       }
                     });
}

Tensor cross_entropy(const Tensor& logits, std::span<const std::int32_t> targets) {
  return cross_entropy(logits, targets, std::vector<bool>(targets.size(), true));
}

Tensor mse(const Tensor& pred, const Tensor& target) {
  require_same(pred, target, "mse");
  const std::size_t n = pred.numel();
  if (n == 0) throw ShapeError("mse of empty tensor");
  double s = 0.0;
  std::vector<double> diff(n);
  for (std::size_t i = 0; i < n; ++i) {
    diff[i] = pred.data()[i] - target.data()[i];
    s += diff[i] * diff[i];
  }
  const double inv = 1.0 / static_cast<double>(n);
  return make_result({}, {s * inv}, "mse", {pred.node_ptr()},
                     [diff = std::move(diff), inv](Node& self) {
                       auto& g = self.parents[0]->ensure_grad();
                       for (std::size_t i = 0; i < g.size(); ++i) g[i] += 2.0 * inv * diff[i] * self.grad[0];
                     });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  return add_row_bias(matmul(x, weight), bias);
}

}  // namespace onevl
