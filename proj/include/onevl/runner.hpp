#pragma once

// Graph-free forward of a transformer stack with a key/value cache, for
// inference. Weights are copied out of a ParamStore once; the scalar type F is
// double for exact comparisons against the autodiff forward and may be float
// for serving.

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "onevl/params.hpp"
#include "onevl/tensor.hpp"

namespace onevl {

template <class F>
using RMat = Eigen::Matrix<F, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class F>
using RVec = Eigen::Matrix<F, 1, Eigen::Dynamic>;

template <class F>
RMat<F> to_mat(const Tensor& t) {
  const std::size_t r = t.dim() == 1 ? 1 : t.rows();
  const std::size_t c = t.dim() == 1 ? t.numel() : t.cols();
  RMat<F> m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
  for (std::size_t i = 0; i < t.numel(); ++i) m.data()[i] = static_cast<F>(t.data()[i]);
  return m;
}

template <class F>
void layer_norm_rows(RMat<F>& x, const RVec<F>& g, const RVec<F>& b) {
  const auto n = x.cols();
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    auto row = x.row(r);
    const F first = row(0);
    bool constant = true;
    for (Eigen::Index c = 1; c < n && constant; ++c) constant = row(c) == first;
    if (constant) {
      row = b;
      continue;
    }
    F mu = 0;
    for (Eigen::Index c = 0; c < n; ++c) mu += row(c);
    mu /= static_cast<F>(n);
    F var = 0;
    for (Eigen::Index c = 0; c < n; ++c) var += (row(c) - mu) * (row(c) - mu);
    var /= static_cast<F>(n);
    const F inv = F(1) / std::sqrt(var + static_cast<F>(kLayerNormEps));
    for (Eigen::Index c = 0; c < n; ++c) row(c) = (row(c) - mu) * inv * g(c) + b(c);
  }
}

template <class F>
void gelu_inplace(RMat<F>& x) {
  constexpr F kInvSqrt2 = static_cast<F>(0.70710678118654752440);
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const F v = x.data()[i];
    x.data()[i] = F(0.5) * v * (F(1) + std::erf(v * kInvSqrt2));
  }
}

template <class F>
struct Mlp2 {
  RMat<F> w1, w2;
  RVec<F> b1, b2;

  Mlp2() = default;
  Mlp2(const ParamStore& ps, const std::string& p)
      : w1(to_mat<F>(ps.get(p + "fc1.w").value)),
        w2(to_mat<F>(ps.get(p + "fc2.w").value)),
        b1(to_mat<F>(ps.get(p + "fc1.b").value)),
        b2(to_mat<F>(ps.get(p + "fc2.b").value)) {}

  RMat<F> operator()(const RMat<F>& x) const {
    RMat<F> h = x * w1;
    h.rowwise() += b1;
    gelu_inplace(h);
    RMat<F> o = h * w2;
    o.rowwise() += b2;
    return o;
  }
};

template <class F>
class StackRunner {
 public:
  struct Cache {
    std::vector<RMat<F>> k, v;  // per layer, capacity x d
    Eigen::Index len = 0;
  };

  StackRunner() = default;
  StackRunner(const ParamStore& ps, const std::string& prefix, int n_layers, int n_heads) : n_heads_(n_heads) {
    tok_emb_ = to_mat<F>(ps.get(prefix + "tok_emb").value);
    pos_emb_ = to_mat<F>(ps.get(prefix + "pos_emb").value);
    for (int l = 0; l < n_layers; ++l) {
      const std::string b = prefix + "blocks." + std::to_string(l) + ".";
      Block blk;
      blk.ln1g = to_mat<F>(ps.get(b + "ln1.g").value);
      blk.ln1b = to_mat<F>(ps.get(b + "ln1.b").value);
      blk.wq = to_mat<F>(ps.get(b + "attn.wq").value);
      blk.wk = to_mat<F>(ps.get(b + "attn.wk").value);
      blk.wv = to_mat<F>(ps.get(b + "attn.wv").value);
      blk.wo = to_mat<F>(ps.get(b + "attn.wo").value);
      blk.bo = to_mat<F>(ps.get(b + "attn.bo").value);
      blk.ln2g = to_mat<F>(ps.get(b + "ln2.g").value);
      blk.ln2b = to_mat<F>(ps.get(b + "ln2.b").value);
      blk.mlp = Mlp2<F>(ps, b + "mlp.");
      blocks_.push_back(std::move(blk));
    }
    lnfg_ = to_mat<F>(ps.get(prefix + "lnf.g").value);
    lnfb_ = to_mat<F>(ps.get(prefix + "lnf.b").value);
    out_w_ = to_mat<F>(ps.get(prefix + "out.w").value);
    out_b_ = to_mat<F>(ps.get(prefix + "out.b").value);
  }

  Eigen::Index d() const { return tok_emb_.cols(); }
  Eigen::Index max_len() const { return pos_emb_.rows(); }
  Eigen::Index vocab() const { return out_w_.cols(); }

  Cache new_cache() const {
    Cache c;
    for (std::size_t l = 0; l < blocks_.size(); ++l) {
      c.k.emplace_back(max_len(), d());
      c.v.emplace_back(max_len(), d());
    }
    return c;
  }

  /// Token-table rows for `ids` (positions not yet added).
  RMat<F> token_rows(std::span<const std::int32_t> ids) const {
    RMat<F> x(static_cast<Eigen::Index>(ids.size()), d());
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (ids[i] < 0 || ids[i] >= tok_emb_.rows()) throw std::out_of_range("token id out of range");
      x.row(static_cast<Eigen::Index>(i)) = tok_emb_.row(ids[i]);
    }
    return x;
  }

  /// Appends `x` (input rows without positions) to the cache and returns the
  /// final-layer-norm hidden states of those rows.
  RMat<F> forward(Cache& cache, RMat<F> x) const {
    const Eigen::Index n = x.rows();
    const Eigen::Index start = cache.len;
    if (start + n > max_len()) throw std::length_error("kv cache: sequence exceeds maximum length");
    x += pos_emb_.middleRows(start, n);
    const Eigen::Index total = start + n;
    const Eigen::Index dh = d() / n_heads_;
    const F inv = F(1) / std::sqrt(static_cast<F>(dh));
    for (std::size_t l = 0; l < blocks_.size(); ++l) {
      const Block& b = blocks_[l];
      RMat<F> h = x;
      layer_norm_rows(h, b.ln1g, b.ln1b);
      const RMat<F> q = h * b.wq;
      cache.k[l].middleRows(start, n).noalias() = h * b.wk;
      cache.v[l].middleRows(start, n).noalias() = h * b.wv;
      RMat<F> o(n, d());
      for (int hd = 0; hd < n_heads_; ++hd) {
        const Eigen::Index c0 = hd * dh;
        RMat<F> s = (q.middleCols(c0, dh) * cache.k[l].block(0, c0, total, dh).transpose()) * inv;
        for (Eigen::Index i = 0; i < n; ++i) {
          const Eigen::Index visible = start + i + 1;
          F m = s(i, 0);
          for (Eigen::Index j = 1; j < visible; ++j) m = std::max(m, s(i, j));
          F z = 0;
          for (Eigen::Index j = 0; j < visible; ++j) {
            s(i, j) = std::exp(s(i, j) - m);
            z += s(i, j);
          }
          for (Eigen::Index j = 0; j < visible; ++j) s(i, j) /= z;
          for (Eigen::Index j = visible; j < total; ++j) s(i, j) = 0;
        }
        o.middleCols(c0, dh).noalias() = s * cache.v[l].block(0, c0, total, dh);
      }
      x.noalias() += o * b.wo;
      x.rowwise() += b.bo;
      h = x;
      layer_norm_rows(h, b.ln2g, b.ln2b);
      x += b.mlp(h);
    }
    cache.len = total;
    layer_norm_rows(x, lnfg_, lnfb_);
    return x;
  }

  RVec<F> logits(const RVec<F>& hidden) const {
    RVec<F> out = hidden * out_w_;
    out += out_b_;
    return out;
  }

 private:
  struct Block {
    RVec<F> ln1g, ln1b, ln2g, ln2b, bo;
    RMat<F> wq, wk, wv, wo;
    Mlp2<F> mlp;
  };

  int n_heads_ = 1;
  RMat<F> tok_emb_, pos_emb_, out_w_;
  RVec<F> lnfg_, lnfb_, out_b_;
  std::vector<Block> blocks_;
};

}  // namespace onevl
