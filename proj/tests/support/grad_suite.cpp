#include "grad_suite.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

#include "onevl/rng.hpp"
#include "onevl/tensor.hpp"

namespace onevl::support {

namespace {

using Fn = std::function<Tensor(const std::vector<Tensor>&)>;

struct Case {
  std::vector<Tensor> leaves;
  Fn fn;
};

Tensor random_tensor(Rng& rng, Shape shape) {
  std::vector<double> v(numel_of(shape));
  for (auto& x : v) x = rng.normal();
  return Tensor::from(std::move(shape), std::move(v), true);
}

std::size_t dim(Rng& rng, std::size_t lo = 2, std::size_t hi = 5) { return lo + rng.below(hi - lo + 1); }

double weighted_loss(const Fn& fn, const std::vector<Tensor>& leaves, const std::vector<double>& w) {
  NoGradGuard ng;
  const Tensor out = fn(leaves);
  double acc = 0.0;
  for (std::size_t i = 0; i < out.numel(); ++i) acc += out.data()[i] * w[i];
  return acc;
}

double check_case(Case c, Rng& rng) {
  Tensor probe;
  {
    NoGradGuard ng;
    probe = c.fn(c.leaves);
  }
  std::vector<double> w(probe.numel());
  for (auto& x : w) x = rng.normal();

  for (auto& l : c.leaves) l.zero_grad();
  const Tensor out = c.fn(c.leaves);
  const Tensor loss = out.numel() == 1 ? scale(reshape(out, {1}), w[0])
                                       : sum(mul(out, Tensor::from(out.shape(), w)));
  loss.backward();

  double worst = 0.0;
  for (auto& leaf : c.leaves) {
    const std::vector<double> analytic(leaf.grad().begin(), leaf.grad().end());
    auto data = leaf.mutable_data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double saved = data[i];
      data[i] = saved + kFdStep;
      const double up = weighted_loss(c.fn, c.leaves, w);
      data[i] = saved - kFdStep;
      const double down = weighted_loss(c.fn, c.leaves, w);
      data[i] = saved;
      const double numeric = (up - down) / (2 * kFdStep);
      const double a = analytic.empty() ? 0.0 : analytic[i];
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), kGradFloor});
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

using Maker = std::function<Case(Rng&)>;

std::vector<std::pair<std::string, Maker>> makers() {
  std::vector<std::pair<std::string, Maker>> m;
  m.emplace_back("matmul", [](Rng& r) {
    const auto a = dim(r), k = dim(r), b = dim(r);
    return Case{{random_tensor(r, {a, k}), random_tensor(r, {k, b})},
                [](const std::vector<Tensor>& x) { return matmul(x[0], x[1]); }};
  });
  m.emplace_back("transpose", [](Rng& r) {
    return Case{{random_tensor(r, {dim(r), dim(r)})}, [](const std::vector<Tensor>& x) { return transpose(x[0]); }};
  });
  m.emplace_back("add", [](Rng& r) {
    const Shape s{dim(r), dim(r)};
    return Case{{random_tensor(r, s), random_tensor(r, s)},
                [](const std::vector<Tensor>& x) { return add(x[0], x[1]); }};
  });
  m.emplace_back("sub", [](Rng& r) {
    const Shape s{dim(r), dim(r)};
    return Case{{random_tensor(r, s), random_tensor(r, s)},
                [](const std::vector<Tensor>& x) { return sub(x[0], x[1]); }};
  });
  m.emplace_back("mul", [](Rng& r) {
    const Shape s{dim(r), dim(r)};
    return Case{{random_tensor(r, s), random_tensor(r, s)},
                [](const std::vector<Tensor>& x) { return mul(x[0], x[1]); }};
  });
  m.emplace_back("scale", [](Rng& r) {
    const double s = r.normal();
    return Case{{random_tensor(r, {dim(r), dim(r)})}, [s](const std::vector<Tensor>& x) { return scale(x[0], s); }};
  });
  m.emplace_back("add_row_bias", [](Rng& r) {
    const auto a = dim(r), b = dim(r);
    return Case{{random_tensor(r, {a, b}), random_tensor(r, {b})},
                [](const std::vector<Tensor>& x) { return add_row_bias(x[0], x[1]); }};
  });
  m.emplace_back("reshape", [](Rng& r) {
    const auto a = dim(r), b = dim(r);
    return Case{{random_tensor(r, {a, b})}, [a, b](const std::vector<Tensor>& x) { return reshape(x[0], {b, a}); }};
  });
  m.emplace_back("softmax_rows", [](Rng& r) {
    return Case{{random_tensor(r, {dim(r), dim(r, 2, 9)})},
                [](const std::vector<Tensor>& x) { return softmax_rows(x[0]); }};
  });
  m.emplace_back("causal_softmax_rows", [](Rng& r) {
    const auto rows = dim(r), offset = r.below(3);
    return Case{{random_tensor(r, {rows, rows + offset})},
                [offset](const std::vector<Tensor>& x) { return causal_softmax_rows(x[0], offset); }};
  });
  m.emplace_back("layer_norm", [](Rng& r) {
    const auto a = dim(r), b = dim(r, 3, 8);
    return Case{{random_tensor(r, {a, b}), random_tensor(r, {b}), random_tensor(r, {b})},
                [](const std::vector<Tensor>& x) { return layer_norm(x[0], x[1], x[2]); }};
  });
  m.emplace_back("gelu", [](Rng& r) {
    return Case{{random_tensor(r, {dim(r), dim(r)})}, [](const std::vector<Tensor>& x) { return gelu(x[0]); }};
  });
  m.emplace_back("embed", [](Rng& r) {
    const auto v = dim(r, 3, 7), d = dim(r);
    std::vector<std::int32_t> ids(dim(r, 2, 6));
    for (auto& i : ids) i = static_cast<std::int32_t>(r.below(v));
    return Case{{random_tensor(r, {v, d})}, [ids](const std::vector<Tensor>& x) { return embed(ids, x[0]); }};
  });
  m.emplace_back("gather_rows", [](Rng& r) {
    const auto a = dim(r), b = dim(r);
    std::vector<std::size_t> rows(dim(r, 2, 6));
    for (auto& i : rows) i = r.below(a);
    return Case{{random_tensor(r, {a, b})}, [rows](const std::vector<Tensor>& x) { return gather_rows(x[0], rows); }};
  });
  m.emplace_back("slice_rows", [](Rng& r) {
    const auto a = dim(r, 3, 6), b = dim(r);
    const auto lo = r.below(a - 1);
    const auto hi = lo + 1 + r.below(a - lo);
    return Case{{random_tensor(r, {a, b})},
                [lo, hi](const std::vector<Tensor>& x) { return slice_rows(x[0], lo, hi); }};
  });
  m.emplace_back("slice_cols", [](Rng& r) {
    const auto a = dim(r), b = dim(r, 3, 6);
    const auto lo = r.below(b - 1);
    const auto hi = lo + 1 + r.below(b - lo);
    return Case{{random_tensor(r, {a, b})},
                [lo, hi](const std::vector<Tensor>& x) { return slice_cols(x[0], lo, hi); }};
  });
  m.emplace_back("concat_rows", [](Rng& r) {
    const auto b = dim(r);
    return Case{{random_tensor(r, {dim(r), b}), random_tensor(r, {dim(r), b})},
                [](const std::vector<Tensor>& x) { return concat_rows(x); }};
  });
  m.emplace_back("concat_cols", [](Rng& r) {
    const auto a = dim(r);
    return Case{{random_tensor(r, {a, dim(r)}), random_tensor(r, {a, dim(r)})},
                [](const std::vector<Tensor>& x) { return concat_cols(x); }};
  });
  m.emplace_back("sum", [](Rng& r) {
    return Case{{random_tensor(r, {dim(r), dim(r)})}, [](const std::vector<Tensor>& x) { return sum(x[0]); }};
  });
  m.emplace_back("mean", [](Rng& r) {
    return Case{{random_tensor(r, {dim(r), dim(r)})}, [](const std::vector<Tensor>& x) { return mean(x[0]); }};
  });
  m.emplace_back("cross_entropy", [](Rng& r) {
    const auto t = dim(r, 2, 6), v = dim(r, 2, 9);
    std::vector<std::int32_t> targets(t);
    std::vector<bool> mask(t);
    for (std::size_t i = 0; i < t; ++i) {
      targets[i] = static_cast<std::int32_t>(r.below(v));
      mask[i] = r.bernoulli(0.7);
    }
    mask[r.below(t)] = true;
    return Case{{random_tensor(r, {t, v})},
                [targets, mask](const std::vector<Tensor>& x) { return cross_entropy(x[0], targets, mask); }};
  });
  m.emplace_back("mse", [](Rng& r) {
    const Shape s{dim(r), dim(r)};
    const Tensor target = random_tensor(r, s).detach();
    return Case{{random_tensor(r, s)}, [target](const std::vector<Tensor>& x) { return mse(x[0], target); }};
  });
  m.emplace_back("linear", [](Rng& r) {
    const auto a = dim(r), k = dim(r), b = dim(r);
    return Case{{random_tensor(r, {a, k}), random_tensor(r, {k, b}), random_tensor(r, {b})},
                [](const std::vector<Tensor>& x) { return linear(x[0], x[1], x[2]); }};
  });
  // Shared subexpressions: x feeds several paths whose gradients must sum.
  m.emplace_back("shared_dag", [](Rng& r) {
    const auto a = dim(r, 3, 5);
    return Case{{random_tensor(r, {a, a})}, [](const std::vector<Tensor>& x) {
                  const Tensor y = gelu(x[0]);
                  return add(mul(y, x[0]), matmul(softmax_rows(y), transpose(x[0])));
                }};
  });
  return m;
}

}  // namespace

std::vector<GradCheck> run_gradient_suite(int trials, std::uint64_t seed) {
  std::vector<GradCheck> out;
  std::uint64_t tag = 0;
  for (const auto& [name, make] : makers()) {
    Rng rng(mix_seed(seed, tag++));
    GradCheck g{name, trials, 0.0};
    for (int t = 0; t < trials; ++t) g.max_rel_err = std::max(g.max_rel_err, check_case(make(rng), rng));
    out.push_back(g);
  }
  return out;
}

}  // namespace onevl::support
