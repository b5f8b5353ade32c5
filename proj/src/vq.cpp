#include "onevl/vq.hpp"

#include <algorithm>
#include <atomic>
#include <limits>
#include <map>
#include <stdexcept>
#include <string>

#include "onevl/params.hpp"
#include "onevl/rng.hpp"

namespace onevl {

namespace {

std::atomic<std::uint64_t> g_encode_calls{0};

void check_geometry(const Raster& r, int patch) {
  if (patch <= 0 || r.height % patch != 0 || r.width % patch != 0) {
    throw std::invalid_argument("raster " + std::to_string(r.height) + "x" + std::to_string(r.width) +
                                " is not divisible by patch size " + std::to_string(patch));
  }
}

// A patch as its cell classes, row-major within the patch.
std::string patch_key(const Raster& r, int patch, int pr, int pc) {
  std::string key(static_cast<std::size_t>(patch * patch), '\0');
  for (int i = 0; i < patch; ++i) {
    for (int j = 0; j < patch; ++j) {
      key[static_cast<std::size_t>(i * patch + j)] = static_cast<char>(r.at(pr * patch + i, pc * patch + j));
    }
  }
  return key;
}

void one_hot(const std::string& key, std::vector<double>& out) {
  out.assign(key.size() * kNumCellClasses, 0.0);
  for (std::size_t c = 0; c < key.size(); ++c) out[c * kNumCellClasses + static_cast<std::size_t>(key[c])] = 1.0;
}

// ||onehot(key) - code||^2, using that the one-hot part has exactly one 1 per cell.
double pattern_distance(const std::string& key, std::span<const double> code, double code_sq) {
  double dot = 0.0;
  for (std::size_t c = 0; c < key.size(); ++c) dot += code[c * kNumCellClasses + static_cast<std::size_t>(key[c])];
  return static_cast<double>(key.size()) - 2.0 * dot + code_sq;
}

double squared_norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return s;
}

}  // namespace

std::vector<double> patch_vector(const Raster& raster, int patch, int patch_row, int patch_col) {
  std::vector<double> out;
  one_hot(patch_key(raster, patch, patch_row, patch_col), out);
  return out;
}

Tensor patch_features(const Raster& raster, int patch) {
  check_geometry(raster, patch);
  const int gh = raster.height / patch;
  const int gw = raster.width / patch;
  const std::size_t dim = static_cast<std::size_t>(patch * patch * kNumCellClasses);
  std::vector<double> data(static_cast<std::size_t>(gh * gw) * dim, 0.0);
  for (int pr = 0; pr < gh; ++pr) {
    for (int pc = 0; pc < gw; ++pc) {
      const std::size_t base = static_cast<std::size_t>(pr * gw + pc) * dim;
      for (int i = 0; i < patch; ++i) {
        for (int j = 0; j < patch; ++j) {
          const auto cls = static_cast<std::size_t>(raster.at(pr * patch + i, pc * patch + j));
          data[base + static_cast<std::size_t>(i * patch + j) * kNumCellClasses + cls] = 1.0;
        }
      }
    }
  }
  return Tensor::from({static_cast<std::size_t>(gh * gw), dim}, std::move(data));
}

Codebook train_codebook(std::span<const Raster> rasters, int K, int iters, std::uint64_t seed, int patch,
                        CodebookReport* report) {
  if (K <= 0) throw std::invalid_argument("train_codebook: K must be positive");
  // Distinct patterns with multiplicities; std::map keeps the order stable.
  std::map<std::string, std::uint64_t> counts;
  for (const auto& r : rasters) {
    check_geometry(r, patch);
    for (int pr = 0; pr < r.height / patch; ++pr) {
      for (int pc = 0; pc < r.width / patch; ++pc) ++counts[patch_key(r, patch, pr, pc)];
    }
  }
  if (counts.size() < static_cast<std::size_t>(K)) {
    throw std::invalid_argument("train_codebook: corpus has " + std::to_string(counts.size()) +
                                " distinct patches, fewer than K = " + std::to_string(K));
  }
  std::vector<std::string> keys;
  std::vector<double> weight;
  double total_weight = 0.0;
  for (const auto& [k, n] : counts) {
    keys.push_back(k);
    weight.push_back(static_cast<double>(n));
    total_weight += static_cast<double>(n);
  }
  const std::size_t U = keys.size();

  Codebook cb;
  cb.K = K;
  cb.patch = patch;
  cb.dim = patch * patch * kNumCellClasses;
  cb.codes.assign(static_cast<std::size_t>(K * cb.dim), 0.0);
  std::vector<double> code_sq(static_cast<std::size_t>(K), 0.0);
  auto set_code_to = [&](int k, const std::string& key) {
    std::vector<double> v;
    one_hot(key, v);
    std::copy(v.begin(), v.end(), cb.codes.begin() + static_cast<std::ptrdiff_t>(k * cb.dim));
    code_sq[static_cast<std::size_t>(k)] = static_cast<double>(key.size());
  };

  // k-means++ seeding on the weighted distinct patterns.
  Rng rng(seed);
  std::vector<double> nearest(U, std::numeric_limits<double>::infinity());
  auto pick = [&](const std::vector<double>& w) {
    double total = 0.0;
    for (double x : w) total += x;
    double u = rng.uniform() * total;
    for (std::size_t i = 0; i < w.size(); ++i) {
      if (w[i] <= 0.0) continue;
      if (u < w[i]) return i;
      u -= w[i];
    }
    for (std::size_t i = w.size(); i-- > 0;) {
      if (w[i] > 0.0) return i;
    }
    return std::size_t{0};
  };
  std::size_t first = pick(weight);
  set_code_to(0, keys[first]);
  for (int k = 1; k < K; ++k) {
    std::vector<double> w(U);
    for (std::size_t i = 0; i < U; ++i) {
      nearest[i] = std::min(nearest[i], pattern_distance(keys[i], cb.code(k - 1), code_sq[static_cast<std::size_t>(k - 1)]));
      w[i] = weight[i] * nearest[i];
    }
    set_code_to(k, keys[pick(w)]);
  }

  std::vector<int> assign(U, -1);
  CodebookReport rep;
  rep.distinct_patches = U;
  auto assign_all = [&]() {
    double err = 0.0;
    bool changed = false;
    for (std::size_t i = 0; i < U; ++i) {
      int best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (int k = 0; k < K; ++k) {
        const double d = pattern_distance(keys[i], cb.code(k), code_sq[static_cast<std::size_t>(k)]);
        if (d < best_d) {
          best_d = d;
          best = k;
        }
      }
      changed = changed || assign[i] != best;
      assign[i] = best;
      err += weight[i] * std::max(0.0, best_d);
    }
    return std::pair{err / total_weight, changed};
  };

  for (int it = 0; it < std::max(iters, 1); ++it) {
    auto [err, changed] = assign_all();
    rep.error_history.push_back(err);
    if (!changed && it > 0) break;
    // Weighted means; empty clusters keep their code.
    std::vector<double> sums(cb.codes.size(), 0.0);
    std::vector<double> mass(static_cast<std::size_t>(K), 0.0);
    for (std::size_t i = 0; i < U; ++i) {
      const auto k = static_cast<std::size_t>(assign[i]);
      mass[k] += weight[i];
      for (std::size_t c = 0; c < keys[i].size(); ++c) {
        sums[k * static_cast<std::size_t>(cb.dim) + c * kNumCellClasses + static_cast<std::size_t>(keys[i][c])] +=
            weight[i];
      }
    }
    for (int k = 0; k < K; ++k) {
      const auto kk = static_cast<std::size_t>(k);
      if (mass[kk] == 0.0) continue;
      for (int d = 0; d < cb.dim; ++d) {
        cb.codes[kk * static_cast<std::size_t>(cb.dim) + static_cast<std::size_t>(d)] =
            sums[kk * static_cast<std::size_t>(cb.dim) + static_cast<std::size_t>(d)] / mass[kk];
      }
      code_sq[kk] = squared_norm(cb.code(k));
    }
  }
  assign_all();

  // Snap each code to the most frequent pattern in its cluster. Clusters are
  // disjoint, so snapped codes are distinct; a code whose cluster is empty
  // takes the most frequent pattern no other code uses.
  std::vector<long> best_member(static_cast<std::size_t>(K), -1);
  for (std::size_t i = 0; i < U; ++i) {
    auto& b = best_member[static_cast<std::size_t>(assign[i])];
    if (b < 0 || weight[i] > weight[static_cast<std::size_t>(b)]) b = static_cast<long>(i);
  }
  std::vector<bool> used(U, false);
  for (long b : best_member) {
    if (b >= 0) used[static_cast<std::size_t>(b)] = true;
  }
  std::vector<std::size_t> by_weight(U);
  for (std::size_t i = 0; i < U; ++i) by_weight[i] = i;
  std::stable_sort(by_weight.begin(), by_weight.end(), [&](std::size_t a, std::size_t b) { return weight[a] > weight[b]; });
  std::size_t spare = 0;
  for (int k = 0; k < K; ++k) {
    auto& b = best_member[static_cast<std::size_t>(k)];
    if (b < 0) {
      while (used[by_weight[spare]]) ++spare;
      b = static_cast<long>(by_weight[spare]);
      used[by_weight[spare]] = true;
    }
    set_code_to(k, keys[static_cast<std::size_t>(b)]);
  }
  rep.final_error = assign_all().first;
  if (report) *report = std::move(rep);
  return cb;
}

VisualTokenGrid encode(const Raster& raster, const Codebook& cb, FrameTag tag) {
  g_encode_calls.fetch_add(1, std::memory_order_relaxed);
  check_geometry(raster, cb.patch);
  if (cb.dim != cb.patch * cb.patch * kNumCellClasses) throw std::invalid_argument("encode: codebook dim mismatch");
  VisualTokenGrid g;
  g.height = raster.height / cb.patch;
  g.width = raster.width / cb.patch;
  g.tag = tag;
  std::vector<double> sq(static_cast<std::size_t>(cb.K));
  for (int k = 0; k < cb.K; ++k) sq[static_cast<std::size_t>(k)] = squared_norm(cb.code(k));
  for (int pr = 0; pr < g.height; ++pr) {
    for (int pc = 0; pc < g.width; ++pc) {
      const std::string key = patch_key(raster, cb.patch, pr, pc);
      int best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (int k = 0; k < cb.K; ++k) {
        const double d = pattern_distance(key, cb.code(k), sq[static_cast<std::size_t>(k)]);
        if (d < best_d) {
          best_d = d;
          best = k;
        }
      }
      g.indices.push_back(best);
    }
  }
  return g;
}

Raster decode(const VisualTokenGrid& grid, const Codebook& cb) {
  const int p = cb.patch;
  Raster r{grid.height * p, grid.width * p,
           std::vector<std::uint8_t>(static_cast<std::size_t>(grid.height * p * grid.width * p), 0)};
  for (int pr = 0; pr < grid.height; ++pr) {
    for (int pc = 0; pc < grid.width; ++pc) {
      const int idx = grid.indices.at(static_cast<std::size_t>(pr * grid.width + pc));
      if (idx < 0 || idx >= cb.K) throw std::out_of_range("decode: code index " + std::to_string(idx));
      const auto code = cb.code(idx);
      for (int c = 0; c < p * p; ++c) {
        const auto block = code.subspan(static_cast<std::size_t>(c * kNumCellClasses), kNumCellClasses);
        const auto cls = std::max_element(block.begin(), block.end()) - block.begin();
        const int row = pr * p + c / p;
        const int col = pc * p + c % p;
        r.cells[static_cast<std::size_t>(row * r.width + col)] = static_cast<std::uint8_t>(cls);
      }
    }
  }
  return r;
}

std::vector<std::int32_t> to_vocab_ids(const VisualTokenGrid& grid, std::int32_t base_vocab_size,
                                       VisualSentinels sentinels) {
  std::vector<std::int32_t> ids;
  ids.reserve(grid.indices.size() + 2);
  ids.push_back(sentinels.image_start);
  for (auto idx : grid.indices) ids.push_back(base_vocab_size + idx);
  ids.push_back(sentinels.image_end);
  return ids;
}

VisualTokenGrid from_vocab_ids(std::span<const std::int32_t> ids, std::int32_t base_vocab_size, int K,
                               VisualSentinels sentinels, int height, int width, FrameTag tag) {
  const std::size_t n = static_cast<std::size_t>(height * width);
  if (ids.size() != n + 2 || ids.front() != sentinels.image_start || ids.back() != sentinels.image_end) {
    throw std::out_of_range("from_vocab_ids: expected image_start, " + std::to_string(n) + " codes, image_end");
  }
  VisualTokenGrid g{height, width, {}, tag};
  g.indices.reserve(n);
  for (std::size_t i = 1; i + 1 < ids.size(); ++i) {
    const std::int32_t idx = ids[i] - base_vocab_size;
    if (ids[i] < base_vocab_size || idx >= K) {
      throw std::out_of_range("from_vocab_ids: id " + std::to_string(ids[i]) + " outside visual range [" +
                              std::to_string(base_vocab_size) + ", " + std::to_string(base_vocab_size + K) + ")");
    }
    g.indices.push_back(idx);
  }
  return g;
}

std::uint64_t codec_encode_calls() { return g_encode_calls.load(std::memory_order_relaxed); }

double cell_accuracy(const Raster& a, const Raster& b) {
  if (a.cells.size() != b.cells.size() || a.cells.empty()) throw std::invalid_argument("cell_accuracy: size mismatch");
  std::size_t same = 0;
  for (std::size_t i = 0; i < a.cells.size(); ++i) same += a.cells[i] == b.cells[i];
  return static_cast<double>(same) / static_cast<double>(a.cells.size());
}

void save_codebook(const std::filesystem::path& path, const Codebook& cb) {
  std::vector<NamedTensor> entries;
  entries.push_back({"vq/codes", {static_cast<std::size_t>(cb.K), static_cast<std::size_t>(cb.dim)}, cb.codes});
  entries.push_back({"vq/patch", {1}, {static_cast<double>(cb.patch)}});
  write_checkpoint(path, entries);
}

Codebook load_codebook(const std::filesystem::path& path) {
  Codebook cb;
  bool have_codes = false;
  bool have_patch = false;
  for (auto& e : read_checkpoint(path)) {
    if (e.name == "vq/codes" && e.shape.size() == 2) {
      cb.K = static_cast<int>(e.shape[0]);
      cb.dim = static_cast<int>(e.shape[1]);
      cb.codes = std::move(e.data);
      have_codes = true;
    } else if (e.name == "vq/patch" && e.data.size() == 1) {
      cb.patch = static_cast<int>(e.data[0]);
      have_patch = true;
    }
  }
  if (!have_codes || !have_patch) throw std::runtime_error(path.string() + " is not a codebook checkpoint");
  if (cb.dim != cb.patch * cb.patch * kNumCellClasses) throw std::runtime_error("codebook dim/patch mismatch");
  return cb;
}

}  // namespace onevl
