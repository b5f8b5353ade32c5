#pragma once

// Discrete visual codec: rasters are cut into patch x patch blocks, each block
// becomes a one-hot feature vector (patch^2 cells x 6 classes) and is mapped to
// the nearest of K learned codes. Code indices are shifted into the model
// vocabulary by a fixed base offset.

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "onevl/tensor.hpp"
#include "onevl/world.hpp"

namespace onevl {

struct Codebook {
  int K = 0;
  int patch = 4;
  int dim = 0;                // patch * patch * kNumCellClasses
  std::vector<double> codes;  // K x dim, row-major

  std::span<const double> code(int k) const {
    return std::span<const double>(codes).subspan(static_cast<std::size_t>(k * dim), static_cast<std::size_t>(dim));
  }
};

struct CodebookReport {
  std::vector<double> error_history;  // mean squared distance after each assignment pass
  double final_error = 0.0;           // after codes are snapped to member patterns
  std::size_t distinct_patches = 0;
};

/// Lloyd's k-means over one-hot patch vectors, k-means++ seeding. After
/// convergence each code is replaced by the most frequent patch pattern in
/// its cluster, so codes stay one-hot and decode exactly. Throws when the
/// corpus has fewer than K distinct patches.
Codebook train_codebook(std::span<const Raster> rasters, int K, int iters, std::uint64_t seed, int patch = 4,
                        CodebookReport* report = nullptr);

enum class FrameTag { now, future_0_5s, future_1_0s };

struct VisualTokenGrid {
  int height = 0;  // in patches
  int width = 0;
  std::vector<std::int32_t> indices;  // row-major code indices
  FrameTag tag = FrameTag::now;
  friend bool operator==(const VisualTokenGrid&, const VisualTokenGrid&) = default;
};

struct VisualSentinels {
  std::int32_t image_start = 0;
  std::int32_t image_end = 0;
};

/// One-hot feature vector of every patch, (H/p * W/p) x (p*p*6), patches in
/// row-major order.
Tensor patch_features(const Raster& raster, int patch);
std::vector<double> patch_vector(const Raster& raster, int patch, int patch_row, int patch_col);

/// Nearest code per patch by squared L2, ties to the lowest index.
VisualTokenGrid encode(const Raster& raster, const Codebook& cb, FrameTag tag = FrameTag::now);
/// Per-cell argmax over each code's one-hot blocks.
Raster decode(const VisualTokenGrid& grid, const Codebook& cb);

/// [image_start, base + idx..., image_end].
std::vector<std::int32_t> to_vocab_ids(const VisualTokenGrid& grid, std::int32_t base_vocab_size,
                                       VisualSentinels sentinels);
/// Inverse of to_vocab_ids. Throws std::out_of_range for ids outside
/// [base, base + K) or missing sentinels.
VisualTokenGrid from_vocab_ids(std::span<const std::int32_t> ids, std::int32_t base_vocab_size, int K,
                               VisualSentinels sentinels, int height, int width, FrameTag tag = FrameTag::now);

/// Number of encode() calls made by this process. Used to verify that the
/// training loop never runs the codec.
std::uint64_t codec_encode_calls();

/// Fraction of cells whose class matches.
double cell_accuracy(const Raster& a, const Raster& b);

/// Stored as tensor checkpoint entries "vq/codes" (K x dim) and "vq/patch".
void save_codebook(const std::filesystem::path& path, const Codebook& cb);
Codebook load_codebook(const std::filesystem::path& path);

}  // namespace onevl
