#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "onevl/world.hpp"

namespace onevl {

struct SplitRatio {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;
};

struct Dataset {
  std::vector<Sample> train;
  std::vector<Sample> val;
  std::vector<Sample> test;
};

/// `n` samples stratified over the four scenario families, split into
/// disjoint train/val/test sets. Pure in (n, seed, ratio, raster).
Dataset generate_dataset(std::size_t n, std::uint64_t seed, SplitRatio ratio = {},
                         const RasterConfig& raster = {});

/// generate_dataset + write `train.jsonl`, `val.jsonl`, `test.jsonl` to `dir`.
Dataset build_dataset(std::size_t n, std::uint64_t seed, SplitRatio ratio, const RasterConfig& raster,
                      const std::filesystem::path& dir);

// One JSON object per line:
//   {"seed", "scenario", "height", "width", "ego_state_text",
//    "frame_now", "frame_future": [f05, f10], "trajectory": [x1,y1,...,x8,y8],
//    "cot_text", "meta_action"}
// Frames are strings of cell-class digits in row-major order. Trajectory
// values are fixed-point with at most six decimals.
std::string sample_to_json_line(const Sample& s);
Sample sample_from_json_line(const std::string& line);

void write_samples(const std::filesystem::path& path, const std::vector<Sample>& samples);
std::vector<Sample> read_samples(const std::filesystem::path& path);
Dataset read_dataset(const std::filesystem::path& dir);

}  // namespace onevl
