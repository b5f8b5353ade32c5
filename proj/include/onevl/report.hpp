#pragma once

// Benchmark reports: per-variant, per-mode trajectory metrics, latency
// records and static SVG plots.
//
//   report/summary.txt   human-readable tables
//   report/metrics.csv   one row per (variant, mode)
//   report/latency.csv   one row per (mode, sample), warmup excluded
//   report/plots/*.svg   accuracy vs latency, loss curves

#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "onevl/inference.hpp"
#include "onevl/metrics.hpp"

namespace onevl {

struct BenchmarkEntry {
  std::string variant;  // "onevl", "answer_only", "no_vis", ...
  const ModelBundle* bundle = nullptr;
  const Vocab* vocab = nullptr;
  const std::vector<TokenizedSample>* test = nullptr;
  std::vector<DecodeMode> modes;
  bool latency = false;      // run the latency protocol on this entry
  bool meta_action = false;  // decode D_l explanations and score meta-actions
};

struct BenchmarkOptions {
  std::size_t test_limit = 0;  // 0: all
  std::size_t latency_samples = 100;
  int latency_runs = 3;
  int latency_warmup = 5;
  std::string config_hash;
};

struct BenchmarkRow {
  std::string variant;
  std::string mode;
  TrajectoryMetrics metrics;
  double median_latency_s = 0.0;  // 0 when latency was not measured
  double mean_decoded_tokens = 0.0;
  std::optional<double> meta_action_accuracy;

  friend bool operator==(const BenchmarkRow&, const BenchmarkRow&) = default;
};

struct BenchmarkReport {
  std::string config_hash;
  std::vector<BenchmarkRow> rows;
  std::vector<LatencyRecord> latency;
  std::vector<std::pair<std::string, std::vector<double>>> loss_curves;  // stage -> per-step totals
};

/// Greedy predictions of every entry over its test split, plus the latency
/// protocol where requested. Throws std::invalid_argument on an entry
/// without bundle, vocabulary or samples.
BenchmarkReport run_benchmark(const std::vector<BenchmarkEntry>& entries, const BenchmarkOptions& opt);

void write_metrics_csv(const std::filesystem::path& path, const std::vector<BenchmarkRow>& rows);
std::vector<BenchmarkRow> read_metrics_csv(const std::filesystem::path& path);

std::string summary_text(const BenchmarkReport& report);
std::string accuracy_latency_svg(const std::vector<BenchmarkRow>& rows);
std::string loss_curves_svg(const std::vector<std::pair<std::string, std::vector<double>>>& curves);

/// Writes the report directory layout above under `dir`.
void write_report(const std::filesystem::path& dir, const BenchmarkReport& report);

}  // namespace onevl
