#pragma once

// Run configuration. Every knob has a default; a config file only lists
// what it changes. Unknown keys are rejected with their dotted path.

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "onevl/dataset.hpp"
#include "onevl/model.hpp"
#include "onevl/training.hpp"

namespace onevl {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct DataConfig {
  std::size_t n_samples = 5000;
  std::uint64_t seed = 0;
  SplitRatio split;
  RasterConfig raster;
};

struct CodecConfig {
  int codebook_size = 128;
  int iters = 20;
  std::uint64_t seed = 0;
};

struct TrainingConfig {
  std::uint64_t seed = 0;
  int batch_size = 16;
  int pretrain_steps = 2000;
  int stage0_epochs = 2;
  int stage1_epochs = 1;
  int stage2_epochs = 5;
  double lr_pretrain = 1e-4;
  double lr_stage0 = 4e-5;
  double lr_stage1 = 1e-4;
  double lr_stage2 = 1e-4;
  double lr_scale = 1.0;  // multiplies every stage learning rate
  double lambda_l = kLambdaLang;
  double lambda_v = kLambdaVis;
  double clip_norm = 1.0;
  int head_epochs = 3;
  double head_lr = 1e-3;
  std::size_t val_limit = 200;
  bool checked = false;
};

struct EvalConfig {
  std::vector<std::string> modes = {"answer_only", "explicit_cot", "latent_prefill", "latent_iterative", "mlp_head"};
  std::size_t test_limit = 0;  // 0: whole test split
  std::size_t latency_samples = 100;
  int latency_runs = 3;
  int latency_warmup = 5;
};

struct RunConfig {
  std::filesystem::path run_dir = "runs/default";
  DataConfig data;
  CodecConfig codec;
  ModelConfig model;  // codebook_size and raster dims follow codec and data
  TrainingConfig training;
  EvalConfig eval;
};

RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::filesystem::path& path);

/// Fully defaulted configuration as pretty JSON.
std::string resolved_config_json(const RunConfig& cfg);
/// 16 hex digits of FNV-1a over the resolved config, run_dir excluded.
std::string config_hash(const RunConfig& cfg);

/// Stage plans for the configured curriculum. `smoke` keeps the stage
/// structure but runs a few small steps per stage.
std::vector<StagePlan> curriculum_from_config(const RunConfig& cfg, bool smoke);

}  // namespace onevl
