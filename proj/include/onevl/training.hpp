#pragma once

// Staged training. A StagePlan names the parameter groups it trains, the
// groups it freezes and the losses it computes; run_stage enforces both.
//
//   pretrain  L_p            trains dec_v, w_v   (visual decoder on V only)
//   stage0    L_c            trains backbone, patch
//   stage1    L_l, L_v       trains w_l, w_v, dec_l, dec_v (main model frozen)
//   stage2    L_c, L_l, L_v  trains everything but the head
//   head      L_h (MSE)      trains head only

#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "onevl/layout.hpp"
#include "onevl/model.hpp"

namespace onevl {

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class SequenceKind { latent, explicit_cot };

struct StagePlan {
  std::string name;
  int epochs = 0;  // passes over the training split
  int steps = 0;   // overrides epochs when > 0
  double lr = 1e-4;
  int batch_size = 16;
  std::vector<std::string> trainable;
  std::vector<std::string> frozen;
  bool L_p = false;
  bool L_c = false;
  bool L_l = false;
  bool L_v = false;
  bool L_h = false;
  double lambda_l = kLambdaLang;
  double lambda_v = kLambdaVis;
  double clip_norm = 1.0;  // <= 0 disables clipping
  SequenceKind sequence = SequenceKind::latent;
  bool track_best_val = false;  // evaluate at each epoch end, keep the best checkpoint
};

/// Throws std::invalid_argument when trainable and frozen overlap, do not
/// cover the bundle's groups, or no loss is active.
void validate_plan(const StagePlan& plan, const ModelBundle& bundle);

enum class Scale { desk, smoke };

struct CurriculumOptions {
  int pretrain_steps = 2000;
  int batch_size = 16;
};

/// pretrain, stage0, stage1, stage2. Desk: epochs 2/1/5, learning rates
/// 1e-4 / 4e-5 / 1e-4 / 1e-4. Smoke: a few steps per stage for CI.
std::vector<StagePlan> default_curriculum(Scale scale, const CurriculumOptions& opt = {});

/// One joint stage from scratch with the stage-2 settings, clipping off so
/// gradient spikes stay visible in the log.
StagePlan no_staging_plan(const std::vector<StagePlan>& curriculum);
/// Curriculum without the visual (or language) decoder: its losses are off
/// and its groups stay frozen throughout.
std::vector<StagePlan> without_visual_decoder(std::vector<StagePlan> curriculum);
std::vector<StagePlan> without_language_decoder(std::vector<StagePlan> curriculum);
/// Main-model training without latents: L_c only over the answer-only (or
/// explicit-CoT) sequence, epochs of stages 0 and 2, stage-2 learning rate.
StagePlan baseline_plan(const std::vector<StagePlan>& curriculum, SequenceKind sequence);
/// Regression-head post-stage on a frozen model.
StagePlan head_plan(int epochs, double lr, int batch_size);

struct TrainState {
  std::uint64_t seed = 0;
  std::size_t global_step = 0;
  double best_val = std::numeric_limits<double>::infinity();
  std::optional<ParamStore> best_params;  // weights at best_val
  std::vector<double> total_history;
};

struct StepRecord {
  std::string stage;
  std::size_t step = 0;  // within the stage
  double lr = 0.0;
  std::optional<double> L_p, L_c, L_l, L_v, L_h;
  double total = 0.0;
  double grad_norm = 0.0;  // before clipping
};

struct StageReport {
  std::string name;
  std::size_t steps = 0;
  double final_total = 0.0;
  std::optional<double> val_ade;
  std::filesystem::path checkpoint;
  std::filesystem::path best_checkpoint;
};

struct TrainContext {
  const Vocab* vocab = nullptr;
  const std::vector<TokenizedSample>* train = nullptr;
  const std::vector<TokenizedSample>* val = nullptr;  // optional
  std::size_t val_limit = 200;
  std::filesystem::path checkpoint_dir;  // empty: no checkpoints
  std::string config_hash;
  std::function<void(const std::string&)> log;       // run report lines
  std::function<void(const StepRecord&)> on_step;    // optional observer
  bool checked = false;                              // NaN/Inf scanning
};

/// Loss of one sample under a plan. Components that are not active stay
/// empty; `total` combines the active ones.
struct SampleLosses {
  Tensor total;
  std::optional<Tensor> L_p, L_c, L_l, L_v, L_h;
};
SampleLosses sample_losses(const StagePlan& plan, const ModelBundle& bundle, const TokenizedSample& s,
                           const Vocab& vocab);

StageReport run_stage(const StagePlan& plan, ModelBundle& bundle, TrainState& state, const TrainContext& ctx);

/// Validation ADE of greedy decoding (latent prefill, or answer-only for a
/// bundle without latents) on the first `limit` samples.
double validation_ade(const ModelBundle& bundle, const Vocab& vocab, const std::vector<TokenizedSample>& samples,
                      std::size_t limit);

struct PipelineResult {
  ModelBundle bundle;
  std::vector<StageReport> stages;
};

/// Runs `plans` in order on a bundle initialised from `seed`. After a stage
/// that tracks validation, the best weights are restored. Logs a "config"
/// line first and a "summary" line last.
PipelineResult run_full_pipeline(const std::vector<StagePlan>& plans, const ModelConfig& model, std::uint64_t seed,
                                 const TrainContext& ctx);
/// As run_full_pipeline, continuing from `start` (e.g. a stage checkpoint).
PipelineResult run_pipeline(const std::vector<StagePlan>& plans, ModelBundle start, std::uint64_t seed,
                            const TrainContext& ctx);

std::string step_record_json(const StepRecord& r);

}  // namespace onevl
