#pragma once

// Command implementations behind the `onevl` executable.
//
// Run directory layout:
//   config.json                      resolved configuration
//   data/{train,val,test}.jsonl      samples
//   codec/codebook.ckpt              visual codebook
//   codec/tokens_{split}.jsonl       offline visual token ids
//   codec/report.json                codebook statistics
//   checkpoints/<variant>/*.ckpt     stage checkpoints, final.ckpt
//   logs/<variant>.jsonl             run reports
//   report/                          benchmark output
//   explain/<sample id>/             CoT text and two future rasters

#include <cstdint>
#include <filesystem>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "onevl/config.hpp"

namespace onevl {

/// A prerequisite artifact is absent; the message names it and the command
/// that builds it.
class MissingArtifact : public std::runtime_error {
 public:
  MissingArtifact(const std::filesystem::path& path, const std::string& command);
};

/// `ONEVL_RUN_DIR` when set, the configured run directory otherwise.
std::filesystem::path resolve_run_dir(const RunConfig& cfg);

/// Training variants. "onevl" is the full curriculum; "answer_only" and
/// "explicit_cot" are the baselines without latents; the rest are ablations.
inline const std::vector<std::string> kTrainVariants = {"onevl", "answer_only", "explicit_cot"};
inline const std::vector<std::string> kAblations = {"no_vis", "no_lang", "no_staging", "mlp_head"};

struct TrainOptions {
  std::string variant = "onevl";
  std::string stages = "desk";  // "desk", "smoke" or a comma list of stage names
};

void cmd_build_data(const RunConfig& cfg, std::ostream& log);
void cmd_train_vq(const RunConfig& cfg, std::ostream& log);
void cmd_train(const RunConfig& cfg, const TrainOptions& opt, std::ostream& log);
void cmd_ablate(const RunConfig& cfg, const std::string& variant, bool smoke, std::ostream& log);

struct EvalOptions {
  bool allow_config_mismatch = false;
};
void cmd_eval(const RunConfig& cfg, const EvalOptions& opt, std::ostream& log);

/// A sample id is a dataset seed or "split:index" (e.g. "test:3"). Writes
/// explanation.txt and two .pgm future rasters per id.
void cmd_explain(const RunConfig& cfg, const std::vector<std::string>& sample_ids, std::ostream& log);

/// P2 greyscale image of cell classes (maxval 5).
void write_raster_pgm(const std::filesystem::path& path, const Raster& r);

}  // namespace onevl
