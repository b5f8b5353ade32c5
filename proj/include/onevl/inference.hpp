#pragma once

// Decoding modes, explanation dumps and the latency protocol.
//
// Prefill runs the whole prompt through the backbone in one pass and computes
// output logits for the last row only. Decode steps append one row to the
// key/value cache. The answer region is decoded greedily under its grammar:
// <answer>, 16 lattice tokens, </answer>.

#include <array>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "onevl/layout.hpp"
#include "onevl/model.hpp"
#include "onevl/runner.hpp"
#include "onevl/vq.hpp"

namespace onevl {

enum class DecodeMode { answer_only, explicit_cot, latent_prefill, latent_iterative, mlp_head };
inline constexpr std::array<DecodeMode, 5> kAllModes = {DecodeMode::answer_only, DecodeMode::explicit_cot,
                                                         DecodeMode::latent_prefill, DecodeMode::latent_iterative,
                                                         DecodeMode::mlp_head};
std::string_view to_string(DecodeMode m);
DecodeMode decode_mode_from_string(std::string_view s);

struct LatencyRecord {
  DecodeMode mode = DecodeMode::answer_only;
  std::string sample_id;
  std::size_t prefill_tokens = 0;
  std::size_t decoded_tokens = 0;
  double wall_prefill = 0.0;
  double wall_decode = 0.0;
  double total = 0.0;
};

struct Prediction {
  bool ok = false;  // false: the answer region did not parse
  std::string failure;
  Trajectory trajectory{};
  std::string cot_text;                   // explicit_cot only
  std::vector<std::int32_t> decoded_ids;  // every token emitted after the prefill
  LatencyRecord latency;
};

struct Explanation {
  std::string cot_text;
  std::vector<std::int32_t> cot_ids;
  std::array<Raster, 2> future;  // +0.5 s, +1.0 s
  std::vector<std::int32_t> future_ids;
};

struct PredictOptions {
  /// Feed the reference CoT/answer tokens instead of the argmax (the argmax is
  /// still computed every step). Used by the latency protocol so token counts
  /// are fixed by the layout.
  bool force_reference = false;
  /// Restrict the answer region to its grammar. Off: free greedy decoding,
  /// malformed answers become failures.
  bool constrained = true;
  std::size_t max_cot_tokens = 160;
};

/// Hidden states at the latent positions and the logits that predict the
/// first answer token.
struct LatentStates {
  RMat<double> hidden;
  RVec<double> first_answer_logits;
};

class InferenceEngine {
 public:
  /// The bundle, vocabulary and codebook must outlive the engine.
  InferenceEngine(const ModelBundle& bundle, const Vocab& vocab, const Codebook* codebook = nullptr);

  Prediction predict(const TokenizedSample& s, DecodeMode mode, const PredictOptions& opt = {}) const;

  /// Backbone once, then greedy decoding of D_l (text) and D_v (two grids).
  Explanation explain(const TokenizedSample& s) const;
  /// D_l only; needs no codebook.
  Explanation explain_language(const TokenizedSample& s) const;
  /// As explain() for the visual decoder only; `latent_override` replaces the
  /// backbone's visual latent rows when given.
  Explanation explain_visual(const TokenizedSample& s, const RMat<double>* latent_override = nullptr) const;

  /// Latent rows from the full latent prompt in one prefill.
  LatentStates latent_states_prefill(const TokenizedSample& s) const;
  /// Latent rows from the answer-only prompt followed by the latent block fed
  /// one token at a time through the cache.
  LatentStates latent_states_incremental(const TokenizedSample& s) const;

  const StackRunner<double>& backbone() const { return backbone_; }
  const ModelBundle& bundle() const { return bundle_; }
  const Vocab& vocab() const { return vocab_; }

  /// Input rows of a layout for the backbone runner: token rows with the
  /// image span replaced by patch embeddings.
  RMat<double> backbone_inputs(const TokenLayout& layout, const Raster& frame) const;

 private:
  RMat<double> patch_embeddings(const Raster& frame) const;
  std::vector<std::int32_t> greedy_aux(const StackRunner<double>& dec, const Mlp2<double>& proj,
                                       const RMat<double>& cond, std::size_t max_tokens,
                                       const std::function<bool(std::size_t, std::int32_t)>& allowed,
                                       std::int32_t stop_local) const;

  const ModelBundle& bundle_;
  const Vocab& vocab_;
  const Codebook* codebook_;
  StackRunner<double> backbone_;
  StackRunner<double> dec_l_;
  StackRunner<double> dec_v_;
  Mlp2<double> w_l_, w_v_, head_;
  RMat<double> patch_w_;
  RVec<double> patch_b_, patch_g_, patch_ln_b_;
  bool has_head_ = false;
};

/// One row of `kv_cache_decode_step`: append `token` and return its logits.
RVec<double> kv_cache_decode_step(const StackRunner<double>& runner, StackRunner<double>::Cache& cache,
                                  std::int32_t token);

struct LatencySummary {
  std::vector<LatencyRecord> records;  // measured runs, warmup excluded
  std::vector<std::pair<DecodeMode, double>> median_total;
  double explicit_over_prefill = 0.0;
  double prefill_over_answer = 0.0;
  double mlp_over_answer = 0.0;
};

/// Median-of-runs latency per mode over `samples`, forced reference decoding,
/// `warmup` untimed passes first.
LatencySummary measure_latency(const InferenceEngine& engine, const std::vector<TokenizedSample>& samples,
                               const std::vector<DecodeMode>& modes, int n_runs, int warmup = 1);

void write_latency_csv(const std::filesystem::path& path, const std::vector<LatencyRecord>& records);
std::vector<LatencyRecord> read_latency_csv(const std::filesystem::path& path);

}  // namespace onevl
