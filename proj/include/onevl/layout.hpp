#pragma once

// Token sequences for training and inference.
//
// Training sequence:
//   <bos> prompt-text <|image_start|> codes <|image_end|>
//   <|start_latent_vis|> C_v fillers <|end_latent_vis|>
//   <|start_latent|> C_t fillers <|end_latent|>
//   <answer> 16 coordinates </answer>
// A latent block is left out entirely when its count is zero. The prefill
// prompt is the same sequence cut after <|end_latent|>.
//
// Explicit-CoT sequence: prompt-text, image, <think> reasoning </think>, answer.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "onevl/vocab.hpp"
#include "onevl/vq.hpp"
#include "onevl/world.hpp"

namespace onevl {

struct Span {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t size() const { return end - begin; }
  bool empty() const { return end == begin; }
  friend bool operator==(const Span&, const Span&) = default;
};

struct TokenLayout {
  std::vector<std::int32_t> ids;
  Span prompt_text;  // <bos> and the ego-state text
  Span image;        // codes only, sentinels excluded
  Span latent_vis;   // fillers only
  Span latent_lang;
  Span cot;          // explicit-CoT sequences: reasoning words only
  Span answer;       // <answer> ... </answer>
  /// True where a token is a supervised target.
  std::vector<bool> loss_mask;
};

/// A sample with its codec output and text already converted to ids. Built
/// once, before training; the training step never touches the codec.
struct TokenizedSample {
  std::uint64_t seed = 0;
  Scenario scenario = Scenario::straight;
  MetaAction meta_action = MetaAction::maintain_keep_lane;
  std::vector<std::int32_t> prompt_ids;  // <bos> + ego-state text
  std::vector<std::int32_t> image_ids;   // framed frame_now codes
  std::vector<std::int32_t> future_ids;  // framed +0.5 s codes then framed +1.0 s codes
  std::vector<std::int32_t> cot_ids;
  std::vector<std::int32_t> answer_ids;  // framed trajectory
  Trajectory trajectory;
  Raster frame_now;
  std::array<Raster, 2> frame_future;
};

VisualSentinels sentinels(const Vocab& vocab);

/// Runs the codec on the three frames and tokenizes the text fields.
TokenizedSample tokenize_sample(const Sample& s, const Vocab& vocab, const Codebook& cb);

/// Offline token file: one JSON object per line with "seed", "image" and
/// "future" id lists, in dataset order.
void write_token_file(const std::filesystem::path& path, std::span<const TokenizedSample> samples);
/// Joins a token file with its dataset split. Text fields are tokenized here;
/// visual ids come from the file. Throws when the file does not match.
std::vector<TokenizedSample> join_token_file(const std::filesystem::path& path, std::span<const Sample> samples,
                                             const Vocab& vocab);

TokenLayout build_training_sequence(const TokenizedSample& s, const Vocab& vocab);
TokenLayout build_prefill_prompt(const TokenizedSample& s, const Vocab& vocab);
/// Prompt text and image only: the prefill of answer-only, explicit-CoT and
/// iterative-latent decoding.
TokenLayout build_answer_prompt(const TokenizedSample& s, const Vocab& vocab);
TokenLayout build_explicit_cot_sequence(const TokenizedSample& s, const Vocab& vocab);

/// Language decoder targets: the reasoning tokens followed by </think>, which
/// ends free decoding.
std::vector<std::int32_t> lang_targets(const TokenizedSample& s, const Vocab& vocab);

/// The latent block tokens in order, delimiters included.
std::vector<std::int32_t> latent_block(const Vocab& vocab);

}  // namespace onevl
