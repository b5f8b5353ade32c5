#pragma once

// Word-level vocabulary over the closed template grammar.
//
// Id order (a change is a format break, see tests/golden/vocab.txt):
//   special tokens, grammar words, number characters, reserved slots,
//   trajectory lattice tokens, then K visual codes starting at visual_base().
// Numbers in text are spelled one character per token; a run of number
// characters detokenizes back into one word.
// Latent fillers are taken from the reserved slots, which are ordinary
// vocabulary entries with their own embedding rows from the start.

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "onevl/world.hpp"

namespace onevl {

class VocabError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline constexpr int kReservedSlots = 64;
inline constexpr double kLatticeStep = 0.25;  // metres per trajectory token
inline constexpr int kLatticeMax = 128;       // tokens cover [-128, 128] steps
inline constexpr int kAnswerTokens = 2 * kNumWaypoints + 2;

class Vocab {
 public:
  /// `codebook_size` visual codes are appended after the text vocabulary.
  /// Latent fillers: the first `latent_vis_count` reserved slots, then the
  /// next `latent_lang_count`.
  Vocab(int codebook_size, int latent_vis_count, int latent_lang_count);

  std::int32_t size() const { return visual_base_ + codebook_size_; }
  /// Number of non-visual ids; visual code k has id visual_base() + k.
  std::int32_t text_size() const { return visual_base_; }
  std::int32_t visual_base() const { return visual_base_; }
  int codebook_size() const { return codebook_size_; }

  std::int32_t id(std::string_view token) const;
  bool contains(std::string_view token) const;
  std::string token(std::int32_t id) const;

  std::int32_t pad, bos, image_start, image_end, answer_start, answer_end, start_latent_vis, end_latent_vis,
      start_latent, end_latent, think_start, think_end;

  const std::vector<std::int32_t>& latent_vis_ids() const { return latent_vis_ids_; }
  const std::vector<std::int32_t>& latent_ids() const { return latent_ids_; }
  std::int32_t reserved(int k) const { return reserved_base_ + k; }

  /// Lattice token for `steps` quarter-metres, steps in [-kLatticeMax, kLatticeMax].
  std::int32_t lattice(int steps) const;
  bool is_lattice(std::int32_t id) const { return id >= lattice_base_ && id <= lattice_base_ + 2 * kLatticeMax; }
  int lattice_steps(std::int32_t id) const;

  bool is_number_char(std::int32_t id) const { return id >= number_base_ && id < number_base_ + 12; }
  bool is_visual(std::int32_t id) const { return id >= visual_base_ && id < size(); }
  /// Ids that may appear in decoded reasoning text: words, number characters.
  bool is_text_word(std::int32_t id) const { return id >= word_base_ && id < reserved_base_; }

  /// One "id<TAB>token" line per text id followed by the special-token manifest.
  std::string serialize() const;

 private:
  void push(std::string tok);

  int codebook_size_;
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::int32_t> index_;
  std::int32_t word_base_ = 0, number_base_ = 0, reserved_base_ = 0, lattice_base_ = 0, visual_base_ = 0;
  std::vector<std::int32_t> latent_vis_ids_;
  std::vector<std::int32_t> latent_ids_;
};

/// Grammar words in id order.
std::span<const std::string_view> grammar_words();

/// Whitespace-separated words to ids. Throws VocabError naming the first
/// out-of-vocabulary word.
std::vector<std::int32_t> tokenize_text(std::string_view text, const Vocab& vocab);
std::string detokenize(std::span<const std::int32_t> ids, const Vocab& vocab);

/// [answer_start, x1, y1, ..., x8, y8, answer_end]. Throws VocabError when a
/// coordinate falls outside the lattice.
std::vector<std::int32_t> encode_trajectory(const Trajectory& traj, const Vocab& vocab);
/// Inverse of encode_trajectory on the lattice. Accepts the framed form or the
/// 16 bare coordinate tokens; throws VocabError otherwise.
Trajectory decode_trajectory(std::span<const std::int32_t> ids, const Vocab& vocab);
/// Nearest lattice point of every coordinate.
Trajectory round_to_lattice(const Trajectory& traj);

}  // namespace onevl
