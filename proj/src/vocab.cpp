#include "onevl/vocab.hpp"

#include <cctype>
#include <cmath>
#include <sstream>

namespace onevl {

namespace {

constexpr std::string_view kWords[] = {
    "(",        ")",          ",",         ".",         ":",          "a",          "accelerate", "acceleration",
    "affect",   "ahead",      "and",       "are",       "at",         "attention",  "based",      "behind",
    "blocks",   "braking",    "can",       "clear",     "closed",     "command",    "cones",      "creates",
    "decelerate", "direction", "distance", "does",      "drive",      "driving",    "ego",        "fastly",
    "following", "forward",   "from",      "front",     "gap",        "historical", "i",          "image",
    "in",       "information", "into",     "is",        "it",         "its",        "keep",       "lane",
    "larger",   "left",       "line",      "located",   "maintain",   "merging",    "meters",     "middle",
    "more",     "motion",     "move",      "moving",    "narrows",    "navigation", "near",       "need",
    "no",       "not",        "nudge",     "of",        "on",         "open",       "or",         "pay",
    "pedestrians", "per",     "pull",      "require",   "right",      "road",       "safe",       "same",
    "scene",    "second",     "should",    "side",      "slightly",   "slowly",     "smaller",    "so",
    "speed",    "standing",   "starting",  "state",     "static",     "stop",       "stopped",    "taper",
    "than",     "that",       "the",       "there",     "to",         "trajectory", "understanding", "usable",
    "vehicle",  "vehicles",   "velocity",  "view",      "work",       "worker",     "would",      "zone",
};

constexpr std::string_view kNumberChars = "0123456789.-";

bool is_number_word(std::string_view w) {
  if (w.empty()) return false;
  std::size_t i = w[0] == '-' ? 1 : 0;
  if (i == w.size() || !std::isdigit(static_cast<unsigned char>(w[i]))) return false;
  bool dot = false;
  for (; i < w.size(); ++i) {
    if (w[i] == '.') {
      if (dot || i + 1 == w.size()) return false;
      dot = true;
    } else if (!std::isdigit(static_cast<unsigned char>(w[i]))) {
      return false;
    }
  }
  return true;
}

std::string number_token(char c) { return std::string("<num:") + c + ">"; }

}  // namespace

std::span<const std::string_view> grammar_words() { return kWords; }

void Vocab::push(std::string tok) {
  const auto id = static_cast<std::int32_t>(tokens_.size());
  if (!index_.emplace(tok, id).second) throw VocabError("duplicate vocabulary entry '" + tok + "'");
  tokens_.push_back(std::move(tok));
}

Vocab::Vocab(int codebook_size, int latent_vis_count, int latent_lang_count) : codebook_size_(codebook_size) {
  if (codebook_size <= 0) throw VocabError("codebook size must be positive");
  if (latent_vis_count < 0 || latent_lang_count < 0 || latent_vis_count + latent_lang_count > kReservedSlots) {
    throw VocabError("latent counts must be non-negative and fit in " + std::to_string(kReservedSlots) +
                     " reserved slots");
  }
  auto special = [&](const char* name) {
    push(name);
    return static_cast<std::int32_t>(tokens_.size() - 1);
  };
  pad = special("<pad>");
  bos = special("<bos>");
  image_start = special("<|image_start|>");
  image_end = special("<|image_end|>");
  answer_start = special("<answer>");
  answer_end = special("</answer>");
  start_latent_vis = special("<|start_latent_vis|>");
  end_latent_vis = special("<|end_latent_vis|>");
  start_latent = special("<|start_latent|>");
  end_latent = special("<|end_latent|>");
  think_start = special("<think>");
  think_end = special("</think>");

  word_base_ = static_cast<std::int32_t>(tokens_.size());
  for (auto w : kWords) push(std::string(w));
  number_base_ = static_cast<std::int32_t>(tokens_.size());
  for (char c : kNumberChars) push(number_token(c));
  reserved_base_ = static_cast<std::int32_t>(tokens_.size());
  for (int k = 0; k < kReservedSlots; ++k) push("<reserved_" + std::to_string(k) + ">");
  lattice_base_ = static_cast<std::int32_t>(tokens_.size());
  for (int s = -kLatticeMax; s <= kLatticeMax; ++s) push("<q:" + std::to_string(s) + ">");
  visual_base_ = static_cast<std::int32_t>(tokens_.size());

  for (int k = 0; k < latent_vis_count; ++k) latent_vis_ids_.push_back(reserved(k));
  for (int k = 0; k < latent_lang_count; ++k) latent_ids_.push_back(reserved(latent_vis_count + k));
}

std::int32_t Vocab::id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  if (it == index_.end()) throw VocabError("out-of-vocabulary word '" + std::string(token) + "'");
  return it->second;
}

bool Vocab::contains(std::string_view token) const { return index_.count(std::string(token)) != 0; }

std::string Vocab::token(std::int32_t id) const {
  if (id >= 0 && id < visual_base_) return tokens_[static_cast<std::size_t>(id)];
  if (is_visual(id)) return "<v:" + std::to_string(id - visual_base_) + ">";
  throw VocabError("token id " + std::to_string(id) + " out of range");
}

std::int32_t Vocab::lattice(int steps) const {
  if (steps < -kLatticeMax || steps > kLatticeMax) {
    throw VocabError("lattice step " + std::to_string(steps) + " outside [-" + std::to_string(kLatticeMax) + ", " +
                     std::to_string(kLatticeMax) + "]");
  }
  return lattice_base_ + steps + kLatticeMax;
}

int Vocab::lattice_steps(std::int32_t id) const {
  if (!is_lattice(id)) throw VocabError("token id " + std::to_string(id) + " is not a trajectory token");
  return id - lattice_base_ - kLatticeMax;
}

std::string Vocab::serialize() const {
  std::ostringstream os;
  for (std::size_t i = 0; i < tokens_.size(); ++i) os << i << '\t' << tokens_[i] << '\n';
  os << "# visual_base " << visual_base_ << '\n';
  os << "# codebook_size " << codebook_size_ << '\n';
  os << "# latent_vis_ids";
  for (auto id : latent_vis_ids_) os << ' ' << id;
  os << "\n# latent_ids";
  for (auto id : latent_ids_) os << ' ' << id;
  os << '\n';
  return os.str();
}

std::vector<std::int32_t> tokenize_text(std::string_view text, const Vocab& vocab) {
  std::vector<std::int32_t> ids;
  std::istringstream is{std::string(text)};
  std::string word;
  bool previous_number = false;
  while (is >> word) {
    if (is_number_word(word)) {
      // Two adjacent numbers would detokenize into one.
      if (previous_number) throw VocabError("adjacent numbers '" + word + "' cannot be tokenized");
      for (char c : word) ids.push_back(vocab.id(number_token(c)));
      previous_number = true;
    } else {
      ids.push_back(vocab.id(word));
      previous_number = false;
    }
  }
  return ids;
}

std::string detokenize(std::span<const std::int32_t> ids, const Vocab& vocab) {
  std::string out;
  bool in_number = false;
  for (auto id : ids) {
    const std::string tok = vocab.token(id);
    if (vocab.is_number_char(id)) {
      if (!in_number && !out.empty()) out += ' ';
      out += tok[5];
      in_number = true;
    } else {
      if (!out.empty()) out += ' ';
      out += tok;
      in_number = false;
    }
  }
  return out;
}

std::vector<std::int32_t> encode_trajectory(const Trajectory& traj, const Vocab& vocab) {
  std::vector<std::int32_t> ids;
  ids.reserve(kAnswerTokens);
  ids.push_back(vocab.answer_start);
  for (const auto& w : traj) {
    for (double v : {w.x, w.y}) {
      if (!std::isfinite(v) || std::abs(v) >= 32.0) {
        throw VocabError("trajectory coordinate " + std::to_string(v) + " outside (-32, 32) m");
      }
      ids.push_back(vocab.lattice(static_cast<int>(std::lround(v / kLatticeStep))));
    }
  }
  ids.push_back(vocab.answer_end);
  return ids;
}

Trajectory decode_trajectory(std::span<const std::int32_t> ids, const Vocab& vocab) {
  if (ids.size() == kAnswerTokens) {
    if (ids.front() != vocab.answer_start || ids.back() != vocab.answer_end) {
      throw VocabError("answer region is not framed by answer delimiters");
    }
    ids = ids.subspan(1, kAnswerTokens - 2);
  }
  if (ids.size() != 2 * kNumWaypoints) {
    throw VocabError("answer region has " + std::to_string(ids.size()) + " tokens, expected 16 coordinates");
  }
  Trajectory t;
  for (std::size_t k = 0; k < kNumWaypoints; ++k) {
    t[k].x = vocab.lattice_steps(ids[2 * k]) * kLatticeStep;
    t[k].y = vocab.lattice_steps(ids[2 * k + 1]) * kLatticeStep;
  }
  return t;
}

Trajectory round_to_lattice(const Trajectory& traj) {
  Trajectory out;
  for (std::size_t k = 0; k < traj.size(); ++k) {
    out[k].x = static_cast<double>(std::lround(traj[k].x / kLatticeStep)) * kLatticeStep;
    out[k].y = static_cast<double>(std::lround(traj[k].y / kLatticeStep)) * kLatticeStep;
  }
  return out;
}

}  // namespace onevl
