#include "onevl/layout.hpp"

#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace onevl {

namespace {

void append(std::vector<std::int32_t>& out, std::span<const std::int32_t> ids) {
  out.insert(out.end(), ids.begin(), ids.end());
}

// Prompt text and framed image; spans set, mask all false.
TokenLayout prompt_and_image(const TokenizedSample& s) {
  TokenLayout l;
  append(l.ids, s.prompt_ids);
  l.prompt_text = {0, l.ids.size()};
  append(l.ids, s.image_ids);
  l.image = {l.prompt_text.end + 1, l.ids.size() - 1};
  return l;
}

void append_latents(TokenLayout& l, const Vocab& vocab) {
  const auto& vis = vocab.latent_vis_ids();
  const auto& lang = vocab.latent_ids();
  if (!vis.empty()) {
    l.ids.push_back(vocab.start_latent_vis);
    l.latent_vis.begin = l.ids.size();
    append(l.ids, vis);
    l.latent_vis.end = l.ids.size();
    l.ids.push_back(vocab.end_latent_vis);
  } else {
    l.latent_vis = {l.ids.size(), l.ids.size()};
  }
  if (!lang.empty()) {
    l.ids.push_back(vocab.start_latent);
    l.latent_lang.begin = l.ids.size();
    append(l.ids, lang);
    l.latent_lang.end = l.ids.size();
    l.ids.push_back(vocab.end_latent);
  } else {
    l.latent_lang = {l.ids.size(), l.ids.size()};
  }
}

void finish_mask(TokenLayout& l, std::size_t supervised_from) {
  l.loss_mask.assign(l.ids.size(), false);
  for (std::size_t i = supervised_from; i < l.ids.size(); ++i) l.loss_mask[i] = true;
}

std::vector<std::int32_t> ids_from_json(const nlohmann::json& j, const char* key) {
  return j.at(key).get<std::vector<std::int32_t>>();
}

}  // namespace

VisualSentinels sentinels(const Vocab& vocab) { return {vocab.image_start, vocab.image_end}; }

TokenizedSample tokenize_sample(const Sample& s, const Vocab& vocab, const Codebook& cb) {
  if (cb.K != vocab.codebook_size()) throw std::invalid_argument("codebook size does not match the vocabulary");
  TokenizedSample t;
  t.seed = s.seed;
  t.scenario = s.scenario;
  t.meta_action = s.meta_action;
  t.prompt_ids.push_back(vocab.bos);
  append(t.prompt_ids, tokenize_text(s.ego_state_text, vocab));
  t.image_ids = to_vocab_ids(encode(s.frame_now, cb, FrameTag::now), vocab.visual_base(), sentinels(vocab));
  t.future_ids = to_vocab_ids(encode(s.frame_future[0], cb, FrameTag::future_0_5s), vocab.visual_base(),
                              sentinels(vocab));
  append(t.future_ids, to_vocab_ids(encode(s.frame_future[1], cb, FrameTag::future_1_0s), vocab.visual_base(),
                                    sentinels(vocab)));
  t.cot_ids = tokenize_text(s.cot_text, vocab);
  t.answer_ids = encode_trajectory(s.trajectory, vocab);
  t.trajectory = s.trajectory;
  t.frame_now = s.frame_now;
  t.frame_future = s.frame_future;
  return t;
}

void write_token_file(const std::filesystem::path& path, std::span<const TokenizedSample> samples) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  for (const auto& s : samples) {
    nlohmann::ordered_json j;
    j["seed"] = s.seed;
    j["image"] = s.image_ids;
    j["future"] = s.future_ids;
    os << j.dump() << '\n';
  }
  if (!os) throw std::runtime_error("write failed for " + path.string());
}

std::vector<TokenizedSample> join_token_file(const std::filesystem::path& path, std::span<const Sample> samples,
                                             const Vocab& vocab) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  std::vector<TokenizedSample> out;
  out.reserve(samples.size());
  std::string line;
  std::size_t i = 0;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    if (i >= samples.size()) throw std::runtime_error(path.string() + " has more records than its dataset split");
    const auto j = nlohmann::json::parse(line);
    const Sample& s = samples[i++];
    if (j.at("seed").get<std::uint64_t>() != s.seed) {
      throw std::runtime_error(path.string() + " does not match its dataset split (seed mismatch at record " +
                               std::to_string(i) + ")");
    }
    TokenizedSample t;
    t.seed = s.seed;
    t.scenario = s.scenario;
    t.meta_action = s.meta_action;
    t.prompt_ids.push_back(vocab.bos);
    append(t.prompt_ids, tokenize_text(s.ego_state_text, vocab));
    t.image_ids = ids_from_json(j, "image");
    t.future_ids = ids_from_json(j, "future");
    for (auto id : t.image_ids) {
      if (!vocab.is_visual(id) && id != vocab.image_start && id != vocab.image_end) {
        throw std::runtime_error(path.string() + ": id " + std::to_string(id) + " is not a visual token");
      }
    }
    t.cot_ids = tokenize_text(s.cot_text, vocab);
    t.answer_ids = encode_trajectory(s.trajectory, vocab);
    t.trajectory = s.trajectory;
    t.frame_now = s.frame_now;
    t.frame_future = s.frame_future;
    out.push_back(std::move(t));
  }
  if (out.size() != samples.size()) throw std::runtime_error(path.string() + " has fewer records than its dataset split");
  return out;
}

std::vector<std::int32_t> lang_targets(const TokenizedSample& s, const Vocab& vocab) {
  std::vector<std::int32_t> t = s.cot_ids;
  t.push_back(vocab.think_end);
  return t;
}

std::vector<std::int32_t> latent_block(const Vocab& vocab) {
  TokenLayout l;
  append_latents(l, vocab);
  return l.ids;
}

TokenLayout build_training_sequence(const TokenizedSample& s, const Vocab& vocab) {
  TokenLayout l = prompt_and_image(s);
  const std::size_t supervised_from = l.ids.size();
  append_latents(l, vocab);
  const std::size_t answer_begin = l.ids.size();
  append(l.ids, s.answer_ids);
  l.answer = {answer_begin, l.ids.size()};
  l.cot = {answer_begin, answer_begin};
  finish_mask(l, supervised_from);
  return l;
}

TokenLayout build_prefill_prompt(const TokenizedSample& s, const Vocab& vocab) {
  TokenLayout l = prompt_and_image(s);
  append_latents(l, vocab);
  l.cot = l.answer = {l.ids.size(), l.ids.size()};
  l.loss_mask.assign(l.ids.size(), false);
  return l;
}

TokenLayout build_answer_prompt(const TokenizedSample& s, const Vocab& /*vocab*/) {
  TokenLayout l = prompt_and_image(s);
  l.latent_vis = l.latent_lang = l.cot = l.answer = {l.ids.size(), l.ids.size()};
  l.loss_mask.assign(l.ids.size(), false);
  return l;
}

TokenLayout build_explicit_cot_sequence(const TokenizedSample& s, const Vocab& vocab) {
  TokenLayout l = prompt_and_image(s);
  const std::size_t supervised_from = l.ids.size();
  l.latent_vis = l.latent_lang = {supervised_from, supervised_from};
  l.ids.push_back(vocab.think_start);
  l.cot.begin = l.ids.size();
  append(l.ids, s.cot_ids);
  l.cot.end = l.ids.size();
  l.ids.push_back(vocab.think_end);
  const std::size_t answer_begin = l.ids.size();
  append(l.ids, s.answer_ids);
  l.answer = {answer_begin, l.ids.size()};
  finish_mask(l, supervised_from);
  return l;
}

}  // namespace onevl
