#include "onevl/inference.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <functional>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace onevl {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

// Greedy argmax over ids accepted by `allowed`; ties go to the lowest id.
std::int32_t argmax_where(const RVec<double>& logits, const std::function<bool(std::int32_t)>& allowed) {
  std::int32_t best = -1;
  double best_v = -std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < logits.size(); ++i) {
    const auto id = static_cast<std::int32_t>(i);
    if (allowed && !allowed(id)) continue;
    if (best < 0 || logits(i) > best_v) {
      best = id;
      best_v = logits(i);
    }
  }
  return best;
}

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

std::string_view to_string(DecodeMode m) {
  switch (m) {
    case DecodeMode::answer_only: return "answer_only";
    case DecodeMode::explicit_cot: return "explicit_cot";
    case DecodeMode::latent_prefill: return "latent_prefill";
    case DecodeMode::latent_iterative: return "latent_iterative";
    case DecodeMode::mlp_head: return "mlp_head";
  }
  return "";
}

DecodeMode decode_mode_from_string(std::string_view s) {
  for (auto m : kAllModes) {
    if (to_string(m) == s) return m;
  }
  throw std::invalid_argument("unknown decode mode '" + std::string(s) + "'");
}

InferenceEngine::InferenceEngine(const ModelBundle& bundle, const Vocab& vocab, const Codebook* codebook)
    : bundle_(bundle),
      vocab_(vocab),
      codebook_(codebook),
      backbone_(bundle.params, "backbone/", bundle.cfg.n_layers, bundle.cfg.n_heads),
      dec_l_(bundle.params, "dec_l/", bundle.cfg.dec_layers, bundle.cfg.dec_heads),
      dec_v_(bundle.params, "dec_v/", bundle.cfg.dec_layers, bundle.cfg.dec_heads),
      w_l_(bundle.params, "w_l/"),
      w_v_(bundle.params, "w_v/") {
  if (bundle.vocab_size != vocab.size()) throw std::invalid_argument("InferenceEngine: vocabulary size mismatch");
  has_head_ = bundle.has_group("head");
  if (has_head_) head_ = Mlp2<double>(bundle.params, "head/");
  patch_w_ = to_mat<double>(bundle.params.get("patch/w").value);
  patch_b_ = to_mat<double>(bundle.params.get("patch/b").value);
  patch_g_ = to_mat<double>(bundle.params.get("patch/ln.g").value);
  patch_ln_b_ = to_mat<double>(bundle.params.get("patch/ln.b").value);
}

RMat<double> InferenceEngine::patch_embeddings(const Raster& frame) const {
  const Tensor f = patch_features(frame, bundle_.cfg.patch);
  RMat<double> x = to_mat<double>(f) * patch_w_;
  x.rowwise() += patch_b_;
  layer_norm_rows(x, patch_g_, patch_ln_b_);
  return x;
}

RMat<double> InferenceEngine::backbone_inputs(const TokenLayout& layout, const Raster& frame) const {
  RMat<double> x = backbone_.token_rows(layout.ids);
  if (!layout.image.empty()) {
    x.middleRows(static_cast<Eigen::Index>(layout.image.begin), static_cast<Eigen::Index>(layout.image.size())) =
        patch_embeddings(frame);
  }
  return x;
}

RVec<double> kv_cache_decode_step(const StackRunner<double>& runner, StackRunner<double>::Cache& cache,
                                  std::int32_t token) {
  const std::int32_t ids[] = {token};
  const RMat<double> h = runner.forward(cache, runner.token_rows(ids));
  return runner.logits(h.row(0));
}

Prediction InferenceEngine::predict(const TokenizedSample& s, DecodeMode mode, const PredictOptions& opt) const {
  Prediction out;
  out.latency.mode = mode;
  out.latency.sample_id = std::to_string(s.seed);
  const bool latent_prompt = mode == DecodeMode::latent_prefill || mode == DecodeMode::mlp_head;
  const TokenLayout prompt = latent_prompt ? build_prefill_prompt(s, vocab_) : build_answer_prompt(s, vocab_);
  out.latency.prefill_tokens = prompt.ids.size();

  // Prefill.
  const auto t0 = Clock::now();
  auto cache = backbone_.new_cache();
  const RMat<double> hidden = backbone_.forward(cache, backbone_inputs(prompt, s.frame_now));
  RVec<double> logits;
  if (mode != DecodeMode::mlp_head) logits = backbone_.logits(hidden.row(hidden.rows() - 1));
  out.latency.wall_prefill = seconds_since(t0);

  const auto t1 = Clock::now();
  if (mode == DecodeMode::mlp_head) {
    if (!has_head_) throw std::invalid_argument("predict: bundle has no regression head");
    if (prompt.latent_lang.empty()) throw std::invalid_argument("predict: mlp_head needs language latent tokens");
    const RMat<double> h = hidden.row(static_cast<Eigen::Index>(prompt.latent_lang.end - 1));
    const RMat<double> y = head_(h);
    for (std::size_t k = 0; k < kNumWaypoints; ++k) {
      out.trajectory[k] = {y(0, static_cast<Eigen::Index>(2 * k)), y(0, static_cast<Eigen::Index>(2 * k + 1))};
    }
    out.ok = true;
    out.latency.wall_decode = seconds_since(t1);
    out.latency.total = out.latency.wall_prefill + out.latency.wall_decode;
    return out;
  }

  // Emits one token chosen from `logits`, feeds it unless it is the last one.
  auto emit = [&](const std::function<bool(std::int32_t)>& allowed, std::int32_t reference, bool feed) {
    std::int32_t tok = argmax_where(logits, allowed);
    if (opt.force_reference) tok = reference;
    out.decoded_ids.push_back(tok);
    if (feed) logits = kv_cache_decode_step(backbone_, cache, tok);
    return tok;
  };

  if (mode == DecodeMode::latent_iterative) {
    // The latent block goes through the decode loop one position at a time;
    // the last step yields the logits of the first answer token.
    const auto block = latent_block(vocab_);
    for (std::size_t i = 0; i < block.size(); ++i) {
      const std::int32_t ids[] = {block[i]};
      const RMat<double> h = backbone_.forward(cache, backbone_.token_rows(ids));
      if (i + 1 == block.size()) logits = backbone_.logits(h.row(0));
      out.decoded_ids.push_back(block[i]);
    }
  }

  if (mode == DecodeMode::explicit_cot) {
    emit([&](std::int32_t id) { return id == vocab_.think_start; }, vocab_.think_start, true);
    std::vector<std::int32_t> cot;
    for (std::size_t i = 0;; ++i) {
      // At the length cap only </think> is allowed.
      const bool cap = i == opt.max_cot_tokens;
      const std::int32_t ref = i < s.cot_ids.size() && !cap ? s.cot_ids[i] : vocab_.think_end;
      const std::int32_t tok = emit(
          [&](std::int32_t id) { return id == vocab_.think_end || (!cap && vocab_.is_text_word(id)); }, ref, true);
      if (tok == vocab_.think_end) break;
      cot.push_back(tok);
    }
    out.cot_text = detokenize(cot, vocab_);
  }

  const std::size_t answer_from = out.decoded_ids.size();
  if (opt.constrained) {
    emit([&](std::int32_t id) { return id == vocab_.answer_start; }, vocab_.answer_start, true);
    for (std::size_t k = 0; k < 2 * kNumWaypoints; ++k) {
      emit([&](std::int32_t id) { return vocab_.is_lattice(id); }, s.answer_ids[k + 1], true);
    }
    emit([&](std::int32_t id) { return id == vocab_.answer_end; }, vocab_.answer_end, false);
  } else {
    for (std::size_t k = 0; k < kAnswerTokens; ++k) {
      const std::int32_t tok = emit(nullptr, s.answer_ids[k], k + 1 < kAnswerTokens);
      if (tok == vocab_.answer_end) break;
    }
  }
  out.latency.wall_decode = seconds_since(t1);
  out.latency.total = out.latency.wall_prefill + out.latency.wall_decode;
  out.latency.decoded_tokens = out.decoded_ids.size();

  const std::span<const std::int32_t> answer(out.decoded_ids.data() + answer_from,
                                             out.decoded_ids.size() - answer_from);
  try {
    out.trajectory = decode_trajectory(answer, vocab_);
    out.ok = true;
  } catch (const VocabError& e) {
    out.ok = false;
    out.failure = e.what();
  }
  return out;
}

std::vector<std::int32_t> InferenceEngine::greedy_aux(const StackRunner<double>& dec, const Mlp2<double>& proj,
                                                      const RMat<double>& cond, std::size_t max_tokens,
                                                      const std::function<bool(std::size_t, std::int32_t)>& allowed,
                                                      std::int32_t stop_local) const {
  auto cache = dec.new_cache();
  const RMat<double> h = dec.forward(cache, proj(cond));
  RVec<double> logits = dec.logits(h.row(h.rows() - 1));
  std::vector<std::int32_t> out;
  for (std::size_t i = 0; i < max_tokens; ++i) {
    const std::int32_t tok = argmax_where(logits, [&](std::int32_t id) { return allowed(i, id); });
    out.push_back(tok);
    if (tok == stop_local || i + 1 == max_tokens) break;
    logits = kv_cache_decode_step(dec, cache, tok);
  }
  return out;
}

Explanation InferenceEngine::explain_visual(const TokenizedSample& s, const RMat<double>* latent_override) const {
  if (codebook_ == nullptr) throw std::invalid_argument("explain: no codebook attached");
  const TokenLayout prompt = build_prefill_prompt(s, vocab_);
  auto cache = backbone_.new_cache();
  const RMat<double> hidden = backbone_.forward(cache, backbone_inputs(prompt, s.frame_now));
  const RMat<double> V = patch_embeddings(s.frame_now);
  RMat<double> Hv = latent_override ? *latent_override
                                    : RMat<double>(hidden.middleRows(static_cast<Eigen::Index>(prompt.latent_vis.begin),
                                                                     static_cast<Eigen::Index>(prompt.latent_vis.size())));
  RMat<double> cond(V.rows() + Hv.rows(), V.cols());
  cond << V, Hv;
  const int K = vocab_.codebook_size();
  const std::size_t grid = static_cast<std::size_t>(bundle_.cfg.num_patches());
  const std::size_t frame_len = grid + 2;
  auto allowed = [&](std::size_t i, std::int32_t id) {
    const std::size_t p = i % frame_len;
    if (p == 0) return id == K;
    if (p == frame_len - 1) return id == K + 1;
    return id < K;
  };
  const auto local = greedy_aux(dec_v_, w_v_, cond, 2 * frame_len, allowed, -1);
  Explanation e;
  for (auto id : local) e.future_ids.push_back(visual_global_id(id, vocab_));
  const int gh = bundle_.cfg.raster_height / bundle_.cfg.patch;
  const int gw = bundle_.cfg.raster_width / bundle_.cfg.patch;
  for (int f = 0; f < 2; ++f) {
    const std::span<const std::int32_t> ids(e.future_ids.data() + f * frame_len, frame_len);
    const auto g = from_vocab_ids(ids, vocab_.visual_base(), K, sentinels(vocab_), gh, gw,
                                  f == 0 ? FrameTag::future_0_5s : FrameTag::future_1_0s);
    e.future[static_cast<std::size_t>(f)] = decode(g, *codebook_);
  }
  return e;
}

Explanation InferenceEngine::explain(const TokenizedSample& s) const {
  Explanation e = explain_visual(s);
  Explanation text = explain_language(s);
  e.cot_ids = std::move(text.cot_ids);
  e.cot_text = std::move(text.cot_text);
  return e;
}

Explanation InferenceEngine::explain_language(const TokenizedSample& s) const {
  Explanation e;
  const TokenLayout prompt = build_prefill_prompt(s, vocab_);
  auto cache = backbone_.new_cache();
  const RMat<double> hidden = backbone_.forward(cache, backbone_inputs(prompt, s.frame_now));
  const RMat<double> V = patch_embeddings(s.frame_now);
  const RMat<double> Hl = hidden.middleRows(static_cast<Eigen::Index>(prompt.latent_lang.begin),
                                            static_cast<Eigen::Index>(prompt.latent_lang.size()));
  RMat<double> cond(V.rows() + Hl.rows(), V.cols());
  cond << V, Hl;
  auto allowed = [&](std::size_t, std::int32_t id) { return vocab_.is_text_word(id) || id == vocab_.think_end; };
  auto ids = greedy_aux(dec_l_, w_l_, cond, 160, allowed, vocab_.think_end);
  if (!ids.empty() && ids.back() == vocab_.think_end) ids.pop_back();
  e.cot_ids = ids;
  e.cot_text = detokenize(ids, vocab_);
  return e;
}

LatentStates InferenceEngine::latent_states_prefill(const TokenizedSample& s) const {
  const TokenLayout prompt = build_prefill_prompt(s, vocab_);
  auto cache = backbone_.new_cache();
  const RMat<double> hidden = backbone_.forward(cache, backbone_inputs(prompt, s.frame_now));
  const auto begin = static_cast<Eigen::Index>(prompt.image.end + 1);
  LatentStates out;
  out.hidden = hidden.middleRows(begin, hidden.rows() - begin);
  out.first_answer_logits = backbone_.logits(hidden.row(hidden.rows() - 1));
  return out;
}

LatentStates InferenceEngine::latent_states_incremental(const TokenizedSample& s) const {
  const TokenLayout prompt = build_answer_prompt(s, vocab_);
  auto cache = backbone_.new_cache();
  backbone_.forward(cache, backbone_inputs(prompt, s.frame_now));
  const auto block = latent_block(vocab_);
  LatentStates out;
  out.hidden.resize(static_cast<Eigen::Index>(block.size()), backbone_.d());
  for (std::size_t i = 0; i < block.size(); ++i) {
    const std::int32_t ids[] = {block[i]};
    const RMat<double> h = backbone_.forward(cache, backbone_.token_rows(ids));
    out.hidden.row(static_cast<Eigen::Index>(i)) = h.row(0);
    if (i + 1 == block.size()) out.first_answer_logits = backbone_.logits(h.row(0));
  }
  return out;
}

LatencySummary measure_latency(const InferenceEngine& engine, const std::vector<TokenizedSample>& samples,
                               const std::vector<DecodeMode>& modes, int n_runs, int warmup) {
  PredictOptions opt;
  opt.force_reference = true;
  for (int w = 0; w < warmup; ++w) {
    for (const auto& s : samples) {
      for (auto m : modes) engine.predict(s, m, opt);
    }
  }
  LatencySummary sum;
  std::vector<std::vector<double>> totals(modes.size());
  for (const auto& s : samples) {
    std::vector<std::vector<LatencyRecord>> runs(modes.size());
    for (int r = 0; r < std::max(n_runs, 1); ++r) {
      for (std::size_t m = 0; m < modes.size(); ++m) runs[m].push_back(engine.predict(s, modes[m], opt).latency);
    }
    for (std::size_t m = 0; m < modes.size(); ++m) {
      auto by_total = runs[m];
      std::sort(by_total.begin(), by_total.end(),
                [](const LatencyRecord& a, const LatencyRecord& b) { return a.total < b.total; });
      const LatencyRecord rec = by_total[by_total.size() / 2];
      totals[m].push_back(rec.total);
      sum.records.push_back(rec);
    }
  }
  auto med = [&](DecodeMode mode) {
    for (std::size_t m = 0; m < modes.size(); ++m) {
      if (modes[m] == mode) return median(totals[m]);
    }
    return 0.0;
  };
  for (std::size_t m = 0; m < modes.size(); ++m) sum.median_total.emplace_back(modes[m], median(totals[m]));
  const double prefill = med(DecodeMode::latent_prefill);
  const double answer = med(DecodeMode::answer_only);
  if (prefill > 0) sum.explicit_over_prefill = med(DecodeMode::explicit_cot) / prefill;
  if (answer > 0) {
    sum.prefill_over_answer = prefill / answer;
    sum.mlp_over_answer = med(DecodeMode::mlp_head) / answer;
  }
  return sum;
}

void write_latency_csv(const std::filesystem::path& path, const std::vector<LatencyRecord>& records) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << "mode,sample_id,prefill_tokens,decoded_tokens,wall_prefill_s,wall_decode_s,total_s\n";
  os.precision(17);
  for (const auto& r : records) {
    os << to_string(r.mode) << ',' << r.sample_id << ',' << r.prefill_tokens << ',' << r.decoded_tokens << ','
       << r.wall_prefill << ',' << r.wall_decode << ',' << r.total << '\n';
  }
}

std::vector<LatencyRecord> read_latency_csv(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  std::string line;
  std::getline(is, line);
  std::vector<LatencyRecord> out;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string f[7];
    for (auto& x : f) std::getline(ss, x, ',');
    LatencyRecord r;
    r.mode = decode_mode_from_string(f[0]);
    r.sample_id = f[1];
    r.prefill_tokens = std::stoull(f[2]);
    r.decoded_tokens = std::stoull(f[3]);
    r.wall_prefill = std::stod(f[4]);
    r.wall_decode = std::stod(f[5]);
    r.total = std::stod(f[6]);
    out.push_back(r);
  }
  return out;
}

}  // namespace onevl
