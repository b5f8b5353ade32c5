#include <gtest/gtest.h>

#include <filesystem>

#include "fixtures.hpp"
#include "onevl/inference.hpp"

using namespace onevl;
using onevl::support::small_bundle;
using onevl::support::small_world;

namespace {

double max_abs(const RMat<double>& a, const RMat<double>& b) { return (a - b).cwiseAbs().maxCoeff(); }

}  // namespace

TEST(Inference, PrefillMatchesIncrementalLatents) {
  const auto& w = small_world();
  const ModelBundle b = small_bundle(11);
  const InferenceEngine eng(b, w.vocab, &w.cb);
  for (const auto& s : w.test) {
    const auto a = eng.latent_states_prefill(s);
    const auto c = eng.latent_states_incremental(s);
    ASSERT_EQ(a.hidden.rows(), static_cast<Eigen::Index>(latent_block(w.vocab).size()));
    EXPECT_LE(max_abs(a.hidden, c.hidden), 1e-10);
    EXPECT_LE((a.first_answer_logits - c.first_answer_logits).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(Inference, IterativeAndPrefillDecodeAgree) {
  const auto& w = small_world();
  const ModelBundle b = small_bundle(12);
  const InferenceEngine eng(b, w.vocab, &w.cb);
  for (std::size_t i = 0; i < 6; ++i) {
    const auto p = eng.predict(w.test[i], DecodeMode::latent_prefill);
    const auto q = eng.predict(w.test[i], DecodeMode::latent_iterative);
    ASSERT_TRUE(p.ok);
    ASSERT_TRUE(q.ok);
    EXPECT_EQ(p.trajectory, q.trajectory);
  }
}

TEST(Inference, DecodedTokenCounts) {
  const auto& w = small_world();
  const ModelBundle b = small_bundle(13);
  const InferenceEngine eng(b, w.vocab, &w.cb);
  PredictOptions forced;
  forced.force_reference = true;
  const auto& s = w.test[0];
  const auto ans = eng.predict(s, DecodeMode::answer_only, forced);
  const auto pre = eng.predict(s, DecodeMode::latent_prefill, forced);
  const auto it = eng.predict(s, DecodeMode::latent_iterative, forced);
  const auto cot = eng.predict(s, DecodeMode::explicit_cot, forced);
  const auto head = eng.predict(s, DecodeMode::mlp_head, forced);
  EXPECT_EQ(ans.latency.decoded_tokens, static_cast<std::size_t>(kAnswerTokens));
  EXPECT_EQ(pre.latency.decoded_tokens, static_cast<std::size_t>(kAnswerTokens));
  EXPECT_EQ(it.latency.decoded_tokens, kAnswerTokens + latent_block(w.vocab).size());
  EXPECT_EQ(cot.latency.decoded_tokens, kAnswerTokens + s.cot_ids.size() + 2);
  EXPECT_EQ(head.latency.decoded_tokens, 0u);
  EXPECT_EQ(pre.latency.prefill_tokens, ans.latency.prefill_tokens + latent_block(w.vocab).size());
  // Forced decoding reproduces the reference answer.
  EXPECT_EQ(ans.trajectory, round_to_lattice(s.trajectory));
  EXPECT_EQ(cot.cot_text, detokenize(s.cot_ids, w.vocab));
}

TEST(Inference, ConstrainedDecodeAlwaysParses) {
  const auto& w = small_world();
  const ModelBundle b = small_bundle(14);
  const InferenceEngine eng(b, w.vocab, &w.cb);
  for (std::size_t i = 0; i < 5; ++i) {
    for (auto m : {DecodeMode::answer_only, DecodeMode::latent_prefill, DecodeMode::explicit_cot}) {
      const auto p = eng.predict(w.test[i], m);
      EXPECT_TRUE(p.ok) << to_string(m);
      EXPECT_EQ(p.decoded_ids.back(), w.vocab.answer_end);
    }
  }
}

TEST(Inference, UnconstrainedFailureIsReported) {
  const auto& w = small_world();
  const ModelBundle b = small_bundle(15);
  const InferenceEngine eng(b, w.vocab, &w.cb);
  PredictOptions free;
  free.constrained = false;
  // An untrained model almost never emits a well-formed answer.
  int failures = 0;
  for (std::size_t i = 0; i < 5; ++i) {
    const auto p = eng.predict(w.test[i], DecodeMode::answer_only, free);
    if (!p.ok) {
      ++failures;
      EXPECT_FALSE(p.failure.empty());
    }
  }
  EXPECT_GT(failures, 0);
}

TEST(Inference, MlpHeadMatchesGraph) {
  const auto& w = small_world();
  const ModelBundle b = small_bundle(16);
  const InferenceEngine eng(b, w.vocab, &w.cb);
  const auto& s = w.test[1];
  const auto p = eng.predict(s, DecodeMode::mlp_head);
  NoGradGuard ng;
  const auto l = build_prefill_prompt(s, w.vocab);
  const auto out = backbone_forward(b, l, patch_features(s.frame_now, 4), l.ids.size());
  const Tensor y = mlp_head_forward(b, head_input(out));
  for (std::size_t k = 0; k < kNumWaypoints; ++k) {
    EXPECT_NEAR(p.trajectory[k].x, y.at(k, 0), 1e-10);
    EXPECT_NEAR(p.trajectory[k].y, y.at(k, 1), 1e-10);
  }
}

TEST(Inference, ExplainShapes) {
  const auto& w = small_world();
  const ModelBundle b = small_bundle(17);
  const InferenceEngine eng(b, w.vocab, &w.cb);
  const auto e = eng.explain(w.test[2]);
  EXPECT_EQ(e.future_ids.size(), 2 * 66u);
  EXPECT_EQ(e.future[0].height, 32);
  EXPECT_EQ(e.future[1].cells.size(), 32u * 32u);
  EXPECT_LE(e.cot_ids.size(), 160u);
  for (auto id : e.cot_ids) EXPECT_TRUE(w.vocab.is_text_word(id));
  const InferenceEngine no_cb(b, w.vocab);
  EXPECT_THROW(no_cb.explain(w.test[2]), std::invalid_argument);
  EXPECT_NO_THROW(no_cb.explain_language(w.test[2]));
}

TEST(Inference, LatentOverrideWithOwnRowsIsIdentity) {
  const auto& w = small_world();
  const ModelBundle b = small_bundle(18);
  const InferenceEngine eng(b, w.vocab, &w.cb);
  const auto& s = w.test[3];
  const auto base = eng.explain_visual(s);
  const RMat<double> hv = eng.latent_states_prefill(s).hidden.middleRows(1, 4);
  EXPECT_EQ(eng.explain_visual(s, &hv).future_ids, base.future_ids);
}

TEST(Inference, LatencyProtocol) {
  const auto& w = small_world();
  const ModelBundle b = small_bundle(19);
  const InferenceEngine eng(b, w.vocab, &w.cb);
  const std::vector<TokenizedSample> samples(w.test.begin(), w.test.begin() + 3);
  const auto sum = measure_latency(eng, samples, {DecodeMode::answer_only, DecodeMode::latent_prefill}, 2, 1);
  EXPECT_EQ(sum.records.size(), 3u * 2u);  // the median run per sample and mode
  EXPECT_EQ(sum.median_total.size(), 2u);
  for (const auto& r : sum.records) EXPECT_GT(r.total, 0.0);
  const auto path = std::filesystem::temp_directory_path() / "onevl_latency_test.csv";
  write_latency_csv(path, sum.records);
  const auto back = read_latency_csv(path);
  ASSERT_EQ(back.size(), sum.records.size());
  EXPECT_EQ(back[0].mode, sum.records[0].mode);
  EXPECT_EQ(back[0].decoded_tokens, sum.records[0].decoded_tokens);
  EXPECT_EQ(back[0].sample_id, sum.records[0].sample_id);
}

TEST(Inference, ModeNames) {
  for (auto m : kAllModes) EXPECT_EQ(decode_mode_from_string(to_string(m)), m);
  EXPECT_THROW(decode_mode_from_string("beam"), std::invalid_argument);
}
