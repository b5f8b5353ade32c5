#include <gtest/gtest.h>

#include <fstream>
#include <set>
#include <sstream>

#include "onevl/dataset.hpp"
#include "onevl/vocab.hpp"

using namespace onevl;

namespace {

std::string read_file(const std::string& path) {
  std::ifstream is(path);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

}  // namespace

// Id assignment is a format: token files and checkpoints depend on it.
TEST(Vocab, MatchesGoldenFile) {
  const Vocab v(128, 4, 2);
  const std::string golden = read_file(std::string(ONEVL_GOLDEN_DIR) + "/vocab.txt");
  ASSERT_FALSE(golden.empty());
  EXPECT_EQ(v.serialize(), golden);
}

TEST(Vocab, Layout) {
  const Vocab v(64, 3, 2);
  EXPECT_EQ(v.pad, 0);
  EXPECT_EQ(v.text_size(), 12 + static_cast<std::int32_t>(grammar_words().size()) + 12 + kReservedSlots +
                               2 * kLatticeMax + 1);
  EXPECT_EQ(v.size(), v.visual_base() + 64);
  EXPECT_EQ(v.latent_vis_ids(), (std::vector<std::int32_t>{v.reserved(0), v.reserved(1), v.reserved(2)}));
  EXPECT_EQ(v.latent_ids(), (std::vector<std::int32_t>{v.reserved(3), v.reserved(4)}));
  // Baseline vocabularies share every id with the latent one.
  const Vocab base(64, 0, 0);
  EXPECT_EQ(base.visual_base(), v.visual_base());
  EXPECT_EQ(base.size(), v.size());
  EXPECT_EQ(v.token(v.visual_base() + 5), "<v:5>");
  EXPECT_THROW(v.token(v.size()), VocabError);
}

TEST(Vocab, TokensAreUnique) {
  const Vocab v(16, 0, 0);
  std::set<std::string> seen;
  for (std::int32_t i = 0; i < v.size(); ++i) EXPECT_TRUE(seen.insert(v.token(i)).second) << v.token(i);
}

TEST(Vocab, EveryGeneratedTextRoundTrips) {
  const Vocab v(32, 4, 2);
  const Dataset ds = generate_dataset(400, 12);
  for (const auto* split : {&ds.train, &ds.val, &ds.test}) {
    for (const auto& s : *split) {
      const auto cot = tokenize_text(s.cot_text, v);
      for (auto id : cot) EXPECT_TRUE(v.is_text_word(id));
      EXPECT_EQ(detokenize(cot, v), s.cot_text);
      EXPECT_EQ(detokenize(tokenize_text(s.ego_state_text, v), v), s.ego_state_text);
    }
  }
}

TEST(Vocab, NumbersSpelledByCharacter) {
  const Vocab v(8, 0, 0);
  const auto ids = tokenize_text("at -12.5 meters", v);
  ASSERT_EQ(ids.size(), 1u + 5u + 1u);
  EXPECT_EQ(v.token(ids[1]), "<num:->");
  EXPECT_EQ(v.token(ids[4]), "<num:.>");
  EXPECT_EQ(detokenize(ids, v), "at -12.5 meters");
  EXPECT_THROW(tokenize_text("at 1 2", v), VocabError);
}

TEST(Vocab, OutOfVocabularyNamesWord) {
  const Vocab v(8, 0, 0);
  try {
    (void)tokenize_text("the banana is", v);
    FAIL();
  } catch (const VocabError& e) {
    EXPECT_NE(std::string(e.what()).find("banana"), std::string::npos);
  }
  EXPECT_THROW(tokenize_text("1.", v), VocabError);
}

TEST(Vocab, TrajectoryLatticeRoundTrip) {
  const Vocab v(8, 0, 0);
  Trajectory t{};
  for (int k = 0; k < kNumWaypoints; ++k) t[static_cast<std::size_t>(k)] = {0.25 * 3 * k, -0.25 * k};
  const auto ids = encode_trajectory(t, v);
  ASSERT_EQ(ids.size(), static_cast<std::size_t>(kAnswerTokens));
  EXPECT_EQ(ids.front(), v.answer_start);
  EXPECT_EQ(ids.back(), v.answer_end);
  EXPECT_EQ(decode_trajectory(ids, v), t);
  EXPECT_EQ(decode_trajectory(std::span(ids).subspan(1, 16), v), t);
  EXPECT_THROW(decode_trajectory(std::span(ids).subspan(0, 10), v), VocabError);
}

TEST(Vocab, LatticeRoundingErrorBounded) {
  const Vocab v(8, 0, 0);
  const Dataset ds = generate_dataset(200, 5);
  for (const auto& s : ds.train) {
    const Trajectory back = decode_trajectory(encode_trajectory(s.trajectory, v), v);
    EXPECT_EQ(back, round_to_lattice(s.trajectory));
    for (std::size_t k = 0; k < kNumWaypoints; ++k) {
      EXPECT_LE(std::abs(back[k].x - s.trajectory[k].x), kLatticeStep / 2 + 1e-12);
      EXPECT_LE(std::abs(back[k].y - s.trajectory[k].y), kLatticeStep / 2 + 1e-12);
    }
  }
  Trajectory far{};
  far[0].x = 40.0;
  EXPECT_THROW(encode_trajectory(far, v), VocabError);
  EXPECT_THROW(v.lattice(kLatticeMax + 1), VocabError);
  EXPECT_EQ(v.lattice_steps(v.lattice(-7)), -7);
}
