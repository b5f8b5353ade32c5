#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "onevl/dataset.hpp"

using namespace onevl;
namespace fs = std::filesystem;

TEST(Dataset, SplitSizesAndDisjointness) {
  const Dataset ds = generate_dataset(200, 4);
  EXPECT_EQ(ds.train.size(), 160u);
  EXPECT_EQ(ds.val.size(), 20u);
  EXPECT_EQ(ds.test.size(), 20u);
  std::set<std::uint64_t> seeds;
  for (const auto* split : {&ds.train, &ds.val, &ds.test}) {
    for (const auto& s : *split) EXPECT_TRUE(seeds.insert(s.seed).second);
  }
}

TEST(Dataset, StratifiedByScenario) {
  const Dataset ds = generate_dataset(400, 2);
  for (const auto* split : {&ds.train, &ds.val, &ds.test}) {
    std::map<Scenario, int> counts;
    for (const auto& s : *split) ++counts[s.scenario];
    ASSERT_EQ(counts.size(), 4u);
    for (const auto& [sc, c] : counts) EXPECT_EQ(c, static_cast<int>(split->size() / 4)) << to_string(sc);
  }
}

TEST(Dataset, PureFunctionOfArguments) {
  const Dataset a = generate_dataset(40, 8);
  const Dataset b = generate_dataset(40, 8);
  EXPECT_EQ(a.train, b.train);
  EXPECT_EQ(a.test, b.test);
  EXPECT_NE(generate_dataset(40, 9).train, a.train);
}

TEST(Dataset, RejectsBadArguments) {
  EXPECT_THROW(generate_dataset(5, 1), std::invalid_argument);
  EXPECT_THROW(generate_dataset(100, 1, {0.5, 0.5, 0.5}), std::invalid_argument);
  EXPECT_THROW(generate_dataset(100, 1, {1.2, -0.1, -0.1}), std::invalid_argument);
}

TEST(Dataset, JsonRoundTripIsExact) {
  const Dataset ds = generate_dataset(40, 3);
  for (const auto& s : ds.train) EXPECT_EQ(sample_from_json_line(sample_to_json_line(s)), s);
}

TEST(Dataset, WriteReadDirectory) {
  const auto dir = fs::temp_directory_path() / "onevl_dataset_test";
  fs::remove_all(dir);
  const Dataset ds = build_dataset(40, 6, {}, {}, dir);
  const Dataset back = read_dataset(dir);
  EXPECT_EQ(back.train, ds.train);
  EXPECT_EQ(back.val, ds.val);
  EXPECT_EQ(back.test, ds.test);
  EXPECT_THROW(read_samples(dir / "absent.jsonl"), std::runtime_error);
}

TEST(Dataset, MalformedRecordsRejected) {
  const Sample s = make_sample(1, Scenario::straight);
  std::string line = sample_to_json_line(s);
  std::string bad_cell = line;
  bad_cell.replace(bad_cell.find("\"frame_now\":\"") + 13, 1, "9");
  EXPECT_THROW(sample_from_json_line(bad_cell), std::runtime_error);
  std::string bad_action = line;
  const auto pos = bad_action.find(std::string(to_string(s.meta_action)), bad_action.find("\"meta_action\""));
  bad_action.replace(pos, to_string(s.meta_action).size(), "fly");
  EXPECT_THROW(sample_from_json_line(bad_action), std::invalid_argument);
}

TEST(Dataset, CustomRasterSize) {
  const Dataset ds = generate_dataset(12, 1, {}, {16, 24});
  EXPECT_EQ(ds.train[0].frame_now.height, 16);
  EXPECT_EQ(ds.train[0].frame_now.width, 24);
  EXPECT_EQ(sample_from_json_line(sample_to_json_line(ds.train[0])), ds.train[0]);
}

TEST(Dataset, MatchesGoldenRecord) {
  std::ifstream is(std::filesystem::path(ONEVL_GOLDEN_DIR) / "sample_slow_lead_7.jsonl");
  std::string line;
  ASSERT_TRUE(std::getline(is, line));
  const Sample s = make_sample(7, Scenario::slow_lead);
  EXPECT_EQ(sample_to_json_line(s), line);
  EXPECT_EQ(sample_from_json_line(line), s);
}
