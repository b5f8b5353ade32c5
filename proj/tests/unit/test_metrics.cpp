#include <gtest/gtest.h>

#include <cmath>

#include "onevl/metrics.hpp"

using namespace onevl;

namespace {

Trajectory line(double step_x, double y) {
  Trajectory t{};
  for (std::size_t k = 0; k < kNumWaypoints; ++k) t[k] = {step_x * static_cast<double>(k + 1), y};
  return t;
}

}  // namespace

TEST(Metrics, HandComputedErrors) {
  const Trajectory gt = line(1.0, 0.0);
  // Constant 3-4-5 offset: every waypoint is 5 m off.
  Trajectory p = gt;
  for (auto& w : p) w.x += 3.0, w.y += 4.0;
  const auto e = trajectory_errors(p, gt);
  EXPECT_DOUBLE_EQ(e.ade, 5.0);
  EXPECT_DOUBLE_EQ(e.fde, 5.0);
  // Growing error: waypoint k is off by k+1 metres laterally.
  Trajectory q = gt;
  for (std::size_t k = 0; k < kNumWaypoints; ++k) q[k].y = static_cast<double>(k + 1);
  const auto f = trajectory_errors(q, gt);
  EXPECT_DOUBLE_EQ(f.ade, 4.5);
  EXPECT_DOUBLE_EQ(f.fde, 8.0);
  Trajectory bad = gt;
  bad[3].x = std::nan("");
  EXPECT_THROW(trajectory_errors(bad, gt), std::invalid_argument);
}

TEST(Metrics, AggregateWithFailures) {
  const Trajectory gt = line(1.0, 0.0);
  Trajectory off = gt;
  for (auto& w : off) w.y = 2.0;
  const std::vector<std::optional<Trajectory>> preds = {gt, off, std::nullopt, off};
  const std::vector<Trajectory> gts(4, gt);
  const auto m = aggregate_metrics(preds, gts);
  EXPECT_EQ(m.n_samples, 4u);
  EXPECT_EQ(m.n_decode_failures, 1u);
  EXPECT_DOUBLE_EQ(m.ade, (0.0 + 2.0 + kDecodeFailureError + 2.0) / 4.0);
  EXPECT_DOUBLE_EQ(m.ade_excluding_failures, 4.0 / 3.0);
  EXPECT_DOUBLE_EQ(m.fde_excluding_failures, 4.0 / 3.0);
  // Horizons at 1..4 s are waypoints 2, 4, 6, 8.
  for (int h = 1; h <= 4; ++h) EXPECT_DOUBLE_EQ(m.l2_at.at(h), m.ade);
  EXPECT_DOUBLE_EQ(m.l2_avg_horizons, m.ade);
  EXPECT_THROW(aggregate_metrics(preds, std::span(gts).first(3)), std::invalid_argument);
}

TEST(Metrics, HorizonIndexing) {
  const Trajectory gt = line(1.0, 0.0);
  Trajectory p = gt;
  for (std::size_t k = 0; k < kNumWaypoints; ++k) p[k].y = static_cast<double>(k);
  const std::vector<std::optional<Trajectory>> preds = {p};
  const std::vector<Trajectory> gts = {gt};
  const auto m = aggregate_metrics(preds, gts);
  EXPECT_DOUBLE_EQ(m.l2_at.at(1), 1.0);
  EXPECT_DOUBLE_EQ(m.l2_at.at(4), 7.0);
  EXPECT_DOUBLE_EQ(m.l2_avg_horizons, (1.0 + 3.0 + 5.0 + 7.0) / 4.0);
}

TEST(Metrics, MetaActionExtraction) {
  for (int a = 0; a < kNumMetaActions; ++a) {
    const auto action = static_cast<MetaAction>(a);
    const std::string text = "the road ahead is clear . based on the driving scene , the ego should " +
                             std::string(meta_action_clause(action)) + " .";
    EXPECT_EQ(extract_meta_action(text), action);
  }
  EXPECT_EQ(extract_meta_action("the ego should fly ."), std::nullopt);
  EXPECT_EQ(extract_meta_action("the ego should stop"), std::nullopt);
  EXPECT_EQ(extract_meta_action(""), std::nullopt);
  // The last clause wins.
  EXPECT_EQ(extract_meta_action("the ego should stop . the ego should decelerate and keep lane ."),
            MetaAction::decelerate_keep_lane);
}

TEST(Metrics, MetaActionAccuracy) {
  const std::vector<std::optional<MetaAction>> p = {MetaAction::stop, std::nullopt, MetaAction::stop,
                                                    MetaAction::maintain_nudge_left};
  const std::vector<MetaAction> g = {MetaAction::stop, MetaAction::stop, MetaAction::decelerate_keep_lane,
                                     MetaAction::maintain_nudge_left};
  EXPECT_DOUBLE_EQ(meta_action_accuracy(p, g), 0.5);
  EXPECT_THROW(meta_action_accuracy(p, std::span(g).first(2)), std::invalid_argument);
}
