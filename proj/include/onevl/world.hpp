#pragma once

// Deterministic top-down driving world. Scenes are generated from a seed and a
// scenario family, rolled forward with scripted ego behaviour, rendered into
// ego-centric rasters and described by templated reasoning text.

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace onevl {

enum class CellClass : std::uint8_t { empty = 0, lane = 1, ego = 2, vehicle = 3, pedestrian = 4, cone = 5 };
inline constexpr int kNumCellClasses = 6;

enum class Scenario { straight, slow_lead, cut_in, workzone_taper };
inline constexpr std::array<Scenario, 4> kAllScenarios = {Scenario::straight, Scenario::slow_lead,
                                                          Scenario::cut_in, Scenario::workzone_taper};

enum class ObstacleKind { vehicle, pedestrian, cone };

enum class MetaAction {
  maintain_keep_lane,
  decelerate_keep_lane,
  accelerate_keep_lane,
  maintain_nudge_left,
  maintain_nudge_right,
  stop,
};
inline constexpr int kNumMetaActions = 6;

std::string_view to_string(Scenario s);
std::string_view to_string(MetaAction a);
std::string_view to_string(ObstacleKind k);
Scenario scenario_from_string(std::string_view s);
MetaAction meta_action_from_string(std::string_view s);
/// The clause that ends every reasoning text, e.g. "maintain speed and keep lane".
std::string_view meta_action_clause(MetaAction a);

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
  friend bool operator==(const Vec2&, const Vec2&) = default;
};

struct Lane {
  std::vector<Vec2> centerline;  // strictly increasing x
  double width = 4.0;
  friend bool operator==(const Lane&, const Lane&) = default;
};

struct Obstacle {
  Vec2 position;
  Vec2 velocity;  // m/s
  ObstacleKind kind = ObstacleKind::vehicle;
  friend bool operator==(const Obstacle&, const Obstacle&) = default;
};

struct EgoState {
  Vec2 position;
  double heading = 0.0;  // rad, 0 = +x
  double speed = 0.0;    // m/s
  double accel = 0.0;    // longitudinal, m/s^2
  friend bool operator==(const EgoState&, const EgoState&) = default;
};

struct Scene {
  EgoState ego;
  std::vector<Lane> lanes;
  std::vector<Obstacle> obstacles;
  std::uint64_t rng_seed = 0;
  Scenario scenario = Scenario::straight;
  MetaAction policy = MetaAction::maintain_keep_lane;
  double time = 0.0;       // seconds since generation
  double origin_y = 0.0;   // ego lateral position at t = 0, for lateral nudges
  friend bool operator==(const Scene&, const Scene&) = default;
};

// World constants.
inline constexpr double kLaneWidth = 4.0;
inline constexpr double kCellSize = 1.0;      // metres per raster cell
inline constexpr double kStepSeconds = 0.5;   // waypoint spacing
inline constexpr int kNumWaypoints = 8;
inline constexpr double kDecel = 1.0;         // m/s^2, decelerate_keep_lane
inline constexpr double kAccel = 0.8;         // m/s^2, accelerate_keep_lane
inline constexpr double kStopSeconds = 3.5;   // stop completes by this time
inline constexpr double kNudgeOffset = 1.0;   // metres of lateral shift
inline constexpr double kNudgeSeconds = 2.0;
inline constexpr double kHeadwaySeconds = 2.0;
inline constexpr double kMinGap = 4.0;

Scene generate_scene(std::uint64_t seed, Scenario scenario);

/// Scripted policy for a scene at t = 0; also the label of its reasoning text.
MetaAction plan_policy(const Scene& scene);
/// Distance the ego needs to keep to a lead moving in its lane.
double safe_following_distance(double ego_speed);

/// `steps` successive states, each `dt` seconds after the previous one.
std::vector<Scene> roll_forward(const Scene& scene, double dt, int steps);

struct Raster {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> cells;  // row-major CellClass values

  CellClass at(int r, int c) const { return static_cast<CellClass>(cells[static_cast<std::size_t>(r * width + c)]); }
  friend bool operator==(const Raster&, const Raster&) = default;
};

/// Row and column of the ego anchor cell in an H x W raster.
inline constexpr int ego_anchor_row(int height) { return height - 4; }
inline constexpr int ego_anchor_col(int width) { return width / 2; }

/// Ego-centric top-down view. Row r lies (anchor_row - r) metres ahead of the
/// ego, column c lies (anchor_col - c) metres to its left.
Raster rasterize(const Scene& scene, int height, int width);

struct CotResult {
  std::string text;
  MetaAction meta_action;
};
CotResult render_cot(const Scene& scene, MetaAction outcome);

/// Prompt text: command, velocity, acceleration and the ego history.
std::string render_ego_state_text(const Scene& scene);

struct Waypoint {
  double x = 0.0;
  double y = 0.0;
  friend bool operator==(const Waypoint&, const Waypoint&) = default;
};
using Trajectory = std::array<Waypoint, kNumWaypoints>;

struct Sample {
  std::uint64_t seed = 0;
  Scenario scenario = Scenario::straight;
  Raster frame_now;
  std::array<Raster, 2> frame_future;  // +0.5 s, +1.0 s
  std::string ego_state_text;
  Trajectory trajectory;  // ego frame, first entry at +0.5 s
  std::string cot_text;
  MetaAction meta_action = MetaAction::maintain_keep_lane;
  friend bool operator==(const Sample&, const Sample&) = default;
};

struct RasterConfig {
  int height = 32;
  int width = 32;
};

Sample make_sample(std::uint64_t seed, Scenario scenario, const RasterConfig& cfg = {});

/// Fixed-point rounding used for stored trajectories (1e-6 m).
double round_fixed(double v);

}  // namespace onevl
