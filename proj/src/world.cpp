#include "onevl/world.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "onevl/rng.hpp"

namespace onevl {

namespace {

constexpr double kLaneCenters[] = {-kLaneWidth, 0.0, kLaneWidth};

std::string fmt(const char* spec, double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), spec, v);
  std::string s = buf;
  if (s == "-0.0" || s == "-0.00") s.erase(0, 1);
  return s;
}

// Speeds are drawn on a 0.5 m/s lattice so the prompt text stays short.
double lattice_speed(Rng& rng, double lo, double hi) {
  const auto steps = static_cast<std::uint64_t>(std::llround((hi - lo) / 0.5));
  return lo + 0.5 * static_cast<double>(rng.below(steps + 1));
}

std::vector<Lane> straight_lanes() {
  std::vector<Lane> lanes;
  for (double c : kLaneCenters) {
    lanes.push_back(Lane{{{-100.0, c}, {100.0, c}, {300.0, c}}, kLaneWidth});
  }
  return lanes;
}

double smoothstep(double u) {
  u = std::clamp(u, 0.0, 1.0);
  return u * u * (3.0 - 2.0 * u);
}

double initial_accel(MetaAction a, double speed) {
  switch (a) {
    case MetaAction::decelerate_keep_lane: return -kDecel;
    case MetaAction::accelerate_keep_lane: return kAccel;
    case MetaAction::stop: return -speed / kStopSeconds;
    default: return 0.0;
  }
}

// Lateral position of a polyline at longitudinal coordinate x, if covered.
std::optional<double> polyline_y(const std::vector<Vec2>& pts, double x) {
  for (std::size_t i = 1; i < pts.size(); ++i) {
    const Vec2& a = pts[i - 1];
    const Vec2& b = pts[i];
    if (x >= a.x && x <= b.x) {
      const double t = (b.x == a.x) ? 0.0 : (x - a.x) / (b.x - a.x);
      return a.y + t * (b.y - a.y);
    }
  }
  return std::nullopt;
}

bool in_box(double dx, double dy, double half_len, double half_wid) {
  return dx >= -half_len && dx < half_len && dy >= -half_wid && dy < half_wid;
}

bool cones_block_lane(const Scene& s) {
  double lo = 0.0;
  double hi = 0.0;
  int inside = 0;
  for (const auto& o : s.obstacles) {
    if (o.kind != ObstacleKind::cone) continue;
    const double dy = o.position.y - s.ego.position.y;
    if (std::abs(dy) > kLaneWidth / 2 + 0.5) continue;
    lo = std::min(lo, dy);
    hi = std::max(hi, dy);
    ++inside;
  }
  return inside >= 3 && lo < -0.5 && hi > 0.5;
}

// Side (+1 left, -1 right) on which work-zone cones stand.
double cone_side(const Scene& s) {
  double total = 0.0;
  for (const auto& o : s.obstacles) {
    if (o.kind == ObstacleKind::cone) total += o.position.y - s.ego.position.y;
  }
  return total >= 0.0 ? 1.0 : -1.0;
}

}  // namespace

std::string_view to_string(Scenario s) {
  switch (s) {
    case Scenario::straight: return "straight";
    case Scenario::slow_lead: return "slow_lead";
    case Scenario::cut_in: return "cut_in";
    case Scenario::workzone_taper: return "workzone_taper";
  }
  return "?";
}

std::string_view to_string(MetaAction a) {
  switch (a) {
    case MetaAction::maintain_keep_lane: return "maintain_keep_lane";
    case MetaAction::decelerate_keep_lane: return "decelerate_keep_lane";
    case MetaAction::accelerate_keep_lane: return "accelerate_keep_lane";
    case MetaAction::maintain_nudge_left: return "maintain_nudge_left";
    case MetaAction::maintain_nudge_right: return "maintain_nudge_right";
    case MetaAction::stop: return "stop";
  }
  return "?";
}

std::string_view to_string(ObstacleKind k) {
  switch (k) {
    case ObstacleKind::vehicle: return "vehicle";
    case ObstacleKind::pedestrian: return "pedestrian";
    case ObstacleKind::cone: return "cone";
  }
  return "?";
}

Scenario scenario_from_string(std::string_view s) {
  for (auto sc : kAllScenarios) {
    if (to_string(sc) == s) return sc;
  }
  throw std::invalid_argument("unknown scenario '" + std::string(s) + "'");
}

MetaAction meta_action_from_string(std::string_view s) {
  for (int i = 0; i < kNumMetaActions; ++i) {
    const auto a = static_cast<MetaAction>(i);
    if (to_string(a) == s) return a;
  }
  throw std::invalid_argument("unknown meta action '" + std::string(s) + "'");
}

std::string_view meta_action_clause(MetaAction a) {
  switch (a) {
    case MetaAction::maintain_keep_lane: return "maintain speed and keep lane";
    case MetaAction::decelerate_keep_lane: return "decelerate and keep lane";
    case MetaAction::accelerate_keep_lane: return "accelerate and keep lane";
    case MetaAction::maintain_nudge_left: return "maintain speed and nudge left";
    case MetaAction::maintain_nudge_right: return "maintain speed and nudge right";
    case MetaAction::stop: return "stop";
  }
  return "";
}

double safe_following_distance(double ego_speed) { return kHeadwaySeconds * ego_speed + kMinGap; }

double round_fixed(double v) { return std::round(v * 1e6) / 1e6; }

Scene generate_scene(std::uint64_t seed, Scenario scenario) {
  Rng rng(seed);
  Scene s;
  s.rng_seed = seed;
  s.scenario = scenario;
  s.lanes = straight_lanes();
  s.ego.position = {0.0, 0.0};
  s.ego.heading = 0.0;

  switch (scenario) {
    case Scenario::straight: {
      s.ego.speed = lattice_speed(rng, 2.0, 6.5);
      if (rng.bernoulli(0.5)) {
        const double side = rng.bernoulli(0.5) ? 1.0 : -1.0;
        s.obstacles.push_back({{rng.uniform(-6.0, 24.0), side * kLaneWidth},
                               {s.ego.speed + rng.uniform(-1.0, 1.0), 0.0},
                               ObstacleKind::vehicle});
      }
      break;
    }
    case Scenario::slow_lead: {
      s.ego.speed = lattice_speed(rng, 4.5, 6.5);
      if (rng.bernoulli(0.25)) {
        s.obstacles.push_back({{rng.uniform(14.0, 26.0), 0.0}, {0.0, 0.0}, ObstacleKind::vehicle});
      } else {
        const double lead_speed = rng.uniform(1.0, s.ego.speed - 1.5);
        s.obstacles.push_back({{rng.uniform(8.0, 28.0), 0.0}, {lead_speed, 0.0}, ObstacleKind::vehicle});
      }
      break;
    }
    case Scenario::cut_in: {
      s.ego.speed = lattice_speed(rng, 4.5, 6.0);
      const double side = rng.bernoulli(0.5) ? 1.0 : -1.0;
      const double offset = rng.uniform(-8.0, 18.0);
      const double rel = offset < 0.0 ? rng.uniform(1.0, 2.5) : rng.uniform(-1.0, 1.0);
      s.obstacles.push_back({{offset, side * kLaneWidth + rng.uniform(-0.5, 0.5)},
                             {s.ego.speed + rel, -side * rng.uniform(0.6, 1.0)},
                             ObstacleKind::vehicle});
      break;
    }
    case Scenario::workzone_taper: {
      s.ego.speed = lattice_speed(rng, 3.0, 6.0);
      const double side = rng.bernoulli(0.5) ? 1.0 : -1.0;
      if (rng.bernoulli(0.25)) {
        const double x0 = rng.uniform(14.0, 22.0);
        for (double y = -2.0; y <= 2.0; y += 1.0) {
          s.obstacles.push_back({{x0, y}, {0.0, 0.0}, ObstacleKind::cone});
        }
      } else {
        const double x0 = rng.uniform(8.0, 16.0);
        for (int i = 0; i <= 6; ++i) {
          const double t = i / 6.0;
          s.obstacles.push_back({{x0 + 12.0 * t, side * (6.0 - 5.0 * t)}, {0.0, 0.0}, ObstacleKind::cone});
        }
      }
      if (rng.bernoulli(0.5)) {
        s.obstacles.push_back({{rng.uniform(10.0, 24.0), side * 7.0}, {0.0, 0.0}, ObstacleKind::pedestrian});
      }
      break;
    }
  }
  s.origin_y = s.ego.position.y;
  s.policy = plan_policy(s);
  s.ego.accel = initial_accel(s.policy, s.ego.speed);
  return s;
}

MetaAction plan_policy(const Scene& s) {
  switch (s.scenario) {
    case Scenario::straight: return MetaAction::maintain_keep_lane;
    case Scenario::slow_lead: {
      const Obstacle& lead = s.obstacles.at(0);
      if (lead.velocity.x < 0.1) return MetaAction::stop;
      const double gap = lead.position.x - s.ego.position.x;
      return gap < safe_following_distance(s.ego.speed) ? MetaAction::decelerate_keep_lane
                                                        : MetaAction::maintain_keep_lane;
    }
    case Scenario::cut_in: {
      const Obstacle& cutter = s.obstacles.at(0);
      return cutter.position.x - s.ego.position.x >= 0.0 ? MetaAction::decelerate_keep_lane
                                                         : MetaAction::accelerate_keep_lane;
    }
    case Scenario::workzone_taper: {
      if (cones_block_lane(s)) return MetaAction::stop;
      return cone_side(s) < 0.0 ? MetaAction::maintain_nudge_left : MetaAction::maintain_nudge_right;
    }
  }
  return MetaAction::maintain_keep_lane;
}

std::vector<Scene> roll_forward(const Scene& scene, double dt, int steps) {
  if (!(dt > 0.0)) throw std::invalid_argument("roll_forward: dt must be positive");
  std::vector<Scene> out;
  out.reserve(static_cast<std::size_t>(std::max(steps, 0)));
  const double c = std::cos(scene.ego.heading);
  const double sn = std::sin(scene.ego.heading);
  for (int k = 1; k <= steps; ++k) {
    const double t = dt * k;
    Scene next = scene;
    next.time = scene.time + t;

    // Longitudinal: constant acceleration, clamped at standstill.
    double v0 = scene.ego.speed;
    double a = scene.ego.accel;
    double dist;
    double v;
    if (a < 0.0 && v0 + a * t <= 0.0) {
      dist = v0 * v0 / (-2.0 * a);
      v = 0.0;
      next.ego.accel = 0.0;
    } else {
      dist = v0 * t + 0.5 * a * t * t;
      v = v0 + a * t;
    }
    next.ego.speed = v;
    next.ego.position.x = scene.ego.position.x + c * dist;
    next.ego.position.y = scene.ego.position.y + sn * dist;

    // Lateral nudge, measured from the lateral origin along the lane normal.
    double dir = 0.0;
    if (scene.policy == MetaAction::maintain_nudge_left) dir = 1.0;
    if (scene.policy == MetaAction::maintain_nudge_right) dir = -1.0;
    if (dir != 0.0) {
      const double before = kNudgeOffset * smoothstep(scene.time / kNudgeSeconds);
      const double after = kNudgeOffset * smoothstep(next.time / kNudgeSeconds);
      next.ego.position.y += c * dir * (after - before);
      next.ego.position.x -= sn * dir * (after - before);
    }

    for (std::size_t i = 0; i < next.obstacles.size(); ++i) {
      const auto& o = scene.obstacles[i];
      next.obstacles[i].position = {o.position.x + o.velocity.x * t, o.position.y + o.velocity.y * t};
    }
    out.push_back(std::move(next));
  }
  return out;
}

Raster rasterize(const Scene& scene, int height, int width) {
  if (height <= 4 || width <= 2) throw std::invalid_argument("rasterize: raster too small");
  Raster r{height, width, std::vector<std::uint8_t>(static_cast<std::size_t>(height * width), 0)};
  const int ar = ego_anchor_row(height);
  const int ac = ego_anchor_col(width);
  const double c = std::cos(scene.ego.heading);
  const double sn = std::sin(scene.ego.heading);
  for (int row = 0; row < height; ++row) {
    for (int col = 0; col < width; ++col) {
      const double fwd = (ar - row) * kCellSize;
      const double left = (ac - col) * kCellSize;
      const double wx = scene.ego.position.x + fwd * c - left * sn;
      const double wy = scene.ego.position.y + fwd * sn + left * c;

      CellClass cls = CellClass::empty;
      for (const auto& lane : scene.lanes) {
        if (auto y = polyline_y(lane.centerline, wx)) {
          for (double edge : {*y - lane.width / 2, *y + lane.width / 2}) {
            const double d = wy - edge;
            if (d >= -0.5 * kCellSize && d < 0.5 * kCellSize) cls = CellClass::lane;
          }
        }
      }
      // Later kinds overwrite earlier ones: cone < pedestrian < vehicle < ego.
      int rank = 0;
      for (const auto& o : scene.obstacles) {
        const double dx = wx - o.position.x;
        const double dy = wy - o.position.y;
        switch (o.kind) {
          case ObstacleKind::cone:
            if (rank < 1 && in_box(dx, dy, 0.5, 0.5)) cls = CellClass::cone, rank = 1;
            break;
          case ObstacleKind::pedestrian:
            if (rank < 2 && in_box(dx, dy, 0.5, 0.5)) cls = CellClass::pedestrian, rank = 2;
            break;
          case ObstacleKind::vehicle:
            if (rank < 3 && in_box(dx, dy, 2.0, 1.0)) cls = CellClass::vehicle, rank = 3;
            break;
        }
      }
      if (in_box(fwd, left, 2.0, 1.0)) cls = CellClass::ego;
      r.cells[static_cast<std::size_t>(row * width + col)] = static_cast<std::uint8_t>(cls);
    }
  }
  return r;
}

std::string render_ego_state_text(const Scene& scene) {
  const double v = scene.ego.speed;
  std::string s = "front view image of the driving scene . command : move forward . velocity : ";
  s += fmt("%.1f", v);
  s += " . acceleration : 0.0 . historical trajectory : ";
  for (int k = 0; k < 3; ++k) {
    if (k) s += " , ";
    s += "( " + fmt("%.2f", -v * kStepSeconds * k) + " , 0.00 )";
  }
  s += " .";
  return s;
}

CotResult render_cot(const Scene& s, MetaAction outcome) {
  std::string t = "the ego vehicle is driving in the middle lane at " + fmt("%.1f", s.ego.speed) +
                  " meters per second . ";
  auto side_word = [](double dy) { return dy >= 0.0 ? std::string("left") : std::string("right"); };
  switch (s.scenario) {
    case Scenario::straight: {
      t += "the road ahead is clear . ";
      if (s.obstacles.empty()) {
        t += "there are no vehicles or pedestrians that would require braking . ";
      } else {
        const auto& o = s.obstacles[0];
        const double dx = o.position.x - s.ego.position.x;
        t += "there is a vehicle in the " + side_word(o.position.y - s.ego.position.y) + " lane , located " +
             fmt("%.1f", std::abs(dx)) + " meters " + (dx >= 0.0 ? "ahead of" : "behind") +
             " ego vehicle . it is driving forward in the same direction and does not affect the ego lane . ";
      }
      break;
    }
    case Scenario::slow_lead: {
      const auto& o = s.obstacles.at(0);
      const double dx = o.position.x - s.ego.position.x;
      const double dy = o.position.y - s.ego.position.y;
      t += "i should pay more attention to a vehicle , located " + fmt("%.1f", dx) +
           " meters ahead of ego vehicle and " + fmt("%.1f", std::abs(dy)) + " meters to the " + side_word(dy) +
           " . ";
      if (outcome == MetaAction::stop) {
        t += "its motion state is keep static , and it is stopped in the ego lane . ";
      } else {
        t += "it is driving forward in the same direction , and its motion state is moving slowly . ";
        t += outcome == MetaAction::decelerate_keep_lane
                 ? "the gap is smaller than the safe following distance . "
                 : "the gap is larger than the safe following distance . ";
      }
      break;
    }
    case Scenario::cut_in: {
      const auto& o = s.obstacles.at(0);
      const double dx = o.position.x - s.ego.position.x;
      const double dy = o.position.y - s.ego.position.y;
      t += "i should pay more attention to a vehicle , located " + fmt("%.1f", std::abs(dx)) + " meters " +
           (dx >= 0.0 ? "ahead of" : "behind") + " ego vehicle and " + fmt("%.1f", std::abs(dy)) +
           " meters to the " + side_word(dy) + " . it is merging into the ego lane from the " + side_word(dy) +
           " , and its motion state is " + (o.velocity.x > s.ego.speed ? "moving fastly" : "moving slowly") +
           " . ";
      t += outcome == MetaAction::accelerate_keep_lane ? "i can pull ahead of the merging vehicle . "
                                                       : "i need to open the gap to the merging vehicle . ";
      break;
    }
    case Scenario::workzone_taper: {
      double nearest = 1e9;
      for (const auto& o : s.obstacles) {
        if (o.kind == ObstacleKind::cone) nearest = std::min(nearest, o.position.x - s.ego.position.x);
      }
      t += "there is a work zone ahead . ";
      if (outcome == MetaAction::stop) {
        t += "a line of cones blocks the ego lane , located " + fmt("%.1f", nearest) +
             " meters ahead of ego vehicle . the lane is closed . ";
      } else {
        const double side = cone_side(s);
        t += "a line of cones on the " + side_word(side) +
             " side of the lane creates a taper that narrows the usable lane , starting " + fmt("%.1f", nearest) +
             " meters ahead of ego vehicle . ";
      }
      const bool worker = std::any_of(s.obstacles.begin(), s.obstacles.end(),
                                      [](const Obstacle& o) { return o.kind == ObstacleKind::pedestrian; });
      if (worker) t += "a worker is standing near the cones . ";
      if (outcome != MetaAction::stop) {
        t += "so i need to drive slightly to the " + side_word(-cone_side(s)) + " . ";
      }
      break;
    }
  }
  t += "based on the understanding of the driving scene and the navigation information , the ego should ";
  t += meta_action_clause(outcome);
  t += " .";
  return {t, outcome};
}

Sample make_sample(std::uint64_t seed, Scenario scenario, const RasterConfig& cfg) {
  const Scene scene = generate_scene(seed, scenario);
  const auto states = roll_forward(scene, kStepSeconds, kNumWaypoints);
  Sample out;
  out.seed = seed;
  out.scenario = scenario;
  out.frame_now = rasterize(scene, cfg.height, cfg.width);
  out.frame_future[0] = rasterize(states[0], cfg.height, cfg.width);
  out.frame_future[1] = rasterize(states[1], cfg.height, cfg.width);
  out.ego_state_text = render_ego_state_text(scene);
  const double c = std::cos(scene.ego.heading);
  const double sn = std::sin(scene.ego.heading);
  for (int k = 0; k < kNumWaypoints; ++k) {
    const double dx = states[static_cast<std::size_t>(k)].ego.position.x - scene.ego.position.x;
    const double dy = states[static_cast<std::size_t>(k)].ego.position.y - scene.ego.position.y;
    out.trajectory[static_cast<std::size_t>(k)] = {round_fixed(c * dx + sn * dy), round_fixed(-sn * dx + c * dy)};
  }
  auto cot = render_cot(scene, scene.policy);
  out.cot_text = std::move(cot.text);
  out.meta_action = cot.meta_action;
  return out;
}

}  // namespace onevl
