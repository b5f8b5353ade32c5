#pragma once

#include <array>
#include <map>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "onevl/world.hpp"

namespace onevl {

/// Per-sample error charged to a prediction whose answer did not parse.
inline constexpr double kDecodeFailureError = 64.0;

struct TrajectoryErrors {
  std::array<double, kNumWaypoints> per_waypoint{};  // Euclidean, metres
  double ade = 0.0;
  double fde = 0.0;
};

/// Throws std::invalid_argument on non-finite input.
TrajectoryErrors trajectory_errors(const Trajectory& pred, const Trajectory& gt);

struct TrajectoryMetrics {
  double ade = 0.0;  // failures charged kDecodeFailureError
  double fde = 0.0;
  std::map<int, double> l2_at;        // horizon in seconds (1..4) -> metres
  double l2_avg_horizons = 0.0;       // mean of l2_at over the four horizons
  double ade_excluding_failures = 0.0;
  double fde_excluding_failures = 0.0;
  std::size_t n_samples = 0;
  std::size_t n_decode_failures = 0;
  friend bool operator==(const TrajectoryMetrics&, const TrajectoryMetrics&) = default;
};

/// `preds[i]` empty means a decode failure.
TrajectoryMetrics aggregate_metrics(std::span<const std::optional<Trajectory>> preds, std::span<const Trajectory> gts);

/// Meta-action of the final "the ego should ..." clause; nullopt is the
/// unparsed bucket.
std::optional<MetaAction> extract_meta_action(std::string_view cot_text);
/// Unparsed predictions count as wrong.
double meta_action_accuracy(std::span<const std::optional<MetaAction>> preds, std::span<const MetaAction> gts);

}  // namespace onevl
