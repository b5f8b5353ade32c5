#include "onevl/metrics.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace onevl {

TrajectoryErrors trajectory_errors(const Trajectory& pred, const Trajectory& gt) {
  TrajectoryErrors e;
  double sum = 0.0;
  for (std::size_t k = 0; k < kNumWaypoints; ++k) {
    const double dx = pred[k].x - gt[k].x;
    const double dy = pred[k].y - gt[k].y;
    if (!std::isfinite(dx) || !std::isfinite(dy)) throw std::invalid_argument("trajectory_errors: non-finite input");
    e.per_waypoint[k] = std::hypot(dx, dy);
    sum += e.per_waypoint[k];
  }
  e.ade = sum / kNumWaypoints;
  e.fde = e.per_waypoint[kNumWaypoints - 1];
  return e;
}

TrajectoryMetrics aggregate_metrics(std::span<const std::optional<Trajectory>> preds, std::span<const Trajectory> gts) {
  if (preds.size() != gts.size()) throw std::invalid_argument("aggregate_metrics: size mismatch");
  TrajectoryMetrics m;
  m.n_samples = preds.size();
  if (preds.empty()) return m;
  std::array<double, kNumWaypoints> wp{};
  double ade_ok = 0.0;
  double fde_ok = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (!preds[i]) {
      ++m.n_decode_failures;
      for (auto& w : wp) w += kDecodeFailureError;
      m.ade += kDecodeFailureError;
      m.fde += kDecodeFailureError;
      continue;
    }
    const auto e = trajectory_errors(*preds[i], gts[i]);
    for (std::size_t k = 0; k < kNumWaypoints; ++k) wp[k] += e.per_waypoint[k];
    m.ade += e.ade;
    m.fde += e.fde;
    ade_ok += e.ade;
    fde_ok += e.fde;
  }
  const double n = static_cast<double>(preds.size());
  m.ade /= n;
  m.fde /= n;
  for (int h = 1; h <= 4; ++h) {
    m.l2_at[h] = wp[static_cast<std::size_t>(2 * h - 1)] / n;
    m.l2_avg_horizons += m.l2_at[h] / 4.0;
  }
  const std::size_t ok = m.n_samples - m.n_decode_failures;
  if (ok > 0) {
    m.ade_excluding_failures = ade_ok / static_cast<double>(ok);
    m.fde_excluding_failures = fde_ok / static_cast<double>(ok);
  }
  return m;
}

std::optional<MetaAction> extract_meta_action(std::string_view text) {
  static constexpr std::string_view kLead = "the ego should ";
  const auto pos = text.rfind(kLead);
  if (pos == std::string_view::npos) return std::nullopt;
  std::string_view rest = text.substr(pos + kLead.size());
  const auto end = rest.find(" .");
  if (end == std::string_view::npos) return std::nullopt;
  rest = rest.substr(0, end);
  for (int a = 0; a < kNumMetaActions; ++a) {
    const auto action = static_cast<MetaAction>(a);
    if (rest == meta_action_clause(action)) return action;
  }
  return std::nullopt;
}

double meta_action_accuracy(std::span<const std::optional<MetaAction>> preds, std::span<const MetaAction> gts) {
  if (preds.size() != gts.size()) throw std::invalid_argument("meta_action_accuracy: size mismatch");
  if (preds.empty()) return 0.0;
  std::size_t hit = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) hit += preds[i] && *preds[i] == gts[i];
  return static_cast<double>(hit) / static_cast<double>(preds.size());
}

}  // namespace onevl
