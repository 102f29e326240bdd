#pragma once

#include <string>
#include <vector>

#include "camnet/errors.hpp"
#include "camnet/log.hpp"
#include "camnet/metrics.hpp"
#include "camnet/scenario.hpp"

namespace camnet::baselines {

struct CvmConfig {
  double dt = kStepSeconds;
  int horizon = kFutureSteps;

  void validate() const {
    if (!(dt > 0.0)) throw_error(ErrorKind::Config, "cvm: dt must be positive");
    if (horizon < 1) throw_error(ErrorKind::Config, "cvm: horizon must be >= 1");
  }
};

// Constant Velocity Model: the velocity implied by the last two observed
// positions, held for the whole horizon. The window must end with two valid
// consecutive steps; earlier gaps are irrelevant.
inline Trajectory cvm_predict(const Trajectory& observed, const std::vector<bool>& valid,
                              const CvmConfig& cfg = {}) {
  cfg.validate();
  if (observed.size() != valid.size())
    throw_error(ErrorKind::ShapeMismatch, "cvm: observed/valid lengths differ");
  size_t n = observed.size();
  if (n < 2 || !valid[n - 1] || !valid[n - 2])
    throw_error(ErrorKind::InsufficientObservation,
                "cvm: need two valid steps at the end of the observation window");
  const Point2& last = observed[n - 1];
  double vx = (last[0] - observed[n - 2][0]) / cfg.dt;
  double vy = (last[1] - observed[n - 2][1]) / cfg.dt;
  Trajectory out;
  out.reserve(cfg.horizon);
  for (int i = 1; i <= cfg.horizon; ++i)
    out.push_back({last[0] + (double)i * cfg.dt * vx, last[1] + (double)i * cfg.dt * vy});
  return out;
}

// Single-mode PredictionSet per focal agent, scored exactly like the model's
// output. Focal agents without the trailing pair are warned about and skipped.
inline std::vector<PredictionSet> cvm_predictions(const Scenario& s, const CvmConfig& cfg = {}) {
  std::vector<PredictionSet> out;
  for (const AgentTrack& a : s.agents) {
    if (!a.focal) continue;
    Trajectory observed;
    std::vector<bool> valid;
    for (int t = 0; t < kObsSteps; ++t) {
      observed.push_back({a.states[t].x, a.states[t].y});
      valid.push_back(a.valid[t]);
    }
    PredictionSet p;
    try {
      p.trajectories.push_back(cvm_predict(observed, valid, cfg));
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::InsufficientObservation) throw;
      log::warn("scenario " + s.id + ": focal agent " + std::to_string(a.station_id) +
                " lacks two trailing observed steps; skipped");
      continue;
    }
    for (int t = kObsSteps; t < kScenarioSteps; ++t) {
      p.ground_truth.push_back({a.states[t].x, a.states[t].y});
      p.valid.push_back(a.valid[t]);
    }
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace camnet::baselines
