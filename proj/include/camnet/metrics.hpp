#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "camnet/errors.hpp"

namespace camnet {

inline constexpr double kMissThresholdM = 2.0;

using Point2 = std::array<double, 2>;
using Trajectory = std::vector<Point2>;  // T x (x, y)

// Everything needed to score one focal agent: k candidate futures plus the
// ground truth and its validity mask (ragged futures are allowed).
struct PredictionSet {
  std::vector<Trajectory> trajectories;
  Trajectory ground_truth;
  std::vector<bool> valid;
};

struct MetricsReport {
  int k = 1;
  double avgmin_ade = 0.0;
  double avgmin_fde = 0.0;
  double avg_mr = 0.0;
  size_t n_agents = 0;

  nlohmann::json to_json() const {
    return {{"k", k},
            {"avgmin_ade", avgmin_ade},
            {"avgmin_fde", avgmin_fde},
            {"avg_mr", avg_mr},
            {"n_agents", n_agents}};
  }
};

namespace detail {

inline void check_shapes(const Trajectory& pred, const Trajectory& gt,
                         const std::vector<bool>& valid) {
  if (pred.size() != gt.size() || valid.size() != gt.size())
    throw_error(ErrorKind::ShapeMismatch,
                "metrics: pred/gt/valid lengths differ (" + std::to_string(pred.size()) +
                    "/" + std::to_string(gt.size()) + "/" + std::to_string(valid.size()) + ")");
}

inline int last_valid_step(const std::vector<bool>& valid) {
  for (int i = (int)valid.size() - 1; i >= 0; --i)
    if (valid[i]) return i;
  throw_error(ErrorKind::NoValidSteps, "metrics: no valid ground-truth steps");
}

}  // namespace detail

// Eq. 1: mean l2 displacement over valid future steps.
inline double ade(const Trajectory& pred, const Trajectory& gt,
                  const std::vector<bool>& valid) {
  detail::check_shapes(pred, gt, valid);
  double sum = 0.0;
  int n = 0;
  for (size_t i = 0; i < gt.size(); ++i) {
    if (!valid[i]) continue;
    sum += std::hypot(pred[i][0] - gt[i][0], pred[i][1] - gt[i][1]);
    ++n;
  }
  if (n == 0) throw_error(ErrorKind::NoValidSteps, "ade: no valid ground-truth steps");
  return sum / (double)n;
}

// Eq. 2: l2 displacement at the last valid step.
inline double fde(const Trajectory& pred, const Trajectory& gt,
                  const std::vector<bool>& valid) {
  detail::check_shapes(pred, gt, valid);
  int i = detail::last_valid_step(valid);
  return std::hypot(pred[i][0] - gt[i][0], pred[i][1] - gt[i][1]);
}

// Miss iff the final displacement strictly exceeds 2.0 m (the boundary
// counts as a hit).
inline bool miss(const Trajectory& pred, const Trajectory& gt,
                 const std::vector<bool>& valid) {
  return fde(pred, gt, valid) > kMissThresholdM;
}

// AvgMin_k protocol: per agent, the best of the first k modes by ADE and by
// FDE independently; MR follows the FDE-minimizing mode. Averages over agents.
inline MetricsReport evaluate(const std::vector<PredictionSet>& preds, int k) {
  if (k < 1) throw_error(ErrorKind::Config, "evaluate: k must be >= 1");
  if (preds.empty()) throw_error(ErrorKind::EmptyDataset, "evaluate: no prediction sets");
  MetricsReport rep;
  rep.k = k;
  rep.n_agents = preds.size();
  for (const PredictionSet& p : preds) {
    if ((int)p.trajectories.size() < k)
      throw_error(ErrorKind::InsufficientModes,
                  "evaluate: set has " + std::to_string(p.trajectories.size()) +
                      " modes, k=" + std::to_string(k));
    double best_ade = 0.0, best_fde = 0.0;
    bool best_miss = false;
    for (int m = 0; m < k; ++m) {
      double a = ade(p.trajectories[m], p.ground_truth, p.valid);
      double f = fde(p.trajectories[m], p.ground_truth, p.valid);
      if (m == 0 || a < best_ade) best_ade = a;
      if (m == 0 || f < best_fde) {
        best_fde = f;
        best_miss = f > kMissThresholdM;
      }
    }
    rep.avgmin_ade += best_ade;
    rep.avgmin_fde += best_fde;
    rep.avg_mr += best_miss ? 1.0 : 0.0;
  }
  rep.avgmin_ade /= (double)preds.size();
  rep.avgmin_fde /= (double)preds.size();
  rep.avg_mr /= (double)preds.size();
  return rep;
}

}  // namespace camnet
