#pragma once

#include <array>
#include <iosfwd>
#include <vector>

#include "chebyodo/data.hpp"
#include "chebyodo/training.hpp"

namespace chebyodo {

// Everything a trajectory evaluation produces. pred_xy and gt_xy are paired
// point-for-point at the window cadence: entry k is the integrated position
// and the ground-truth position at the center sample of window k.
struct TrajectoryReport {
  std::vector<double> t;                       // seconds at window centers
  std::vector<std::array<double, 2>> pred_xy;  // m
  std::vector<std::array<double, 2>> gt_xy;    // m
  double ate = 0.0;           // m, RMSE of per-point distances
  double rte = 0.0;           // m, RMSE of relative displacement errors
  double pde = 0.0;           // final drift / ground-truth path length
  double traj_length = 0.0;   // m, ground-truth path length
  double rte_interval_s = 0;  // the interval the RTE refers to
  bool rte_scaled = false;    // true when the short-trajectory rule applied
  std::vector<double> cdf_samples;  // per-point errors, sorted ascending
};

// Cumulative sum p_{k+1} = p_k + v_k * dt starting at origin; returns
// v.size() + 1 points. dt must be positive.
std::vector<std::array<double, 2>> integrate_velocity(
    const std::vector<std::array<double, 2>>& v, double dt,
    const std::array<double, 2>& origin);

// RMSE of per-point Euclidean distances. No alignment transform is applied;
// both trajectories are anchored at the ground-truth origin by construction.
// Length mismatch -> ContractError.
double ate(const std::vector<std::array<double, 2>>& pred_xy,
           const std::vector<std::array<double, 2>>& gt_xy);

// RMSE over every start index of the relative-displacement error across a
// fixed time interval (n = round(interval_s / dt) points apart). Trajectories
// shorter than the interval use the largest available one and scale the
// result by interval_s / available; fewer than two points yield 0.
double rte(const std::vector<std::array<double, 2>>& pred_xy,
           const std::vector<std::array<double, 2>>& gt_xy, double interval_s, double dt);

// Final-position drift divided by the total ground-truth path length.
// A zero-length ground-truth path -> ContractError.
double pde(const std::vector<std::array<double, 2>>& pred_xy,
           const std::vector<std::array<double, 2>>& gt_xy);

// Core evaluation: pairs the supplied per-window velocity predictions with
// ground truth at window centers, integrates from the ground-truth anchor,
// and fills in every metric. `predictions` must have one entry per window of
// `batch`, which must have been cut from `seq`.
TrajectoryReport evaluate_windows(const WindowBatch& batch,
                                  const std::vector<std::array<double, 2>>& predictions,
                                  const ImuSequence& seq, double rte_interval_s = 60.0);

// Full pipeline: window the sequence at `stride`, run the model on every
// window, and score the integrated trajectory. Deterministic.
TrajectoryReport evaluate_sequence(const Model& model, const ImuSequence& seq, int stride,
                                   double rte_interval_s = 60.0);

// CSV writers for the report bundle.
void write_report_metrics(const TrajectoryReport& report, std::ostream& out);
void write_report_trajectory(const TrajectoryReport& report, std::ostream& out);
void write_report_cdf(const TrajectoryReport& report, std::ostream& out);

}  // namespace chebyodo
