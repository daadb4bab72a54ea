#include "chebyodo/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <string>

#include "chebyodo/errors.hpp"

namespace chebyodo {

namespace {

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

double distance(const std::array<double, 2>& a, const std::array<double, 2>& b) {
  return std::hypot(a[0] - b[0], a[1] - b[1]);
}

double path_length(const std::vector<std::array<double, 2>>& xy) {
  double total = 0.0;
  for (std::size_t i = 1; i < xy.size(); ++i) total += distance(xy[i], xy[i - 1]);
  return total;
}

void require_paired(const std::vector<std::array<double, 2>>& pred_xy,
                    const std::vector<std::array<double, 2>>& gt_xy, const char* op) {
  if (pred_xy.size() != gt_xy.size()) {
    throw ContractError(std::string(op) + ": trajectories have " +
                        std::to_string(pred_xy.size()) + " vs " +
                        std::to_string(gt_xy.size()) + " points");
  }
}

}  // namespace

std::vector<std::array<double, 2>> integrate_velocity(
    const std::vector<std::array<double, 2>>& v, double dt,
    const std::array<double, 2>& origin) {
  if (dt <= 0) throw ContractError("integrate_velocity: dt must be positive");
  std::vector<std::array<double, 2>> xy;
  xy.reserve(v.size() + 1);
  xy.push_back(origin);
  for (const auto& vk : v) {
    xy.push_back({xy.back()[0] + vk[0] * dt, xy.back()[1] + vk[1] * dt});
  }
  return xy;
}

double ate(const std::vector<std::array<double, 2>>& pred_xy,
           const std::vector<std::array<double, 2>>& gt_xy) {
  require_paired(pred_xy, gt_xy, "ate");
  if (pred_xy.empty()) throw ContractError("ate: empty trajectories");
  double sum_sq = 0.0;
  for (std::size_t i = 0; i < pred_xy.size(); ++i) {
    const double d = distance(pred_xy[i], gt_xy[i]);
    sum_sq += d * d;
  }
  return std::sqrt(sum_sq / static_cast<double>(pred_xy.size()));
}

double rte(const std::vector<std::array<double, 2>>& pred_xy,
           const std::vector<std::array<double, 2>>& gt_xy, double interval_s, double dt) {
  require_paired(pred_xy, gt_xy, "rte");
  if (interval_s <= 0 || dt <= 0) {
    throw ContractError("rte: interval and dt must be positive");
  }
  const int points = static_cast<int>(pred_xy.size());
  if (points < 2) return 0.0;

  int n = static_cast<int>(std::llround(interval_s / dt));
  n = std::max(n, 1);
  double scale = 1.0;
  if (n > points - 1) {
    // Short trajectory: use the largest available interval, scaled to the
    // requested one.
    scale = interval_s / (static_cast<double>(points - 1) * dt);
    n = points - 1;
  }

  double sum_sq = 0.0;
  int count = 0;
  for (int i = 0; i + n < points; ++i) {
    const double ex =
        (pred_xy[i + n][0] - pred_xy[i][0]) - (gt_xy[i + n][0] - gt_xy[i][0]);
    const double ey =
        (pred_xy[i + n][1] - pred_xy[i][1]) - (gt_xy[i + n][1] - gt_xy[i][1]);
    sum_sq += ex * ex + ey * ey;
    ++count;
  }
  return scale * std::sqrt(sum_sq / count);
}

double pde(const std::vector<std::array<double, 2>>& pred_xy,
           const std::vector<std::array<double, 2>>& gt_xy) {
  require_paired(pred_xy, gt_xy, "pde");
  if (pred_xy.empty()) throw ContractError("pde: empty trajectories");
  const double length = path_length(gt_xy);
  if (length <= 0.0) {
    throw ContractError("pde: ground-truth path length is zero");
  }
  return distance(pred_xy.back(), gt_xy.back()) / length;
}

TrajectoryReport evaluate_windows(const WindowBatch& batch,
                                  const std::vector<std::array<double, 2>>& predictions,
                                  const ImuSequence& seq, double rte_interval_s) {
  const int count = batch.count();
  if (count == 0) throw ContractError("evaluate_windows: no windows");
  if (static_cast<int>(predictions.size()) != count) {
    throw ContractError("evaluate_windows: " + std::to_string(predictions.size()) +
                        " predictions for " + std::to_string(count) + " windows");
  }
  const int stride = count > 1 ? batch.window_starts[1] - batch.window_starts[0] : 1;
  const double dt = stride / seq.sample_rate_hz;
  const int half_window = (batch.window_size - 1) / 2;

  TrajectoryReport report;
  report.t.reserve(count);
  report.gt_xy.reserve(count);
  for (int k = 0; k < count; ++k) {
    const int center = batch.window_starts[k] + half_window;
    report.t.push_back(seq.t[center]);
    report.gt_xy.push_back({seq.gt_pos[center][0], seq.gt_pos[center][1]});
  }

  // Integrate from the ground-truth anchor; the k-th integrated point pairs
  // with the k-th window center, so the final cumulative point (which has no
  // center to pair with) is dropped.
  auto integrated = integrate_velocity(predictions, dt, report.gt_xy.front());
  integrated.pop_back();
  report.pred_xy = std::move(integrated);

  report.ate = ate(report.pred_xy, report.gt_xy);
  report.rte = rte(report.pred_xy, report.gt_xy, rte_interval_s, dt);
  report.rte_interval_s = rte_interval_s;
  report.rte_scaled =
      static_cast<double>(count - 1) * dt < rte_interval_s && count >= 2;
  report.traj_length = path_length(report.gt_xy);
  report.pde = report.traj_length > 0.0 ? pde(report.pred_xy, report.gt_xy) : 0.0;

  report.cdf_samples.reserve(count);
  for (int k = 0; k < count; ++k) {
    report.cdf_samples.push_back(distance(report.pred_xy[k], report.gt_xy[k]));
  }
  std::sort(report.cdf_samples.begin(), report.cdf_samples.end());
  return report;
}

TrajectoryReport evaluate_sequence(const Model& model, const ImuSequence& seq, int stride,
                                   double rte_interval_s) {
  const WindowBatch batch = make_windows(seq, model.config.window_size, stride);
  std::vector<std::array<double, 2>> predictions;
  predictions.reserve(batch.count());
  for (int k = 0; k < batch.count(); ++k) {
    predictions.push_back(predict_window(model, window_input(batch, k)));
  }
  return evaluate_windows(batch, predictions, seq, rte_interval_s);
}

void write_report_metrics(const TrajectoryReport& report, std::ostream& out) {
  out << "ate,rte,pde,traj_len_m\n";
  out << format_double(report.ate) << ',' << format_double(report.rte) << ','
      << format_double(report.pde) << ',' << format_double(report.traj_length) << '\n';
}

void write_report_trajectory(const TrajectoryReport& report, std::ostream& out) {
  out << "t,pred_x,pred_y,gt_x,gt_y\n";
  for (std::size_t k = 0; k < report.pred_xy.size(); ++k) {
    out << format_double(report.t[k]) << ',' << format_double(report.pred_xy[k][0]) << ','
        << format_double(report.pred_xy[k][1]) << ',' << format_double(report.gt_xy[k][0])
        << ',' << format_double(report.gt_xy[k][1]) << '\n';
  }
}

void write_report_cdf(const TrajectoryReport& report, std::ostream& out) {
  out << "error_m,fraction\n";
  const double n = static_cast<double>(report.cdf_samples.size());
  for (std::size_t i = 0; i < report.cdf_samples.size(); ++i) {
    out << format_double(report.cdf_samples[i]) << ','
        << format_double(static_cast<double>(i + 1) / n) << '\n';
  }
}

}  // namespace chebyodo
