#ifndef UNITE_EVALUATION_HPP
#define UNITE_EVALUATION_HPP

#include <cmath>
#include <functional>
#include <map>
#include <span>
#include <vector>

#include "unite/core.hpp"
#include "unite/estimators.hpp"
#include "unite/record_store.hpp"

namespace unite {

/// A fitted estimator bound to its data: maps a trajectory to per-segment
/// predictive outputs aligned with its traversals.
using Estimator = std::function<std::vector<EstimatorOutput>(const Trajectory&)>;

struct MetricsReport {
  double nll = 0.0;   // per-trajectory mean
  double mae = 0.0;   // seconds
  double mape = 0.0;  // percent
  size_t n_trajectories = 0;
};

/// Sum of sNLL over traversals with an observed speed.
inline double trajectory_nll(std::span<const EstimatorOutput> estimates,
                             const Trajectory& trajectory) {
  if (estimates.size() != trajectory.traversals.size()) {
    throw DataError("trajectory_nll: estimates/traversals length mismatch");
  }
  double total = 0.0;
  for (size_t i = 0; i < estimates.size(); ++i) {
    const auto& tr = trajectory.traversals[i];
    if (tr.speed) total += estimates[i].snll(*tr.speed);
  }
  return total;
}

inline double point_travel_time(const RoadNetwork& net, const Route& route,
                                std::span<const double> expected_speeds) {
  if (route.size() != expected_speeds.size()) {
    throw DataError("point_travel_time: length mismatch");
  }
  double total = 0.0;
  for (size_t i = 0; i < route.size(); ++i) {
    if (!(expected_speeds[i] > 0.0)) {
      throw NumericError("point_travel_time: nonpositive expected speed");
    }
    total += net.segment(route[i]).length / expected_speeds[i];
  }
  return total;
}

inline std::pair<double, double> mae_mape(std::span<const double> estimates,
                                          std::span<const double> truths) {
  if (estimates.size() != truths.size()) throw DataError("mae_mape: length mismatch");
  if (estimates.empty()) return {0.0, 0.0};
  double ae = 0.0, ape = 0.0;
  for (size_t i = 0; i < estimates.size(); ++i) {
    double err = std::fabs(estimates[i] - truths[i]);
    ae += err;
    ape += err / truths[i];
  }
  double n = static_cast<double>(estimates.size());
  return {ae / n, 100.0 * ape / n};
}

/// NLL plus point-estimation metrics over a dataset. Travel time truth and
/// estimate are both restricted to traversals with an observed speed, so
/// trajectories with partial observations still contribute.
inline MetricsReport evaluate_dataset(const Estimator& estimator, const RoadNetwork& net,
                                      const std::vector<Trajectory>& data) {
  MetricsReport report;
  std::vector<double> est_times, true_times;
  double nll_total = 0.0;
  for (const auto& tj : data) {
    auto outputs = estimator(tj);
    nll_total += trajectory_nll(outputs, tj);
    double est = 0.0, truth = 0.0;
    bool any = false;
    for (size_t i = 0; i < tj.traversals.size(); ++i) {
      const auto& tr = tj.traversals[i];
      if (!tr.speed) continue;
      double len = net.segment(tr.segment).length;
      if (!(outputs[i].expected_speed > 0.0)) {
        throw NumericError("evaluate_dataset: nonpositive expected speed");
      }
      est += len / outputs[i].expected_speed;
      truth += len / *tr.speed;
      any = true;
    }
    if (any) {
      est_times.push_back(est);
      true_times.push_back(truth);
    }
  }
  report.n_trajectories = data.size();
  report.nll = data.empty() ? 0.0 : nll_total / static_cast<double>(data.size());
  auto [mae, mape] = mae_mape(est_times, true_times);
  report.mae = mae;
  report.mape = mape;
  return report;
}

struct RobustnessBucket {
  size_t n = 0;
  double mean_snll = 0.0;
};

/// Mean sNLL per ground-truth record count. Traversals are bucketed by the
/// number of historical records available at their recorded arrival under
/// the least restrictive selection (c=0, the given delta), excluding the
/// trajectory's own records. Traversals lacking speed or arrival are
/// skipped; empty buckets are absent.
inline std::map<size_t, RobustnessBucket> robustness_curve(
    const Estimator& estimator, const std::vector<Trajectory>& test,
    const RecordStore& store, double delta) {
  std::map<size_t, double> sums;
  std::map<size_t, size_t> counts;
  for (const auto& tj : test) {
    auto outputs = estimator(tj);
    for (size_t i = 0; i < tj.traversals.size(); ++i) {
      const auto& tr = tj.traversals[i];
      if (!tr.speed || !tr.arrival) continue;
      size_t bucket = store.record_count_at_truth(tj, i, delta);
      sums[bucket] += outputs[i].snll(*tr.speed);
      counts[bucket] += 1;
    }
  }
  std::map<size_t, RobustnessBucket> out;
  for (const auto& [bucket, n] : counts) {
    out[bucket] = RobustnessBucket{n, sums.at(bucket) / static_cast<double>(n)};
  }
  return out;
}

/// Mean sNLL over traversals whose ground-truth record count falls in
/// [min_records, max_records]. Convenience aggregation over the curve.
inline RobustnessBucket aggregate_buckets(const std::map<size_t, RobustnessBucket>& curve,
                                          size_t min_records, size_t max_records) {
  RobustnessBucket agg;
  double sum = 0.0;
  for (const auto& [bucket, b] : curve) {
    if (bucket < min_records || bucket > max_records) continue;
    sum += b.mean_snll * static_cast<double>(b.n);
    agg.n += b.n;
  }
  if (agg.n > 0) agg.mean_snll = sum / static_cast<double>(agg.n);
  return agg;
}

// ---------------------------------------------------------------------------
// Sweeps

struct SelectionCell {
  int c;
  double delta_minutes;
  double nll;
};

/// Validation NLL over the (c, delta) grid. `run` evaluates one
/// configuration and returns its dataset NLL.
inline std::vector<SelectionCell> sweep_record_selection(
    const std::vector<int>& c_values, const std::vector<double>& delta_minutes,
    const std::function<double(const SelectionParams&)>& run) {
  if (c_values.empty() || delta_minutes.empty()) {
    throw DataError("sweep_record_selection: empty grid");
  }
  std::vector<SelectionCell> cells;
  for (int c : c_values) {
    for (double dm : delta_minutes) {
      SelectionParams sel(c, dm * 60.0);
      cells.push_back(SelectionCell{c, dm, run(sel)});
    }
  }
  return cells;
}

struct DataEfficiencyCell {
  double fraction;
  double nll;
};

/// Trains on leading fractions of the training trajectories (total
/// iteration count held constant by the runner) and reports test NLL.
inline std::vector<DataEfficiencyCell> sweep_data_efficiency(
    const std::vector<double>& fractions, const std::function<double(double)>& run) {
  if (fractions.empty()) throw DataError("sweep_data_efficiency: empty grid");
  std::vector<DataEfficiencyCell> cells;
  for (double f : fractions) cells.push_back(DataEfficiencyCell{f, run(f)});
  return cells;
}

}  // namespace unite

#endif  // UNITE_EVALUATION_HPP
