#ifndef UNITE_ESTIMATORS_HPP
#define UNITE_ESTIMATORS_HPP

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "unite/conjugate.hpp"
#include "unite/core.hpp"
#include "unite/neural.hpp"
#include "unite/record_store.hpp"

namespace unite {

struct AggConfig {
  int k = 1;  // minimal record count before the speed-limit fallback
  SelectionParams selection;
  double mean_factor = 0.79;
  double std_factor = 0.07;

  AggConfig() = default;
  AggConfig(int k_, SelectionParams sel) : k(k_), selection(std::move(sel)) {
    if (k < 1) throw DataError("AggConfig: k must be >= 1");
  }
};

// Sigma floor for the record branch, keeping the NLL finite when all
// selected records are identical.
constexpr double kAggSigmaFloor = 1e-3;

/// Per-segment predictive: Gaussian for AGG, Student-t for the
/// model-based estimators. expected_speed feeds point travel time and
/// arrival propagation.
struct EstimatorOutput {
  enum class Kind { gaussian, student_t };
  Kind kind = Kind::student_t;
  StudentT t;
  double gauss_mu = 0.0;
  double gauss_sigma = 1.0;
  double expected_speed = 0.0;

  double snll(double speed) const {
    if (kind == Kind::gaussian) return -gaussian_logpdf(speed, gauss_mu, gauss_sigma);
    return -studentt_logpdf(t, speed);
  }
};

/// Stored limit when present; otherwise the category heuristic
/// (130 km/h motorway, 80 trunk, 50 in-city, 80 default), in m/s.
inline double speed_limit_heuristic(const Segment& seg) {
  if (seg.speed_limit) return *seg.speed_limit;
  double kmh;
  if (seg.category == RoadCategory::motorway) {
    kmh = 130.0;
  } else if (seg.category == RoadCategory::trunk) {
    kmh = 80.0;
  } else if (seg.in_city_source || seg.in_city_target) {
    kmh = 50.0;
  } else {
    kmh = 80.0;
  }
  return kmh * kKmhToMps;
}

inline EstimatorOutput agg_estimate(const RecordStore& store, const RoadNetwork& net,
                                    const Route& route, size_t i, TimeOfWeek tau,
                                    const AggConfig& cfg) {
  std::vector<double> records = store.select_records(route, i, tau, cfg.selection);
  EstimatorOutput out;
  out.kind = EstimatorOutput::Kind::gaussian;
  if (records.size() >= static_cast<size_t>(cfg.k)) {
    SampleStats s = sample_stats(records);
    out.gauss_mu = s.mean;
    if (s.m > 1) {
      out.gauss_sigma = std::max(std::sqrt(s.var_biased), kAggSigmaFloor);
    } else {
      out.gauss_sigma = cfg.std_factor * s.mean;
    }
  } else {
    out.gauss_mu = cfg.mean_factor * speed_limit_heuristic(net.segment(route[i]));
    out.gauss_sigma = cfg.std_factor * out.gauss_mu;
  }
  out.expected_speed = out.gauss_mu;
  return out;
}

namespace detail {

// Shared forward pass for the model-based estimators. `store == nullptr`
// means empty evidence (the GRU baseline); otherwise records are selected
// at each step's (recorded or propagated) arrival time.
inline std::vector<EstimatorOutput> model_estimate(
    const ModelParams& model, const RoadNetwork& net, const Route& route,
    const std::vector<std::optional<TimeOfWeek>>& arrivals, const RecordStore* store,
    const SelectionParams& selection, RouteForward* fwd_out = nullptr,
    std::vector<SampleStats>* stats_out = nullptr) {
  PosteriorHook hook;
  if (store == nullptr) {
    hook = prior_only_hook;
    if (stats_out) stats_out->assign(route.size(), SampleStats{});
  } else {
    if (stats_out) stats_out->clear();
    hook = [&](size_t i, const NormalGamma& prior, TimeOfWeek tau) {
      SampleStats s = sample_stats(store->select_records(route, i, tau, selection));
      if (stats_out) stats_out->push_back(s);
      return posterior_update(prior, s);
    };
  }
  RouteForward fwd = forward_route(net, route, arrivals, model, hook);
  std::vector<EstimatorOutput> out(route.size());
  for (size_t i = 0; i < route.size(); ++i) {
    out[i].kind = EstimatorOutput::Kind::student_t;
    out[i].t = posterior_predictive(fwd.steps[i].post);
    // same floor the forward pass applies to arrival propagation, so the
    // point travel time stays defined for an undertrained prior
    out[i].expected_speed = std::max(fwd.steps[i].post.mu, kMinPropagationSpeed);
  }
  if (fwd_out) *fwd_out = std::move(fwd);
  return out;
}

}  // namespace detail

inline std::vector<EstimatorOutput> gru_estimate(
    const ModelParams& model, const RoadNetwork& net, const Route& route,
    const std::vector<std::optional<TimeOfWeek>>& arrivals) {
  return detail::model_estimate(model, net, route, arrivals, nullptr, SelectionParams{});
}

inline std::vector<EstimatorOutput> unite_dis_estimate(
    const ModelParams& model, const RecordStore& store, const RoadNetwork& net,
    const Route& route, const std::vector<std::optional<TimeOfWeek>>& arrivals,
    const SelectionParams& selection) {
  return detail::model_estimate(model, net, route, arrivals, &store, selection);
}

/// Identical computation to unite_dis_estimate; the distinction is that the
/// supplied model was trained with empty evidence (a plain GRU) and is
/// reused one-to-one.
inline std::vector<EstimatorOutput> unite_gen_estimate(
    const ModelParams& gru_model, const RecordStore& store, const RoadNetwork& net,
    const Route& route, const std::vector<std::optional<TimeOfWeek>>& arrivals,
    const SelectionParams& selection) {
  return detail::model_estimate(gru_model, net, route, arrivals, &store, selection);
}

// ---------------------------------------------------------------------------
// Training

enum class ModelKind { gru, unite_dis };

struct TrainConfig {
  double lr = 0.001;
  int epochs = 10;
  int batch_size = 128;
  uint64_t seed = 0;
  double a = 1.0;
  double epsilon = 1e-6;
  SelectionParams selection;  // evidence selection for unite_dis
};

struct TrainHistory {
  std::vector<double> train_nll;  // per-trajectory mean, training objective
  std::vector<double> val_nll;
  int best_epoch = -1;
};

namespace detail {

inline std::vector<std::optional<TimeOfWeek>> arrivals_of(const Trajectory& tj) {
  std::vector<std::optional<TimeOfWeek>> a;
  a.reserve(tj.traversals.size());
  for (const auto& tr : tj.traversals) a.push_back(tr.arrival);
  return a;
}

/// NLL of one trajectory plus (optionally) its parameter gradient,
/// weighted by `weight`. Leave-one-out evidence is encoded in `selection`.
inline double trajectory_loss(const ModelParams& model, const RoadNetwork& net,
                              const Trajectory& tj, const RecordStore* store,
                              const SelectionParams& selection,
                              std::vector<double>* grad, double weight) {
  Route route = tj.route();
  RouteForward fwd;
  std::vector<SampleStats> stats;
  model_estimate(model, net, route, arrivals_of(tj), store, selection, &fwd, &stats);

  double nll = 0.0;
  std::vector<NormalGammaGrad> post_grads(route.size());
  for (size_t i = 0; i < route.size(); ++i) {
    const auto& tr = tj.traversals[i];
    if (!tr.speed) continue;
    nll += snll(fwd.steps[i].post, *tr.speed);
    if (grad) {
      NormalGammaGrad g = snll_grad_wrt_posterior(fwd.steps[i].post, *tr.speed);
      post_grads[i].mu = g.mu * weight;
      post_grads[i].kappa = g.kappa * weight;
      post_grads[i].alpha = g.alpha * weight;
      post_grads[i].beta = g.beta * weight;
    }
  }
  if (grad) backward_route(fwd, model, post_grads, stats, *grad);
  return nll;
}

}  // namespace detail

/// Mean per-trajectory NLL of a model over a dataset (empty evidence for
/// gru, leave-one-out evidence for unite_dis when store != nullptr and
/// leave_out is true).
inline double dataset_nll(const ModelParams& model, const RoadNetwork& net,
                          const std::vector<Trajectory>& data, const RecordStore* store,
                          SelectionParams selection, bool leave_out) {
  if (data.empty()) return 0.0;
  double total = 0.0;
  for (const auto& tj : data) {
    selection.leave_out_trip = leave_out ? std::optional<std::string>(tj.id) : std::nullopt;
    total += detail::trajectory_loss(model, net, tj, store, selection, nullptr, 0.0);
  }
  return total / static_cast<double>(data.size());
}

/// Minimizes mean per-trajectory NLL with ADAM; keeps the epoch checkpoint
/// with the best validation NLL. unite_dis uses leave-one-out evidence
/// during training; gru uses empty evidence.
inline ModelParams train(ModelKind kind, const RoadNetwork& net,
                         const std::vector<Trajectory>& train_set,
                         const std::vector<Trajectory>& val_set, const RecordStore* store,
                         const TrainConfig& cfg, TrainHistory* history = nullptr) {
  if (kind == ModelKind::unite_dis && store == nullptr) {
    throw DataError("train: unite_dis requires a record store");
  }
  const RecordStore* evidence = (kind == ModelKind::unite_dis) ? store : nullptr;

  ModelParams model = init_params(cfg.seed, cfg.a, cfg.epsilon);
  fit_feature_scaling(model, net, train_set);

  AdamState adam;
  std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ull);
  std::vector<size_t> order(train_set.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;

  ModelParams best = model;
  double best_val = std::numeric_limits<double>::infinity();
  int best_epoch = -1;
  std::vector<double> grad(ModelParams::param_count, 0.0);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_nll = 0.0;
    size_t n_done = 0;
    for (size_t start = 0; start < order.size(); start += cfg.batch_size) {
      size_t end = std::min(order.size(), start + cfg.batch_size);
      std::fill(grad.begin(), grad.end(), 0.0);
      const double weight = 1.0 / static_cast<double>(end - start);
      for (size_t b = start; b < end; ++b) {
        const Trajectory& tj = train_set[order[b]];
        SelectionParams sel = cfg.selection;
        sel.leave_out_trip = tj.id;
        double nll =
            detail::trajectory_loss(model, net, tj, evidence, sel, &grad, weight);
        if (!std::isfinite(nll)) {
          throw NumericError("train: non-finite NLL at epoch " + std::to_string(epoch) +
                             ", trajectory '" + tj.id + "'");
        }
        epoch_nll += nll;
        ++n_done;
      }
      adam_step(model, grad, adam, cfg.lr);
    }

    double train_mean = n_done ? epoch_nll / n_done : 0.0;
    double val_mean = dataset_nll(model, net, val_set, evidence, cfg.selection, false);
    if (history) {
      history->train_nll.push_back(train_mean);
      history->val_nll.push_back(val_mean);
    }
    if (val_set.empty() || val_mean < best_val) {
      best_val = val_mean;
      best = model;
      best_epoch = epoch;
    }
  }
  if (history) history->best_epoch = best_epoch;
  return best;
}

}  // namespace unite

#endif  // UNITE_ESTIMATORS_HPP
