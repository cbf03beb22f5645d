#ifndef UNITE_SYNTH_HPP
#define UNITE_SYNTH_HPP

#include <array>
#include <cmath>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "unite/conjugate.hpp"
#include "unite/core.hpp"

namespace unite {

/// Synthetic benchmark specification. Ground truth per segment is a
/// Gaussian over speed whose mean may be reduced by a weekday-peak
/// slowdown; segment traversal frequency is heavy-tailed (popularity-
/// weighted random walks).
struct SynthSpec {
  int n_segments = 200;
  // motorway, trunk, urban, rural, other
  std::array<double, 5> category_mix{0.05, 0.10, 0.40, 0.30, 0.15};
  int n_trajectories = 2000;
  int route_len_min = 5;
  int route_len_max = 15;
  double missingness = 0.10;       // joint (arrival, speed) per traversal, i > 0
  double peak_slowdown = 0.75;     // factor on mu during weekday peaks
  double train_frac = 0.70;
  double val_frac = 0.15;
  uint64_t seed = 1;

  void validate() const {
    if (n_segments < 2) throw DataError("SynthSpec: need at least 2 segments");
    if (n_trajectories < 1) throw DataError("SynthSpec: need at least 1 trajectory");
    if (!(missingness >= 0.0 && missingness < 1.0)) {
      throw DataError("SynthSpec: missingness must be in [0, 1)");
    }
    if (route_len_min < 1 || route_len_max < route_len_min) {
      throw DataError("SynthSpec: bad route length range");
    }
    double mix = 0.0;
    for (double p : category_mix) mix += p;
    if (std::fabs(mix - 1.0) > 1e-9) throw DataError("SynthSpec: category mix must sum to 1");
    if (!(peak_slowdown > 0.0 && peak_slowdown <= 1.0)) {
      throw DataError("SynthSpec: peak_slowdown must be in (0, 1]");
    }
  }
};

struct SegmentTruth {
  double mu = 0.0;     // free-flow mean speed, m/s
  double sigma = 1.0;  // speed standard deviation, m/s
  bool modulated = false;
};

/// Weekday morning/afternoon peak windows: 7:30-8:30 and 15:30-17:00.
inline bool in_peak(TimeOfWeek tau) {
  if (tau.day_of_week() > 4) return false;
  double tod = tau.seconds - tau.day_of_week() * kSecondsPerDay;
  return (tod >= 7.5 * 3600 && tod < 8.5 * 3600) ||
         (tod >= 15.5 * 3600 && tod < 17.0 * 3600);
}

/// True generating densities; the lower-bound reference for estimator NLL.
class SynthOracle {
 public:
  SynthOracle() = default;
  SynthOracle(std::vector<SegmentTruth> truth, double peak_slowdown)
      : truth_(std::move(truth)), peak_slowdown_(peak_slowdown) {}

  double mu_at(SegmentIndex s, TimeOfWeek tau) const {
    const SegmentTruth& t = truth_.at(s);
    return (t.modulated && in_peak(tau)) ? t.mu * peak_slowdown_ : t.mu;
  }
  double sigma_of(SegmentIndex s) const { return truth_.at(s).sigma; }
  const SegmentTruth& truth(SegmentIndex s) const { return truth_.at(s); }
  size_t size() const { return truth_.size(); }
  double peak_slowdown() const { return peak_slowdown_; }

  double snll(SegmentIndex s, TimeOfWeek tau, double speed) const {
    return -gaussian_logpdf(speed, mu_at(s, tau), sigma_of(s));
  }

  /// Mean per-trajectory NLL under the true densities, over traversals with
  /// an observed speed (speed and arrival are masked jointly).
  double oracle_nll(const std::vector<Trajectory>& trajectories) const {
    if (trajectories.empty()) return 0.0;
    double total = 0.0;
    for (const auto& tj : trajectories) {
      for (const auto& tr : tj.traversals) {
        if (!tr.speed || !tr.arrival) continue;
        if (static_cast<size_t>(tr.segment) >= truth_.size()) {
          throw DataError("oracle_nll: unknown segment");
        }
        total += snll(tr.segment, *tr.arrival, *tr.speed);
      }
    }
    return total / static_cast<double>(trajectories.size());
  }

  // Ground-truth sidecar: segment_id,mu_mps,sigma_mps,modulated,peak_slowdown
  void save(std::ostream& out, const RoadNetwork& net) const {
    out << "segment_id,mu_mps,sigma_mps,modulated,peak_slowdown\n";
    char buf[64];
    auto num = [&](double v) {
      std::snprintf(buf, sizeof buf, "%.17g", v);
      return std::string(buf);
    };
    for (size_t s = 0; s < truth_.size(); ++s) {
      out << net.segment(static_cast<SegmentIndex>(s)).id << ',' << num(truth_[s].mu)
          << ',' << num(truth_[s].sigma) << ',' << (truth_[s].modulated ? 1 : 0) << ','
          << num(peak_slowdown_) << '\n';
    }
  }

  static SynthOracle load(std::istream& in, const RoadNetwork& net) {
    std::string line;
    if (!std::getline(in, line)) throw DataError("ground-truth file: empty");
    std::vector<SegmentTruth> truth(net.size());
    double slowdown = 1.0;
    int line_no = 1;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      auto cells = detail::split_csv(line);
      if (cells.size() != 5) {
        throw DataError("ground-truth line " + std::to_string(line_no) + ": bad row");
      }
      SegmentIndex s = net.require(cells[0]);
      truth[s].mu = detail::parse_real(cells[1], line_no, "mu");
      truth[s].sigma = detail::parse_real(cells[2], line_no, "sigma");
      truth[s].modulated = detail::parse_bool(cells[3], line_no, "modulated");
      slowdown = detail::parse_real(cells[4], line_no, "peak_slowdown");
    }
    return SynthOracle(std::move(truth), slowdown);
  }

 private:
  std::vector<SegmentTruth> truth_;
  double peak_slowdown_ = 1.0;
};

struct SynthData {
  RoadNetwork net;
  std::vector<Trajectory> train, val, test;
  SynthOracle oracle;
};

inline SynthData generate(const SynthSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> stdnorm(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  const int n_nodes = std::max(2, spec.n_segments / 2);

  SynthData data;
  std::vector<SegmentTruth> truth(spec.n_segments);
  std::vector<double> popularity(spec.n_segments);
  std::vector<std::vector<SegmentIndex>> outgoing(n_nodes);

  // Segment category base speeds (m/s): mean and per-segment spread.
  constexpr double cat_mu[5] = {31.0, 22.0, 11.0, 17.0, 13.0};
  constexpr double cat_spread[5] = {3.0, 2.5, 2.0, 2.5, 2.0};
  constexpr double cat_limit_kmh[5] = {130.0, 80.0, 50.0, 80.0, 60.0};

  for (int s = 0; s < spec.n_segments; ++s) {
    // first n_nodes segments form a cycle so every node has an exit
    int u = s < n_nodes ? s : static_cast<int>(rng() % n_nodes);
    int v = s < n_nodes ? (s + 1) % n_nodes : static_cast<int>(rng() % n_nodes);
    if (u == v) v = (v + 1) % n_nodes;

    double roll = unit(rng);
    int cat = 0;
    for (double acc = 0.0; cat < 4; ++cat) {
      acc += spec.category_mix[cat];
      if (roll < acc) break;
    }

    Segment seg;
    seg.id = "s" + std::to_string(s);
    seg.source = "n" + std::to_string(u);
    seg.target = "n" + std::to_string(v);
    seg.length = 80.0 + 720.0 * unit(rng);
    seg.category = static_cast<RoadCategory>(cat);
    bool city = (seg.category == RoadCategory::urban) || unit(rng) < 0.1;
    seg.in_city_source = city;
    seg.in_city_target = city;
    if (unit(rng) < 0.6) seg.speed_limit = cat_limit_kmh[cat] * kKmhToMps;

    SegmentTruth& t = truth[s];
    t.mu = std::max(4.0, cat_mu[cat] + cat_spread[cat] * stdnorm(rng));
    t.sigma = t.mu * (0.05 + 0.07 * unit(rng));
    t.modulated = (seg.category != RoadCategory::motorway) && unit(rng) < 0.5;

    // features: the fitting signal (category, geometry, noisy speed hints)
    seg.features.fill(0.0);
    seg.features[cat] = 1.0;
    seg.features[5] = seg.length / 1000.0;
    seg.features[6] = seg.in_city_source ? 1.0 : 0.0;
    seg.features[7] = seg.in_city_target ? 1.0 : 0.0;
    seg.features[8] = seg.speed_limit ? 1.0 : 0.0;
    seg.features[9] = seg.speed_limit ? *seg.speed_limit : 0.0;
    seg.features[10] = t.mu + 0.5 * stdnorm(rng);
    seg.features[11] = t.sigma + 0.1 * stdnorm(rng);
    seg.features[12] = t.modulated ? 1.0 : 0.0;
    seg.features[13] = stdnorm(rng);
    seg.features[14] = stdnorm(rng);
    seg.features[15] = stdnorm(rng);

    SegmentIndex idx = data.net.add_segment(std::move(seg));
    outgoing[u].push_back(idx);
    // heavy-tailed traversal frequency
    popularity[s] = 1.0 / std::pow(static_cast<double>(s + 1), 1.5);
  }

  auto weighted_pick = [&](const std::vector<SegmentIndex>& options) {
    double total = 0.0;
    for (SegmentIndex s : options) total += popularity[s];
    double roll = unit(rng) * total;
    for (SegmentIndex s : options) {
      roll -= popularity[s];
      if (roll <= 0.0) return s;
    }
    return options.back();
  };

  std::vector<SegmentIndex> all_segments(spec.n_segments);
  for (int s = 0; s < spec.n_segments; ++s) all_segments[s] = s;

  std::uniform_int_distribution<int> route_len(spec.route_len_min, spec.route_len_max);
  // demand is skewed toward the early week and the morning peak so popular
  // segments accumulate dense record windows
  std::discrete_distribution<int> weekday{0.40, 0.25, 0.15, 0.12, 0.08};

  for (int t = 0; t < spec.n_trajectories; ++t) {
    Trajectory tj;
    tj.id = "t" + std::to_string(t);

    // start time: weekday, morning or afternoon peak, +- 30 min spread
    double peak_center = unit(rng) < 0.65 ? 8.0 * 3600 : 16.0 * 3600;
    double tod = peak_center + 1800.0 * stdnorm(rng);
    TimeOfWeek tau = TimeOfWeek::wrap(weekday(rng) * kSecondsPerDay + tod);

    SegmentIndex cur = weighted_pick(all_segments);
    int len = route_len(rng);
    for (int i = 0; i < len; ++i) {
      const Segment& seg = data.net.segment(cur);
      const SegmentTruth& tr_truth = truth[cur];
      double mu = (tr_truth.modulated && in_peak(tau)) ? tr_truth.mu * spec.peak_slowdown
                                                       : tr_truth.mu;
      double speed = std::max(0.5, mu + tr_truth.sigma * stdnorm(rng));

      Traversal tr;
      tr.segment = cur;
      tr.arrival = tau;
      tr.speed = speed;
      if (i > 0 && unit(rng) < spec.missingness) {
        tr.arrival.reset();
        tr.speed.reset();
      }
      tj.traversals.push_back(tr);

      tau = TimeOfWeek::wrap(tau.seconds + seg.length / speed);
      int node = std::stoi(seg.target.substr(1));
      cur = weighted_pick(outgoing[node]);
    }
    data.train.push_back(std::move(tj));  // temporarily holds everything
  }

  // chronological split by generation order (trip index)
  size_t n_train = static_cast<size_t>(spec.train_frac * spec.n_trajectories);
  size_t n_val = static_cast<size_t>(spec.val_frac * spec.n_trajectories);
  std::vector<Trajectory> all = std::move(data.train);
  data.train.assign(all.begin(), all.begin() + n_train);
  data.val.assign(all.begin() + n_train, all.begin() + n_train + n_val);
  data.test.assign(all.begin() + n_train + n_val, all.end());

  data.oracle = SynthOracle(std::move(truth), spec.peak_slowdown);
  return data;
}

}  // namespace unite

#endif  // UNITE_SYNTH_HPP
