#include <map>
#include <sstream>

#include "doctest.h"
#include "unite/synth.hpp"

using namespace unite;

namespace {

std::string fingerprint(const SynthData& data) {
  std::stringstream ss;
  serialize_network(ss, data.net);
  serialize_trajectories(ss, data.train, data.net);
  serialize_trajectories(ss, data.val, data.net);
  serialize_trajectories(ss, data.test, data.net);
  data.oracle.save(ss, data.net);
  return ss.str();
}

}  // namespace

TEST_CASE("generation is a pure function of the spec") {
  SynthSpec spec;
  spec.n_segments = 40;
  spec.n_trajectories = 120;
  spec.seed = 9;
  std::string a = fingerprint(generate(spec));
  // interleave unrelated RNG use; the generator must not share global state
  std::mt19937_64 scramble(123);
  (void)scramble();
  std::string b = fingerprint(generate(spec));
  CHECK(a == b);
  spec.seed = 10;
  CHECK(fingerprint(generate(spec)) != a);
}

TEST_CASE("split sizes and ordering") {
  SynthSpec spec;
  spec.n_segments = 30;
  spec.n_trajectories = 200;
  SynthData data = generate(spec);
  CHECK(data.train.size() == 140);
  CHECK(data.val.size() == 30);
  CHECK(data.test.size() == 30);
  // generation-order split: ids partition contiguously
  CHECK(data.train.front().id == "t0");
  CHECK(data.val.front().id == "t140");
  CHECK(data.test.back().id == "t199");
}

TEST_CASE("trajectories are structurally valid") {
  SynthSpec spec;
  spec.n_segments = 30;
  spec.n_trajectories = 100;
  spec.missingness = 0.3;
  SynthData data = generate(spec);
  for (const auto* split : {&data.train, &data.val, &data.test}) {
    for (const auto& tj : *split) {
      Route route = tj.route();
      CHECK(route.size() >= size_t(spec.route_len_min));
      CHECK(route.size() <= size_t(spec.route_len_max));
      CHECK_NOTHROW(validate_route(route, data.net));
      REQUIRE(tj.traversals[0].arrival.has_value());
      for (const auto& tr : tj.traversals) {
        // arrival and speed are masked jointly
        CHECK(tr.arrival.has_value() == tr.speed.has_value());
        if (tr.speed) CHECK(*tr.speed > 0.0);
      }
    }
  }
}

TEST_CASE("missingness zero keeps every traversal observed") {
  SynthSpec spec;
  spec.n_segments = 20;
  spec.n_trajectories = 50;
  spec.missingness = 0.0;
  SynthData data = generate(spec);
  for (const auto& tj : data.train) {
    for (const auto& tr : tj.traversals) {
      CHECK(tr.arrival.has_value());
      CHECK(tr.speed.has_value());
    }
  }
}

TEST_CASE("observed speeds match the per-segment truth") {
  SynthSpec spec;
  spec.n_segments = 20;
  spec.n_trajectories = 3000;
  spec.train_frac = 1.0;
  spec.val_frac = 0.0;
  spec.seed = 4;
  SynthData data = generate(spec);

  // collect off-peak samples per segment and compare means to the truth
  std::map<SegmentIndex, std::vector<double>> samples;
  for (const auto& tj : data.train) {
    for (const auto& tr : tj.traversals) {
      if (!tr.speed || !tr.arrival) continue;
      if (in_peak(*tr.arrival)) continue;
      samples[tr.segment].push_back(*tr.speed);
    }
  }
  int checked = 0;
  for (const auto& [seg, xs] : samples) {
    if (xs.size() < 500) continue;
    double mean = 0.0;
    for (double x : xs) mean += x;
    mean /= xs.size();
    const SegmentTruth& t = data.oracle.truth(seg);
    CHECK(std::fabs(mean - t.mu) < 3.0 * t.sigma / std::sqrt(double(xs.size())) + 1e-9);
    ++checked;
  }
  CHECK(checked >= 3);  // the heavy tail guarantees some high-volume segments
}

TEST_CASE("peak modulation slows modulated segments") {
  SynthSpec spec;
  spec.n_segments = 20;
  spec.n_trajectories = 4000;
  spec.train_frac = 1.0;
  spec.val_frac = 0.0;
  spec.peak_slowdown = 0.6;
  spec.seed = 12;
  SynthData data = generate(spec);

  for (size_t s = 0; s < data.oracle.size(); ++s) {
    auto idx = static_cast<SegmentIndex>(s);
    const SegmentTruth& t = data.oracle.truth(idx);
    TimeOfWeek peak(8.0 * 3600);       // Monday 08:00
    TimeOfWeek offpeak(12.0 * 3600);   // Monday noon
    if (t.modulated) {
      CHECK(data.oracle.mu_at(idx, peak) == doctest::Approx(0.6 * t.mu));
    } else {
      CHECK(data.oracle.mu_at(idx, peak) == doctest::Approx(t.mu));
    }
    CHECK(data.oracle.mu_at(idx, offpeak) == doctest::Approx(t.mu));
  }

  // empirically: mean observed peak speed on modulated segments is lower
  std::map<SegmentIndex, std::pair<double, int>> peak_mean, off_mean;
  for (const auto& tj : data.train) {
    for (const auto& tr : tj.traversals) {
      if (!tr.speed || !tr.arrival) continue;
      if (!data.oracle.truth(tr.segment).modulated) continue;
      auto& acc = in_peak(*tr.arrival) ? peak_mean[tr.segment] : off_mean[tr.segment];
      acc.first += *tr.speed;
      acc.second += 1;
    }
  }
  int compared = 0;
  for (const auto& [seg, pk] : peak_mean) {
    auto it = off_mean.find(seg);
    if (it == off_mean.end() || pk.second < 100 || it->second.second < 100) continue;
    CHECK(pk.first / pk.second < it->second.first / it->second.second);
    ++compared;
  }
  CHECK(compared >= 2);
}

TEST_CASE("true densities beat a mismatched Gaussian on average") {
  SynthSpec spec;
  spec.n_segments = 30;
  spec.n_trajectories = 500;
  spec.train_frac = 1.0;
  spec.val_frac = 0.0;
  spec.seed = 6;
  SynthData data = generate(spec);

  double oracle = data.oracle.oracle_nll(data.train);

  // mismatched reference: one global Gaussian fixed at (12, 4) m/s
  double mismatched = 0.0;
  for (const auto& tj : data.train) {
    for (const auto& tr : tj.traversals) {
      if (!tr.speed || !tr.arrival) continue;
      mismatched += -gaussian_logpdf(*tr.speed, 12.0, 4.0);
    }
  }
  mismatched /= data.train.size();
  CHECK(oracle < mismatched);
}

TEST_CASE("ground-truth sidecar round-trips") {
  SynthSpec spec;
  spec.n_segments = 25;
  spec.n_trajectories = 10;
  spec.peak_slowdown = 0.8;
  SynthData data = generate(spec);

  std::stringstream buf;
  data.oracle.save(buf, data.net);
  SynthOracle loaded = SynthOracle::load(buf, data.net);
  REQUIRE(loaded.size() == data.oracle.size());
  CHECK(loaded.peak_slowdown() == data.oracle.peak_slowdown());
  for (size_t s = 0; s < loaded.size(); ++s) {
    auto idx = static_cast<SegmentIndex>(s);
    CHECK(loaded.truth(idx).mu == data.oracle.truth(idx).mu);
    CHECK(loaded.truth(idx).sigma == data.oracle.truth(idx).sigma);
    CHECK(loaded.truth(idx).modulated == data.oracle.truth(idx).modulated);
  }
}

TEST_CASE("spec validation") {
  SynthSpec spec;
  spec.n_segments = 1;
  CHECK_THROWS_AS(generate(spec), DataError);
  spec = SynthSpec{};
  spec.missingness = 1.0;
  CHECK_THROWS_AS(generate(spec), DataError);
  spec = SynthSpec{};
  spec.route_len_min = 8;
  spec.route_len_max = 4;
  CHECK_THROWS_AS(generate(spec), DataError);
  spec = SynthSpec{};
  spec.peak_slowdown = 0.0;
  CHECK_THROWS_AS(generate(spec), DataError);
}

TEST_CASE("segment frequency is heavy-tailed") {
  SynthSpec spec;
  spec.n_segments = 100;
  spec.n_trajectories = 1000;
  spec.train_frac = 1.0;
  spec.val_frac = 0.0;
  SynthData data = generate(spec);
  std::vector<size_t> counts(spec.n_segments, 0);
  size_t total = 0;
  for (const auto& tj : data.train) {
    for (const auto& tr : tj.traversals) {
      counts[tr.segment] += 1;
      ++total;
    }
  }
  std::sort(counts.rbegin(), counts.rend());
  size_t top10 = 0;
  for (int i = 0; i < 10; ++i) top10 += counts[i];
  CHECK(double(top10) / total > 0.3);  // top 10% of segments carry >30% of traffic
  CHECK(counts.back() < counts.front() / 5);
}
