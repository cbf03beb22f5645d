#include <random>
#include <sstream>

#include "doctest.h"
#include "unite/record_store.hpp"
#include "unite/synth.hpp"

using namespace unite;

namespace {

// Small deterministic corpus with shared segments and contexts.
SynthData corpus(int n_trajectories = 50, uint64_t seed = 3) {
  SynthSpec spec;
  spec.n_segments = 20;
  spec.n_trajectories = n_trajectories;
  spec.route_len_min = 3;
  spec.route_len_max = 8;
  spec.missingness = 0.2;
  spec.seed = seed;
  spec.train_frac = 1.0;
  spec.val_frac = 0.0;
  return generate(spec);
}

}  // namespace

TEST_CASE("build_store counts observed records") {
  RoadNetwork net;
  for (int s = 0; s < 3; ++s) {
    Segment seg;
    seg.id = "s" + std::to_string(s);
    seg.source = "n" + std::to_string(s);
    seg.target = "n" + std::to_string(s + 1);
    seg.length = 100;
    net.add_segment(seg);
  }
  Trajectory tj{"t1", {}};
  for (int i = 0; i < 3; ++i) {
    tj.traversals.push_back(Traversal{i, TimeOfWeek(1000.0 * i), 10.0 + i});
  }
  RecordStore store = build_store({tj}, 0);
  CHECK(store.record_count() == 3);

  SUBCASE("missing speed contributes no record") {
    tj.traversals[1].speed.reset();
    RecordStore s2 = build_store({tj}, 0);
    CHECK(s2.record_count() == 2);
  }
  SUBCASE("missing arrival contributes no record") {
    tj.traversals[1].arrival.reset();
    RecordStore s2 = build_store({tj}, 0);
    CHECK(s2.record_count() == 2);
  }
  SUBCASE("two trips on the same segment share a bucket") {
    Trajectory other{"t2", {Traversal{0, TimeOfWeek(500.0), 12.0}}};
    RecordStore s2 = build_store({tj, other}, 0);
    auto records = s2.select_records(Route{0}, 0, TimeOfWeek(750.0),
                                     SelectionParams(0, kSecondsPerWeek));
    CHECK(records.size() == 2);
  }
}

TEST_CASE("select_records equals the brute-force scan") {
  SynthData data = corpus();
  RecordStore store = build_store(data.train, 4);

  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const int c_grid[] = {0, 1, 2, 4};
  const double delta_grid[] = {15 * 60.0, 30 * 60.0, 60 * 60.0, 120 * 60.0};

  int queries = 0;
  for (int q = 0; q < 200; ++q) {
    const Trajectory& tj = data.train[rng() % data.train.size()];
    Route route = tj.route();
    size_t i = rng() % route.size();
    TimeOfWeek tau = TimeOfWeek::wrap(unit(rng) * kSecondsPerWeek);
    for (int c : c_grid) {
      for (double delta : delta_grid) {
        SelectionParams params(c, delta);
        if (unit(rng) < 0.5) params.leave_out_trip = tj.id;
        auto indexed = store.select_records(route, i, tau, params);
        auto brute = select_records_brute_force(data.train, route, i, tau, params);
        std::sort(indexed.begin(), indexed.end());
        std::sort(brute.begin(), brute.end());
        CHECK(indexed == brute);
        ++queries;
      }
    }
  }
  CHECK(queries == 200 * 16);
}

TEST_CASE("result size monotone in c and delta") {
  SynthData data = corpus();
  RecordStore store = build_store(data.train, 4);
  const Trajectory& tj = data.train[0];
  Route route = tj.route();
  for (size_t i = 0; i < route.size(); ++i) {
    TimeOfWeek tau = *tj.traversals[0].arrival;
    size_t prev = SIZE_MAX;
    for (int c : {0, 1, 2, 4}) {
      size_t n = store.select_records(route, i, tau, SelectionParams(c, 7200)).size();
      CHECK(n <= prev);
      prev = n;
    }
    prev = 0;
    for (double dm : {15.0, 30.0, 60.0, 120.0}) {
      size_t n =
          store.select_records(route, i, tau, SelectionParams(0, dm * 60.0)).size();
      CHECK(n >= prev);
      prev = n;
    }
  }
}

TEST_CASE("empty store and out-of-range c") {
  RecordStore store = build_store({}, 2);
  CHECK(store.select_records(Route{0}, 0, TimeOfWeek(0.0), SelectionParams(0, 3600))
            .empty());
  CHECK_THROWS_AS(
      store.select_records(Route{0}, 0, TimeOfWeek(0.0), SelectionParams(3, 3600)),
      DataError);
}

TEST_CASE("record_count_at_truth excludes the own trip") {
  SynthData data = corpus();
  RecordStore store = build_store(data.train, 0);
  const double delta = 120 * 60.0;
  for (const auto& tj : {data.train[0], data.train[7]}) {
    for (size_t i = 0; i < tj.traversals.size(); ++i) {
      if (!tj.traversals[i].arrival) {
        CHECK_THROWS_AS(store.record_count_at_truth(tj, i, delta), DataError);
        continue;
      }
      SelectionParams p(0, delta, tj.id);
      auto brute = select_records_brute_force(data.train, tj.route(), i,
                                              *tj.traversals[i].arrival, p);
      CHECK(store.record_count_at_truth(tj, i, delta) == brute.size());
    }
  }
}

TEST_CASE("window wrap-around at the week boundary") {
  RoadNetwork net;
  Segment seg;
  seg.id = "s0";
  seg.source = "a";
  seg.target = "b";
  seg.length = 100;
  net.add_segment(seg);
  // records on Sunday 23:55 and Monday 00:05
  Trajectory late{"late", {Traversal{0, TimeOfWeek(604800.0 - 300.0), 10.0}}};
  Trajectory early{"early", {Traversal{0, TimeOfWeek(300.0), 20.0}}};
  RecordStore store = build_store({late, early}, 0);
  // query at midnight with a 30 minute window catches both
  auto both = store.select_records(Route{0}, 0, TimeOfWeek(0.0), SelectionParams(0, 1800));
  CHECK(both.size() == 2);
  // a 5 minute window catches neither
  auto none = store.select_records(Route{0}, 0, TimeOfWeek(0.0), SelectionParams(0, 300));
  CHECK(none.empty());
}

TEST_CASE("inspection counter stays within the matched bucket") {
  SynthData data = corpus(100);
  RecordStore store = build_store(data.train, 0);
  const Trajectory& tj = data.train[0];
  Route route = tj.route();
  SelectionParams all(0, kSecondsPerWeek);
  size_t bucket_size = store.select_records(route, 0, TimeOfWeek(0.0), all).size() + 1;

  store.reset_inspection_counter();
  store.select_records(route, 0, *tj.traversals[0].arrival, SelectionParams(0, 3600));
  CHECK(store.inspected_candidates() <= bucket_size);
}

TEST_CASE("snapshot round-trips") {
  SynthData data = corpus(20);
  RecordStore store = build_store(data.train, 2);
  std::stringstream buf;
  store.save(buf);
  RecordStore loaded = RecordStore::load(buf);
  CHECK(loaded.c_max() == store.c_max());
  CHECK(loaded.record_count() == store.record_count());

  const Trajectory& tj = data.train[3];
  Route route = tj.route();
  for (int c : {0, 1, 2}) {
    SelectionParams p(c, 7200, tj.id);
    auto a = store.select_records(route, 1, *tj.traversals[0].arrival, p);
    auto b = loaded.select_records(route, 1, *tj.traversals[0].arrival, p);
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    CHECK(a == b);
  }

  std::stringstream bad("NOTASTORE");
  CHECK_THROWS_AS(RecordStore::load(bad), DataError);
}
