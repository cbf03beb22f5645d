#ifndef UNITE_RECORD_STORE_HPP
#define UNITE_RECORD_STORE_HPP

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "unite/core.hpp"

namespace unite {

struct SelectionParams {
  int c = 0;                 // contextual relevance: c preceding/succeeding segments
  double delta = 7200.0;     // temporal relevance window width, seconds
  std::optional<std::string> leave_out_trip;

  SelectionParams() = default;
  SelectionParams(int c_, double delta_, std::optional<std::string> leave_out = std::nullopt)
      : c(c_), delta(delta_), leave_out_trip(std::move(leave_out)) {
    if (c < 0) throw DataError("SelectionParams: c must be >= 0");
    if (!(delta > 0.0 && delta <= kSecondsPerWeek)) {
      throw DataError("SelectionParams: delta must be in (0, 604800]");
    }
  }
};

/// Indexed store of historical traversal records. For every traversal with
/// both speed and arrival present, the speed is stored once per context
/// width 0..c_max under its (segment, context) bucket, sorted by arrival
/// time for binary search.
class RecordStore {
 public:
  struct Record {
    double arrival;  // seconds of week
    double speed;    // m/s
    int32_t trip;    // interned trip id
  };

  RecordStore() = default;
  RecordStore(RecordStore&& other) noexcept { *this = std::move(other); }
  RecordStore& operator=(RecordStore&& other) noexcept {
    c_max_ = other.c_max_;
    record_count_ = other.record_count_;
    buckets_by_width_ = std::move(other.buckets_by_width_);
    trip_index_ = std::move(other.trip_index_);
    trip_names_ = std::move(other.trip_names_);
    inspected_.store(other.inspected_.load());
    return *this;
  }

  static RecordStore build(const std::vector<Trajectory>& trajectories, int c_max) {
    if (c_max < 0) throw DataError("build_store: c_max must be >= 0");
    RecordStore store;
    store.c_max_ = c_max;
    store.buckets_by_width_.resize(c_max + 1);
    for (const auto& tj : trajectories) {
      int32_t trip = store.intern_trip(tj.id);
      Route route = tj.route();
      for (size_t i = 0; i < tj.traversals.size(); ++i) {
        const Traversal& tr = tj.traversals[i];
        if (!tr.speed || !tr.arrival) continue;
        for (int c = 0; c <= c_max; ++c) {
          auto& bucket = store.buckets_by_width_[c][route_context(route, i, c)];
          bucket.push_back(Record{tr.arrival->seconds, *tr.speed, trip});
        }
      }
    }
    for (auto& width : store.buckets_by_width_) {
      for (auto& [ctx, bucket] : width) {
        std::sort(bucket.begin(), bucket.end(),
                  [](const Record& a, const Record& b) { return a.arrival < b.arrival; });
        store.record_count_ += bucket.size();
      }
    }
    store.record_count_ /= static_cast<size_t>(c_max + 1);
    return store;
  }

  int c_max() const { return c_max_; }
  size_t record_count() const { return record_count_; }

  /// Speeds of records matching the query context, within the circular
  /// window of width delta around tau, excluding the left-out trip.
  std::vector<double> select_records(const Route& route, size_t i, TimeOfWeek tau,
                                     const SelectionParams& params) const {
    if (params.c > c_max_) {
      throw DataError("select_records: c exceeds store c_max");
    }
    std::vector<double> out;
    Context ctx = route_context(route, i, params.c);
    auto it = buckets_by_width_[params.c].find(ctx);
    if (it == buckets_by_width_[params.c].end()) return out;
    const auto& bucket = it->second;

    int32_t skip = -1;
    if (params.leave_out_trip) {
      auto t = trip_index_.find(*params.leave_out_trip);
      if (t != trip_index_.end()) skip = t->second;
    }

    const double half = params.delta / 2.0;
    auto scan = [&](double lo, double hi) {
      auto first = std::lower_bound(bucket.begin(), bucket.end(), lo,
                                    [](const Record& r, double v) { return r.arrival < v; });
      for (auto r = first; r != bucket.end() && r->arrival <= hi; ++r) {
        inspected_.fetch_add(1, std::memory_order_relaxed);
        if (r->trip != skip) out.push_back(r->speed);
      }
    };

    const double lo = tau.seconds - half;
    const double hi = tau.seconds + half;
    if (params.delta >= kSecondsPerWeek) {
      scan(0.0, kSecondsPerWeek);
    } else if (lo < 0.0) {
      scan(0.0, hi);
      scan(lo + kSecondsPerWeek, kSecondsPerWeek);
    } else if (hi >= kSecondsPerWeek) {
      scan(lo, kSecondsPerWeek);
      scan(0.0, hi - kSecondsPerWeek);
    } else {
      scan(lo, hi);
    }
    return out;
  }

  /// Records available at the ground-truth arrival of traversal i with the
  /// least restrictive selection (c=0, the given delta), excluding the
  /// trajectory's own records. Used for robustness bucketing.
  size_t record_count_at_truth(const Trajectory& trajectory, size_t i,
                               double delta) const {
    const Traversal& tr = trajectory.traversals.at(i);
    if (!tr.arrival) throw DataError("record_count_at_truth: missing arrival");
    SelectionParams p(0, delta, trajectory.id);
    return select_records(trajectory.route(), i, *tr.arrival, p).size();
  }

  /// Candidate inspections since the last reset; covers the A-series
  /// complexity guard.
  size_t inspected_candidates() const { return inspected_.load(); }
  void reset_inspection_counter() const { inspected_.store(0); }

  // --- binary snapshot (cache only; regenerable from trajectory CSV) ---

  void save(std::ostream& out) const {
    out.write("UNITERS1", 8);
    auto w64 = [&](uint64_t v) { out.write(reinterpret_cast<const char*>(&v), 8); };
    auto wd = [&](double v) { out.write(reinterpret_cast<const char*>(&v), 8); };
    w64(static_cast<uint64_t>(c_max_));
    w64(record_count_);
    w64(trip_names_.size());
    for (const auto& name : trip_names_) {
      w64(name.size());
      out.write(name.data(), static_cast<std::streamsize>(name.size()));
    }
    for (const auto& width : buckets_by_width_) {
      w64(width.size());
      for (const auto& [ctx, bucket] : width) {
        w64(ctx.size());
        for (SegmentIndex s : ctx) w64(static_cast<uint64_t>(static_cast<int64_t>(s)));
        w64(bucket.size());
        for (const Record& r : bucket) {
          wd(r.arrival);
          wd(r.speed);
          w64(static_cast<uint64_t>(r.trip));
        }
      }
    }
  }

  static RecordStore load(std::istream& in) {
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, "UNITERS1", 8) != 0) {
      throw DataError("record store snapshot: bad magic");
    }
    auto r64 = [&]() {
      uint64_t v = 0;
      in.read(reinterpret_cast<char*>(&v), 8);
      if (!in) throw DataError("record store snapshot: truncated");
      return v;
    };
    auto rd = [&]() {
      double v = 0;
      in.read(reinterpret_cast<char*>(&v), 8);
      if (!in) throw DataError("record store snapshot: truncated");
      return v;
    };
    RecordStore store;
    store.c_max_ = static_cast<int>(r64());
    store.record_count_ = r64();
    uint64_t n_trips = r64();
    for (uint64_t t = 0; t < n_trips; ++t) {
      std::string name(r64(), '\0');
      in.read(name.data(), static_cast<std::streamsize>(name.size()));
      store.trip_index_.emplace(name, static_cast<int32_t>(store.trip_names_.size()));
      store.trip_names_.push_back(std::move(name));
    }
    store.buckets_by_width_.resize(store.c_max_ + 1);
    for (auto& width : store.buckets_by_width_) {
      uint64_t n_buckets = r64();
      for (uint64_t b = 0; b < n_buckets; ++b) {
        Context ctx(r64());
        for (auto& s : ctx) s = static_cast<SegmentIndex>(static_cast<int64_t>(r64()));
        auto& bucket = width[ctx];
        bucket.resize(r64());
        for (Record& r : bucket) {
          r.arrival = rd();
          r.speed = rd();
          r.trip = static_cast<int32_t>(r64());
        }
      }
    }
    return store;
  }

 private:
  struct ContextHash {
    size_t operator()(const Context& ctx) const {
      size_t h = 1469598103934665603ull;
      for (SegmentIndex s : ctx) {
        h ^= static_cast<size_t>(static_cast<uint32_t>(s));
        h *= 1099511628211ull;
      }
      return h;
    }
  };

  int32_t intern_trip(const std::string& id) {
    auto it = trip_index_.find(id);
    if (it != trip_index_.end()) return it->second;
    int32_t idx = static_cast<int32_t>(trip_names_.size());
    trip_index_.emplace(id, idx);
    trip_names_.push_back(id);
    return idx;
  }

  int c_max_ = 0;
  size_t record_count_ = 0;
  std::vector<std::unordered_map<Context, std::vector<Record>, ContextHash>>
      buckets_by_width_;
  std::unordered_map<std::string, int32_t> trip_index_;
  std::vector<std::string> trip_names_;
  mutable std::atomic<size_t> inspected_{0};
};

inline RecordStore build_store(const std::vector<Trajectory>& trajectories, int c_max) {
  return RecordStore::build(trajectories, c_max);
}

/// Direct scan of all trajectories applying the three selection conditions.
/// Test oracle for the indexed store; kept next to it so both sides use the
/// same circular-window rule.
inline std::vector<double> select_records_brute_force(
    const std::vector<Trajectory>& trajectories, const Route& route, size_t i,
    TimeOfWeek tau, const SelectionParams& params) {
  std::vector<double> out;
  Context query_ctx = route_context(route, i, params.c);
  for (const auto& tj : trajectories) {
    if (params.leave_out_trip && tj.id == *params.leave_out_trip) continue;
    Route r = tj.route();
    for (size_t j = 0; j < tj.traversals.size(); ++j) {
      const Traversal& tr = tj.traversals[j];
      if (!tr.speed || !tr.arrival) continue;
      if (route_context(r, j, params.c) != query_ctx) continue;
      if (tow_distance(*tr.arrival, tau) > params.delta / 2.0) continue;
      out.push_back(*tr.speed);
    }
  }
  return out;
}

}  // namespace unite

#endif  // UNITE_RECORD_STORE_HPP
