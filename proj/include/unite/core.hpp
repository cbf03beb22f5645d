#ifndef UNITE_CORE_HPP
#define UNITE_CORE_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace unite {

constexpr double kSecondsPerWeek = 604800.0;
constexpr double kSecondsPerDay = 86400.0;
constexpr double kKmhToMps = 1.0 / 3.6;

struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Continuous time of week in seconds, [0, 604800).
struct TimeOfWeek {
  double seconds = 0.0;

  TimeOfWeek() = default;
  explicit TimeOfWeek(double s) : seconds(s) {
    if (!(s >= 0.0 && s < kSecondsPerWeek)) {
      throw DataError("TimeOfWeek out of range: " + std::to_string(s));
    }
  }

  static TimeOfWeek wrap(double s) {
    double r = std::fmod(s, kSecondsPerWeek);
    if (r < 0.0) r += kSecondsPerWeek;
    return TimeOfWeek(r);
  }

  int day_of_week() const { return static_cast<int>(seconds / kSecondsPerDay); }
  /// 15-minute bucket within the day, 0..95.
  int quarter_hour() const {
    double tod = seconds - day_of_week() * kSecondsPerDay;
    int b = static_cast<int>(tod / 900.0);
    return std::min(b, 95);
  }
};

/// Circular distance on the week, always in [0, 302400].
inline double tow_distance(TimeOfWeek a, TimeOfWeek b) {
  double d = std::fabs(a.seconds - b.seconds);
  return std::min(d, kSecondsPerWeek - d);
}

enum class RoadCategory { motorway, trunk, urban, rural, other };

inline RoadCategory parse_category(const std::string& s) {
  if (s == "motorway") return RoadCategory::motorway;
  if (s == "trunk") return RoadCategory::trunk;
  if (s == "urban") return RoadCategory::urban;
  if (s == "rural") return RoadCategory::rural;
  if (s == "other") return RoadCategory::other;
  throw DataError("unknown road category: '" + s + "'");
}

inline const char* category_name(RoadCategory c) {
  switch (c) {
    case RoadCategory::motorway: return "motorway";
    case RoadCategory::trunk: return "trunk";
    case RoadCategory::urban: return "urban";
    case RoadCategory::rural: return "rural";
    case RoadCategory::other: return "other";
  }
  return "?";
}

constexpr int kSegmentFeatures = 16;

/// Dense index of a segment within its RoadNetwork.
using SegmentIndex = int32_t;
/// Context sentinel for positions beyond the ends of a route.
constexpr SegmentIndex kBoundary = -1;

struct Segment {
  std::string id;
  std::string source;
  std::string target;
  double length = 0.0;  // meters
  RoadCategory category = RoadCategory::other;
  bool in_city_source = false;
  bool in_city_target = false;
  std::optional<double> speed_limit;  // m/s
  std::array<double, kSegmentFeatures> features{};
};

class RoadNetwork {
 public:
  SegmentIndex add_segment(Segment seg) {
    if (seg.length <= 0.0) throw DataError("nonpositive segment length: " + seg.id);
    if (seg.speed_limit && *seg.speed_limit <= 0.0) {
      throw DataError("nonpositive speed limit: " + seg.id);
    }
    if (index_by_id_.count(seg.id)) throw DataError("duplicate segment id: " + seg.id);
    SegmentIndex idx = static_cast<SegmentIndex>(segments_.size());
    index_by_id_.emplace(seg.id, idx);
    segments_.push_back(std::move(seg));
    return idx;
  }

  const Segment& segment(SegmentIndex i) const { return segments_.at(i); }
  size_t size() const { return segments_.size(); }

  std::optional<SegmentIndex> find(const std::string& id) const {
    auto it = index_by_id_.find(id);
    if (it == index_by_id_.end()) return std::nullopt;
    return it->second;
  }

  SegmentIndex require(const std::string& id) const {
    auto idx = find(id);
    if (!idx) throw DataError("unknown segment id: " + id);
    return *idx;
  }

  bool connected(SegmentIndex a, SegmentIndex b) const {
    return segment(a).target == segment(b).source;
  }

 private:
  std::vector<Segment> segments_;
  std::unordered_map<std::string, SegmentIndex> index_by_id_;
};

/// Ordered, graph-connected, non-empty list of segment indices.
using Route = std::vector<SegmentIndex>;

inline void validate_route(const Route& route, const RoadNetwork& net) {
  if (route.empty()) throw DataError("empty route");
  for (size_t i = 0; i + 1 < route.size(); ++i) {
    if (!net.connected(route[i], route[i + 1])) {
      throw DataError("route not connected at position " + std::to_string(i));
    }
  }
}

struct Traversal {
  SegmentIndex segment = 0;
  std::optional<TimeOfWeek> arrival;
  std::optional<double> speed;  // m/s
};

struct Trajectory {
  std::string id;
  std::vector<Traversal> traversals;

  Route route() const {
    Route r;
    r.reserve(traversals.size());
    for (const auto& t : traversals) r.push_back(t.segment);
    return r;
  }
};

/// Window of 2c+1 segment indices centered at i; out-of-route positions
/// hold kBoundary. Contexts compare position-wise including sentinels.
using Context = std::vector<SegmentIndex>;

inline Context route_context(const Route& route, size_t i, int c) {
  Context ctx;
  ctx.reserve(2 * c + 1);
  for (int off = -c; off <= c; ++off) {
    long j = static_cast<long>(i) + off;
    if (j < 0 || j >= static_cast<long>(route.size())) {
      ctx.push_back(kBoundary);
    } else {
      ctx.push_back(route[j]);
    }
  }
  return ctx;
}

// ---------------------------------------------------------------------------
// CSV parsing.
// Network CSV: segment_id,source,target,length_m,category,speed_limit_kmh,
//              in_city_source,in_city_target,f1..f16
// Trajectory CSV: trip_id,seq,segment_id,arrival_tow_s,speed_mps
// Empty cells mean "missing".

namespace detail {

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  out.push_back(cur);
  return out;
}

inline double parse_real(const std::string& s, int line_no, const char* what) {
  try {
    size_t pos = 0;
    double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw DataError("line " + std::to_string(line_no) + ": bad " + what + " '" + s + "'");
  }
}

inline long parse_int(const std::string& s, int line_no, const char* what) {
  try {
    size_t pos = 0;
    long v = std::stol(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw DataError("line " + std::to_string(line_no) + ": bad " + what + " '" + s + "'");
  }
}

inline bool parse_bool(const std::string& s, int line_no, const char* what) {
  if (s == "1" || s == "true") return true;
  if (s == "0" || s == "false") return false;
  throw DataError("line " + std::to_string(line_no) + ": bad " + what + " '" + s + "'");
}

}  // namespace detail

inline const std::string kNetworkHeader =
    "segment_id,source,target,length_m,category,speed_limit_kmh,"
    "in_city_source,in_city_target,"
    "f1,f2,f3,f4,f5,f6,f7,f8,f9,f10,f11,f12,f13,f14,f15,f16";

inline const std::string kTrajectoryHeader =
    "trip_id,seq,segment_id,arrival_tow_s,speed_mps";

inline RoadNetwork parse_network(std::istream& in) {
  RoadNetwork net;
  std::string line;
  int line_no = 0;
  if (!std::getline(in, line)) throw DataError("empty network file");
  ++line_no;
  if (detail::split_csv(line) != detail::split_csv(kNetworkHeader)) {
    throw DataError("network file: unexpected header");
  }
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto cells = detail::split_csv(line);
    if (cells.size() != 8u + kSegmentFeatures) {
      throw DataError("line " + std::to_string(line_no) + ": expected " +
                      std::to_string(8 + kSegmentFeatures) + " columns, got " +
                      std::to_string(cells.size()));
    }
    Segment seg;
    seg.id = cells[0];
    seg.source = cells[1];
    seg.target = cells[2];
    seg.length = detail::parse_real(cells[3], line_no, "length_m");
    if (seg.length <= 0.0) {
      throw DataError("line " + std::to_string(line_no) + ": nonpositive length");
    }
    seg.category = parse_category(cells[4]);
    if (!cells[5].empty()) {
      double kmh = detail::parse_real(cells[5], line_no, "speed_limit_kmh");
      if (kmh <= 0.0) {
        throw DataError("line " + std::to_string(line_no) + ": nonpositive speed limit");
      }
      seg.speed_limit = kmh * kKmhToMps;
    }
    seg.in_city_source = detail::parse_bool(cells[6], line_no, "in_city_source");
    seg.in_city_target = detail::parse_bool(cells[7], line_no, "in_city_target");
    for (int f = 0; f < kSegmentFeatures; ++f) {
      seg.features[f] = detail::parse_real(cells[8 + f], line_no, "feature");
    }
    try {
      net.add_segment(std::move(seg));
    } catch (const DataError& e) {
      throw DataError("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return net;
}

inline RoadNetwork parse_network(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open network file: " + path);
  return parse_network(in);
}

inline std::vector<Trajectory> parse_trajectories(std::istream& in,
                                                  const RoadNetwork& net) {
  std::string line;
  int line_no = 0;
  if (!std::getline(in, line)) throw DataError("empty trajectory file");
  ++line_no;
  if (detail::split_csv(line) != detail::split_csv(kTrajectoryHeader)) {
    throw DataError("trajectory file: unexpected header");
  }

  std::vector<Trajectory> out;
  std::unordered_map<std::string, size_t> by_trip;
  std::vector<long> last_seq;

  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto cells = detail::split_csv(line);
    if (cells.size() != 5) {
      throw DataError("line " + std::to_string(line_no) + ": expected 5 columns");
    }
    const std::string& trip = cells[0];
    long seq = detail::parse_int(cells[1], line_no, "seq");

    Traversal tr;
    tr.segment = [&] {
      auto idx = net.find(cells[2]);
      if (!idx) {
        throw DataError("line " + std::to_string(line_no) + ": unknown segment '" +
                        cells[2] + "'");
      }
      return *idx;
    }();
    if (!cells[3].empty()) {
      tr.arrival = TimeOfWeek(detail::parse_real(cells[3], line_no, "arrival_tow_s"));
    }
    if (!cells[4].empty()) {
      double v = detail::parse_real(cells[4], line_no, "speed_mps");
      if (v <= 0.0) {
        throw DataError("line " + std::to_string(line_no) + ": nonpositive speed");
      }
      tr.speed = v;
    }

    auto it = by_trip.find(trip);
    if (it == by_trip.end()) {
      if (seq != 0) {
        throw DataError("line " + std::to_string(line_no) + ": trip '" + trip +
                        "' does not start at seq 0");
      }
      by_trip.emplace(trip, out.size());
      last_seq.push_back(0);
      out.push_back(Trajectory{trip, {tr}});
    } else {
      size_t pos = it->second;
      if (seq != last_seq[pos] + 1) {
        throw DataError("line " + std::to_string(line_no) +
                        ": non-contiguous seq for trip '" + trip + "'");
      }
      last_seq[pos] = seq;
      out[pos].traversals.push_back(tr);
    }
  }

  for (const auto& tj : out) {
    if (!tj.traversals.front().arrival) {
      throw DataError("trip '" + tj.id + "': first traversal has no arrival time");
    }
    validate_route(tj.route(), net);
  }
  return out;
}

inline std::vector<Trajectory> parse_trajectories(const std::string& path,
                                                  const RoadNetwork& net) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open trajectory file: " + path);
  return parse_trajectories(in, net);
}

inline void serialize_trajectories(std::ostream& out,
                                   const std::vector<Trajectory>& trajectories,
                                   const RoadNetwork& net) {
  out << kTrajectoryHeader << "\n";
  char buf[64];
  for (const auto& tj : trajectories) {
    for (size_t i = 0; i < tj.traversals.size(); ++i) {
      const auto& tr = tj.traversals[i];
      out << tj.id << ',' << i << ',' << net.segment(tr.segment).id << ',';
      if (tr.arrival) {
        std::snprintf(buf, sizeof buf, "%.17g", tr.arrival->seconds);
        out << buf;
      }
      out << ',';
      if (tr.speed) {
        std::snprintf(buf, sizeof buf, "%.17g", *tr.speed);
        out << buf;
      }
      out << '\n';
    }
  }
}

inline void serialize_network(std::ostream& out, const RoadNetwork& net) {
  out << kNetworkHeader << "\n";
  char buf[64];
  auto num = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  for (size_t i = 0; i < net.size(); ++i) {
    const Segment& s = net.segment(static_cast<SegmentIndex>(i));
    out << s.id << ',' << s.source << ',' << s.target << ',' << num(s.length) << ','
        << category_name(s.category) << ',';
    if (s.speed_limit) out << num(*s.speed_limit / kKmhToMps);
    out << ',' << (s.in_city_source ? 1 : 0) << ',' << (s.in_city_target ? 1 : 0);
    for (double f : s.features) out << ',' << num(f);
    out << '\n';
  }
}

}  // namespace unite

#endif  // UNITE_CORE_HPP
