#include <random>
#include <sstream>

#include "doctest.h"
#include "unite/core.hpp"

using namespace unite;

namespace {

std::string network_row(const std::string& id, const std::string& src,
                        const std::string& tgt, const std::string& len,
                        const std::string& cat, const std::string& limit) {
  std::string row = id + "," + src + "," + tgt + "," + len + "," + cat + "," + limit +
                    ",0,0";
  for (int f = 0; f < 16; ++f) row += ",0.5";
  return row;
}

RoadNetwork small_network() {
  std::stringstream ss;
  ss << kNetworkHeader << "\n"
     << network_row("s1", "a", "b", "120.0", "motorway", "130") << "\n"
     << network_row("s2", "b", "c", "80.0", "urban", "") << "\n"
     << network_row("s3", "c", "a", "200.0", "rural", "80") << "\n";
  return parse_network(ss);
}

}  // namespace

TEST_CASE("parse_network maps fields and units") {
  RoadNetwork net = small_network();
  REQUIRE(net.size() == 3);
  const Segment& s1 = net.segment(net.require("s1"));
  CHECK(s1.length == doctest::Approx(120.0));
  CHECK(s1.category == RoadCategory::motorway);
  REQUIRE(s1.speed_limit.has_value());
  CHECK(*s1.speed_limit == doctest::Approx(130.0 / 3.6));  // 36.11 m/s
  CHECK_FALSE(net.segment(net.require("s2")).speed_limit.has_value());
}

TEST_CASE("parse_network rejects bad rows with line numbers") {
  auto parse = [](const std::string& row) {
    std::stringstream ss;
    ss << kNetworkHeader << "\n" << row << "\n";
    return parse_network(ss);
  };
  CHECK_THROWS_WITH_AS(parse(network_row("s2", "a", "b", "-5", "urban", "")),
                       doctest::Contains("line 2"), DataError);
  CHECK_THROWS_AS(parse(network_row("s1", "a", "b", "10", "boulevard", "")), DataError);
  std::stringstream dup;
  dup << kNetworkHeader << "\n"
      << network_row("s1", "a", "b", "10", "urban", "") << "\n"
      << network_row("s1", "b", "c", "10", "urban", "") << "\n";
  CHECK_THROWS_AS(parse_network(dup), DataError);
}

TEST_CASE("parse_trajectories groups and validates") {
  RoadNetwork net = small_network();
  std::stringstream ss;
  ss << kTrajectoryHeader << "\n"
     << "t1,0,s1,3600,25.0\n"
     << "t1,1,s2,,\n";  // missing speed and arrival
  auto trajectories = parse_trajectories(ss, net);
  REQUIRE(trajectories.size() == 1);
  REQUIRE(trajectories[0].traversals.size() == 2);
  CHECK_FALSE(trajectories[0].traversals[1].speed.has_value());
  CHECK_FALSE(trajectories[0].traversals[1].arrival.has_value());
  CHECK(trajectories[0].traversals[0].arrival->seconds == doctest::Approx(3600.0));

  SUBCASE("unknown segment") {
    std::stringstream bad;
    bad << kTrajectoryHeader << "\nt1,0,zz,0,10\n";
    CHECK_THROWS_AS(parse_trajectories(bad, net), DataError);
  }
  SUBCASE("non-contiguous seq") {
    std::stringstream bad;
    bad << kTrajectoryHeader << "\nt1,0,s1,0,10\nt1,2,s2,,\n";
    CHECK_THROWS_AS(parse_trajectories(bad, net), DataError);
  }
  SUBCASE("first traversal must have arrival") {
    std::stringstream bad;
    bad << kTrajectoryHeader << "\nt1,0,s1,,10\n";
    CHECK_THROWS_AS(parse_trajectories(bad, net), DataError);
  }
  SUBCASE("route must be connected") {
    std::stringstream bad;
    bad << kTrajectoryHeader << "\nt1,0,s1,0,10\nt1,1,s3,,\n";
    CHECK_THROWS_AS(parse_trajectories(bad, net), DataError);
  }
}

TEST_CASE("trajectory serialization round-trips") {
  RoadNetwork net = small_network();
  std::stringstream ss;
  ss << kTrajectoryHeader << "\n"
     << "t1,0,s1,3600.25,25.5\n"
     << "t1,1,s2,,\n"
     << "t2,0,s2,100,\n";
  auto original = parse_trajectories(ss, net);
  std::stringstream out;
  serialize_trajectories(out, original, net);
  auto reparsed = parse_trajectories(out, net);
  REQUIRE(reparsed.size() == original.size());
  for (size_t t = 0; t < original.size(); ++t) {
    REQUIRE(reparsed[t].traversals.size() == original[t].traversals.size());
    CHECK(reparsed[t].id == original[t].id);
    for (size_t i = 0; i < original[t].traversals.size(); ++i) {
      const auto& a = original[t].traversals[i];
      const auto& b = reparsed[t].traversals[i];
      CHECK(a.segment == b.segment);
      CHECK(a.speed == b.speed);
      CHECK(a.arrival.has_value() == b.arrival.has_value());
      if (a.arrival) CHECK(a.arrival->seconds == b.arrival->seconds);
    }
  }
}

TEST_CASE("network serialization round-trips") {
  RoadNetwork net = small_network();
  std::stringstream out;
  serialize_network(out, net);
  RoadNetwork again = parse_network(out);
  REQUIRE(again.size() == net.size());
  for (size_t i = 0; i < net.size(); ++i) {
    auto idx = static_cast<SegmentIndex>(i);
    CHECK(again.segment(idx).id == net.segment(idx).id);
    CHECK(again.segment(idx).length == net.segment(idx).length);
    CHECK(again.segment(idx).speed_limit == net.segment(idx).speed_limit);
  }
}

TEST_CASE("tow_distance basics") {
  CHECK(tow_distance(TimeOfWeek(60), TimeOfWeek(60)) == 0.0);
  CHECK(tow_distance(TimeOfWeek(0), TimeOfWeek(604740)) == doctest::Approx(60.0));
  CHECK(tow_distance(TimeOfWeek(100000), TimeOfWeek(200000)) == doctest::Approx(100000.0));
}

TEST_CASE("tow_distance is a circular metric") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> dist(0.0, kSecondsPerWeek);
  for (int it = 0; it < 2000; ++it) {
    TimeOfWeek a(dist(rng)), b(dist(rng)), c(dist(rng));
    double ab = tow_distance(a, b);
    CHECK(ab == tow_distance(b, a));
    CHECK(ab >= 0.0);
    CHECK(ab <= 302400.0);
    CHECK(ab <= tow_distance(a, c) + tow_distance(c, b) + 1e-9);
    // brute force over both directions around the circle
    double fwd = std::fmod(b.seconds - a.seconds + kSecondsPerWeek, kSecondsPerWeek);
    CHECK(ab == doctest::Approx(std::min(fwd, kSecondsPerWeek - fwd)));
  }
}

TEST_CASE("route_context windows and sentinels") {
  Route route{10, 11, 12};
  CHECK(route_context(route, 1, 1) == Context{10, 11, 12});
  CHECK(route_context(route, 0, 1) == Context{kBoundary, 10, 11});
  CHECK(route_context(route, 2, 2) == Context{10, 11, 12, kBoundary, kBoundary});
  for (size_t i = 0; i < route.size(); ++i) {
    CHECK(route_context(route, i, 0) == Context{route[i]});
  }
  // sentinel positions distinguish boundary contexts from interior ones
  Route longer{9, 10, 11, 12};
  CHECK(route_context(route, 0, 1) != route_context(longer, 1, 1));
}

TEST_CASE("TimeOfWeek helpers") {
  CHECK_THROWS_AS(TimeOfWeek(-1.0), DataError);
  CHECK_THROWS_AS(TimeOfWeek(604800.0), DataError);
  CHECK(TimeOfWeek::wrap(604800.0 + 5.0).seconds == doctest::Approx(5.0));
  CHECK(TimeOfWeek::wrap(-5.0).seconds == doctest::Approx(604795.0));
  TimeOfWeek monday_morning(600.0);  // 0:10 Monday
  CHECK(monday_morning.day_of_week() == 0);
  CHECK(monday_morning.quarter_hour() == 0);
  TimeOfWeek sunday_late(6 * kSecondsPerDay + 23 * 3600.0 + 59 * 60.0);
  CHECK(sunday_late.day_of_week() == 6);
  CHECK(sunday_late.quarter_hour() == 95);
}
