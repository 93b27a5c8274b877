#pragma once

// Synthetic bus fleet: buses run along a route polyline with fixed headways,
// slowed by congestion zones, reporting noisy GPS fixes with dropout.

#include <cstdint>
#include <string>
#include <vector>

#include "gsmt/geo.hpp"
#include "gsmt/ingest.hpp"

namespace gsmt::synth {

inline constexpr geo::LatLon kAnchor{3.14, 101.69};

enum class RouteKind { loop, corridor };

const char* to_string(RouteKind kind);
RouteKind route_kind_from_string(const std::string& name);

class RouteSpec {
 public:
  /// Throws ContractError for fewer than 2 waypoints or repeated consecutive
  /// waypoints. A loop route returns to its first waypoint and wraps; buses on
  /// a corridor turn back at either end.
  RouteSpec(std::vector<geo::LatLon> waypoints, bool loop);

  const std::vector<geo::LatLon>& waypoints() const { return waypoints_; }
  /// cumulative()[i] is the haversine arc length from waypoint 0 to i.
  const std::vector<double>& cumulative() const { return cumulative_; }
  double length_m() const { return cumulative_.back(); }
  bool loop() const { return loop_; }

  /// Position after travelling `s` metres from waypoint 0. Linear in lat/lon
  /// within a segment.
  geo::LatLon position_at(double s) const;
  /// Distance travelled mapped onto [0, length]: wrapped for loops, reflected
  /// at the ends for corridors.
  double fold(double s) const;

 private:
  std::vector<geo::LatLon> waypoints_;
  std::vector<double> cumulative_;
  bool loop_;
};

/// Smooth random polyline of about `extent_km` total length starting near
/// kAnchor. A loop needs at least 3 waypoints.
RouteSpec make_route(RouteKind kind, std::size_t n_waypoints, double extent_km, std::uint64_t seed);

struct CongestionZone {
  double arc_begin_m = 0.0;
  double arc_end_m = 0.0;
  double multiplier = 1.0;  // in (0, 1]
  double time_begin_s = 0.0;
  double time_end_s = 0.0;

  bool active(double arc_m, double t) const {
    return arc_m >= arc_begin_m && arc_m < arc_end_m && t >= time_begin_s && t < time_end_s;
  }
};

struct FleetSpec {
  std::size_t n_buses = 5;
  double headway_s = 300.0;
  double base_speed_kmh = 24.0;
  std::vector<CongestionZone> congestion;
  double gps_noise_m = 8.0;
  double dropout_prob = 0.05;
  double fix_interval_s = 30.0;
  std::uint64_t seed = 42;
  double start_time = 1704693600.0;  // 2024-01-08T06:00:00Z
  double integration_step_s = 1.0;

  void validate() const;
};

/// Speed (km/h) at arc length `arc_m` and time `t`.
double speed_at(const FleetSpec& fleet, const RouteSpec& route, double arc_m, double t);

/// Noiseless state of one bus at one fix time.
struct BusState {
  double arc_m = 0.0;  // unfolded
  double speed_kmh = 0.0;
};

/// Trajectory of bus `index` at every fix time 0, fix_interval, ...
/// Buses wait at arc 0 (speed 0) until departure at index * headway.
std::vector<BusState> bus_trajectory(const RouteSpec& route, const FleetSpec& fleet,
                                     std::size_t index, double duration_s);

std::string bus_name(std::size_t index);

/// Fixes for every bus departing within `duration_s`, sorted by (bus, time).
/// Deterministic for a given seed.
std::vector<GpsRecord> simulate(const RouteSpec& route, const FleetSpec& fleet, double duration_s,
                                std::vector<std::string>* warnings = nullptr);

/// Point-to-polyline distance in metres (local planar approximation).
double distance_to_route_m(const RouteSpec& route, geo::LatLon p);

}  // namespace gsmt::synth
