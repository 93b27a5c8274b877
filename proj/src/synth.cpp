#include "gsmt/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>

#include "gsmt/error.hpp"

namespace gsmt::synth {

namespace {

// splitmix64 finaliser
std::uint64_t mix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Uniform in [0, 1) keyed by (seed, bus, fix, stream).
double counter_uniform(std::uint64_t seed, std::uint64_t bus, std::uint64_t fix, std::uint64_t stream) {
  std::uint64_t h = mix(seed);
  h = mix(h ^ bus);
  h = mix(h ^ fix);
  h = mix(h ^ stream);
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

double counter_normal(std::uint64_t seed, std::uint64_t bus, std::uint64_t fix, std::uint64_t stream) {
  const double u1 = 1.0 - counter_uniform(seed, bus, fix, stream);  // (0, 1]
  const double u2 = counter_uniform(seed, bus, fix, stream + 1);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * geo::kPi * u2);
}

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return lo + (hi - lo) * (static_cast<double>(rng() >> 11) * 0x1.0p-53);
}

enum Stream : std::uint64_t { kDropout = 0, kNoiseEast = 1, kNoiseNorth = 3 };

}  // namespace

const char* to_string(RouteKind kind) { return kind == RouteKind::loop ? "loop" : "corridor"; }

RouteKind route_kind_from_string(const std::string& name) {
  if (name == "loop") return RouteKind::loop;
  if (name == "corridor") return RouteKind::corridor;
  throw ConfigError("unknown route kind '" + name + "' (expected loop or corridor)");
}

RouteSpec::RouteSpec(std::vector<geo::LatLon> waypoints, bool loop)
    : waypoints_(std::move(waypoints)), loop_(loop) {
  if (waypoints_.size() < 2) throw ContractError("route needs at least 2 waypoints");
  cumulative_.assign(1, 0.0);
  for (std::size_t i = 1; i < waypoints_.size(); ++i) {
    const double d = geo::haversine_m(waypoints_[i - 1], waypoints_[i]);
    if (!(d > 0.0)) {
      throw ContractError("route waypoints " + std::to_string(i - 1) + " and " + std::to_string(i) +
                          " coincide");
    }
    cumulative_.push_back(cumulative_.back() + d);
  }
}

double RouteSpec::fold(double s) const {
  const double len = length_m();
  const double period = loop_ ? len : 2.0 * len;
  double f = std::fmod(s, period);
  if (f < 0.0) f += period;
  if (!loop_ && f > len) f = period - f;
  return f;
}

geo::LatLon RouteSpec::position_at(double s) const {
  const double f = fold(s);
  auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), f);
  std::size_t seg = it == cumulative_.begin() ? 0 : static_cast<std::size_t>(it - cumulative_.begin()) - 1;
  seg = std::min(seg, waypoints_.size() - 2);
  const double w = (f - cumulative_[seg]) / (cumulative_[seg + 1] - cumulative_[seg]);
  const auto& a = waypoints_[seg];
  const auto& b = waypoints_[seg + 1];
  return {a.lat + w * (b.lat - a.lat), a.lon + w * (b.lon - a.lon)};
}

RouteSpec make_route(RouteKind kind, std::size_t n_waypoints, double extent_km, std::uint64_t seed) {
  if (n_waypoints < 2) throw ContractError("make_route: n_waypoints must be >= 2");
  if (kind == RouteKind::loop && n_waypoints < 3) throw ContractError("make_route: a loop needs >= 3 waypoints");
  if (!(extent_km > 0.0)) throw ContractError("make_route: extent_km must be > 0");
  std::mt19937_64 rng(seed);
  const double extent_m = extent_km * 1000.0;

  std::vector<geo::PlanarOffset> pts;
  if (kind == RouteKind::corridor) {
    double heading = uniform(rng, 0.0, 2.0 * geo::kPi);
    pts.push_back({0.0, 0.0});
    for (std::size_t i = 1; i < n_waypoints; ++i) {
      if (i > 1) heading += uniform(rng, -0.2, 0.2);
      pts.push_back({pts.back().east + std::cos(heading), pts.back().north + std::sin(heading)});
    }
  } else {
    const double phase = uniform(rng, 0.0, 2.0 * geo::kPi);
    const double slot = 2.0 * geo::kPi / static_cast<double>(n_waypoints);
    for (std::size_t i = 0; i < n_waypoints; ++i) {
      const double a = phase + slot * (static_cast<double>(i) + uniform(rng, -0.25, 0.25));
      const double r = 1.0 + uniform(rng, -0.1, 0.1);
      pts.push_back({r * std::cos(a), r * std::sin(a)});
    }
    pts.push_back(pts.front());
  }

  double planar = 0.0;
  for (std::size_t i = 1; i < pts.size(); ++i) {
    planar += std::hypot(pts[i].east - pts[i - 1].east, pts[i].north - pts[i - 1].north);
  }
  const double k = extent_m / planar;
  std::vector<geo::LatLon> waypoints;
  waypoints.reserve(pts.size());
  for (const auto& p : pts) waypoints.push_back(geo::from_local(kAnchor, {p.east * k, p.north * k}));
  if (kind == RouteKind::loop) waypoints.back() = waypoints.front();
  return RouteSpec(std::move(waypoints), kind == RouteKind::loop);
}

void FleetSpec::validate() const {
  if (n_buses < 1) throw ConfigError("synth.n_buses must be >= 1");
  if (!(headway_s >= 0.0)) throw ConfigError("synth.headway_s must be >= 0");
  if (!(base_speed_kmh > 0.0)) throw ConfigError("synth.base_speed_kmh must be > 0");
  if (!(gps_noise_m >= 0.0)) throw ConfigError("synth.gps_noise_m must be >= 0");
  if (!(dropout_prob >= 0.0 && dropout_prob < 1.0)) throw ConfigError("synth.dropout_prob must lie in [0, 1)");
  if (!(fix_interval_s > 0.0)) throw ConfigError("synth.fix_interval_s must be > 0");
  if (!(integration_step_s > 0.0)) throw ConfigError("synth integration step must be > 0");
  for (const auto& z : congestion) {
    if (!(z.multiplier > 0.0 && z.multiplier <= 1.0)) {
      throw ConfigError("synth congestion multiplier must lie in (0, 1]");
    }
  }
}

double speed_at(const FleetSpec& fleet, const RouteSpec& route, double arc_m, double t) {
  const double folded = route.fold(arc_m);
  double v = fleet.base_speed_kmh;
  for (const auto& z : fleet.congestion) {
    if (z.active(folded, t)) v *= z.multiplier;
  }
  return v;
}

std::vector<BusState> bus_trajectory(const RouteSpec& route, const FleetSpec& fleet,
                                     std::size_t index, double duration_s) {
  const double departure = static_cast<double>(index) * fleet.headway_s;
  const auto fixes = static_cast<std::size_t>(std::floor(duration_s / fleet.fix_interval_s)) + 1;
  std::vector<BusState> out;
  out.reserve(fixes);
  double t = 0.0;
  double arc = 0.0;
  for (std::size_t k = 0; k < fixes; ++k) {
    const double t_fix = static_cast<double>(k) * fleet.fix_interval_s;
    while (t < t_fix) {
      double next = std::min(t + fleet.integration_step_s, t_fix);
      if (t < departure) {
        t = std::min(departure, t_fix);
        continue;
      }
      arc += speed_at(fleet, route, arc, t) / 3.6 * (next - t);
      t = next;
    }
    BusState s;
    s.arc_m = arc;
    s.speed_kmh = t_fix >= departure ? speed_at(fleet, route, arc, t_fix) : 0.0;
    out.push_back(s);
  }
  return out;
}

std::string bus_name(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "bus-%02zu", index + 1);
  return buf;
}

std::vector<GpsRecord> simulate(const RouteSpec& route, const FleetSpec& fleet, double duration_s,
                                std::vector<std::string>* warnings) {
  fleet.validate();
  if (!(duration_s >= 0.0)) throw ConfigError("synth.duration_s must be >= 0");
  if (warnings && duration_s <= fleet.headway_s * static_cast<double>(fleet.n_buses)) {
    warnings->push_back("synth: duration does not exceed headway x n_buses; late buses run briefly");
  }
  std::vector<GpsRecord> records;
  for (std::size_t bus = 0; bus < fleet.n_buses; ++bus) {
    if (static_cast<double>(bus) * fleet.headway_s > duration_s) {
      if (warnings) warnings->push_back("synth: " + bus_name(bus) + " never departs");
      continue;
    }
    const auto states = bus_trajectory(route, fleet, bus, duration_s);
    const std::string name = bus_name(bus);
    for (std::size_t k = 0; k < states.size(); ++k) {
      if (fleet.dropout_prob > 0.0 && counter_uniform(fleet.seed, bus, k, kDropout) < fleet.dropout_prob) {
        continue;
      }
      geo::LatLon p = route.position_at(states[k].arc_m);
      if (fleet.gps_noise_m > 0.0) {
        p = geo::from_local(p, {fleet.gps_noise_m * counter_normal(fleet.seed, bus, k, kNoiseEast),
                                fleet.gps_noise_m * counter_normal(fleet.seed, bus, k, kNoiseNorth)});
      }
      records.push_back({name, fleet.start_time + static_cast<double>(k) * fleet.fix_interval_s, p.lat,
                         p.lon, states[k].speed_kmh});
    }
  }
  return records;
}

double distance_to_route_m(const RouteSpec& route, geo::LatLon p) {
  double best = std::numeric_limits<double>::infinity();
  const auto& w = route.waypoints();
  for (std::size_t i = 0; i + 1 < w.size(); ++i) {
    const auto a = geo::to_local(p, w[i]);
    const auto b = geo::to_local(p, w[i + 1]);
    const double dx = b.east - a.east;
    const double dy = b.north - a.north;
    const double len2 = dx * dx + dy * dy;
    double u = len2 > 0.0 ? -(a.east * dx + a.north * dy) / len2 : 0.0;
    u = std::clamp(u, 0.0, 1.0);
    best = std::min(best, std::hypot(a.east + u * dx, a.north + u * dy));
  }
  return best;
}

}  // namespace gsmt::synth
