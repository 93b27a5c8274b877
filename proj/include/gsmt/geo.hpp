#pragma once

namespace gsmt::geo {

inline constexpr double kEarthRadiusM = 6371000.0;
inline constexpr double kPi = 3.14159265358979323846;

constexpr double deg2rad(double deg) { return deg * kPi / 180.0; }
constexpr double rad2deg(double rad) { return rad * 180.0 / kPi; }

struct LatLon {
  double lat = 0.0;
  double lon = 0.0;
};

/// Great-circle distance in meters.
double haversine_m(LatLon a, LatLon b);

/// Local planar offset (east, north) in meters of `p` relative to `origin`,
/// using the equirectangular approximation at the origin's latitude.
struct PlanarOffset {
  double east = 0.0;
  double north = 0.0;
};

PlanarOffset to_local(LatLon origin, LatLon p);
LatLon from_local(LatLon origin, PlanarOffset offset);

}  // namespace gsmt::geo
