#include "gsmt/geo.hpp"

#include <algorithm>
#include <cmath>

namespace gsmt::geo {

double haversine_m(LatLon a, LatLon b) {
  const double phi1 = deg2rad(a.lat);
  const double phi2 = deg2rad(b.lat);
  const double dphi = phi2 - phi1;
  const double dlambda = deg2rad(b.lon - a.lon);
  const double s1 = std::sin(dphi / 2.0);
  const double s2 = std::sin(dlambda / 2.0);
  const double h = std::clamp(s1 * s1 + std::cos(phi1) * std::cos(phi2) * s2 * s2, 0.0, 1.0);
  return 2.0 * kEarthRadiusM * std::asin(std::sqrt(h));
}

PlanarOffset to_local(LatLon origin, LatLon p) {
  const double k = deg2rad(1.0) * kEarthRadiusM;
  return {(p.lon - origin.lon) * k * std::cos(deg2rad(origin.lat)), (p.lat - origin.lat) * k};
}

LatLon from_local(LatLon origin, PlanarOffset offset) {
  const double k = deg2rad(1.0) * kEarthRadiusM;
  return {origin.lat + offset.north / k,
          origin.lon + offset.east / (k * std::cos(deg2rad(origin.lat)))};
}

}  // namespace gsmt::geo
