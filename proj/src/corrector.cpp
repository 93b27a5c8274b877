#include "gsmt/corrector.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "gsmt/error.hpp"

namespace gsmt {

namespace {

double percentile(std::span<const double> sorted, double p) {
  const double pos = p * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  const double w = pos - static_cast<double>(lo);
  return sorted[lo] + w * (sorted[hi] - sorted[lo]);
}

std::size_t nearest(double x, const std::array<double, 3>& c) {
  std::size_t best = 0;
  double best_d = std::fabs(x - c[0]);
  for (std::size_t k = 1; k < 3; ++k) {
    const double d = std::fabs(x - c[k]);
    if (d < best_d) {
      best = k;
      best_d = d;
    }
  }
  return best;
}

// Assignment and update over values that are already sorted, so cluster sums
// are accumulated in a canonical order.
std::array<double, 3> lloyd_sorted(std::span<const double> sorted, const std::array<double, 3>& c,
                                   std::vector<std::uint8_t>* assignment) {
  std::array<double, 3> sum{};
  std::array<std::size_t, 3> count{};
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    const auto k = nearest(sorted[i], c);
    sum[k] += sorted[i];
    ++count[k];
    if (assignment) (*assignment)[i] = static_cast<std::uint8_t>(k);
  }
  std::array<double, 3> next = c;
  for (std::size_t k = 0; k < 3; ++k)
    if (count[k] > 0) next[k] = sum[k] / static_cast<double>(count[k]);
  return next;
}

}  // namespace

const char* to_string(MotionMode mode) {
  switch (mode) {
    case MotionMode::low: return "low";
    case MotionMode::medium: return "medium";
    case MotionMode::high: return "high";
  }
  return "?";
}

std::array<double, 3> kmeans_iteration(std::span<const double> values,
                                       const std::array<double, 3>& centroids) {
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  return lloyd_sorted(sorted, centroids, nullptr);
}

KMeansResult kmeans3(std::span<const double> values) {
  std::vector<double> sorted(values.begin(), values.end());
  for (double v : sorted) {
    if (!std::isfinite(v)) throw DataError("kmeans: non-finite value");
  }
  std::sort(sorted.begin(), sorted.end());
  std::vector<double> distinct = sorted;
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  if (distinct.size() < 3) {
    throw DataError("kmeans: need at least 3 distinct values, got " + std::to_string(distinct.size()));
  }

  std::array<double, 3> c = {percentile(sorted, 0.1), percentile(sorted, 0.5), percentile(sorted, 0.9)};
  if (!(c[0] < c[1] && c[1] < c[2])) {
    // Heavy ties collapse the percentiles; seed from the distinct values instead.
    c = {percentile(distinct, 0.1), percentile(distinct, 0.5), percentile(distinct, 0.9)};
  }

  KMeansResult result;
  std::vector<std::uint8_t> assignment(sorted.size(), 255), previous;
  for (std::size_t it = 0; it < 100; ++it) {
    previous = assignment;
    const auto next = lloyd_sorted(sorted, c, &assignment);
    result.iterations = it + 1;
    if (assignment == previous) break;
    c = next;
  }
  std::sort(c.begin(), c.end());
  result.centroids = c;
  return result;
}

MotionModeModel fit_modes(std::span<const double> speeds_kmh, const std::array<double, 3>& blend) {
  for (double b : blend) {
    if (!(b >= 0.0 && b <= 1.0)) throw ConfigError("corrector: beta values must lie in [0, 1]");
  }
  MotionModeModel model;
  model.centroids = kmeans3(speeds_kmh).centroids;
  model.blend = blend;
  return model;
}

MotionMode classify(double speed_kmh, const MotionModeModel& model) {
  return static_cast<MotionMode>(nearest(speed_kmh, model.centroids));
}

KinematicState make_kinematic_state(geo::LatLon previous, geo::LatLon last, double mean_speed_kmh) {
  KinematicState s;
  s.previous = previous;
  s.last = last;
  s.mean_speed_kmh = mean_speed_kmh;
  const auto back = geo::to_local(last, previous);
  const double norm = std::hypot(back.east, back.north);
  if (norm > 1e-9) {
    s.heading = {-back.east / norm, -back.north / norm};
    s.degenerate = false;
  }
  return s;
}

std::vector<geo::LatLon> kinematic_extrapolate(const KinematicState& state, double speed_kmh,
                                               std::size_t steps, double step_seconds) {
  std::vector<geo::LatLon> out;
  out.reserve(steps);
  const double per_step = speed_kmh / 3.6 * step_seconds;
  for (std::size_t k = 1; k <= steps; ++k) {
    if (state.degenerate || per_step == 0.0) {
      out.push_back(state.last);
      continue;
    }
    const double dist = per_step * static_cast<double>(k);
    out.push_back(geo::from_local(state.last, {state.heading.east * dist, state.heading.north * dist}));
  }
  return out;
}

FrameArray correct(const FrameArray& raw, const FrameArray& extrapolated,
                   std::span<const double> beta_per_node) {
  if (raw.steps != extrapolated.steps || raw.nodes != extrapolated.nodes ||
      raw.features != extrapolated.features || raw.values.size() != extrapolated.values.size()) {
    throw DimensionError("correct: raw and extrapolated frames differ in shape");
  }
  if (beta_per_node.size() != raw.nodes) {
    throw DimensionError("correct: one beta per node required");
  }
  FrameArray out = raw;
  for (std::size_t s = 0; s < raw.steps; ++s)
    for (std::size_t b = 0; b < raw.nodes; ++b) {
      const double beta = beta_per_node[b];
      if (!(beta >= 0.0 && beta <= 1.0)) throw ContractError("correct: beta outside [0, 1]");
      for (std::size_t f = 0; f < raw.features; ++f) {
        const double r = raw.at(s, b, f);
        const double e = extrapolated.at(s, b, f);
        double c;
        if (beta == 0.0) {
          c = r;
        } else if (beta == 1.0) {
          c = e;
        } else {
          c = std::clamp(r + beta * (e - r), std::min(r, e), std::max(r, e));
        }
        out.at(s, b, f) = c;
      }
    }
  return out;
}

FrameArray correct(const FrameArray& raw, const FrameArray& extrapolated, double beta) {
  std::vector<double> betas(raw.nodes, beta);
  return correct(raw, extrapolated, betas);
}

void CorrectorConfig::validate() const {
  for (double b : beta) {
    if (!(b >= 0.0 && b <= 1.0)) throw ConfigError("corrector: beta values must lie in [0, 1]");
  }
  if (recent_steps < 1) throw ConfigError("corrector.recent_steps must be >= 1");
}

FrameArray correct_window(const FrameArray& input, const FrameArray& prediction,
                          const NormStats& stats, const MotionModeModel& modes,
                          const CorrectorConfig& config, double step_seconds) {
  config.validate();
  if (input.nodes != prediction.nodes || input.features != 3 || prediction.features != 2 || input.steps == 0) {
    throw DimensionError("correct_window: input must be L_in x N x 3 and prediction L_out x N x 2");
  }
  const std::size_t n = input.nodes;
  const std::size_t last = input.steps - 1;
  const std::size_t prev = input.steps >= 2 ? input.steps - 2 : last;
  const std::size_t recent = std::min(config.recent_steps, input.steps);

  FrameArray extrapolated(prediction.steps, n, 2);
  std::vector<double> betas(n);
  for (std::size_t b = 0; b < n; ++b) {
    double speed = 0.0;
    for (std::size_t k = input.steps - recent; k < input.steps; ++k) {
      speed += stats.denormalize(Feature::speed, input.at(k, b, 2));
    }
    speed = std::max(0.0, speed / static_cast<double>(recent));
    const geo::LatLon p0{stats.denormalize(Feature::lat, input.at(prev, b, 0)),
                         stats.denormalize(Feature::lon, input.at(prev, b, 1))};
    const geo::LatLon p1{stats.denormalize(Feature::lat, input.at(last, b, 0)),
                         stats.denormalize(Feature::lon, input.at(last, b, 1))};
    const auto state = make_kinematic_state(p0, p1, speed);
    const auto mode = classify(speed, modes);
    betas[b] = modes.beta(mode);
    const auto path = kinematic_extrapolate(state, modes.centroid(mode), prediction.steps, step_seconds);
    for (std::size_t s = 0; s < prediction.steps; ++s) {
      extrapolated.at(s, b, 0) = stats.normalize(Feature::lat, path[s].lat);
      extrapolated.at(s, b, 1) = stats.normalize(Feature::lon, path[s].lon);
    }
  }
  return correct(prediction, extrapolated, betas);
}

}  // namespace gsmt
