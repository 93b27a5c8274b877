#pragma once

// Post-hoc task corrector: speed-cluster motion modes and a convex blend of
// model predictions with a heading-aligned kinematic extrapolation.

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "gsmt/geo.hpp"
#include "gsmt/ingest.hpp"

namespace gsmt {

enum class MotionMode : std::uint8_t { low = 0, medium = 1, high = 2 };

const char* to_string(MotionMode mode);

struct MotionModeModel {
  std::array<double, 3> centroids{};            // km/h, ascending
  std::array<double, 3> blend{0.1, 0.2, 0.3};  // beta per mode

  double centroid(MotionMode m) const { return centroids[static_cast<std::size_t>(m)]; }
  double beta(MotionMode m) const { return blend[static_cast<std::size_t>(m)]; }
};

struct KMeansResult {
  std::array<double, 3> centroids{};
  std::size_t iterations = 0;
};

/// One Lloyd iteration for k = 3 in one dimension: assign each value to its
/// nearest centroid (ties to the lower index), then move each non-empty
/// cluster's centroid to its mean.
std::array<double, 3> kmeans_iteration(std::span<const double> values,
                                       const std::array<double, 3>& centroids);

/// 1-D k-means with k = 3, initialised at the 10th/50th/90th percentiles
/// (linear interpolation), iterated until assignments stop changing or 100
/// iterations. Throws DataError with fewer than 3 distinct values.
KMeansResult kmeans3(std::span<const double> values);

MotionModeModel fit_modes(std::span<const double> speeds_kmh,
                          const std::array<double, 3>& blend = {0.1, 0.2, 0.3});

/// Nearest centroid; ties go to the lower mode.
MotionMode classify(double speed_kmh, const MotionModeModel& model);

struct KinematicState {
  geo::LatLon previous;
  geo::LatLon last;
  double mean_speed_kmh = 0.0;
  geo::PlanarOffset heading;  // unit vector (east, north); zero when degenerate
  bool degenerate = true;
};

KinematicState make_kinematic_state(geo::LatLon previous, geo::LatLon last, double mean_speed_kmh);

/// Advances `steps` positions from the last fix along the heading at
/// `speed_kmh`, each `step_seconds` apart, in the equirectangular plane
/// anchored at the last fix. A degenerate heading holds the last position.
std::vector<geo::LatLon> kinematic_extrapolate(const KinematicState& state, double speed_kmh,
                                               std::size_t steps, double step_seconds);

/// corrected = (1 - beta) * raw + beta * extrapolated, per step and bus.
/// Arrays are L x N x 2 in one coordinate space; the blend is affine, so
/// degrees and normalised units give the same result up to rounding.
FrameArray correct(const FrameArray& raw, const FrameArray& extrapolated, double beta);
FrameArray correct(const FrameArray& raw, const FrameArray& extrapolated,
                   std::span<const double> beta_per_node);

struct CorrectorConfig {
  std::array<double, 3> beta{0.1, 0.2, 0.3};
  std::size_t recent_steps = 3;

  void validate() const;
};

/// Applies the corrector to one window. `input` is the window's normalised
/// input (L_in x N x 3); `prediction` is the normalised model output
/// (L_out x N x 2). The extrapolation is computed in degrees and normalised
/// before blending, so the result is normalised and beta = 0 returns
/// `prediction` unchanged.
FrameArray correct_window(const FrameArray& input, const FrameArray& prediction,
                          const NormStats& stats, const MotionModeModel& modes,
                          const CorrectorConfig& config, double step_seconds);

}  // namespace gsmt
