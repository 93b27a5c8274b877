#pragma once

// GPS ingestion: CSV parsing, outlier cleaning, grid resampling, gap
// imputation, min-max normalization, sliding windows and chronological
// splitting.

#include <array>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace gsmt {

struct GpsRecord {
  std::string bus_id;
  double timestamp = 0.0;  // UTC seconds
  double lat = 0.0;
  double lon = 0.0;
  double speed_kmh = 0.0;

  friend bool operator==(const GpsRecord&, const GpsRecord&) = default;
};

/// Reads `bus_id,timestamp,lat,lon,speed_kmh` CSV (columns in any order).
/// Timestamps are Unix seconds or ISO-8601 (`2024-01-05T08:00:00Z`, optional
/// fraction and +HH:MM offset). Output is sorted by (bus_id, timestamp) with
/// duplicate (bus_id, timestamp) rows collapsed to the first occurrence.
std::vector<GpsRecord> parse_gps_csv(std::istream& in);
void write_gps_csv(std::ostream& out, std::span<const GpsRecord> records);

/// Parses one timestamp field; throws FormatError on failure.
double parse_timestamp(const std::string& text);

struct BoundingBox {
  double lat_min = -90.0;
  double lat_max = 90.0;
  double lon_min = -180.0;
  double lon_max = 180.0;

  bool contains(double lat, double lon) const {
    return lat >= lat_min && lat <= lat_max && lon >= lon_min && lon <= lon_max;
  }
};

struct CleanConfig {
  BoundingBox bbox;
  double max_speed_kmh = 120.0;
  std::size_t min_fixes_per_bus = 2;

  void validate() const;
};

struct CleanReport {
  std::size_t raw = 0;
  std::size_t kept = 0;
  std::size_t dropped_bbox = 0;
  std::size_t dropped_speed = 0;
  std::size_t dropped_min_fixes = 0;
};

struct CleanResult {
  std::vector<GpsRecord> records;
  CleanReport report;
};

/// Drops fixes outside the bbox, fixes whose implied speed from the previous
/// kept fix of the same bus exceeds max_speed, then buses left with fewer than
/// min_fixes_per_bus fixes. Input must be sorted per bus.
CleanResult clean(std::span<const GpsRecord> records, const CleanConfig& config);

struct Frame {
  double lat = 0.0;
  double lon = 0.0;
  double speed = 0.0;

  friend bool operator==(const Frame&, const Frame&) = default;
};

/// Grid-aligned per-bus series. Unobserved frames hold NaN until impute().
struct ResampledSeries {
  std::string bus_id;
  double grid_start = 0.0;
  double grid_step = 60.0;
  std::vector<Frame> frames;
  std::vector<std::uint8_t> observed;

  double time_at(std::size_t i) const { return grid_start + static_cast<double>(i) * grid_step; }
  std::size_t size() const { return frames.size(); }
};

/// Averages fixes onto a grid shared by all buses and anchored at the earliest
/// timestamp. Each frame is the mean of the bus's fixes in
/// [t - agg_window/2, t + agg_window/2). A bus covers grid indices
/// floor((t_first - g)/step) through ceil((t_last - g)/step).
std::vector<ResampledSeries> resample(std::span<const GpsRecord> records, double grid_step,
                                      double agg_window,
                                      std::vector<std::string>* warnings = nullptr);

/// Linear interpolation across interior gaps, hold at the ends. The observed
/// mask is kept as is.
ResampledSeries impute(ResampledSeries series);

struct FeatureRange {
  double min = 0.0;
  double max = 0.0;
};

enum class Feature : std::size_t { lat = 0, lon = 1, speed = 2 };

struct NormStats {
  std::array<FeatureRange, 3> ranges{};
  bool fitted = false;

  const FeatureRange& operator[](Feature f) const { return ranges[static_cast<std::size_t>(f)]; }
  double normalize(Feature f, double value) const;
  double denormalize(Feature f, double value) const;
  Frame normalize(const Frame& frame) const;
  Frame denormalize(const Frame& frame) const;
};

/// Min-max ranges over the given (finite) frames.
NormStats fit_norm(std::span<const Frame> frames);
std::vector<Frame> normalize(std::span<const Frame> frames, const NormStats& stats);
std::vector<Frame> denormalize(std::span<const Frame> frames, const NormStats& stats);

/// Dense steps x nodes x features array, row-major.
struct FrameArray {
  std::size_t steps = 0;
  std::size_t nodes = 0;
  std::size_t features = 0;
  std::vector<double> values;

  FrameArray() = default;
  FrameArray(std::size_t s, std::size_t n, std::size_t f)
      : steps(s), nodes(n), features(f), values(s * n * f, 0.0) {}

  double& at(std::size_t s, std::size_t n, std::size_t f) {
    return values[(s * nodes + n) * features + f];
  }
  double at(std::size_t s, std::size_t n, std::size_t f) const {
    return values[(s * nodes + n) * features + f];
  }
  friend bool operator==(const FrameArray&, const FrameArray&) = default;
};

struct WindowSample {
  FrameArray input;   // L_in x N x (lat, lon, speed)
  FrameArray target;  // L_out x N x (lat, lon)
  double start_time = 0.0;
  std::size_t offset = 0;  // grid index of the first input frame

  friend bool operator==(const WindowSample&, const WindowSample&) = default;
};

struct WindowSpec {
  std::size_t l_in = 10;
  std::size_t l_out = 3;
  std::size_t stride = 1;      // in grid steps
  std::size_t model_step = 1;  // grid steps between consecutive model frames

  std::size_t span() const { return (l_in + l_out - 1) * model_step + 1; }
};

/// Slides a window over series sharing one grid (equal steps, aligned starts).
/// Window k starts at grid offset k*stride from the earliest series start and
/// is emitted only when every bus has finite frames over the whole span.
/// Buses appear in the order given.
std::vector<WindowSample> make_windows(std::span<const ResampledSeries> series,
                                       const WindowSpec& spec,
                                       std::vector<std::string>* warnings = nullptr);

void normalize_window(WindowSample& window, const NormStats& stats);

struct SplitRatios {
  double train = 0.8;
  double validation = 0.1;
  double test = 0.1;
};

struct SplitReport {
  std::size_t total = 0;
  std::size_t dropped_validation = 0;
  std::size_t dropped_test = 0;
};

struct DatasetSplit {
  std::vector<WindowSample> train;
  std::vector<WindowSample> validation;
  std::vector<WindowSample> test;
  SplitReport report;
};

/// Closed time intervals covered by a window's input and target frames.
struct TimeInterval {
  double begin = 0.0;
  double end = 0.0;
  bool overlaps(const TimeInterval& o) const { return begin <= o.end && o.begin <= end; }
};
TimeInterval input_interval(const WindowSample& w, double model_step_seconds);
TimeInterval target_interval(const WindowSample& w, double model_step_seconds);

/// Contiguous chronological split at floor(r_train*n) and
/// floor((r_train + r_val)*n). With `leakage_guard`, validation windows whose
/// input overlaps any training target interval are dropped, and test windows
/// whose input overlaps any retained training or validation target interval.
DatasetSplit split(std::vector<WindowSample> windows, const SplitRatios& ratios,
                   double model_step_seconds, bool leakage_guard);

}  // namespace gsmt
