#pragma once

// Forecast metrics, baselines and the method comparison table.

#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "gsmt/ingest.hpp"
#include "gsmt/model.hpp"

namespace gsmt {

/// Mean |pred - truth| over every element. Throws DimensionError on shape
/// mismatch.
double mae(const FrameArray& pred, const FrameArray& truth);
/// Pooled over a set of windows of equal shape.
double mae(std::span<const FrameArray> preds, std::span<const FrameArray> truths);

/// First `steps` forecast steps of an L x N x F array.
FrameArray prefix_steps(const FrameArray& frames, std::size_t steps);

/// Mean haversine displacement (m) between frames `model_step` grid steps
/// apart, using pairs where both frames are observed.
double mean_travel_distance(std::span<const ResampledSeries> series, std::size_t model_step);

enum class AccuracyMode { per_trajectory, per_point };

const char* to_string(AccuracyMode mode);
AccuracyMode accuracy_mode_from_string(const std::string& name);

struct MissionAccuracyConfig {
  double margin = 0.05;
  double mean_travel_distance_m = 0.0;
  AccuracyMode mode = AccuracyMode::per_trajectory;

  void validate() const;
  double threshold_m() const { return margin * mean_travel_distance_m; }
};

/// Fraction of (window, bus) trajectories whose mean per-step haversine error
/// is within the threshold, or in per-point mode the fraction of
/// (window, step, bus) points. Frames are L x N x 2 in degrees.
double mission_accuracy_deg(std::span<const FrameArray> pred, std::span<const FrameArray> truth,
                            const MissionAccuracyConfig& config);

/// Same on normalised frames, denormalised through `stats` first.
double mission_accuracy(std::span<const FrameArray> pred, std::span<const FrameArray> truth,
                        const MissionAccuracyConfig& config, const NormStats& stats);

/// Mean haversine error (m) per point of normalised frames.
double mean_error_m(std::span<const FrameArray> pred, std::span<const FrameArray> truth,
                    const NormStats& stats);

/// Per-bus, per-offset mean of the training targets (normalised). The same
/// array is the forecast for every test window.
FrameArray baseline_ha(std::span<const WindowSample> train);

enum class BaselineCell { lstm_plain, gru };

const char* to_string(BaselineCell cell);

struct BaselineRun {
  GsmtModel model;
  std::vector<EpochRecord> history;
  std::vector<FrameArray> predictions;  // one per test sample
};

/// Trains the GAT + recurrent baseline with the GSMT protocol and predicts
/// the test set. No corrector is applied.
BaselineRun baseline_gat_rnn(std::span<const TrainingSample> train,
                             std::span<const TrainingSample> validation,
                             std::span<const TrainingSample> test, ModelConfig model_config,
                             const TrainConfig& train_config, BaselineCell cell);

/// Model forecasts for a sample set, in order.
std::vector<FrameArray> predict_all(const GsmtModel& model, std::span<const TrainingSample> samples);

struct HorizonMetrics {
  double horizon_minutes = 0.0;
  double mae = 0.0;
  double mission_accuracy = 0.0;
  std::optional<double> mae_m;
  std::size_t n_windows = 0;
};

struct MethodEvaluation {
  std::string method;
  std::vector<HorizonMetrics> horizons;
};

struct MetricsRow {
  std::string method;
  HorizonMetrics metrics;
  bool reference = false;
};

struct MetricsReport {
  std::vector<double> horizons_minutes;
  std::vector<MetricsRow> rows;
  std::string config_digest;
  AccuracyMode accuracy_mode = AccuracyMode::per_trajectory;

  /// Rows plus a metadata object; `generated_at` is the only time-dependent
  /// field and lives under metadata.
  nlohmann::json to_json(const std::string& generated_at = "") const;
  /// Methods as rows, (MAE, mission accuracy) per horizon as columns.
  std::string to_text() const;
};

/// Builds the comparison table. Every evaluated method must report the same
/// horizons (ContractError otherwise). Reference rows are shown for the
/// horizons they carry.
MetricsReport compare(std::span<const MethodEvaluation> methods,
                      std::span<const MethodEvaluation> references, const std::string& config_digest,
                      AccuracyMode mode);

/// Published reference numbers at 15 and 25 minutes for GSMT, HA, GAT+LSTM
/// and GAT+GRU, labelled "published:<method>".
std::vector<MethodEvaluation> published_reference();

std::string format_mae(double value);
std::string format_accuracy(double fraction);

}  // namespace gsmt
