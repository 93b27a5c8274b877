#pragma once

// End-to-end stages: synthesise, preprocess, train, evaluate, predict. Each
// stage is a pure function of its inputs and the config; the CLI adds file
// handling on top.

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "gsmt/artifacts.hpp"
#include "gsmt/config.hpp"
#include "gsmt/eval.hpp"
#include "gsmt/synth.hpp"

namespace gsmt {

struct SynthOutput {
  std::vector<GpsRecord> records;
  std::vector<std::string> warnings;
  double route_length_m = 0.0;
};

SynthOutput run_synth(const RunConfig& config);

/// parse -> clean -> resample -> impute -> window -> split -> normalise.
/// Errors are re-raised with the failing stage in the message.
DatasetBundle preprocess(std::span<const GpsRecord> records, const RunConfig& config);

/// Window plus its row-normalised fused graph.
std::vector<TrainingSample> make_samples(std::span<const WindowSample> windows, const NormStats& stats,
                                         const GraphConfig& graph);

struct TrainOptions {
  const Checkpoint* resume = nullptr;
  bool force = false;
  EpochCallback on_epoch;
};

/// Trains (or resumes) the model and fits the motion modes.
Checkpoint train_model(const DatasetBundle& bundle, const RunConfig& config, const TrainOptions& options = {});

struct EvaluateOptions {
  bool correct = true;
  bool baselines = false;
  bool reference_rows = false;
  bool oracle = false;  // adds a row that predicts the ground truth
  bool force = false;
  std::vector<double> horizons_minutes;  // empty: the config's horizons
};

struct Evaluation {
  MetricsReport report;
  std::vector<MethodEvaluation> methods;
};

Evaluation evaluate(const Checkpoint& checkpoint, const DatasetBundle& bundle, const RunConfig& config,
                    const EvaluateOptions& options = {});

/// Corrected (or raw when the corrector is off) normalised forecasts for a
/// sample set.
std::vector<FrameArray> gsmt_forecasts(const Checkpoint& checkpoint, std::span<const TrainingSample> samples,
                                       const RunConfig& config, bool correct);

struct Forecast {
  std::vector<std::string> bus_ids;
  double last_time = 0.0;       // time of the newest input frame
  double step_seconds = 0.0;
  FrameArray history;           // L_in x N x 2, degrees
  FrameArray predicted;         // L_out x N x 2, degrees
  FrameArray predicted_normalized;
};

/// Forecast from the most recent fully covered input window in `recent`.
Forecast forecast(const Checkpoint& checkpoint, std::span<const GpsRecord> recent, const RunConfig& config);

void write_predictions_csv(std::ostream& out, const Forecast& forecast);
/// RFC 7946 FeatureCollection: per bus a `history` and a `predicted`
/// LineString; the predicted line starts at the last observed position.
nlohmann::json predictions_geojson(const Forecast& forecast);

nlohmann::json history_json(const std::vector<EpochRecord>& history);

}  // namespace gsmt
