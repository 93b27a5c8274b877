#pragma once

// Run configuration: every knob of the pipeline in one INI-style file.
//
//   [section]
//   key = value      ; or # comments
//
// Unknown sections or keys are rejected. Any key can be overridden with
// `section.key=value`.

#include <array>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "gsmt/adam.hpp"
#include "gsmt/corrector.hpp"
#include "gsmt/eval.hpp"
#include "gsmt/graphs.hpp"
#include "gsmt/ingest.hpp"
#include "gsmt/model.hpp"
#include "gsmt/synth.hpp"

namespace gsmt {

struct SynthSettings {
  synth::RouteKind route_kind = synth::RouteKind::corridor;
  std::size_t n_waypoints = 10;
  double extent_km = 12.0;
  std::size_t n_buses = 5;
  double headway_s = 420.0;
  double base_speed_kmh = 22.0;
  double duration_s = 6 * 3600.0;
  double fix_interval_s = 30.0;
  double gps_noise_m = 8.0;
  double dropout_prob = 0.05;
  double start_time = 1704693600.0;
  bool congestion = true;
  /// `arc_begin:arc_end:multiplier:t_begin:t_end` entries separated by ';',
  /// arc bounds as fractions of the route length, times in seconds.
  std::string congestion_zones = "0.10:0.30:0.4:0:21600;0.55:0.75:0.5:5400:21600;0.80:0.90:0.6:0:21600";
};

struct DataSettings {
  double grid_step_s = 60.0;
  double agg_window_s = 300.0;
  std::size_t model_step = 5;
  double history_minutes = 50.0;
  std::vector<double> horizons_minutes{15.0, 25.0};
  std::size_t stride = 1;
};

struct ModelSettings {
  std::size_t hidden_width = 32;
  std::size_t gat_layers = 3;
  double leaky_slope = 0.2;
  double teacher_forcing = 0.5;
  CellKind cell = CellKind::lstm;
};

struct TrainSettings {
  std::size_t epochs = 300;
  std::size_t patience = 30;
  std::size_t batch_size = 8;
};

struct CorrectorSettings {
  bool enabled = true;
  std::array<double, 3> beta{0.1, 0.2, 0.3};
  std::size_t recent_steps = 3;
};

struct EvalSettings {
  double margin = 0.05;
  AccuracyMode accuracy_mode = AccuracyMode::per_trajectory;
};

struct PathSettings {
  std::string csv = "run/gps.csv";
  std::string bundle = "run/bundle.json";
  std::string checkpoint = "run/checkpoint.json";
  std::string metrics = "run/metrics.json";
};

struct RunConfig {
  std::uint64_t seed = 42;
  SynthSettings synth;
  CleanConfig clean{{2.9, 3.4, 101.4, 102.0}, 120.0, 10};
  DataSettings data;
  SplitRatios split;
  bool leakage_guard = false;
  GraphConfig graph;
  ModelSettings model;
  TrainSettings train;
  AdamConfig optim;
  CorrectorSettings corrector;
  EvalSettings eval;
  PathSettings paths;

  /// Checks every field and every cross-field constraint; throws ConfigError
  /// naming the fields involved.
  void validate() const;

  std::size_t l_in() const;
  /// Model steps needed for a horizon in minutes.
  std::size_t steps_for(double horizon_minutes) const;
  /// Longest horizon in model steps; one model is trained for it.
  std::size_t l_out() const;
  double model_step_seconds() const { return data.grid_step_s * static_cast<double>(data.model_step); }

  ModelConfig model_config() const;
  TrainConfig train_config() const;
  WindowSpec window_spec() const;
  CorrectorConfig corrector_config() const;
  synth::FleetSpec fleet_spec(const synth::RouteSpec& route) const;

  /// Applies one `section.key=value` assignment.
  void set(const std::string& assignment);
  void set(const std::string& key, const std::string& value);

  /// Every key in a fixed order with its canonical value.
  std::vector<std::pair<std::string, std::string>> entries() const;
  std::string to_ini() const;

  /// SHA-256 over the settings that shape the dataset bundle.
  std::string data_digest() const;
  /// SHA-256 over the settings that shape a trained model (includes the
  /// data settings and the seed).
  std::string model_digest() const;
};

/// Parses an INI document into a config starting from the defaults.
RunConfig parse_config(std::istream& in);
RunConfig load_config(const std::string& path);

/// `arc_begin:arc_end:multiplier:t_begin:t_end;...` with arc bounds as
/// fractions of `route_length_m`.
std::vector<synth::CongestionZone> parse_congestion(const std::string& text, double route_length_m);

}  // namespace gsmt
