#pragma once

// Versioned JSON containers for the preprocessed dataset and trained models.
// Doubles are written in shortest round-trip form, so load -> save
// reproduces the bytes exactly.

#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "gsmt/corrector.hpp"
#include "gsmt/ingest.hpp"
#include "gsmt/model.hpp"

namespace gsmt {

inline constexpr int kBundleVersion = 1;
inline constexpr int kCheckpointVersion = 1;

struct DatasetBundle {
  int version = kBundleVersion;
  std::string data_digest;  // RunConfig::data_digest() of the producing config
  std::vector<std::string> bus_ids;
  double grid_start = 0.0;
  double grid_step = 60.0;
  std::size_t model_step = 1;
  std::size_t l_in = 0;
  std::size_t l_out = 0;
  NormStats stats;
  CleanReport clean;
  DatasetSplit split;  // normalised windows
  double mean_travel_distance_m = 0.0;
  std::vector<double> train_speeds_kmh;  // observed frames in the training range
  std::vector<std::string> warnings;

  nlohmann::json to_json() const;
  static DatasetBundle from_json(const nlohmann::json& j);
  /// SHA-256 of the serialised content.
  std::string digest() const;
};

void save_bundle(const DatasetBundle& bundle, const std::string& path);
/// Verifies the version and the stored content digest.
DatasetBundle load_bundle(const std::string& path);

struct Checkpoint {
  int version = kCheckpointVersion;
  std::vector<std::pair<std::string, std::string>> config;  // full RunConfig entries
  std::string model_digest;
  std::string bundle_digest;
  std::vector<std::string> bus_ids;
  NormStats stats;
  ModelConfig model_config;
  TrainConfig train_config;
  MotionModeModel modes;
  double mean_travel_distance_m = 0.0;
  TrainState state;  // state.best holds the exported parameters

  explicit Checkpoint(const ModelConfig& mc) : model_config(mc), state(mc) {}

  nlohmann::json to_json() const;
  static Checkpoint from_json(const nlohmann::json& j);
};

std::string serialize(const nlohmann::json& j);

void save_checkpoint(const Checkpoint& checkpoint, const std::string& path);
/// Throws CompatibilityError on a format version mismatch, or when
/// `expected_model_digest` is non-empty and differs from the stored digest,
/// unless `force` is set.
Checkpoint load_checkpoint(const std::string& path, const std::string& expected_model_digest = "",
                           bool force = false);

nlohmann::json frame_array_to_json(const FrameArray& a);
FrameArray frame_array_from_json(const nlohmann::json& j);
nlohmann::json parameters_to_json(const GsmtModel& model);
/// Copies named parameters into `model`; throws CompatibilityError on a
/// missing name or shape mismatch.
void parameters_from_json(const nlohmann::json& j, GsmtModel& model);

std::string read_file(const std::string& path);
/// Writes through a temporary file and a rename; creates parent directories.
void write_file(const std::string& path, const std::string& content);

}  // namespace gsmt
