#include "gsmt/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "gsmt/error.hpp"
#include "gsmt/geo.hpp"

namespace gsmt {

namespace {

void require_same_shape(const FrameArray& a, const FrameArray& b, const char* what) {
  if (a.steps != b.steps || a.nodes != b.nodes || a.features != b.features ||
      a.values.size() != b.values.size()) {
    throw DimensionError(std::string(what) + ": shapes differ (" + std::to_string(a.steps) + "x" +
                         std::to_string(a.nodes) + "x" + std::to_string(a.features) + " vs " +
                         std::to_string(b.steps) + "x" + std::to_string(b.nodes) + "x" +
                         std::to_string(b.features) + ")");
  }
}

void require_pairs(std::size_t a, std::size_t b, const char* what) {
  if (a != b) throw DimensionError(std::string(what) + ": window counts differ");
  if (a == 0) throw ContractError(std::string(what) + ": no windows");
}

FrameArray denormalize_coords(const FrameArray& frames, const NormStats& stats) {
  if (frames.features != 2) throw DimensionError("expected (lat, lon) frames");
  FrameArray out = frames;
  for (std::size_t s = 0; s < frames.steps; ++s)
    for (std::size_t b = 0; b < frames.nodes; ++b) {
      out.at(s, b, 0) = stats.denormalize(Feature::lat, frames.at(s, b, 0));
      out.at(s, b, 1) = stats.denormalize(Feature::lon, frames.at(s, b, 1));
    }
  return out;
}

double point_error_m(const FrameArray& pred, const FrameArray& truth, std::size_t s, std::size_t b) {
  return geo::haversine_m({pred.at(s, b, 0), pred.at(s, b, 1)}, {truth.at(s, b, 0), truth.at(s, b, 1)});
}

}  // namespace

double mae(const FrameArray& pred, const FrameArray& truth) {
  require_same_shape(pred, truth, "mae");
  if (pred.values.empty()) throw ContractError("mae: empty frames");
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.values.size(); ++i) acc += std::fabs(pred.values[i] - truth.values[i]);
  return acc / static_cast<double>(pred.values.size());
}

double mae(std::span<const FrameArray> preds, std::span<const FrameArray> truths) {
  require_pairs(preds.size(), truths.size(), "mae");
  double acc = 0.0;
  std::size_t count = 0;
  for (std::size_t w = 0; w < preds.size(); ++w) {
    require_same_shape(preds[w], truths[w], "mae");
    for (std::size_t i = 0; i < preds[w].values.size(); ++i) {
      acc += std::fabs(preds[w].values[i] - truths[w].values[i]);
    }
    count += preds[w].values.size();
  }
  if (count == 0) throw ContractError("mae: empty frames");
  return acc / static_cast<double>(count);
}

FrameArray prefix_steps(const FrameArray& frames, std::size_t steps) {
  if (steps > frames.steps) {
    throw DimensionError("prefix_steps: " + std::to_string(steps) + " steps requested from " +
                         std::to_string(frames.steps));
  }
  FrameArray out(steps, frames.nodes, frames.features);
  std::copy_n(frames.values.begin(), out.values.size(), out.values.begin());
  return out;
}

double mean_travel_distance(std::span<const ResampledSeries> series, std::size_t model_step) {
  if (model_step < 1) throw ContractError("mean_travel_distance: model_step must be >= 1");
  double acc = 0.0;
  std::size_t pairs = 0;
  std::size_t frames = 0;
  for (const auto& s : series) {
    frames = std::max(frames, s.size());
    for (std::size_t i = 0; i + model_step < s.size(); ++i) {
      if (!s.observed[i] || !s.observed[i + model_step]) continue;
      const auto& a = s.frames[i];
      const auto& b = s.frames[i + model_step];
      acc += geo::haversine_m({a.lat, a.lon}, {b.lat, b.lon});
      ++pairs;
    }
  }
  if (frames < 2) throw ContractError("mean_travel_distance: fewer than 2 frames");
  if (pairs == 0) {
    throw ContractError("mean_travel_distance: no pair of observed frames one model step apart");
  }
  return acc / static_cast<double>(pairs);
}

const char* to_string(AccuracyMode mode) {
  return mode == AccuracyMode::per_trajectory ? "per_trajectory" : "per_point";
}

AccuracyMode accuracy_mode_from_string(const std::string& name) {
  if (name == "per_trajectory" || name == "trajectory") return AccuracyMode::per_trajectory;
  if (name == "per_point" || name == "point") return AccuracyMode::per_point;
  throw ConfigError("unknown accuracy mode '" + name + "' (expected per_trajectory or per_point)");
}

void MissionAccuracyConfig::validate() const {
  if (!(margin > 0.0)) throw ConfigError("eval.margin must be > 0");
  if (!(mean_travel_distance_m > 0.0) || !std::isfinite(mean_travel_distance_m)) {
    throw ConfigError("mission accuracy: mean travel distance is " +
                      std::to_string(mean_travel_distance_m) + " m; the fleet never moves one model step");
  }
}

double mission_accuracy_deg(std::span<const FrameArray> pred, std::span<const FrameArray> truth,
                            const MissionAccuracyConfig& config) {
  config.validate();
  require_pairs(pred.size(), truth.size(), "mission_accuracy");
  const double threshold = config.threshold_m();
  std::size_t correct = 0;
  std::size_t total = 0;
  for (std::size_t w = 0; w < pred.size(); ++w) {
    require_same_shape(pred[w], truth[w], "mission_accuracy");
    if (pred[w].features != 2) throw DimensionError("mission_accuracy: expected (lat, lon) frames");
    if (pred[w].steps == 0) throw ContractError("mission_accuracy: empty trajectories");
    for (std::size_t b = 0; b < pred[w].nodes; ++b) {
      if (config.mode == AccuracyMode::per_trajectory) {
        double err = 0.0;
        for (std::size_t s = 0; s < pred[w].steps; ++s) err += point_error_m(pred[w], truth[w], s, b);
        err /= static_cast<double>(pred[w].steps);
        correct += err <= threshold ? 1 : 0;
        ++total;
      } else {
        for (std::size_t s = 0; s < pred[w].steps; ++s) {
          correct += point_error_m(pred[w], truth[w], s, b) <= threshold ? 1 : 0;
          ++total;
        }
      }
    }
  }
  if (total == 0) throw ContractError("mission_accuracy: no trajectories");
  return static_cast<double>(correct) / static_cast<double>(total);
}

double mission_accuracy(std::span<const FrameArray> pred, std::span<const FrameArray> truth,
                        const MissionAccuracyConfig& config, const NormStats& stats) {
  require_pairs(pred.size(), truth.size(), "mission_accuracy");
  std::vector<FrameArray> p, t;
  p.reserve(pred.size());
  t.reserve(truth.size());
  for (std::size_t w = 0; w < pred.size(); ++w) {
    p.push_back(denormalize_coords(pred[w], stats));
    t.push_back(denormalize_coords(truth[w], stats));
  }
  return mission_accuracy_deg(p, t, config);
}

double mean_error_m(std::span<const FrameArray> pred, std::span<const FrameArray> truth,
                    const NormStats& stats) {
  require_pairs(pred.size(), truth.size(), "mean_error_m");
  double acc = 0.0;
  std::size_t count = 0;
  for (std::size_t w = 0; w < pred.size(); ++w) {
    require_same_shape(pred[w], truth[w], "mean_error_m");
    const auto p = denormalize_coords(pred[w], stats);
    const auto t = denormalize_coords(truth[w], stats);
    for (std::size_t s = 0; s < p.steps; ++s)
      for (std::size_t b = 0; b < p.nodes; ++b) {
        acc += point_error_m(p, t, s, b);
        ++count;
      }
  }
  if (count == 0) throw ContractError("mean_error_m: no points");
  return acc / static_cast<double>(count);
}

FrameArray baseline_ha(std::span<const WindowSample> train) {
  if (train.empty()) throw ContractError("baseline_ha: empty training set");
  const auto& first = train.front().target;
  FrameArray sum(first.steps, first.nodes, first.features);
  for (const auto& w : train) {
    require_same_shape(w.target, first, "baseline_ha");
    for (std::size_t i = 0; i < sum.values.size(); ++i) sum.values[i] += w.target.values[i];
  }
  for (auto& v : sum.values) v /= static_cast<double>(train.size());
  return sum;
}

const char* to_string(BaselineCell cell) { return cell == BaselineCell::lstm_plain ? "GAT+LSTM" : "GAT+GRU"; }

std::vector<FrameArray> predict_all(const GsmtModel& model, std::span<const TrainingSample> samples) {
  std::vector<FrameArray> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(predict(s.window, s.graph, model));
  return out;
}

BaselineRun baseline_gat_rnn(std::span<const TrainingSample> train,
                             std::span<const TrainingSample> validation,
                             std::span<const TrainingSample> test, ModelConfig model_config,
                             const TrainConfig& train_config, BaselineCell cell) {
  model_config.cell = cell == BaselineCell::gru ? CellKind::gru : CellKind::lstm;
  auto state = init_training(model_config, train_config);
  gsmt::train(state, train, validation, train_config);
  BaselineRun run{state.best.clone(), state.history, {}};
  run.predictions = predict_all(run.model, test);
  return run;
}

std::string format_mae(double value) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4f", value);
  return buf;
}

std::string format_accuracy(double fraction) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f%%", fraction * 100.0);
  return buf;
}

MetricsReport compare(std::span<const MethodEvaluation> methods,
                      std::span<const MethodEvaluation> references, const std::string& config_digest,
                      AccuracyMode mode) {
  if (methods.empty()) throw ContractError("compare: no method reports");
  MetricsReport report;
  report.config_digest = config_digest;
  report.accuracy_mode = mode;
  for (const auto& h : methods.front().horizons) report.horizons_minutes.push_back(h.horizon_minutes);

  for (const auto& m : methods) {
    std::vector<double> hs;
    for (const auto& h : m.horizons) hs.push_back(h.horizon_minutes);
    if (hs != report.horizons_minutes) {
      throw ContractError("compare: method '" + m.method + "' reports different horizons than '" +
                          methods.front().method + "'");
    }
    for (const auto& h : m.horizons) {
      if (!(h.mae >= 0.0) || !(h.mission_accuracy >= 0.0 && h.mission_accuracy <= 1.0)) {
        throw ContractError("compare: method '" + m.method + "' has out-of-range metrics");
      }
      report.rows.push_back({m.method, h, false});
    }
  }
  for (const auto& m : references) {
    for (const auto& h : m.horizons) report.rows.push_back({m.method, h, true});
  }
  return report;
}

nlohmann::json MetricsReport::to_json(const std::string& generated_at) const {
  nlohmann::json rows_json = nlohmann::json::array();
  for (const auto& r : rows) {
    nlohmann::json row = {
        {"method", r.method},
        {"horizon_minutes", r.metrics.horizon_minutes},
        {"mae", r.metrics.mae},
        {"mission_accuracy", r.metrics.mission_accuracy},
        {"n_windows", r.metrics.n_windows},
        {"config_digest", r.reference ? std::string() : config_digest},
        {"reference", r.reference},
    };
    row["mae_meters"] = r.metrics.mae_m ? nlohmann::json(*r.metrics.mae_m) : nlohmann::json(nullptr);
    rows_json.push_back(std::move(row));
  }
  return {
      {"metadata", {{"generated_at", generated_at}}},
      {"accuracy_mode", to_string(accuracy_mode)},
      {"config_digest", config_digest},
      {"horizons_minutes", horizons_minutes},
      {"rows", std::move(rows_json)},
  };
}

std::string MetricsReport::to_text() const {
  std::vector<std::string> methods;
  for (const auto& r : rows) {
    if (std::find(methods.begin(), methods.end(), r.method) == methods.end()) methods.push_back(r.method);
  }
  std::vector<std::string> header{"Method"};
  for (double h : horizons_minutes) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%g min", h);
    header.push_back(std::string(buf) + " MAE");
    header.push_back(std::string(buf) + " Accuracy");
  }
  std::vector<std::vector<std::string>> table{header};
  for (const auto& m : methods) {
    std::vector<std::string> line{m};
    for (double h : horizons_minutes) {
      auto it = std::find_if(rows.begin(), rows.end(), [&](const MetricsRow& r) {
        return r.method == m && r.metrics.horizon_minutes == h;
      });
      if (it == rows.end()) {
        line.insert(line.end(), {"-", "-"});
      } else {
        line.push_back(format_mae(it->metrics.mae));
        line.push_back(format_accuracy(it->metrics.mission_accuracy));
      }
    }
    table.push_back(std::move(line));
  }

  std::vector<std::size_t> width(header.size(), 0);
  for (const auto& line : table)
    for (std::size_t c = 0; c < line.size(); ++c) width[c] = std::max(width[c], line[c].size());

  std::ostringstream os;
  for (std::size_t r = 0; r < table.size(); ++r) {
    for (std::size_t c = 0; c < table[r].size(); ++c) {
      const auto& cell = table[r][c];
      if (c == 0) {
        os << cell << std::string(width[c] - cell.size(), ' ');
      } else {
        os << " | " << std::string(width[c] - cell.size(), ' ') << cell;
      }
    }
    os << '\n';
    if (r == 0) {
      std::size_t total = width[0];
      for (std::size_t c = 1; c < width.size(); ++c) total += 3 + width[c];
      os << std::string(total, '-') << '\n';
    }
  }
  os << "accuracy mode: " << to_string(accuracy_mode) << '\n';
  return os.str();
}

std::vector<MethodEvaluation> published_reference() {
  auto method = [](const char* name, double mae15, double acc15, double mae25, double acc25) {
    return MethodEvaluation{std::string("published:") + name,
                            {{15.0, mae15, acc15, std::nullopt, 0}, {25.0, mae25, acc25, std::nullopt, 0}}};
  };
  return {
      method("GSMT", 0.0515, 0.8812, 0.1510, 0.6612),
      method("HA", 0.6494, 0.3097, 0.4866, 0.1812),
      method("GAT+LSTM", 0.1427, 0.4612, 0.2236, 0.3516),
      method("GAT+GRU", 0.0605, 0.7792, 0.1660, 0.6319),
  };
}

}  // namespace gsmt
