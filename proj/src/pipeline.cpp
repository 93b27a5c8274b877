#include "gsmt/pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <ostream>

#include "gsmt/error.hpp"

namespace gsmt {

using nlohmann::json;

namespace {

// Re-raises a library error with the stage name prefixed, keeping its type.
template <class Fn>
auto stage(const char* name, Fn&& fn) {
  const auto tag = [name](const std::exception& e) { return std::string(name) + ": " + e.what(); };
  try {
    return fn();
  } catch (const FormatError& e) {
    throw FormatError(tag(e));
  } catch (const IoError& e) {
    throw IoError(tag(e));
  } catch (const DataError& e) {
    throw DataError(tag(e));
  } catch (const ConfigError& e) {
    throw ConfigError(tag(e));
  } catch (const DimensionError& e) {
    throw DimensionError(tag(e));
  } catch (const ContractError& e) {
    throw ContractError(tag(e));
  }
}

std::size_t grid_offset(const ResampledSeries& s, double origin) {
  return static_cast<std::size_t>(std::llround((s.grid_start - origin) / s.grid_step));
}

std::string shortest(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

}  // namespace

SynthOutput run_synth(const RunConfig& config) {
  config.validate();
  const auto& s = config.synth;
  const auto route = synth::make_route(s.route_kind, s.n_waypoints, s.extent_km, config.seed);
  SynthOutput out;
  out.route_length_m = route.length_m();
  out.records = synth::simulate(route, config.fleet_spec(route), s.duration_s, &out.warnings);
  return out;
}

DatasetBundle preprocess(std::span<const GpsRecord> records, const RunConfig& config) {
  config.validate();
  DatasetBundle bundle;
  bundle.data_digest = config.data_digest();
  bundle.grid_step = config.data.grid_step_s;
  bundle.model_step = config.data.model_step;
  bundle.l_in = config.l_in();
  bundle.l_out = config.l_out();

  const auto cleaned = stage("clean", [&] { return clean(records, config.clean); });
  bundle.clean = cleaned.report;

  auto series = stage("resample", [&] {
    return resample(cleaned.records, config.data.grid_step_s, config.data.agg_window_s, &bundle.warnings);
  });
  if (series.empty()) throw DataError("resample: no bus has usable fixes");
  double origin = std::numeric_limits<double>::infinity();
  for (const auto& s : series) origin = std::min(origin, s.grid_start);
  bundle.grid_start = origin;

  std::vector<ResampledSeries> imputed;
  stage("impute", [&] {
    for (const auto& s : series) imputed.push_back(impute(s));
    return 0;
  });
  for (const auto& s : imputed) bundle.bus_ids.push_back(s.bus_id);

  auto windows = stage("window", [&] { return make_windows(imputed, config.window_spec(), &bundle.warnings); });
  if (windows.empty()) {
    throw DataError("window: no window of " + std::to_string(config.window_spec().span()) +
                    " grid steps is covered by every bus");
  }

  bundle.split = stage("split", [&] {
    return split(std::move(windows), config.split, config.model_step_seconds(), config.leakage_guard);
  });
  if (bundle.split.validation.empty() || bundle.split.test.empty()) {
    throw DataError("split: validation or test partition is empty after the leakage guard dropped " +
                    std::to_string(bundle.split.report.dropped_validation) + " + " +
                    std::to_string(bundle.split.report.dropped_test) + " windows");
  }

  // Training range: grid indices covered by any training window.
  const std::size_t span = config.window_spec().span();
  const std::size_t train_begin = bundle.split.train.front().offset;
  const std::size_t train_end = bundle.split.train.back().offset + span;  // exclusive

  std::vector<Frame> train_frames;
  std::vector<ResampledSeries> train_series;
  for (const auto& s : imputed) {
    const std::size_t first = grid_offset(s, origin);
    ResampledSeries part;
    part.bus_id = s.bus_id;
    part.grid_step = s.grid_step;
    const std::size_t lo = std::max(first, train_begin);
    const std::size_t hi = std::min(first + s.size(), train_end);
    part.grid_start = origin + static_cast<double>(lo) * s.grid_step;
    for (std::size_t g = lo; g < hi; ++g) {
      const auto& f = s.frames[g - first];
      part.frames.push_back(f);
      part.observed.push_back(s.observed[g - first]);
      train_frames.push_back(f);
      if (s.observed[g - first]) bundle.train_speeds_kmh.push_back(f.speed);
    }
    train_series.push_back(std::move(part));
  }

  bundle.stats = stage("normalize", [&] { return fit_norm(train_frames); });
  for (auto* part : {&bundle.split.train, &bundle.split.validation, &bundle.split.test}) {
    for (auto& w : *part) normalize_window(w, bundle.stats);
  }
  bundle.mean_travel_distance_m =
      stage("travel distance", [&] { return mean_travel_distance(train_series, config.data.model_step); });
  return bundle;
}

std::vector<TrainingSample> make_samples(std::span<const WindowSample> windows, const NormStats& stats,
                                         const GraphConfig& graph) {
  std::vector<TrainingSample> out;
  out.reserve(windows.size());
  for (const auto& w : windows) out.push_back({w, build_sequence(w, stats, graph).normalized});
  return out;
}

Checkpoint train_model(const DatasetBundle& bundle, const RunConfig& config, const TrainOptions& options) {
  config.validate();
  if (!options.force && bundle.data_digest != config.data_digest()) {
    throw CompatibilityError("dataset bundle was produced under different clean/data/split settings; "
                             "rerun preprocess or pass --force");
  }
  if (bundle.l_in != config.l_in() || bundle.l_out != config.l_out()) {
    throw CompatibilityError("dataset bundle window lengths (" + std::to_string(bundle.l_in) + ", " +
                             std::to_string(bundle.l_out) + ") differ from the config's");
  }
  const auto train_set = make_samples(bundle.split.train, bundle.stats, config.graph);
  const auto val_set = make_samples(bundle.split.validation, bundle.stats, config.graph);

  const auto model_config = config.model_config();
  const auto train_config = config.train_config();
  Checkpoint checkpoint(model_config);
  if (options.resume) {
    const auto& r = *options.resume;
    if (!options.force && r.model_digest != config.model_digest()) {
      throw CompatibilityError("resume checkpoint was trained under a different data/graph/model configuration");
    }
    if (!options.force && r.bundle_digest != bundle.digest()) {
      throw CompatibilityError("resume checkpoint was trained on a different dataset bundle");
    }
    checkpoint.state = r.state.clone();
    // Training continues from the stored state; a larger epoch budget lifts an
    // earlier stop only if patience allows it.
    if (checkpoint.state.stopped_early && train_config.patience > checkpoint.state.epochs_since_best) {
      checkpoint.state.stopped_early = false;
    }
  } else {
    checkpoint.state = init_training(model_config, train_config);
  }
  train(checkpoint.state, train_set, val_set, train_config, options.on_epoch);

  checkpoint.config = config.entries();
  checkpoint.model_digest = config.model_digest();
  checkpoint.bundle_digest = bundle.digest();
  checkpoint.bus_ids = bundle.bus_ids;
  checkpoint.stats = bundle.stats;
  checkpoint.train_config = train_config;
  checkpoint.modes = stage("motion modes", [&] { return fit_modes(bundle.train_speeds_kmh, config.corrector.beta); });
  checkpoint.mean_travel_distance_m = bundle.mean_travel_distance_m;
  return checkpoint;
}

std::vector<FrameArray> gsmt_forecasts(const Checkpoint& checkpoint, std::span<const TrainingSample> samples,
                                       const RunConfig& config, bool correct) {
  auto preds = predict_all(checkpoint.state.best, samples);
  if (!correct) return preds;
  MotionModeModel modes = checkpoint.modes;
  modes.blend = config.corrector.beta;
  const auto corrector = config.corrector_config();
  for (std::size_t w = 0; w < preds.size(); ++w) {
    preds[w] = correct_window(samples[w].window.input, preds[w], checkpoint.stats, modes, corrector,
                              config.model_step_seconds());
  }
  return preds;
}

Evaluation evaluate(const Checkpoint& checkpoint, const DatasetBundle& bundle, const RunConfig& config,
                    const EvaluateOptions& options) {
  config.validate();
  if (!options.force && checkpoint.bundle_digest != bundle.digest()) {
    throw CompatibilityError("checkpoint was trained on a different dataset bundle (digest mismatch)");
  }
  if (!options.force && checkpoint.model_digest != config.model_digest()) {
    throw CompatibilityError("checkpoint was trained under a different data/graph/model configuration");
  }
  const auto test = make_samples(bundle.split.test, bundle.stats, config.graph);
  std::vector<FrameArray> truth;
  for (const auto& s : test) truth.push_back(s.window.target);

  const auto horizons = options.horizons_minutes.empty() ? config.data.horizons_minutes : options.horizons_minutes;
  for (double h : horizons) {
    const std::size_t steps = config.steps_for(h);
    if (steps < 1 || steps > checkpoint.model_config.l_out ||
        std::fabs(static_cast<double>(steps) * config.model_step_seconds() - h * 60.0) > 1e-6) {
      throw ConfigError("evaluation horizon " + shortest(h) + " min is not a whole number of model steps within " +
                        "the trained horizon of " + std::to_string(checkpoint.model_config.l_out) + " steps");
    }
  }
  MissionAccuracyConfig accuracy{config.eval.margin, checkpoint.mean_travel_distance_m, config.eval.accuracy_mode};

  auto score = [&](const std::string& name, const std::vector<FrameArray>& preds) {
    MethodEvaluation m{name, {}};
    for (double h : horizons) {
      const std::size_t steps = config.steps_for(h);
      std::vector<FrameArray> p, t;
      for (std::size_t w = 0; w < preds.size(); ++w) {
        p.push_back(prefix_steps(preds[w], steps));
        t.push_back(prefix_steps(truth[w], steps));
      }
      HorizonMetrics hm;
      hm.horizon_minutes = h;
      hm.mae = mae(p, t);
      hm.mission_accuracy = mission_accuracy(p, t, accuracy, bundle.stats);
      hm.mae_m = mean_error_m(p, t, bundle.stats);
      hm.n_windows = preds.size();
      m.horizons.push_back(hm);
    }
    return m;
  };

  Evaluation out;
  const bool corrected = options.correct && config.corrector.enabled;
  const auto raw = gsmt_forecasts(checkpoint, test, config, false);
  out.methods.push_back(score("GSMT", corrected ? gsmt_forecasts(checkpoint, test, config, true) : raw));
  if (corrected) out.methods.push_back(score("GSMT-raw", raw));

  const auto ha = baseline_ha(bundle.split.train);
  out.methods.push_back(score("HA", std::vector<FrameArray>(test.size(), ha)));

  if (options.baselines) {
    // Same seed, data and protocol as the checkpoint's model, so the
    // corrector-free LSTM baseline shares its trained weights.
    out.methods.push_back(score(to_string(BaselineCell::lstm_plain), raw));
    const auto train_set = make_samples(bundle.split.train, bundle.stats, config.graph);
    const auto val_set = make_samples(bundle.split.validation, bundle.stats, config.graph);
    const auto gru = baseline_gat_rnn(train_set, val_set, test, checkpoint.model_config, checkpoint.train_config,
                                      BaselineCell::gru);
    out.methods.push_back(score(to_string(BaselineCell::gru), gru.predictions));
  }
  if (options.oracle) out.methods.push_back(score("oracle", truth));

  const auto refs = options.reference_rows ? published_reference() : std::vector<MethodEvaluation>{};
  out.report = compare(out.methods, refs, checkpoint.model_digest, config.eval.accuracy_mode);
  return out;
}

Forecast forecast(const Checkpoint& checkpoint, std::span<const GpsRecord> recent, const RunConfig& config) {
  const auto& mc = checkpoint.model_config;
  const std::size_t model_step = config.data.model_step;
  const std::size_t needed = (mc.l_in - 1) * model_step + 1;
  const double needed_minutes = static_cast<double>(needed - 1) * config.data.grid_step_s / 60.0;
  const auto describe = [&] {
    return "needs " + std::to_string(mc.l_in) + " frames " + shortest(config.model_step_seconds() / 60.0) +
           " min apart (" + shortest(needed_minutes) + " min) covered by every one of " +
           std::to_string(checkpoint.bus_ids.size()) + " buses";
  };

  CleanConfig relaxed = config.clean;
  relaxed.min_fixes_per_bus = 1;
  const auto cleaned = stage("clean", [&] { return clean(recent, relaxed); });
  auto series = stage("resample", [&] {
    return resample(cleaned.records, config.data.grid_step_s, config.data.agg_window_s);
  });
  double origin = std::numeric_limits<double>::infinity();
  for (const auto& s : series) origin = std::min(origin, s.grid_start);

  std::vector<ResampledSeries> ordered;
  for (const auto& id : checkpoint.bus_ids) {
    auto it = std::find_if(series.begin(), series.end(), [&](const ResampledSeries& s) { return s.bus_id == id; });
    if (it == series.end()) throw DataError("insufficient history: bus '" + id + "' is missing; " + describe());
    ordered.push_back(impute(*it));
  }

  // Newest grid index where every bus covers the whole input span.
  std::size_t lo = 0;
  std::size_t hi = std::numeric_limits<std::size_t>::max();
  for (const auto& s : ordered) {
    const std::size_t first = grid_offset(s, origin);
    lo = std::max(lo, first);
    hi = std::min(hi, first + s.size());
  }
  if (hi <= lo || hi - lo < needed) {
    throw DataError("insufficient history: " + describe());
  }
  const std::size_t end = hi - 1;
  const std::size_t begin = end - (needed - 1);

  const std::size_t n = ordered.size();
  WindowSample window;
  window.input = FrameArray(mc.l_in, n, 3);
  window.target = FrameArray(mc.l_out, n, 2);
  window.offset = begin;
  window.start_time = origin + static_cast<double>(begin) * config.data.grid_step_s;
  Forecast out;
  out.bus_ids = checkpoint.bus_ids;
  out.step_seconds = config.model_step_seconds();
  out.last_time = origin + static_cast<double>(end) * config.data.grid_step_s;
  out.history = FrameArray(mc.l_in, n, 2);
  for (std::size_t b = 0; b < n; ++b) {
    const std::size_t first = grid_offset(ordered[b], origin);
    for (std::size_t k = 0; k < mc.l_in; ++k) {
      const auto& f = ordered[b].frames[begin + k * model_step - first];
      out.history.at(k, b, 0) = f.lat;
      out.history.at(k, b, 1) = f.lon;
      const Frame norm = checkpoint.stats.normalize(f);
      window.input.at(k, b, 0) = norm.lat;
      window.input.at(k, b, 1) = norm.lon;
      window.input.at(k, b, 2) = norm.speed;
    }
  }

  const auto samples = make_samples(std::span(&window, 1), checkpoint.stats, config.graph);
  out.predicted_normalized = gsmt_forecasts(checkpoint, samples, config, config.corrector.enabled).front();
  out.predicted = out.predicted_normalized;
  for (std::size_t s = 0; s < out.predicted.steps; ++s)
    for (std::size_t b = 0; b < n; ++b) {
      out.predicted.at(s, b, 0) = checkpoint.stats.denormalize(Feature::lat, out.predicted_normalized.at(s, b, 0));
      out.predicted.at(s, b, 1) = checkpoint.stats.denormalize(Feature::lon, out.predicted_normalized.at(s, b, 1));
    }
  return out;
}

void write_predictions_csv(std::ostream& out, const Forecast& f) {
  out << "bus_id,step,lat,lon\n";
  for (std::size_t b = 0; b < f.bus_ids.size(); ++b)
    for (std::size_t s = 0; s < f.predicted.steps; ++s) {
      out << f.bus_ids[b] << ',' << (s + 1) << ',' << shortest(f.predicted.at(s, b, 0)) << ','
          << shortest(f.predicted.at(s, b, 1)) << '\n';
    }
}

json predictions_geojson(const Forecast& f) {
  auto position = [](const FrameArray& a, std::size_t s, std::size_t b) {
    return json::array({a.at(s, b, 1), a.at(s, b, 0)});  // [lon, lat]
  };
  auto geometry = [](json coords) {
    if (coords.size() == 1) return json{{"type", "Point"}, {"coordinates", coords.at(0)}};
    return json{{"type", "LineString"}, {"coordinates", std::move(coords)}};
  };
  json features = json::array();
  for (std::size_t b = 0; b < f.bus_ids.size(); ++b) {
    json history = json::array();
    for (std::size_t s = 0; s < f.history.steps; ++s) history.push_back(position(f.history, s, b));
    json predicted = json::array({position(f.history, f.history.steps - 1, b)});
    for (std::size_t s = 0; s < f.predicted.steps; ++s) predicted.push_back(position(f.predicted, s, b));

    features.push_back({{"type", "Feature"},
                        {"geometry", geometry(std::move(history))},
                        {"properties", {{"bus_id", f.bus_ids[b]}, {"kind", "history"}}}});
    features.push_back({{"type", "Feature"},
                        {"geometry", geometry(std::move(predicted))},
                        {"properties",
                         {{"bus_id", f.bus_ids[b]},
                          {"kind", "predicted"},
                          {"issued_at", f.last_time},
                          {"step_seconds", f.step_seconds}}}});
  }
  return {{"type", "FeatureCollection"}, {"features", std::move(features)}};
}

json history_json(const std::vector<EpochRecord>& history) {
  json out = json::array();
  for (const auto& h : history) {
    out.push_back({{"epoch", h.epoch}, {"train_loss", h.train_loss}, {"validation_mae", h.validation_mae}});
  }
  return out;
}

}  // namespace gsmt
