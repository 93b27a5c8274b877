#include "gsmt/artifacts.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "gsmt/digest.hpp"
#include "gsmt/error.hpp"

namespace gsmt {

using nlohmann::json;

namespace {

json finite_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

double number_or_inf(const json& j) {
  return j.is_null() ? std::numeric_limits<double>::infinity() : j.get<double>();
}

json stats_to_json(const NormStats& s) {
  json ranges = json::array();
  for (const auto& r : s.ranges) ranges.push_back({r.min, r.max});
  return {{"fitted", s.fitted}, {"ranges", ranges}};
}

NormStats stats_from_json(const json& j) {
  NormStats s;
  s.fitted = j.at("fitted").get<bool>();
  const auto& ranges = j.at("ranges");
  if (ranges.size() != 3) throw FormatError("norm stats need 3 ranges");
  for (std::size_t i = 0; i < 3; ++i) {
    s.ranges[i] = {ranges[i].at(0).get<double>(), ranges[i].at(1).get<double>()};
  }
  return s;
}

json window_to_json(const WindowSample& w) {
  return {{"input", frame_array_to_json(w.input)},
          {"target", frame_array_to_json(w.target)},
          {"start_time", w.start_time},
          {"offset", w.offset}};
}

WindowSample window_from_json(const json& j) {
  WindowSample w;
  w.input = frame_array_from_json(j.at("input"));
  w.target = frame_array_from_json(j.at("target"));
  w.start_time = j.at("start_time").get<double>();
  w.offset = j.at("offset").get<std::size_t>();
  return w;
}

json windows_to_json(const std::vector<WindowSample>& ws) {
  json out = json::array();
  for (const auto& w : ws) out.push_back(window_to_json(w));
  return out;
}

std::vector<WindowSample> windows_from_json(const json& j) {
  std::vector<WindowSample> out;
  for (const auto& w : j) out.push_back(window_from_json(w));
  return out;
}

json model_config_to_json(const ModelConfig& m) {
  return {{"hidden_width", m.hidden_width}, {"gat_layers", m.gat_layers},
          {"l_in", m.l_in},                 {"l_out", m.l_out},
          {"leaky_slope", m.leaky_slope},   {"teacher_forcing", m.teacher_forcing},
          {"seed", m.seed},                 {"cell", to_string(m.cell)}};
}

ModelConfig model_config_from_json(const json& j) {
  ModelConfig m;
  m.hidden_width = j.at("hidden_width").get<std::size_t>();
  m.gat_layers = j.at("gat_layers").get<std::size_t>();
  m.l_in = j.at("l_in").get<std::size_t>();
  m.l_out = j.at("l_out").get<std::size_t>();
  m.leaky_slope = j.at("leaky_slope").get<double>();
  m.teacher_forcing = j.at("teacher_forcing").get<double>();
  m.seed = j.at("seed").get<std::uint64_t>();
  m.cell = cell_kind_from_string(j.at("cell").get<std::string>());
  return m;
}

json train_config_to_json(const TrainConfig& t) {
  return {{"epochs", t.epochs},
          {"patience", t.patience},
          {"batch_size", t.batch_size},
          {"seed", t.seed},
          {"adam", {{"lr", t.adam.lr}, {"beta1", t.adam.beta1}, {"beta2", t.adam.beta2}, {"eps", t.adam.eps}}}};
}

TrainConfig train_config_from_json(const json& j) {
  TrainConfig t;
  t.epochs = j.at("epochs").get<std::size_t>();
  t.patience = j.at("patience").get<std::size_t>();
  t.batch_size = j.at("batch_size").get<std::size_t>();
  t.seed = j.at("seed").get<std::uint64_t>();
  const auto& a = j.at("adam");
  t.adam = {a.at("lr").get<double>(), a.at("beta1").get<double>(), a.at("beta2").get<double>(),
            a.at("eps").get<double>()};
  return t;
}

template <class Fn>
auto wrap_format(const std::string& what, Fn&& fn) {
  try {
    return fn();
  } catch (const json::exception& e) {
    throw FormatError(what + ": malformed content: " + e.what());
  }
}

json parse_json(const std::string& text, const std::string& path) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw FormatError("'" + path + "' is not valid JSON: " + e.what());
  }
}

}  // namespace

std::string serialize(const json& j) { return j.dump() + "\n"; }

json frame_array_to_json(const FrameArray& a) {
  return {{"shape", {a.steps, a.nodes, a.features}}, {"values", a.values}};
}

FrameArray frame_array_from_json(const json& j) {
  const auto& shape = j.at("shape");
  FrameArray a(shape.at(0).get<std::size_t>(), shape.at(1).get<std::size_t>(),
               shape.at(2).get<std::size_t>());
  auto values = j.at("values").get<std::vector<double>>();
  if (values.size() != a.values.size()) throw FormatError("frame array size does not match its shape");
  a.values = std::move(values);
  return a;
}

json parameters_to_json(const GsmtModel& model) {
  json out = json::object();
  for (const auto& p : model.named_parameters()) {
    auto v = p.tensor.values();
    out[p.name] = {{"shape", p.tensor.shape()}, {"values", std::vector<double>(v.begin(), v.end())}};
  }
  return out;
}

void parameters_from_json(const json& j, GsmtModel& model) {
  for (auto& p : model.named_parameters()) {
    if (!j.contains(p.name)) throw CompatibilityError("checkpoint lacks parameter '" + p.name + "'");
    const auto& entry = j.at(p.name);
    const auto shape = entry.at("shape").get<Shape>();
    if (shape != p.tensor.shape()) {
      throw CompatibilityError("parameter '" + p.name + "' has shape " + shape_str(shape) +
                               ", model expects " + shape_str(p.tensor.shape()));
    }
    const auto values = entry.at("values").get<std::vector<double>>();
    auto dst = p.tensor.mutable_values();
    if (values.size() != dst.size()) throw FormatError("parameter '" + p.name + "' has the wrong size");
    std::copy(values.begin(), values.end(), dst.begin());
  }
  if (j.size() != model.named_parameters().size()) {
    throw CompatibilityError("checkpoint holds parameters this model does not have");
  }
}

json DatasetBundle::to_json() const {
  json clean_json = {{"raw", clean.raw},
                     {"kept", clean.kept},
                     {"dropped_bbox", clean.dropped_bbox},
                     {"dropped_speed", clean.dropped_speed},
                     {"dropped_min_fixes", clean.dropped_min_fixes}};
  json split_json = {{"train", windows_to_json(split.train)},
                     {"validation", windows_to_json(split.validation)},
                     {"test", windows_to_json(split.test)},
                     {"report",
                      {{"total", split.report.total},
                       {"dropped_validation", split.report.dropped_validation},
                       {"dropped_test", split.report.dropped_test}}}};
  return {{"format", "gsmt-dataset"},
          {"version", version},
          {"data_digest", data_digest},
          {"bus_ids", bus_ids},
          {"grid_start", grid_start},
          {"grid_step", grid_step},
          {"model_step", model_step},
          {"l_in", l_in},
          {"l_out", l_out},
          {"stats", stats_to_json(stats)},
          {"clean_report", clean_json},
          {"split", split_json},
          {"mean_travel_distance_m", mean_travel_distance_m},
          {"train_speeds_kmh", train_speeds_kmh},
          {"warnings", warnings}};
}

DatasetBundle DatasetBundle::from_json(const json& j) {
  return wrap_format("dataset bundle", [&] {
    if (j.at("format").get<std::string>() != "gsmt-dataset") throw FormatError("not a dataset bundle");
    DatasetBundle b;
    b.version = j.at("version").get<int>();
    if (b.version != kBundleVersion) {
      throw CompatibilityError("dataset bundle version " + std::to_string(b.version) +
                               " is not supported (expected " + std::to_string(kBundleVersion) + ")");
    }
    b.data_digest = j.at("data_digest").get<std::string>();
    b.bus_ids = j.at("bus_ids").get<std::vector<std::string>>();
    b.grid_start = j.at("grid_start").get<double>();
    b.grid_step = j.at("grid_step").get<double>();
    b.model_step = j.at("model_step").get<std::size_t>();
    b.l_in = j.at("l_in").get<std::size_t>();
    b.l_out = j.at("l_out").get<std::size_t>();
    b.stats = stats_from_json(j.at("stats"));
    const auto& c = j.at("clean_report");
    b.clean = {c.at("raw").get<std::size_t>(), c.at("kept").get<std::size_t>(),
               c.at("dropped_bbox").get<std::size_t>(), c.at("dropped_speed").get<std::size_t>(),
               c.at("dropped_min_fixes").get<std::size_t>()};
    const auto& s = j.at("split");
    b.split.train = windows_from_json(s.at("train"));
    b.split.validation = windows_from_json(s.at("validation"));
    b.split.test = windows_from_json(s.at("test"));
    const auto& r = s.at("report");
    b.split.report = {r.at("total").get<std::size_t>(), r.at("dropped_validation").get<std::size_t>(),
                      r.at("dropped_test").get<std::size_t>()};
    b.mean_travel_distance_m = j.at("mean_travel_distance_m").get<double>();
    b.train_speeds_kmh = j.at("train_speeds_kmh").get<std::vector<double>>();
    b.warnings = j.at("warnings").get<std::vector<std::string>>();
    return b;
  });
}

std::string DatasetBundle::digest() const { return sha256_hex(serialize(to_json())); }

void save_bundle(const DatasetBundle& bundle, const std::string& path) {
  json j = bundle.to_json();
  j["digest"] = sha256_hex(serialize(bundle.to_json()));
  write_file(path, serialize(j));
}

DatasetBundle load_bundle(const std::string& path) {
  json j = parse_json(read_file(path), path);
  if (!j.is_object() || !j.contains("digest")) throw FormatError("'" + path + "' has no content digest");
  const std::string stored = j.at("digest").get<std::string>();
  j.erase("digest");
  auto bundle = DatasetBundle::from_json(j);
  if (bundle.digest() != stored) {
    throw DataError("'" + path + "' fails its content digest check (file modified or truncated)");
  }
  return bundle;
}

json Checkpoint::to_json() const {
  json config_json = json::array();
  for (const auto& [k, v] : config) config_json.push_back({k, v});
  json history = json::array();
  for (const auto& h : state.history) {
    history.push_back({{"epoch", h.epoch}, {"train_loss", h.train_loss}, {"validation_mae", h.validation_mae}});
  }
  return {{"format", "gsmt-checkpoint"},
          {"version", version},
          {"config", config_json},
          {"model_digest", model_digest},
          {"bundle_digest", bundle_digest},
          {"bus_ids", bus_ids},
          {"stats", stats_to_json(stats)},
          {"model_config", model_config_to_json(model_config)},
          {"train_config", train_config_to_json(train_config)},
          {"modes", {{"centroids", modes.centroids}, {"blend", modes.blend}}},
          {"mean_travel_distance_m", mean_travel_distance_m},
          {"parameters", parameters_to_json(state.best)},
          {"history", history},
          {"resume",
           {{"parameters", parameters_to_json(state.model)},
            {"adam_step", state.adam.step},
            {"adam_m", state.adam.m},
            {"adam_v", state.adam.v},
            {"epochs_done", state.epochs_done},
            {"epochs_since_best", state.epochs_since_best},
            {"best_validation", finite_or_null(state.best_validation)},
            {"stopped_early", state.stopped_early},
            {"rng_state", state.rng_state}}}};
}

Checkpoint Checkpoint::from_json(const json& j) {
  return wrap_format("checkpoint", [&] {
    if (j.at("format").get<std::string>() != "gsmt-checkpoint") throw FormatError("not a checkpoint");
    const int version = j.at("version").get<int>();
    if (version != kCheckpointVersion) {
      throw CompatibilityError("checkpoint version " + std::to_string(version) + " is not supported (expected " +
                               std::to_string(kCheckpointVersion) + ")");
    }
    Checkpoint c(model_config_from_json(j.at("model_config")));
    c.version = version;
    for (const auto& kv : j.at("config")) {
      c.config.emplace_back(kv.at(0).get<std::string>(), kv.at(1).get<std::string>());
    }
    c.model_digest = j.at("model_digest").get<std::string>();
    c.bundle_digest = j.at("bundle_digest").get<std::string>();
    c.bus_ids = j.at("bus_ids").get<std::vector<std::string>>();
    c.stats = stats_from_json(j.at("stats"));
    c.train_config = train_config_from_json(j.at("train_config"));
    c.modes.centroids = j.at("modes").at("centroids").get<std::array<double, 3>>();
    c.modes.blend = j.at("modes").at("blend").get<std::array<double, 3>>();
    c.mean_travel_distance_m = j.at("mean_travel_distance_m").get<double>();
    parameters_from_json(j.at("parameters"), c.state.best);
    for (const auto& h : j.at("history")) {
      c.state.history.push_back({h.at("epoch").get<std::size_t>(), h.at("train_loss").get<double>(),
                                 h.at("validation_mae").get<double>()});
    }
    const auto& r = j.at("resume");
    parameters_from_json(r.at("parameters"), c.state.model);
    c.state.adam.config = c.train_config.adam;
    c.state.adam.step = r.at("adam_step").get<std::uint64_t>();
    c.state.adam.m = r.at("adam_m").get<std::vector<std::vector<double>>>();
    c.state.adam.v = r.at("adam_v").get<std::vector<std::vector<double>>>();
    c.state.epochs_done = r.at("epochs_done").get<std::size_t>();
    c.state.epochs_since_best = r.at("epochs_since_best").get<std::size_t>();
    c.state.best_validation = number_or_inf(r.at("best_validation"));
    c.state.stopped_early = r.at("stopped_early").get<bool>();
    c.state.rng_state = r.at("rng_state").get<std::string>();
    return c;
  });
}

void save_checkpoint(const Checkpoint& checkpoint, const std::string& path) {
  write_file(path, serialize(checkpoint.to_json()));
}

Checkpoint load_checkpoint(const std::string& path, const std::string& expected_model_digest, bool force) {
  auto c = Checkpoint::from_json(parse_json(read_file(path), path));
  if (!force && !expected_model_digest.empty() && c.model_digest != expected_model_digest) {
    throw CompatibilityError("checkpoint '" + path +
                             "' was trained under a different data/graph/model configuration "
                             "(digest " + c.model_digest.substr(0, 12) + " vs " +
                             expected_model_digest.substr(0, 12) + "); use --force to override");
  }
  return c;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read '" + path + "'");
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_file(const std::string& path, const std::string& content) {
  namespace fs = std::filesystem;
  const fs::path target(path);
  std::error_code ec;
  if (target.has_parent_path()) fs::create_directories(target.parent_path(), ec);
  const fs::path tmp = target.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write '" + path + "'");
    out << content;
    if (!out.flush()) throw IoError("failed writing '" + path + "'");
  }
  fs::rename(tmp, target, ec);
  if (ec) throw IoError("cannot write '" + path + "': " + ec.message());
}

}  // namespace gsmt
