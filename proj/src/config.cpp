#include "gsmt/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "gsmt/digest.hpp"
#include "gsmt/error.hpp"

namespace gsmt {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::string format_double(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

double parse_double(const std::string& name, const std::string& text) {
  const std::string t = trim(text);
  double v = 0.0;
  const auto r = std::from_chars(t.data(), t.data() + t.size(), v);
  if (t.empty() || r.ec != std::errc() || r.ptr != t.data() + t.size() || !std::isfinite(v)) {
    throw ConfigError(name + ": '" + text + "' is not a finite number");
  }
  return v;
}

std::uint64_t parse_unsigned(const std::string& name, const std::string& text) {
  const std::string t = trim(text);
  std::uint64_t v = 0;
  const auto r = std::from_chars(t.data(), t.data() + t.size(), v);
  if (t.empty() || r.ec != std::errc() || r.ptr != t.data() + t.size()) {
    throw ConfigError(name + ": '" + text + "' is not a non-negative integer");
  }
  return v;
}

bool parse_bool(const std::string& name, const std::string& text) {
  const std::string t = trim(text);
  if (t == "true" || t == "on" || t == "yes" || t == "1") return true;
  if (t == "false" || t == "off" || t == "no" || t == "0") return false;
  throw ConfigError(name + ": '" + text + "' is not a boolean (true/false)");
}

std::vector<double> parse_list(const std::string& name, const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_double(name, item));
  if (out.empty()) throw ConfigError(name + ": empty list");
  return out;
}

std::string format_list(const std::vector<double>& values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out += ",";
    out += format_double(values[i]);
  }
  return out;
}

struct Field {
  std::string section;
  std::string key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;

  std::string name() const { return section + "." + key; }
};

template <class T, class Ref>
Field field(std::string section, std::string key, Ref ref) {
  Field f{std::move(section), std::move(key), nullptr, nullptr};
  f.get = [ref](const RunConfig& c) -> std::string {
    const T& v = ref(const_cast<RunConfig&>(c));
    if constexpr (std::is_same_v<T, double>) {
      return format_double(v);
    } else if constexpr (std::is_same_v<T, bool>) {
      return v ? "true" : "false";
    } else if constexpr (std::is_same_v<T, std::string>) {
      return v;
    } else if constexpr (std::is_same_v<T, std::vector<double>>) {
      return format_list(v);
    } else if constexpr (std::is_same_v<T, CellKind> || std::is_same_v<T, AccuracyMode> ||
                         std::is_same_v<T, synth::RouteKind>) {
      return to_string(v);
    } else {
      return std::to_string(v);
    }
  };
  f.set = [ref](RunConfig& c, const std::string& name, const std::string& text) {
    T& v = ref(c);
    if constexpr (std::is_same_v<T, double>) {
      v = parse_double(name, text);
    } else if constexpr (std::is_same_v<T, bool>) {
      v = parse_bool(name, text);
    } else if constexpr (std::is_same_v<T, std::string>) {
      v = trim(text);
    } else if constexpr (std::is_same_v<T, std::vector<double>>) {
      v = parse_list(name, text);
    } else if constexpr (std::is_same_v<T, CellKind>) {
      try {
        v = cell_kind_from_string(trim(text));
      } catch (const Error& e) {
        throw ConfigError(name + ": " + e.what());
      }
    } else if constexpr (std::is_same_v<T, AccuracyMode>) {
      v = accuracy_mode_from_string(trim(text));
    } else if constexpr (std::is_same_v<T, synth::RouteKind>) {
      v = synth::route_kind_from_string(trim(text));
    } else {
      v = static_cast<T>(parse_unsigned(name, text));
    }
  };
  return f;
}

#define GSMT_FIELD(T, section, key, expr) \
  field<T>(section, key, [](RunConfig& c) -> T& { return expr; })

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      GSMT_FIELD(std::uint64_t, "run", "seed", c.seed),

      GSMT_FIELD(synth::RouteKind, "synth", "route_kind", c.synth.route_kind),
      GSMT_FIELD(std::size_t, "synth", "n_waypoints", c.synth.n_waypoints),
      GSMT_FIELD(double, "synth", "extent_km", c.synth.extent_km),
      GSMT_FIELD(std::size_t, "synth", "n_buses", c.synth.n_buses),
      GSMT_FIELD(double, "synth", "headway_s", c.synth.headway_s),
      GSMT_FIELD(double, "synth", "base_speed_kmh", c.synth.base_speed_kmh),
      GSMT_FIELD(double, "synth", "duration_s", c.synth.duration_s),
      GSMT_FIELD(double, "synth", "fix_interval_s", c.synth.fix_interval_s),
      GSMT_FIELD(double, "synth", "gps_noise_m", c.synth.gps_noise_m),
      GSMT_FIELD(double, "synth", "dropout_prob", c.synth.dropout_prob),
      GSMT_FIELD(double, "synth", "start_time", c.synth.start_time),
      GSMT_FIELD(bool, "synth", "congestion", c.synth.congestion),
      GSMT_FIELD(std::string, "synth", "congestion_zones", c.synth.congestion_zones),

      GSMT_FIELD(double, "clean", "lat_min", c.clean.bbox.lat_min),
      GSMT_FIELD(double, "clean", "lat_max", c.clean.bbox.lat_max),
      GSMT_FIELD(double, "clean", "lon_min", c.clean.bbox.lon_min),
      GSMT_FIELD(double, "clean", "lon_max", c.clean.bbox.lon_max),
      GSMT_FIELD(double, "clean", "max_speed_kmh", c.clean.max_speed_kmh),
      GSMT_FIELD(std::size_t, "clean", "min_fixes_per_bus", c.clean.min_fixes_per_bus),

      GSMT_FIELD(double, "data", "grid_step_s", c.data.grid_step_s),
      GSMT_FIELD(double, "data", "agg_window_s", c.data.agg_window_s),
      GSMT_FIELD(std::size_t, "data", "model_step", c.data.model_step),
      GSMT_FIELD(double, "data", "history_minutes", c.data.history_minutes),
      GSMT_FIELD(std::vector<double>, "data", "horizons_minutes", c.data.horizons_minutes),
      GSMT_FIELD(std::size_t, "data", "stride", c.data.stride),

      GSMT_FIELD(double, "split", "train", c.split.train),
      GSMT_FIELD(double, "split", "validation", c.split.validation),
      GSMT_FIELD(double, "split", "test", c.split.test),
      GSMT_FIELD(bool, "split", "leakage_guard", c.leakage_guard),

      GSMT_FIELD(double, "graph", "sigma_d_m", c.graph.sigma_d_m),
      GSMT_FIELD(double, "graph", "sigma_v_kmh", c.graph.sigma_v_kmh),

      GSMT_FIELD(std::size_t, "model", "hidden_width", c.model.hidden_width),
      GSMT_FIELD(std::size_t, "model", "gat_layers", c.model.gat_layers),
      GSMT_FIELD(double, "model", "leaky_slope", c.model.leaky_slope),
      GSMT_FIELD(double, "model", "teacher_forcing", c.model.teacher_forcing),
      GSMT_FIELD(CellKind, "model", "cell", c.model.cell),

      GSMT_FIELD(std::size_t, "train", "epochs", c.train.epochs),
      GSMT_FIELD(std::size_t, "train", "patience", c.train.patience),
      GSMT_FIELD(std::size_t, "train", "batch_size", c.train.batch_size),

      GSMT_FIELD(double, "optim", "lr", c.optim.lr),
      GSMT_FIELD(double, "optim", "beta1", c.optim.beta1),
      GSMT_FIELD(double, "optim", "beta2", c.optim.beta2),
      GSMT_FIELD(double, "optim", "eps", c.optim.eps),

      GSMT_FIELD(bool, "corrector", "enabled", c.corrector.enabled),
      GSMT_FIELD(double, "corrector", "beta_low", c.corrector.beta[0]),
      GSMT_FIELD(double, "corrector", "beta_medium", c.corrector.beta[1]),
      GSMT_FIELD(double, "corrector", "beta_high", c.corrector.beta[2]),
      GSMT_FIELD(std::size_t, "corrector", "recent_steps", c.corrector.recent_steps),

      GSMT_FIELD(double, "eval", "margin", c.eval.margin),
      GSMT_FIELD(AccuracyMode, "eval", "accuracy_mode", c.eval.accuracy_mode),

      GSMT_FIELD(std::string, "paths", "csv", c.paths.csv),
      GSMT_FIELD(std::string, "paths", "bundle", c.paths.bundle),
      GSMT_FIELD(std::string, "paths", "checkpoint", c.paths.checkpoint),
      GSMT_FIELD(std::string, "paths", "metrics", c.paths.metrics),
  };
  return table;
}

#undef GSMT_FIELD

const Field& find_field(const std::string& name) {
  for (const auto& f : fields()) {
    if (f.name() == name) return f;
  }
  throw ConfigError("unknown config key '" + name + "'");
}

std::string digest_of(const RunConfig& c, const std::set<std::string>& sections) {
  std::string canonical;
  for (const auto& f : fields()) {
    if (sections.count(f.section)) canonical += f.name() + "=" + f.get(c) + "\n";
  }
  return sha256_hex(canonical);
}

bool is_multiple(double value, double unit) {
  const double q = value / unit;
  return q >= 1.0 - 1e-9 && std::fabs(q - std::round(q)) < 1e-9;
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) {
  const auto& f = find_field(trim(key));
  f.set(*this, f.name(), value);
}

void RunConfig::set(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) {
    throw ConfigError("override '" + assignment + "' must look like section.key=value");
  }
  set(assignment.substr(0, eq), assignment.substr(eq + 1));
}

std::vector<std::pair<std::string, std::string>> RunConfig::entries() const {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& f : fields()) out.emplace_back(f.name(), f.get(*this));
  return out;
}

std::string RunConfig::to_ini() const {
  std::ostringstream os;
  std::string section;
  for (const auto& f : fields()) {
    if (f.section != section) {
      if (!section.empty()) os << '\n';
      section = f.section;
      os << '[' << section << "]\n";
    }
    os << f.key << " = " << f.get(*this) << '\n';
  }
  return os.str();
}

std::string RunConfig::data_digest() const { return digest_of(*this, {"clean", "data", "split"}); }

std::string RunConfig::model_digest() const {
  return digest_of(*this, {"clean", "data", "split", "graph", "model"});
}

std::size_t RunConfig::l_in() const {
  return static_cast<std::size_t>(std::round(data.history_minutes * 60.0 / model_step_seconds()));
}

std::size_t RunConfig::steps_for(double horizon_minutes) const {
  return static_cast<std::size_t>(std::round(horizon_minutes * 60.0 / model_step_seconds()));
}

std::size_t RunConfig::l_out() const {
  std::size_t out = 0;
  for (double h : data.horizons_minutes) out = std::max(out, steps_for(h));
  return out;
}

void RunConfig::validate() const {
  if (synth.n_buses < 1) throw ConfigError("synth.n_buses must be >= 1");
  if (synth.n_waypoints < 2) throw ConfigError("synth.n_waypoints must be >= 2");
  if (synth.route_kind == synth::RouteKind::loop && synth.n_waypoints < 3) {
    throw ConfigError("synth.n_waypoints must be >= 3 when synth.route_kind = loop");
  }
  if (!(synth.extent_km > 0.0)) throw ConfigError("synth.extent_km must be > 0");
  if (!(synth.duration_s > 0.0)) throw ConfigError("synth.duration_s must be > 0");
  if (synth.congestion) parse_congestion(synth.congestion_zones, 1.0);

  clean.validate();

  if (!(data.grid_step_s > 0.0)) throw ConfigError("data.grid_step_s must be > 0");
  if (data.agg_window_s < data.grid_step_s) {
    throw ConfigError("data.agg_window_s must be >= data.grid_step_s");
  }
  if (data.model_step < 1) throw ConfigError("data.model_step must be >= 1");
  if (data.stride < 1) throw ConfigError("data.stride must be >= 1");
  if (!is_multiple(data.history_minutes * 60.0, model_step_seconds())) {
    throw ConfigError("data.history_minutes must be a positive multiple of data.model_step x data.grid_step_s");
  }
  std::set<double> seen;
  for (double h : data.horizons_minutes) {
    if (!is_multiple(h * 60.0, model_step_seconds())) {
      throw ConfigError("data.horizons_minutes entry " + format_double(h) +
                        " must be a positive multiple of data.model_step x data.grid_step_s");
    }
    if (!seen.insert(h).second) throw ConfigError("data.horizons_minutes has duplicate entries");
  }

  if (split.train <= 0.0 || split.validation <= 0.0 || split.test <= 0.0) {
    throw ConfigError("split.train, split.validation and split.test must all be > 0");
  }
  if (std::fabs(split.train + split.validation + split.test - 1.0) > 1e-9) {
    throw ConfigError("split.train + split.validation + split.test must equal 1");
  }

  graph.validate();
  model_config().validate();
  train_config().validate();
  corrector_config().validate();
  if (corrector.recent_steps > l_in()) {
    throw ConfigError("corrector.recent_steps exceeds the input length set by data.history_minutes");
  }
  if (!(eval.margin > 0.0)) throw ConfigError("eval.margin must be > 0");
}

ModelConfig RunConfig::model_config() const {
  ModelConfig m;
  m.hidden_width = model.hidden_width;
  m.gat_layers = model.gat_layers;
  m.l_in = l_in();
  m.l_out = l_out();
  m.leaky_slope = model.leaky_slope;
  m.teacher_forcing = model.teacher_forcing;
  m.seed = seed;
  m.cell = model.cell;
  return m;
}

TrainConfig RunConfig::train_config() const {
  TrainConfig t;
  t.epochs = train.epochs;
  t.patience = train.patience;
  t.batch_size = train.batch_size;
  t.adam = optim;
  t.seed = seed;
  return t;
}

WindowSpec RunConfig::window_spec() const {
  WindowSpec w;
  w.l_in = l_in();
  w.l_out = l_out();
  w.stride = data.stride;
  w.model_step = data.model_step;
  return w;
}

CorrectorConfig RunConfig::corrector_config() const {
  CorrectorConfig c;
  c.beta = corrector.beta;
  c.recent_steps = corrector.recent_steps;
  return c;
}

synth::FleetSpec RunConfig::fleet_spec(const synth::RouteSpec& route) const {
  synth::FleetSpec f;
  f.n_buses = synth.n_buses;
  f.headway_s = synth.headway_s;
  f.base_speed_kmh = synth.base_speed_kmh;
  if (synth.congestion) f.congestion = parse_congestion(synth.congestion_zones, route.length_m());
  f.gps_noise_m = synth.gps_noise_m;
  f.dropout_prob = synth.dropout_prob;
  f.fix_interval_s = synth.fix_interval_s;
  f.seed = seed;
  f.start_time = synth.start_time;
  return f;
}

std::vector<synth::CongestionZone> parse_congestion(const std::string& text, double route_length_m) {
  std::vector<synth::CongestionZone> zones;
  std::stringstream ss(text);
  std::string entry;
  const std::string name = "synth.congestion_zones";
  while (std::getline(ss, entry, ';')) {
    if (trim(entry).empty()) continue;
    std::vector<double> v;
    std::stringstream es(entry);
    std::string item;
    while (std::getline(es, item, ':')) v.push_back(parse_double(name, item));
    if (v.size() != 5) throw ConfigError(name + ": entry '" + entry + "' needs 5 ':'-separated values");
    if (!(v[0] >= 0.0 && v[0] < v[1] && v[1] <= 1.0)) {
      throw ConfigError(name + ": arc bounds must satisfy 0 <= begin < end <= 1");
    }
    if (!(v[2] > 0.0 && v[2] <= 1.0)) throw ConfigError(name + ": multiplier must lie in (0, 1]");
    if (!(v[3] < v[4])) throw ConfigError(name + ": time bounds must satisfy begin < end");
    zones.push_back({v[0] * route_length_m, v[1] * route_length_m, v[2], v[3], v[4]});
  }
  return zones;
}

RunConfig parse_config(std::istream& in) {
  namespace pt = boost::property_tree;
  // Boost only knows ';' comments; blank out '#' lines so line numbers hold.
  std::stringstream filtered;
  for (std::string line; std::getline(in, line);) {
    filtered << (trim(line).rfind('#', 0) == 0 ? std::string() : line) << '\n';
  }
  pt::ptree tree;
  try {
    pt::ini_parser::read_ini(filtered, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError("config: line " + std::to_string(e.line()) + ": " + e.message());
  }
  RunConfig config;
  for (const auto& [section, body] : tree) {
    if (body.empty()) {
      throw ConfigError("config: key '" + section + "' must appear inside a [section]");
    }
    for (const auto& [key, value] : body) {
      std::string text = value.get_value<std::string>();
      for (const char* marker : {" ;", " #", "\t;", "\t#"}) {
        const auto pos = text.find(marker);
        if (pos != std::string::npos) text.erase(pos);
      }
      config.set(section + "." + key, text);
    }
  }
  return config;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config file '" + path + "'");
  return parse_config(in);
}

}  // namespace gsmt
