#include "gsmt/ingest.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <istream>
#include <limits>
#include <map>
#include <ostream>
#include <sstream>

#include "gsmt/error.hpp"
#include "gsmt/geo.hpp"

namespace gsmt {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(first, last - first + 1));
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string current;
  bool quoted = false;
  for (char c : line) {
    if (c == '"') {
      quoted = !quoted;
    } else if (c == ',' && !quoted) {
      fields.push_back(trim(current));
      current.clear();
    } else {
      current.push_back(c);
    }
  }
  fields.push_back(trim(current));
  return fields;
}

bool parse_double(std::string_view text, double& out) {
  if (text.empty()) return false;
  if (text.front() == '+') text.remove_prefix(1);
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), out);
  return ec == std::errc() && ptr == text.data() + text.size() && std::isfinite(out);
}

bool parse_int(std::string_view text, int& out) {
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), out);
  return ec == std::errc() && ptr == text.data() + text.size();
}

}  // namespace

double parse_timestamp(const std::string& raw) {
  const std::string text = trim(raw);
  double numeric = 0.0;
  if (parse_double(text, numeric)) return numeric;

  // YYYY-MM-DD[T ]HH:MM:SS[.fff][Z|+HH:MM|-HH:MM]
  auto fail = [&]() -> double { throw FormatError("unparseable timestamp '" + text + "'"); };
  if (text.size() < 19 || text[4] != '-' || text[7] != '-' ||
      (text[10] != 'T' && text[10] != ' ') || text[13] != ':' || text[16] != ':') {
    return fail();
  }
  int y = 0, mo = 0, d = 0, h = 0, mi = 0, s = 0;
  std::string_view v(text);
  if (!parse_int(v.substr(0, 4), y) || !parse_int(v.substr(5, 2), mo) ||
      !parse_int(v.substr(8, 2), d) || !parse_int(v.substr(11, 2), h) ||
      !parse_int(v.substr(14, 2), mi) || !parse_int(v.substr(17, 2), s)) {
    return fail();
  }
  const std::chrono::year_month_day ymd{std::chrono::year{y},
                                        std::chrono::month{static_cast<unsigned>(mo)},
                                        std::chrono::day{static_cast<unsigned>(d)}};
  if (!ymd.ok() || h > 23 || mi > 59 || s > 60) return fail();

  std::size_t pos = 19;
  double fraction = 0.0;
  if (pos < text.size() && text[pos] == '.') {
    std::size_t end = pos + 1;
    while (end < text.size() && std::isdigit(static_cast<unsigned char>(text[end]))) ++end;
    if (end == pos + 1 || !parse_double("0" + text.substr(pos, end - pos), fraction)) return fail();
    pos = end;
  }
  double offset = 0.0;
  if (pos < text.size()) {
    if (text[pos] == 'Z' && pos + 1 == text.size()) {
      // UTC
    } else if ((text[pos] == '+' || text[pos] == '-') && text.size() == pos + 6 &&
               text[pos + 3] == ':') {
      int oh = 0, om = 0;
      if (!parse_int(v.substr(pos + 1, 2), oh) || !parse_int(v.substr(pos + 4, 2), om)) return fail();
      offset = (text[pos] == '+' ? 1.0 : -1.0) * (oh * 3600.0 + om * 60.0);
    } else {
      return fail();
    }
  }
  const auto days = std::chrono::sys_days(ymd).time_since_epoch().count();
  return static_cast<double>(days) * 86400.0 + h * 3600.0 + mi * 60.0 + s + fraction - offset;
}

std::vector<GpsRecord> parse_gps_csv(std::istream& in) {
  std::string line;
  std::size_t line_no = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!trim(line).empty()) {
      have_header = true;
      break;
    }
  }
  if (!have_header) throw DataError("gps csv: empty input");
  if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) line.erase(0, 3);  // BOM

  const auto header = split_csv_line(line);
  const std::array<std::string, 5> names = {"bus_id", "timestamp", "lat", "lon", "speed_kmh"};
  std::array<std::size_t, 5> column{};
  for (std::size_t k = 0; k < names.size(); ++k) {
    auto it = std::find(header.begin(), header.end(), names[k]);
    if (it == header.end()) throw FormatError("gps csv: missing column '" + names[k] + "'");
    column[k] = static_cast<std::size_t>(it - header.begin());
  }

  std::vector<GpsRecord> records;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto fields = split_csv_line(line);
    auto bad = [&](const std::string& why) {
      return FormatError("gps csv line " + std::to_string(line_no) + ": " + why);
    };
    if (fields.size() != header.size()) {
      throw bad("expected " + std::to_string(header.size()) + " fields, got " +
                std::to_string(fields.size()));
    }
    GpsRecord r;
    r.bus_id = fields[column[0]];
    if (r.bus_id.empty()) throw bad("empty bus_id");
    try {
      r.timestamp = parse_timestamp(fields[column[1]]);
    } catch (const FormatError& e) {
      throw bad(e.what());
    }
    if (!parse_double(fields[column[2]], r.lat) || r.lat < -90.0 || r.lat > 90.0) {
      throw bad("invalid lat '" + fields[column[2]] + "'");
    }
    if (!parse_double(fields[column[3]], r.lon) || r.lon < -180.0 || r.lon > 180.0) {
      throw bad("invalid lon '" + fields[column[3]] + "'");
    }
    if (!parse_double(fields[column[4]], r.speed_kmh) || r.speed_kmh < 0.0) {
      throw bad("invalid speed_kmh '" + fields[column[4]] + "'");
    }
    records.push_back(std::move(r));
  }

  std::stable_sort(records.begin(), records.end(), [](const GpsRecord& a, const GpsRecord& b) {
    if (a.bus_id != b.bus_id) return a.bus_id < b.bus_id;
    return a.timestamp < b.timestamp;
  });
  records.erase(std::unique(records.begin(), records.end(),
                            [](const GpsRecord& a, const GpsRecord& b) {
                              return a.bus_id == b.bus_id && a.timestamp == b.timestamp;
                            }),
                records.end());
  return records;
}

void write_gps_csv(std::ostream& out, std::span<const GpsRecord> records) {
  out << "bus_id,timestamp,lat,lon,speed_kmh\n";
  std::ostringstream row;
  for (const auto& r : records) {
    row.str({});
    row << r.bus_id << ',' << std::setprecision(17) << r.timestamp << ',' << r.lat << ','
        << r.lon << ',' << r.speed_kmh << '\n';
    out << row.str();
  }
}

void CleanConfig::validate() const {
  if (!(bbox.lat_min <= bbox.lat_max) || !(bbox.lon_min <= bbox.lon_max)) {
    throw ConfigError("clean: bbox bounds are not ordered");
  }
  if (!(max_speed_kmh > 0.0)) throw ConfigError("clean: max_speed must be > 0");
}

CleanResult clean(std::span<const GpsRecord> records, const CleanConfig& config) {
  config.validate();
  CleanResult result;
  result.report.raw = records.size();

  std::size_t i = 0;
  while (i < records.size()) {
    std::size_t j = i;
    while (j < records.size() && records[j].bus_id == records[i].bus_id) ++j;

    std::vector<GpsRecord> kept;
    for (std::size_t k = i; k < j; ++k) {
      const auto& r = records[k];
      if (!config.bbox.contains(r.lat, r.lon)) {
        ++result.report.dropped_bbox;
        continue;
      }
      if (!kept.empty()) {
        const auto& prev = kept.back();
        const double dt = r.timestamp - prev.timestamp;
        const double dist = geo::haversine_m({prev.lat, prev.lon}, {r.lat, r.lon});
        const double kmh = dt > 0.0 ? dist / dt * 3.6 : std::numeric_limits<double>::infinity();
        if (kmh > config.max_speed_kmh) {
          ++result.report.dropped_speed;
          continue;
        }
      }
      kept.push_back(r);
    }
    if (kept.size() < config.min_fixes_per_bus) {
      result.report.dropped_min_fixes += kept.size();
    } else {
      result.records.insert(result.records.end(), kept.begin(), kept.end());
    }
    i = j;
  }
  result.report.kept = result.records.size();
  if (result.records.empty()) throw DataError("clean: every record was dropped");
  return result;
}

std::vector<ResampledSeries> resample(std::span<const GpsRecord> records, double grid_step,
                                      double agg_window, std::vector<std::string>* warnings) {
  if (!(grid_step > 0.0)) throw ConfigError("resample: grid_step must be > 0");
  if (!(agg_window >= grid_step)) throw ConfigError("resample: agg_window must be >= grid_step");
  if (records.empty()) return {};

  double origin = std::numeric_limits<double>::infinity();
  for (const auto& r : records) origin = std::min(origin, r.timestamp);

  std::vector<ResampledSeries> out;
  const double half = agg_window / 2.0;
  std::size_t i = 0;
  while (i < records.size()) {
    std::size_t j = i;
    while (j < records.size() && records[j].bus_id == records[i].bus_id) ++j;
    const auto fixes = records.subspan(i, j - i);
    i = j;

    const auto first = static_cast<long long>(std::floor((fixes.front().timestamp - origin) / grid_step));
    const auto last = static_cast<long long>(std::ceil((fixes.back().timestamp - origin) / grid_step));

    ResampledSeries s;
    s.bus_id = fixes.front().bus_id;
    s.grid_step = grid_step;
    s.grid_start = origin + static_cast<double>(first) * grid_step;
    const auto n = static_cast<std::size_t>(last - first + 1);
    s.frames.assign(n, Frame{kNaN, kNaN, kNaN});
    s.observed.assign(n, 0);

    std::size_t lo = 0;
    bool any = false;
    for (std::size_t k = 0; k < n; ++k) {
      const double t = s.time_at(k);
      while (lo < fixes.size() && fixes[lo].timestamp < t - half) ++lo;
      double lat = 0.0, lon = 0.0, speed = 0.0;
      std::size_t count = 0;
      for (std::size_t q = lo; q < fixes.size() && fixes[q].timestamp < t + half; ++q) {
        lat += fixes[q].lat;
        lon += fixes[q].lon;
        speed += fixes[q].speed_kmh;
        ++count;
      }
      if (count == 0) continue;
      const double c = static_cast<double>(count);
      s.frames[k] = Frame{lat / c, lon / c, speed / c};
      s.observed[k] = 1;
      any = true;
    }
    if (!any) {
      if (warnings) warnings->push_back("resample: bus '" + s.bus_id + "' has no fix inside any window; excluded");
      continue;
    }
    out.push_back(std::move(s));
  }
  return out;
}

ResampledSeries impute(ResampledSeries series) {
  std::vector<std::size_t> seen;
  for (std::size_t k = 0; k < series.frames.size(); ++k)
    if (series.observed[k]) seen.push_back(k);
  if (seen.empty()) throw DataError("impute: series '" + series.bus_id + "' has no observed frame");

  auto& f = series.frames;
  for (std::size_t k = 0; k < seen.front(); ++k) f[k] = f[seen.front()];
  for (std::size_t k = seen.back() + 1; k < f.size(); ++k) f[k] = f[seen.back()];
  for (std::size_t q = 0; q + 1 < seen.size(); ++q) {
    const std::size_t a = seen[q], b = seen[q + 1];
    for (std::size_t k = a + 1; k < b; ++k) {
      const double w = static_cast<double>(k - a) / static_cast<double>(b - a);
      f[k].lat = f[a].lat + w * (f[b].lat - f[a].lat);
      f[k].lon = f[a].lon + w * (f[b].lon - f[a].lon);
      f[k].speed = f[a].speed + w * (f[b].speed - f[a].speed);
    }
  }
  return series;
}

double NormStats::normalize(Feature f, double value) const {
  if (!fitted) throw StateError("normalize: statistics have not been fitted");
  const auto& r = (*this)[f];
  if (r.max == r.min) return 0.5;
  return (value - r.min) / (r.max - r.min);
}

double NormStats::denormalize(Feature f, double value) const {
  if (!fitted) throw StateError("denormalize: statistics have not been fitted");
  const auto& r = (*this)[f];
  if (r.max == r.min) return r.min;
  return value * (r.max - r.min) + r.min;
}

Frame NormStats::normalize(const Frame& x) const {
  return {normalize(Feature::lat, x.lat), normalize(Feature::lon, x.lon),
          normalize(Feature::speed, x.speed)};
}

Frame NormStats::denormalize(const Frame& x) const {
  return {denormalize(Feature::lat, x.lat), denormalize(Feature::lon, x.lon),
          denormalize(Feature::speed, x.speed)};
}

NormStats fit_norm(std::span<const Frame> frames) {
  NormStats stats;
  constexpr double inf = std::numeric_limits<double>::infinity();
  for (auto& r : stats.ranges) r = {inf, -inf};
  bool any = false;
  for (const auto& f : frames) {
    const std::array<double, 3> v = {f.lat, f.lon, f.speed};
    if (!std::isfinite(v[0]) || !std::isfinite(v[1]) || !std::isfinite(v[2])) continue;
    any = true;
    for (std::size_t k = 0; k < 3; ++k) {
      stats.ranges[k].min = std::min(stats.ranges[k].min, v[k]);
      stats.ranges[k].max = std::max(stats.ranges[k].max, v[k]);
    }
  }
  if (!any) throw DataError("fit_norm: no finite frames");
  stats.fitted = true;
  return stats;
}

std::vector<Frame> normalize(std::span<const Frame> frames, const NormStats& stats) {
  std::vector<Frame> out;
  out.reserve(frames.size());
  for (const auto& f : frames) out.push_back(stats.normalize(f));
  return out;
}

std::vector<Frame> denormalize(std::span<const Frame> frames, const NormStats& stats) {
  std::vector<Frame> out;
  out.reserve(frames.size());
  for (const auto& f : frames) out.push_back(stats.denormalize(f));
  return out;
}

std::vector<WindowSample> make_windows(std::span<const ResampledSeries> series,
                                       const WindowSpec& spec, std::vector<std::string>* warnings) {
  if (spec.l_in < 1 || spec.l_out < 1 || spec.stride < 1 || spec.model_step < 1) {
    throw ContractError("make_windows: l_in, l_out, stride and model_step must be >= 1");
  }
  if (series.empty()) throw ContractError("make_windows: no series");
  const double step = series.front().grid_step;
  double origin = std::numeric_limits<double>::infinity();
  for (const auto& s : series) {
    if (s.grid_step != step) throw ContractError("make_windows: series use different grid steps");
    origin = std::min(origin, s.grid_start);
  }
  std::vector<std::size_t> first_index;
  std::size_t horizon = 0;
  for (const auto& s : series) {
    const double k = (s.grid_start - origin) / step;
    if (std::fabs(k - std::round(k)) > 1e-6) {
      throw ContractError("make_windows: series '" + s.bus_id + "' is not aligned to the shared grid");
    }
    first_index.push_back(static_cast<std::size_t>(std::llround(k)));
    horizon = std::max(horizon, first_index.back() + s.size());
  }

  const std::size_t n = series.size();
  const std::size_t span = spec.span();
  std::vector<WindowSample> windows;
  for (std::size_t offset = 0; offset + span <= horizon; offset += spec.stride) {
    bool complete = true;
    for (std::size_t b = 0; b < n && complete; ++b) {
      if (offset < first_index[b] || offset + span > first_index[b] + series[b].size()) {
        complete = false;
        break;
      }
      for (std::size_t k = 0; k < spec.l_in + spec.l_out; ++k) {
        const auto& f = series[b].frames[offset - first_index[b] + k * spec.model_step];
        if (!std::isfinite(f.lat) || !std::isfinite(f.lon) || !std::isfinite(f.speed)) {
          complete = false;
          break;
        }
      }
    }
    if (!complete) continue;

    WindowSample w;
    w.input = FrameArray(spec.l_in, n, 3);
    w.target = FrameArray(spec.l_out, n, 2);
    w.offset = offset;
    w.start_time = origin + static_cast<double>(offset) * step;
    for (std::size_t b = 0; b < n; ++b) {
      const std::size_t base = offset - first_index[b];
      for (std::size_t k = 0; k < spec.l_in; ++k) {
        const auto& f = series[b].frames[base + k * spec.model_step];
        w.input.at(k, b, 0) = f.lat;
        w.input.at(k, b, 1) = f.lon;
        w.input.at(k, b, 2) = f.speed;
      }
      for (std::size_t k = 0; k < spec.l_out; ++k) {
        const auto& f = series[b].frames[base + (spec.l_in + k) * spec.model_step];
        w.target.at(k, b, 0) = f.lat;
        w.target.at(k, b, 1) = f.lon;
      }
    }
    windows.push_back(std::move(w));
  }
  if (windows.empty() && warnings) {
    warnings->push_back("make_windows: no window of " + std::to_string(span) +
                        " grid steps fits every bus");
  }
  return windows;
}

void normalize_window(WindowSample& w, const NormStats& stats) {
  for (std::size_t s = 0; s < w.input.steps; ++s)
    for (std::size_t b = 0; b < w.input.nodes; ++b) {
      w.input.at(s, b, 0) = stats.normalize(Feature::lat, w.input.at(s, b, 0));
      w.input.at(s, b, 1) = stats.normalize(Feature::lon, w.input.at(s, b, 1));
      w.input.at(s, b, 2) = stats.normalize(Feature::speed, w.input.at(s, b, 2));
    }
  for (std::size_t s = 0; s < w.target.steps; ++s)
    for (std::size_t b = 0; b < w.target.nodes; ++b) {
      w.target.at(s, b, 0) = stats.normalize(Feature::lat, w.target.at(s, b, 0));
      w.target.at(s, b, 1) = stats.normalize(Feature::lon, w.target.at(s, b, 1));
    }
}

TimeInterval input_interval(const WindowSample& w, double model_step_seconds) {
  return {w.start_time, w.start_time + static_cast<double>(w.input.steps - 1) * model_step_seconds};
}

TimeInterval target_interval(const WindowSample& w, double model_step_seconds) {
  const double begin = w.start_time + static_cast<double>(w.input.steps) * model_step_seconds;
  return {begin, begin + static_cast<double>(w.target.steps - 1) * model_step_seconds};
}

DatasetSplit split(std::vector<WindowSample> windows, const SplitRatios& ratios,
                   double model_step_seconds, bool leakage_guard) {
  const std::size_t n = windows.size();
  if (n < 10) {
    throw DataError("split: need at least 10 windows, got " + std::to_string(n));
  }
  if (!(ratios.train > 0.0) || !(ratios.validation > 0.0) || !(ratios.test > 0.0) ||
      std::fabs(ratios.train + ratios.validation + ratios.test - 1.0) > 1e-9) {
    throw ConfigError("split: ratios must be positive and sum to 1");
  }
  for (std::size_t k = 1; k < n; ++k) {
    if (windows[k].start_time < windows[k - 1].start_time) {
      throw ContractError("split: windows are not ordered by start time");
    }
  }
  const auto dn = static_cast<double>(n);
  const auto cut1 = static_cast<std::size_t>(std::floor(ratios.train * dn + 1e-9));
  const auto cut2 = static_cast<std::size_t>(std::floor((ratios.train + ratios.validation) * dn + 1e-9));

  DatasetSplit out;
  out.report.total = n;
  auto it = std::make_move_iterator(windows.begin());
  out.train.assign(it, it + cut1);
  std::vector<WindowSample> validation(it + cut1, it + cut2);
  std::vector<WindowSample> test(it + cut2, std::make_move_iterator(windows.end()));

  if (!leakage_guard) {
    out.validation = std::move(validation);
    out.test = std::move(test);
    return out;
  }

  auto leaks = [&](const WindowSample& w, std::span<const WindowSample> earlier) {
    const auto in = input_interval(w, model_step_seconds);
    return std::any_of(earlier.begin(), earlier.end(), [&](const WindowSample& e) {
      return in.overlaps(target_interval(e, model_step_seconds));
    });
  };
  for (auto& w : validation) {
    if (leaks(w, out.train)) {
      ++out.report.dropped_validation;
    } else {
      out.validation.push_back(std::move(w));
    }
  }
  for (auto& w : test) {
    if (leaks(w, out.train) || leaks(w, out.validation)) {
      ++out.report.dropped_test;
    } else {
      out.test.push_back(std::move(w));
    }
  }
  return out;
}

}  // namespace gsmt
