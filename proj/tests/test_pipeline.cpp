#include <doctest.h>

#include <unistd.h>

#include <atomic>
#include <functional>
#include <filesystem>
#include <sstream>
#include <string>

#include "gsmt/artifacts.hpp"
#include "gsmt/config.hpp"
#include "gsmt/error.hpp"
#include "gsmt/pipeline.hpp"

using namespace gsmt;
namespace fs = std::filesystem;

namespace {

RunConfig small_config() {
  RunConfig c;
  for (const char* kv : {"synth.n_buses=3", "synth.headway_s=300", "synth.duration_s=14400", "synth.dropout_prob=0",
                         "data.model_step=1", "data.history_minutes=5", "data.horizons_minutes=2,3",
                         "model.hidden_width=8", "model.gat_layers=1", "train.epochs=2", "train.patience=0"}) {
    c.set(kv);
  }
  return c;
}

std::string scratch(const std::string& name) {
  static std::atomic<int> counter{0};
  const auto dir = fs::temp_directory_path() / ("gsmt-test-" + std::to_string(::getpid()));
  fs::create_directories(dir);
  return (dir / (std::to_string(counter++) + "-" + name)).string();
}

std::string message_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.what();
  }
  return {};
}

bool mentions(const std::string& text, std::initializer_list<const char*> words) {
  for (const char* w : words)
    if (text.find(w) == std::string::npos) return false;
  return true;
}

// Shared small run, built once.
struct SmallRun {
  RunConfig config = small_config();
  SynthOutput synth = run_synth(config);
  DatasetBundle bundle = preprocess(synth.records, config);
  Checkpoint checkpoint = train_model(bundle, config);
};

const SmallRun& small_run() {
  static const SmallRun run;
  return run;
}

}  // namespace

TEST_SUITE("config") {

TEST_CASE("defaults") {
  RunConfig c;
  CHECK_NOTHROW(c.validate());
  CHECK(c.l_in() == 10);
  CHECK(c.l_out() == 5);
  CHECK(c.steps_for(15.0) == 3);
  CHECK(c.model_step_seconds() == 300.0);
}

TEST_CASE("cross-field errors name both fields") {
  auto broken = [](const char* kv) {
    return message_of([&] {
      RunConfig c;
      c.set(kv);
      c.validate();
    });
  };
  CHECK(mentions(broken("data.agg_window_s=30"), {"data.agg_window_s", "data.grid_step_s"}));
  CHECK(mentions(broken("data.history_minutes=7"), {"data.history_minutes", "data.model_step"}));
  CHECK(mentions(broken("data.horizons_minutes=15,12"), {"data.horizons_minutes", "data.model_step"}));
  CHECK(mentions(broken("split.train=0.5"), {"split.train", "split.test"}));
  CHECK(mentions(broken("corrector.recent_steps=11"), {"corrector.recent_steps", "data.history_minutes"}));
  RunConfig loop;
  loop.set("synth.route_kind=loop");
  loop.set("synth.n_waypoints=2");
  CHECK(mentions(message_of([&] { loop.validate(); }), {"synth.n_waypoints", "synth.route_kind"}));
}

TEST_CASE("overrides") {
  RunConfig c;
  c.set("model.hidden_width=16");
  c.set("model.cell", "gru");
  c.set("data.horizons_minutes=5,10,20");
  CHECK(c.model.hidden_width == 16);
  CHECK(c.model.cell == CellKind::gru);
  CHECK(c.data.horizons_minutes == std::vector<double>{5.0, 10.0, 20.0});
  CHECK(c.l_out() == 4);
  CHECK_THROWS_AS(c.set("model.nope=1"), ConfigError);
  CHECK_THROWS_AS(c.set("model.hidden_width=abc"), ConfigError);
  CHECK_THROWS_AS(c.set("model.hidden_width"), ConfigError);
  CHECK_THROWS_AS(c.set("corrector.enabled=maybe"), ConfigError);
}

TEST_CASE("INI round trip") {
  RunConfig c = small_config();
  c.set("optim.lr=0.0025");
  c.set("eval.accuracy_mode=per_point");
  c.set("synth.congestion=false");
  std::istringstream in(c.to_ini());
  const auto back = parse_config(in);
  CHECK(back.entries() == c.entries());
  CHECK(back.data_digest() == c.data_digest());
  CHECK(back.model_digest() == c.model_digest());

  std::istringstream zero("[model]\nhidden_width = 0\n");
  const auto parsed = parse_config(zero);
  CHECK_THROWS_AS(parsed.validate(), ConfigError);
  std::istringstream loose("hidden_width = 4\n");
  CHECK_THROWS_AS(parse_config(loose), ConfigError);
  std::istringstream unknown("[model]\nwidth = 4\n");
  CHECK_THROWS_AS(parse_config(unknown), ConfigError);
  CHECK_THROWS_AS(load_config("/nonexistent/gsmt.ini"), Error);
}

TEST_CASE("digest scope") {
  const RunConfig base;
  auto with = [](const char* kv) {
    RunConfig c;
    c.set(kv);
    return c;
  };
  CHECK(with("data.grid_step_s=30").data_digest() != base.data_digest());
  auto resplit = with("split.train=0.7");
  resplit.set("split.validation=0.2");
  CHECK(resplit.data_digest() != base.data_digest());
  CHECK(with("train.epochs=5").data_digest() == base.data_digest());
  CHECK(with("train.epochs=5").model_digest() == base.model_digest());
  CHECK(with("optim.lr=0.01").model_digest() == base.model_digest());
  CHECK(with("model.hidden_width=16").model_digest() != base.model_digest());
  CHECK(with("model.hidden_width=16").data_digest() == base.data_digest());
  CHECK(with("graph.sigma_d_m=500").model_digest() != base.model_digest());
  CHECK(with("data.stride=2").model_digest() != base.model_digest());
}

TEST_CASE("congestion zones") {
  const auto zones = parse_congestion("0.1:0.3:0.4:0:100;0.5:1:0.8:50:60", 1000.0);
  REQUIRE(zones.size() == 2);
  CHECK(zones[0].arc_begin_m == doctest::Approx(100.0));
  CHECK(zones[0].arc_end_m == doctest::Approx(300.0));
  CHECK(zones[0].multiplier == 0.4);
  CHECK(zones[1].time_begin_s == 50.0);
  CHECK(parse_congestion("", 1000.0).empty());
  CHECK_THROWS_AS(parse_congestion("0.1:0.3:0.4", 1000.0), ConfigError);
  CHECK_THROWS_AS(parse_congestion("0.3:0.1:0.4:0:10", 1000.0), ConfigError);
  CHECK_THROWS_AS(parse_congestion("0.1:0.3:1.5:0:10", 1000.0), ConfigError);
}

}  // TEST_SUITE

TEST_SUITE("artifacts") {

TEST_CASE("bundle round trip is byte-identical") {
  const auto& run = small_run();
  const auto path = scratch("bundle.json");
  save_bundle(run.bundle, path);
  const auto loaded = load_bundle(path);
  CHECK(loaded.digest() == run.bundle.digest());
  CHECK(loaded.stats.ranges[0].min == run.bundle.stats.ranges[0].min);
  CHECK(loaded.split.test == run.bundle.split.test);
  const auto again = scratch("bundle2.json");
  save_bundle(loaded, again);
  CHECK(read_file(path) == read_file(again));

  auto text = read_file(path);
  const auto pos = text.find("\"mean_travel_distance_m\"");
  REQUIRE(pos != std::string::npos);
  text.insert(text.find(':', pos) + 1, "1");
  write_file(again, text);
  CHECK_THROWS_AS(load_bundle(again), DataError);
  write_file(again, "{not json");
  CHECK_THROWS_AS(load_bundle(again), FormatError);
}

TEST_CASE("checkpoint round trip is byte-identical") {
  const auto& run = small_run();
  const auto path = scratch("ckpt.json");
  save_checkpoint(run.checkpoint, path);
  const auto loaded = load_checkpoint(path, run.config.model_digest());
  const auto again = scratch("ckpt2.json");
  save_checkpoint(loaded, again);
  CHECK(read_file(path) == read_file(again));
  CHECK(loaded.state.history.size() == run.checkpoint.state.history.size());

  for (const auto& sample : make_samples(run.bundle.split.test, run.bundle.stats, run.config.graph)) {
    CHECK(predict(sample.window, sample.graph, loaded.state.best) ==
          predict(sample.window, sample.graph, run.checkpoint.state.best));
  }

  CHECK_THROWS_AS(load_checkpoint(path, "0000"), CompatibilityError);
  CHECK_NOTHROW(load_checkpoint(path, "0000", true));
  CompatibilityError probe("x");
  CHECK(probe.exit_code() == 5);
}

TEST_CASE("parameter import checks names and shapes") {
  ModelConfig small;
  small.hidden_width = 4;
  ModelConfig wide = small;
  wide.hidden_width = 6;
  GsmtModel a(small), b(wide);
  CHECK_THROWS_AS(parameters_from_json(parameters_to_json(a), b), CompatibilityError);
  GsmtModel c(small);
  c.seq.head_b.mutable_values()[0] = 0.5;
  parameters_from_json(parameters_to_json(c), a);
  CHECK(a.seq.head_b.values()[0] == 0.5);
  auto j = parameters_to_json(a);
  j.erase("head.b");
  CHECK_THROWS_AS(parameters_from_json(j, b), CompatibilityError);
}

}  // TEST_SUITE

TEST_SUITE("pipeline") {

TEST_CASE("synthesis produces one fix per interval") {
  RunConfig c = small_config();
  c.set("synth.duration_s=3600");
  const auto out = run_synth(c);
  CHECK(out.records.size() == 3 * 121);
  CHECK(out.route_length_m > 0.8 * 12000.0);
  const auto again = run_synth(c);
  CHECK(again.records.size() == out.records.size());
  CHECK(again.records.back().lat == out.records.back().lat);
}

TEST_CASE("preprocessing") {
  const auto& run = small_run();
  const auto& b = run.bundle;
  CHECK(b.bus_ids.size() == 3);
  CHECK(b.l_in == 5);
  CHECK(b.l_out == 3);
  CHECK(b.stats.fitted);
  CHECK(b.data_digest == run.config.data_digest());
  CHECK(b.mean_travel_distance_m > 0.0);
  CHECK_FALSE(b.split.train.empty());
  CHECK_FALSE(b.split.validation.empty());
  CHECK_FALSE(b.split.test.empty());
  for (const auto& w : b.split.train)
    for (double v : w.input.values) {
      CHECK(v >= -1e-12);
      CHECK(v <= 1.0 + 1e-12);
    }
  CHECK_THROWS_AS(preprocess(std::vector<GpsRecord>{}, run.config), DataError);
}

TEST_CASE("training records its history") {
  const auto& run = small_run();
  CHECK(run.checkpoint.state.history.size() == 2);
  CHECK(history_json(run.checkpoint.state.history).size() == 2);
  CHECK(run.checkpoint.model_digest == run.config.model_digest());
  CHECK(run.checkpoint.bundle_digest == run.bundle.digest());
  CHECK(run.checkpoint.modes.centroids[0] <= run.checkpoint.modes.centroids[2]);

  RunConfig other = run.config;
  other.set("data.grid_step_s=30");
  CHECK_THROWS_AS(train_model(run.bundle, other), CompatibilityError);
}

TEST_CASE("resuming continues the same run") {
  const auto& run = small_run();
  RunConfig one = run.config;
  one.set("train.epochs=1");
  const auto first = train_model(run.bundle, one);
  TrainOptions opts;
  opts.resume = &first;
  const auto resumed = train_model(run.bundle, run.config, opts);
  REQUIRE(resumed.state.history.size() == 2);
  for (std::size_t k = 0; k < 2; ++k) {
    CHECK(resumed.state.history[k].train_loss == run.checkpoint.state.history[k].train_loss);
    CHECK(resumed.state.history[k].validation_mae == run.checkpoint.state.history[k].validation_mae);
  }
  RunConfig wide = run.config;
  wide.set("model.hidden_width=4");
  CHECK_THROWS_AS(train_model(run.bundle, wide, opts), CompatibilityError);
}

TEST_CASE("evaluation") {
  const auto& run = small_run();
  EvaluateOptions opts;
  opts.oracle = true;
  const auto ev = evaluate(run.checkpoint, run.bundle, run.config, opts);
  std::vector<std::string> names;
  for (const auto& m : ev.methods) names.push_back(m.method);
  CHECK(names == std::vector<std::string>{"GSMT", "GSMT-raw", "HA", "oracle"});
  const auto& oracle = ev.methods.back();
  for (const auto& h : oracle.horizons) {
    CHECK(h.mae == 0.0);
    CHECK(h.mission_accuracy == 1.0);
    CHECK(h.n_windows == run.bundle.split.test.size());
  }

  // HA forecasts the same training average for every test window.
  const auto ha = baseline_ha(run.bundle.split.train);
  std::vector<FrameArray> ha_preds, truth;
  for (const auto& w : run.bundle.split.test) {
    ha_preds.push_back(prefix_steps(ha, 3));
    truth.push_back(w.target);
  }
  CHECK(ev.methods[2].horizons[1].mae == mae(ha_preds, truth));

  RunConfig off = run.config;
  off.set("corrector.beta_low=0");
  off.set("corrector.beta_medium=0");
  off.set("corrector.beta_high=0");
  const auto zero = evaluate(run.checkpoint, run.bundle, off);
  for (std::size_t h = 0; h < 2; ++h) {
    CHECK(zero.methods[0].horizons[h].mae == zero.methods[1].horizons[h].mae);
    CHECK(zero.methods[0].horizons[h].mission_accuracy == zero.methods[1].horizons[h].mission_accuracy);
  }

  EvaluateOptions shorter;
  shorter.horizons_minutes = {1.0};
  CHECK(evaluate(run.checkpoint, run.bundle, run.config, shorter).report.horizons_minutes == std::vector<double>{1.0});
  shorter.horizons_minutes = {4.0};
  CHECK_THROWS_AS(evaluate(run.checkpoint, run.bundle, run.config, shorter), ConfigError);

  RunConfig wide = run.config;
  wide.set("model.hidden_width=4");
  CHECK_THROWS_AS(evaluate(run.checkpoint, run.bundle, wide), CompatibilityError);
}

TEST_CASE("forecast outputs") {
  const auto& run = small_run();
  std::vector<GpsRecord> recent;
  const double cutoff = run.synth.records.front().timestamp + 14400.0 - 1800.0;
  for (const auto& r : run.synth.records)
    if (r.timestamp >= cutoff) recent.push_back(r);
  const auto f = forecast(run.checkpoint, recent, run.config);
  CHECK(f.bus_ids.size() == 3);
  CHECK(f.predicted.steps == 3);
  CHECK(f.history.steps == 5);
  CHECK(f.step_seconds == 60.0);

  std::ostringstream csv;
  write_predictions_csv(csv, f);
  std::size_t lines = 0;
  for (char ch : csv.str()) lines += ch == '\n';
  CHECK(lines == 1 + 3 * 3);

  const auto gj = predictions_geojson(f);
  CHECK(gj["type"] == "FeatureCollection");
  REQUIRE(gj["features"].size() == 6);
  for (std::size_t k = 0; k < gj["features"].size(); k += 2) {
    const auto& hist = gj["features"][k];
    const auto& pred = gj["features"][k + 1];
    CHECK(hist["type"] == "Feature");
    CHECK(hist["geometry"]["type"] == "LineString");
    CHECK(pred["properties"]["kind"] == "predicted");
    CHECK(pred["geometry"]["coordinates"].size() == 4);
    CHECK(pred["geometry"]["coordinates"][0] == hist["geometry"]["coordinates"].back());
    for (const auto& pt : pred["geometry"]["coordinates"]) {
      CHECK(pt[0].get<double>() > 100.0);  // longitude first
      CHECK(pt[1].get<double>() < 10.0);
    }
  }

  std::vector<GpsRecord> too_short(recent.end() - 6, recent.end());
  CHECK_THROWS_AS(forecast(run.checkpoint, too_short, run.config), DataError);
}

}  // TEST_SUITE
