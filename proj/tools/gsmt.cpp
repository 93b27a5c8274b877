// gsmt: synthesise, preprocess, train, evaluate and predict bus trajectories.

#include <CLI11.hpp>

#include <chrono>
#include <ctime>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "gsmt/artifacts.hpp"
#include "gsmt/config.hpp"
#include "gsmt/error.hpp"
#include "gsmt/pipeline.hpp"

namespace {

using namespace gsmt;

struct GlobalOptions {
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
};

RunConfig resolve_config(const GlobalOptions& g) {
  RunConfig config = g.config_path.empty() ? RunConfig{} : load_config(g.config_path);
  for (const auto& o : g.overrides) config.set(o);
  if (g.seed) config.seed = *g.seed;
  config.validate();
  return config;
}

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

std::vector<GpsRecord> read_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read '" + path + "'");
  return parse_gps_csv(in);
}

void write_csv(const std::string& path, const std::vector<GpsRecord>& records) {
  std::ostringstream os;
  write_gps_csv(os, records);
  write_file(path, os.str());
}

std::string sibling(const std::string& path, const std::string& suffix) {
  const auto dot = path.rfind('.');
  const auto slash = path.find_last_of('/');
  const bool has_ext = dot != std::string::npos && (slash == std::string::npos || dot > slash);
  return (has_ext ? path.substr(0, dot) : path) + suffix;
}

void print_warnings(const std::vector<std::string>& warnings) {
  for (const auto& w : warnings) std::cerr << "warning: " << w << '\n';
}

void do_synth(const RunConfig& config, const std::string& out) {
  const auto result = run_synth(config);
  print_warnings(result.warnings);
  write_csv(out, result.records);
  std::map<std::string, std::size_t> per_bus;
  for (const auto& r : result.records) ++per_bus[r.bus_id];
  std::cout << "wrote " << result.records.size() << " fixes for " << per_bus.size() << " buses to " << out
            << " (route " << result.route_length_m / 1000.0 << " km)\n";
  for (const auto& [bus, n] : per_bus) std::cout << "  " << bus << ": " << n << " fixes\n";
}

void do_preprocess(const RunConfig& config, const std::string& in, const std::string& out,
                   const std::string& report_path) {
  const auto records = read_csv(in);
  const auto bundle = preprocess(records, config);
  print_warnings(bundle.warnings);
  save_bundle(bundle, out);
  const nlohmann::json report = {
      {"raw", bundle.clean.raw},
      {"kept", bundle.clean.kept},
      {"dropped", {{"bbox", bundle.clean.dropped_bbox},
                   {"speed", bundle.clean.dropped_speed},
                   {"min_fixes", bundle.clean.dropped_min_fixes}}},
      {"buses", bundle.bus_ids},
      {"windows",
       {{"total", bundle.split.report.total},
        {"train", bundle.split.train.size()},
        {"validation", bundle.split.validation.size()},
        {"test", bundle.split.test.size()},
        {"dropped_by_leakage_guard", bundle.split.report.dropped_validation + bundle.split.report.dropped_test}}},
      {"mean_travel_distance_m", bundle.mean_travel_distance_m},
      {"digest", bundle.digest()},
  };
  write_file(report_path, report.dump(2) + "\n");
  std::cout << report.dump(2) << '\n' << "wrote " << out << " and " << report_path << '\n';
}

void do_train(const RunConfig& config, const std::string& bundle_path, const std::string& out,
              const std::string& history_path, const std::string& resume_path, bool force, bool quiet) {
  const auto bundle = load_bundle(bundle_path);
  std::optional<Checkpoint> resume;
  if (!resume_path.empty()) resume.emplace(load_checkpoint(resume_path, config.model_digest(), force));
  TrainOptions options;
  options.resume = resume ? &*resume : nullptr;
  options.force = force;
  options.on_epoch = [quiet](const EpochRecord& r) {
    if (!quiet) {
      std::cout << "epoch " << r.epoch << "  train_loss " << r.train_loss << "  val_mae " << r.validation_mae
                << std::endl;
    }
  };
  const auto checkpoint = train_model(bundle, config, options);
  save_checkpoint(checkpoint, out);
  write_file(history_path, history_json(checkpoint.state.history).dump(2) + "\n");
  const auto& s = checkpoint.state;
  std::cout << "trained " << s.epochs_done << " epochs" << (s.stopped_early ? " (early stop)" : "")
            << ", best validation MAE " << s.best_validation << "\nwrote " << out << " and " << history_path << '\n';
}

void do_evaluate(const RunConfig& config, const std::string& checkpoint_path, const std::string& bundle_path,
                 const std::string& out, const EvaluateOptions& options) {
  const auto checkpoint = load_checkpoint(checkpoint_path, config.model_digest(), options.force);
  const auto bundle = load_bundle(bundle_path);
  const auto result = evaluate(checkpoint, bundle, config, options);
  write_file(out, result.report.to_json(utc_now()).dump(2) + "\n");
  const std::string text = result.report.to_text();
  write_file(sibling(out, ".txt"), text);
  std::cout << text << "wrote " << out << '\n';
}

void do_predict(const RunConfig& config, const std::string& checkpoint_path, const std::string& recent,
                const std::string& out, const std::string& geojson, bool force) {
  const auto checkpoint = load_checkpoint(checkpoint_path, config.model_digest(), force);
  const auto records = read_csv(recent);
  const auto f = forecast(checkpoint, records, config);
  std::ostringstream csv;
  write_predictions_csv(csv, f);
  write_file(out, csv.str());
  write_file(geojson, predictions_geojson(f).dump(2) + "\n");
  std::cout << "wrote " << f.bus_ids.size() * f.predicted.steps << " predictions to " << out << " and " << geojson
            << '\n';
}

int run(int argc, char** argv) {
  CLI::App app{"Graph-attention seq2seq forecasting of multi-bus trajectories"};
  app.require_subcommand(1);
  GlobalOptions g;
  app.add_option("-c,--config", g.config_path, "INI config file")->check(CLI::ExistingFile);
  app.add_option("--set", g.overrides, "Override a config key: section.key=value (repeatable)");
  app.add_option("--seed", g.seed, "Override run.seed");

  std::string out, in, report, bundle, checkpoint, history, resume, geojson, horizons;
  bool force = false, quiet = false;
  EvaluateOptions eval_options;
  bool no_correct = false;

  auto* synth = app.add_subcommand("synth", "Generate a synthetic fleet GPS CSV");
  synth->add_option("-o,--out", out, "Output CSV (default paths.csv)");

  auto* prep = app.add_subcommand("preprocess", "Clean, resample, window and split a GPS CSV");
  prep->add_option("-i,--in", in, "Input CSV (default paths.csv)");
  prep->add_option("-o,--out", out, "Dataset bundle (default paths.bundle)");
  prep->add_option("--report", report, "Cleaning/split report JSON (default <bundle>.report.json)");

  auto* train = app.add_subcommand("train", "Train the model on a dataset bundle");
  train->add_option("-b,--bundle", bundle, "Dataset bundle (default paths.bundle)");
  train->add_option("-o,--out", out, "Checkpoint (default paths.checkpoint)");
  train->add_option("--history", history, "Per-epoch curves JSON (default <checkpoint>.history.json)");
  train->add_option("--resume", resume, "Continue training from this checkpoint");
  train->add_flag("--force", force, "Ignore config digest mismatches");
  train->add_flag("-q,--quiet", quiet, "No per-epoch output");

  auto* evaluate_cmd = app.add_subcommand("evaluate", "Score the model and baselines on the test split");
  evaluate_cmd->add_option("-k,--checkpoint", checkpoint, "Checkpoint (default paths.checkpoint)");
  evaluate_cmd->add_option("-b,--bundle", bundle, "Dataset bundle (default paths.bundle)");
  evaluate_cmd->add_option("-o,--out", out, "Metrics JSON (default paths.metrics); a .txt table is written alongside");
  evaluate_cmd->add_flag("--no-correct", no_correct, "Report the model without the task corrector");
  evaluate_cmd->add_flag("--baselines", eval_options.baselines, "Also train and score GAT+LSTM and GAT+GRU");
  evaluate_cmd->add_flag("--paper-reference", eval_options.reference_rows, "Add published reference rows");
  evaluate_cmd->add_flag("--oracle", eval_options.oracle, "Add a row predicting the ground truth (self-test)");
  evaluate_cmd->add_option("--horizons", horizons, "Comma-separated horizons in minutes");
  evaluate_cmd->add_flag("--force", force, "Ignore digest mismatches");

  auto* predict_cmd = app.add_subcommand("predict", "Forecast from a recent GPS CSV");
  predict_cmd->add_option("-k,--checkpoint", checkpoint, "Checkpoint (default paths.checkpoint)");
  predict_cmd->add_option("-r,--recent", in, "Recent GPS CSV")->required();
  predict_cmd->add_option("-o,--out", out, "Predictions CSV")->required();
  predict_cmd->add_option("--geojson", geojson, "GeoJSON output (default <out>.geojson)");
  predict_cmd->add_flag("--force", force, "Ignore config digest mismatches");

  auto* run_all = app.add_subcommand("run", "synth -> preprocess -> train -> evaluate using paths.*");
  run_all->add_flag("--baselines", eval_options.baselines, "Also train and score GAT+LSTM and GAT+GRU");
  run_all->add_flag("--paper-reference", eval_options.reference_rows, "Add published reference rows");
  run_all->add_flag("-q,--quiet", quiet, "No per-epoch output");

  auto* show = app.add_subcommand("config", "Print the effective configuration");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  const RunConfig config = resolve_config(g);
  const auto& p = config.paths;
  auto or_default = [](const std::string& v, const std::string& d) { return v.empty() ? d : v; };
  eval_options.force = force;
  eval_options.correct = !no_correct;
  if (!horizons.empty()) {
    RunConfig scratch;
    scratch.set("data.horizons_minutes", horizons);
    eval_options.horizons_minutes = scratch.data.horizons_minutes;
  }

  if (*synth) {
    do_synth(config, or_default(out, p.csv));
  } else if (*prep) {
    const auto bundle_out = or_default(out, p.bundle);
    do_preprocess(config, or_default(in, p.csv), bundle_out, or_default(report, sibling(bundle_out, ".report.json")));
  } else if (*train) {
    const auto ckpt = or_default(out, p.checkpoint);
    do_train(config, or_default(bundle, p.bundle), ckpt, or_default(history, sibling(ckpt, ".history.json")), resume,
             force, quiet);
  } else if (*evaluate_cmd) {
    do_evaluate(config, or_default(checkpoint, p.checkpoint), or_default(bundle, p.bundle),
                or_default(out, p.metrics), eval_options);
  } else if (*predict_cmd) {
    do_predict(config, or_default(checkpoint, p.checkpoint), in, out, or_default(geojson, sibling(out, ".geojson")),
               force);
  } else if (*run_all) {
    do_synth(config, p.csv);
    do_preprocess(config, p.csv, p.bundle, sibling(p.bundle, ".report.json"));
    do_train(config, p.bundle, p.checkpoint, sibling(p.checkpoint, ".history.json"), "", false, quiet);
    do_evaluate(config, p.checkpoint, p.bundle, p.metrics, eval_options);
  } else if (*show) {
    std::cout << config.to_ini();
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const gsmt::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
