#pragma once

#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "CLI11.hpp"
#include "memmeter/analysis.hpp"
#include "memmeter/attributes.hpp"
#include "memmeter/dataset.hpp"
#include "memmeter/error.hpp"
#include "memmeter/measurer.hpp"
#include "memmeter/predictor.hpp"
#include "memmeter/synthetic.hpp"

#ifndef MEMMETER_VERSION
#define MEMMETER_VERSION "0.0.0"
#endif

namespace memmeter::cli {

namespace fs = std::filesystem;
using nlohmann::json;

enum ExitCode : int { kOk = 0, kFailure = 1, kConfigError = 2, kDataError = 3, kMeasurementFailure = 4 };

// Everything a command needs. Precedence: built-in defaults, then the JSON
// config file, then command-line flags.
struct RunConfig {
  std::optional<std::string> data;
  std::optional<std::string> unseen_data;
  std::optional<std::string> scores;
  std::optional<std::string> attributes;
  std::optional<std::string> model;
  std::optional<std::string> merge_csv;
  std::string out = "out";
  std::uint64_t seed = 0;
  std::size_t workers = std::max(1u, std::thread::hardware_concurrency());
  std::optional<std::vector<std::string>> set_a;
  json machine = json::object();
  json measure = json::object();
  json predictor = json::object();
  json analysis = json::object();
  json sweep = json::object();
};

inline void to_json(json& j, const RunConfig& c) {
  auto opt = [](const std::optional<std::string>& v) { return v ? json(*v) : json(nullptr); };
  j = {{"data", opt(c.data)},          {"unseen_data", opt(c.unseen_data)},
       {"scores", opt(c.scores)},      {"attributes", opt(c.attributes)},
       {"model", opt(c.model)},        {"merge_csv", opt(c.merge_csv)},
       {"out", c.out},                 {"seed", c.seed},
       {"workers", c.workers},         {"set_a", c.set_a ? json(*c.set_a) : json(nullptr)},
       {"machine", c.machine},         {"measure", c.measure},
       {"predictor", c.predictor},     {"analysis", c.analysis},
       {"sweep", c.sweep}};
}

inline RunConfig load_config_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw config_error("cannot open config file " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw config_error("config file " + path.string() + ": " + e.what());
  }
  if (!doc.is_object()) throw config_error("config file must hold a JSON object");
  RunConfig c;
  auto str = [&doc](const char* key, std::optional<std::string>& field) {
    if (doc.contains(key) && !doc[key].is_null()) field = doc[key].get<std::string>();
  };
  str("data", c.data);
  str("unseen_data", c.unseen_data);
  str("scores", c.scores);
  str("attributes", c.attributes);
  str("model", c.model);
  str("merge_csv", c.merge_csv);
  c.out = doc.value("out", c.out);
  c.seed = doc.value("seed", c.seed);
  c.workers = doc.value("workers", c.workers);
  if (doc.contains("set_a") && !doc["set_a"].is_null()) c.set_a = doc["set_a"].get<std::vector<std::string>>();
  for (auto [key, field] : {std::pair{"machine", &c.machine}, std::pair{"measure", &c.measure},
                            std::pair{"predictor", &c.predictor}, std::pair{"analysis", &c.analysis},
                            std::pair{"sweep", &c.sweep}}) {
    if (doc.contains(key)) *field = doc[key];
  }
  return c;
}

// Maps the active exception to an exit code and prints a categorized message.
inline int report_exception() {
  try {
    throw;
  } catch (const measurement_failure& e) {
    spdlog::error("measurement failure: {}", e.what());
    return kMeasurementFailure;
  } catch (const data_error& e) {
    spdlog::error("data error: {}", e.what());
    return kDataError;
  } catch (const config_error& e) {
    spdlog::error("config error: {}", e.what());
    return kConfigError;
  } catch (const usage_error& e) {
    spdlog::error("config error: {}", e.what());
    return kConfigError;
  } catch (const json::exception& e) {
    spdlog::error("config error: {}", e.what());
    return kConfigError;
  } catch (const fs::filesystem_error& e) {
    spdlog::error("data error: {}", e.what());
    return kDataError;
  } catch (const std::exception& e) {
    spdlog::error("error: {}", e.what());
    return kFailure;
  }
}

inline void configure_logging() {
  static bool done = false;
  if (!done) {
    auto logger = spdlog::stderr_color_mt("memmeter");
    spdlog::set_default_logger(logger);
    done = true;
  }
  spdlog::set_level(spdlog::level::info);
  if (const char* level = std::getenv("MEMMETER_LOG")) spdlog::set_level(spdlog::level::from_str(level));
}

inline void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  write_bytes(path, text);
}

inline Dataset require_dataset(const std::optional<std::string>& path, const char* flag = "--data") {
  if (!path) throw config_error(std::string("missing ") + flag);
  return load_dataset(*path);
}

inline std::string iso_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// ---------------------------------------------------------------------------
// measure

inline EpisodeConfig episode_config(const RunConfig& rc, const Dataset& dataset) {
  json machine = rc.machine;
  machine["channels"] = dataset.channels();
  machine["height"] = dataset.height();
  machine["width"] = dataset.width();
  EpisodeConfig base;
  base.machine = machine.get<MachineSpec>();
  json measure = rc.measure;
  measure["machine"] = machine;
  EpisodeConfig config = base;
  from_json(measure, config);
  config.base_seed = rc.seed;
  config.validate();
  return config;
}

inline std::vector<std::string> choose_set_a(const RunConfig& rc, const Dataset& dataset, std::size_t n) {
  if (rc.set_a) return *rc.set_a;
  if (dataset.size() < n) {
    throw data_error("dataset has " + std::to_string(dataset.size()) + " images, fewer than n = " + std::to_string(n));
  }
  auto ids = dataset.ids();
  ids.resize(n);
  return ids;
}

inline void check_dataset_size(const Dataset& dataset, const Dataset* unseen, const EpisodeConfig& config) {
  const std::size_t held = config.held_out_count();
  if (unseen == nullptr) {
    const std::size_t needed = 3 * config.n + 2 * held;
    if (dataset.size() < needed) {
      throw data_error("dataset has " + std::to_string(dataset.size()) + " images; n = " + std::to_string(config.n) +
                       " needs at least " + std::to_string(needed));
    }
  } else {
    if (dataset.size() < 2 * config.n + held || unseen->size() < config.n + held) {
      throw data_error("dataset/unseen pool too small for n = " + std::to_string(config.n));
    }
  }
}

struct MeasureOutcome {
  Measurement measurement;
  EpisodeConfig config;
  double wall_seconds = 0.0;
};

inline MeasureOutcome run_measurement(const RunConfig& rc, const Dataset& dataset, const Dataset* unseen) {
  const auto config = episode_config(rc, dataset);
  check_dataset_size(dataset, unseen, config);
  const auto set_a = choose_set_a(rc, dataset, config.n);
  spdlog::info("measuring {} images with {} (n={}, m={}, epochs_a={}, epochs_b={}, workers={})", set_a.size(),
               config.machine.descriptor(), config.n, config.m, config.epochs_a, config.epochs_b, rc.workers);
  const auto start = std::chrono::steady_clock::now();
  MeasureOptions options;
  options.workers = rc.workers;
  options.unseen_pool = unseen;
  auto measurement = measure(dataset, set_a, config, options);
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return {std::move(measurement), config, wall};
}

inline void write_measurement(const fs::path& dir, const RunConfig& rc, const MeasureOutcome& outcome) {
  write_text(dir / "scores.csv", score_table_csv(outcome.measurement.scores));
  write_text(dir / "episodes.jsonl", episodes_jsonl(outcome.measurement.episodes));
  json manifest = {{"command", "measure"},
                   {"toolkit_version", MEMMETER_VERSION},
                   {"config", json(rc)},
                   {"episode_config", json(outcome.config)},
                   {"config_hash", outcome.measurement.scores.config_hash},
                   {"m_effective", outcome.measurement.scores.m_effective},
                   {"wall_time_seconds", outcome.wall_seconds},
                   {"finished_at", iso_timestamp()}};
  write_text(dir / "manifest.json", manifest.dump(2) + "\n");
}

inline int cmd_measure(const RunConfig& rc) {
  const auto dataset = require_dataset(rc.data);
  std::optional<Dataset> unseen;
  if (rc.unseen_data) unseen = load_dataset(*rc.unseen_data);
  const auto outcome = run_measurement(rc, dataset, unseen ? &*unseen : nullptr);
  write_measurement(rc.out, rc, outcome);
  spdlog::info("wrote {} scores (m_effective={}) to {}", outcome.measurement.scores.size(),
               outcome.measurement.scores.m_effective, rc.out);
  return kOk;
}

// ---------------------------------------------------------------------------
// attributes / analyze

inline AttributeTable dataset_attributes(const Dataset& dataset) {
  std::vector<std::pair<std::string, AttributeVector>> values;
  for (const auto& img : dataset.images()) values.emplace_back(img.id, compute_attributes(img));
  return attribute_table(values);
}

inline int cmd_attributes(const RunConfig& rc) {
  const auto dataset = require_dataset(rc.data);
  const auto table = dataset_attributes(dataset);
  write_text(fs::path(rc.out) / "attributes.csv", attribute_table_csv(table, dataset.ids()));
  spdlog::info("wrote attributes for {} images to {}", dataset.size(), rc.out);
  return kOk;
}

inline int cmd_analyze(const RunConfig& rc) {
  if (!rc.scores) throw config_error("analyze needs --scores");
  const auto scores = read_score_table(*rc.scores);
  std::optional<Dataset> dataset;
  if (rc.data) dataset = load_dataset(*rc.data);

  AttributeTable table;
  if (rc.attributes) {
    table = read_attribute_table(*rc.attributes);
  } else if (dataset) {
    table = dataset_attributes(*dataset);
  }
  if (rc.merge_csv) table = merge_tables(table, read_attribute_table(*rc.merge_csv));
  const fs::path out(rc.out);

  const auto group_count = rc.analysis.value("group_count", std::size_t{10});
  const auto groups = group_by_decile(scores, table, group_count);
  write_text(out / "groups.json", to_json_report(groups).dump(2) + "\n");
  write_text(out / "groups.csv", group_plot_csv(groups));

  if (!table.columns.empty()) {
    const auto report = correlate(scores, table);
    for (const auto& c : report.columns) {
      if (c.dropped > 0) spdlog::info("column {}: dropped {} scored images without a value", c.column, c.dropped);
    }
    write_text(out / "correlations.json", to_json_report(report).dump(2) + "\n");
    write_text(out / "correlations.csv", correlation_csv(report));
  }

  if (dataset && !dataset->labels().empty()) {
    const auto ranking = rank_labels(scores, dataset->labels(), rc.analysis.value("k", std::size_t{5}),
                                     rc.analysis.value("min_count", std::size_t{5}));
    write_text(out / "labels.json", to_json_report(ranking).dump(2) + "\n");
    write_text(out / "labels.csv", label_ranking_csv(ranking));
  }
  spdlog::info("wrote analysis reports to {}", rc.out);
  return kOk;
}

// ---------------------------------------------------------------------------
// train-predictor / predict

inline RegressionConfig regression_config(const RunConfig& rc) {
  json doc = rc.predictor;
  if (!doc.contains("seed")) doc["seed"] = rc.seed;
  if (!doc.contains("split_seed")) doc["split_seed"] = rc.seed;
  auto config = doc.get<RegressionConfig>();
  config.validate();
  return config;
}

inline int cmd_train_predictor(const RunConfig& rc) {
  if (!rc.scores) throw config_error("train-predictor needs --scores");
  const auto scores = read_score_table(*rc.scores);
  const auto dataset = require_dataset(rc.data);
  const auto config = regression_config(rc);
  auto trained = train_predictor(scores, dataset, config);
  const auto rho = evaluate_predictor(trained.model, scores, dataset, trained.test_ids);

  const fs::path out(rc.out);
  save_predictor(trained.model, out / "model");
  std::string history = "epoch,train_mse\n";
  for (std::size_t i = 0; i < trained.history.size(); ++i) {
    history += std::to_string(i + 1) + "," + format_double(trained.history[i]) + "\n";
  }
  write_text(out / "history.csv", history);
  std::string split = "image_id,split\n";
  for (const auto& id : trained.train_ids) split += id + ",train\n";
  for (const auto& id : trained.test_ids) split += id + ",test\n";
  write_text(out / "split.csv", split);
  const json eval = {{"test_spearman", rho ? json(*rho) : json("n/a")},
                     {"test_count", trained.test_ids.size()},
                     {"train_count", trained.train_ids.size()},
                     {"config", json(config)}};
  write_text(out / "evaluation.json", eval.dump(2) + "\n");
  spdlog::info("trained predictor on {} images; test spearman {}", trained.train_ids.size(), format_optional(rho));
  return kOk;
}

inline int cmd_predict(const RunConfig& rc) {
  const fs::path model_dir = rc.model ? fs::path(*rc.model) : fs::path(rc.out) / "model";
  const auto model = load_predictor(model_dir);
  const auto dataset = require_dataset(rc.data);
  const auto rows = predict(model, dataset.images());
  std::string csv = "image_id,predicted_score\n";
  for (const auto& r : rows) csv += r.image_id + "," + format_double(r.score) + "\n";
  write_text(fs::path(rc.out) / "predictions.csv", csv);
  spdlog::info("wrote {} predictions to {}", rows.size(), rc.out);
  return kOk;
}

// ---------------------------------------------------------------------------
// sweep

inline std::string json_scalar_text(const json& v) { return v.is_string() ? v.get<std::string>() : v.dump(); }

// Applies one knob value to a copy of `rc`.
inline RunConfig apply_knob(RunConfig rc, const std::string& knob, const json& value) {
  if (knob == "seed") {
    rc.seed = value.get<std::uint64_t>();
  } else if (knob == "n" || knob == "epochs_a" || knob == "epochs_b" || knob == "m") {
    rc.measure[knob] = value.get<std::size_t>();
  } else if (knob == "machine") {
    if (value.is_string()) {
      rc.machine = json{{"kind", value}};
    } else {
      rc.machine = value;
    }
  } else {
    throw config_error("unknown sweep knob '" + knob + "' (expected seed, n, epochs_a, epochs_b, m or machine)");
  }
  return rc;
}

inline int cmd_sweep(const RunConfig& rc) {
  const std::string knob = rc.sweep.value("knob", std::string("seed"));
  const json values = rc.sweep.value("values", json::array());
  if (!values.is_array() || values.size() < 2) {
    throw usage_error("sweep needs at least two values for knob '" + knob + "'");
  }
  const auto dataset = require_dataset(rc.data);
  std::optional<Dataset> unseen;
  if (rc.unseen_data) unseen = load_dataset(*rc.unseen_data);

  std::vector<NamedScoreTable> runs;
  std::vector<std::pair<RunConfig, MeasureOutcome>> outcomes;
  for (const auto& value : values) {
    const RunConfig sub = apply_knob(rc, knob, value);
    const std::string run_id = knob + "=" + json_scalar_text(value);
    spdlog::info("sweep run {}", run_id);
    auto outcome = run_measurement(sub, dataset, unseen ? &*unseen : nullptr);
    runs.push_back({run_id, outcome.measurement.scores});
    outcomes.emplace_back(sub, std::move(outcome));
  }
  const auto matrix = consistency_matrix(runs);
  const fs::path out(rc.out);
  for (std::size_t i = 0; i < runs.size(); ++i) {
    write_measurement(out / "runs" / runs[i].run_id, outcomes[i].first, outcomes[i].second);
  }
  write_text(out / "consistency.csv", consistency_csv(matrix));
  write_text(out / "consistency.json", to_json_report(matrix).dump(2) + "\n");
  spdlog::info("wrote {}x{} consistency matrix to {}", runs.size(), runs.size(), rc.out);
  return kOk;
}

// ---------------------------------------------------------------------------
// make-fixture: writes the structured (seen) and noise (unseen) synthetic sets.

struct FixtureOptions {
  std::size_t count = 96;
  std::size_t side = 8;
};

inline int cmd_make_fixture(const RunConfig& rc, const FixtureOptions& opts) {
  const fs::path out(rc.out);
  write_ppm_dir(synthetic::structured_images(opts.count, opts.side, rc.seed), out / "seen");
  write_ppm_dir(synthetic::noise_images(opts.count, opts.side, rc.seed), out / "unseen");
  spdlog::info("wrote {} structured and {} noise images under {}", opts.count, opts.count, rc.out);
  return kOk;
}

// ---------------------------------------------------------------------------

inline int run(int argc, const char* const* argv) {
  configure_logging();
  CLI::App app{"memmeter: measure, predict and analyze how memorable images are to trainable machines"};
  app.require_subcommand(1);
  app.set_version_flag("--version", MEMMETER_VERSION);

  struct Flags {
    std::string config, data, unseen_data, out, merge_csv, scores, attributes, model, knob;
    std::vector<std::string> values;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> workers;
  } flags;
  FixtureOptions fixture;

  auto add_common = [&flags](CLI::App* sub) {
    sub->add_option("--config", flags.config, "JSON config file; flags override its fields");
    sub->add_option("--data", flags.data, "dataset: PPM directory (manifest.csv optional) or CIFAR .bin file");
    sub->add_option("--out", flags.out, "output directory");
    sub->add_option("--seed", flags.seed, "base seed for every random stream");
    sub->add_option("--workers", flags.workers, "parallel episode workers (default: all cores)");
  };

  auto* measure_cmd = app.add_subcommand("measure", "run the three-stage measurer and write a score table");
  auto* attributes_cmd = app.add_subcommand("attributes", "compute per-image pixel attributes");
  auto* analyze_cmd = app.add_subcommand("analyze", "decile groups, attribute correlations and label rankings");
  auto* train_cmd = app.add_subcommand("train-predictor", "train a score regressor on a score table");
  auto* predict_cmd = app.add_subcommand("predict", "predict scores with a trained regressor");
  auto* sweep_cmd = app.add_subcommand("sweep", "measure under several settings and compare the rankings");
  auto* fixture_cmd = app.add_subcommand("make-fixture", "write a synthetic seen/unseen image fixture");
  for (auto* sub : {measure_cmd, attributes_cmd, analyze_cmd, train_cmd, predict_cmd, sweep_cmd, fixture_cmd}) {
    add_common(sub);
  }
  for (auto* sub : {measure_cmd, sweep_cmd}) {
    sub->add_option("--unseen-data", flags.unseen_data, "draw unseen images (set C) from this dataset instead");
  }
  analyze_cmd->add_option("--scores", flags.scores, "score table CSV");
  analyze_cmd->add_option("--attributes", flags.attributes, "attribute CSV (computed from --data when omitted)");
  analyze_cmd->add_option("--merge-csv", flags.merge_csv, "extra per-image columns to correlate (image_id first)");
  train_cmd->add_option("--scores", flags.scores, "score table CSV");
  predict_cmd->add_option("--model", flags.model, "trained model directory (default: <out>/model)");
  sweep_cmd->add_option("--knob", flags.knob, "seed | n | epochs_a | epochs_b | m | machine");
  sweep_cmd->add_option("--values", flags.values, "knob values")->delimiter(',');
  fixture_cmd->add_option("--count", fixture.count, "images per set");
  fixture_cmd->add_option("--side", fixture.side, "image side length in pixels");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigError;
  }

  try {
    RunConfig rc = flags.config.empty() ? RunConfig{} : load_config_file(flags.config);
    if (!flags.data.empty()) rc.data = flags.data;
    if (!flags.unseen_data.empty()) rc.unseen_data = flags.unseen_data;
    if (!flags.out.empty()) rc.out = flags.out;
    if (!flags.merge_csv.empty()) rc.merge_csv = flags.merge_csv;
    if (!flags.scores.empty()) rc.scores = flags.scores;
    if (!flags.attributes.empty()) rc.attributes = flags.attributes;
    if (!flags.model.empty()) rc.model = flags.model;
    if (flags.seed) rc.seed = *flags.seed;
    if (flags.workers) rc.workers = std::max<std::size_t>(1, *flags.workers);
    if (!flags.knob.empty()) rc.sweep["knob"] = flags.knob;
    if (!flags.values.empty()) {
      json values = json::array();
      for (const auto& v : flags.values) {
        json parsed;
        try {
          parsed = json::parse(v);
        } catch (const json::parse_error&) {
          parsed = v;
        }
        values.push_back(parsed);
      }
      rc.sweep["values"] = values;
    }

    if (measure_cmd->parsed()) return cmd_measure(rc);
    if (attributes_cmd->parsed()) return cmd_attributes(rc);
    if (analyze_cmd->parsed()) return cmd_analyze(rc);
    if (train_cmd->parsed()) return cmd_train_predictor(rc);
    if (predict_cmd->parsed()) return cmd_predict(rc);
    if (sweep_cmd->parsed()) return cmd_sweep(rc);
    if (fixture_cmd->parsed()) return cmd_make_fixture(rc, fixture);
  } catch (...) {
    return report_exception();
  }
  return kConfigError;
}

inline int run(const std::vector<std::string>& args) {
  std::vector<const char*> argv;
  argv.push_back("memmeter");
  for (const auto& a : args) argv.push_back(a.c_str());
  return run(static_cast<int>(argv.size()), argv.data());
}

}  // namespace memmeter::cli
