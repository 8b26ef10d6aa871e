#include "see/cli.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "see/dse.hpp"
#include "see/energy.hpp"
#include "see/errors.hpp"
#include "see/forest.hpp"
#include "see/inference.hpp"
#include "see/model.hpp"
#include "see/trainer.hpp"

namespace see {

namespace {

namespace fs = std::filesystem;

struct Globals {
  std::uint64_t seed = 1;
  std::string out = "out";
};

struct GenDataArgs {
  SyntheticSpec spec;
};

struct TrainArgs {
  std::string dataset;
  std::string family = "cnn";
  double train_fraction = 0.6;
  // CNN
  std::vector<int> exit_layers;
  std::vector<double> data_fractions;
  std::vector<double> thresholds;
  std::vector<double> loss_weights;
  std::vector<int> trunk_channels{8, 16, 16, 32, 32};
  int kernel_width = 3;
  int fc_hidden = 64;
  int epochs = 20;
  int batch_size = 32;
  double learning_rate = 1e-3;
  // Forest
  std::vector<int> stage_trees;
  std::vector<int> stage_depths;
  int baseline_trees = 20;
  int baseline_depth = 8;
  std::string feature_mode = "summary";
};

struct EvalArgs {
  std::string dataset;
  std::string model;
  double train_fraction = 0.6;
  bool all_segments = false;
  std::vector<double> thresholds;
};

struct SweepArgs {
  std::string dataset;
  std::string family = "cnn";
  double train_fraction = 0.6;
  SweepGrid grid;
  bool untied = false;
  int epochs = 10;
  int batch_size = 32;
  double learning_rate = 1e-3;
  std::vector<int> trunk_channels{8, 16, 16, 32, 32};
  int kernel_width = 3;
  int fc_hidden = 64;
  int stage_trees = 2;
  int stage_depth = 4;
  int final_trees = 8;
  int final_depth = 6;
  int baseline_trees = 20;
  int baseline_depth = 8;
  std::string feature_mode = "summary";
  std::size_t max_models = 0;
  double accuracy_floor = -1.0;
};

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write " + path.string());
  f << text;
  if (!f) throw IoError("failed writing " + path.string());
}

std::string read_file(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

fs::path prepare_out(const Globals& g) {
  fs::path dir(g.out);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory " + dir.string() + ": " + ec.message());
  return dir;
}

std::vector<ConvStageSpec> trunk_of(const std::vector<int>& channels, int kernel) {
  std::vector<ConvStageSpec> t;
  for (int c : channels) t.push_back({c, kernel, 1, 2, 2});
  return t;
}

// ---------------------------------------------------------------------------

void cmd_gen_data(const Globals& g, GenDataArgs a, std::ostream& out) {
  a.spec.seed = g.seed;
  const auto ds = generate_synthetic(a.spec);
  const auto dir = prepare_out(g);
  save_csv(ds, dir / "dataset.csv");
  out << "wrote " << (dir / "dataset.csv").string() << " (" << ds.size() << " segments)\n";
}

void cmd_train(const Globals& g, const TrainArgs& a, std::ostream& out) {
  const auto data = load_csv(a.dataset);
  auto parts = split(data, a.train_fraction, g.seed);
  const auto dir = prepare_out(g);
  const auto family = model_family_from_string(a.family);
  if (family == ModelFamily::cnn) {
    if (a.exit_layers.size() != a.data_fractions.size()) {
      throw ConfigError("--exit-layers and --data-fractions need one entry per early exit");
    }
    if (!a.thresholds.empty() && a.thresholds.size() != a.exit_layers.size()) {
      throw ConfigError("--thresholds needs one entry per early exit");
    }
    ArchitectureSpec spec;
    spec.channels = data.channels();
    spec.segment_length = data.length();
    spec.num_classes = data.num_classes();
    spec.trunk = trunk_of(a.trunk_channels, a.kernel_width);
    spec.fc_hidden = a.fc_hidden;
    const int exits = static_cast<int>(a.exit_layers.size()) + 1;
    const auto weights = a.loss_weights.empty() ? default_loss_weights(exits) : a.loss_weights;
    if (static_cast<int>(weights.size()) != exits) {
      throw ConfigError("--loss-weights needs one entry per exit (" + std::to_string(exits) + ")");
    }
    for (std::size_t e = 0; e < a.exit_layers.size(); ++e) {
      spec.early_exits.push_back({a.exit_layers[e], a.data_fractions[e],
                                  a.thresholds.empty() ? 0.5 : a.thresholds[e], weights[e]});
    }
    spec.terminal_loss_weight = weights.back();
    auto model = SeeCnnModel::assemble(spec, g.seed);
    model.normalizer = fit_normalizer(parts.train);
    const auto train_n = normalized(parts.train, model.normalizer);
    const auto test_n = normalized(parts.test, model.normalizer);
    TrainConfig cfg;
    cfg.epochs = a.epochs;
    cfg.batch_size = a.batch_size;
    cfg.learning_rate = a.learning_rate;
    cfg.seed = g.seed;
    const auto report = train(model, train_n, cfg, parts.test.empty() ? nullptr : &test_n);
    model.save(dir / "model.json");
    write_file(dir / "train-report.jsonl", report.to_jsonl());
    out << "trained SEE-CNN with " << model.num_exits() << " exits, " << model.parameter_count()
        << " parameters\n";
    for (std::size_t n = 0; n < report.final_exit_accuracy.size(); ++n) {
      out << "  exit " << n + 1 << " held-out accuracy " << report.final_exit_accuracy[n] << "\n";
    }
  } else {
    const auto mode = feature_mode_from_string(a.feature_mode);
    if (a.stage_trees.size() != a.data_fractions.size() + 1 || a.stage_depths.size() != a.stage_trees.size()) {
      if (!a.data_fractions.empty() || !a.stage_trees.empty() || !a.stage_depths.empty()) {
        throw ConfigError("forest cascade needs --stage-trees and --stage-depths with one entry per stage "
                          "(one more than --data-fractions)");
      }
    }
    CascadeConfig cc;
    cc.mode = mode;
    std::optional<std::size_t> baseline_nodes;
    if (a.data_fractions.empty() && a.stage_trees.empty()) {
      cc.stages = {ForestConfig{a.baseline_trees, a.baseline_depth}};
    } else {
      const auto baseline = train_baseline_forest(parts.train, {a.baseline_trees, a.baseline_depth}, g.seed, mode);
      baseline_nodes = baseline.node_count();
      cc.data_fractions = a.data_fractions;
      cc.data_fractions.push_back(1.0);
      cc.stages.clear();
      for (std::size_t i = 0; i < a.stage_trees.size(); ++i) cc.stages.push_back({a.stage_trees[i], a.stage_depths[i]});
      cc.thresholds = a.thresholds.empty() ? std::vector<double>(a.data_fractions.size(), 0.5) : a.thresholds;
    }
    const auto cascade = build_cascade(parts.train, cc, g.seed, baseline_nodes);
    cascade.save(dir / "model.json");
    std::string report;
    for (std::size_t i = 0; i < cascade.stages().size(); ++i) {
      const auto& s = cascade.stages()[i];
      nlohmann::json j{{"stage", i + 1},
                       {"data_fraction", s.data_fraction},
                       {"trees", s.forest.trees.size()},
                       {"nodes", s.forest.node_count()}};
      report += j.dump() + "\n";
    }
    write_file(dir / "train-report.jsonl", report);
    out << "trained forest cascade with " << cascade.num_exits() << " stages, " << cascade.node_count() << " nodes";
    if (baseline_nodes) out << " (baseline forest " << *baseline_nodes << ")";
    out << "\n";
  }
}

void cmd_eval(const Globals& g, const EvalArgs& a, std::ostream& out) {
  const std::string text = read_file(a.model);
  std::string format;
  try {
    format = nlohmann::json::parse(text).at("format").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(a.model + ": " + e.what());
  }
  const auto data = load_csv(a.dataset);
  const Dataset split_set = a.all_segments ? data : split(data, a.train_fraction, g.seed).test;
  const auto dir = prepare_out(g);
  std::vector<InferenceTrace> traces;
  EnergyReport report;
  if (format == "see-cnn") {
    const auto model = SeeCnnModel::from_text(text);
    const auto thresholds = a.thresholds.empty() ? model.spec().thresholds() : a.thresholds;
    const auto test_n = normalized(split_set, model.normalizer);
    traces = infer_dataset(model, test_n, thresholds);
    report = make_energy_report(traces, model, thresholds, memory_overhead(model));
    report.family = "cnn";
    for (int n = 1; n <= model.num_exits(); ++n) report.macs_to_exit.push_back(model.macs_to_exit(n));
  } else if (format == "see-forest-cascade") {
    auto cascade = ForestCascade::from_text(text);
    if (!a.thresholds.empty()) cascade.set_thresholds(a.thresholds);
    const auto thresholds = cascade.thresholds();
    traces = infer_dataset(cascade, split_set, thresholds);
    const std::size_t base_nodes = cascade.baseline_node_count().value_or(cascade.node_count());
    report = make_energy_report(traces, cascade, thresholds, memory_overhead(cascade, base_nodes));
    report.family = "forest";
  } else {
    throw ParseError(a.model + ": unknown model format '" + format + "'");
  }
  report.class_names = data.class_names;
  write_file(dir / "traces.jsonl", traces_to_jsonl(traces));
  write_file(dir / "report.json", report.to_json());
  const auto table = report.to_table();
  write_file(dir / "report.txt", table);
  out << table;
}

void cmd_sweep(const Globals& g, SweepArgs a, std::ostream& out, int& status) {
  const auto data = load_csv(a.dataset);
  auto parts = split(data, a.train_fraction, g.seed);
  const auto dir = prepare_out(g);
  a.grid.family = model_family_from_string(a.family);
  a.grid.tie_thresholds = !a.untied;
  SweepSettings st;
  st.base_architecture.trunk = trunk_of(a.trunk_channels, a.kernel_width);
  st.base_architecture.fc_hidden = a.fc_hidden;
  st.training.epochs = a.epochs;
  st.training.batch_size = a.batch_size;
  st.training.learning_rate = a.learning_rate;
  st.stage_trees = a.stage_trees;
  st.stage_depth = a.stage_depth;
  st.final_stage = {a.final_trees, a.final_depth};
  st.baseline_forest = {a.baseline_trees, a.baseline_depth};
  st.feature_mode = feature_mode_from_string(a.feature_mode);
  SweepOptions opt{g.seed, a.max_models, dir / "sweep.jsonl"};
  const auto result = run_sweep(parts.train, parts.test, a.grid, st, opt);
  if (!result.complete) {
    out << "sweep stopped after " << result.models_trained << " models; rerun to resume\n";
    status = kExitIncomplete;
    return;
  }
  const auto table = pareto_table(result);
  write_file(dir / "pareto.txt", table);
  const auto sel = a.accuracy_floor >= 0.0 ? select_deployment(result, a.accuracy_floor) : select_deployment(result);
  write_file(dir / "selection.json", sel.to_json());
  out << "trained " << result.models_trained << " models, reused " << result.models_reused << "; "
      << result.records.size() << " configurations\n\nPareto front:\n"
      << table << "\n";
  if (sel.chosen) {
    out << "selected " << sel.chosen->config_id << ": accuracy " << sel.chosen->accuracy << ", energy ratio "
        << sel.chosen->energy_ratio << " (floor " << sel.accuracy_floor << ")\n";
  } else {
    out << "no configuration reaches accuracy " << sel.accuracy_floor << "; nearest:\n";
    for (const auto& r : sel.nearest_misses) out << "  " << r.config_id << " " << r.accuracy << "\n";
    status = kExitNoFeasible;
  }
}

void cmd_report(const Globals& g, std::ostream& out) {
  const fs::path dir(g.out);
  bool any = false;
  if (fs::exists(dir / "report.json")) {
    out << EnergyReport::from_json(read_file(dir / "report.json")).to_table();
    any = true;
  }
  if (fs::exists(dir / "sweep.jsonl")) {
    SweepResult r;
    std::istringstream in(read_file(dir / "sweep.jsonl"));
    for (std::string line; std::getline(in, line);) {
      if (!line.empty()) r.records.push_back(SweepRecord::from_json_line(line));
    }
    mark_pareto(r.records);
    if (any) out << "\n";
    out << "Sweep: " << r.records.size() << " configurations\n\nPareto front (by energy ratio):\n"
        << pareto_table(r);
    if (fs::exists(dir / "selection.json")) {
      const auto sel = nlohmann::json::parse(read_file(dir / "selection.json"));
      if (sel.at("feasible").get<bool>()) {
        const auto& c = sel.at("chosen");
        out << "\nselected " << c.at("config_id").get<std::string>() << ": accuracy "
            << c.at("accuracy").get<double>() << ", energy ratio " << c.at("energy_ratio").get<double>() << "\n";
      } else {
        out << "\nno feasible configuration at accuracy floor " << sel.at("accuracy_floor").get<double>() << "\n";
      }
    }
    any = true;
  }
  if (!any) throw IoError("no report.json or sweep.jsonl in " + dir.string());
}

// INI text of every option of the app and the invoked subcommand, as parsed
// or defaulted; feeding it back through --config repeats the run.
std::string manifest(const CLI::App& app, const CLI::App& cmd) {
  auto section = [](const CLI::App& a) {
    std::string text;
    for (const CLI::Option* opt : a.get_options()) {
      const std::string name = opt->get_single_name();
      if (name == "help" || name == "config" || !opt->get_configurable()) continue;
      std::vector<std::string> values = opt->results();
      if (values.empty()) {
        if (opt->get_type_size() == 0) {
          values = {"false"};
        } else if (!opt->get_default_str().empty()) {
          values = {opt->get_default_str()};
        } else {
          continue;
        }
      }
      std::string joined;
      for (std::size_t i = 0; i < values.size(); ++i) joined += (i ? "," : "") + values[i];
      if (joined.size() >= 2 && joined.front() == '[' && joined.back() == ']') {
        joined = joined.substr(1, joined.size() - 2);
      }
      text += name + "=\"" + joined + "\"\n";
    }
    return text;
  };
  return "# see " + cmd.get_name() + "\n" + section(app) + "\n[" + cmd.get_name() + "]\n" + section(cmd);
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Sensor-aware early-exit classifiers: data, training, inference, sweeps, reports", "see"};
  app.set_config("--config", "", "INI file with option values; [section] per subcommand");
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--seed", g.seed, "Global seed")->capture_default_str();
  app.add_option("--out", g.out, "Output directory")->capture_default_str();

  GenDataArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Write a synthetic dataset CSV to <out>/dataset.csv");
  gen_cmd->add_option("--classes", gen.spec.num_classes)->capture_default_str();
  gen_cmd->add_option("--easy-classes", gen.spec.easy_class_count)->capture_default_str();
  gen_cmd->add_option("--channels", gen.spec.channels)->capture_default_str();
  gen_cmd->add_option("--length", gen.spec.length)->capture_default_str();
  gen_cmd->add_option("--per-class", gen.spec.per_class)->capture_default_str();
  gen_cmd->add_option("--noise", gen.spec.noise_sigma)->capture_default_str();

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Train a SEE-CNN or forest cascade");
  train_cmd->add_option("--dataset", tr.dataset, "Dataset CSV")->required();
  train_cmd->add_option("--family", tr.family, "cnn or forest")->capture_default_str();
  train_cmd->add_option("--train-fraction", tr.train_fraction)->capture_default_str();
  train_cmd->add_option("--exit-layers", tr.exit_layers, "Trunk stage per early exit")->delimiter(',');
  train_cmd->add_option("--data-fractions", tr.data_fractions, "Cumulative window share per early exit")
      ->delimiter(',');
  train_cmd->add_option("--thresholds", tr.thresholds, "Entropy threshold per early exit")->delimiter(',');
  train_cmd->add_option("--loss-weights", tr.loss_weights, "One per exit, terminal last")->delimiter(',');
  train_cmd->add_option("--trunk-channels", tr.trunk_channels)->delimiter(',')->capture_default_str();
  train_cmd->add_option("--kernel-width", tr.kernel_width)->capture_default_str();
  train_cmd->add_option("--fc-hidden", tr.fc_hidden)->capture_default_str();
  train_cmd->add_option("--epochs", tr.epochs)->capture_default_str();
  train_cmd->add_option("--batch-size", tr.batch_size)->capture_default_str();
  train_cmd->add_option("--learning-rate", tr.learning_rate)->capture_default_str();
  train_cmd->add_option("--stage-trees", tr.stage_trees, "Trees per cascade stage")->delimiter(',');
  train_cmd->add_option("--stage-depths", tr.stage_depths, "Max depth per cascade stage")->delimiter(',');
  train_cmd->add_option("--baseline-trees", tr.baseline_trees)->capture_default_str();
  train_cmd->add_option("--baseline-depth", tr.baseline_depth)->capture_default_str();
  train_cmd->add_option("--feature-mode", tr.feature_mode, "summary or raw")->capture_default_str();

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "Run gated inference and write traces and the energy report");
  eval_cmd->add_option("--dataset", ev.dataset)->required();
  eval_cmd->add_option("--model", ev.model)->required();
  eval_cmd->add_option("--train-fraction", ev.train_fraction, "Split used at training time")->capture_default_str();
  eval_cmd->add_flag("--all-segments", ev.all_segments, "Evaluate every segment instead of the test split");
  eval_cmd->add_option("--thresholds", ev.thresholds, "Override the stored thresholds")->delimiter(',');

  SweepArgs sw;
  auto* sweep_cmd = app.add_subcommand("sweep", "Grid design-space exploration with Pareto front and selection");
  sweep_cmd->add_option("--dataset", sw.dataset)->required();
  sweep_cmd->add_option("--family", sw.family)->capture_default_str();
  sweep_cmd->add_option("--train-fraction", sw.train_fraction)->capture_default_str();
  sweep_cmd->add_option("--percentages", sw.grid.data_percentages)->delimiter(',')->capture_default_str();
  sweep_cmd->add_option("--early-exits", sw.grid.num_early_exits)->delimiter(',')->capture_default_str();
  sweep_cmd->add_option("--thresholds", sw.grid.thresholds)->delimiter(',')->capture_default_str();
  sweep_cmd->add_option("--loss-weights", sw.grid.first_loss_weights)->delimiter(',')->capture_default_str();
  sweep_cmd->add_option("--exit-layers", sw.grid.exit_layers)->delimiter(',')->capture_default_str();
  sweep_cmd->add_flag("--untied", sw.untied, "Sweep every threshold combination per exit");
  sweep_cmd->add_flag("--allow-out-of-range", sw.grid.allow_out_of_range);
  sweep_cmd->add_option("--epochs", sw.epochs)->capture_default_str();
  sweep_cmd->add_option("--batch-size", sw.batch_size)->capture_default_str();
  sweep_cmd->add_option("--learning-rate", sw.learning_rate)->capture_default_str();
  sweep_cmd->add_option("--trunk-channels", sw.trunk_channels)->delimiter(',')->capture_default_str();
  sweep_cmd->add_option("--kernel-width", sw.kernel_width)->capture_default_str();
  sweep_cmd->add_option("--fc-hidden", sw.fc_hidden)->capture_default_str();
  sweep_cmd->add_option("--stage-trees", sw.stage_trees)->capture_default_str();
  sweep_cmd->add_option("--stage-depth", sw.stage_depth)->capture_default_str();
  sweep_cmd->add_option("--final-trees", sw.final_trees)->capture_default_str();
  sweep_cmd->add_option("--final-depth", sw.final_depth)->capture_default_str();
  sweep_cmd->add_option("--baseline-trees", sw.baseline_trees)->capture_default_str();
  sweep_cmd->add_option("--baseline-depth", sw.baseline_depth)->capture_default_str();
  sweep_cmd->add_option("--feature-mode", sw.feature_mode, "summary or raw")->capture_default_str();
  sweep_cmd->add_option("--max-models", sw.max_models, "Stop after training this many models (0: no limit)")
      ->capture_default_str();
  sweep_cmd->add_option("--accuracy-floor", sw.accuracy_floor, "Default: baseline accuracy - 0.01");

  app.add_subcommand("report", "Print the tables stored in --out");

  std::vector<std::string> rev(args.begin() + (args.empty() ? 0 : 1), args.end());
  std::reverse(rev.begin(), rev.end());
  try {
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? kExitOk : kExitUsage;
  }

  try {
    auto* cmd = app.get_subcommands().front();
    if (cmd->get_name() != "report") {
      const auto dir = prepare_out(g);
      write_file(dir / "run-manifest.ini", manifest(app, *cmd));
    }
    int status = kExitOk;
    if (cmd == gen_cmd) {
      cmd_gen_data(g, gen, out);
    } else if (cmd == train_cmd) {
      cmd_train(g, tr, out);
    } else if (cmd == eval_cmd) {
      cmd_eval(g, ev, out);
    } else if (cmd == sweep_cmd) {
      cmd_sweep(g, sw, out, status);
    } else {
      cmd_report(g, out);
    }
    return status;
  } catch (const TrainingError& e) {
    err << "training failed: " << e.what() << "\n";
    return kExitTraining;
  } catch (const ConfigError& e) {
    err << "configuration error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const IoError& e) {
    err << "I/O error: " << e.what() << "\n";
    return kExitData;
  }
}

}  // namespace see
