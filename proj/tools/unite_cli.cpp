// Command-line front end: data generation, training, evaluation, single-route
// estimation, robustness curves, and sweeps. Config files are key = value
// text (# comments); command-line flags override file values.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "unite/estimators.hpp"
#include "unite/evaluation.hpp"
#include "unite/synth.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace unite;

#ifndef UNITE_VERSION
#define UNITE_VERSION "dev"
#endif

namespace {

RoadNetwork load_network(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open network file: " + path);
  return parse_network(in);
}

std::vector<Trajectory> load_trajectories(const std::string& path,
                                          const RoadNetwork& net) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open trajectory file: " + path);
  return parse_trajectories(in, net);
}

void write_manifest(const fs::path& out_dir, const std::string& command,
                    const json& options) {
  json manifest;
  manifest["command"] = command;
  manifest["version"] = UNITE_VERSION;
  manifest["options"] = options;
  std::ofstream out(out_dir / "manifest.json");
  if (!out) throw DataError("cannot write manifest in " + out_dir.string());
  out << manifest.dump(2) << '\n';
}

fs::path ensure_out_dir(const std::string& dir) {
  fs::path p(dir);
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw DataError("cannot create output directory: " + dir);
  return p;
}

// Collect every option the subcommand saw (flag or config file) so the
// manifest fully determines the run.
json options_of(const CLI::App& cmd) {
  json out;
  for (const CLI::Option* opt : cmd.get_options()) {
    std::string name = opt->get_lnames().empty() ? opt->get_name()
                                                 : opt->get_lnames().front();
    if (name == "help" || name == "config") continue;
    auto results = opt->results();
    if (results.empty()) continue;
    if (results.size() == 1) {
      out[name] = results.front();
    } else {
      out[name] = results;
    }
  }
  return out;
}

struct AlgorithmChoice {
  std::string name = "agg";  // agg | gru | unite-dis | unite-gen
  bool model_based() const { return name != "agg"; }
  bool uses_store() const { return name == "agg" || name == "unite-dis" ||
                                   name == "unite-gen"; }
};

// AGG over a trajectory: recorded arrivals when present, otherwise the
// arrival is advanced with the previous segment's estimated mean speed.
std::vector<EstimatorOutput> agg_trajectory(const RecordStore& store,
                                            const RoadNetwork& net,
                                            const Trajectory& tj,
                                            const AggConfig& cfg) {
  Route route = tj.route();
  std::vector<EstimatorOutput> out;
  out.reserve(route.size());
  TimeOfWeek tau = *tj.traversals[0].arrival;
  for (size_t i = 0; i < route.size(); ++i) {
    if (tj.traversals[i].arrival) tau = *tj.traversals[i].arrival;
    out.push_back(agg_estimate(store, net, route, i, tau, cfg));
    double speed = std::max(out.back().expected_speed, kMinPropagationSpeed);
    tau = TimeOfWeek::wrap(tau.seconds + net.segment(route[i]).length / speed);
  }
  return out;
}

struct EstimatorBundle {
  Estimator run;                     // per-trajectory estimator
  std::optional<ModelParams> model;  // loaded model, when model-based
};

EstimatorBundle make_estimator(const AlgorithmChoice& algo, const RoadNetwork& net,
                               const RecordStore* store, const std::string& model_path,
                               int k, const SelectionParams& sel) {
  EstimatorBundle bundle;
  if (algo.name == "agg") {
    if (store == nullptr) throw DataError("agg requires --records");
    AggConfig cfg(k, sel);
    const RecordStore& s = *store;
    bundle.run = [&s, &net, cfg](const Trajectory& tj) {
      return agg_trajectory(s, net, tj, cfg);
    };
    return bundle;
  }
  if (model_path.empty()) {
    throw DataError(algo.name + " requires --model (a trained checkpoint)");
  }
  bundle.model = load_model(model_path);
  const ModelParams& model = *bundle.model;
  if (algo.name == "gru") {
    bundle.run = [&model, &net](const Trajectory& tj) {
      return gru_estimate(model, net, tj.route(), detail::arrivals_of(tj));
    };
  } else {  // unite-dis / unite-gen: posterior with selected evidence
    if (store == nullptr) throw DataError(algo.name + " requires --records");
    const RecordStore& s = *store;
    bundle.run = [&model, &s, &net, sel](const Trajectory& tj) {
      return unite_dis_estimate(model, s, net, tj.route(), detail::arrivals_of(tj),
                                sel);
    };
  }
  return bundle;
}

std::string config_path;  // shared slot; one subcommand runs per process

void add_config_option(CLI::App* cmd) {
  cmd->add_option("--config", config_path, "key = value config file (# comments)");
}

std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

// Expands a key = value config file into trailing --key value tokens for
// keys not already present on the command line, so explicit flags win and
// CLI11 still applies its validators and required-option checks.
std::vector<std::string> expand_config(std::vector<std::string> args) {
  std::string path;
  for (size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) {
      path = args[i + 1];
    } else if (args[i].rfind("--config=", 0) == 0) {
      path = args[i].substr(9);
    }
  }
  if (path.empty()) return args;
  std::ifstream in(path);
  if (!in) throw DataError("cannot open config file: " + path);

  auto given = [&](const std::string& flag) {
    for (const auto& a : args) {
      if (a == flag || a.rfind(flag + "=", 0) == 0) return true;
    }
    return false;
  };

  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw DataError("config " + path + " line " + std::to_string(line_no) +
                      ": expected key = value");
    }
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty() || value.empty()) {
      throw DataError("config " + path + " line " + std::to_string(line_no) +
                      ": empty key or value");
    }
    if (given("--" + key)) continue;  // flags win over the file
    args.push_back("--" + key);
    args.push_back(value);
  }
  return args;
}

int run(int argc, char** argv) {
  CLI::App app{"Travel-speed estimation toolkit: conjugate aggregation with a "
               "recurrent learned prior"};
  app.require_subcommand(1);
  app.set_version_flag("--version", UNITE_VERSION);

  // ---- gen-data -----------------------------------------------------------
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate a synthetic benchmark");
  SynthSpec spec;
  std::string gen_out = "out";
  gen_cmd->add_option("--n-segments", spec.n_segments, "number of road segments");
  gen_cmd->add_option("--n-trajectories", spec.n_trajectories, "number of trips");
  gen_cmd->add_option("--route-len-min", spec.route_len_min, "minimum route length");
  gen_cmd->add_option("--route-len-max", spec.route_len_max, "maximum route length");
  gen_cmd->add_option("--missingness", spec.missingness,
                      "joint (arrival, speed) missing probability");
  gen_cmd->add_option("--peak-slowdown", spec.peak_slowdown,
                      "weekday-peak speed factor in (0, 1]");
  gen_cmd->add_option("--train-frac", spec.train_frac, "training split fraction");
  gen_cmd->add_option("--val-frac", spec.val_frac, "validation split fraction");
  gen_cmd->add_option("--seed", spec.seed, "generator seed");
  gen_cmd->add_option("--output", gen_out, "output directory");
  add_config_option(gen_cmd);

  // ---- shared options for the consuming commands --------------------------
  struct Common {
    std::string network, trajectories, records, model, output = "out";
    AlgorithmChoice algo;
    int k = 1;
    int c = 0;
    double delta_minutes = 60.0;
  };
  auto add_common = [](CLI::App* cmd, Common& o, bool needs_algo = true) {
    cmd->add_option("--network", o.network, "network CSV")->required();
    cmd->add_option("--records", o.records,
                    "trajectory CSV whose observations form the record store");
    if (needs_algo) {
      cmd->add_option("--algorithm", o.algo.name, "agg | gru | unite-dis | unite-gen")
          ->check(CLI::IsMember({"agg", "gru", "unite-dis", "unite-gen"}));
      cmd->add_option("--model", o.model, "model checkpoint (model-based algorithms)");
      cmd->add_option("--k", o.k, "agg: minimum records before the heuristic fallback")
          ->check(CLI::PositiveNumber);
    }
    cmd->add_option("--c", o.c, "context width for record selection")
        ->check(CLI::Range(0, 4));
    cmd->add_option("--delta", o.delta_minutes, "time-of-week window, minutes")
        ->check(CLI::PositiveNumber);
    cmd->add_option("--output", o.output, "output directory");
    add_config_option(cmd);
  };

  // ---- train --------------------------------------------------------------
  auto* train_cmd = app.add_subcommand("train", "Train a model (gru or unite-dis)");
  Common tr;
  tr.algo.name = "unite-dis";
  std::string train_path, val_path;
  TrainConfig tcfg;
  train_cmd->add_option("--network", tr.network, "network CSV")->required();
  train_cmd->add_option("--train", train_path, "training trajectory CSV")->required();
  train_cmd->add_option("--val", val_path, "validation trajectory CSV");
  train_cmd->add_option("--algorithm", tr.algo.name, "gru | unite-dis")
      ->check(CLI::IsMember({"gru", "unite-dis"}));
  train_cmd->add_option("--lr", tcfg.lr, "learning rate");
  train_cmd->add_option("--epochs", tcfg.epochs, "training epochs");
  train_cmd->add_option("--batch-size", tcfg.batch_size, "batch size");
  train_cmd->add_option("--seed", tcfg.seed, "initialization/shuffle seed");
  train_cmd->add_option("--a", tcfg.a, "kappa floor parameter");
  train_cmd->add_option("--epsilon", tcfg.epsilon, "positivity epsilon");
  train_cmd->add_option("--c", tr.c, "context width for evidence selection")
      ->check(CLI::Range(0, 4));
  train_cmd->add_option("--delta", tr.delta_minutes, "evidence window, minutes")
      ->check(CLI::PositiveNumber);
  train_cmd->add_option("--output", tr.output, "output directory");
  add_config_option(train_cmd);

  // ---- evaluate -----------------------------------------------------------
  auto* eval_cmd = app.add_subcommand("evaluate", "Metrics over a trajectory set");
  Common ev;
  eval_cmd->add_option("--trajectories", ev.trajectories, "evaluation trajectory CSV")
      ->required();
  add_common(eval_cmd, ev);

  // ---- estimate -----------------------------------------------------------
  auto* est_cmd = app.add_subcommand(
      "estimate", "Per-segment predictive parameters and travel time for one route");
  Common es;
  std::vector<std::string> route_ids;
  double start_tow = 0.0;
  est_cmd->add_option("--route", route_ids, "comma-separated segment ids")
      ->required()
      ->delimiter(',');
  est_cmd->add_option("--start", start_tow, "start time of week, seconds")
      ->required();
  add_common(est_cmd, es);

  // ---- robustness ---------------------------------------------------------
  auto* rob_cmd = app.add_subcommand(
      "robustness", "Mean sNLL bucketed by ground-truth record count");
  Common rb;
  rob_cmd->add_option("--trajectories", rb.trajectories, "evaluation trajectory CSV")
      ->required();
  add_common(rob_cmd, rb);

  // ---- sweep --------------------------------------------------------------
  auto* sweep_cmd = app.add_subcommand("sweep", "Grid sweep over (c, delta)");
  Common sw;
  std::vector<int> sweep_c{0, 1, 2, 4};
  std::vector<double> sweep_delta{15, 30, 60, 120};
  sweep_cmd->add_option("--trajectories", sw.trajectories, "evaluation trajectory CSV")
      ->required();
  sweep_cmd->add_option("--grid-c", sweep_c, "context widths to sweep")->delimiter(',');
  sweep_cmd->add_option("--grid-delta", sweep_delta, "windows (minutes) to sweep")
      ->delimiter(',');
  add_common(sweep_cmd, sw);

  try {
    std::vector<std::string> args =
        expand_config(std::vector<std::string>(argv + 1, argv + argc));
    std::reverse(args.begin(), args.end());  // CLI11 consumes from the back
    app.parse(std::move(args));
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;  // usage errors
  }

  if (gen_cmd->parsed()) {
    fs::path out = ensure_out_dir(gen_out);
    SynthData data = generate(spec);
    {
      std::ofstream f(out / "network.csv");
      serialize_network(f, data.net);
    }
    for (auto [name, split] : {std::pair{"train.csv", &data.train},
                               {"val.csv", &data.val}, {"test.csv", &data.test}}) {
      std::ofstream f(out / name);
      serialize_trajectories(f, *split, data.net);
    }
    {
      std::ofstream f(out / "truth.csv");
      data.oracle.save(f, data.net);
    }
    write_manifest(out, "gen-data", options_of(*gen_cmd));
    std::cout << "wrote " << data.train.size() << "/" << data.val.size() << "/"
              << data.test.size() << " train/val/test trajectories to " << out.string()
              << '\n';
    return 0;
  }

  if (train_cmd->parsed()) {
    fs::path out = ensure_out_dir(tr.output);
    RoadNetwork net = load_network(tr.network);
    auto train_set = load_trajectories(train_path, net);
    std::vector<Trajectory> val_set;
    if (!val_path.empty()) val_set = load_trajectories(val_path, net);

    tcfg.selection = SelectionParams(tr.c, tr.delta_minutes * 60.0);
    ModelKind kind = tr.algo.name == "gru" ? ModelKind::gru : ModelKind::unite_dis;
    std::optional<RecordStore> store;
    if (kind == ModelKind::unite_dis) store = build_store(train_set, tr.c);

    TrainHistory hist;
    ModelParams model = train(kind, net, train_set, val_set,
                              store ? &*store : nullptr, tcfg, &hist);
    save_model((out / "model.txt").string(), model);
    {
      std::ofstream f(out / "history.csv");
      f << "epoch,train_nll,val_nll\n";
      for (size_t e = 0; e < hist.train_nll.size(); ++e) {
        f << e << ',' << hist.train_nll[e] << ',' << hist.val_nll[e] << '\n';
      }
    }
    write_manifest(out, "train", options_of(*train_cmd));
    std::cout << "trained " << tr.algo.name << "; best epoch " << hist.best_epoch
              << ", final train NLL " << hist.train_nll.back() << '\n';
    return 0;
  }

  // the remaining commands share data loading
  Common& o = eval_cmd->parsed() ? ev : est_cmd->parsed() ? es
             : rob_cmd->parsed() ? rb : sw;
  RoadNetwork net = load_network(o.network);
  std::optional<RecordStore> store;
  if (!o.records.empty()) {
    store = build_store(load_trajectories(o.records, net), o.c);
  }
  SelectionParams sel(o.c, o.delta_minutes * 60.0);

  if (est_cmd->parsed()) {
    fs::path out = ensure_out_dir(o.output);
    Route route;
    for (const auto& id : route_ids) route.push_back(net.require(id));
    validate_route(route, net);
    Trajectory query{"query", {}};
    for (size_t i = 0; i < route.size(); ++i) {
      Traversal t;
      t.segment = route[i];
      if (i == 0) t.arrival = TimeOfWeek::wrap(start_tow);
      query.traversals.push_back(t);
    }
    auto bundle = make_estimator(o.algo, net, store ? &*store : nullptr, o.model,
                                 o.k, sel);
    auto outputs = bundle.run(query);

    std::vector<double> speeds;
    std::ofstream f(out / "estimate.csv");
    f << "segment_id,kind,p1,p2,p3,expected_speed_mps\n";
    for (size_t i = 0; i < outputs.size(); ++i) {
      const auto& e = outputs[i];
      speeds.push_back(e.expected_speed);
      f << net.segment(route[i]).id << ',';
      if (e.kind == EstimatorOutput::Kind::gaussian) {
        f << "gaussian," << e.gauss_mu << ',' << e.gauss_sigma << ",,";
      } else {
        f << "student_t," << e.t.nu << ',' << e.t.loc << ',' << e.t.scale << ',';
      }
      f << e.expected_speed << '\n';
      std::cout << net.segment(route[i]).id << ": ";
      if (e.kind == EstimatorOutput::Kind::gaussian) {
        std::cout << "gaussian(mu=" << e.gauss_mu << ", sigma=" << e.gauss_sigma << ")";
      } else {
        std::cout << "student_t(nu=" << e.t.nu << ", loc=" << e.t.loc
                  << ", scale=" << e.t.scale << ")";
      }
      std::cout << '\n';
    }
    double tt = point_travel_time(net, route, speeds);
    std::cout << "travel time: " << tt << " s\n";
    f << "# travel_time_s," << tt << '\n';
    write_manifest(out, "estimate", options_of(*est_cmd));
    return 0;
  }

  auto data = load_trajectories(o.trajectories, net);

  if (eval_cmd->parsed()) {
    fs::path out = ensure_out_dir(o.output);
    auto bundle = make_estimator(o.algo, net, store ? &*store : nullptr, o.model,
                                 o.k, sel);
    MetricsReport report = evaluate_dataset(bundle.run, net, data);
    json metrics;
    metrics["algorithm"] = o.algo.name;
    metrics["nll_per_trajectory"] = report.nll;
    metrics["mae_s"] = report.mae;
    metrics["mape_pct"] = report.mape;
    metrics["n_trajectories"] = report.n_trajectories;
    std::ofstream(out / "metrics.json") << metrics.dump(2) << '\n';
    write_manifest(out, "evaluate", options_of(*eval_cmd));
    std::cout << metrics.dump(2) << '\n';
    return 0;
  }

  if (rob_cmd->parsed()) {
    fs::path out = ensure_out_dir(o.output);
    if (!store) throw DataError("robustness requires --records");
    auto bundle = make_estimator(o.algo, net, &*store, o.model, o.k, sel);
    auto curve = robustness_curve(bundle.run, data, *store, sel.delta);
    std::ofstream f(out / "robustness.csv");
    f << "records,n,mean_snll\n";
    for (const auto& [bucket, b] : curve) {
      f << bucket << ',' << b.n << ',' << b.mean_snll << '\n';
    }
    write_manifest(out, "robustness", options_of(*rob_cmd));
    std::cout << "wrote " << curve.size() << " buckets to "
              << (out / "robustness.csv").string() << '\n';
    return 0;
  }

  // sweep
  fs::path out = ensure_out_dir(o.output);
  auto cells = sweep_record_selection(sweep_c, sweep_delta,
                                      [&](const SelectionParams& cell_sel) {
    std::optional<RecordStore> cell_store;
    const RecordStore* sp = nullptr;
    if (store) {
      // rebuild so the store's context depth covers the cell's c
      cell_store = build_store(load_trajectories(o.records, net), cell_sel.c);
      sp = &*cell_store;
    }
    auto bundle = make_estimator(o.algo, net, sp, o.model, o.k, cell_sel);
    return evaluate_dataset(bundle.run, net, data).nll;
  });
  std::ofstream f(out / "sweep.csv");
  f << "c,delta_minutes,nll\n";
  for (const auto& cell : cells) {
    f << cell.c << ',' << cell.delta_minutes << ',' << cell.nll << '\n';
  }
  write_manifest(out, "sweep", options_of(*sweep_cmd));
  std::cout << "wrote " << cells.size() << " cells to " << (out / "sweep.csv").string()
            << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return 4;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  }
}
