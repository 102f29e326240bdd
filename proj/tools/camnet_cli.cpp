#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "camnet/baselines.hpp"
#include "camnet/cam.hpp"
#include "camnet/errors.hpp"
#include "camnet/graphs.hpp"
#include "camnet/ingest.hpp"
#include "camnet/log.hpp"
#include "camnet/metrics.hpp"
#include "camnet/model.hpp"
#include "camnet/parallel.hpp"
#include "camnet/rng.hpp"
#include "camnet/scenario.hpp"
#include "camnet/train.hpp"

namespace fs = std::filesystem;
using namespace camnet;

namespace {

struct GlobalOpts {
  uint64_t seed = 0;
  int threads = 1;
  std::string log_level = "info";
};

void emit_error(const std::string& kind, const std::string& message) {
  nlohmann::json j{{"error", {{"kind", kind}, {"message", message}}}};
  std::cerr << j.dump() << "\n";
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw_error(ErrorKind::Io, "cannot write " + path.string());
  out << text;
  if (!out) throw_error(ErrorKind::Io, "write failed: " + path.string());
}

// stdout by default, file if --out was given
void deliver(const nlohmann::json& j, const fs::path& out_path) {
  std::string text = j.dump(2) + "\n";
  if (out_path.empty())
    std::cout << text;
  else
    write_text(out_path, text);
}

RecordFormat parse_format(const std::string& name) {
  if (name == "jsonl") return RecordFormat::Jsonl;
  if (name == "csv") return RecordFormat::Csv;
  throw_error(ErrorKind::Config, "unknown record format '" + name + "' (jsonl|csv)");
}

RecordFormat format_from_extension(const fs::path& path) {
  return path.extension() == ".csv" ? RecordFormat::Csv : RecordFormat::Jsonl;
}

nlohmann::json load_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw_error(ErrorKind::Io, "cannot read " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw_error(ErrorKind::MalformedFile, path.string() + ": " + e.what());
  }
}

// ---- ingest -----------------------------------------------------------------

int cmd_ingest(const GlobalOpts&, const fs::path& in, const std::string& format,
               const fs::path& out, int stride) {
  RecordFormat fmt = parse_format(format);
  std::vector<fs::path> files;
  if (fs::is_directory(in)) {
    std::string ext = fmt == RecordFormat::Csv ? ".csv" : ".jsonl";
    for (const auto& e : fs::directory_iterator(in))
      if (e.is_regular_file() && e.path().extension() == ext) files.push_back(e.path());
    std::sort(files.begin(), files.end());
    if (files.empty())
      throw_error(ErrorKind::Io, "no " + ext + " files under " + in.string());
  } else if (fs::exists(in)) {
    files.push_back(in);
  } else {
    throw_error(ErrorKind::Io, "no such file or directory: " + in.string());
  }

  std::vector<CamRecord> records;
  nlohmann::json report_files = nlohmann::json::array();
  for (const fs::path& f : files) {
    ParseResult parsed = parse_records(f, fmt);
    nlohmann::json jf{{"file", f.string()},
                      {"lines", parsed.total_lines},
                      {"malformed", parsed.malformed},
                      {"first_offenders", parsed.first_offenders}};
    report_files.push_back(std::move(jf));
    records.insert(records.end(), parsed.records.begin(), parsed.records.end());
  }

  std::vector<Scenario> scenarios = build_scenarios(records, stride);
  save_scenarios(scenarios, out);

  nlohmann::json report;
  report["files"] = std::move(report_files);
  report["records"] = records.size();
  report["scenarios"] = scenarios.size();
  nlohmann::json ids = nlohmann::json::array();
  for (const Scenario& s : scenarios) ids.push_back(s.id);
  report["scenario_ids"] = std::move(ids);
  write_text(out / "ingest_report.json", report.dump(2) + "\n");
  std::cout << report.dump(2) << "\n";
  return 0;
}

// ---- camify -----------------------------------------------------------------

// One dense track per contiguous valid run of the agent (the trigger walk
// needs uninterrupted 10 Hz input).
std::vector<Track> tracks_from_scenario(const Scenario& s) {
  std::vector<Track> out;
  for (const AgentTrack& a : s.agents) {
    int t = 0;
    while (t < kScenarioSteps) {
      if (!a.valid[t]) {
        ++t;
        continue;
      }
      Track tr;
      tr.station_id = a.station_id;
      tr.zone = s.zone;
      tr.hemisphere = s.hemisphere;
      tr.rate = TrackRate::Fixed10Hz;
      for (; t < kScenarioSteps && a.valid[t]; ++t) {
        const AgentState& st = a.states[t];
        TrackSample sample;
        sample.t = s.anchor_t + (int64_t)t * kStepMs;
        sample.x = st.x;
        sample.y = st.y;
        sample.speed = std::hypot(st.vx, st.vy);
        sample.heading = geo::Heading(90.0 - st.heading * geo::kRadToDeg);
        tr.samples.push_back(sample);
      }
      out.push_back(std::move(tr));
    }
  }
  return out;
}

int cmd_camify(const GlobalOpts& g, const fs::path& in, const fs::path& out) {
  std::vector<Scenario> scenarios = load_scenarios(in);
  if (scenarios.empty()) throw_error(ErrorKind::EmptyDataset, "camify: no scenarios");
  std::vector<std::vector<CamRecord>> per_scenario(scenarios.size());
  parallel_for(scenarios.size(), g.threads, [&](size_t i) {
    for (const Track& tr : tracks_from_scenario(scenarios[i])) {
      std::vector<CamRecord> stream = simulate_cam_stream(tr);
      // A live sender keeps transmitting past our window; close each run so
      // re-ingestion can densify up to the final slot instead of losing the
      // tail after the last trigger.
      if (stream.back().t != tr.samples.back().t)
        stream.push_back(camnet::detail::cam_from_sample(tr, tr.samples.back()));
      per_scenario[i].insert(per_scenario[i].end(), stream.begin(), stream.end());
    }
  });
  std::vector<CamRecord> records;
  for (auto& chunk : per_scenario)
    records.insert(records.end(), std::make_move_iterator(chunk.begin()),
                   std::make_move_iterator(chunk.end()));
  std::stable_sort(records.begin(), records.end(), [](const CamRecord& a, const CamRecord& b) {
    return a.station_id != b.station_id ? a.station_id < b.station_id : a.t < b.t;
  });
  records = dedup(records);
  write_records(records, out, format_from_extension(out));
  nlohmann::json summary{{"scenarios", scenarios.size()}, {"records", records.size()},
                         {"out", out.string()}};
  std::cout << summary.dump(2) << "\n";
  return 0;
}

// ---- stats ------------------------------------------------------------------

int cmd_stats(const fs::path& in, const fs::path& out) {
  std::vector<Scenario> scenarios = load_scenarios(in);
  StatsReport rep = dataset_stats(scenarios);
  if (!out.empty()) {
    if (out.extension() == ".csv")
      write_text(out, rep.to_csv());
    else
      write_text(out, rep.to_json().dump(2) + "\n");
  }
  std::cout << rep.to_json().dump(2) << "\n";
  return 0;
}

// ---- split ------------------------------------------------------------------

int cmd_split(const GlobalOpts& g, const fs::path& in, double ratio, const fs::path& out) {
  std::vector<Scenario> scenarios = load_scenarios(in);
  if (scenarios.empty()) throw_error(ErrorKind::EmptyDataset, "split: no scenarios");
  auto [train_set, val_set] = dataset_split(std::move(scenarios), ratio, g.seed);
  save_scenarios(train_set, out / "train");
  save_scenarios(val_set, out / "val");
  auto manifest = [](const std::vector<Scenario>& set) {
    std::string text;
    for (const Scenario& s : set) text += s.id + ".json\n";
    return text;
  };
  write_text(out / "train_manifest.txt", manifest(train_set));
  write_text(out / "val_manifest.txt", manifest(val_set));
  nlohmann::json summary{{"train", train_set.size()}, {"val", val_set.size()},
                         {"out", out.string()}};
  std::cout << summary.dump(2) << "\n";
  return 0;
}

// ---- train ------------------------------------------------------------------

int cmd_train(const GlobalOpts& g, const fs::path& config_path, const fs::path& train_dir,
              const fs::path& val_dir, const fs::path& out,
              const model::TrainConfig& base, const std::string& warm_start) {
  model::ModelConfig mcfg;
  if (!config_path.empty()) mcfg = model::ModelConfig::from_json(load_json_file(config_path));
  std::vector<Scenario> train_set = load_scenarios(train_dir);
  std::vector<Scenario> val_set;
  if (!val_dir.empty()) val_set = load_scenarios(val_dir);

  fs::create_directories(out);
  model::TrainConfig tcfg = base;
  tcfg.seed = g.seed;
  tcfg.log_path = out / "train_log.csv";
  tcfg.checkpoint_path = out / "best.ckpt";
  if (!warm_start.empty()) tcfg.warm_start = fs::path(warm_start);

  model::TrainResult res = model::train(train_set, val_set, mcfg, tcfg);
  nlohmann::json summary{{"epochs", (int)res.log.size()},
                         {"best_epoch", res.best_epoch},
                         {"best_val_avgmin6_ade", res.best_val_ade},
                         {"checkpoint", tcfg.checkpoint_path.string()},
                         {"log", tcfg.log_path.string()}};
  std::cout << summary.dump(2) << "\n";
  return 0;
}

// ---- eval -------------------------------------------------------------------

std::vector<int> parse_k_list(const std::string& arg) {
  std::vector<int> ks;
  std::stringstream ss(arg);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      size_t used = 0;
      int k = std::stoi(item, &used);
      if (used != item.size() || k < 1) throw std::invalid_argument(item);
      ks.push_back(k);
    } catch (const std::exception&) {
      throw_error(ErrorKind::Config, "bad k list '" + arg + "' (expected e.g. 1,6)");
    }
  }
  if (ks.empty()) throw_error(ErrorKind::Config, "empty k list");
  return ks;
}

int cmd_eval(const GlobalOpts& g, const fs::path& ckpt, const fs::path& data,
             const std::string& k_spec, const std::string& baseline,
             const std::string& graph_override, const fs::path& out_path) {
  std::vector<int> ks = parse_k_list(k_spec);
  int k_max = *std::max_element(ks.begin(), ks.end());
  std::vector<Scenario> scenarios = load_scenarios(data);
  if (scenarios.empty()) throw_error(ErrorKind::EmptyDataset, "eval: no scenarios");

  std::vector<std::vector<PredictionSet>> per_scenario(scenarios.size());
  if (baseline == "cvm") {
    if (k_max > 1)
      throw_error(ErrorKind::Config, "eval: the cvm baseline is single-mode; use --k 1");
    for (size_t i = 0; i < scenarios.size(); ++i)
      per_scenario[i] = baselines::cvm_predictions(scenarios[i]);
  } else if (baseline == "camnet") {
    if (ckpt.empty()) throw_error(ErrorKind::Config, "eval: --ckpt is required for camnet");
    model::ModelState m = model::load_model(ckpt);
    if (!graph_override.empty()) m.config.graph = parse_graph_config(graph_override);
    parallel_for(scenarios.size(), g.threads, [&](size_t i) {
      per_scenario[i] = model::focal_predictions(scenarios[i], m, k_max, g.seed);
    });
  } else {
    throw_error(ErrorKind::Config, "eval: unknown baseline '" + baseline + "' (cvm|camnet)");
  }

  std::vector<PredictionSet> preds;
  for (auto& chunk : per_scenario)
    preds.insert(preds.end(), std::make_move_iterator(chunk.begin()),
                 std::make_move_iterator(chunk.end()));

  nlohmann::json results = nlohmann::json::array();
  for (int k : ks) results.push_back(evaluate(preds, k).to_json());
  nlohmann::json j{{"baseline", baseline},
                   {"n_scenarios", scenarios.size()},
                   {"results", std::move(results)}};
  deliver(j, out_path);
  return 0;
}

// ---- predict ----------------------------------------------------------------

nlohmann::json forecasts_to_json(const std::vector<model::AgentForecast>& forecasts) {
  nlohmann::json out = nlohmann::json::array();
  for (const model::AgentForecast& f : forecasts) {
    nlohmann::json modes = nlohmann::json::array();
    for (const Trajectory& mode : f.modes) {
      nlohmann::json pts = nlohmann::json::array();
      for (const Point2& p : mode) pts.push_back({p[0], p[1]});
      modes.push_back(std::move(pts));
    }
    out.push_back({{"station_id", f.station_id},
                   {"agent_index", f.agent_index},
                   {"modes", std::move(modes)}});
  }
  return out;
}

int cmd_predict(const GlobalOpts& g, const fs::path& ckpt, const fs::path& scenario_path,
                int k, double noise_scale, const fs::path& out_path) {
  if (k < 1) throw_error(ErrorKind::Config, "predict: k must be >= 1");
  Scenario s = load_scenario(scenario_path);
  model::ModelState m = model::load_model(ckpt);
  auto forecasts = model::sample_trajectories(s, m, k, g.seed, noise_scale);
  nlohmann::json j{{"scenario", s.id},
                   {"k", k},
                   {"t_obs", m.config.t_obs},
                   {"forecasts", forecasts_to_json(forecasts)}};
  deliver(j, out_path);
  return 0;
}

// ---- plot -------------------------------------------------------------------

struct Bbox {
  double min_x = 1e300, min_y = 1e300, max_x = -1e300, max_y = -1e300;
  void add(double x, double y) {
    min_x = std::min(min_x, x);
    min_y = std::min(min_y, y);
    max_x = std::max(max_x, x);
    max_y = std::max(max_y, y);
  }
};

// valid slots of [lo, hi) as contiguous polylines
std::vector<Trajectory> agent_runs(const AgentTrack& a, int lo, int hi) {
  std::vector<Trajectory> runs;
  Trajectory current;
  for (int t = lo; t < hi; ++t) {
    if (a.valid[t]) {
      current.push_back({a.states[t].x, a.states[t].y});
    } else if (!current.empty()) {
      runs.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) runs.push_back(std::move(current));
  return runs;
}

int cmd_plot(const fs::path& scenario_path, const fs::path& pred_path, const fs::path& out) {
  Scenario s = load_scenario(scenario_path);
  std::vector<std::vector<Trajectory>> pred_modes;
  if (!pred_path.empty()) {
    nlohmann::json j = load_json_file(pred_path);
    try {
      for (const nlohmann::json& f : j.at("forecasts")) {
        std::vector<Trajectory> modes;
        for (const nlohmann::json& mode : f.at("modes")) {
          Trajectory traj;
          for (const nlohmann::json& p : mode)
            traj.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
          modes.push_back(std::move(traj));
        }
        pred_modes.push_back(std::move(modes));
      }
    } catch (const nlohmann::json::exception& e) {
      throw_error(ErrorKind::MalformedFile, pred_path.string() + ": " + e.what());
    }
  }

  Bbox box;
  for (const AgentTrack& a : s.agents)
    for (int t = 0; t < kScenarioSteps; ++t)
      if (a.valid[t]) box.add(a.states[t].x, a.states[t].y);
  for (const auto& modes : pred_modes)
    for (const Trajectory& traj : modes)
      for (const Point2& p : traj) box.add(p[0], p[1]);
  if (box.min_x > box.max_x) throw_error(ErrorKind::EmptyDataset, "plot: nothing to draw");

  double span_x = std::max(box.max_x - box.min_x, 1.0);
  double span_y = std::max(box.max_y - box.min_y, 1.0);
  double width = 800.0, pad = 40.0;
  double scale = (width - 2 * pad) / span_x;
  double height = span_y * scale + 2 * pad;
  auto px = [&](double x) { return pad + (x - box.min_x) * scale; };
  auto py = [&](double y) { return height - pad - (y - box.min_y) * scale; };
  auto polyline = [&](const Trajectory& traj, const char* color, double w, double opacity) {
    if (traj.size() < 2) return std::string();
    std::string points;
    for (const Point2& p : traj) {
      if (!points.empty()) points += ' ';
      points += detail::format_double(px(p[0])) + "," + detail::format_double(py(p[1]));
    }
    std::ostringstream os;
    os << "  <polyline points=\"" << points << "\" fill=\"none\" stroke=\"" << color
       << "\" stroke-width=\"" << w << "\" stroke-opacity=\"" << opacity << "\"/>\n";
    return os.str();
  };

  std::string body;
  // predictions (red) under ground truth (blue) under observations (green)
  for (const auto& modes : pred_modes)
    for (const Trajectory& traj : modes) body += polyline(traj, "#d7191c", 1.2, 0.75);
  for (const AgentTrack& a : s.agents)
    for (const Trajectory& run : agent_runs(a, kObsSteps, kScenarioSteps))
      body += polyline(run, "#2b83ba", 1.6, 1.0);
  for (const AgentTrack& a : s.agents)
    for (const Trajectory& run : agent_runs(a, 0, kObsSteps))
      body += polyline(run, "#1a9641", 1.6, 1.0);

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << (int)width << "\" height=\""
      << (int)std::ceil(height) << "\" viewBox=\"0 0 " << (int)width << " "
      << (int)std::ceil(height) << "\">\n"
      << "  <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      << body << "</svg>\n";
  write_text(out, svg.str());
  std::cout << nlohmann::json{{"out", out.string()}}.dump(2) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"CAM-stream trajectory forecasting: ingest, train, evaluate, predict"};
  app.require_subcommand(1);

  GlobalOpts g;
  app.add_option("--seed", g.seed, "seed for every stochastic choice");
  app.add_option("--threads", g.threads, "worker threads for per-scenario work")
      ->check(CLI::PositiveNumber);
  app.add_option("--log-level", g.log_level, "debug|info|warn|error|off");

  // ingest
  fs::path ingest_in, ingest_out;
  std::string ingest_format = "jsonl";
  int ingest_stride = kScenarioSteps;
  CLI::App* ingest = app.add_subcommand("ingest", "CAM records -> scenario files");
  ingest->add_option("--in", ingest_in, "record file or directory")->required();
  ingest->add_option("--format", ingest_format, "jsonl|csv");
  ingest->add_option("--out", ingest_out, "scenario output directory")->required();
  ingest->add_option("--stride", ingest_stride, "grid steps between scenario anchors")
      ->check(CLI::PositiveNumber);

  // camify
  fs::path camify_in, camify_out;
  CLI::App* camify = app.add_subcommand("camify", "scenarios -> simulated CAM stream");
  camify->add_option("--in", camify_in, "scenario file or directory")->required();
  camify->add_option("--out", camify_out, "output record file (.jsonl or .csv)")->required();

  // stats
  fs::path stats_in, stats_out;
  CLI::App* stats = app.add_subcommand("stats", "dataset statistics");
  stats->add_option("--in", stats_in, "scenario file or directory")->required();
  stats->add_option("--out", stats_out, "report file (.json or .csv)");

  // split
  fs::path split_in, split_out;
  double split_ratio = 0.8;
  CLI::App* split = app.add_subcommand("split", "shuffle scenarios into train/ and val/");
  split->add_option("--in", split_in, "scenario directory")->required();
  split->add_option("--ratio", split_ratio, "train fraction in (0,1)");
  split->add_option("--out", split_out, "output directory")->required();

  // train
  fs::path train_config, train_dir, val_dir, train_out;
  std::string warm_start;
  model::TrainConfig tbase;
  CLI::App* train = app.add_subcommand("train", "fit the model");
  train->add_option("--config", train_config, "model config JSON (defaults if omitted)");
  train->add_option("--train", train_dir, "training scenario directory")->required();
  train->add_option("--val", val_dir, "validation scenario directory");
  train->add_option("--out", train_out, "output directory for checkpoint and log")->required();
  train->add_option("--epochs", tbase.epochs)->check(CLI::PositiveNumber);
  train->add_option("--batch-size", tbase.batch_size)->check(CLI::PositiveNumber);
  train->add_option("--lr-start", tbase.lr_start);
  train->add_option("--lr-end", tbase.lr_end);
  train->add_option("--weight-decay", tbase.weight_decay);
  train->add_option("--k-eval", tbase.k_eval)->check(CLI::PositiveNumber);
  train->add_option("--warm-start", warm_start, "checkpoint to fine-tune from");

  // eval
  fs::path eval_ckpt, eval_data, eval_out;
  std::string eval_k = "1,6", eval_baseline = "camnet", eval_graph;
  CLI::App* eval = app.add_subcommand("eval", "score a predictor on a scenario set");
  eval->add_option("--ckpt", eval_ckpt, "model checkpoint (camnet baseline)");
  eval->add_option("--data", eval_data, "scenario file or directory")->required();
  eval->add_option("--k", eval_k, "comma-separated mode counts, e.g. 1,6");
  eval->add_option("--baseline", eval_baseline, "cvm|camnet");
  eval->add_option("--graph", eval_graph,
                   "override the checkpoint graph strategy "
                   "(all_to_all|knn:<k>|distance:<m>)");
  eval->add_option("--out", eval_out, "write the report here instead of stdout");

  // predict
  fs::path pred_ckpt, pred_scenario, pred_out;
  int pred_k = 6;
  double pred_noise = 1.0;
  CLI::App* predict = app.add_subcommand("predict", "sample forecasts for one scenario");
  predict->add_option("--ckpt", pred_ckpt, "model checkpoint")->required();
  predict->add_option("--scenario", pred_scenario, "scenario file")->required();
  predict->add_option("--k", pred_k, "modes to sample")->check(CLI::PositiveNumber);
  predict->add_option("--noise-scale", pred_noise,
                      "prior std multiplier; 0 gives the deterministic mean rollout");
  predict->add_option("--out", pred_out, "write forecasts here instead of stdout");

  // plot
  fs::path plot_scenario, plot_pred, plot_out;
  CLI::App* plot = app.add_subcommand("plot", "render a scenario (and forecasts) to SVG");
  plot->add_option("--scenario", plot_scenario, "scenario file")->required();
  plot->add_option("--pred", plot_pred, "predict output JSON");
  plot->add_option("--out", plot_out, "SVG path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    emit_error("Config", e.what());
    return 1;
  }

  try {
    if (!log::set_level(g.log_level))
      throw_error(ErrorKind::Config, "unknown log level '" + g.log_level + "'");
    if (ingest->parsed()) return cmd_ingest(g, ingest_in, ingest_format, ingest_out, ingest_stride);
    if (camify->parsed()) return cmd_camify(g, camify_in, camify_out);
    if (stats->parsed()) return cmd_stats(stats_in, stats_out);
    if (split->parsed()) return cmd_split(g, split_in, split_ratio, split_out);
    if (train->parsed())
      return cmd_train(g, train_config, train_dir, val_dir, train_out, tbase, warm_start);
    if (eval->parsed())
      return cmd_eval(g, eval_ckpt, eval_data, eval_k, eval_baseline, eval_graph, eval_out);
    if (predict->parsed())
      return cmd_predict(g, pred_ckpt, pred_scenario, pred_k, pred_noise, pred_out);
    if (plot->parsed()) return cmd_plot(plot_scenario, plot_pred, plot_out);
    return 0;
  } catch (const Error& e) {
    emit_error(to_string(e.kind()), e.what());
    return e.exit_code();
  } catch (const nlohmann::json::exception& e) {
    emit_error("MalformedFile", e.what());
    return 2;
  } catch (const std::exception& e) {
    emit_error("Internal", e.what());
    return 3;
  }
}
