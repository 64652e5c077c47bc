#include "mixtraffic/scenario.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>

#include "mixtraffic/sensing.hpp"

namespace mixtraffic {

namespace fs = std::filesystem;

std::string to_string(RouterMode m) { return m == RouterMode::Shortest ? "shortest" : "rebalance"; }

RouterMode router_mode_from_string(const std::string& s) {
  if (s == "shortest") return RouterMode::Shortest;
  if (s == "rebalance") return RouterMode::Rebalance;
  throw ConfigError("unknown router '" + s + "'");
}

nlohmann::json config_to_json(const ScenarioConfig& c, bool include_outputs) {
  nlohmann::json j;
  j["name"] = c.name;
  if (!c.network_file.empty()) {
    j["network"] = {{"file", c.network_file}};
  } else {
    j["network"] = {{"grid", {{"rows", c.grid.rows}, {"cols", c.grid.cols}, {"length_m", c.grid.length_m},
                              {"speed_mps", c.grid.speed_mps}}}};
  }
  j["duration"] = c.duration;
  j["seed"] = c.seed;
  j["control"] = to_string(c.control);
  j["router"] = to_string(c.router);
  j["spawns"] = nlohmann::json::array();
  for (const auto& s : c.spawns) {
    nlohmann::json js{{"segment_id", s.segment_id}, {"rate", s.rate}, {"rv_probability", s.rv_probability}};
    if (!s.destinations.empty()) {
      js["destinations"] = nlohmann::json::array();
      for (const auto& [id, w] : s.destinations) js["destinations"].push_back({{"segment_id", id}, {"weight", w}});
    }
    j["spawns"].push_back(js);
  }
  j["p_target"] = c.rebalance.p_target;
  j["lambda"] = c.rebalance.lambda;
  j["cadence"] = c.cadence;
  j["horizon"] = c.horizon;
  j["staleness_limit"] = c.staleness_limit;
  j["sensing_radius"] = c.sensing_radius;
  if (!c.model_file.empty()) j["model_file"] = c.model_file;
  j["signal"] = {{"green", c.signal_green}, {"all_red", c.signal_all_red}};
  j["platoon_limit"] = c.sim.platoon_limit;
  if (include_outputs) {
    j["outputs"] = {{"metrics_csv", c.metrics_csv}, {"replay_log", c.replay_log}, {"summary_json", c.summary_json}};
  }
  return j;
}

ScenarioConfig config_from_json(const nlohmann::json& j) {
  ScenarioConfig c;
  try {
    c.name = j.value("name", c.name);
    if (j.contains("network")) {
      const auto& n = j.at("network");
      if (n.contains("file")) {
        c.network_file = n.at("file").get<std::string>();
      } else if (n.contains("grid")) {
        const auto& g = n.at("grid");
        c.grid.rows = g.value("rows", c.grid.rows);
        c.grid.cols = g.value("cols", c.grid.cols);
        c.grid.length_m = g.value("length_m", c.grid.length_m);
        c.grid.speed_mps = g.value("speed_mps", c.grid.speed_mps);
      }
    }
    c.duration = j.value("duration", c.duration);
    c.seed = j.value("seed", c.seed);
    if (j.contains("control")) c.control = control_mode_from_string(j.at("control").get<std::string>());
    if (j.contains("router")) c.router = router_mode_from_string(j.at("router").get<std::string>());
    for (const auto& js : j.value("spawns", nlohmann::json::array())) {
      SpawnConfig s;
      s.segment_id = js.at("segment_id").get<std::string>();
      s.rate = js.at("rate").get<double>();
      s.rv_probability = js.at("rv_probability").get<double>();
      for (const auto& d : js.value("destinations", nlohmann::json::array())) {
        s.destinations.emplace_back(d.at("segment_id").get<std::string>(), d.value("weight", 1.0));
      }
      c.spawns.push_back(std::move(s));
    }
    c.rebalance.p_target = j.value("p_target", c.rebalance.p_target);
    c.rebalance.lambda = j.value("lambda", c.rebalance.lambda);
    c.cadence = j.value("cadence", c.cadence);
    c.horizon = j.value("horizon", c.horizon);
    c.staleness_limit = j.value("staleness_limit", c.staleness_limit);
    c.sensing_radius = j.value("sensing_radius", c.sensing_radius);
    c.model_file = j.value("model_file", c.model_file);
    if (j.contains("signal")) {
      c.signal_green = j.at("signal").value("green", c.signal_green);
      c.signal_all_red = j.at("signal").value("all_red", c.signal_all_red);
    }
    c.sim.platoon_limit = j.value("platoon_limit", c.sim.platoon_limit);
    if (j.contains("outputs")) {
      const auto& o = j.at("outputs");
      c.metrics_csv = o.value("metrics_csv", c.metrics_csv);
      c.replay_log = o.value("replay_log", c.replay_log);
      c.summary_json = o.value("summary_json", c.summary_json);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad config: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (c.duration < 0) throw ConfigError("duration must be non-negative");
  if (c.cadence < 1) throw ConfigError("cadence must be at least 1");
  if (c.horizon < 1) throw ConfigError("horizon must be at least 1");
  if (!(c.rebalance.p_target > 0.0 && c.rebalance.p_target < 1.0)) throw ConfigError("p_target must be in (0,1)");
  if (!(c.rebalance.lambda >= 0.0 && c.rebalance.lambda < c.rebalance.p_target)) {
    throw ConfigError("lambda must be in [0, p_target)");
  }
  return c;
}

ScenarioConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read " + path);
  try {
    return config_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

std::uint64_t config_hash(const ScenarioConfig& c) { return fnv1a(config_to_json(c, false).dump()); }

NetworkGraph build_network(const ScenarioConfig& c) {
  if (!c.network_file.empty()) return load_network_file(c.network_file);
  return load_network(generate_grid(c.grid.rows, c.grid.cols, c.grid.length_m, c.grid.speed_mps));
}

std::vector<SpawnSpec> resolve_spawns(const ScenarioConfig& c, const NetworkGraph& graph) {
  std::vector<SpawnSpec> out;
  for (const auto& s : c.spawns) {
    auto seg = graph.find(s.segment_id);
    if (!seg) throw ConfigError("spawn segment '" + s.segment_id + "' not in network");
    if (!graph.segment(*seg).spawn) throw ConfigError("segment '" + s.segment_id + "' is not a spawn segment");
    if (!(s.rate >= 0.0 && s.rate <= 1.0)) throw ConfigError("spawn rate must be in [0,1]");
    if (!(s.rv_probability >= 0.0 && s.rv_probability <= 1.0)) throw ConfigError("rv_probability must be in [0,1]");
    SpawnSpec spec{*seg, s.rate, s.rv_probability, {}};
    for (const auto& [id, w] : s.destinations) {
      auto d = graph.find(id);
      if (!d) throw ConfigError("destination '" + id + "' not in network");
      if (!(w > 0.0)) throw ConfigError("destination weight must be positive");
      spec.destinations.emplace_back(*d, w);
    }
    out.push_back(std::move(spec));
  }
  return out;
}

namespace {

struct ScenarioShape {
  double rate;
  std::set<std::string> low_rv;
};

const std::map<std::string, ScenarioShape>& scenario_shapes() {
  static const std::map<std::string, ScenarioShape> shapes{
      {"morning-rush", {0.18, {"in-r0c0", "in-r1c3"}}},
      {"evening-rush", {0.20, {"in-r2c0", "in-r3c1"}}},
      {"late-evening", {0.08, {"in-r0c2", "in-r3c3"}}},
  };
  return shapes;
}

constexpr double kLowRvShare = 0.2;
constexpr double kSpawnMargin = 0.05;
constexpr int kScenarioCadence = 2;

}  // namespace

std::vector<std::string> bundled_scenario_names() {
  std::vector<std::string> out;
  for (const auto& [name, shape] : scenario_shapes()) out.push_back(name);
  return out;
}

ScenarioConfig bundled_scenario(const std::string& name) {
  auto it = scenario_shapes().find(name);
  if (it == scenario_shapes().end()) throw ConfigError("unknown scenario '" + name + "'");
  ScenarioConfig c;
  c.name = name;
  c.cadence = kScenarioCadence;
  const auto graph = build_network(c);
  for (auto s : graph.spawn_segments()) {
    const auto& id = graph.segment(s).id;
    const bool low = it->second.low_rv.count(id) > 0;
    c.spawns.push_back({id, it->second.rate, low ? kLowRvShare : c.rebalance.p_target + kSpawnMargin, {}});
  }
  return c;
}

ScenarioConfig with_rv_rate(ScenarioConfig c, double rv_rate) {
  const double old_share = c.rebalance.p_target + kSpawnMargin;
  for (auto& s : c.spawns) {
    if (std::abs(s.rv_probability - old_share) < 1e-12) s.rv_probability = std::min(1.0, rv_rate + kSpawnMargin);
  }
  c.rebalance.p_target = rv_rate;
  return c;
}

nlohmann::json summary_to_json(const RunSummary& s) {
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  return {{"config_hash", hex64(s.config_hash)},
          {"seed", s.seed},
          {"metrics_path", s.metrics_path},
          {"shortage_index", opt(s.shortage_index)},
          {"avg_waiting_time", opt(s.avg_waiting_time)},
          {"departed_wait_hv", opt(s.departed_wait_hv)},
          {"departed_wait_rv", opt(s.departed_wait_rv)},
          {"spawned", s.spawned},
          {"departed", s.departed},
          {"deferred_spawns", s.deferred_spawns},
          {"clamp_events", s.clamp_events},
          {"routing",
           {{"rounds", s.routing.rounds},
            {"reports", s.routing.reports},
            {"tasks", s.routing.tasks},
            {"assignments", s.routing.assignments},
            {"applied", s.routing.applied},
            {"expired", s.routing.expired},
            {"shortfall", s.routing.shortfall},
            {"unserviceable", s.routing.unserviceable}}},
          {"conflict_flags", s.conflict_flags},
          {"decisions", s.decisions},
          {"max_concurrent", s.max_concurrent},
          {"wall_seconds", s.wall_seconds}};
}

void ShortageAccumulator::add(const std::vector<SegmentCount>& counts) {
  for (std::size_t e = 0; e < counts.size(); ++e) {
    total[e] += counts[e].total;
    rv[e] += counts[e].rv;
  }
}

std::optional<double> ShortageAccumulator::network_average(const NetworkGraph& graph, double p_target) const {
  double sum = 0.0;
  int n = 0;
  for (SegmentIndex e = 0; e < total.size(); ++e) {
    if (graph.predecessors(e).empty() || total[e] <= 0.0) continue;
    sum += shortage_index(rv[e] / total[e], p_target);
    n += 1;
  }
  if (n == 0) return std::nullopt;
  return sum / n;
}

FlowMatrix flow_from_counts(const std::vector<SegmentCount>& counts, std::int64_t tick) {
  FlowMatrix x = FlowMatrix::zeros(counts.size(), tick);
  for (std::size_t e = 0; e < counts.size(); ++e) {
    const auto r = static_cast<Eigen::Index>(e);
    x.values(r, kVehicleCount) = counts[e].total;
    x.values(r, kRvRate) = counts[e].total > 0 ? static_cast<double>(counts[e].rv) / counts[e].total : 0.0;
  }
  return x;
}

RunSummary run_scenario(const ScenarioConfig& config) {
  const auto graph = build_network(config);
  std::optional<PropagationModel> model;
  if (!config.model_file.empty()) {
    std::ifstream in(config.model_file);
    if (!in) throw ConfigError("cannot read " + config.model_file);
    model = model_from_json(nlohmann::json::parse(in), graph);
  }
  RunHooks hooks;
  if (model) hooks.model = &*model;
  return run_scenario(config, graph, hooks);
}

namespace {

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::vector<SegmentEstimate> levels_from_forecast(const EstimateTable& table, const PropagationModel& model,
                                                  const NetworkGraph& graph, int horizon, std::uint64_t& clamps) {
  FlowMatrix x = FlowMatrix::zeros(graph.size());
  for (SegmentIndex e = 0; e < graph.size(); ++e) {
    x.values(static_cast<Eigen::Index>(e), kVehicleCount) = table.rows[e].n_e;
    x.values(static_cast<Eigen::Index>(e), kRvRate) = table.rows[e].p_e;
  }
  ClampCounter cc;
  const auto ahead = predict_multi(model, graph, x, horizon, &cc).back();
  clamps += cc.events;
  std::vector<SegmentEstimate> out = table.rows;
  for (SegmentIndex e = 0; e < graph.size(); ++e) {
    out[e].p_e = ahead.values(static_cast<Eigen::Index>(e), kRvRate);
    const double n = ahead.values(static_cast<Eigen::Index>(e), kVehicleCount);
    // A clamped count carries no quota information; keep the current one.
    if (n > 0.0) out[e].n_e = n;
  }
  return out;
}

}  // namespace

RunSummary run_scenario(const ScenarioConfig& config, const NetworkGraph& graph, const RunHooks& hooks) {
  const PropagationModel* model = hooks.model;
  const auto started = std::chrono::steady_clock::now();
  const auto specs = resolve_spawns(config, graph);
  SimState state = make_state(graph, config.seed);

  std::vector<SignalPlan> signals;
  if (config.control == ControlMode::TL) {
    for (const auto& x : graph.intersections()) {
      signals.push_back(default_signal_plan(x, config.signal_green, config.signal_all_red));
    }
  }
  const Policy policy = heuristic_policy;
  const auto hash = config_hash(config);
  const std::string stamp = "config_hash=" + hex64(hash) + " seed=" + std::to_string(config.seed);

  std::ofstream metrics;
  if (!config.metrics_csv.empty()) {
    metrics.open(config.metrics_csv);
    if (!metrics) throw ConfigError("cannot write " + config.metrics_csv);
    metrics << "# " << stamp << '\n'
            << "tick,vehicles,rvs,spawned,departed,deferred_spawns,mean_speed,avg_waiting_time,shortage_index,"
               "assignments";
    for (SegmentIndex e = 0; e < graph.size(); ++e) metrics << ",rate:" << graph.segment(e).id;
    metrics << '\n';
  }
  std::ofstream replay;
  if (!config.replay_log.empty()) {
    replay.open(config.replay_log);
    if (!replay) throw ConfigError("cannot write " + config.replay_log);
    replay << nlohmann::json{{"type", "header"},
                             {"config_hash", hex64(hash)},
                             {"seed", config.seed},
                             {"graph_hash", hex64(graph.hash())},
                             {"router", to_string(config.router)},
                             {"control", to_string(config.control)}}
                  .dump()
           << '\n';
  }

  RunSummary summary;
  summary.metrics_path = config.metrics_csv;
  summary.config_hash = hash;
  summary.seed = config.seed;

  EstimateTable table = EstimateTable::with_priors(spawn_priors(graph, specs, config.rebalance.p_target));
  ShortageAccumulator acc(graph.size());
  std::uint64_t next_task_id = 1;
  std::uint64_t round_index = 0;

  for (std::int64_t t = 0; t < config.duration; ++t) {
    spawn(state, graph, specs, config.sim);

    // Crowdsensing: every RV on a segment reports; the coordinator fuses per segment.
    std::map<SegmentIndex, std::vector<LocalObservation>> reports;
    for (SegmentIndex e = 0; e < graph.size(); ++e) {
      for (auto id : state.occupancy[e]) {
        if (state.vehicles.at(id).is_rv()) {
          reports[e].push_back(sense_local(state, graph, id, config.sensing_radius));
        }
      }
    }
    std::vector<SegmentEstimate> fresh;
    for (const auto& [e, obs] : reports) {
      if (auto est = aggregate(obs)) fresh.push_back(*est);
    }
    snapshot(table, fresh, state.tick, config.staleness_limit);

    if (config.router == RouterMode::Rebalance && t > 0 && t % config.cadence == 0) {
      std::vector<double> rates(graph.size());
      for (SegmentIndex e = 0; e < graph.size(); ++e) rates[e] = table.rows[e].p_e;
      auto levels = model ? levels_from_forecast(table, *model, graph, config.horizon, summary.clamp_events)
                          : table.rows;
      auto round = decision_round(state, graph, levels, rates, config.rebalance, next_task_id, summary.routing);
      if (replay.is_open()) {
        nlohmann::json j{{"type", "round"}, {"round", round_index}, {"tick", round.tick}};
        j["reports"] = nlohmann::json::array();
        for (const auto& r : round.reports) j["reports"].push_back(to_json(r, graph));
        j["tasks"] = nlohmann::json::array();
        for (const auto& x : round.tasks) j["tasks"].push_back(to_json(x, graph));
        j["responses"] = nlohmann::json::array();
        for (const auto& x : round.responses) j["responses"].push_back(to_json(x));
        j["assignments"] = nlohmann::json::array();
        for (const auto& x : round.assignments) j["assignments"].push_back(to_json(x, graph));
        j["applied"] = round.applied;
        replay << j.dump() << '\n';
      }
      round_index += 1;
    }

    step(state, graph, config.control, policy, config.sim, signals);

    const auto counts = segment_counts(state);
    acc.add(counts);
    if (hooks.record) hooks.record->push_back(flow_from_counts(counts, state.tick));
    if (hooks.on_tick) hooks.on_tick(state);
    summary.max_concurrent = std::max<std::uint64_t>(summary.max_concurrent, state.vehicles.size());

    if (metrics.is_open()) {
      ShortageAccumulator now(graph.size());
      now.add(counts);
      int rvs = 0;
      double speed = 0.0;
      for (const auto& [id, v] : state.vehicles) {
        rvs += v.is_rv();
        speed += v.speed;
      }
      const auto wait = avg_waiting_time(state);
      const auto si = now.network_average(graph, config.rebalance.p_target);
      metrics << state.tick << ',' << state.vehicles.size() << ',' << rvs << ',' << state.stats.spawned << ','
              << state.stats.departed << ',' << state.stats.deferred_spawns << ','
              << (state.vehicles.empty() ? "" : fmt(speed / static_cast<double>(state.vehicles.size()))) << ','
              << (wait ? fmt(*wait) : "") << ',' << (si ? fmt(*si) : "") << ',' << summary.routing.assignments;
      for (const auto& c : counts) {
        metrics << ',';
        if (c.total > 0) metrics << fmt(static_cast<double>(c.rv) / c.total);
      }
      metrics << '\n';
    }
  }

  summary.shortage_index = acc.network_average(graph, config.rebalance.p_target);
  summary.avg_waiting_time = avg_waiting_time(state);
  const auto& st = state.stats;
  if (st.departed_rv > 0) summary.departed_wait_rv = st.departed_rv_wait_sum / static_cast<double>(st.departed_rv);
  if (st.departed > st.departed_rv) {
    summary.departed_wait_hv =
        (st.departed_wait_sum - st.departed_rv_wait_sum) / static_cast<double>(st.departed - st.departed_rv);
  }
  summary.spawned = state.stats.spawned;
  summary.departed = state.stats.departed;
  summary.deferred_spawns = state.stats.deferred_spawns;
  summary.conflict_flags = state.stats.conflict_flags;
  summary.decisions = state.stats.decisions;
  summary.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();

  if (!config.summary_json.empty()) {
    std::ofstream out(config.summary_json);
    if (!out) throw ConfigError("cannot write " + config.summary_json);
    out << summary_to_json(summary).dump(2) << '\n';
  }
  return summary;
}

std::array<int, 3> split_counts(int runs) {
  if (runs < 1) throw ConfigError("runs must be at least 1");
  if (runs == 1) return {1, 0, 0};
  const int train = runs * 7 / 10;
  const int eval = runs * 2 / 10;
  return {train, eval, runs - train - eval};
}

DatasetManifest generate_dataset(const ScenarioConfig& config, int runs, const std::string& out_dir) {
  const auto split = split_counts(runs);
  if (runs == 1) std::cerr << "warning: a single run goes entirely to training; nothing left to evaluate\n";
  fs::create_directories(out_dir);
  const auto graph = build_network(config);
  DatasetManifest manifest;
  manifest.config_hash = hex64(config_hash(config));
  manifest.graph_hash = hex64(graph.hash());
  for (int r = 0; r < runs; ++r) {
    ScenarioConfig c = config;
    c.seed = config.seed + static_cast<std::uint64_t>(r);
    c.metrics_csv.clear();
    c.replay_log.clear();
    c.summary_json.clear();
    FlowSeries series;
    RunHooks hooks;
    hooks.record = &series;
    run_scenario(c, graph, hooks);
    char name[32];
    std::snprintf(name, sizeof name, "run_%03d.csv", r);
    write_flow_csv((fs::path(out_dir) / name).string(), graph, series,
                   "config_hash=" + hex64(config_hash(c)) + " seed=" + std::to_string(c.seed));
    const char* part = r < split[0] ? "train" : r < split[0] + split[1] ? "eval" : "validation";
    manifest.runs.push_back({name, c.seed, part});
  }
  nlohmann::json j{{"config_hash", manifest.config_hash}, {"graph_hash", manifest.graph_hash},
                   {"config", config_to_json(config, false)}};
  j["runs"] = nlohmann::json::array();
  for (const auto& r : manifest.runs) j["runs"].push_back({{"file", r.file}, {"seed", r.seed}, {"split", r.split}});
  std::ofstream out(fs::path(out_dir) / "manifest.json");
  if (!out) throw ConfigError("cannot write manifest in " + out_dir);
  out << j.dump(2) << '\n';
  return manifest;
}

DatasetManifest load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read " + path);
  const auto j = nlohmann::json::parse(in);
  DatasetManifest m;
  m.config_hash = j.at("config_hash").get<std::string>();
  m.graph_hash = j.at("graph_hash").get<std::string>();
  for (const auto& r : j.at("runs")) {
    m.runs.push_back({r.at("file").get<std::string>(), r.at("seed").get<std::uint64_t>(),
                      r.at("split").get<std::string>()});
  }
  return m;
}

std::vector<ForecastTableRow> eval_forecast(const NetworkGraph& graph, const std::vector<FlowSeries>& train,
                                            const std::vector<FlowSeries>& eval, EvalOptions& options) {
  if (options.horizons.empty()) throw ForecastError("no horizons requested");
  if (eval.empty()) throw ForecastError("no evaluation runs");
  const int max_h = *std::max_element(options.horizons.begin(), options.horizons.end());
  for (const auto& run : eval) {
    if (static_cast<int>(run.size()) <= max_h) throw ForecastError("horizon exceeds evaluation series length");
  }
  const auto model = fit(graph, train, options.fit);
  const auto ar = ar_baseline_fit(train);

  struct Buffers {
    std::vector<double> truth, constant, ar, prop;
  };
  std::map<int, Buffers> buf;
  ClampCounter clamps;
  for (const auto& run : eval) {
    for (std::size_t t = 0; t + static_cast<std::size_t>(max_h) < run.size(); ++t) {
      const auto prop = predict_multi(model, graph, run[t], max_h, &clamps);
      const auto arp = ar_baseline_predict(ar, run[t], max_h, &clamps);
      for (int h : options.horizons) {
        auto& b = buf[h];
        const auto& truth = run[t + static_cast<std::size_t>(h)];
        for (Eigen::Index e = 0; e < truth.values.rows(); ++e) {
          for (int f : options.features) {
            b.truth.push_back(truth.values(e, f));
            b.constant.push_back(run[t].values(e, f));
            b.ar.push_back(arp[static_cast<std::size_t>(h - 1)].values(e, f));
            b.prop.push_back(prop[static_cast<std::size_t>(h - 1)].values(e, f));
          }
        }
      }
    }
  }
  options.clamp_events = clamps.events;
  std::vector<ForecastTableRow> rows;
  for (int h : options.horizons) {
    const auto& b = buf.at(h);
    rows.push_back({h, error_metrics(b.truth, b.constant), error_metrics(b.truth, b.ar), error_metrics(b.truth, b.prop)});
  }
  return rows;
}

std::vector<ForecastTableRow> eval_forecast(const std::string& manifest_path, const NetworkGraph& graph,
                                            EvalOptions& options) {
  const auto manifest = load_manifest(manifest_path);
  if (manifest.graph_hash != hex64(graph.hash())) throw ForecastError("dataset was generated on a different graph");
  const auto dir = fs::path(manifest_path).parent_path();
  std::vector<FlowSeries> train, eval;
  for (const auto& r : manifest.runs) {
    if (r.split == "train") train.push_back(read_flow_csv((dir / r.file).string(), graph));
    if (r.split == "eval") eval.push_back(read_flow_csv((dir / r.file).string(), graph));
  }
  return eval_forecast(graph, train, eval, options);
}

void write_forecast_table(const std::string& path, const std::vector<ForecastTableRow>& rows,
                          const std::string& comment) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path);
  if (!comment.empty()) out << "# " << comment << '\n';
  out << "horizon,const_mae,const_rmse,const_mape,ar_mae,ar_rmse,ar_mape,prop_mae,prop_rmse,prop_mape\n";
  for (const auto& r : rows) {
    out << r.horizon;
    for (const auto* m : {&r.constant, &r.ar, &r.propagation}) {
      out << ',' << fmt(m->mae) << ',' << fmt(m->rmse) << ',' << fmt(m->mape);
    }
    out << '\n';
  }
}

namespace {

std::string method_of(const ScenarioConfig& c) {
  switch (c.control) {
    case ControlMode::NoTL:
      return "notl";
    case ControlMode::TL:
      return "tl";
    case ControlMode::IntersectionControl:
      break;
  }
  return c.router == RouterMode::Rebalance ? "full" : "control";
}

/// Config with every compared knob normalized, for base equality checks.
nlohmann::json comparison_base(ScenarioConfig c) {
  c = with_rv_rate(std::move(c), 0.5);
  for (auto& s : c.spawns) {
    if (std::abs(s.rv_probability - kLowRvShare) > 1e-12) s.rv_probability = 0.5 + kSpawnMargin;
  }
  c.control = ControlMode::IntersectionControl;
  c.router = RouterMode::Shortest;
  c.seed = 0;
  return config_to_json(c, false);
}

}  // namespace

std::vector<ScenarioConfig> comparison_configs(const ScenarioConfig& base, const std::vector<double>& rates) {
  std::vector<ScenarioConfig> out;
  const std::vector<std::pair<ControlMode, RouterMode>> methods{{ControlMode::NoTL, RouterMode::Shortest},
                                                                {ControlMode::TL, RouterMode::Shortest},
                                                                {ControlMode::IntersectionControl, RouterMode::Shortest},
                                                                {ControlMode::IntersectionControl, RouterMode::Rebalance}};
  for (const auto& [control, router] : methods) {
    for (double r : rates) {
      ScenarioConfig c = with_rv_rate(base, r);
      c.control = control;
      c.router = router;
      c.metrics_csv.clear();
      c.replay_log.clear();
      c.summary_json.clear();
      out.push_back(std::move(c));
    }
  }
  return out;
}

std::vector<ComparisonCell> compare_baselines(const std::vector<ScenarioConfig>& configs,
                                              const std::vector<std::uint64_t>& seeds) {
  if (configs.empty()) return {};
  if (seeds.empty()) throw ConfigError("at least one seed is required");
  const auto base = comparison_base(configs.front());
  for (const auto& c : configs) {
    if (comparison_base(c) != base) throw ConfigError("configs '" + c.name + "' do not share a scenario base");
  }
  std::vector<ComparisonCell> cells;
  for (const auto& c : configs) {
    ComparisonCell cell{method_of(c), c.rebalance.p_target, std::nullopt, {}};
    for (auto seed : seeds) {
      ScenarioConfig run = c;
      run.seed = seed;
      if (auto w = run_scenario(run).avg_waiting_time) cell.per_seed.push_back(*w);
    }
    cell.avg_waiting_time = avg_waiting_time(cell.per_seed);
    cells.push_back(std::move(cell));
  }
  return cells;
}

void write_comparison(const std::string& path, const std::vector<ComparisonCell>& cells, const std::string& comment) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path);
  if (!comment.empty()) out << "# " << comment << '\n';
  out << "method,rv_rate,avg_waiting_time,seeds\n";
  for (const auto& c : cells) {
    out << c.method << ',' << fmt(c.rv_rate) << ',' << (c.avg_waiting_time ? fmt(*c.avg_waiting_time) : "") << ','
        << c.per_seed.size() << '\n';
  }
}

}  // namespace mixtraffic
