#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "mixtraffic/forecast.hpp"
#include "mixtraffic/network.hpp"
#include "mixtraffic/scenario.hpp"

using namespace mixtraffic;
namespace fs = std::filesystem;

namespace {

struct ScenarioFlags {
  std::string config_file;
  std::string scenario{"evening-rush"};
  std::optional<std::int64_t> duration;
  std::optional<std::string> control;
  std::optional<std::string> router;
  std::optional<double> p_target;
  std::optional<double> lambda;
  std::optional<int> cadence;
  std::optional<int> horizon;
  std::optional<std::string> model;

  void add(CLI::App* app) {
    app->add_option("--config", config_file, "Scenario JSON; its values override flags");
    app->add_option("--scenario", scenario, "Bundled scenario when no config is given")
        ->check(CLI::IsMember(bundled_scenario_names()));
    app->add_option("--duration", duration, "Ticks to simulate");
    app->add_option("--control", control, "notl | tl | control")->check(CLI::IsMember({"notl", "tl", "control"}));
    app->add_option("--router", router, "shortest | rebalance")->check(CLI::IsMember({"shortest", "rebalance"}));
    app->add_option("--p-target", p_target, "Target RV rate");
    app->add_option("--lambda", lambda, "Shortage threshold");
    app->add_option("--cadence", cadence, "Ticks between decision rounds");
    app->add_option("--horizon", horizon, "Forecast horizon used for shortage detection");
    app->add_option("--model", model, "Fitted propagation model");
  }

  ScenarioConfig resolve() const {
    ScenarioConfig c = bundled_scenario(scenario);
    if (duration) c.duration = *duration;
    if (control) c.control = control_mode_from_string(*control);
    if (router) c.router = router_mode_from_string(*router);
    if (p_target) c = with_rv_rate(c, *p_target);
    if (lambda) c.rebalance.lambda = *lambda;
    if (cadence) c.cadence = *cadence;
    if (horizon) c.horizon = *horizon;
    if (model) c.model_file = *model;
    if (!config_file.empty()) {
      std::ifstream in(config_file);
      if (!in) throw ConfigError("cannot read " + config_file);
      auto merged = config_to_json(c);
      merged.merge_patch(nlohmann::json::parse(in));
      c = config_from_json(merged);
    }
    return c;
  }
};

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Mixed-traffic simulation, forecasting and RV rebalancing"};
  app.require_subcommand(1);

  auto* gen_net = app.add_subcommand("gen-net", "Write a grid network document");
  int rows = 4, cols = 4;
  double length = 100.0, speed = 13.89;
  std::string net_out;
  gen_net->add_option("--rows", rows);
  gen_net->add_option("--cols", cols);
  gen_net->add_option("--length", length, "Segment length in meters");
  gen_net->add_option("--speed", speed, "Speed limit in m/s");
  gen_net->add_option("-o,--out", net_out)->required();

  auto* run = app.add_subcommand("run", "Run one scenario");
  ScenarioFlags run_flags;
  run_flags.add(run);
  std::uint64_t seed = 0;
  std::string metrics_out, replay_out, summary_out;
  run->add_option("--seed", seed)->required();
  run->add_option("--metrics", metrics_out, "Per-tick metrics CSV");
  run->add_option("--replay", replay_out, "Protocol replay log (JSON lines)");
  run->add_option("--summary", summary_out, "Run summary JSON");

  auto* gen_data = app.add_subcommand("gen-data", "Generate a forecasting dataset");
  ScenarioFlags data_flags;
  data_flags.add(gen_data);
  int runs = 20;
  std::uint64_t data_seed = 1;
  std::string data_dir;
  gen_data->add_option("--runs", runs);
  gen_data->add_option("--seed", data_seed, "Seed of the first run");
  gen_data->add_option("-o,--out-dir", data_dir)->required();

  auto* fit_cmd = app.add_subcommand("fit", "Fit the propagation model on a dataset's training runs");
  std::string manifest_path, model_out;
  bool include_self = false;
  fit_cmd->add_option("--manifest", manifest_path)->required();
  fit_cmd->add_option("-o,--out", model_out)->required();
  fit_cmd->add_flag("--include-self", include_self, "Add each segment's own lag as a regressor");

  auto* eval_cmd = app.add_subcommand("eval-forecast", "Evaluate forecasters on a dataset");
  std::string eval_manifest, eval_out, horizons_arg{"10,50,100"}, features_arg{"rate"};
  bool eval_self = false;
  eval_cmd->add_option("--manifest", eval_manifest)->required();
  eval_cmd->add_option("--horizons", horizons_arg);
  eval_cmd->add_option("--features", features_arg)->check(CLI::IsMember({"rate", "count", "both"}));
  eval_cmd->add_flag("--include-self", eval_self);
  eval_cmd->add_option("-o,--out", eval_out)->required();

  auto* compare = app.add_subcommand("compare", "Average waiting time per method and RV rate");
  ScenarioFlags cmp_flags;
  cmp_flags.add(compare);
  std::string rates_arg{"0.5,0.6,0.8"}, seeds_arg{"1,2,3,4,5"}, cmp_out;
  compare->add_option("--rates", rates_arg);
  compare->add_option("--seeds", seeds_arg);
  compare->add_option("-o,--out", cmp_out)->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen_net) {
      auto doc = generate_grid(rows, cols, length, speed);
      load_network(doc);
      std::ofstream(net_out) << doc.dump(2) << '\n';
      std::cout << "wrote " << net_out << '\n';
    } else if (*run) {
      ScenarioConfig c = run_flags.resolve();
      c.seed = seed;
      if (!metrics_out.empty()) c.metrics_csv = metrics_out;
      if (!replay_out.empty()) c.replay_log = replay_out;
      if (!summary_out.empty()) c.summary_json = summary_out;
      auto s = run_scenario(c);
      std::cout << summary_to_json(s).dump(2) << '\n';
    } else if (*gen_data) {
      ScenarioConfig c = data_flags.resolve();
      if (!data_flags.duration) c.duration = 2000;
      c.seed = data_seed;
      auto m = generate_dataset(c, runs, data_dir);
      std::cout << "wrote " << m.runs.size() << " runs to " << data_dir << '\n';
    } else if (*fit_cmd) {
      const auto manifest = load_manifest(manifest_path);
      const auto dir = fs::path(manifest_path).parent_path();
      const auto cfg = config_from_json(nlohmann::json::parse(std::ifstream(manifest_path)).at("config"));
      const auto graph = build_network(cfg);
      std::vector<FlowSeries> train;
      for (const auto& r : manifest.runs) {
        if (r.split == "train") train.push_back(read_flow_csv((dir / r.file).string(), graph));
      }
      auto model = fit(graph, train, FitOptions{include_self});
      std::ofstream(model_out) << model_to_json(model, graph).dump(2) << '\n';
      std::cout << "fitted on " << train.size() << " runs, wrote " << model_out << '\n';
    } else if (*eval_cmd) {
      const auto cfg = config_from_json(nlohmann::json::parse(std::ifstream(eval_manifest)).at("config"));
      const auto graph = build_network(cfg);
      EvalOptions opts;
      opts.horizons.clear();
      for (const auto& h : split_list(horizons_arg)) opts.horizons.push_back(std::stoi(h));
      opts.fit.include_self = eval_self;
      if (features_arg == "count") opts.features = {kVehicleCount};
      if (features_arg == "both") opts.features = {kVehicleCount, kRvRate};
      auto rows_out = eval_forecast(eval_manifest, graph, opts);
      write_forecast_table(eval_out, rows_out, "dataset=" + eval_manifest + " features=" + features_arg);
      std::cout << "wrote " << eval_out << " (" << opts.clamp_events << " clamp events)\n";
    } else if (*compare) {
      ScenarioConfig base = cmp_flags.resolve();
      std::vector<double> rates;
      for (const auto& r : split_list(rates_arg)) rates.push_back(std::stod(r));
      std::vector<std::uint64_t> seeds;
      for (const auto& s : split_list(seeds_arg)) seeds.push_back(std::stoull(s));
      auto cells = compare_baselines(comparison_configs(base, rates), seeds);
      write_comparison(cmp_out, cells, "config_hash=" + hex64(config_hash(base)) + " seeds=" + seeds_arg);
      std::cout << "wrote " << cmp_out << '\n';
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
