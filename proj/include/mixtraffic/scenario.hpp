#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "mixtraffic/forecast.hpp"
#include "mixtraffic/network.hpp"
#include "mixtraffic/routing.hpp"
#include "mixtraffic/sim.hpp"

namespace mixtraffic {

class ConfigError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

struct GridSpec {
  int rows{4};
  int cols{4};
  double length_m{100.0};
  double speed_mps{13.89};
};

struct SpawnConfig {
  std::string segment_id;
  double rate{0.0};  // arrival probability per tick
  double rv_probability{0.0};
  std::vector<std::pair<std::string, double>> destinations;
};

enum class RouterMode { Shortest, Rebalance };
std::string to_string(RouterMode m);
RouterMode router_mode_from_string(const std::string& s);

struct ScenarioConfig {
  std::string name{"custom"};
  std::string network_file;  // empty: generate `grid`
  GridSpec grid;
  std::int64_t duration{900};
  std::uint64_t seed{0};
  ControlMode control{ControlMode::IntersectionControl};
  RouterMode router{RouterMode::Shortest};
  std::vector<SpawnConfig> spawns;
  RebalanceParams rebalance;
  int cadence{100};
  int horizon{100};
  int staleness_limit{50};
  double sensing_radius{30.0};
  std::string model_file;
  int signal_green{10};
  int signal_all_red{3};
  SimParams sim;

  // Outputs; excluded from the config hash.
  std::string metrics_csv;
  std::string replay_log;
  std::string summary_json;
};

nlohmann::json config_to_json(const ScenarioConfig& c, bool include_outputs = true);
ScenarioConfig config_from_json(const nlohmann::json& j);
ScenarioConfig load_config_file(const std::string& path);
std::uint64_t config_hash(const ScenarioConfig& c);

NetworkGraph build_network(const ScenarioConfig& c);
/// Resolves ids and checks ranges; throws ConfigError.
std::vector<SpawnSpec> resolve_spawns(const ScenarioConfig& c, const NetworkGraph& graph);

/// Names: morning-rush, evening-rush, late-evening.
ScenarioConfig bundled_scenario(const std::string& name);
std::vector<std::string> bundled_scenario_names();

/// Scales the ordinary spawn points to `rv_rate` + 0.05 and sets the target to
/// `rv_rate`; low-RV points keep their probability.
ScenarioConfig with_rv_rate(ScenarioConfig c, double rv_rate);

struct RunSummary {
  std::string metrics_path;
  std::optional<double> shortage_index;
  std::optional<double> avg_waiting_time;
  /// Over departed vehicles only.
  std::optional<double> departed_wait_hv;
  std::optional<double> departed_wait_rv;
  std::uint64_t spawned{0};
  std::uint64_t departed{0};
  std::uint64_t deferred_spawns{0};
  std::uint64_t clamp_events{0};
  RoutingCounters routing;
  std::uint64_t conflict_flags{0};
  std::uint64_t decisions{0};
  std::uint64_t max_concurrent{0};
  double wall_seconds{0.0};
  std::uint64_t config_hash{0};
  std::uint64_t seed{0};
};

nlohmann::json summary_to_json(const RunSummary& s);

/// Per-segment RV share over a window, weighted by vehicle-ticks.
struct ShortageAccumulator {
  std::vector<double> total;
  std::vector<double> rv;

  explicit ShortageAccumulator(std::size_t segments = 0) : total(segments, 0.0), rv(segments, 0.0) {}
  void add(const std::vector<SegmentCount>& counts);
  /// Mean shortage index over segments that have predecessors and carried
  /// traffic; nullopt if none did.
  std::optional<double> network_average(const NetworkGraph& graph, double p_target) const;
};

/// Ground-truth flow matrix: vehicle count and RV share (0 on empty segments).
FlowMatrix flow_from_counts(const std::vector<SegmentCount>& counts, std::int64_t tick);

/// Optional attachments to a run.
struct RunHooks {
  const PropagationModel* model{nullptr};
  /// Receives the ground-truth flow matrix after every tick.
  FlowSeries* record{nullptr};
  /// Called after every step with the post-step state.
  std::function<void(const SimState&)> on_tick;
};

RunSummary run_scenario(const ScenarioConfig& config);
RunSummary run_scenario(const ScenarioConfig& config, const NetworkGraph& graph, const RunHooks& hooks = {});

struct DatasetRun {
  std::string file;
  std::uint64_t seed{};
  std::string split;  // train, eval, validation
};

struct DatasetManifest {
  std::string config_hash;
  std::string graph_hash;
  std::vector<DatasetRun> runs;
};

/// Split counts (train, eval, validation) for `runs` whole runs.
std::array<int, 3> split_counts(int runs);

DatasetManifest generate_dataset(const ScenarioConfig& config, int runs, const std::string& out_dir);
DatasetManifest load_manifest(const std::string& path);

struct ForecastTableRow {
  int horizon{};
  ErrorMetrics constant, ar, propagation;
};

struct EvalOptions {
  std::vector<int> horizons{10, 50, 100};
  FitOptions fit;
  /// Features pooled into the metrics.
  std::vector<int> features{kRvRate};
  std::uint64_t clamp_events{0};
};

std::vector<ForecastTableRow> eval_forecast(const NetworkGraph& graph, const std::vector<FlowSeries>& train,
                                            const std::vector<FlowSeries>& eval, EvalOptions& options);
std::vector<ForecastTableRow> eval_forecast(const std::string& manifest_path, const NetworkGraph& graph,
                                            EvalOptions& options);
void write_forecast_table(const std::string& path, const std::vector<ForecastTableRow>& rows,
                          const std::string& comment = {});

struct ComparisonCell {
  std::string method;  // notl, tl, control, full
  double rv_rate{};
  std::optional<double> avg_waiting_time;
  std::vector<double> per_seed;
};

/// Method x rate grid over a common base. Configs that differ in anything
/// other than control, router, target and spawn RV shares are rejected.
std::vector<ScenarioConfig> comparison_configs(const ScenarioConfig& base, const std::vector<double>& rates);
std::vector<ComparisonCell> compare_baselines(const std::vector<ScenarioConfig>& configs,
                                              const std::vector<std::uint64_t>& seeds);
void write_comparison(const std::string& path, const std::vector<ComparisonCell>& cells, const std::string& comment);

}  // namespace mixtraffic
