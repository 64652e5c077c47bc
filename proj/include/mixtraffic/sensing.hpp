#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "json.hpp"
#include "mixtraffic/network.hpp"
#include "mixtraffic/sim.hpp"

namespace mixtraffic {

/// What an RV reports to the coordinator: two counts and their ratio. The
/// observed vehicles themselves never leave the reporter.
struct LocalObservation {
  std::uint64_t reporter_rv_id{};
  SegmentIndex segment{};
  int observed_total{0};
  int observed_rv{0};
  double p_v{0.0};
  std::int64_t tick{0};
};

struct SegmentEstimate {
  SegmentIndex segment{};
  double p_e{0.0};
  double n_e{0.0};
  int rv_count{0};
  std::int64_t tick{0};
  bool stale{true};
};

/// Counts every vehicle (the reporter included) on the reporter's segment
/// within `radius` meters along the segment.
LocalObservation sense_local(const SimState& state, const NetworkGraph& graph, std::uint64_t rv, double radius = 30.0);

/// Coordinator-side fusion of one segment's reports. Empty input yields no
/// estimate; reports from different segments or ticks are rejected.
std::optional<SegmentEstimate> aggregate(std::span<const LocalObservation> observations);

/// Coordinator's per-segment view, indexed by segment.
struct EstimateTable {
  std::vector<SegmentEstimate> rows;
  std::vector<std::int64_t> last_fresh;
  std::vector<double> prior;

  static EstimateTable with_priors(std::vector<double> priors);
};

void snapshot(EstimateTable& table, const std::vector<SegmentEstimate>& fresh, std::int64_t tick, int staleness_limit);

/// Prior RV rate per segment: rv_probability of the nearest upstream spawn spec
/// (fewest hops, then smallest segment id); `fallback` when none reaches it.
std::vector<double> spawn_priors(const NetworkGraph& graph, const std::vector<SpawnSpec>& specs, double fallback);

nlohmann::json to_json(const LocalObservation& obs, const NetworkGraph& graph);
LocalObservation local_observation_from_json(const nlohmann::json& j, const NetworkGraph& graph);

}  // namespace mixtraffic
