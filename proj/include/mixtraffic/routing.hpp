#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <vector>

#include "json.hpp"
#include "mixtraffic/network.hpp"
#include "mixtraffic/sensing.hpp"
#include "mixtraffic/sim.hpp"

namespace mixtraffic {

struct RebalanceParams {
  double p_target{0.5};
  double lambda{0.05};
};

struct ShortageReport {
  SegmentIndex segment{};
  double p_e{0.0};
  double n_e{0.0};
  int deficit{0};
  std::int64_t tick{0};
};

struct RerouteTask {
  std::uint64_t task_id{};
  SegmentIndex shortage_segment{};
  std::uint64_t veh_id{};
  std::int64_t tick{0};
};

/// Score in meters; nullopt is the infinite sentinel.
struct RouteResponse {
  std::uint64_t task_id{};
  std::uint64_t veh_id{};
  std::optional<double> score;

  bool finite() const { return score.has_value(); }
};

inline constexpr const char* kChangeRoute = "change_route";

struct Assignment {
  std::uint64_t veh_id{};
  std::string message{kChangeRoute};
  SegmentIndex shortage_segment{};
};

/// Routes an RV planned for its finite-score response. Lives on the RV side
/// and never crosses to the coordinator.
struct LocalPlan {
  SegmentIndex shortage_segment{};
  Route route;
};

struct PlanResult {
  std::vector<RouteResponse> responses;
  std::optional<LocalPlan> plan;
};

/// Deficit ceil((p_target - p_e) * n_e), tolerant to rounding noise at integers.
int shortage_deficit(double p_e, double n_e, double p_target);

std::vector<ShortageReport> detect_shortage(const std::vector<SegmentEstimate>& levels, const RebalanceParams& params,
                                            std::int64_t tick);

/// `rates` is the coordinator's current RV-rate view per segment. Task ids are
/// drawn from `next_task_id` in (shortage segment, predecessor, RV id) order.
std::vector<RerouteTask> issue_tasks(const std::vector<ShortageReport>& reports, const NetworkGraph& graph,
                                     const std::vector<double>& rates, const SimState& state,
                                     const RebalanceParams& params, std::uint64_t& next_task_id,
                                     std::vector<SegmentIndex>* unserviceable = nullptr);

/// Along-route distance from `position` on the first segment to the start of
/// the shortage segment, plus the remaining-length increase of `new_route`.
double score_route(const NetworkGraph& graph, double position, const Route& new_route, const Route& curr_route,
                   SegmentIndex shortage_segment);

/// Route still ahead of the vehicle, starting at its current segment.
Route remaining_route(const NetworkGraph& graph, const Vehicle& rv);

PlanResult plan_routes(const Vehicle& rv, const std::vector<RerouteTask>& tasks, const NetworkGraph& graph);

std::vector<Assignment> select_routes(std::vector<RouteResponse> responses, int deficit,
                                      SegmentIndex shortage_segment);

struct RoutingCounters {
  std::uint64_t rounds{0};
  std::uint64_t reports{0};
  std::uint64_t tasks{0};
  std::uint64_t assignments{0};
  std::uint64_t applied{0};
  std::uint64_t expired{0};
  std::uint64_t shortfall{0};
  std::uint64_t unserviceable{0};
};

/// Returns false (and counts an expiry) when the vehicle is gone, already
/// committed to its next movement, or no longer where it planned from.
bool apply_assignment(SimState& state, const NetworkGraph& graph, const Assignment& assignment,
                      const std::map<std::uint64_t, LocalPlan>& local_plans, RoutingCounters& counters);

double shortage_index(double p_e, double p_target);

/// Everything exchanged in one coordinator round, for logging and tests.
struct DecisionRound {
  std::int64_t tick{0};
  std::vector<ShortageReport> reports;
  std::vector<RerouteTask> tasks;
  std::vector<RouteResponse> responses;
  std::vector<Assignment> assignments;
  std::vector<std::uint64_t> applied;
};

/// detect -> issue -> plan (per RV) -> select (per shortage segment) -> apply.
DecisionRound decision_round(SimState& state, const NetworkGraph& graph, const std::vector<SegmentEstimate>& levels,
                             const std::vector<double>& rates, const RebalanceParams& params,
                             std::uint64_t& next_task_id, RoutingCounters& counters);

nlohmann::json to_json(const ShortageReport& r, const NetworkGraph& graph);
nlohmann::json to_json(const RerouteTask& t, const NetworkGraph& graph);
nlohmann::json to_json(const RouteResponse& r);
nlohmann::json to_json(const Assignment& a, const NetworkGraph& graph);
RouteResponse route_response_from_json(const nlohmann::json& j);

}  // namespace mixtraffic
