#include "mixtraffic/routing.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

namespace mixtraffic {

namespace {
constexpr double kRateEps = 1e-12;

/// Pending reroute not yet executed, or executed but target still ahead.
bool committed(const Vehicle& v) {
  if (v.pending_reroute) return true;
  if (!v.reroute_target) return false;
  const auto& segs = v.route.segments;
  return std::find(segs.begin() + static_cast<std::ptrdiff_t>(v.route_index) + 1, segs.end(), *v.reroute_target) !=
         segs.end();
}
}  // namespace

int shortage_deficit(double p_e, double n_e, double p_target) {
  const double x = (p_target - p_e) * n_e;
  return static_cast<int>(std::ceil(x - 1e-9 * std::max(1.0, std::abs(x))));
}

std::vector<ShortageReport> detect_shortage(const std::vector<SegmentEstimate>& levels, const RebalanceParams& params,
                                            std::int64_t tick) {
  if (!(params.p_target > 0.0 && params.p_target < 1.0)) throw std::invalid_argument("p_target must be in (0,1)");
  if (!(params.lambda >= 0.0 && params.lambda < params.p_target)) {
    throw std::invalid_argument("lambda must be in [0, p_target)");
  }
  std::vector<ShortageReport> out;
  for (const auto& l : levels) {
    if (!(l.n_e > 0.0)) continue;
    if (!(l.p_e < params.p_target - params.lambda - kRateEps)) continue;
    const int d = shortage_deficit(l.p_e, l.n_e, params.p_target);
    if (d < 1) continue;
    out.push_back({l.segment, l.p_e, l.n_e, d, tick});
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.segment < b.segment; });
  return out;
}

std::vector<RerouteTask> issue_tasks(const std::vector<ShortageReport>& reports, const NetworkGraph& graph,
                                     const std::vector<double>& rates, const SimState& state,
                                     const RebalanceParams& params, std::uint64_t& next_task_id,
                                     std::vector<SegmentIndex>* unserviceable) {
  std::vector<RerouteTask> tasks;
  std::set<std::pair<std::uint64_t, SegmentIndex>> seen;
  for (const auto& r : reports) {
    bool any = false;
    for (auto p : graph.predecessors(r.segment)) {
      if (!(rates.at(p) > params.p_target)) continue;
      any = true;
      std::vector<std::uint64_t> rvs;
      for (auto id : state.occupancy.at(p)) {
        const auto& v = state.vehicles.at(id);
        if (v.is_rv() && !committed(v)) rvs.push_back(id);
      }
      std::sort(rvs.begin(), rvs.end());
      for (auto id : rvs) {
        if (!seen.emplace(id, r.segment).second) continue;
        tasks.push_back({next_task_id++, r.segment, id, r.tick});
      }
    }
    if (!any && unserviceable) unserviceable->push_back(r.segment);
  }
  return tasks;
}

double score_route(const NetworkGraph& graph, double position, const Route& new_route, const Route& curr_route,
                   SegmentIndex shortage_segment) {
  const auto& segs = new_route.segments;
  auto it = std::find(segs.begin() + (segs.size() > 1 ? 1 : 0), segs.end(), shortage_segment);
  if (it == segs.end()) throw std::invalid_argument("new route misses the shortage segment");
  double dis = graph.segment(segs.front()).length - position;
  for (auto s = segs.begin() + 1; s < it; ++s) dis += graph.segment(*s).length;
  const double len_new = route_length(graph, segs) - position;
  const double len_curr = route_length(graph, curr_route.segments) - position;
  return dis + len_new - len_curr;
}

Route remaining_route(const NetworkGraph& graph, const Vehicle& rv) {
  Route r;
  r.segments.assign(rv.route.segments.begin() + static_cast<std::ptrdiff_t>(rv.route_index), rv.route.segments.end());
  r.total_length = route_length(graph, r.segments);
  return r;
}

PlanResult plan_routes(const Vehicle& rv, const std::vector<RerouteTask>& tasks, const NetworkGraph& graph) {
  PlanResult out;
  const Route curr = remaining_route(graph, rv);
  std::optional<std::size_t> best;
  std::vector<Route> routes(tasks.size());
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    const auto& t = tasks[i];
    if (t.veh_id != rv.id) throw std::invalid_argument("task addressed to another vehicle");
    RouteResponse resp{t.task_id, rv.id, std::nullopt};
    // Already past the start of the vehicle's own segment.
    if (t.shortage_segment == rv.current_segment()) {
      out.responses.push_back(resp);
      continue;
    }
    try {
      routes[i] = shortest_route_via(graph, rv.current_segment(), t.shortage_segment, rv.destination());
      resp.score = score_route(graph, rv.position, routes[i], curr, t.shortage_segment);
    } catch (const NetworkError&) {
      resp.score.reset();
    }
    out.responses.push_back(resp);
    if (!resp.finite()) continue;
    if (!best) {
      best = i;
      continue;
    }
    const auto& b = out.responses[*best];
    if (*resp.score < *b.score || (*resp.score == *b.score && resp.task_id < b.task_id)) best = i;
  }
  for (std::size_t i = 0; i < out.responses.size(); ++i) {
    if (!best || i != *best) out.responses[i].score.reset();
  }
  if (best) out.plan = LocalPlan{tasks[*best].shortage_segment, routes[*best]};
  return out;
}

std::vector<Assignment> select_routes(std::vector<RouteResponse> responses, int deficit,
                                      SegmentIndex shortage_segment) {
  std::erase_if(responses, [](const RouteResponse& r) { return !r.finite(); });
  std::sort(responses.begin(), responses.end(), [](const RouteResponse& a, const RouteResponse& b) {
    if (*a.score != *b.score) return *a.score < *b.score;
    return a.veh_id < b.veh_id;
  });
  std::vector<Assignment> out;
  const auto n = std::min<std::size_t>(static_cast<std::size_t>(std::max(deficit, 0)), responses.size());
  for (std::size_t i = 0; i < n; ++i) out.push_back({responses[i].veh_id, kChangeRoute, shortage_segment});
  return out;
}

bool apply_assignment(SimState& state, const NetworkGraph& graph, const Assignment& assignment,
                      const std::map<std::uint64_t, LocalPlan>& local_plans, RoutingCounters& counters) {
  auto expire = [&] {
    counters.expired += 1;
    return false;
  };
  auto it = state.vehicles.find(assignment.veh_id);
  auto plan = local_plans.find(assignment.veh_id);
  if (it == state.vehicles.end() || plan == local_plans.end()) return expire();
  auto& v = it->second;
  if (plan->second.shortage_segment != assignment.shortage_segment) return expire();
  if (v.interior || v.current_segment() != plan->second.route.segments.front()) return expire();
  if (auto xi = graph.intersection_at_end(v.current_segment())) {
    for (const auto& r : state.junctions[*xi].reservations) {
      if (r.vehicle == v.id) return expire();
    }
  }
  v.pending_reroute = plan->second.route;
  v.reroute_target = plan->second.shortage_segment;
  counters.applied += 1;
  return true;
}

double shortage_index(double p_e, double p_target) { return p_e > p_target ? 0.0 : p_target - p_e; }

DecisionRound decision_round(SimState& state, const NetworkGraph& graph, const std::vector<SegmentEstimate>& levels,
                             const std::vector<double>& rates, const RebalanceParams& params,
                             std::uint64_t& next_task_id, RoutingCounters& counters) {
  DecisionRound round;
  round.tick = state.tick;
  counters.rounds += 1;
  round.reports = detect_shortage(levels, params, state.tick);
  counters.reports += round.reports.size();
  std::vector<SegmentIndex> unserviceable;
  round.tasks = issue_tasks(round.reports, graph, rates, state, params, next_task_id, &unserviceable);
  counters.tasks += round.tasks.size();
  counters.unserviceable += unserviceable.size();

  // RV side: each vehicle plans privately over its own tasks.
  std::map<std::uint64_t, std::vector<RerouteTask>> by_rv;
  for (const auto& t : round.tasks) by_rv[t.veh_id].push_back(t);
  std::map<std::uint64_t, LocalPlan> local_plans;
  std::map<std::uint64_t, SegmentIndex> task_segment;
  for (const auto& t : round.tasks) task_segment[t.task_id] = t.shortage_segment;
  for (const auto& [id, tasks] : by_rv) {
    PlanResult pr = plan_routes(state.vehicles.at(id), tasks, graph);
    round.responses.insert(round.responses.end(), pr.responses.begin(), pr.responses.end());
    if (pr.plan) local_plans.emplace(id, std::move(*pr.plan));
  }

  // Coordinator side: per shortage segment, only ids and scores.
  std::set<std::uint64_t> assigned;
  for (const auto& r : round.reports) {
    std::vector<RouteResponse> mine;
    for (const auto& resp : round.responses) {
      if (task_segment.at(resp.task_id) == r.segment) mine.push_back(resp);
    }
    auto chosen = select_routes(std::move(mine), r.deficit, r.segment);
    if (static_cast<int>(chosen.size()) < r.deficit) counters.shortfall += static_cast<std::uint64_t>(r.deficit) - chosen.size();
    for (auto& a : chosen) {
      if (!assigned.insert(a.veh_id).second) throw std::logic_error("vehicle assigned twice in one round");
      round.assignments.push_back(std::move(a));
    }
  }
  counters.assignments += round.assignments.size();

  for (const auto& a : round.assignments) {
    if (apply_assignment(state, graph, a, local_plans, counters)) round.applied.push_back(a.veh_id);
  }
  return round;
}

nlohmann::json to_json(const ShortageReport& r, const NetworkGraph& graph) {
  return {{"segment_id", graph.segment(r.segment).id},
          {"p_e", r.p_e},
          {"n_e", r.n_e},
          {"deficit", r.deficit},
          {"tick", r.tick}};
}

nlohmann::json to_json(const RerouteTask& t, const NetworkGraph& graph) {
  return {{"task_id", t.task_id},
          {"shortage_segment_id", graph.segment(t.shortage_segment).id},
          {"veh_id", t.veh_id},
          {"tick", t.tick}};
}

nlohmann::json to_json(const RouteResponse& r) {
  nlohmann::json score = r.score ? nlohmann::json(*r.score) : nlohmann::json("inf");
  return {{"task_id", r.task_id}, {"veh_id", r.veh_id}, {"score", score}};
}

nlohmann::json to_json(const Assignment& a, const NetworkGraph& graph) {
  return {{"veh_id", a.veh_id}, {"message", a.message}, {"shortage_segment_id", graph.segment(a.shortage_segment).id}};
}

RouteResponse route_response_from_json(const nlohmann::json& j) {
  RouteResponse r;
  r.task_id = j.at("task_id").get<std::uint64_t>();
  r.veh_id = j.at("veh_id").get<std::uint64_t>();
  const auto& s = j.at("score");
  if (s.is_string()) {
    if (s.get<std::string>() != "inf") throw std::invalid_argument("unknown score tag");
  } else {
    r.score = s.get<double>();
  }
  return r;
}

}  // namespace mixtraffic
