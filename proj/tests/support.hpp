#pragma once

// Fixtures and independent oracles shared by the unit and acceptance suites.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "mixtraffic/forecast.hpp"
#include "mixtraffic/network.hpp"
#include "mixtraffic/routing.hpp"
#include "mixtraffic/sim.hpp"

namespace fixtures {

using nlohmann::json;
using namespace mixtraffic;

inline json seg(const std::string& id, const std::string& from, const std::string& to, double length,
                double speed = 10.0, bool spawn = false, bool exit = false) {
  return {{"id", id},          {"from", from},   {"to", to},     {"length_m", length},
          {"speed_mps", speed}, {"lanes", 1},     {"spawn", spawn}, {"exit", exit}};
}

inline json conn(const std::string& from, const std::string& to, const std::string& movement = "through") {
  return {{"from", from}, {"to", to}, {"movement", movement}};
}

inline json doc(json segments, json connections) {
  return {{"format", 1}, {"segments", std::move(segments)}, {"connections", std::move(connections)}};
}

/// A -> B, 1000 m each at 10 m/s.
inline json chain_doc(double length = 1000.0) {
  return doc({seg("A", "n0", "n1", length, 10.0, true), seg("B", "n1", "n2", length, 10.0, false, true)},
             {conn("A", "B")});
}

/// S fans out to A (direct, 300 m overall) or B -> C (400 m overall), both
/// rejoining at T.
inline json diamond_doc() {
  return doc({seg("S", "n0", "n1", 50, 10, true), seg("A", "n1", "n2", 200), seg("B", "n1", "n3", 150),
              seg("C", "n3", "n2", 150), seg("T", "n2", "n4", 50, 10, false, true)},
             {conn("S", "A"), conn("S", "B", "right"), conn("B", "C", "left"), conn("A", "T"),
              conn("C", "T", "left")});
}

/// RV-only feeder F and HV-heavy feeder H meet at n1. From there a short road
/// (S1, S2) and a long road (L1, L2) reach the exit E. H may only take L1.
inline json two_road_doc() {
  return doc({seg("E", "n4", "n5", 100, 10, false, true), seg("F", "n0", "n1", 100, 10, true),
              seg("H", "n6", "n1", 100, 10, true), seg("L1", "n1", "n3", 150), seg("L2", "n3", "n4", 150),
              seg("S1", "n1", "n2", 100), seg("S2", "n2", "n4", 100)},
             {conn("F", "S1"), conn("F", "L1", "right"), conn("H", "L1", "left"), conn("S1", "S2"),
              conn("L1", "L2", "left"), conn("S2", "E"), conn("L2", "E", "right")});
}

/// Random connected-ish graph of up to `max_segments` segments over five
/// nodes with integer lengths. Every segment is a spawn so that the loader's
/// reachability rule holds regardless of the drawn connections.
inline json random_graph_doc(std::mt19937_64& rng, int max_segments = 8) {
  std::uniform_int_distribution<int> node(0, 4);
  std::uniform_int_distribution<int> len(1, 9);
  std::bernoulli_distribution coin(0.7);
  std::set<std::pair<int, int>> used;
  json segs = json::array();
  std::vector<std::array<int, 2>> ends;
  std::vector<std::string> ids;
  const int target = std::uniform_int_distribution<int>(3, max_segments)(rng);
  for (int tries = 0; static_cast<int>(ids.size()) < target && tries < 200; ++tries) {
    int a = node(rng), b = node(rng);
    if (a == b || !used.insert({a, b}).second) continue;
    const std::string id = "s" + std::to_string(ids.size());
    segs.push_back(seg(id, "v" + std::to_string(a), "v" + std::to_string(b), 10.0 * len(rng), 10, true, true));
    ids.push_back(id);
    ends.push_back({a, b});
  }
  json conns = json::array();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    for (std::size_t j = 0; j < ids.size(); ++j) {
      if (i == j || ends[i][1] != ends[j][0] || ends[j][1] == ends[i][0]) continue;
      if (coin(rng)) conns.push_back(conn(ids[i], ids[j], "through"));
    }
  }
  return doc(segs, conns);
}

/// Exhaustive simple-path search: minimal length, ties by lexicographic id
/// sequence. Lengths in the random fixtures are integers, so sums are exact.
inline std::optional<std::pair<double, std::vector<std::string>>> brute_force_shortest(const NetworkGraph& g,
                                                                                       SegmentIndex from,
                                                                                       SegmentIndex to) {
  std::optional<std::pair<double, std::vector<std::string>>> best;
  std::vector<SegmentIndex> path{from};
  std::vector<bool> on(g.size(), false);
  on[from] = true;
  std::function<void(double)> dfs = [&](double acc) {
    const SegmentIndex cur = path.back();
    if (cur == to) {
      std::vector<std::string> names;
      for (auto s : path) names.push_back(g.segment(s).id);
      if (!best || acc < best->first || (acc == best->first && names < best->second)) best.emplace(acc, names);
      return;
    }
    for (auto nx : g.successors(cur)) {
      if (on[nx]) continue;
      on[nx] = true;
      path.push_back(nx);
      dfs(acc + g.segment(nx).length);
      path.pop_back();
      on[nx] = false;
    }
  };
  dfs(g.segment(from).length);
  return best;
}

/// Builds a random mid-run state on `graph`: vehicles with shortest routes to
/// random exits, advanced a few ticks under intersection control.
inline SimState random_state(const NetworkGraph& g, std::mt19937_64& rng, const SimParams& params) {
  SimState st = make_state(g, rng());
  std::bernoulli_distribution rv(0.6);
  std::uniform_int_distribution<int> per_seg(0, 3);
  const auto& exits = g.exit_segments();
  for (SegmentIndex e = 0; e < g.size(); ++e) {
    const int k = per_seg(rng);
    std::vector<double> slots;
    for (double p = 5.0; p < g.segment(e).length - 1.0; p += 15.0) slots.push_back(p);
    std::shuffle(slots.begin(), slots.end(), rng);
    for (int i = 0; i < k && i < static_cast<int>(slots.size()); ++i) {
      std::optional<Route> route;
      if (g.segment(e).exit) {
        route = shortest_route(g, e, e);
      } else {
        for (int tries = 0; tries < 10 && !route; ++tries) {
          const auto dst = exits[std::uniform_int_distribution<std::size_t>(0, exits.size() - 1)(rng)];
          try {
            route = shortest_route(g, e, dst);
          } catch (const NetworkError&) {
          }
        }
      }
      if (!route) continue;
      insert_vehicle(st, g, rv(rng) ? VehicleKind::RV : VehicleKind::HV, *route, slots[static_cast<std::size_t>(i)],
                     0.0);
    }
  }
  const int warm = std::uniform_int_distribution<int>(0, 4)(rng);
  for (int t = 0; t < warm; ++t) step(st, g, ControlMode::IntersectionControl, heuristic_policy, params);
  return st;
}

/// Number of direction pairs inside intersection boxes that conflict.
inline int interior_conflicts(const SimState& st, const NetworkGraph& g) {
  int n = 0;
  for (std::size_t xi = 0; xi < st.junctions.size(); ++xi) {
    const auto& ids = st.junctions[xi].interior;
    for (std::size_t a = 0; a < ids.size(); ++a) {
      for (std::size_t b = a + 1; b < ids.size(); ++b) {
        n += g.intersections()[xi].conflicts(st.vehicles.at(ids[a]).interior->direction,
                                             st.vehicles.at(ids[b]).interior->direction);
      }
    }
  }
  return n;
}

/// Checks one decision round against the protocol invariants. Returns an
/// empty string when all hold, otherwise a description of the first failure.
inline std::string check_round(const DecisionRound& round, const SimState& before, const SimState& after,
                               const NetworkGraph& g) {
  std::ostringstream why;
  std::map<std::uint64_t, SegmentIndex> task_seg;
  for (const auto& t : round.tasks) task_seg[t.task_id] = t.shortage_segment;
  std::map<std::uint64_t, int> finite_per_rv, assigned_per_rv;
  for (const auto& r : round.responses) {
    if (r.finite()) finite_per_rv[r.veh_id] += 1;
  }
  for (const auto& a : round.assignments) assigned_per_rv[a.veh_id] += 1;
  for (const auto& [id, n] : finite_per_rv) {
    if (n > 1) return (why << "rv " << id << " has " << n << " finite responses", why.str());
  }
  for (const auto& [id, n] : assigned_per_rv) {
    if (n > 1) return (why << "rv " << id << " assigned " << n << " times", why.str());
  }
  for (const auto& rep : round.reports) {
    std::vector<double> assigned, unassigned;
    int count = 0;
    for (const auto& resp : round.responses) {
      if (task_seg.at(resp.task_id) != rep.segment) continue;
      const bool chosen = std::any_of(round.assignments.begin(), round.assignments.end(), [&](const Assignment& a) {
        return a.veh_id == resp.veh_id && a.shortage_segment == rep.segment;
      });
      if (chosen && !resp.finite()) return (why << "infinite responder " << resp.veh_id << " assigned", why.str());
      if (!resp.finite()) continue;
      (chosen ? assigned : unassigned).push_back(*resp.score);
    }
    for (const auto& a : round.assignments) count += a.shortage_segment == rep.segment;
    if (count > rep.deficit) return (why << "segment " << rep.segment << " over-assigned", why.str());
    if (!assigned.empty() && !unassigned.empty() &&
        *std::max_element(assigned.begin(), assigned.end()) > *std::min_element(unassigned.begin(), unassigned.end())) {
      return (why << "segment " << rep.segment << " skipped a better score", why.str());
    }
  }
  for (auto id : round.applied) {
    const auto& a = *std::find_if(round.assignments.begin(), round.assignments.end(),
                                  [&](const Assignment& x) { return x.veh_id == id; });
    const auto& v = after.vehicles.at(id);
    if (!v.pending_reroute) return (why << "applied rv " << id << " has no pending route", why.str());
    const auto& segs = v.pending_reroute->segments;
    if (std::find(segs.begin(), segs.end(), a.shortage_segment) == segs.end()) {
      return (why << "applied route of " << id << " misses the shortage segment", why.str());
    }
    if (segs.back() != before.vehicles.at(id).destination()) {
      return (why << "applied route of " << id << " changes the destination", why.str());
    }
    if (!route_is_connected(g, *v.pending_reroute) || segs.front() != v.current_segment()) {
      return (why << "applied route of " << id << " is not drivable from its position", why.str());
    }
  }
  return {};
}

/// One randomized decision round on a 3x3 grid; returns the failure text or
/// an empty string.
inline std::string random_protocol_round(const NetworkGraph& g, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  SimParams params;
  SimState st = random_state(g, rng, params);
  const SimState before = st;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<int> count(0, 10);
  RebalanceParams rp;
  rp.p_target = std::array<double, 3>{0.4, 0.5, 0.6}[rng() % 3];
  std::vector<SegmentEstimate> levels(g.size());
  std::vector<double> rates(g.size());
  for (SegmentIndex e = 0; e < g.size(); ++e) {
    levels[e].segment = e;
    levels[e].p_e = std::round(unit(rng) * 20.0) / 20.0;
    levels[e].n_e = count(rng);
    rates[e] = std::round(unit(rng) * 20.0) / 20.0;
  }
  std::uint64_t next_task = 1;
  RoutingCounters counters;
  const auto round = decision_round(st, g, levels, rates, rp, next_task, counters);
  return check_round(round, before, st, g);
}

/// Solves (A^T A) x = A^T b by Gauss-Jordan elimination in long double,
/// independent of the library's solver. A is row-major, rows x cols.
inline std::vector<double> normal_equations(const std::vector<std::vector<double>>& a, const std::vector<double>& b) {
  const std::size_t n = a.empty() ? 0 : a[0].size();
  std::vector<std::vector<long double>> m(n, std::vector<long double>(n + 1, 0.0L));
  for (std::size_t r = 0; r < a.size(); ++r) {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) m[i][j] += static_cast<long double>(a[r][i]) * a[r][j];
      m[i][n] += static_cast<long double>(a[r][i]) * b[r];
    }
  }
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t piv = c;
    for (std::size_t r = c + 1; r < n; ++r) {
      if (std::abs(m[r][c]) > std::abs(m[piv][c])) piv = r;
    }
    std::swap(m[c], m[piv]);
    for (std::size_t r = 0; r < n; ++r) {
      if (r == c) continue;
      const long double f = m[r][c] / m[c][c];
      for (std::size_t k = c; k <= n; ++k) m[r][k] -= f * m[c][k];
    }
  }
  std::vector<double> x(n);
  for (std::size_t i = 0; i < n; ++i) x[i] = static_cast<double>(m[i][n] / m[i][i]);
  return x;
}

/// Segment T fed by `k` parallel feeders (k <= 6) from three upstream nodes,
/// followed by U. Every feeder is a spawn.
inline json fan_in_doc(int k) {
  json segs = json::array(), conns = json::array();
  segs.push_back(seg("T", "hub", "mid", 100, 10));
  segs.push_back(seg("U", "mid", "end", 100, 10, false, true));
  conns.push_back(conn("T", "U"));
  for (int i = 0; i < k; ++i) {
    const std::string id = "P" + std::to_string(i);
    segs.push_back(seg(id, "u" + std::to_string(i % 3), "hub", 100, 10, true));
    conns.push_back(conn(id, "T"));
  }
  return doc(segs, conns);
}

/// Noisy flow series of `length` ticks on `g`.
inline FlowSeries random_series(const NetworkGraph& g, std::mt19937_64& rng, int length) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  FlowSeries out;
  for (int t = 0; t < length; ++t) {
    auto x = FlowMatrix::zeros(g.size(), t);
    for (SegmentIndex e = 0; e < g.size(); ++e) {
      x.values(static_cast<Eigen::Index>(e), kVehicleCount) = std::floor(unit(rng) * 20.0);
      x.values(static_cast<Eigen::Index>(e), kRvRate) = unit(rng);
    }
    out.push_back(std::move(x));
  }
  return out;
}

/// Largest deviation between a fitted model and the normal-equations oracle
/// over every (segment, feature).
inline double max_oracle_deviation(const NetworkGraph& g, const std::vector<FlowSeries>& runs,
                                   const PropagationModel& model) {
  double worst = 0.0;
  for (SegmentIndex e = 0; e < g.size(); ++e) {
    const auto& regs = model.segments[e].regressors;
    for (int f = 0; f < kFeatureCount; ++f) {
      std::vector<std::vector<double>> a;
      std::vector<double> b;
      for (const auto& run : runs) {
        for (std::size_t t = 0; t + 1 < run.size(); ++t) {
          std::vector<double> row;
          for (auto p : regs) row.push_back(run[t].values(static_cast<Eigen::Index>(p), f));
          row.push_back(1.0);
          a.push_back(row);
          b.push_back(run[t + 1].values(static_cast<Eigen::Index>(e), f));
        }
      }
      const auto x = normal_equations(a, b);
      for (std::size_t i = 0; i < regs.size(); ++i) {
        worst = std::max(worst, std::abs(x[i] - model.segments[e].alpha[f](static_cast<Eigen::Index>(i))));
      }
      worst = std::max(worst, std::abs(x.back() - model.segments[e].intercept[f]));
    }
  }
  return worst;
}

}  // namespace fixtures
