#include "mixtraffic/sim.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

namespace mixtraffic {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kSpacingEps = 1e-6;

// Largest speed for this step from which the follower can still stop behind
// a leader braking at the same rate.
double safe_speed(double gap, double leader_speed, double decel) {
  if (gap <= 0.0) return 0.0;
  return -decel + std::sqrt(decel * decel + 2.0 * decel * gap + leader_speed * leader_speed);
}

double braking_distance(double v, double decel) {
  double d = 0.0;
  for (double u = v - decel; u > 0.0; u -= decel) d += u;
  return d;
}

const Route& cached_route(SimState& s, const NetworkGraph& g, SegmentIndex from, SegmentIndex to) {
  auto key = std::make_pair(from, to);
  auto it = s.route_cache.find(key);
  if (it == s.route_cache.end()) it = s.route_cache.emplace(key, shortest_route(g, from, to)).first;
  return it->second;
}

struct PendingDecision {
  std::uint64_t vehicle;
  std::size_t intersection;
  std::size_t direction;
  Action action;
  bool conflicted;
};

std::string dump_segment(const SimState& s, const NetworkGraph& g, SegmentIndex a) {
  std::ostringstream os;
  os << "tick " << s.tick << " segment " << g.segment(a).id << ":";
  for (auto id : s.occupancy[a]) {
    const auto& v = s.vehicles.at(id);
    os << " [veh " << id << " x=" << v.position << " v=" << v.speed << "]";
  }
  return os.str();
}

}  // namespace

std::string to_string(ControlMode m) {
  switch (m) {
    case ControlMode::NoTL: return "notl";
    case ControlMode::TL: return "tl";
    case ControlMode::IntersectionControl: return "control";
  }
  return "control";
}

ControlMode control_mode_from_string(const std::string& s) {
  if (s == "notl" || s == "NoTL") return ControlMode::NoTL;
  if (s == "tl" || s == "TL") return ControlMode::TL;
  if (s == "control" || s == "IntersectionControl") return ControlMode::IntersectionControl;
  throw std::invalid_argument("unknown control mode '" + s + "'");
}

std::optional<SegmentIndex> Vehicle::next_segment() const {
  if (pending_reroute && !interior && !pending_reroute->segments.empty() &&
      pending_reroute->segments.front() == current_segment()) {
    if (pending_reroute->segments.size() < 2) return std::nullopt;
    return pending_reroute->segments[1];
  }
  if (route_index + 1 >= route.segments.size()) return std::nullopt;
  return route.segments[route_index + 1];
}

SimState make_state(const NetworkGraph& graph, std::uint64_t seed) {
  SimState s;
  s.occupancy.assign(graph.size(), {});
  s.junctions.assign(graph.intersections().size(), {});
  s.spawn_rng = Rng(seed, kSpawnStream);
  return s;
}

std::vector<double> Observation::flatten() const {
  std::vector<double> out;
  for (std::size_t j = 0; j < queue_lengths.size(); ++j) {
    out.push_back(queue_lengths[j]);
    out.push_back(avg_waits[j]);
  }
  for (const auto& m : occupancy_maps) {
    for (auto b : m) out.push_back(b);
  }
  out.push_back(ego_distance);
  return out;
}

double normalize_wait(double wait, double tau_norm) {
  if (wait <= 0.0) return 0.0;
  return wait / (wait + tau_norm);
}

std::vector<DirectionQueue> direction_queues(const SimState& state, const NetworkGraph& graph,
                                             std::size_t intersection, const SimParams& params) {
  const auto& x = graph.intersections().at(intersection);
  std::vector<DirectionQueue> q(x.direction_count());
  std::vector<double> sums(x.direction_count(), 0.0);
  // Single-lane approaches: everything queued behind the head moves in the
  // head's direction first.
  for (auto a : x.incoming) {
    const auto& occ = state.occupancy[a];
    if (occ.empty()) continue;
    const auto& head = state.vehicles.at(occ.front());
    auto next = head.next_segment();
    if (!next) continue;
    const std::size_t j = graph.direction_of(a, *next);
    const double len = graph.segment(a).length;
    for (auto id : occ) {
      const auto& v = state.vehicles.at(id);
      if (len - v.position > params.zone_radius) break;
      q[j].count += 1;
      sums[j] += v.waiting_time;
    }
  }
  for (std::size_t j = 0; j < q.size(); ++j) {
    if (q[j].count > 0) q[j].mean_wait = sums[j] / q[j].count;
  }
  return q;
}

Observation encode_observation(const SimState& state, const NetworkGraph& graph, std::uint64_t rv,
                               std::size_t intersection, const SimParams& params) {
  const auto& v = state.vehicles.at(rv);
  if (v.interior) throw std::invalid_argument("vehicle is inside the intersection");
  const SegmentIndex a = v.current_segment();
  if (graph.intersection_at_end(a) != intersection) {
    throw std::invalid_argument("vehicle is not approaching this intersection");
  }
  const double dist = graph.segment(a).length - v.position;
  if (dist > params.zone_radius + 1e-9) throw std::invalid_argument("vehicle outside the coordination zone");
  auto next = v.next_segment();
  if (!next) throw std::invalid_argument("vehicle leaves the network before the intersection");

  const auto& x = graph.intersections()[intersection];
  const std::size_t J = x.direction_count();
  const int res = params.grid_resolution;
  Observation obs;
  auto queues = direction_queues(state, graph, intersection, params);
  obs.queue_lengths.resize(J);
  obs.avg_waits.resize(J);
  for (std::size_t j = 0; j < J; ++j) {
    obs.queue_lengths[j] = queues[j].count;
    obs.avg_waits[j] = normalize_wait(queues[j].mean_wait, params.tau_norm);
  }
  obs.occupancy_maps.assign(J, std::vector<std::uint8_t>(static_cast<std::size_t>(res * res), 0));
  for (auto id : state.junctions[intersection].interior) {
    const auto& u = state.vehicles.at(id);
    const auto& st = *u.interior;
    const auto& path = graph.path_of(u.current_segment(), st.to);
    const double f = std::clamp(st.progress / st.length, 0.0, 1.0);
    const double px = path.x0 + f * (path.x1 - path.x0);
    const double py = path.y0 + f * (path.y1 - path.y0);
    const int col = std::min(res - 1, static_cast<int>(std::floor(px * res)));
    const int row = std::min(res - 1, static_cast<int>(std::floor((1.0 - py) * res)));
    obs.occupancy_maps[st.direction][static_cast<std::size_t>(row * res + col)] = 1;
  }
  obs.ego_distance = dist;
  obs.ego_direction = graph.direction_of(a, *next);
  obs.ego_is_head = state.occupancy[a].front() == rv;
  return obs;
}

RewardBreakdown compute_reward(double next_wait_normalized, Action action, bool conflicted, const SimParams& params) {
  RewardBreakdown r;
  const double local = action == Action::Stop ? -next_wait_normalized : next_wait_normalized;
  r.local = params.lambda_local * local;
  r.conflict_penalty = conflicted ? -params.conflict_penalty : 0.0;
  r.total = r.local + r.conflict_penalty;
  return r;
}

RewardBreakdown compute_reward(const SimState& state_after, const NetworkGraph& graph, std::size_t intersection,
                               std::size_t direction, Action action, bool conflicted, const SimParams& params) {
  auto queues = direction_queues(state_after, graph, intersection, params);
  const double w = normalize_wait(queues.at(direction).mean_wait, params.tau_norm);
  return compute_reward(w, action, conflicted, params);
}

Action heuristic_policy(const Observation& obs) {
  if (!obs.ego_is_head) return Action::Stop;
  std::optional<std::size_t> best;
  for (std::size_t j = 0; j < obs.queue_lengths.size(); ++j) {
    if (obs.queue_lengths[j] <= 0.0 && j != obs.ego_direction) continue;
    if (!best || std::make_pair(obs.avg_waits[j], obs.queue_lengths[j]) >
                     std::make_pair(obs.avg_waits[*best], obs.queue_lengths[*best])) {
      best = j;
    }
  }
  return best == obs.ego_direction ? Action::Go : Action::Stop;
}

Arbitration arbitrate(std::vector<GoRequest> requests, const Intersection& intersection,
                      const std::vector<std::size_t>& busy) {
  std::sort(requests.begin(), requests.end(), [](const GoRequest& a, const GoRequest& b) {
    if (a.wait != b.wait) return a.wait > b.wait;
    if (a.queue != b.queue) return a.queue > b.queue;
    if (a.direction != b.direction) return a.direction < b.direction;
    return a.vehicle < b.vehicle;
  });
  Arbitration out;
  std::vector<std::size_t> taken = busy;
  bool open = true;
  for (const auto& r : requests) {
    if (open) {
      bool clash = std::any_of(taken.begin(), taken.end(),
                               [&](std::size_t d) { return intersection.conflicts(d, r.direction); });
      if (!clash) {
        out.granted.push_back(r.vehicle);
        taken.push_back(r.direction);
        continue;
      }
      open = false;
    }
    out.downgraded.push_back(r.vehicle);
  }
  return out;
}

int SignalPlan::cycle_length() const {
  return std::accumulate(green.begin(), green.end(), 0) + static_cast<int>(phases.size()) * all_red;
}

SignalPlan default_signal_plan(const Intersection& intersection, int green, int all_red) {
  // Split phasing: approaches are single-lane, so an approach's movements
  // share a phase. Approaches whose movements are mutually compatible share too.
  SignalPlan plan;
  plan.all_red = all_red;
  for (auto a : intersection.incoming) {
    std::vector<std::size_t> group;
    for (std::size_t j = 0; j < intersection.direction_count(); ++j) {
      if (intersection.directions[j].approach == a) group.push_back(j);
    }
    if (group.empty()) continue;
    auto fits = [&](const std::vector<std::size_t>& phase) {
      for (auto j : group) {
        for (auto k : phase) {
          if (intersection.conflicts(j, k)) return false;
        }
      }
      return true;
    };
    auto it = std::find_if(plan.phases.begin(), plan.phases.end(), fits);
    if (it == plan.phases.end()) {
      plan.phases.push_back(group);
    } else {
      it->insert(it->end(), group.begin(), group.end());
    }
  }
  for (auto& phase : plan.phases) std::sort(phase.begin(), phase.end());
  plan.green.assign(plan.phases.size(), green);
  return plan;
}

void validate_signal_plan(const Intersection& intersection, const SignalPlan& plan) {
  if (plan.green.size() != plan.phases.size()) throw std::invalid_argument("signal plan: one green time per phase");
  if (plan.all_red < 0) throw std::invalid_argument("signal plan: negative all-red interval");
  std::vector<int> seen(intersection.direction_count(), 0);
  for (std::size_t k = 0; k < plan.phases.size(); ++k) {
    if (plan.green[k] <= 0) throw std::invalid_argument("signal plan: non-positive green time");
    const auto& phase = plan.phases[k];
    for (auto a : phase) {
      if (a >= seen.size()) throw std::invalid_argument("signal plan: unknown direction");
      seen[a] += 1;
      for (auto b : phase) {
        if (intersection.conflicts(a, b)) {
          throw std::invalid_argument("signal plan at " + intersection.node + ": phase " + std::to_string(k) +
                                      " contains conflicting directions");
        }
      }
    }
  }
  for (int c : seen) {
    if (c != 1) throw std::invalid_argument("signal plan at " + intersection.node + ": phases must partition directions");
  }
}

std::vector<std::size_t> fixed_time_signal(const Intersection&, std::int64_t tick, const SignalPlan& plan) {
  const int cycle = plan.cycle_length();
  if (cycle <= 0) return {};
  std::int64_t t = ((tick % cycle) + cycle) % cycle;
  for (std::size_t k = 0; k < plan.phases.size(); ++k) {
    if (t < plan.green[k]) return plan.phases[k];
    t -= plan.green[k];
    if (t < plan.all_red) return {};
    t -= plan.all_red;
  }
  return {};
}

void spawn(SimState& s, const NetworkGraph& g, const std::vector<SpawnSpec>& specs, const SimParams& p) {
  if (s.spawn_backlog.size() != specs.size()) s.spawn_backlog.assign(specs.size(), 0);
  for (std::size_t k = 0; k < specs.size(); ++k) {
    const auto& spec = specs[k];
    const bool arrived = s.spawn_rng.uniform() < spec.rate;
    if (arrived) s.spawn_backlog[k] += 1;
    if (s.spawn_backlog[k] == 0) continue;
    auto& occ = s.occupancy[spec.segment];
    const bool clear =
        occ.empty() || s.vehicles.at(occ.back()).position - p.vehicle_length - p.min_gap >= 0.0;
    if (clear) {
      Vehicle v;
      v.id = s.next_vehicle_id++;
      v.kind = s.spawn_rng.uniform() < spec.rv_probability ? VehicleKind::RV : VehicleKind::HV;
      SegmentIndex dest;
      if (spec.destinations.empty()) {
        const auto& exits = g.exit_segments();
        if (exits.empty()) throw std::invalid_argument("network has no exit segments");
        auto pick = static_cast<std::size_t>(s.spawn_rng.uniform() * static_cast<double>(exits.size()));
        dest = exits[std::min(pick, exits.size() - 1)];
      } else {
        double total = 0.0;
        for (const auto& [seg, w] : spec.destinations) total += w;
        double u = s.spawn_rng.uniform() * total;
        dest = spec.destinations.back().first;
        for (const auto& [seg, w] : spec.destinations) {
          if (u < w) {
            dest = seg;
            break;
          }
          u -= w;
        }
      }
      v.route = cached_route(s, g, spec.segment, dest);
      v.spawn_tick = s.tick;
      occ.push_back(v.id);
      s.vehicles.emplace(v.id, std::move(v));
      s.stats.spawned += 1;
      s.spawn_backlog[k] -= 1;
    }
    if (arrived && s.spawn_backlog[k] > 0) s.stats.deferred_spawns += 1;
  }
}

namespace {

class Stepper {
public:
  Stepper(SimState& s, const NetworkGraph& g, ControlMode mode, const Policy& policy, const SimParams& p,
          const std::vector<SignalPlan>& signals)
      : s_(s), g_(g), mode_(mode), policy_(policy), p_(p), signals_(signals) {}

  void run() {
    for (std::size_t xi = 0; xi < g_.intersections().size(); ++xi) grant(xi);
    bool moved = false;
    for (SegmentIndex a = 0; a < g_.size(); ++a) moved |= move_segment(a);
    for (std::size_t xi = 0; xi < g_.intersections().size(); ++xi) moved |= move_interior(xi);
    update_stop_marks();
    if (!moved && !s_.vehicles.empty()) s_.stats.stalled_ticks += 1;
    score_decisions();
    check_invariants(s_, g_, p_);
    s_.tick += 1;
  }

private:
  bool is_reserved(std::size_t xi, std::uint64_t id) const {
    const auto& res = s_.junctions[xi].reservations;
    return std::any_of(res.begin(), res.end(), [&](const Reservation& r) { return r.vehicle == id; });
  }

  bool room_on(SegmentIndex to, std::size_t xi) const {
    int committed = 0;
    const auto& rt = s_.junctions[xi];
    for (const auto& r : rt.reservations) committed += r.to == to;
    for (auto id : rt.interior) committed += s_.vehicles.at(id).interior->to == to;
    const double slot = p_.vehicle_length + p_.min_gap;
    const auto& occ = s_.occupancy[to];
    double free = occ.empty() ? g_.segment(to).length : s_.vehicles.at(occ.back()).position - slot;
    return free - committed * slot >= 0.0;
  }

  struct Head {
    std::uint64_t id;
    SegmentIndex from, to;
    std::size_t dir;
    double dist;
  };

  void grant(std::size_t xi) {
    const auto& x = g_.intersections()[xi];
    auto& rt = s_.junctions[xi];

    std::vector<std::size_t> green;
    if (mode_ == ControlMode::TL) green = fixed_time_signal(x, s_.tick, signals_.at(xi));
    auto is_green = [&](std::size_t d) { return std::find(green.begin(), green.end(), d) != green.end(); };

    // Drop reservations that no longer apply.
    std::erase_if(rt.reservations, [&](const Reservation& r) {
      auto it = s_.vehicles.find(r.vehicle);
      if (it == s_.vehicles.end() || it->second.interior) return true;
      const auto& v = it->second;
      if (v.current_segment() != r.from || v.next_segment() != r.to) return true;
      if (mode_ == ControlMode::TL && !is_green(r.direction)) {
        const double dist = g_.segment(r.from).length - v.position;
        return braking_distance(v.speed, p_.decel) <= dist;
      }
      return false;
    });

    std::vector<std::size_t> busy;
    for (auto id : rt.interior) busy.push_back(s_.vehicles.at(id).interior->direction);
    for (const auto& r : rt.reservations) busy.push_back(r.direction);
    auto can_go = [&](std::size_t d) {
      return std::none_of(busy.begin(), busy.end(), [&](std::size_t b) { return x.conflicts(b, d); });
    };
    auto give = [&](const Head& h) {
      rt.reservations.push_back({h.id, h.dir, h.from, h.to});
      busy.push_back(h.dir);
    };

    std::vector<Head> heads;
    for (auto a : x.incoming) {
      const auto& occ = s_.occupancy[a];
      if (occ.empty()) continue;
      const auto& v = s_.vehicles.at(occ.front());
      auto next = v.next_segment();
      if (!next || is_reserved(xi, v.id)) continue;
      heads.push_back({v.id, a, *next, g_.direction_of(a, *next), g_.segment(a).length - v.position});
    }

    auto first_stopped_first_served = [&](bool hv_only) {
      std::vector<const Head*> waiting;
      for (const auto& h : heads) {
        const auto& v = s_.vehicles.at(h.id);
        if (hv_only && v.is_rv()) continue;
        if (is_reserved(xi, h.id)) continue;
        if (h.dist <= p_.line_tolerance && v.speed < p_.stop_speed && v.stopped_since >= 0) waiting.push_back(&h);
      }
      std::sort(waiting.begin(), waiting.end(), [&](const Head* a, const Head* b) {
        auto sa = s_.vehicles.at(a->id).stopped_since;
        auto sb = s_.vehicles.at(b->id).stopped_since;
        return std::tie(sa, a->from) < std::tie(sb, b->from);
      });
      for (const auto* h : waiting) {
        if (can_go(h->dir) && room_on(h->to, xi)) give(*h);
      }
    };

    switch (mode_) {
      case ControlMode::NoTL:
        first_stopped_first_served(false);
        break;
      case ControlMode::TL:
        for (const auto& h : heads) {
          if (h.dist <= p_.zone_radius && is_green(h.dir) && can_go(h.dir) && room_on(h.to, xi)) give(h);
        }
        break;
      case ControlMode::IntersectionControl: {
        std::vector<GoRequest> requests;
        for (const auto& h : heads) {
          const auto& v = s_.vehicles.at(h.id);
          if (!v.is_rv() || h.dist > p_.zone_radius) continue;
          Observation obs = encode_observation(s_, g_, h.id, xi, p_);
          Action act = policy_(obs);
          decisions_.push_back({h.id, xi, h.dir, act, false});
          if (act != Action::Go) continue;
          if (!room_on(h.to, xi)) {
            decisions_.back().conflicted = true;
            continue;
          }
          requests.push_back({h.id, h.dir, obs.avg_waits[h.dir], obs.queue_lengths[h.dir]});
        }
        auto arb = arbitrate(requests, x, busy);
        for (auto id : arb.granted) {
          auto it = std::find_if(heads.begin(), heads.end(), [&](const Head& h) { return h.id == id; });
          give(*it);
        }
        for (auto id : arb.downgraded) {
          for (auto& d : decisions_) {
            if (d.vehicle == id && d.intersection == xi) d.conflicted = true;
          }
        }
        // HVs directly behind an RV that just crossed follow it through.
        for (const auto& h : heads) {
          auto& v = s_.vehicles.at(h.id);
          if (v.is_rv() || h.dist > p_.zone_radius) continue;
          auto lc = rt.last_crossing.find(h.from);
          if (lc == rt.last_crossing.end()) continue;
          const auto& c = lc->second;
          if (c.rv_led && c.tick >= s_.tick - 2 && c.followers < p_.platoon_limit && can_go(h.dir) &&
              room_on(h.to, xi)) {
            v.platoon_member = true;
            give(h);
          }
        }
        first_stopped_first_served(true);
        break;
      }
    }
  }

  bool move_segment(SegmentIndex a) {
    auto& occ = s_.occupancy[a];
    if (occ.empty()) return false;
    const auto& seg = g_.segment(a);
    const auto xi = g_.intersection_at_end(a);
    std::vector<std::uint64_t> remain;
    double lead_x = 0.0, lead_v = 0.0;
    bool moved = false;
    for (auto id : occ) {
      auto& v = s_.vehicles.at(id);
      const bool front = remain.empty();
      const bool exits = v.ends_on_current();
      const bool reserved = front && xi && is_reserved(*xi, id);
      double v_des = std::min(v.speed + p_.accel, seg.speed_limit);
      double v_safe = kInf;
      double x_max = kInf;
      if (!front) {
        v_safe = safe_speed(lead_x - p_.vehicle_length - v.position - p_.min_gap, lead_v, p_.decel);
        x_max = lead_x - p_.vehicle_length - p_.min_gap;
      } else if (!exits && !reserved) {
        v_safe = safe_speed(seg.length - v.position, 0.0, p_.decel);
        x_max = seg.length;
      }
      const double v_new = std::max(0.0, std::min(v_des, v_safe));
      const double x_new = std::max(v.position, std::min(v.position + v_new, x_max));
      v.speed = x_new - v.position;
      if (v.speed >= p_.stop_speed) moved = true;
      if (v.speed < p_.stop_speed) v.waiting_time += 1.0;

      if (x_new >= seg.length && (exits || reserved)) {
        if (exits) {
          s_.stats.departed += 1;
          s_.stats.departed_wait_sum += v.waiting_time;
          if (v.is_rv()) {
            s_.stats.departed_rv += 1;
            s_.stats.departed_rv_wait_sum += v.waiting_time;
          }
          s_.vehicles.erase(id);
        } else {
          enter_interior(v, *xi, a, x_new - seg.length);
        }
        continue;
      }
      v.position = x_new;
      remain.push_back(id);
      lead_x = v.position;
      lead_v = v.speed;
    }
    occ = std::move(remain);
    return moved;
  }

  void enter_interior(Vehicle& v, std::size_t xi, SegmentIndex from, double overshoot) {
    auto& rt = s_.junctions[xi];
    if (v.pending_reroute && v.pending_reroute->segments.front() == from) {
      v.route = std::move(*v.pending_reroute);
      v.route_index = 0;
    }
    v.pending_reroute.reset();
    const SegmentIndex to = v.route.segments[v.route_index + 1];
    const auto& path = g_.path_of(from, to);
    v.interior = InteriorState{xi, g_.direction_of(from, to), to, overshoot, path.length, s_.tick};
    v.position = g_.segment(from).length;
    v.stopped_since = -1;
    std::erase_if(rt.reservations, [&](const Reservation& r) { return r.vehicle == v.id; });
    rt.interior.push_back(v.id);
    auto& lc = rt.last_crossing[from];
    if (v.is_rv()) {
      lc = {s_.tick, true, 0};
    } else if (v.platoon_member) {
      lc = {s_.tick, true, lc.followers + 1};
    } else {
      lc = {s_.tick, false, 0};
    }
    v.platoon_member = false;
  }

  bool move_interior(std::size_t xi) {
    auto& rt = s_.junctions[xi];
    std::vector<std::uint64_t> keep;
    bool moved = false;
    const double slot = p_.vehicle_length + p_.min_gap;
    for (auto id : rt.interior) {
      auto& v = s_.vehicles.at(id);
      auto& st = *v.interior;
      if (st.entered_tick == s_.tick) {
        keep.push_back(id);
        continue;
      }
      const double limit = g_.segment(st.to).speed_limit;
      double p_new = st.progress + std::min(v.speed + p_.accel, limit);
      for (auto lid : keep) {
        const auto& ls = *s_.vehicles.at(lid).interior;
        if (ls.to != st.to) continue;
        const double lead_remaining = ls.length - ls.progress;
        p_new = std::min(p_new, st.length - lead_remaining - slot);
      }
      p_new = std::max(p_new, st.progress);
      double v_new = p_new - st.progress;
      if (p_new >= st.length) {
        double q = p_new - st.length;
        auto& occ_to = s_.occupancy[st.to];
        if (!occ_to.empty()) q = std::min(q, s_.vehicles.at(occ_to.back()).position - slot);
        q = std::min(q, g_.segment(st.to).length);
        if (q >= 0.0) {
          v.route_index += 1;
          v.position = q;
          v.speed = v_new;
          v.interior.reset();
          occ_to.push_back(id);
          if (v.speed < p_.stop_speed) v.waiting_time += 1.0;
          moved |= v.speed >= p_.stop_speed;
          continue;
        }
        v_new = st.length - st.progress;
        p_new = st.length;
      }
      st.progress = p_new;
      v.speed = v_new;
      if (v.speed < p_.stop_speed) v.waiting_time += 1.0;
      moved |= v.speed >= p_.stop_speed;
      keep.push_back(id);
    }
    rt.interior = std::move(keep);
    return moved;
  }

  void update_stop_marks() {
    for (SegmentIndex a = 0; a < g_.size(); ++a) {
      const auto& occ = s_.occupancy[a];
      for (std::size_t i = 0; i < occ.size(); ++i) {
        auto& v = s_.vehicles.at(occ[i]);
        const bool at_line = i == 0 && g_.segment(a).length - v.position <= p_.line_tolerance &&
                             v.speed < p_.stop_speed;
        if (!at_line) {
          v.stopped_since = -1;
        } else if (v.stopped_since < 0) {
          v.stopped_since = s_.tick;
        }
      }
    }
  }

  void score_decisions() {
    std::map<std::size_t, std::vector<DirectionQueue>> cache;
    for (const auto& d : decisions_) {
      auto it = cache.find(d.intersection);
      if (it == cache.end()) it = cache.emplace(d.intersection, direction_queues(s_, g_, d.intersection, p_)).first;
      const double w = normalize_wait(it->second[d.direction].mean_wait, p_.tau_norm);
      auto r = compute_reward(w, d.action, d.conflicted, p_);
      s_.stats.reward_sum += r.total;
      s_.stats.decisions += 1;
      if (d.conflicted) s_.stats.conflict_flags += 1;
    }
  }

  SimState& s_;
  const NetworkGraph& g_;
  ControlMode mode_;
  const Policy& policy_;
  const SimParams& p_;
  const std::vector<SignalPlan>& signals_;
  std::vector<PendingDecision> decisions_;
};

}  // namespace

void step(SimState& state, const NetworkGraph& graph, ControlMode mode, const Policy& policy, const SimParams& params,
          const std::vector<SignalPlan>& signals) {
  if (state.occupancy.size() != graph.size()) throw std::invalid_argument("state does not match graph");
  if (mode == ControlMode::TL && signals.size() != graph.intersections().size()) {
    throw std::invalid_argument("TL mode needs one signal plan per intersection");
  }
  Policy fallback = heuristic_policy;
  Stepper(state, graph, mode, policy ? policy : fallback, params, signals).run();
}

std::optional<double> avg_waiting_time(const std::vector<double>& waits) {
  if (waits.empty()) return std::nullopt;
  return std::accumulate(waits.begin(), waits.end(), 0.0) / static_cast<double>(waits.size());
}

std::optional<double> avg_waiting_time(const SimState& state) {
  const auto n = state.stats.departed + state.vehicles.size();
  if (n == 0) return std::nullopt;
  double sum = state.stats.departed_wait_sum;
  for (const auto& [id, v] : state.vehicles) sum += v.waiting_time;
  return sum / static_cast<double>(n);
}

std::uint64_t state_hash(const SimState& state) {
  std::string buf;
  auto put = [&](const void* p, std::size_t n) { buf.append(static_cast<const char*>(p), n); };
  put(&state.tick, sizeof state.tick);
  for (const auto& [id, v] : state.vehicles) {
    put(&id, sizeof id);
    put(&v.position, sizeof v.position);
    put(&v.speed, sizeof v.speed);
    put(&v.waiting_time, sizeof v.waiting_time);
    put(&v.route_index, sizeof v.route_index);
    for (auto s : v.route.segments) put(&s, sizeof s);
    if (v.interior) put(&v.interior->progress, sizeof(double));
  }
  for (const auto& occ : state.occupancy) {
    for (auto id : occ) put(&id, sizeof id);
    buf.push_back('|');
  }
  return fnv1a(buf);
}

std::vector<SegmentCount> segment_counts(const SimState& state) {
  std::vector<SegmentCount> out(state.occupancy.size());
  for (std::size_t a = 0; a < state.occupancy.size(); ++a) {
    for (auto id : state.occupancy[a]) {
      out[a].total += 1;
      out[a].rv += state.vehicles.at(id).is_rv();
    }
  }
  return out;
}

void check_invariants(const SimState& state, const NetworkGraph& graph, const SimParams& params) {
  std::set<std::uint64_t> seen;
  const double spacing = params.vehicle_length + params.min_gap - kSpacingEps;
  for (SegmentIndex a = 0; a < state.occupancy.size(); ++a) {
    const auto& occ = state.occupancy[a];
    for (std::size_t i = 0; i < occ.size(); ++i) {
      auto it = state.vehicles.find(occ[i]);
      if (it == state.vehicles.end() || !seen.insert(occ[i]).second) {
        throw InvariantViolation("occupancy list inconsistent: " + dump_segment(state, graph, a));
      }
      const auto& v = it->second;
      if (v.interior || v.current_segment() != a) {
        throw InvariantViolation("vehicle listed on wrong segment: " + dump_segment(state, graph, a));
      }
      if (v.position < -kSpacingEps || v.position > graph.segment(a).length + kSpacingEps) {
        throw InvariantViolation("position outside segment: " + dump_segment(state, graph, a));
      }
      if (i > 0 && state.vehicles.at(occ[i - 1]).position - v.position < spacing) {
        throw InvariantViolation("overlapping vehicles: " + dump_segment(state, graph, a));
      }
    }
  }
  for (std::size_t xi = 0; xi < state.junctions.size(); ++xi) {
    const auto& x = graph.intersections()[xi];
    const auto& inside = state.junctions[xi].interior;
    for (auto id : inside) {
      if (!seen.insert(id).second || !state.vehicles.at(id).interior) {
        throw InvariantViolation("interior list inconsistent at " + x.node);
      }
    }
    for (std::size_t i = 0; i < inside.size(); ++i) {
      for (std::size_t k = i + 1; k < inside.size(); ++k) {
        const auto di = state.vehicles.at(inside[i]).interior->direction;
        const auto dk = state.vehicles.at(inside[k]).interior->direction;
        if (x.conflicts(di, dk)) {
          std::ostringstream os;
          os << "conflicting movements inside " << x.node << " at tick " << state.tick << ": vehicles "
             << inside[i] << " (dir " << di << ") and " << inside[k] << " (dir " << dk << ")";
          throw InvariantViolation(os.str());
        }
      }
    }
  }
  if (seen.size() != state.vehicles.size()) throw InvariantViolation("vehicle missing from occupancy lists");
}

std::uint64_t insert_vehicle(SimState& state, const NetworkGraph& graph, VehicleKind kind, Route route,
                             double position, double speed) {
  if (route.segments.empty()) throw std::invalid_argument("empty route");
  const SegmentIndex a = route.segments.front();
  if (position < 0.0 || position > graph.segment(a).length) throw std::invalid_argument("position outside segment");
  Vehicle v;
  v.id = state.next_vehicle_id++;
  v.kind = kind;
  v.route = std::move(route);
  v.position = position;
  v.speed = speed;
  v.spawn_tick = state.tick;
  auto& occ = state.occupancy[a];
  auto it = std::find_if(occ.begin(), occ.end(), [&](std::uint64_t id) { return state.vehicles.at(id).position < position; });
  occ.insert(it, v.id);
  const auto id = v.id;
  state.vehicles.emplace(id, std::move(v));
  state.stats.spawned += 1;
  return id;
}

}  // namespace mixtraffic
