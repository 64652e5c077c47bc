#include "mixtraffic/sensing.hpp"

#include <cmath>
#include <limits>
#include <deque>
#include <stdexcept>

namespace mixtraffic {

LocalObservation sense_local(const SimState& state, const NetworkGraph& graph, std::uint64_t rv, double radius) {
  if (!(radius > 0.0)) throw std::invalid_argument("sensing radius must be positive");
  const auto& me = state.vehicles.at(rv);
  (void)graph;
  LocalObservation obs;
  obs.reporter_rv_id = rv;
  obs.segment = me.current_segment();
  obs.tick = state.tick;
  for (auto id : state.occupancy.at(obs.segment)) {
    const auto& v = state.vehicles.at(id);
    if (std::abs(v.position - me.position) <= radius) {
      obs.observed_total += 1;
      obs.observed_rv += v.is_rv();
    }
  }
  if (obs.observed_total == 0) {
    // Reporter inside the intersection box: it still sees itself.
    obs.observed_total = 1;
    obs.observed_rv = 1;
  }
  obs.p_v = static_cast<double>(obs.observed_rv) / obs.observed_total;
  return obs;
}

std::optional<SegmentEstimate> aggregate(std::span<const LocalObservation> observations) {
  if (observations.empty()) return std::nullopt;
  const auto seg = observations.front().segment;
  const auto tick = observations.front().tick;
  double sum = 0.0;
  for (const auto& o : observations) {
    if (o.segment != seg || o.tick != tick) throw std::invalid_argument("observations span several segments or ticks");
    sum += o.p_v;
  }
  SegmentEstimate e;
  e.segment = seg;
  e.tick = tick;
  e.rv_count = static_cast<int>(observations.size());
  e.p_e = sum / e.rv_count;
  e.n_e = e.rv_count / e.p_e;
  e.stale = false;
  return e;
}

EstimateTable EstimateTable::with_priors(std::vector<double> priors) {
  EstimateTable t;
  t.rows.resize(priors.size());
  t.last_fresh.assign(priors.size(), std::numeric_limits<std::int64_t>::min() / 2);
  for (std::size_t i = 0; i < priors.size(); ++i) {
    t.rows[i].segment = i;
    t.rows[i].p_e = priors[i];
    t.rows[i].n_e = 0.0;
    t.rows[i].stale = true;
  }
  t.prior = std::move(priors);
  return t;
}

void snapshot(EstimateTable& table, const std::vector<SegmentEstimate>& fresh, std::int64_t tick, int staleness_limit) {
  std::vector<bool> updated(table.rows.size(), false);
  for (const auto& e : fresh) {
    table.rows.at(e.segment) = e;
    table.rows[e.segment].stale = false;
    table.last_fresh[e.segment] = tick;
    updated[e.segment] = true;
  }
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    if (updated[i]) continue;
    auto& row = table.rows[i];
    row.stale = true;
    if (tick - table.last_fresh[i] > staleness_limit) {
      row.p_e = table.prior[i];
      row.n_e = 0.0;
      row.rv_count = 0;
      row.tick = tick;
    }
  }
}

std::vector<double> spawn_priors(const NetworkGraph& graph, const std::vector<SpawnSpec>& specs, double fallback) {
  std::vector<double> out(graph.size(), fallback);
  for (SegmentIndex e = 0; e < graph.size(); ++e) {
    // Walk upstream in BFS layers; within a layer, smallest segment id wins.
    std::vector<int> depth(graph.size(), -1);
    std::deque<SegmentIndex> q{e};
    depth[e] = 0;
    std::optional<std::pair<int, SegmentIndex>> best;
    while (!q.empty()) {
      auto u = q.front();
      q.pop_front();
      if (best && depth[u] > best->first) break;
      for (const auto& s : specs) {
        if (s.segment == u && (!best || std::make_pair(depth[u], u) < *best)) best = std::make_pair(depth[u], u);
      }
      for (auto p : graph.predecessors(u)) {
        if (depth[p] < 0) {
          depth[p] = depth[u] + 1;
          q.push_back(p);
        }
      }
    }
    if (best) {
      for (const auto& s : specs) {
        if (s.segment == best->second) {
          out[e] = s.rv_probability;
          break;
        }
      }
    }
  }
  return out;
}

nlohmann::json to_json(const LocalObservation& obs, const NetworkGraph& graph) {
  return {{"reporter_rv_id", obs.reporter_rv_id},
          {"segment_id", graph.segment(obs.segment).id},
          {"observed_total", obs.observed_total},
          {"observed_rv", obs.observed_rv},
          {"p_v", obs.p_v},
          {"tick", obs.tick}};
}

LocalObservation local_observation_from_json(const nlohmann::json& j, const NetworkGraph& graph) {
  LocalObservation o;
  o.reporter_rv_id = j.at("reporter_rv_id").get<std::uint64_t>();
  o.segment = graph.index_of(j.at("segment_id").get<std::string>());
  o.observed_total = j.at("observed_total").get<int>();
  o.observed_rv = j.at("observed_rv").get<int>();
  o.p_v = j.at("p_v").get<double>();
  o.tick = j.at("tick").get<std::int64_t>();
  return o;
}

}  // namespace mixtraffic
