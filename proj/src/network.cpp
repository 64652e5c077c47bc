#include "mixtraffic/network.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <limits>
#include <queue>
#include <set>
#include <sstream>

namespace mixtraffic {

namespace {

constexpr double kIntersectionSize = 14.0;  // m, side of the interior box
constexpr double kMinInteriorPath = 4.0;
constexpr double kLengthEps = 1e-9;

// Entry/exit points of each approach slot (N, E, S, W) on the unit box,
// right-hand traffic: inbound lane sits left of the outbound lane when
// walking clockwise around the box.
constexpr std::array<std::array<double, 2>, 4> kInPoint{{{0.25, 1.0}, {1.0, 0.75}, {0.75, 0.0}, {0.0, 0.25}}};
constexpr std::array<std::array<double, 2>, 4> kOutPoint{{{0.75, 1.0}, {1.0, 0.25}, {0.25, 0.0}, {0.0, 0.75}}};

int slot_offset(Movement m) {
  switch (m) {
    case Movement::Left: return 1;
    case Movement::Through: return 2;
    case Movement::Right: return 3;
  }
  return 0;
}

bool strictly_inside(int x, int a, int b) {
  // x on the open arc walking clockwise from a to b on an 8-point circle.
  int span = (b - a + 8) % 8;
  int off = (x - a + 8) % 8;
  return off > 0 && off < span;
}

bool chords_cross(int a0, int a1, int b0, int b1) {
  bool in0 = strictly_inside(b0, a0, a1);
  bool in1 = strictly_inside(b1, a0, a1);
  return in0 != in1;
}

double get_number(const nlohmann::json& obj, const char* key, const std::string& owner) {
  auto it = obj.find(key);
  if (it == obj.end() || !it->is_number()) {
    throw NetworkError("segment " + owner + ": missing numeric field '" + key + "'");
  }
  return it->get<double>();
}

std::string get_string(const nlohmann::json& obj, const char* key, const std::string& owner) {
  auto it = obj.find(key);
  if (it == obj.end() || !it->is_string()) {
    throw NetworkError(owner + ": missing string field '" + key + "'");
  }
  return it->get<std::string>();
}

}  // namespace

std::string to_string(Movement m) {
  switch (m) {
    case Movement::Left: return "left";
    case Movement::Right: return "right";
    case Movement::Through: return "through";
  }
  return "through";
}

Movement movement_from_string(const std::string& s) {
  if (s == "left") return Movement::Left;
  if (s == "right") return Movement::Right;
  if (s == "through") return Movement::Through;
  throw NetworkError("unknown movement '" + s + "'");
}

std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex;
  os.width(16);
  os.fill('0');
  os << v;
  return os.str();
}

std::optional<std::size_t> Intersection::direction_index(SegmentIndex approach, bool is_left) const {
  for (std::size_t j = 0; j < directions.size(); ++j) {
    if (directions[j].approach == approach && directions[j].left == is_left) return j;
  }
  return std::nullopt;
}

SegmentIndex NetworkGraph::index_of(const std::string& id) const {
  auto it = index_.find(id);
  if (it == index_.end()) throw NetworkError("unknown segment '" + id + "'");
  return it->second;
}

std::optional<SegmentIndex> NetworkGraph::find(const std::string& id) const {
  auto it = index_.find(id);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::optional<Movement> NetworkGraph::movement(SegmentIndex from, SegmentIndex to) const {
  for (const auto& c : connections_) {
    if (c.from == from && c.to == to) return c.movement;
  }
  return std::nullopt;
}

std::size_t NetworkGraph::direction_of(SegmentIndex from, SegmentIndex to) const {
  auto it = movement_info_.find({from, to});
  if (it == movement_info_.end()) {
    throw NetworkError("no connection " + segments_.at(from).id + " -> " + segments_.at(to).id);
  }
  return it->second.first;
}

const MovementPath& NetworkGraph::path_of(SegmentIndex from, SegmentIndex to) const {
  auto it = movement_info_.find({from, to});
  if (it == movement_info_.end()) {
    throw NetworkError("no connection " + segments_.at(from).id + " -> " + segments_.at(to).id);
  }
  return it->second.second;
}

NetworkGraph load_network(const nlohmann::json& doc) {
  if (!doc.is_object()) throw NetworkError("network document must be an object");
  if (!doc.contains("format") || doc["format"] != 1) {
    throw NetworkError("unsupported network format version");
  }
  if (!doc.contains("segments") || !doc["segments"].is_array()) throw NetworkError("missing 'segments'");

  NetworkGraph g;
  std::vector<RoadSegment> segs;
  std::set<std::string> seen;
  for (const auto& js : doc["segments"]) {
    RoadSegment s;
    s.id = get_string(js, "id", "segment");
    if (!seen.insert(s.id).second) throw NetworkError("duplicate segment id '" + s.id + "'");
    s.from_node = get_string(js, "from", "segment " + s.id);
    s.to_node = get_string(js, "to", "segment " + s.id);
    s.length = get_number(js, "length_m", s.id);
    s.speed_limit = get_number(js, "speed_mps", s.id);
    s.lanes = js.value("lanes", 1);
    s.spawn = js.value("spawn", false);
    s.exit = js.value("exit", false);
    if (!(s.length > 0.0)) throw NetworkError("segment " + s.id + ": non-positive length");
    if (!(s.speed_limit > 0.0)) throw NetworkError("segment " + s.id + ": non-positive speed");
    if (s.lanes < 1) throw NetworkError("segment " + s.id + ": lanes must be positive");
    if (s.from_node == s.to_node) throw NetworkError("segment " + s.id + ": self-loop");
    segs.push_back(std::move(s));
  }
  std::sort(segs.begin(), segs.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  g.segments_ = std::move(segs);
  const std::size_t n = g.segments_.size();
  for (SegmentIndex i = 0; i < n; ++i) g.index_[g.segments_[i].id] = i;

  g.adjacency_.assign(n * n, 0);
  g.preds_.assign(n, {});
  g.succs_.assign(n, {});
  if (doc.contains("connections")) {
    for (const auto& jc : doc["connections"]) {
      const auto from_id = get_string(jc, "from", "connection");
      const auto to_id = get_string(jc, "to", "connection");
      auto fi = g.find(from_id);
      if (!fi) throw NetworkError("connection references unknown segment '" + from_id + "'");
      auto ti = g.find(to_id);
      if (!ti) throw NetworkError("connection references unknown segment '" + to_id + "'");
      const auto& a = g.segments_[*fi];
      const auto& b = g.segments_[*ti];
      if (a.to_node != b.from_node) {
        throw NetworkError("connection " + from_id + " -> " + to_id + ": segments do not meet");
      }
      if (b.to_node == a.from_node) {
        throw NetworkError("connection " + from_id + " -> " + to_id + ": U-turn");
      }
      if (g.adjacency_[*fi * n + *ti]) {
        throw NetworkError("duplicate connection " + from_id + " -> " + to_id);
      }
      Connection c{*fi, *ti, movement_from_string(jc.value("movement", std::string{"through"}))};
      g.connections_.push_back(c);
      g.adjacency_[*fi * n + *ti] = 1;
      g.preds_[*ti].push_back(*fi);
      g.succs_[*fi].push_back(*ti);
    }
  }
  std::sort(g.connections_.begin(), g.connections_.end(),
            [](const Connection& a, const Connection& b) { return std::tie(a.from, a.to) < std::tie(b.from, b.to); });
  for (auto& v : g.preds_) std::sort(v.begin(), v.end());
  for (auto& v : g.succs_) std::sort(v.begin(), v.end());

  for (SegmentIndex i = 0; i < n; ++i) {
    if (g.segments_[i].spawn) g.spawns_.push_back(i);
    if (g.segments_[i].exit) g.exits_.push_back(i);
    if (g.preds_[i].empty() && !g.segments_[i].spawn) {
      throw NetworkError("segment " + g.segments_[i].id + ": no predecessor and not a spawn segment");
    }
  }
  {
    std::vector<bool> reached(n, false);
    std::queue<SegmentIndex> q;
    for (auto s : g.spawns_) {
      reached[s] = true;
      q.push(s);
    }
    while (!q.empty()) {
      auto u = q.front();
      q.pop();
      for (auto v : g.succs_[u]) {
        if (!reached[v]) {
          reached[v] = true;
          q.push(v);
        }
      }
    }
    for (SegmentIndex i = 0; i < n; ++i) {
      if (!reached[i]) throw NetworkError("segment " + g.segments_[i].id + ": unreachable from any spawn segment");
    }
  }

  // Intersections: every node some connection passes through.
  std::map<std::string, std::vector<const Connection*>> by_node;
  for (const auto& c : g.connections_) by_node[g.segments_[c.from].to_node].push_back(&c);
  g.end_intersection_.assign(n, std::nullopt);
  for (const auto& [node, conns] : by_node) {
    Intersection x;
    x.node = node;
    std::set<std::string> arm_set;
    for (SegmentIndex i = 0; i < n; ++i) {
      if (g.segments_[i].to_node == node) {
        x.incoming.push_back(i);
        arm_set.insert(g.segments_[i].from_node);
      }
      if (g.segments_[i].from_node == node) {
        x.outgoing.push_back(i);
        arm_set.insert(g.segments_[i].to_node);
      }
    }
    std::vector<std::string> arms(arm_set.begin(), arm_set.end());
    if (arms.size() > 4) throw NetworkError("intersection " + node + ": more than four arms");
    x.geometry = arms.size() == 4 ? Geometry::FourWay : arms.size() == 3 ? Geometry::ThreeWay : Geometry::Other;
    auto arm_of = [&](const std::string& nb) {
      return static_cast<int>(std::find(arms.begin(), arms.end(), nb) - arms.begin());
    };

    for (auto in : x.incoming) {
      bool has_straight = false, has_left = false;
      for (const auto* c : conns) {
        if (c->from != in) continue;
        (c->movement == Movement::Left ? has_left : has_straight) = true;
      }
      if (has_straight) x.directions.push_back({in, false});
      if (has_left) x.directions.push_back({in, true});
    }
    if (x.directions.size() > 8 || (x.geometry == Geometry::ThreeWay && x.directions.size() > 6)) {
      throw NetworkError("intersection " + node + ": too many movement directions");
    }

    // Recover the cyclic arm order from movement labels.
    std::vector<int> slot(arms.size(), -1);
    bool ok = !arms.empty();
    if (ok) {
      slot[0] = 0;
      bool changed = true;
      while (changed && ok) {
        changed = false;
        for (const auto* c : conns) {
          int a = arm_of(g.segments_[c->from].from_node);
          int b = arm_of(g.segments_[c->to].to_node);
          int off = slot_offset(c->movement);
          if (slot[a] >= 0 && slot[b] < 0) {
            slot[b] = (slot[a] + off) % 4;
            changed = true;
          } else if (slot[b] >= 0 && slot[a] < 0) {
            slot[a] = (slot[b] - off + 4) % 4;
            changed = true;
          } else if (slot[a] >= 0 && slot[b] >= 0 && slot[b] != (slot[a] + off) % 4) {
            ok = false;
          }
        }
      }
      std::set<int> distinct;
      for (int s : slot) {
        if (s < 0 || !distinct.insert(s).second) ok = false;
      }
    }
    x.slots_resolved = ok;
    if (!ok) {
      for (std::size_t k = 0; k < slot.size(); ++k) slot[k] = static_cast<int>(k % 4);
    }

    struct Mv {
      std::size_t dir;
      SegmentIndex from, to;
      int in_pos, out_pos;
    };
    std::vector<Mv> mvs;
    for (const auto* c : conns) {
      int sa = slot[arm_of(g.segments_[c->from].from_node)];
      int sb = slot[arm_of(g.segments_[c->to].to_node)];
      auto dir = *x.direction_index(c->from, c->movement == Movement::Left);
      mvs.push_back({dir, c->from, c->to, 2 * sa, 2 * sb + 1});
      MovementPath p;
      p.x0 = kInPoint[sa][0];
      p.y0 = kInPoint[sa][1];
      p.x1 = kOutPoint[sb][0];
      p.y1 = kOutPoint[sb][1];
      p.length = std::max(kMinInteriorPath, std::hypot(p.x1 - p.x0, p.y1 - p.y0) * kIntersectionSize);
      g.movement_info_[{c->from, c->to}] = {dir, p};
    }
    const std::size_t J = x.directions.size();
    x.conflict.assign(J, std::vector<bool>(J, false));
    for (const auto& m1 : mvs) {
      for (const auto& m2 : mvs) {
        if (m1.from == m2.from) continue;
        bool c;
        if (!ok) {
          c = true;
        } else {
          c = m1.to == m2.to || chords_cross(m1.in_pos, m1.out_pos, m2.in_pos, m2.out_pos);
        }
        if (c) {
          x.conflict[m1.dir][m2.dir] = true;
          x.conflict[m2.dir][m1.dir] = true;
        }
      }
    }
    const std::size_t xi = g.intersections_.size();
    for (auto in : x.incoming) g.end_intersection_[in] = xi;
    g.intersections_.push_back(std::move(x));
  }

  // Canonical form for hashing.
  nlohmann::json canon;
  canon["format"] = 1;
  canon["segments"] = nlohmann::json::array();
  for (const auto& s : g.segments_) {
    canon["segments"].push_back({{"id", s.id},
                                 {"from", s.from_node},
                                 {"to", s.to_node},
                                 {"length_m", s.length},
                                 {"speed_mps", s.speed_limit},
                                 {"lanes", s.lanes},
                                 {"spawn", s.spawn},
                                 {"exit", s.exit}});
  }
  canon["connections"] = nlohmann::json::array();
  for (const auto& c : g.connections_) {
    canon["connections"].push_back(
        {{"from", g.segments_[c.from].id}, {"to", g.segments_[c.to].id}, {"movement", to_string(c.movement)}});
  }
  g.hash_ = fnv1a(canon.dump());
  g.document_ = std::move(canon);
  return g;
}

NetworkGraph load_network(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw NetworkError(std::string("network document is not valid JSON: ") + e.what());
  }
  return load_network(doc);
}

NetworkGraph load_network_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw NetworkError("cannot open network file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return load_network(ss.str());
}

nlohmann::json generate_grid(int rows, int cols, double segment_length, double speed_limit) {
  if (rows < 2 || cols < 2) throw NetworkError("grid needs at least 2 rows and 2 columns");
  if (!(segment_length > 0.0) || !(speed_limit > 0.0)) throw NetworkError("grid needs positive length and speed");

  struct Seg {
    std::string id, from, to;
    bool spawn = false, exit = false;
  };
  std::map<std::string, std::array<double, 2>> pos;
  auto node = [](int r, int c) { return "r" + std::to_string(r) + "c" + std::to_string(c); };
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) pos[node(r, c)] = {c * segment_length, -r * segment_length};
  }
  std::vector<Seg> segs;
  auto link = [&](const std::string& a, const std::string& b) { segs.push_back({a + "-" + b, a, b}); };
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      if (c + 1 < cols) {
        link(node(r, c), node(r, c + 1));
        link(node(r, c + 1), node(r, c));
      }
      if (r + 1 < rows) {
        link(node(r, c), node(r + 1, c));
        link(node(r + 1, c), node(r, c));
      }
    }
  }

  // Perimeter walk, clockwise from the top-left corner.
  std::vector<std::pair<int, int>> ring;
  for (int c = 0; c < cols; ++c) ring.emplace_back(0, c);
  for (int r = 1; r < rows; ++r) ring.emplace_back(r, cols - 1);
  for (int c = cols - 2; c >= 0; --c) ring.emplace_back(rows - 1, c);
  for (int r = rows - 2; r >= 1; --r) ring.emplace_back(r, 0);
  for (std::size_t k = 0; k < ring.size(); ++k) {
    auto [r, c] = ring[k];
    std::array<double, 2> out{0.0, 0.0};
    if (r == 0) {
      out = {0.0, 1.0};
    } else if (r == rows - 1) {
      out = {0.0, -1.0};
    } else if (c == 0) {
      out = {-1.0, 0.0};
    } else {
      out = {1.0, 0.0};
    }
    const auto nd = node(r, c);
    const auto ext = "x" + std::to_string(k);
    pos[ext] = {pos[nd][0] + out[0] * segment_length, pos[nd][1] + out[1] * segment_length};
    if (k % 2 == 0) {
      segs.push_back({"in-" + nd, ext, nd, true, false});
    } else {
      segs.push_back({"out-" + nd, nd, ext, false, true});
    }
  }

  nlohmann::json doc;
  doc["format"] = 1;
  doc["segments"] = nlohmann::json::array();
  for (const auto& s : segs) {
    doc["segments"].push_back({{"id", s.id},
                               {"from", s.from},
                               {"to", s.to},
                               {"length_m", segment_length},
                               {"speed_mps", speed_limit},
                               {"lanes", 1},
                               {"spawn", s.spawn},
                               {"exit", s.exit}});
  }
  doc["connections"] = nlohmann::json::array();
  for (const auto& a : segs) {
    for (const auto& b : segs) {
      if (a.to != b.from || b.to == a.from) continue;
      const auto& p0 = pos[a.from];
      const auto& p1 = pos[a.to];
      const auto& p2 = pos[b.to];
      double hx = p1[0] - p0[0], hy = p1[1] - p0[1];
      double ox = p2[0] - p1[0], oy = p2[1] - p1[1];
      double cross = hx * oy - hy * ox;
      Movement m = std::abs(cross) < 1e-9 ? Movement::Through : cross > 0 ? Movement::Left : Movement::Right;
      doc["connections"].push_back({{"from", a.id}, {"to", b.id}, {"movement", to_string(m)}});
    }
  }
  return doc;
}

std::vector<SegmentIndex> predecessors(const NetworkGraph& graph, const std::string& segment_id) {
  return graph.predecessors(graph.index_of(segment_id));
}

double route_length(const NetworkGraph& graph, const std::vector<SegmentIndex>& segments) {
  double total = 0.0;
  for (auto s : segments) total += graph.segment(s).length;
  return total;
}

bool route_is_connected(const NetworkGraph& graph, const Route& route) {
  for (std::size_t i = 1; i < route.segments.size(); ++i) {
    if (!graph.adjacent(route.segments[i - 1], route.segments[i])) return false;
  }
  return true;
}

Route shortest_route(const NetworkGraph& graph, SegmentIndex from, SegmentIndex to) {
  const std::size_t n = graph.size();
  if (from >= n || to >= n) throw NetworkError("route endpoint out of range");
  if (from == to) return Route{{from}, graph.segment(from).length};

  constexpr double inf = std::numeric_limits<double>::infinity();
  std::vector<double> dist(n, inf);
  std::vector<std::vector<SegmentIndex>> path(n);
  std::vector<bool> done(n, false);
  dist[from] = graph.segment(from).length;
  path[from] = {from};
  auto better = [&](double d, const std::vector<SegmentIndex>& p, SegmentIndex v) {
    if (d < dist[v] - kLengthEps) return true;
    if (d > dist[v] + kLengthEps) return false;
    return p < path[v];
  };
  for (;;) {
    std::optional<SegmentIndex> u;
    for (SegmentIndex v = 0; v < n; ++v) {
      if (done[v] || dist[v] == inf) continue;
      if (!u || better(dist[v], path[v], *u)) u = v;
    }
    if (!u) break;
    done[*u] = true;
    if (*u == to) break;
    for (auto v : graph.successors(*u)) {
      if (done[v]) continue;
      double d = dist[*u] + graph.segment(v).length;
      auto p = path[*u];
      p.push_back(v);
      if (better(d, p, v)) {
        dist[v] = d;
        path[v] = std::move(p);
      }
    }
  }
  if (dist[to] == inf) {
    throw NetworkError("segment " + graph.segment(to).id + " unreachable from " + graph.segment(from).id);
  }
  return Route{path[to], dist[to]};
}

Route shortest_route_via(const NetworkGraph& graph, SegmentIndex from, SegmentIndex via, SegmentIndex to) {
  Route first = shortest_route(graph, from, via);
  Route second = shortest_route(graph, via, to);
  Route r;
  r.segments = first.segments;
  r.segments.insert(r.segments.end(), second.segments.begin() + 1, second.segments.end());
  r.total_length = route_length(graph, r.segments);
  return r;
}

}  // namespace mixtraffic
