#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

namespace mixtraffic {

using SegmentIndex = std::size_t;

/// Error raised for malformed or inconsistent network documents.
class NetworkError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

enum class Movement { Left, Right, Through };

std::string to_string(Movement m);
Movement movement_from_string(const std::string& s);

struct RoadSegment {
  std::string id;
  std::string from_node;
  std::string to_node;
  double length{0.0};       // m
  double speed_limit{0.0};  // m/s
  int lanes{1};
  bool spawn{false};
  bool exit{false};
};

struct Connection {
  SegmentIndex from{};
  SegmentIndex to{};
  Movement movement{Movement::Through};
};

/// A movement direction at an intersection: one approach, split into its
/// left-turn group and its straight/right group.
struct Direction {
  SegmentIndex approach{};
  bool left{false};
};

enum class Geometry { Other, ThreeWay, FourWay };

/// Unit-square path of a movement through the intersection box, used for
/// occupancy maps and for the interior travel distance.
struct MovementPath {
  double x0{}, y0{}, x1{}, y1{};
  double length{};  // m
};

struct Intersection {
  std::string node;
  std::vector<SegmentIndex> incoming;
  std::vector<SegmentIndex> outgoing;
  std::vector<Direction> directions;
  std::vector<std::vector<bool>> conflict;
  Geometry geometry{Geometry::Other};
  bool slots_resolved{false};

  std::size_t direction_count() const { return directions.size(); }
  bool conflicts(std::size_t a, std::size_t b) const { return conflict[a][b]; }
  std::optional<std::size_t> direction_index(SegmentIndex approach, bool left) const;
};

struct Route {
  std::vector<SegmentIndex> segments;
  double total_length{0.0};

  bool empty() const { return segments.empty(); }
  bool operator==(const Route&) const = default;
};

/// Immutable road network: segments are graph nodes, turning connections
/// are edges. Segment indices follow lexicographic id order.
class NetworkGraph {
public:
  NetworkGraph() = default;

  std::size_t size() const { return segments_.size(); }
  const RoadSegment& segment(SegmentIndex i) const { return segments_.at(i); }
  const std::vector<RoadSegment>& segments() const { return segments_; }
  const std::vector<Connection>& connections() const { return connections_; }

  SegmentIndex index_of(const std::string& id) const;
  std::optional<SegmentIndex> find(const std::string& id) const;

  bool adjacent(SegmentIndex from, SegmentIndex to) const { return adjacency_[from * size() + to] != 0; }
  const std::vector<SegmentIndex>& predecessors(SegmentIndex e) const { return preds_.at(e); }
  const std::vector<SegmentIndex>& successors(SegmentIndex e) const { return succs_.at(e); }
  std::optional<Movement> movement(SegmentIndex from, SegmentIndex to) const;

  const std::vector<Intersection>& intersections() const { return intersections_; }
  /// Intersection at the downstream end of `from`, or nullopt for sink nodes.
  std::optional<std::size_t> intersection_at_end(SegmentIndex from) const { return end_intersection_.at(from); }
  /// Direction index of the movement from -> to at the shared intersection.
  std::size_t direction_of(SegmentIndex from, SegmentIndex to) const;
  const MovementPath& path_of(SegmentIndex from, SegmentIndex to) const;

  const std::vector<SegmentIndex>& spawn_segments() const { return spawns_; }
  const std::vector<SegmentIndex>& exit_segments() const { return exits_; }

  /// Stable 64-bit hash of the canonical document.
  std::uint64_t hash() const { return hash_; }
  const nlohmann::json& document() const { return document_; }

  friend NetworkGraph load_network(const nlohmann::json& doc);

private:
  std::vector<RoadSegment> segments_;
  std::vector<Connection> connections_;
  std::map<std::string, SegmentIndex> index_;
  std::vector<std::uint8_t> adjacency_;
  std::vector<std::vector<SegmentIndex>> preds_;
  std::vector<std::vector<SegmentIndex>> succs_;
  std::vector<Intersection> intersections_;
  std::vector<std::optional<std::size_t>> end_intersection_;
  std::map<std::pair<SegmentIndex, SegmentIndex>, std::pair<std::size_t, MovementPath>> movement_info_;
  std::vector<SegmentIndex> spawns_;
  std::vector<SegmentIndex> exits_;
  std::uint64_t hash_{0};
  nlohmann::json document_;
};

NetworkGraph load_network(const nlohmann::json& doc);
NetworkGraph load_network(const std::string& text);
NetworkGraph load_network_file(const std::string& path);

/// Bidirectional rows x cols grid with one border stub per border node,
/// alternating entry/exit around the perimeter.
nlohmann::json generate_grid(int rows, int cols, double segment_length, double speed_limit);

std::vector<SegmentIndex> predecessors(const NetworkGraph& graph, const std::string& segment_id);

/// Length-minimal route; ties broken by lexicographic segment-id sequence.
Route shortest_route(const NetworkGraph& graph, SegmentIndex from, SegmentIndex to);
Route shortest_route_via(const NetworkGraph& graph, SegmentIndex from, SegmentIndex via, SegmentIndex to);

/// Sum of member segment lengths.
double route_length(const NetworkGraph& graph, const std::vector<SegmentIndex>& segments);
bool route_is_connected(const NetworkGraph& graph, const Route& route);

std::uint64_t fnv1a(const std::string& bytes);
std::string hex64(std::uint64_t v);

}  // namespace mixtraffic
