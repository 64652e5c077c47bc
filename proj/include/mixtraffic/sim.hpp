#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "mixtraffic/network.hpp"
#include "mixtraffic/rng.hpp"

namespace mixtraffic {

enum class VehicleKind { HV, RV };
enum class Action { Stop, Go };
enum class ControlMode { NoTL, TL, IntersectionControl };

std::string to_string(ControlMode m);
ControlMode control_mode_from_string(const std::string& s);

/// Raised when the engine detects an inconsistent world state. The message
/// carries a dump of the offending segment or intersection.
class InvariantViolation : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

struct SimParams {
  double accel{2.6};           // m/s^2
  double decel{4.5};           // m/s^2, comfortable
  double min_gap{2.0};         // m
  double vehicle_length{5.0};  // m
  double stop_speed{0.1};      // m/s, waiting accrues below this
  double line_tolerance{0.5};  // m, "at the entrance line"
  double zone_radius{30.0};    // m, coordination zone
  double tau_norm{30.0};       // s, wait normalization
  double lambda_local{1.0};
  double conflict_penalty{5.0};
  int grid_resolution{4};
  /// HVs allowed to follow an RV-led platoon across without a full stop.
  int platoon_limit{3};
};

struct InteriorState {
  std::size_t intersection{};
  std::size_t direction{};
  SegmentIndex to{};
  double progress{};
  double length{};
  std::int64_t entered_tick{};
};

struct Vehicle {
  std::uint64_t id{};
  VehicleKind kind{VehicleKind::HV};
  Route route;
  std::size_t route_index{0};
  double position{0.0};
  double speed{0.0};
  double waiting_time{0.0};
  std::optional<Route> pending_reroute;
  /// Shortage segment the vehicle agreed to reach; set by the router.
  std::optional<SegmentIndex> reroute_target;
  std::optional<InteriorState> interior;
  std::int64_t spawn_tick{0};
  std::int64_t stopped_since{-1};
  bool platoon_member{false};

  bool is_rv() const { return kind == VehicleKind::RV; }
  SegmentIndex current_segment() const { return route.segments[route_index]; }
  SegmentIndex destination() const { return route.segments.back(); }
  /// Next segment the vehicle will take, honoring a pending reroute.
  std::optional<SegmentIndex> next_segment() const;
  bool ends_on_current() const { return !next_segment().has_value(); }
};

struct Reservation {
  std::uint64_t vehicle{};
  std::size_t direction{};
  SegmentIndex from{};
  SegmentIndex to{};
};

struct ApproachCrossing {
  std::int64_t tick{-100};
  bool rv_led{false};
  int followers{0};
};

struct JunctionRuntime {
  std::vector<Reservation> reservations;
  std::vector<std::uint64_t> interior;  // entry order
  std::map<SegmentIndex, ApproachCrossing> last_crossing;
};

struct SimStats {
  std::uint64_t spawned{0};
  std::uint64_t departed{0};
  std::uint64_t deferred_spawns{0};
  double departed_wait_sum{0.0};
  std::uint64_t departed_rv{0};
  double departed_rv_wait_sum{0.0};
  std::uint64_t stalled_ticks{0};
  double reward_sum{0.0};
  std::uint64_t decisions{0};
  std::uint64_t conflict_flags{0};
};

struct SpawnSpec {
  SegmentIndex segment{};
  double rate{0.0};  // veh/s
  double rv_probability{0.0};
  /// Destination exit segments with weights; empty means uniform over exits.
  std::vector<std::pair<SegmentIndex, double>> destinations;
};

struct SimState {
  std::int64_t tick{0};
  std::map<std::uint64_t, Vehicle> vehicles;
  std::vector<std::vector<std::uint64_t>> occupancy;  // per segment, front to back
  std::vector<JunctionRuntime> junctions;
  std::vector<int> spawn_backlog;
  Rng spawn_rng;
  std::uint64_t next_vehicle_id{1};
  SimStats stats;
  std::map<std::pair<SegmentIndex, SegmentIndex>, Route> route_cache;
};

SimState make_state(const NetworkGraph& graph, std::uint64_t seed);

/// Fixed-length encoding of one intersection as seen by an approaching RV.
struct Observation {
  std::vector<double> queue_lengths;
  std::vector<double> avg_waits;
  std::vector<std::vector<std::uint8_t>> occupancy_maps;  // J x (res*res), row-major
  double ego_distance{0.0};
  std::size_t ego_direction{0};
  bool ego_is_head{false};

  /// Concatenation <l, w> per direction, then the maps, then the ego distance.
  std::vector<double> flatten() const;
};

struct RewardBreakdown {
  double local{0.0};
  double conflict_penalty{0.0};
  double total{0.0};
};

using Policy = std::function<Action(const Observation&)>;

struct GoRequest {
  std::uint64_t vehicle{};
  std::size_t direction{};
  double wait{0.0};
  double queue{0.0};
};

struct Arbitration {
  std::vector<std::uint64_t> granted;
  std::vector<std::uint64_t> downgraded;
};

struct SignalPlan {
  std::vector<std::vector<std::size_t>> phases;
  std::vector<int> green;  // seconds per phase
  int all_red{3};
  int cycle_length() const;
};

/// Per-direction queue summary inside the coordination zone.
struct DirectionQueue {
  int count{0};
  double mean_wait{0.0};
};

std::vector<DirectionQueue> direction_queues(const SimState& state, const NetworkGraph& graph,
                                             std::size_t intersection, const SimParams& params);

Observation encode_observation(const SimState& state, const NetworkGraph& graph, std::uint64_t rv,
                               std::size_t intersection, const SimParams& params);

double normalize_wait(double wait, double tau_norm);

RewardBreakdown compute_reward(double next_wait_normalized, Action action, bool conflicted, const SimParams& params);
RewardBreakdown compute_reward(const SimState& state_after, const NetworkGraph& graph, std::size_t intersection,
                               std::size_t direction, Action action, bool conflicted, const SimParams& params);

Action heuristic_policy(const Observation& obs);

/// Grants the longest prefix of Go requests, in descending (wait, queue)
/// order, that stays conflict-free with each other and with `busy`.
Arbitration arbitrate(std::vector<GoRequest> requests, const Intersection& intersection,
                      const std::vector<std::size_t>& busy = {});

SignalPlan default_signal_plan(const Intersection& intersection, int green, int all_red);
void validate_signal_plan(const Intersection& intersection, const SignalPlan& plan);
std::vector<std::size_t> fixed_time_signal(const Intersection& intersection, std::int64_t tick, const SignalPlan& plan);

void spawn(SimState& state, const NetworkGraph& graph, const std::vector<SpawnSpec>& specs, const SimParams& params);

void step(SimState& state, const NetworkGraph& graph, ControlMode mode, const Policy& policy, const SimParams& params,
          const std::vector<SignalPlan>& signals = {});

/// Mean final waiting time over departed and present vehicles; nullopt when
/// no vehicle has been observed.
std::optional<double> avg_waiting_time(const SimState& state);
std::optional<double> avg_waiting_time(const std::vector<double>& waits);

std::uint64_t state_hash(const SimState& state);

struct SegmentCount {
  int total{0};
  int rv{0};
};
std::vector<SegmentCount> segment_counts(const SimState& state);

/// Throws InvariantViolation on overlap, ordering, or conflicting interiors.
void check_invariants(const SimState& state, const NetworkGraph& graph, const SimParams& params);

/// Places a vehicle directly (tests and scenario setup). Returns its id.
std::uint64_t insert_vehicle(SimState& state, const NetworkGraph& graph, VehicleKind kind, Route route,
                             double position, double speed);

}  // namespace mixtraffic
