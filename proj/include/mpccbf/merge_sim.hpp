#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <random>
#include <vector>

#include "mpccbf/geometry.hpp"
#include "mpccbf/metrics.hpp"
#include "mpccbf/mpc_controller.hpp"
#include "mpccbf/rng.hpp"

namespace mpccbf {

enum class Origin { Main = 0, Ramp = 1 };
enum class SequencingPolicy { Fifo, Sdf };

struct ScenarioConfig {
  MergeGeometry geometry;
  double arrival_rate = 0.25;  // per origin [veh/s]
  double v0_min = 5.0;
  double v0_max = 15.0;
  SequencingPolicy policy = SequencingPolicy::Fifo;
  std::uint64_t seed = 1;
  int target_cavs = 50;
  double time_cap = 300.0;
  MpcSettings mpc;
  FuelModelParams fuel;

  /// Throws ValidationError on a broken invariant.
  void validate() const;
  LaneContext lane(Origin o) const;
};

/// Everything a parameter source may look at when choosing theta.
struct AgentContext {
  int cav_id = 0;
  Origin origin = Origin::Main;
  VehicleState ego;
  ControlInput prev_input;
  std::optional<VehicleState> preceding;
  std::optional<VehicleState> merging;
  const ScenarioConfig* config = nullptr;
};

using ThetaSource = std::function<ControllerTheta(const AgentContext&)>;

ThetaSource fixed_theta(const ControllerTheta& theta);

struct CavAgent {
  int id = 0;
  Origin origin = Origin::Main;
  VehicleState state;
  double t0 = 0.0;
  ControlInput prev_input;
  std::optional<HorizonSolution> prev_solution;
};

struct AgentStepResult {
  int cav_id = 0;
  ControlInput input;
  bool feasible = true;
  NlpStatus status = NlpStatus::Feasible;
  ControllerTheta theta;
  VehicleState state_before;
  VehicleState state_after;
  bool exited = false;
};

struct ConflictAssignment {
  std::optional<int> preceding;  // cav id of i_p
  std::optional<int> merging;    // cav id of i_c
};

/// Per-origin Poisson arrivals. An arrival waits in a queue while its
/// ellipse barrier against the lane's last CAV, or its merging barrier
/// against the other road's last CAV, is negative.
class ArrivalProcess {
 public:
  ArrivalProcess(const ScenarioConfig& cfg, const RngStreams& rng);

  /// Arrival events with time <= t, per origin, in time order. Each carries
  /// its initial speed.
  struct Event {
    double time;
    double speed;
  };
  std::vector<Event> pop_due(Origin o, double t);

  /// Arrivals that are due but not yet placed, oldest first.
  std::deque<Event>& pending(Origin o) { return pending_[static_cast<int>(o)]; }

 private:
  double rate_;
  double v0_min_;
  double v0_max_;
  std::mt19937_64 gaps_[2];
  std::mt19937_64 speeds_[2];
  double next_[2];
  std::deque<Event> pending_[2];
};

class World {
 public:
  World(const ScenarioConfig& cfg, ThetaSource theta);

  /// Places a CAV at the given progress along its route, centered and
  /// aligned. Returns its id.
  int add_agent(Origin o, double speed, double progress = 0.0, double lateral = 0.0);

  /// One control period: assign neighbors, solve in sequencing order,
  /// integrate, move crossings out of the control zone.
  void step();

  double time() const { return step_index_ * cfg_.mpc.dt; }
  int step_index() const { return step_index_; }
  const std::vector<CavAgent>& agents() const { return agents_; }
  const CavAgent* find(int id) const;
  /// Index of each active CAV in arrival order (0-based).
  std::map<int, int> indices() const;
  const std::vector<AgentStepResult>& last_results() const { return last_; }
  const RolloutLog& log() const { return log_; }
  RolloutLog& log() { return log_; }
  const ScenarioConfig& config() const { return cfg_; }
  int completed() const { return completed_; }

  std::map<int, ConflictAssignment> assign_conflicts() const;
  /// What the theta source sees for this CAV at the start of the next step.
  AgentContext context_for(int id) const;
  /// Order in which agents solve within a step.
  std::vector<int> solve_order() const;

  /// Realized barrier audit threshold.
  static constexpr double kAuditTolerance = -1e-6;

 private:
  ScenarioConfig cfg_;
  ThetaSource theta_;
  std::vector<CavAgent> agents_;  // active, arrival order
  std::vector<AgentStepResult> last_;
  RolloutLog log_;
  int next_id_ = 0;
  int step_index_ = 0;
  int completed_ = 0;
};

/// Spawns the arrivals due at the world's current time (deferred ones
/// included) while the target count has not been reached. Returns new ids.
std::vector<int> spawn_arrivals(ArrivalProcess& arrivals, World& world, int& spawned);

struct EpisodeResult {
  MetricsReport metrics;
  RolloutLog log;
};

EpisodeResult run_episode(const ScenarioConfig& cfg, const ThetaSource& theta);

/// Barrier values for one CAV at a set of states (NaN when inactive).
struct BarrierValues {
  double ellipse = std::numeric_limits<double>::quiet_NaN();
  double merge = std::numeric_limits<double>::quiet_NaN();
  double road_l = 0.0;
  double road_r = 0.0;
  double speed_max = 0.0;
  double speed_min = 0.0;
};

BarrierValues barrier_values(const ScenarioConfig& cfg, Origin o, const VehicleState& ego,
                             const std::optional<VehicleState>& preceding,
                             const std::optional<VehicleState>& merging);

}  // namespace mpccbf
