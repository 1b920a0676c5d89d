#pragma once

#include <Eigen/Core>
#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <vector>

#include "mpccbf/merge_sim.hpp"
#include "mpccbf/sac.hpp"

namespace mpccbf {

inline constexpr int kObservationSize = 14;

/// Affine ranges mapped onto [-1, 1] per raw quantity.
struct ObsRanges {
  double x_min = -110.0, x_max = 10.0;
  double y_min = -36.0, y_max = 10.0;
  double psi_min = -1.5707963267948966, psi_max = 1.5707963267948966;
  double v_min = 0.0, v_max = 20.0;
  double u_min = -5.0, u_max = 4.0;
  double phi_min = -0.7853981633974483, phi_max = 0.7853981633974483;

  static ObsRanges for_scenario(const ScenarioConfig& cfg);
  void validate() const;
};

/// Maps value in [lo, hi] to [-1, 1], clamped.
double normalize(double value, double lo, double hi);

/// ego (4), previous control (2), i_p (4), i_c (4). Absent neighbors are
/// replaced by the given stand-ins before normalization.
Eigen::VectorXd build_observation(const VehicleState& ego, const ControlInput& prev,
                                  const std::optional<VehicleState>& preceding,
                                  const std::optional<VehicleState>& merging,
                                  const VehicleState& virtual_preceding,
                                  const VehicleState& virtual_merging, const ObsRanges& ranges);

/// Stand-in for a missing neighbor on a route: parked at its exit (the
/// merging point) and moving at v_des.
VehicleState virtual_vehicle(const StraightRoute& route, double v_des);

Eigen::VectorXd observe(const AgentContext& ctx, const ObsRanges& ranges);

struct ThetaBounds {
  std::array<double, ControllerTheta::kSize> lower{};
  std::array<double, ControllerTheta::kSize> upper{};

  /// A factor of 4 either side of the neutral preset: objective weights,
  /// class-K slopes and CLF rates in [0.25, 4], slack weights in [2.5, 40].
  static ThetaBounds defaults();
  void validate() const;
};

/// Log-space affine map from (-1, 1)^16 to [lower, upper].
ControllerTheta map_action_to_theta(const Eigen::VectorXd& raw, const ThetaBounds& bounds);

struct RewardWeights {
  std::array<double, 5> beta{0.25, 0.25, 0.25, 0.1, 0.15};
  double infeasible_penalty = 1e3;
  double v_des = 15.0;

  void validate() const;
};

struct RewardInput {
  VehicleState state;
  ControlInput input;
  bool feasible = true;
  double psi_des = 0.0;
  double fuel_rate = 0.0;
};

double reward(const RewardInput& in, const RewardWeights& w);

/// The full merge scenario with every CAV driven by the action supplied
/// for it, so one shared policy sees the traffic it is evaluated in. Each
/// episode draws a fresh arrival seed.
class FleetTrainingEnv {
 public:
  FleetTrainingEnv(const ScenarioConfig& cfg, const ObsRanges& ranges, const ThetaBounds& bounds,
                   const RewardWeights& weights, std::uint64_t seed);
  FleetTrainingEnv(const FleetTrainingEnv&) = delete;
  FleetTrainingEnv& operator=(const FleetTrainingEnv&) = delete;

  /// Observations of the CAVs active at the start of the episode.
  std::map<int, Eigen::VectorXd> reset();

  struct Transition {
    int cav_id = 0;
    double reward = 0.0;
    bool feasible = true;
    bool done = false;  // crossed the merging point
    Eigen::VectorXd next_obs;
  };
  struct StepOutcome {
    std::vector<Transition> transitions;
    std::map<int, Eigen::VectorXd> obs;  // every CAV active for the next step
    bool episode_over = false;           // target reached or time cap
  };
  /// One control period. Every active CAV needs an action.
  StepOutcome step(const std::map<int, Eigen::VectorXd>& raw_actions);

  const World& world() const { return *world_; }

 private:
  std::map<int, Eigen::VectorXd> observe_all() const;

  ScenarioConfig cfg_;
  ObsRanges ranges_;
  ThetaBounds bounds_;
  RewardWeights weights_;
  std::mt19937_64 rng_;
  std::unique_ptr<World> world_;
  std::unique_ptr<ArrivalProcess> arrivals_;
  int spawned_ = 0;
  std::map<int, ControllerTheta> theta_;
};

/// One training episode. reward is the mean return per CAV.
struct LearningCurveRow {
  long step = 0;
  int episode = 0;
  double reward = 0.0;
  double critic_loss = 0.0;
  double actor_loss = 0.0;
  int infeasible_count = 0;
};

struct TrainingSetup {
  ScenarioConfig scenario;
  SacHyperparams sac = SacHyperparams::desk_scale();
  RewardWeights reward;
  ThetaBounds bounds = ThetaBounds::defaults();
  /// Training episodes stop here even if the scenario cap is later, so a
  /// deadlocked world cannot flood the replay buffer.
  double episode_time_cap = 60.0;
};

struct TrainResult {
  GaussianPolicy policy;
  ObsRanges ranges;
  std::vector<LearningCurveRow> curve;
};

using TrainProgress = std::function<void(const LearningCurveRow&)>;

TrainResult train_policy(const TrainingSetup& setup, std::uint64_t seed, const TrainProgress& progress = {});

/// Deterministic policy shared by every CAV.
ThetaSource policy_theta(std::shared_ptr<const GaussianPolicy> policy, const ObsRanges& ranges,
                         const ThetaBounds& bounds);

/// One-step bandit: zero observation, 1-d action, reward -(a - target)^2.
/// Returns the deterministic action after training.
double train_toy(const SacHyperparams& hyper, long steps, std::uint64_t seed, double target = 0.5);

}  // namespace mpccbf
