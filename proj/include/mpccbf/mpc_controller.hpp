#pragma once

#include <Eigen/Core>
#include <array>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mpccbf/barriers.hpp"
#include "mpccbf/dynamics.hpp"
#include "mpccbf/geometry.hpp"
#include "mpccbf/sqp_solver.hpp"

namespace mpccbf {

/// Learnable controller parameters, in a fixed layout:
///   [0..3]   objective weights for (v - v_des)^2, d_c^2, u^2, phi^2
///   [4..11]  class-K slopes: ellipse, merging, road-left (2), road-right (2),
///            speed-max, speed-min
///   [12..13] CLF rates: speed tracking, lane keeping
///   [14..15] slack weights: speed tracking, lane keeping
struct ControllerTheta {
  static constexpr int kSize = 16;
  std::array<double, kSize> values{};

  double w_speed() const { return values[0]; }
  double w_center() const { return values[1]; }
  double w_accel() const { return values[2]; }
  double w_steer() const { return values[3]; }
  std::span<const double> class_k(BarrierKind kind) const;
  double clf_rate(ClfKind kind) const { return values[kind == ClfKind::SpeedTracking ? 12 : 13]; }
  double slack_weight(ClfKind kind) const { return values[kind == ClfKind::SpeedTracking ? 14 : 15]; }

  /// Throws ValidationError unless every entry is finite and positive.
  void validate() const;

  static const std::array<std::string_view, kSize>& component_names();
  static ControllerTheta from_vector(const Eigen::VectorXd& v);
  Eigen::VectorXd to_vector() const;
};

/// The four fixed baselines, conservative to aggressive.
inline constexpr std::array<std::string_view, 4> kPresetNames{
    "conservative", "moderately_conservative", "moderately_aggressive", "aggressive"};

/// Default preset: every class-K slope set to the given value, the rest at
/// neutral weights.
ControllerTheta preset_theta(double class_k_slope);

/// Predicted motion of a neighbor over the horizon: samples[h] holds its
/// state at stage h and its rate over [h, h+1].
struct NeighborTrack {
  std::vector<NeighborSample> samples;

  const VehicleState& now() const { return samples.front().state; }
  /// Constant-velocity extrapolation with N+1 samples.
  static NeighborTrack coasting(const VehicleState& s, const VehicleParams& params, int horizon,
                                double dt);
  /// Samples along a planned control sequence rolled out from s.
  static NeighborTrack from_plan(const VehicleState& s, std::span<const ControlInput> controls,
                                 const VehicleParams& params, double dt);
};

struct NeighborView {
  std::optional<NeighborTrack> preceding;  // i_p
  std::optional<NeighborTrack> merging;    // i_c
};

struct MpcSettings {
  int horizon = 5;
  double dt = 0.2;
  double v_des = 15.0;
  VehicleParams vehicle;
  SafetyEllipseParams ellipse;
  double varphi = 1.2;
  double delta = 3.74;
  double boundary_radius = 1e4;
  // Also require b(x_h) >= 0 at the predicted states h = 1..N.
  bool state_constraints = true;
  SqpOptions sqp;
};

/// The lane the ego drives in and the road it merges with.
struct LaneContext {
  StraightRoute route;
  StraightRoute other;
};

/// Decision vector layout: x_0..x_N, u_0..u_{N-1}, e_0..e_{N-1}.
struct DecisionLayout {
  int horizon = 5;
  int x(int h) const { return 4 * h; }
  int u(int h) const { return 4 * (horizon + 1) + 2 * h; }
  int e(int h) const { return 4 * (horizon + 1) + 2 * horizon + 2 * h; }
  int size() const { return 4 * (horizon + 1) + 4 * horizon; }
};

/// One compiled MPC instance plus bookkeeping about which rows exist.
struct MpcProblem {
  NlpProblem nlp;
  DecisionLayout layout;
  std::vector<BarrierSpec> barriers;
  int hocbf_rows = 0;
  int clf_rows = 0;
  int state_rows = 0;
};

MpcProblem assemble_problem(const VehicleState& ego, const NeighborView& neighbors,
                            const ControllerTheta& theta, const LaneContext& lane,
                            const MpcSettings& settings);

/// The barrier set active for this ego and neighbor view, in row order.
std::vector<BarrierSpec> active_barriers(const NeighborView& neighbors, const LaneContext& lane,
                                         const MpcSettings& settings);

/// Neighbor sample a barrier needs at stage h (nullopt for ego-only kinds).
std::optional<NeighborSample> neighbor_for(const BarrierSpec& spec, const NeighborView& neighbors,
                                           int h);

struct HorizonSolution {
  std::vector<ControlInput> controls;
  std::vector<VehicleState> states;
  std::vector<Eigen::Vector2d> slacks;
  NlpStatus status = NlpStatus::MaxIterations;
  double objective = 0.0;
  double kkt_residual = 0.0;
  double constraint_violation = 0.0;
  int iterations = 0;
  bool used_elastic = false;
};

struct ControlOutcome {
  ControlInput input;
  HorizonSolution horizon;
  bool feasible = false;
};

/// Initial guess from a previous solution: controls shifted by one with the
/// last one repeated, states re-rolled from the measurement. Without a
/// previous solution: zero controls and a constant-speed rollout.
Eigen::VectorXd warm_start_shift(const std::optional<HorizonSolution>& prev, const VehicleState& ego,
                                 const MpcSettings& settings);

/// Solves the receding-horizon problem and returns its first control. When
/// the solve is not Feasible the elastic-phase control, clamped to the
/// actuator bounds, is returned and the flag is cleared.
ControlOutcome compute_control(const VehicleState& ego, const NeighborView& neighbors,
                               const ControllerTheta& theta, const LaneContext& lane,
                               const MpcSettings& settings,
                               const std::optional<HorizonSolution>& prev = std::nullopt);

/// Stage-0 HOCBF rows at the given state (diagnostics and safety checks).
std::vector<HocbfRow> stage0_rows(const VehicleState& ego, const NeighborView& neighbors,
                                  const ControllerTheta& theta, const LaneContext& lane,
                                  const MpcSettings& settings);

}  // namespace mpccbf
