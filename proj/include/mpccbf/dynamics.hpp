#pragma once

#include <Eigen/Core>
#include <cmath>
#include <numbers>
#include <span>
#include <vector>

namespace mpccbf {

/// Kinematic bicycle state. Heading is kept unwrapped.
struct VehicleState {
  double x = 0.0;    // longitudinal position [m]
  double y = 0.0;    // lateral position [m]
  double psi = 0.0;  // heading [rad]
  double v = 0.0;    // speed [m/s]

  Eigen::Vector4d vec() const { return {x, y, psi, v}; }
  static VehicleState from(const Eigen::Vector4d& s) { return {s[0], s[1], s[2], s[3]}; }
};

struct ControlInput {
  double u = 0.0;    // acceleration [m/s^2]
  double phi = 0.0;  // steering angle [rad]

  Eigen::Vector2d vec() const { return {u, phi}; }
  static ControlInput from(const Eigen::Vector2d& c) { return {c[0], c[1]}; }
};

struct ControlBounds {
  double u_min = -5.0;
  double u_max = 4.0;
  double phi_min = -std::numbers::pi / 4.0;
  double phi_max = std::numbers::pi / 4.0;
  double v_min = 0.0;
  double v_max = 20.0;

  ControlInput clamp(const ControlInput& in) const;
};

struct VehicleParams {
  double l_f = 1.0;
  double l_r = 1.0;
  ControlBounds bounds;

  double wheelbase() const { return l_f + l_r; }
  /// Throws ValidationError when a parameter invariant is broken.
  void validate() const;
};

using StateDerivative = Eigen::Vector4d;

/// f(x) + g(x) u for the kinematic bicycle.
StateDerivative eval_derivative(const VehicleState& state, const ControlInput& input,
                                const VehicleParams& params);

/// One classical RK4 step with the input held over the step.
VehicleState step_rk4(const VehicleState& state, const ControlInput& input,
                      const VehicleParams& params, double dt);

/// States x_0..x_N obtained by chaining step_rk4 over the inputs.
std::vector<VehicleState> rollout(const VehicleState& state, std::span<const ControlInput> inputs,
                                  const VehicleParams& params, double dt);

struct StepJacobians {
  Eigen::Matrix4d A;              // d step / d state
  Eigen::Matrix<double, 4, 2> B;  // d step / d input
};

/// Exact Jacobians of step_rk4, obtained by forward-mode differentiation
/// through the RK4 stages (no finite differencing).
StepJacobians jacobians(const VehicleState& state, const ControlInput& input,
                        const VehicleParams& params, double dt);

namespace detail {

template <class T>
Eigen::Matrix<T, 4, 1> bicycle_rate(const Eigen::Matrix<T, 4, 1>& s, const Eigen::Matrix<T, 2, 1>& c,
                                    double wheelbase) {
  using std::cos;
  using std::sin;
  Eigen::Matrix<T, 4, 1> d;
  d[0] = s[3] * cos(s[2]);
  d[1] = s[3] * sin(s[2]);
  d[2] = c[1] * s[3] / wheelbase;
  d[3] = c[0];
  return d;
}

template <class T>
Eigen::Matrix<T, 4, 1> rk4(const Eigen::Matrix<T, 4, 1>& s, const Eigen::Matrix<T, 2, 1>& c,
                           double wheelbase, double dt) {
  const Eigen::Matrix<T, 4, 1> k1 = bicycle_rate<T>(s, c, wheelbase);
  const Eigen::Matrix<T, 4, 1> k2 = bicycle_rate<T>(s + (0.5 * dt) * k1, c, wheelbase);
  const Eigen::Matrix<T, 4, 1> k3 = bicycle_rate<T>(s + (0.5 * dt) * k2, c, wheelbase);
  const Eigen::Matrix<T, 4, 1> k4 = bicycle_rate<T>(s + dt * k3, c, wheelbase);
  return s + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

}  // namespace detail
}  // namespace mpccbf
