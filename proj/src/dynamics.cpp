#include "mpccbf/dynamics.hpp"

#include <algorithm>
#include <unsupported/Eigen/AutoDiff>

#include "mpccbf/errors.hpp"

namespace mpccbf {

ControlInput ControlBounds::clamp(const ControlInput& in) const {
  return {std::clamp(in.u, u_min, u_max), std::clamp(in.phi, phi_min, phi_max)};
}

void VehicleParams::validate() const {
  if (!(l_f + l_r > 0.0)) throw ValidationError("vehicle: l_f + l_r must be positive");
  if (!(bounds.u_min < 0.0 && bounds.u_max > 0.0))
    throw ValidationError("vehicle: u_min < 0 < u_max required");
  if (!(bounds.phi_min < 0.0 && bounds.phi_max > 0.0))
    throw ValidationError("vehicle: phi_min < 0 < phi_max required");
  if (!(bounds.v_min >= 0.0 && bounds.v_min < bounds.v_max))
    throw ValidationError("vehicle: 0 <= v_min < v_max required");
}

StateDerivative eval_derivative(const VehicleState& state, const ControlInput& input,
                                const VehicleParams& params) {
  return detail::bicycle_rate<double>(state.vec(), input.vec(), params.wheelbase());
}

VehicleState step_rk4(const VehicleState& state, const ControlInput& input,
                      const VehicleParams& params, double dt) {
  return VehicleState::from(detail::rk4<double>(state.vec(), input.vec(), params.wheelbase(), dt));
}

std::vector<VehicleState> rollout(const VehicleState& state, std::span<const ControlInput> inputs,
                                  const VehicleParams& params, double dt) {
  std::vector<VehicleState> out;
  out.reserve(inputs.size() + 1);
  out.push_back(state);
  for (const auto& in : inputs) out.push_back(step_rk4(out.back(), in, params, dt));
  return out;
}

StepJacobians jacobians(const VehicleState& state, const ControlInput& input,
                        const VehicleParams& params, double dt) {
  using Dual = Eigen::AutoDiffScalar<Eigen::Matrix<double, 6, 1>>;
  Eigen::Matrix<Dual, 4, 1> s;
  Eigen::Matrix<Dual, 2, 1> c;
  const Eigen::Vector4d s0 = state.vec();
  const Eigen::Vector2d c0 = input.vec();
  for (int i = 0; i < 4; ++i) s[i] = Dual(s0[i], 6, i);
  for (int i = 0; i < 2; ++i) c[i] = Dual(c0[i], 6, 4 + i);

  const Eigen::Matrix<Dual, 4, 1> next = detail::rk4<Dual>(s, c, params.wheelbase(), dt);
  StepJacobians jac;
  for (int r = 0; r < 4; ++r) {
    jac.A.row(r) = next[r].derivatives().head<4>().transpose();
    jac.B.row(r) = next[r].derivatives().tail<2>().transpose();
  }
  return jac;
}

}  // namespace mpccbf
