#include "mpccbf/mpc_controller.hpp"

#include <unsupported/Eigen/AutoDiff>
#include <cmath>
#include <limits>

#include "mpccbf/errors.hpp"

namespace mpccbf {
namespace {

using AD = Eigen::AutoDiffScalar<Eigen::Vector4d>;
using ADState = Eigen::Matrix<AD, 4, 1>;

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr EllipseSpeedMode kMode = EllipseSpeedMode::Floored;

ADState seed(const Eigen::Vector4d& x) {
  ADState s;
  for (int i = 0; i < 4; ++i) s[i] = AD(x[i], 4, i);
  return s;
}

// Row value grad_u(x).u + constant(x) and its partials in x and u.
struct LinearRow {
  double value = 0.0;
  Eigen::Vector4d dx = Eigen::Vector4d::Zero();
  Eigen::Vector2d du = Eigen::Vector2d::Zero();
};

LinearRow linear_row(const detail::RowT<AD>& r, const Eigen::Vector2d& u) {
  LinearRow out;
  out.du = {r.grad_u[0].value(), r.grad_u[1].value()};
  out.value = out.du.dot(u) + r.constant.value();
  out.dx = r.grad_u[0].derivatives() * u[0] + r.grad_u[1].derivatives() * u[1] + r.constant.derivatives();
  return out;
}

int theta_offset(BarrierKind kind) {
  switch (kind) {
    case BarrierKind::RearEndEllipse: return 4;
    case BarrierKind::SafeMerging: return 5;
    case BarrierKind::RoadLeft: return 6;
    case BarrierKind::RoadRight: return 8;
    case BarrierKind::SpeedMax: return 10;
    case BarrierKind::SpeedMin: return 11;
  }
  return 4;
}

}  // namespace

std::span<const double> ControllerTheta::class_k(BarrierKind kind) const {
  const int n = (kind == BarrierKind::RoadLeft || kind == BarrierKind::RoadRight) ? 2 : 1;
  return std::span<const double>(values).subspan(theta_offset(kind), n);
}

void ControllerTheta::validate() const {
  for (int i = 0; i < kSize; ++i)
    if (!std::isfinite(values[i]) || !(values[i] > 0.0))
      throw ValidationError("theta component " + std::string(component_names()[i]) +
                            " must be finite and positive");
}

const std::array<std::string_view, ControllerTheta::kSize>& ControllerTheta::component_names() {
  static const std::array<std::string_view, kSize> names{
      "w_speed",        "w_center",       "w_accel",     "w_steer",     "k_ellipse",  "k_merge",
      "k_road_left_1",  "k_road_left_2",  "k_road_right_1", "k_road_right_2", "k_speed_max",
      "k_speed_min",    "clf_speed",      "clf_lane",    "slack_speed", "slack_lane"};
  return names;
}

ControllerTheta ControllerTheta::from_vector(const Eigen::VectorXd& v) {
  if (v.size() != kSize) throw ShapeMismatch("theta vector must have 16 entries");
  ControllerTheta t;
  for (int i = 0; i < kSize; ++i) t.values[i] = v[i];
  return t;
}

Eigen::VectorXd ControllerTheta::to_vector() const {
  return Eigen::Map<const Eigen::VectorXd>(values.data(), kSize);
}

ControllerTheta preset_theta(double class_k_slope) {
  ControllerTheta t;
  t.values = {1.0, 1.0, 1.0, 1.0, 0, 0, 0, 0, 0, 0, 0, 0, 1.0, 1.0, 10.0, 10.0};
  for (int i = 4; i <= 11; ++i) t.values[i] = class_k_slope;
  return t;
}

NeighborTrack NeighborTrack::coasting(const VehicleState& s, const VehicleParams& params, int horizon,
                                      double dt) {
  const std::vector<ControlInput> zero(horizon);
  return from_plan(s, zero, params, dt);
}

NeighborTrack NeighborTrack::from_plan(const VehicleState& s, std::span<const ControlInput> controls,
                                       const VehicleParams& params, double dt) {
  NeighborTrack t;
  const std::vector<VehicleState> states = rollout(s, controls, params, dt);
  for (std::size_t h = 0; h < states.size(); ++h) {
    const ControlInput in = h < controls.size() ? controls[h] : ControlInput{};
    t.samples.push_back({states[h], eval_derivative(states[h], in, params)});
  }
  return t;
}

std::vector<BarrierSpec> active_barriers(const NeighborView& neighbors, const LaneContext& lane,
                                         const MpcSettings& s) {
  std::vector<BarrierSpec> out;
  if (neighbors.preceding) out.push_back(BarrierSpec::rear_end(s.ellipse));
  if (neighbors.merging) {
    MergingParams mp;
    mp.varphi = s.varphi;
    mp.delta = s.delta;
    mp.cz_length = lane.route.length;
    mp.ego_route = lane.route;
    mp.other_route = lane.other;
    out.push_back(BarrierSpec::merging(mp));
  }
  out.push_back(BarrierSpec::road_left(left_boundary_circle(lane.route, s.boundary_radius)));
  out.push_back(BarrierSpec::road_right(right_boundary_circle(lane.route, s.boundary_radius)));
  out.push_back(BarrierSpec::speed_max(s.vehicle.bounds.v_max));
  out.push_back(BarrierSpec::speed_min(s.vehicle.bounds.v_min));
  return out;
}

std::optional<NeighborSample> neighbor_for(const BarrierSpec& spec, const NeighborView& neighbors,
                                           int h) {
  const std::optional<NeighborTrack>* track = nullptr;
  if (spec.kind == BarrierKind::RearEndEllipse) track = &neighbors.preceding;
  if (spec.kind == BarrierKind::SafeMerging) track = &neighbors.merging;
  if (!track || !track->has_value()) return std::nullopt;
  const auto& samples = (*track)->samples;
  if (h >= static_cast<int>(samples.size()))
    throw ShapeMismatch("neighbor track shorter than the horizon");
  return samples[h];
}

MpcProblem assemble_problem(const VehicleState& ego, const NeighborView& neighbors,
                            const ControllerTheta& theta, const LaneContext& lane,
                            const MpcSettings& s) {
  theta.validate();
  if (s.horizon < 1) throw ValidationError("horizon must be at least 1");
  const double prog = lane.route.progress(ego.x, ego.y);
  if (!(prog >= -1e-6 && prog <= lane.route.length + 1e-6))
    throw GeometryError("ego is outside the control zone of its route");

  const int N = s.horizon;
  MpcProblem mp;
  mp.layout.horizon = N;
  mp.barriers = active_barriers(neighbors, lane, s);
  const DecisionLayout L = mp.layout;
  const int n = L.size();
  const double wb = s.vehicle.wheelbase();

  // Objective.
  NlpProblem& p = mp.nlp;
  p.H = Eigen::MatrixXd::Zero(n, n);
  p.g = Eigen::VectorXd::Zero(n);
  p.f0 = 0.0;
  const Eigen::Vector2d nrm = lane.route.left_normal();
  const double c_off = nrm.dot(lane.route.entry);
  auto add_state_cost = [&](int h) {
    const int ix = L.x(h);
    p.H(ix + 3, ix + 3) += 2.0 * theta.w_speed();
    p.g[ix + 3] += -2.0 * theta.w_speed() * s.v_des;
    p.f0 += theta.w_speed() * s.v_des * s.v_des;
    p.H.block<2, 2>(ix, ix) += 2.0 * theta.w_center() * nrm * nrm.transpose();
    p.g.segment<2>(ix) += -2.0 * theta.w_center() * c_off * nrm;
    p.f0 += theta.w_center() * c_off * c_off;
  };
  for (int h = 0; h < N; ++h) {
    add_state_cost(h);
    p.H(L.u(h), L.u(h)) += 2.0 * theta.w_accel();
    p.H(L.u(h) + 1, L.u(h) + 1) += 2.0 * theta.w_steer();
    p.H(L.e(h), L.e(h)) += 2.0 * theta.slack_weight(ClfKind::SpeedTracking);
    p.H(L.e(h) + 1, L.e(h) + 1) += 2.0 * theta.slack_weight(ClfKind::LaneKeeping);
  }
  add_state_cost(N);

  // Box: actuator limits on the controls only.
  p.lower = Eigen::VectorXd::Constant(n, -kInf);
  p.upper = Eigen::VectorXd::Constant(n, kInf);
  const ControlBounds& cb = s.vehicle.bounds;
  for (int h = 0; h < N; ++h) {
    p.lower[L.u(h)] = cb.u_min;
    p.upper[L.u(h)] = cb.u_max;
    p.lower[L.u(h) + 1] = cb.phi_min;
    p.upper[L.u(h) + 1] = cb.phi_max;
  }

  // Dynamics and initial state.
  p.num_eq = 4 * (N + 1);
  const Eigen::Vector4d x_meas = ego.vec();
  const VehicleParams vp = s.vehicle;
  const double dt = s.dt;
  p.eq_fn = [L, N, n, x_meas, vp, dt](const Eigen::VectorXd& z, Eigen::VectorXd& c, Eigen::MatrixXd& J) {
    c.resize(4 * (N + 1));
    J = Eigen::MatrixXd::Zero(4 * (N + 1), n);
    c.head<4>() = z.segment<4>(L.x(0)) - x_meas;
    J.block<4, 4>(0, L.x(0)).setIdentity();
    for (int h = 0; h < N; ++h) {
      const VehicleState xh = VehicleState::from(z.segment<4>(L.x(h)));
      const ControlInput uh = ControlInput::from(z.segment<2>(L.u(h)));
      const int r = 4 * (h + 1);
      c.segment<4>(r) = z.segment<4>(L.x(h + 1)) - step_rk4(xh, uh, vp, dt).vec();
      const StepJacobians jac = jacobians(xh, uh, vp, dt);
      J.block<4, 4>(r, L.x(h + 1)).setIdentity();
      J.block<4, 4>(r, L.x(h)) = -jac.A;
      J.block<4, 2>(r, L.u(h)) = -jac.B;
    }
  };

  // Inequalities: HOCBF rows per stage, CLF rows per stage, then state rows.
  const int nb = static_cast<int>(mp.barriers.size());
  mp.hocbf_rows = nb * N;
  mp.clf_rows = 2 * N;
  mp.state_rows = s.state_constraints ? nb * N : 0;
  p.num_ineq = mp.hocbf_rows + mp.clf_rows + mp.state_rows;

  std::vector<std::vector<std::optional<NeighborSample>>> nbr(nb);
  for (int j = 0; j < nb; ++j)
    for (int h = 0; h <= N; ++h) nbr[j].push_back(neighbor_for(mp.barriers[j], neighbors, h));
  const std::vector<BarrierSpec> barriers = mp.barriers;
  const ClfSpec clf_speed = ClfSpec::speed_tracking(s.v_des);
  const ClfSpec clf_lane = ClfSpec::lane_keeping(lane.route);
  const bool with_state = s.state_constraints;
  const int m = p.num_ineq;

  p.ineq_fn = [=](const Eigen::VectorXd& z, Eigen::VectorXd& c, Eigen::MatrixXd& J) {
    c.resize(m);
    J = Eigen::MatrixXd::Zero(m, n);
    int r = 0;
    for (int h = 0; h < N; ++h) {
      const ADState xa = seed(z.segment<4>(L.x(h)));
      const Eigen::Vector2d u = z.segment<2>(L.u(h));
      for (int j = 0; j < nb; ++j) {
        const NeighborSample* other = nbr[j][h] ? &*nbr[j][h] : nullptr;
        const auto row = detail::hocbf_row<AD>(barriers[j], xa, other,
                                               theta.class_k(barriers[j].kind), wb, kMode);
        const LinearRow lr = linear_row(row, u);
        const double sc = barriers[j].nominal_scale();
        c[r] = sc * lr.value;
        J.block<1, 4>(r, L.x(h)) = sc * lr.dx.transpose();
        J.block<1, 2>(r, L.u(h)) = sc * lr.du.transpose();
        ++r;
      }
    }
    for (int h = 0; h < N; ++h) {
      const ADState xa = seed(z.segment<4>(L.x(h)));
      const Eigen::Vector2d u = z.segment<2>(L.u(h));
      const ClfSpec* clfs[2] = {&clf_speed, &clf_lane};
      for (int k = 0; k < 2; ++k) {
        const auto row = detail::clf_row<AD>(*clfs[k], xa, theta.clf_rate(clfs[k]->kind));
        const LinearRow lr = linear_row(row, u);
        c[r] = z[L.e(h) + k] - lr.value;
        J.block<1, 4>(r, L.x(h)) = -lr.dx.transpose();
        J.block<1, 2>(r, L.u(h)) = -lr.du.transpose();
        J(r, L.e(h) + k) = 1.0;
        ++r;
      }
    }
    if (with_state) {
      for (int h = 1; h <= N; ++h) {
        const ADState xa = seed(z.segment<4>(L.x(h)));
        for (int j = 0; j < nb; ++j) {
          const NeighborSample* other = nbr[j][h] ? &*nbr[j][h] : nullptr;
          const auto t = detail::barrier_terms<AD>(barriers[j], xa, other, wb, kMode);
          const double sc = barriers[j].nominal_scale();
          c[r] = sc * t.b.value();
          J.block<1, 4>(r, L.x(h)) = sc * t.b.derivatives().transpose();
          ++r;
        }
      }
    }
  };
  return mp;
}

Eigen::VectorXd warm_start_shift(const std::optional<HorizonSolution>& prev, const VehicleState& ego,
                                 const MpcSettings& s) {
  const int N = s.horizon;
  const DecisionLayout L{N};
  std::vector<ControlInput> controls(N);
  std::vector<Eigen::Vector2d> slacks(N, Eigen::Vector2d::Zero());
  if (prev && static_cast<int>(prev->controls.size()) == N) {
    for (int h = 0; h < N; ++h) {
      const int src = std::min(h + 1, N - 1);
      controls[h] = s.vehicle.bounds.clamp(prev->controls[src]);
      if (static_cast<int>(prev->slacks.size()) == N) slacks[h] = prev->slacks[src];
    }
  }
  const std::vector<VehicleState> states = rollout(ego, controls, s.vehicle, s.dt);
  Eigen::VectorXd z(L.size());
  for (int h = 0; h <= N; ++h) z.segment<4>(L.x(h)) = states[h].vec();
  for (int h = 0; h < N; ++h) {
    z.segment<2>(L.u(h)) = controls[h].vec();
    z.segment<2>(L.e(h)) = slacks[h];
  }
  return z;
}

ControlOutcome compute_control(const VehicleState& ego, const NeighborView& neighbors,
                               const ControllerTheta& theta, const LaneContext& lane,
                               const MpcSettings& s, const std::optional<HorizonSolution>& prev) {
  const MpcProblem mp = assemble_problem(ego, neighbors, theta, lane, s);
  const Eigen::VectorXd z0 = warm_start_shift(prev, ego, s);
  const NlpSolution sol = solve_nlp_sqp(mp.nlp, z0, s.sqp);

  const DecisionLayout& L = mp.layout;
  ControlOutcome out;
  HorizonSolution& hs = out.horizon;
  for (int h = 0; h < L.horizon; ++h) {
    hs.controls.push_back(s.vehicle.bounds.clamp(ControlInput::from(sol.z.segment<2>(L.u(h)))));
    hs.slacks.push_back(sol.z.segment<2>(L.e(h)));
  }
  for (int h = 0; h <= L.horizon; ++h) hs.states.push_back(VehicleState::from(sol.z.segment<4>(L.x(h))));
  hs.status = sol.status;
  hs.objective = sol.objective;
  hs.kkt_residual = sol.kkt_residual;
  hs.constraint_violation = sol.constraint_violation;
  hs.iterations = sol.iterations;
  hs.used_elastic = sol.used_elastic;
  out.input = hs.controls.front();
  out.feasible = sol.status == NlpStatus::Feasible;
  return out;
}

std::vector<HocbfRow> stage0_rows(const VehicleState& ego, const NeighborView& neighbors,
                                  const ControllerTheta& theta, const LaneContext& lane,
                                  const MpcSettings& s) {
  std::vector<HocbfRow> rows;
  for (const BarrierSpec& spec : active_barriers(neighbors, lane, s)) {
    HocbfRow row = build_hocbf_row(spec, ego, neighbor_for(spec, neighbors, 0), theta.class_k(spec.kind),
                                   s.vehicle, kMode);
    const double sc = spec.nominal_scale();
    row.grad_u *= sc;
    row.constant *= sc;
    rows.push_back(row);
  }
  return rows;
}

}  // namespace mpccbf
