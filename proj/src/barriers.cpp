#include "mpccbf/barriers.hpp"

#include <stdexcept>

namespace mpccbf {

std::string_view to_string(BarrierKind kind) {
  switch (kind) {
    case BarrierKind::RearEndEllipse: return "rear_end_ellipse";
    case BarrierKind::SafeMerging: return "safe_merging";
    case BarrierKind::RoadLeft: return "road_left";
    case BarrierKind::RoadRight: return "road_right";
    case BarrierKind::SpeedMax: return "speed_max";
    case BarrierKind::SpeedMin: return "speed_min";
  }
  return "unknown";
}

BarrierSpec BarrierSpec::rear_end(const SafetyEllipseParams& p) {
  if (!(p.a > 0.0 && p.b > 0.0)) throw ValidationError("ellipse weights must be positive");
  return {BarrierKind::RearEndEllipse, p};
}

BarrierSpec BarrierSpec::merging(const MergingParams& p) {
  if (!(p.cz_length > 0.0)) throw ValidationError("merging: control-zone length must be positive");
  return {BarrierKind::SafeMerging, p};
}

BarrierSpec BarrierSpec::road_left(const BoundaryCircle& c) {
  if (!(c.radius > 0.0)) throw ValidationError("road boundary radius must be positive");
  return {BarrierKind::RoadLeft, RoadBoundaryParams{c.center, c.radius, BoundarySide::Left}};
}

BarrierSpec BarrierSpec::road_right(const BoundaryCircle& c) {
  if (!(c.radius > 0.0)) throw ValidationError("road boundary radius must be positive");
  return {BarrierKind::RoadRight, RoadBoundaryParams{c.center, c.radius, BoundarySide::Right}};
}

BarrierSpec BarrierSpec::speed_max(double v_max) {
  return {BarrierKind::SpeedMax, SpeedLimitParams{v_max}};
}

BarrierSpec BarrierSpec::speed_min(double v_min) {
  return {BarrierKind::SpeedMin, SpeedLimitParams{v_min}};
}

double BarrierSpec::nominal_scale() const {
  if (kind == BarrierKind::RoadLeft || kind == BarrierKind::RoadRight)
    return 1.0 / (2.0 * std::get<RoadBoundaryParams>(params).radius);
  return 1.0;
}

NeighborSample NeighborSample::coasting(const VehicleState& s, const VehicleParams& params) {
  return {s, eval_derivative(s, ControlInput{}, params)};
}

namespace {

void require_other(const BarrierSpec& spec, bool has_other) {
  if (spec.needs_other() && !has_other)
    throw std::invalid_argument(std::string(to_string(spec.kind)) + " needs a neighbor state");
}

}  // namespace

double eval_barrier(const BarrierSpec& spec, const VehicleState& ego,
                    const std::optional<VehicleState>& other, EllipseSpeedMode mode) {
  require_other(spec, other.has_value());
  const NeighborSample sample{other.value_or(VehicleState{}), StateDerivative::Zero()};
  return detail::barrier_terms<double>(spec, ego.vec(), &sample, 1.0, mode).b;
}

LieDerivatives lie_derivatives(const BarrierSpec& spec, const VehicleState& ego,
                               const std::optional<NeighborSample>& other,
                               const VehicleParams& params, EllipseSpeedMode mode) {
  require_other(spec, other.has_value());
  const NeighborSample sample = other.value_or(NeighborSample{});
  const auto t = detail::barrier_terms<double>(spec, ego.vec(), &sample, params.wheelbase(), mode);
  LieDerivatives out;
  out.order = relative_degree(spec);
  out.b = t.b;
  out.lf_b = t.lf_b;
  out.lg_b = t.lg_b;
  if (out.order == 2) {
    out.lf2_b = t.lf2_b;
    out.lglf_b = t.lglf_b;
  }
  return out;
}

int relative_degree(const BarrierSpec& spec) {
  switch (spec.kind) {
    case BarrierKind::RoadLeft:
    case BarrierKind::RoadRight: return 2;
    default: return 1;
  }
}

HocbfRow build_hocbf_row(const BarrierSpec& spec, const VehicleState& ego,
                         const std::optional<NeighborSample>& other,
                         std::span<const double> theta_c, const VehicleParams& params,
                         EllipseSpeedMode mode) {
  const int m = relative_degree(spec);
  if (static_cast<int>(theta_c.size()) != m)
    throw std::invalid_argument("class-K parameter count must equal the relative degree");
  for (double th : theta_c)
    if (!(th > 0.0)) throw std::invalid_argument("class-K slopes must be positive");

  const LieDerivatives ld = lie_derivatives(spec, ego, other, params, mode);
  HocbfRow row;
  if (m == 1) {
    row.components.lfm_b = ld.lf_b;
    row.components.lglfm1_b = ld.lg_b;
    row.components.s_term = 0.0;
    row.components.alpha_term = ClassKFunction{theta_c[0]}(ld.b);
  } else {
    const double zeta1 = ld.lf_b + ClassKFunction{theta_c[0]}(ld.b);
    row.components.lfm_b = ld.lf2_b;
    row.components.lglfm1_b = ld.lglf_b;
    row.components.s_term = theta_c[0] * ld.lf_b;
    row.components.alpha_term = ClassKFunction{theta_c[1]}(zeta1);
  }
  row.grad_u = row.components.lglfm1_b;
  row.constant = row.components.lfm_b + row.components.s_term + row.components.alpha_term;
  return row;
}

ClfSpec ClfSpec::speed_tracking(double v_des) {
  ClfSpec c;
  c.kind = ClfKind::SpeedTracking;
  c.v_des = v_des;
  return c;
}

ClfSpec ClfSpec::lane_keeping(const StraightRoute& route) {
  ClfSpec c;
  c.kind = ClfKind::LaneKeeping;
  c.route = route;
  return c;
}

double eval_clf(const ClfSpec& clf, const VehicleState& ego) {
  if (clf.kind == ClfKind::SpeedTracking) {
    const double err = ego.v - clf.v_des;
    return err * err;
  }
  const double d = clf.route.offset(ego.x, ego.y);
  return d * d;
}

ClfRow build_clf_row(const ClfSpec& clf, const VehicleState& ego, double theta,
                     const VehicleParams& /*params*/, int slack_index) {
  if (!(theta > 0.0)) throw std::invalid_argument("CLF rate must be positive");
  const auto r = detail::clf_row<double>(clf, ego.vec(), theta);
  return {r.grad_u, r.constant, slack_index};
}

}  // namespace mpccbf
