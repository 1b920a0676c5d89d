#pragma once

#include <Eigen/Core>
#include <cmath>
#include <optional>
#include <span>
#include <string_view>
#include <variant>

#include "mpccbf/dynamics.hpp"
#include "mpccbf/errors.hpp"
#include "mpccbf/geometry.hpp"

namespace mpccbf {

enum class BarrierKind { RearEndEllipse, SafeMerging, RoadLeft, RoadRight, SpeedMax, SpeedMin };

std::string_view to_string(BarrierKind kind);

/// Linear class-K function alpha(b) = theta * b.
struct ClassKFunction {
  double theta = 1.0;
  double operator()(double b) const { return theta * b; }
};

struct SafetyEllipseParams {
  double a = 1.8;  // longitudinal axis per unit speed [s]
  double b = 0.6;  // lateral axis per unit speed [s]
  double v_floor = 0.1;
};

/// Safe merging against the vehicle merging ahead from the other road.
/// The progress map is Phi(s) = varphi * s / L on the ego route.
struct MergingParams {
  double varphi = 1.2;
  double delta = 3.74;
  double cz_length = 100.0;
  StraightRoute ego_route;
  StraightRoute other_route;

  double progress_map(double s) const { return varphi * s / cz_length; }
};

enum class BoundarySide { Left, Right };

struct RoadBoundaryParams {
  Eigen::Vector2d center{0.0, 0.0};
  double radius = 1.0;
  BoundarySide side = BoundarySide::Left;
};

struct SpeedLimitParams {
  double limit = 0.0;
};

struct BarrierSpec {
  BarrierKind kind = BarrierKind::SpeedMax;
  std::variant<SafetyEllipseParams, MergingParams, RoadBoundaryParams, SpeedLimitParams> params;

  static BarrierSpec rear_end(const SafetyEllipseParams& p);
  static BarrierSpec merging(const MergingParams& p);
  static BarrierSpec road_left(const BoundaryCircle& c);
  static BarrierSpec road_right(const BoundaryCircle& c);
  static BarrierSpec speed_max(double v_max);
  static BarrierSpec speed_min(double v_min);

  bool needs_other() const {
    return kind == BarrierKind::RearEndEllipse || kind == BarrierKind::SafeMerging;
  }
  /// Positive factor that brings the barrier to roughly metric units.
  double nominal_scale() const;
};

/// Whether the ellipse barrier refuses (Strict) or saturates (Floored) at
/// speeds below its floor.
enum class EllipseSpeedMode { Strict, Floored };

/// A neighbor's state together with its time derivative over the current
/// interval (constant-velocity motion when the rate is f(x) alone).
struct NeighborSample {
  VehicleState state;
  StateDerivative rate = StateDerivative::Zero();

  static NeighborSample coasting(const VehicleState& s, const VehicleParams& params);
};

/// Barrier value oriented so that b >= 0 is safe for every kind.
double eval_barrier(const BarrierSpec& spec, const VehicleState& ego,
                    const std::optional<VehicleState>& other,
                    EllipseSpeedMode mode = EllipseSpeedMode::Strict);

struct LieDerivatives {
  int order = 1;
  double b = 0.0;
  double lf_b = 0.0;
  Eigen::Vector2d lg_b = Eigen::Vector2d::Zero();
  // Populated only when order == 2.
  double lf2_b = 0.0;
  Eigen::Vector2d lglf_b = Eigen::Vector2d::Zero();
};

LieDerivatives lie_derivatives(const BarrierSpec& spec, const VehicleState& ego,
                               const std::optional<NeighborSample>& other,
                               const VehicleParams& params,
                               EllipseSpeedMode mode = EllipseSpeedMode::Strict);

/// Road boundaries are degree 2; all others are treated as degree 1 (the
/// ellipse and merging barriers see steering only at second order).
int relative_degree(const BarrierSpec& spec);

/// grad_u . u + constant >= 0.
struct HocbfRow {
  Eigen::Vector2d grad_u = Eigen::Vector2d::Zero();
  double constant = 0.0;
  struct Components {
    double lfm_b = 0.0;
    Eigen::Vector2d lglfm1_b = Eigen::Vector2d::Zero();
    double s_term = 0.0;
    double alpha_term = 0.0;
  } components;

  double residual(const ControlInput& in) const { return grad_u.dot(in.vec()) + constant; }
};

HocbfRow build_hocbf_row(const BarrierSpec& spec, const VehicleState& ego,
                         const std::optional<NeighborSample>& other,
                         std::span<const double> theta_c, const VehicleParams& params,
                         EllipseSpeedMode mode = EllipseSpeedMode::Strict);

enum class ClfKind { SpeedTracking, LaneKeeping };

struct ClfSpec {
  ClfKind kind = ClfKind::SpeedTracking;
  double v_des = 15.0;
  StraightRoute route;

  static ClfSpec speed_tracking(double v_des);
  static ClfSpec lane_keeping(const StraightRoute& route);
};

/// grad_u . u + constant <= e[slack_index].
struct ClfRow {
  Eigen::Vector2d grad_u = Eigen::Vector2d::Zero();
  double constant = 0.0;
  int slack_index = 0;

  double value(const ControlInput& in) const { return grad_u.dot(in.vec()) + constant; }
};

double eval_clf(const ClfSpec& clf, const VehicleState& ego);

ClfRow build_clf_row(const ClfSpec& clf, const VehicleState& ego, double theta,
                     const VehicleParams& params, int slack_index = 0);

namespace detail {

template <class T>
struct BarrierTerms {
  T b{0.0};
  T lf_b{0.0};
  Eigen::Matrix<T, 2, 1> lg_b{T(0.0), T(0.0)};
  T lf2_b{0.0};
  Eigen::Matrix<T, 2, 1> lglf_b{T(0.0), T(0.0)};
};

/// Barrier value and Lie derivatives along the bicycle dynamics. The
/// neighbor enters through its state and rate only (treated as exogenous).
template <class T>
BarrierTerms<T> barrier_terms(const BarrierSpec& spec, const Eigen::Matrix<T, 4, 1>& ego,
                              const NeighborSample* other, double wheelbase,
                              EllipseSpeedMode mode) {
  using std::cos;
  using std::sin;
  BarrierTerms<T> out;
  const T& x = ego[0];
  const T& y = ego[1];
  const T& psi = ego[2];
  const T& v = ego[3];
  const T c = cos(psi);
  const T s = sin(psi);

  switch (spec.kind) {
    case BarrierKind::RearEndEllipse: {
      const auto& p = std::get<SafetyEllipseParams>(spec.params);
      const bool floored = v <= p.v_floor;
      if (floored && mode == EllipseSpeedMode::Strict)
        throw DegenerateState("rear-end ellipse evaluated at speed below its floor");
      const T speed = floored ? T(p.v_floor) : v;
      const T dx = x - other->state.x;
      const T dy = y - other->state.y;
      const T ax = p.a * speed;
      const T by = p.b * speed;
      const T qa = dx * dx / (ax * ax);
      const T qb = dy * dy / (by * by);
      out.b = qa + qb - 1.0;
      out.lf_b = 2.0 * dx * (v * c - other->rate[0]) / (ax * ax) +
                 2.0 * dy * (v * s - other->rate[1]) / (by * by);
      out.lg_b[0] = floored ? T(0.0) : T(-2.0 * (qa + qb) / speed);
      break;
    }
    case BarrierKind::SafeMerging: {
      const auto& p = std::get<MergingParams>(spec.params);
      const Eigen::Vector2d te = p.ego_route.tangent();
      const Eigen::Vector2d to = p.other_route.tangent();
      const T se = (x - p.ego_route.entry[0]) * te[0] + (y - p.ego_route.entry[1]) * te[1];
      const double so = p.other_route.progress(other->state.x, other->state.y);
      const double so_rate = other->rate[0] * to[0] + other->rate[1] * to[1];
      const T se_rate = v * (c * te[0] + s * te[1]);
      const double k = p.varphi / p.cz_length;
      out.b = so - se - k * se * v - p.delta;
      out.lf_b = so_rate - (1.0 + k * v) * se_rate;
      out.lg_b[0] = -k * se;
      break;
    }
    case BarrierKind::RoadLeft:
    case BarrierKind::RoadRight: {
      const auto& p = std::get<RoadBoundaryParams>(spec.params);
      const double sign = spec.kind == BarrierKind::RoadLeft ? 1.0 : -1.0;
      const T dx = x - p.center[0];
      const T dy = y - p.center[1];
      out.b = sign * (dx * dx + dy * dy - p.radius * p.radius);
      out.lf_b = sign * 2.0 * v * (dx * c + dy * s);
      out.lf2_b = sign * 2.0 * v * v;
      out.lglf_b[0] = sign * 2.0 * (dx * c + dy * s);
      out.lglf_b[1] = sign * 2.0 * v * (dy * c - dx * s) * v / wheelbase;
      break;
    }
    case BarrierKind::SpeedMax: {
      const auto& p = std::get<SpeedLimitParams>(spec.params);
      out.b = p.limit - v;
      out.lg_b[0] = T(-1.0);
      break;
    }
    case BarrierKind::SpeedMin: {
      const auto& p = std::get<SpeedLimitParams>(spec.params);
      out.b = v - p.limit;
      out.lg_b[0] = T(1.0);
      break;
    }
  }
  return out;
}

template <class T>
struct RowT {
  Eigen::Matrix<T, 2, 1> grad_u;
  T constant;
};

template <class T>
RowT<T> hocbf_row(const BarrierSpec& spec, const Eigen::Matrix<T, 4, 1>& ego, const NeighborSample* other,
                  std::span<const double> theta_c, double wheelbase, EllipseSpeedMode mode) {
  const BarrierTerms<T> t = barrier_terms<T>(spec, ego, other, wheelbase, mode);
  if (relative_degree(spec) == 1) return {t.lg_b, t.lf_b + theta_c[0] * t.b};
  const T zeta1 = t.lf_b + theta_c[0] * t.b;
  return {t.lglf_b, t.lf2_b + theta_c[0] * t.lf_b + theta_c[1] * zeta1};
}

template <class T>
RowT<T> clf_row(const ClfSpec& clf, const Eigen::Matrix<T, 4, 1>& ego, double theta) {
  using std::cos;
  using std::sin;
  RowT<T> row{{T(0.0), T(0.0)}, T(0.0)};
  if (clf.kind == ClfKind::SpeedTracking) {
    const T err = ego[3] - clf.v_des;
    row.grad_u[0] = 2.0 * err;
    row.constant = theta * err * err;
  } else {
    const Eigen::Vector2d n = clf.route.left_normal();
    const T d = (ego[0] - clf.route.entry[0]) * n[0] + (ego[1] - clf.route.entry[1]) * n[1];
    const T d_rate = ego[3] * (cos(ego[2]) * n[0] + sin(ego[2]) * n[1]);
    row.constant = 2.0 * d * d_rate + theta * d * d;
  }
  return row;
}

}  // namespace detail
}  // namespace mpccbf
