#pragma once

#include <Eigen/Core>
#include <cmath>

namespace mpccbf {

/// A straight single-lane road segment ending at the merging point.
///
/// Arc-length progress s runs from 0 at the control-zone entry to `length`
/// at the merging point. The signed centerline offset d is positive to the
/// left of the direction of travel.
struct StraightRoute {
  Eigen::Vector2d entry{0.0, 0.0};
  double heading = 0.0;  // direction of travel [rad]
  double length = 100.0;
  double lane_width = 4.0;

  Eigen::Vector2d tangent() const { return {std::cos(heading), std::sin(heading)}; }
  Eigen::Vector2d left_normal() const { return {-std::sin(heading), std::cos(heading)}; }
  Eigen::Vector2d exit() const { return entry + length * tangent(); }

  double progress(double x, double y) const {
    return (Eigen::Vector2d(x, y) - entry).dot(tangent());
  }
  double offset(double x, double y) const {
    return (Eigen::Vector2d(x, y) - entry).dot(left_normal());
  }
  Eigen::Vector2d point_at(double s, double d = 0.0) const {
    return entry + s * tangent() + d * left_normal();
  }
};

/// Circle standing in for one straight lane boundary: its edge is tangent to
/// the boundary line at mid-route and it bulges away from (left) or
/// contains (right) the lane.
struct BoundaryCircle {
  Eigen::Vector2d center;
  double radius = 0.0;
};

BoundaryCircle left_boundary_circle(const StraightRoute& route, double radius);
BoundaryCircle right_boundary_circle(const StraightRoute& route, double radius);

/// Two single-lane roads meeting at a merging point at the origin: the main
/// road runs along +x and the ramp joins at `merge_angle` from below.
struct MergeGeometry {
  double cz_length = 100.0;
  double merge_angle = 15.0 * 3.14159265358979323846 / 180.0;
  double lane_width = 4.0;

  StraightRoute main_road() const;
  StraightRoute ramp() const;
};

}  // namespace mpccbf
