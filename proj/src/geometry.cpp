#include "mpccbf/geometry.hpp"

namespace mpccbf {

BoundaryCircle left_boundary_circle(const StraightRoute& route, double radius) {
  const double half = 0.5 * route.lane_width;
  return {route.point_at(0.5 * route.length, half + radius), radius};
}

BoundaryCircle right_boundary_circle(const StraightRoute& route, double radius) {
  const double half = 0.5 * route.lane_width;
  return {route.point_at(0.5 * route.length, radius - half), radius};
}

StraightRoute MergeGeometry::main_road() const {
  StraightRoute r;
  r.heading = 0.0;
  r.length = cz_length;
  r.lane_width = lane_width;
  r.entry = Eigen::Vector2d(-cz_length, 0.0);
  return r;
}

StraightRoute MergeGeometry::ramp() const {
  StraightRoute r;
  r.heading = merge_angle;
  r.length = cz_length;
  r.lane_width = lane_width;
  r.entry = -cz_length * r.tangent();
  return r;
}

}  // namespace mpccbf
