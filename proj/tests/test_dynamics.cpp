#include <cmath>
#include <random>

#include "doctest.h"
#include "mpccbf/dynamics.hpp"
#include "mpccbf/errors.hpp"
#include "mpccbf/rng.hpp"

using namespace mpccbf;

TEST_CASE("rk4 with zero steering follows the closed-form straight line") {
  const VehicleParams p;
  std::mt19937_64 g(7);
  for (int trial = 0; trial < 20; ++trial) {
    const VehicleState s0{uniform(g, -50, 50), uniform(g, -10, 10), uniform(g, -3, 3), uniform(g, 0, 20)};
    const double u = uniform(g, -1, 1);
    const double dt = 0.2;
    VehicleState s = s0;
    for (int k = 1; k <= 100; ++k) {
      s = step_rk4(s, {u, 0.0}, p, dt);
      const double t = k * dt;
      const double dist = s0.v * t + 0.5 * u * t * t;
      CHECK(std::abs(s.x - (s0.x + dist * std::cos(s0.psi))) < 1e-9);
      CHECK(std::abs(s.y - (s0.y + dist * std::sin(s0.psi))) < 1e-9);
      CHECK(std::abs(s.psi - s0.psi) < 1e-12);
      CHECK(std::abs(s.v - (s0.v + u * t)) < 1e-9);
    }
  }
}

TEST_CASE("constant steering at constant speed traces a circle") {
  const VehicleParams p;
  const double v = 10.0, phi = 0.1, dt = 0.01;
  VehicleState s{0, 0, 0, v};
  for (int k = 0; k < 100; ++k) s = step_rk4(s, {0.0, phi}, p, dt);
  const double omega = v * phi / p.wheelbase();
  const double R = v / omega;
  const double t = 1.0;
  CHECK(std::abs(s.psi - omega * t) < 1e-12);
  CHECK(std::abs(s.x - R * std::sin(omega * t)) < 1e-8);
  CHECK(std::abs(s.y - R * (1 - std::cos(omega * t))) < 1e-8);
}

TEST_CASE("derivative matches the bicycle equations") {
  const VehicleParams p;
  const VehicleState s{1, 2, 0.3, 7};
  const StateDerivative d = eval_derivative(s, {1.5, 0.2}, p);
  CHECK(d[0] == doctest::Approx(7 * std::cos(0.3)));
  CHECK(d[1] == doctest::Approx(7 * std::sin(0.3)));
  CHECK(d[2] == doctest::Approx(0.2 * 7 / 2.0));
  CHECK(d[3] == doctest::Approx(1.5));
}

TEST_CASE("step jacobians agree with central differences") {
  const VehicleParams p;
  std::mt19937_64 g(11);
  for (int trial = 0; trial < 50; ++trial) {
    const VehicleState s{uniform(g, -50, 50), uniform(g, -10, 10), uniform(g, -3, 3), uniform(g, 0, 20)};
    const ControlInput in{uniform(g, -5, 4), uniform(g, -0.7, 0.7)};
    const StepJacobians J = jacobians(s, in, p, 0.2);
    const double h = 1e-6;
    for (int i = 0; i < 4; ++i) {
      Eigen::Vector4d e = Eigen::Vector4d::Zero();
      e[i] = h;
      const Eigen::Vector4d col = (step_rk4(VehicleState::from(s.vec() + e), in, p, 0.2).vec() -
                                   step_rk4(VehicleState::from(s.vec() - e), in, p, 0.2).vec()) /
                                  (2 * h);
      CHECK((col - J.A.col(i)).norm() < 1e-6 * (1 + col.norm()));
    }
    for (int i = 0; i < 2; ++i) {
      Eigen::Vector2d e = Eigen::Vector2d::Zero();
      e[i] = h;
      const Eigen::Vector4d col = (step_rk4(s, ControlInput::from(in.vec() + e), p, 0.2).vec() -
                                   step_rk4(s, ControlInput::from(in.vec() - e), p, 0.2).vec()) /
                                  (2 * h);
      CHECK((col - J.B.col(i)).norm() < 1e-6 * (1 + col.norm()));
    }
  }
}

TEST_CASE("rollout chains steps and clamp respects the box") {
  const VehicleParams p;
  const std::vector<ControlInput> us{{1, 0}, {0, 0.1}, {-1, -0.1}};
  const auto xs = rollout({0, 0, 0, 5}, us, p, 0.2);
  REQUIRE(xs.size() == 4);
  VehicleState s{0, 0, 0, 5};
  for (int k = 0; k < 3; ++k) s = step_rk4(s, us[k], p, 0.2);
  CHECK(xs.back().x == s.x);
  const ControlInput c = p.bounds.clamp({10, -2});
  CHECK(c.u == p.bounds.u_max);
  CHECK(c.phi == p.bounds.phi_min);
}

TEST_CASE("vehicle params validation") {
  VehicleParams p;
  CHECK_NOTHROW(p.validate());
  p.bounds.u_min = 1.0;
  CHECK_THROWS_AS(p.validate(), ValidationError);
  p = VehicleParams{};
  p.l_f = 0.0;
  p.l_r = 0.0;
  CHECK_THROWS_AS(p.validate(), ValidationError);
}
