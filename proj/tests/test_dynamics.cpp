#include <gtest/gtest.h>

#include <random>

#include "agile_pilot/dynamics.hpp"

using namespace agile;

TEST(MapAction, ZeroDirectionFullSpeedBound) {
  const auto c = map_action(Vec4(0, 0, 0, 1));
  EXPECT_EQ(c.v_des, Vec3::Zero());
  EXPECT_DOUBLE_EQ(c.v_max, 3.0);
}

TEST(MapAction, UnitXAtFullSpeed) {
  const auto c = map_action(Vec4(1, 0, 0, 1));
  EXPECT_DOUBLE_EQ(c.v_des.x(), 3.0);
  EXPECT_DOUBLE_EQ(c.v_des.y(), 0.0);
  EXPECT_DOUBLE_EQ(c.v_max, 3.0);
}

TEST(MapAction, ZeroSpeedBoundForcesZeroVelocity) {
  const auto c = map_action(Vec4(1, 1, 0, -1));
  EXPECT_EQ(c.v_des, Vec3::Zero());
  EXPECT_DOUBLE_EQ(c.v_max, 0.0);
}

TEST(MapAction, ScalesWholeVectorPreservingDirection) {
  // (3, 3, 0) has norm 4.2426 > v_max = 1.5 -> (1.5/sqrt2, 1.5/sqrt2, 0)
  const auto c = map_action(Vec4(1, 1, 0, 0));
  EXPECT_NEAR(c.v_des.norm(), 1.5, 1e-12);
  EXPECT_NEAR(c.v_des.x(), c.v_des.y(), 1e-15);
}

TEST(MapAction, RejectsNonFinite) {
  EXPECT_THROW(map_action(Vec4(std::nan(""), 0, 0, 0)), std::domain_error);
  EXPECT_THROW(map_action(Vec4(0, 0, 0, INFINITY)), std::domain_error);
}

TEST(YawFromVelocity, Examples) {
  EXPECT_DOUBLE_EQ(yaw_from_velocity(Vec3(1, 0, 5), 0.3), 0.0);
  EXPECT_DOUBLE_EQ(yaw_from_velocity(Vec3(1, 1, 0), 0.0), std::atan2(1.0, 1.0));
  EXPECT_DOUBLE_EQ(yaw_from_velocity(Vec3(0, 0, 1), 0.7), 0.7);
  EXPECT_DOUBLE_EQ(yaw_from_velocity(Vec3(0.03, 0.03, 0), 0.7), 0.7);
}

TEST(StepDynamics, EquilibriumAtRest) {
  DroneState s;
  s.position = {1, 2, 3};
  const auto n = step_dynamics(s, VelocityCommand{Vec3::Zero(), 0.0}, 0.02);
  EXPECT_EQ(n.position, s.position);
  EXPECT_EQ(n.velocity, Vec3::Zero());
}

TEST(StepDynamics, AccelerationCapBinds) {
  DroneState s;
  const auto n = step_dynamics(s, VelocityCommand{Vec3(3, 0, 0), 3.0}, 0.02);
  // unconstrained first-order step would be 3 * 0.02 / 0.3 = 0.2 > a_max * dt = 0.12
  EXPECT_NEAR(n.velocity.x(), 0.12, 1e-15);
  EXPECT_DOUBLE_EQ(n.velocity.y(), 0.0);
  EXPECT_NEAR(n.position.x(), 0.12 * 0.02, 1e-15);
}

TEST(StepDynamics, SettlesWithinFiveTimeConstants) {
  DroneState s;
  const VelocityCommand cmd{Vec3(0.5, -0.4, 0.3), 3.0};
  const DynamicsConfig cfg;
  const int steps = static_cast<int>(std::lround(5 * cfg.tau_v / cfg.dt));
  for (int i = 0; i < steps; ++i) s = step_dynamics(s, cmd, cfg.dt, cfg);
  EXPECT_LT((s.velocity - cmd.v_des).norm() / cmd.v_des.norm(), 0.01);
}

TEST(StepDynamics, CommandEqualToVelocityIsFixedPoint) {
  DroneState s;
  s.velocity = {1.2, -0.7, 0.4};
  const auto n = step_dynamics(s, VelocityCommand{s.velocity, 3.0}, 0.02);
  EXPECT_EQ(n.velocity, s.velocity);
}

TEST(StepDynamics, YawWrappedAndRateLimited) {
  DroneState s;
  s.yaw = 3.1;
  s.velocity = {-1.0, -0.1, 0.0};  // heading about -3.04, just across the wrap
  const auto n = step_dynamics(s, VelocityCommand{s.velocity, 3.0}, 0.02);
  EXPECT_GT(n.yaw, -kPi);
  EXPECT_LE(n.yaw, kPi);
  EXPECT_LE(std::abs(n.yaw_rate), 3.0);
  EXPECT_GT(n.yaw_rate, 0.0);  // shortest way round is counter-clockwise
}

TEST(StepDynamics, RejectsNonPositiveDt) {
  EXPECT_THROW(step_dynamics(DroneState{}, VelocityCommand{}, 0.0), std::invalid_argument);
}

TEST(StepDynamics, PositionConvergesSecondOrderInDt) {
  // one step of dt versus two steps of dt/2; the gap should shrink ~4x per halving
  auto gap = [](double dt) {
    DroneState s;
    s.velocity = {0.5, 0.0, 0.0};
    DynamicsConfig cfg;
    cfg.a_max = 1e9;
    const VelocityCommand cmd{Vec3(1.0, 0.0, 0.0), 3.0};
    const auto one = step_dynamics(s, cmd, dt, cfg);
    const auto two = step_dynamics(step_dynamics(s, cmd, dt / 2, cfg), cmd, dt / 2, cfg);
    return (one.position - two.position).norm();
  };
  const double g1 = gap(0.02), g2 = gap(0.01), g3 = gap(0.005);
  EXPECT_NEAR(g1 / g2, 4.0, 0.2);
  EXPECT_NEAR(g2 / g3, 4.0, 0.2);
}

TEST(StepDynamics, RandomCommandsRespectBounds) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(-1.5, 1.5);
  DroneState s;
  const DynamicsConfig cfg;
  for (int i = 0; i < 100000; ++i) {
    const auto cmd = map_action(Vec4(u(rng), u(rng), u(rng), u(rng)));
    const auto n = step_dynamics(s, cmd, cfg.dt, cfg);
    ASSERT_LE(std::abs(n.velocity.x()), 3.0);
    ASSERT_LE(std::abs(n.velocity.y()), 3.0);
    ASSERT_LE(std::abs(n.velocity.z()), 2.0);
    ASSERT_LE((n.velocity - s.velocity).norm(), cfg.a_max * cfg.dt + 1e-12);
    ASSERT_LE(n.velocity.norm(), std::max(s.velocity.norm(), cmd.v_max) + 1e-12);
    s = n;
  }
}
