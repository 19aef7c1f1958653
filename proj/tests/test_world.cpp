#include <gtest/gtest.h>

#include <cmath>

#include "agile_pilot/world.hpp"

using namespace agile;

namespace {

WorldState simple_world() {
  WorldState w;
  w.drone.position = {0, 0, 1};
  w.target = {4, 0, 1};
  w.gate_passed = true;
  return w;
}

}  // namespace

TEST(Randomize, LateralUnitByHand) {
  const Vec3 L = Vec3(4, 0, 1) - Vec3(0, 0, 1);
  const auto lat = lateral_unit(L);
  ASSERT_TRUE(lat);
  EXPECT_NEAR((*lat - Vec3(0, -1, 0)).norm(), 0.0, 1e-15);
  EXPECT_FALSE(lateral_unit(Vec3(0, 0, 3)));
}

TEST(Randomize, MidpointObstacle) {
  const Obstacle o = place_obstacle(Vec3(0, 0, 1), Vec3(4, 0, 1), 0.5, 0.0, 1.0, 0.05);
  EXPECT_NEAR(o.center_xy.x(), 2.0, 1e-15);
  EXPECT_NEAR(o.center_xy.y(), 0.0, 1e-15);
}

TEST(Randomize, SpawnBoundsAndObstacleBetween) {
  WorldConfig cfg;
  Rng rng(123);
  for (int i = 0; i < 100000; ++i) {
    const WorldState w = randomize_episode(rng, cfg);
    const auto& p = w.drone.position;
    ASSERT_GE(p.z(), 0.3);
    ASSERT_LE(p.z(), 4.0);
    ASSERT_LE(std::abs(p.x()), 4.0);
    ASSERT_LE(std::abs(w.drone.yaw), kPi / 2);
    ASSERT_EQ(w.obstacles.size(), 1u);
    // longitudinal projection onto the horizontal connecting line lies strictly inside it
    const Vec2 Lxy(w.target.x() - p.x(), w.target.y() - p.y());
    const Vec2 rel = w.obstacles[0].center_xy - Vec2(p.x(), p.y());
    const double proj = rel.dot(Lxy.normalized());
    ASSERT_GT(proj, 0.0);
    ASSERT_LT(proj, Lxy.norm());
  }
}

TEST(Randomize, GateEpisodesStartUnpassed) {
  WorldConfig cfg;
  cfg.gate_probability = 1.0;
  cfg.obstacle_count = 2;
  Rng rng(5);
  for (int i = 0; i < 1000; ++i) {
    const WorldState w = randomize_episode(rng, cfg);
    ASSERT_TRUE(w.gate);
    ASSERT_FALSE(w.gate_passed);
    ASSERT_EQ(w.current_goal(), w.gate->center);
  }
}

TEST(MoveObjects, ZeroSpeedLeavesObjectsInPlace) {
  WorldState w = simple_world();
  w.gate = Gate{Vec3(2, 0, 1), 0.0};
  w.obstacles.push_back(Obstacle{Vec2(1, 1), 0, 0.05});
  w.obstacle_motion.assign(1, std::nullopt);
  Rng rng(1);
  move_objects(w, 0.0, 0.02, rng);
  EXPECT_EQ(w.gate->center, Vec3(2, 0, 1));
  EXPECT_EQ(w.obstacles[0].center_xy, Vec2(1, 1));
}

TEST(MoveObjects, RandomWalkIsUnbiased) {
  WorldState w = simple_world();
  w.gate = Gate{Vec3::Zero(), 0.0};
  Rng rng(9);
  const double v = 0.5, dt = 0.02;
  const int n = 10000;
  Vec3 prev = w.gate->center;
  double sx = 0, sy = 0;
  for (int i = 0; i < n; ++i) {
    move_objects(w, v, dt, rng);
    sx += (w.gate->center.x() - prev.x()) / dt;
    sy += (w.gate->center.y() - prev.y()) / dt;
    prev = w.gate->center;
  }
  const double sigma = v / std::sqrt(3.0);  // sd of U(-v, v)
  EXPECT_LT(std::abs(sx / n), 3 * sigma / std::sqrt(n));
  EXPECT_LT(std::abs(sy / n), 3 * sigma / std::sqrt(n));
}

TEST(MoveObjects, ConstantSpeedOverride) {
  WorldState w = simple_world();
  w.gate = Gate{Vec3(1, 0, 1), 0.0};
  w.gate_motion = PingPongMotion{Vec2(1, 0), Vec2::UnitX(), 0.3};
  Rng rng(1);
  for (int i = 0; i < 10; ++i) {
    const double x0 = w.gate->center.x();
    move_objects(w, 0.3, 0.02, rng);
    EXPECT_NEAR(w.gate->center.x() - x0, 0.3 * 0.02, 1e-12);
  }
}

TEST(MoveObjects, PingPongReflects) {
  PingPongMotion m{Vec2::Zero(), Vec2::UnitY(), 1.0, 0.5};
  Vec2 p;
  for (int i = 0; i < 60; ++i) p = m.advance(0.01);  // 0.6 m of travel
  EXPECT_NEAR(p.y(), 0.4, 1e-12);
  EXPECT_LT(m.sign, 0);
}

TEST(Observe, GoalBlockEqualsPositionAtGoal) {
  WorldState w = simple_world();
  w.drone.position = w.target;
  const Observation o = observe(w);
  EXPECT_EQ(o.size(), 21);
  EXPECT_EQ(o.segment<3>(12), o.segment<3>(0));
}

TEST(Observe, ObstacleRelativeBlock) {
  WorldState w = simple_world();
  w.obstacles.push_back(Obstacle{Vec2(1, 1), 0.4, 0.05});
  const Observation o = observe(w);
  EXPECT_NEAR(o(17), 1.0, 1e-15);
  EXPECT_NEAR(o(18), 1.0, 1e-15);
  EXPECT_NEAR(o(19), 0.4 - 1.0, 1e-15);
  EXPECT_NEAR(o(20), 0.05, 1e-15);
  EXPECT_EQ(o(3), 0.0);
  EXPECT_EQ(o(4), 0.0);
}

TEST(Observe, NearestObstacleReported) {
  WorldState w = simple_world();
  w.obstacles.push_back(Obstacle{Vec2(3, 0), 0.0, 0.05});
  w.obstacles.push_back(Obstacle{Vec2(0.5, 0.5), 0.0, 0.1});
  const Observation o = observe(w);
  EXPECT_NEAR(o(17), 0.5, 1e-15);
  EXPECT_NEAR(o(20), 0.1, 1e-15);
}

TEST(Collision, ObstacleDistance) {
  WorldState w = simple_world();
  w.drone.position = {1.1, 0, 1};
  w.obstacles.push_back(Obstacle{Vec2(1, 0), 0, 0.05});
  EXPECT_TRUE(check_collision(w));
  w.drone.position = {1.1, 0, 50};
  EXPECT_TRUE(check_collision(w));
  w.drone.position = {3, 3, 2};
  EXPECT_FALSE(check_collision(w));
}

TEST(Collision, Ground) {
  WorldState w = simple_world();
  w.drone.position = {0, 0, 0.04};
  EXPECT_TRUE(check_collision(w));
}

TEST(GateCrossing, InsideOpeningAndFrame) {
  const Gate g{Vec3(0, 0, 1), 0.0};
  const auto in = detect_crossing(g, Vec3(-0.1, 0.3, 1.2), Vec3(0.1, 0.3, 1.2), 0.2);
  ASSERT_TRUE(in);
  EXPECT_TRUE(in->inside_opening);
  EXPECT_NEAR(in->lateral, 0.3, 1e-12);
  EXPECT_NEAR(in->vertical, 0.2, 1e-12);
  const auto frame = detect_crossing(g, Vec3(-0.1, 0.85, 1.0), Vec3(0.1, 0.85, 1.0), 0.2);
  ASSERT_TRUE(frame);
  EXPECT_TRUE(frame->on_frame);
  const auto outside = detect_crossing(g, Vec3(-0.1, 1.5, 1.0), Vec3(0.1, 1.5, 1.0), 0.2);
  ASSERT_TRUE(outside);
  EXPECT_FALSE(outside->on_frame);
  EXPECT_FALSE(outside->inside_opening);
  EXPECT_FALSE(detect_crossing(g, Vec3(-0.3, 0, 1), Vec3(-0.1, 0, 1), 0.2));
}

TEST(StepEnv, SuccessAtTarget) {
  WorldState w = simple_world();
  w.drone.position = w.target;
  Rng rng(1);
  const auto r = step_env(w, Vec4(0, 0, 0, -1), rng, WorldConfig{}, RewardConfig{});
  EXPECT_TRUE(r.done);
  EXPECT_TRUE(r.info.success);
  EXPECT_THROW(step_env(w, Vec4(0, 0, 0, -1), rng, WorldConfig{}, RewardConfig{}), ContractError);
}

TEST(StepEnv, CollisionEndsEpisodeWithPenalty) {
  WorldState w = simple_world();
  w.drone.position = {1.05, 0, 1};
  w.obstacles.push_back(Obstacle{Vec2(1, 0), 0, 0.05});
  w.obstacle_motion.assign(1, std::nullopt);
  w.obstacles_move = false;
  Rng rng(1);
  const RewardConfig rc;
  const auto r = step_env(w, Vec4(0, 0, 0, -1), rng, WorldConfig{}, rc);
  EXPECT_TRUE(r.done);
  EXPECT_TRUE(r.info.collided());
  EXPECT_FALSE(r.info.success);
  const double d_goal = (w.drone.position - w.target).norm();
  const double d_obs = horizontal_distance(w.drone.position, w.obstacles[0]);
  EXPECT_NEAR(r.reward, r_proximity(d_goal, rc) + r_obstacle(d_obs, rc) - rc.c_penal, 1e-12);
}

TEST(StepEnv, TimeoutAfterFiveHundredSteps) {
  WorldState w = simple_world();
  Rng rng(1);
  const WorldConfig cfg;
  int steps = 0;
  StepResult r;
  do {
    r = step_env(w, Vec4(0, 0, 0, 0), rng, cfg, RewardConfig{});
    ++steps;
  } while (!r.done);
  EXPECT_EQ(steps, 500);
  EXPECT_TRUE(r.info.timeout);
}

TEST(StepEnv, GoalSwitchesOnceAtGate) {
  WorldState w;
  w.drone.position = {-2, 0, 1};
  w.gate = Gate{Vec3(0, 0, 1), 0.0};
  w.gate_motion = PingPongMotion{Vec2(0, 0), Vec2::UnitY(), 0.0};
  w.gate_passed = false;
  w.target = {2, 0, 1};
  Rng rng(2);
  const WorldConfig cfg;
  int switches = 0;
  bool prev_passed = false;
  for (int i = 0; i < 1000 && !w.done; ++i) {
    const Observation before = observe(w);
    if (!w.gate_passed) {
      EXPECT_EQ(before.segment<3>(12), w.gate->center);
    }
    const Vec3 dir = (w.current_goal() - w.drone.position);
    const auto r = step_env(w, VelocityCommand{dir.normalized() * 1.0, 1.0}, rng, cfg, RewardConfig{});
    if (r.info.gate_event) {
      ++switches;
      EXPECT_LT(r.info.gate_offset, 0.75);
    }
    EXPECT_TRUE(!prev_passed || w.gate_passed);  // monotone
    prev_passed = w.gate_passed;
    if (w.gate_passed) {
      EXPECT_EQ(observe(w).segment<3>(12), w.target);
    }
  }
  EXPECT_EQ(switches, 1);
  EXPECT_TRUE(w.done);
}

TEST(StepEnv, FrameHitIsCollision) {
  WorldState w;
  w.drone.position = {-0.02, 0.85, 1};
  w.drone.velocity = {2.0, 0, 0};
  w.gate = Gate{Vec3(0, 0, 1), 0.0};
  w.gate_motion = PingPongMotion{Vec2(0, 0), Vec2::UnitY(), 0.0};
  w.gate_passed = false;
  w.target = {3, 0, 1};
  Rng rng(2);
  const auto r = step_env(w, VelocityCommand{Vec3(2, 0, 0), 2.0}, rng, WorldConfig{}, RewardConfig{});
  EXPECT_EQ(r.info.collision, CollisionKind::kGateFrame);
  EXPECT_TRUE(r.done);
}

TEST(StepEnv, SameSeedSameTrajectory) {
  auto run = [](std::uint64_t seed) {
    Environment env(WorldConfig{}, RewardConfig{}, seed);
    env.reset();
    std::vector<double> trace;
    Rng act(seed + 1);
    std::uniform_real_distribution<double> u(-1, 1);
    for (int i = 0; i < 300; ++i) {
      auto r = env.step(Vec4(u(act), u(act), u(act), u(act)));
      trace.push_back(r.reward);
      for (int k = 0; k < kObsDim; ++k) trace.push_back(r.obs(k));
      if (r.done) env.reset();
    }
    return trace;
  };
  EXPECT_EQ(run(42), run(42));
  EXPECT_NE(run(42), run(43));
}
