#include <gtest/gtest.h>

#include <cmath>

#include "agile_pilot/apf.hpp"
#include "agile_pilot/eval.hpp"

using namespace agile;

namespace {

WorldState open_world(const Vec3& start, const Vec3& goal) {
  WorldState w;
  w.drone.position = start;
  w.target = goal;
  w.gate_passed = true;
  return w;
}

}  // namespace

TEST(Apf, AttractiveIsLinear) {
  ApfConfig c;
  c.k_att = 1.0;
  EXPECT_EQ(attractive(Vec3(1, 2, 3), Vec3(1, 2, 3), c), Vec3::Zero());
  EXPECT_NEAR((attractive(Vec3::Zero(), Vec3(2, 0, 0), c) - Vec3(2, 0, 0)).norm(), 0.0, 1e-15);
  const Vec3 f1 = attractive(Vec3::Zero(), Vec3(0.3, -0.7, 0.2), ApfConfig{});
  const Vec3 f2 = attractive(Vec3::Zero(), Vec3(0.6, -1.4, 0.4), ApfConfig{});
  EXPECT_NEAR((f2 - 2.0 * f1).norm(), 0.0, 1e-15);
}

TEST(Apf, RepulsiveMagnitudeByHand) {
  ApfConfig c;
  Obstacle o{Vec2(0, 0), 0.0, 0.0};
  // d = 0.5 from a zero-radius axis: 0.8 (1/0.5 - 1/1.5) / 0.25
  const Vec3 f = repulsive(Vec3(0.3, 0.4, 2.0), o, c);
  const double expect = 0.8 * (2.0 - 2.0 / 3.0) * 4.0;
  EXPECT_NEAR(f.norm(), expect, 1e-12);
  EXPECT_NEAR(f.norm(), 4.2667, 1e-4);
  EXPECT_NEAR((f.normalized() - Vec3(0.6, 0.8, 0.0)).norm(), 0.0, 1e-12);
}

TEST(Apf, RepulsionUsesSurfaceDistanceAndCutoff) {
  ApfConfig c;
  Obstacle o{Vec2(1, 1), 0.0, 0.05};
  EXPECT_EQ(repulsive(Vec3(1 + 1.56, 1, 1), o, c), Vec3::Zero());
  EXPECT_EQ(repulsive(Vec3(1 + 3.0, 1, 1), o, c), Vec3::Zero());
  EXPECT_GT(repulsive(Vec3(1 + 1.54, 1, 1), o, c).norm(), 0.0);
  const Vec3 f = repulsive(Vec3(1.55, 1, 0), o, c);
  EXPECT_NEAR(f.norm(), 0.8 * (2.0 - 2.0 / 3.0) * 4.0, 1e-12);
}

TEST(Apf, RepulsionPointsAwayFromAxis) {
  ApfConfig c;
  Rng rng(5);
  for (int i = 0; i < 1000; ++i) {
    Obstacle o{Vec2(uniform(rng, -2, 2), uniform(rng, -2, 2)), 0.0, 0.05};
    const Vec3 p(o.center_xy.x() + uniform(rng, -1.5, 1.5), o.center_xy.y() + uniform(rng, -1.5, 1.5),
                 uniform(rng, 0, 3));
    const Vec3 f = repulsive(p, o, c);
    if (f.norm() == 0.0) continue;
    const Vec2 away = (p.head<2>() - o.center_xy).normalized();
    EXPECT_NEAR(f.head<2>().normalized().dot(away), 1.0, 1e-12);
    EXPECT_EQ(f.z(), 0.0);
  }
}

TEST(Apf, SpeedNeverExceedsCap) {
  Rng rng(7);
  for (int i = 0; i < 20000; ++i) {
    WorldState w = open_world(Vec3(uniform(rng, -4, 4), uniform(rng, -4, 4), uniform(rng, 0, 4)),
                              Vec3(uniform(rng, -4, 4), uniform(rng, -4, 4), uniform(rng, 0, 4)));
    for (int k = 0; k < 2; ++k) {
      w.obstacles.push_back(Obstacle{Vec2(uniform(rng, -4, 4), uniform(rng, -4, 4)), 0.0, 0.05});
    }
    const VelocityCommand cmd = apf_step(w);
    EXPECT_LE(cmd.v_des.norm(), 1.0 + 1e-12);
    EXPECT_EQ(cmd.v_max, 1.0);
  }
}

TEST(Apf, Memoryless) {
  WorldState w = open_world(Vec3(-3, 0.2, 1), Vec3(3, 0, 2));
  w.obstacles.push_back(Obstacle{Vec2(-2, 0.5), 0.0, 0.05});
  const VelocityCommand a = apf_step(w);
  (void)apf_step(open_world(Vec3(1, 1, 1), Vec3(0, 0, 0)));
  const VelocityCommand b = apf_step(w);
  EXPECT_EQ(a.v_des, b.v_des);
}

TEST(Apf, FollowsGateThenTarget) {
  WorldState w = open_world(Vec3(-3, 0, 1), Vec3(3, 0, 1));
  Gate g;
  g.center = {0, 2, 1.5};
  w.gate = g;
  w.gate_passed = false;
  const Vec3 v = apf_step(w).v_des;
  EXPECT_NEAR(v.normalized().dot((g.center - w.drone.position).normalized()), 1.0, 1e-12);
}

TEST(Apf, EmptyArenaFliesStraightAndDistanceDecreases) {
  WorldConfig cfg;
  cfg.episode_time = 30.0;
  Rng rng(1);
  WorldState w = open_world(Vec3(-3, -2, 1), Vec3(3, 1, 2));
  const Vec3 start = w.drone.position, goal = w.target;
  const Vec3 dir = (goal - start).normalized();
  double prev = (w.drone.position - goal).norm();
  StepResult r;
  do {
    r = step_env(w, apf_step(w), rng, cfg, RewardConfig{});
    const Vec3 off = (w.drone.position - start) - (w.drone.position - start).dot(dir) * dir;
    EXPECT_LT(off.norm(), 1e-9);
    const double d = (w.drone.position - goal).norm();
    EXPECT_LT(d, prev);
    prev = d;
  } while (!r.done);
  EXPECT_TRUE(r.info.success);
}

TEST(Apf, TrapStallsForOverTwoSeconds) {
  const CaseSpec c = comparison_case(1);
  Rng rng(11);
  for (int trial = 0; trial < 5; ++trial) {
    const WorldState w = make_case_layout(c, rng);
    Rng sim(3);
    const TrialResult tr = run_trial(w, [](const WorldState& s) { return apf_step(s); }, c, sim);
    EXPECT_FALSE(tr.success);
    EXPECT_TRUE(tr.timeout);
    // Longest run of consecutive slow samples.
    double run = 0.0, longest = 0.0;
    for (std::size_t i = 1; i < tr.trajectory.size(); ++i) {
      run = tr.trajectory[i].speed < 0.05 ? run + (tr.trajectory[i].t - tr.trajectory[i - 1].t) : 0.0;
      longest = std::max(longest, run);
    }
    EXPECT_GT(longest, 2.0);
    for (const auto& s : tr.trajectory) EXPECT_EQ(s.y, 0.0);
  }
}
