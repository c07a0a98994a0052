#include <cmath>

#include <gtest/gtest.h>

#include "svpsfc/env.hpp"
#include "svpsfc/policies.hpp"

namespace svpsfc {
namespace {

Instance single_target() {
  Instance inst;
  inst.vertices = {{0, 0}, {1, 0}};
  inst.dummy = {false};
  inst.fuel_capacity = 100.0;
  return inst;
}

EnvState walk(const Environment& env, const std::vector<std::size_t>& actions) {
  EnvState s = env.reset();
  for (std::size_t a : actions) s = env.step(s, a).state;
  return s;
}

TEST(Reset, InitialConditions) {
  const Environment env(reference_instance(), {7});
  const EnvState s = env.reset();
  EXPECT_EQ(s.location, 0u);
  EXPECT_EQ(s.fuel, 120.0);
  EXPECT_EQ(s.elapsed, 0.0);
  EXPECT_EQ(s.step_count, 0u);
  for (std::size_t i = 1; i <= 6; ++i) {
    EXPECT_EQ(s.clocks[i], 0.0);
    EXPECT_EQ(s.visit_counts[i], 0u);
    EXPECT_TRUE(std::isinf(s.revisit[i]));
  }
  EXPECT_EQ(env.reset(), s);
  EXPECT_EQ(env.horizon(), 42u);
}

TEST(Reset, DummySlotRevisitPinned) {
  Instance inst = reference_instance();
  inst.dummy[2] = true;  // target 3
  const Environment env(inst);
  const EnvState s = env.reset();
  EXPECT_EQ(s.revisit[3], 0.0);
  EXPECT_EQ(env.horizon(), 35u);
  const EnvState later = walk(env, {4, 1, 6, 2, 5, 1, 0});
  EXPECT_EQ(later.revisit[3], 0.0);
  EXPECT_EQ(later.clocks[3], 0.0);
}

TEST(Reset, RejectsInvalidInstance) { EXPECT_THROW(Environment(reference_instance(20.0)), InvalidArgument); }

TEST(ActionMask, AtDepotAllTargetsOn) {
  const Environment env(reference_instance());
  const ActionMask m = env.action_mask(env.reset());
  EXPECT_FALSE(m[0]);
  for (std::size_t j = 1; j <= 6; ++j) EXPECT_TRUE(m[j]);
}

TEST(ActionMask, FuelLevelAfterReferencePrefix) {
  const Environment env(reference_instance(60.0));
  const EnvState s = walk(env, {4, 1, 6, 3, 2, 5});
  ASSERT_EQ(s.location, 5u);
  const double expected_fuel = 60.0 - (std::sqrt(128.0) + std::sqrt(85.0) + std::sqrt(68.0) + std::sqrt(58.0) +
                                       std::sqrt(67.25) + std::sqrt(21.25));
  EXPECT_NEAR(s.fuel, expected_fuel, 1e-12);
  EXPECT_NEAR(s.fuel, 10.7944, 1e-4);
  const ActionMask m = env.action_mask(s);
  EXPECT_TRUE(m[0]);
  EXPECT_TRUE(m[1]);
  for (std::size_t j : {2u, 3u, 4u, 5u, 6u}) EXPECT_FALSE(m[j]) << "target " << j;
}

TEST(ActionMask, DummyAlwaysOff) {
  Instance inst = reference_instance();
  inst.dummy[1] = true;  // target 2
  const Environment env(inst);
  EXPECT_FALSE(env.action_mask(env.reset())[2]);
  EXPECT_FALSE(env.action_mask(walk(env, {1})).operator[](2));
}

TEST(Step, SingleStepArithmetic) {
  const Environment env(reference_instance());
  const StepOutcome out = env.step(env.reset(), 1);
  const double d = std::sqrt(5.0);
  EXPECT_EQ(out.state.clocks[1], 0.0);
  for (std::size_t i = 2; i <= 6; ++i) EXPECT_NEAR(out.state.clocks[i], d, 1e-9);
  EXPECT_NEAR(out.reward, -2.2361, 1e-4);
  EXPECT_NEAR(out.reward, -d, 1e-9);
  EXPECT_NEAR(out.state.fuel, 120.0 - d, 1e-9);
  EXPECT_NEAR(out.state.elapsed, d, 1e-9);
  EXPECT_EQ(out.state.location, 1u);
  EXPECT_EQ(out.state.visit_counts[1], 1u);
  EXPECT_TRUE(std::isinf(out.state.revisit[1]));
  EXPECT_FALSE(out.done);
}

TEST(Step, RevisitOnSecondArrival) {
  const Environment env(single_target(), {4});
  EnvState s = env.reset();
  s = env.step(s, 1).state;
  EXPECT_TRUE(std::isinf(env.max_revisit_time(s)));
  s = env.step(s, 0).state;
  EXPECT_EQ(s.clocks[1], 1.0);
  const StepOutcome out = env.step(s, 1);
  EXPECT_TRUE(out.info.revisit_updated);
  EXPECT_EQ(out.state.revisit[1], 2.0);
  EXPECT_EQ(env.max_revisit_time(out.state), 2.0);
}

TEST(Step, DepotRefuelsExactly) {
  const Environment env(reference_instance(60.0));
  const StepOutcome out = env.step(walk(env, {4, 1}), 0);
  EXPECT_EQ(out.state.fuel, 60.0);
  EXPECT_TRUE(out.info.refueled);
}

TEST(Step, MaskedActionIsContractViolation) {
  const Environment env(reference_instance());
  EXPECT_THROW(env.step(env.reset(), 0), ContractViolation);
  EXPECT_THROW(env.step(walk(env, {3}), 3), ContractViolation);
  EXPECT_THROW(env.step(env.reset(), 99), ContractViolation);
}

TEST(Step, DoneExactlyAtHorizon) {
  const Environment env(single_target(), {3});
  EnvState s = env.reset();
  const std::vector<std::size_t> seq{1, 0, 1, 0, 1, 0};
  for (std::size_t k = 0; k < seq.size(); ++k) {
    const StepOutcome out = env.step(s, seq[k]);
    EXPECT_EQ(out.done, k + 1 == 3);
    s = out.state;
    if (out.done) break;
  }
  EXPECT_THROW(env.step(s, 1), ContractViolation);
}

TEST(Step, SingleRealTargetForcesAlternation) {
  Instance inst = single_target();
  const Environment env(inst);
  const Trajectory t = rollout(env, greedy_policy(), 0);
  ASSERT_EQ(t.actions.size(), 7u);
  for (std::size_t k = 0; k < t.actions.size(); ++k) EXPECT_EQ(t.actions[k], k % 2 == 0 ? 1u : 0u);
  EXPECT_EQ(t.max_revisit, 2.0);
}

TEST(MaxRevisit, FreshResetIsInfinite) {
  const Environment env(reference_instance());
  EXPECT_TRUE(std::isinf(env.max_revisit_time(env.reset())));
}

TEST(Observe, LayoutAndNormalization) {
  const Environment env(reference_instance());
  const Observation o0 = env.observe(env.reset());
  ASSERT_EQ(o0.size(), 5u * 6 + 4);
  EXPECT_EQ(o0.back(), 1.0);
  for (std::size_t i = 0; i < 12; ++i) EXPECT_EQ(o0[i], 0.0);  // depot: empty one-hot, zero clocks
  EXPECT_EQ(o0[12], 0.0);  // d(0, 0)

  const Observation o1 = env.observe(env.step(env.reset(), 1).state);
  double onehot = 0.0;
  for (std::size_t i = 0; i < 6; ++i) onehot += o1[i];
  EXPECT_EQ(onehot, 1.0);
  EXPECT_EQ(o1[0], 1.0);
  EXPECT_NEAR(o1[12], std::sqrt(5.0) / (10.0 * std::sqrt(2.0)), 1e-12);  // distance to the depot
  EXPECT_NEAR(o1[7], std::sqrt(5.0) / 40.0, 1e-12);  // clock of target 2
  EXPECT_NEAR(o1[19 + 2 * 4], 8.0 / (10.0 * std::sqrt(2.0)), 1e-12);  // x of target 4
  EXPECT_NEAR(o1[33], (120.0 - std::sqrt(5.0)) / 120.0, 1e-12);
}

// Random masked rollouts: all per-step invariants at once.
TEST(Properties, RandomRolloutInvariants) {
  Rng rng(2024);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t n_total = 1 + uniform_index(rng, 8);
    const std::size_t n_real = 1 + uniform_index(rng, n_total);
    const double fuel = uniform_real(rng, 20.0, 200.0);
    const Environment env(generate_instance(n_total, n_real, 10.0, fuel, rng()));
    EnvState s = env.reset();
    double total = 0.0;
    std::vector<double> last_revisit = s.revisit;
    for (std::size_t k = 0; k < env.horizon(); ++k) {
      const ActionMask mask = env.action_mask(s);
      ASSERT_FALSE(mask[s.location]);
      ASSERT_GE(s.fuel, env.distance(s.location, 0));
      const std::size_t a = random_feasible_act(mask, rng);
      const StepOutcome out = env.step(s, a);
      const double delta = env.distance(s.location, a);
      total += delta;
      double max_clock = 0.0;
      for (std::size_t i = 1; i <= n_total; ++i) {
        if (env.instance().is_dummy(i)) {
          ASSERT_EQ(out.state.clocks[i], 0.0);
          ASSERT_EQ(out.state.revisit[i], 0.0);
          continue;
        }
        if (i == a) {
          ASSERT_EQ(out.state.clocks[i], 0.0);
        } else {
          ASSERT_EQ(out.state.clocks[i], s.clocks[i] + delta);
        }
        max_clock = std::max(max_clock, out.state.clocks[i]);
        if (!std::isinf(last_revisit[i])) ASSERT_GE(out.state.revisit[i], last_revisit[i]);
        if (out.state.visit_counts[i] < 2) ASSERT_TRUE(std::isinf(out.state.revisit[i]));
      }
      ASSERT_EQ(out.reward, -max_clock);
      ASSERT_GE(out.state.fuel, 0.0);
      ASSERT_EQ(out.done, k + 1 == env.horizon());
      last_revisit = out.state.revisit;
      s = out.state;
    }
    EXPECT_NEAR(s.elapsed, total, 1e-9);
  }
}

TEST(Properties, DummyNeutrality) {
  const Instance base = reference_instance();
  Instance padded = base;
  padded.vertices.push_back({9.0, 3.0});
  padded.vertices.push_back({1.0, 9.5});
  padded.dummy.push_back(true);
  padded.dummy.push_back(true);
  const Environment a(base), b(padded);
  ASSERT_EQ(a.horizon(), b.horizon());
  const Trajectory ta = rollout(a, greedy_policy(), 0);
  EnvState s = b.reset();
  for (std::size_t k = 0; k < ta.actions.size(); ++k) {
    const StepOutcome out = b.step(s, ta.actions[k]);
    EXPECT_EQ(out.reward, ta.rewards[k]);
    s = out.state;
  }
  EXPECT_EQ(b.max_revisit_time(s), ta.max_revisit);
}

}  // namespace
}  // namespace svpsfc
