#include <doctest.h>

#include <cmath>

#include "fedchain/agents.hpp"
#include "fedchain/errors.hpp"

using namespace fedchain;
using namespace fedchain::agents;

namespace {

Observation obs(int acc = 0, bool accepted = false, bool late = false) {
  return Observation{acc, accepted, late};
}

}  // namespace

TEST_CASE("q_update closed-form examples") {
  QTable t;
  t.alpha = 0.5;
  t.gamma = 0.9;
  q_update(t, obs(), Action::FullTrain, 1.0, obs(1));
  CHECK(t.q(obs(), Action::FullTrain) == doctest::Approx(0.5).epsilon(1e-15));

  QTable t2;
  t2.alpha = 1.0;
  t2.gamma = 0.0;
  t2.values[obs().index()][0] = 42.0;
  q_update(t2, obs(), Action::FullTrain, 0.0, obs(1));
  CHECK(t2.q(obs(), Action::FullTrain) == 0.0);

  QTable t3;
  q_update(t3, obs(), Action::Abstain, 0.0, obs());
  for (const auto& row : t3.values) {
    for (double v : row) CHECK(v == 0.0);
  }
}

TEST_CASE("q_update matches the closed form over random draws") {
  Rng rng(55);
  for (int trial = 0; trial < 1000; ++trial) {
    QTable t;
    t.alpha = 0.01 + 0.99 * rng.uniform();
    t.gamma = 0.99 * rng.uniform();
    for (auto& row : t.values) {
      for (double& v : row) v = rng.uniform(-5, 5);
    }
    Observation s = obs(static_cast<int>(rng.below(3)), rng.below(2) == 1, rng.below(2) == 1);
    Observation s2 = obs(static_cast<int>(rng.below(3)), rng.below(2) == 1, rng.below(2) == 1);
    Action a = static_cast<Action>(rng.below(3));
    double r = rng.uniform(-3, 3);
    double q0 = t.q(s, a);
    double expect = q0 + t.alpha * (r + t.gamma * t.max_q(s2) - q0);
    q_update(t, s, a, r, s2);
    CHECK(std::abs(t.q(s, a) - expect) <= 1e-12);
  }
}

TEST_CASE("select_action: greedy, tie-break, exploration frequency") {
  QTable t;
  Rng rng(66);
  t.values[obs().index()][static_cast<int>(Action::FullTrain)] = 1.0;
  CHECK(select_action(t, obs(), 0.0, rng) == Action::FullTrain);

  QTable zero;
  CHECK(select_action(zero, obs(), 0.0, rng) == Action::FullTrain);  // lowest index wins ties

  QTable t2;
  t2.values[obs().index()][static_cast<int>(Action::Abstain)] = 3.0;
  CHECK(select_action(t2, obs(), 0.0, rng) == Action::Abstain);

  // epsilon = 1: uniform over the three actions within 2% after 30k draws
  int counts[3] = {0, 0, 0};
  Rng explore_rng(12345);
  for (int i = 0; i < 30000; ++i) {
    counts[static_cast<int>(select_action(t2, obs(), 1.0, explore_rng))]++;
  }
  for (int c : counts) {
    CHECK(std::abs(c / 30000.0 - 1.0 / 3.0) < 0.02);
  }
}

TEST_CASE("greedy choice is invariant to positive scaling of a state row") {
  Rng rng(77);
  for (int trial = 0; trial < 50; ++trial) {
    QTable t;
    Observation s = obs(static_cast<int>(rng.below(3)), rng.below(2) == 1, rng.below(2) == 1);
    for (double& v : t.values[s.index()]) v = rng.uniform(-2, 2);
    Action before = t.argmax(s);
    double scale = 0.5 + 4.0 * rng.uniform();
    for (double& v : t.values[s.index()]) v *= scale;
    CHECK(t.argmax(s) == before);
  }
}

TEST_CASE("compute_reward worked examples") {
  RewardWeights w;
  CHECK(compute_reward({0.0, Action::Abstain, false}, w) == 0.0);
  CHECK(compute_reward({0.02, Action::FullTrain, true}, w) ==
        doctest::Approx(2.4).epsilon(1e-12));
  CHECK(compute_reward({0.0, Action::PartialTrain, true}, w) ==
        doctest::Approx(0.45).epsilon(1e-12));
}

TEST_CASE("q values stay within the discounted reward bound") {
  Rng rng(88);
  const double R = 2.0;
  QTable t;
  t.alpha = 0.3;
  t.gamma = 0.9;
  double bound = R / (1.0 - t.gamma) + 1e-9;
  for (int step = 0; step < 20000; ++step) {
    Observation s = obs(static_cast<int>(rng.below(3)), rng.below(2) == 1, rng.below(2) == 1);
    Observation s2 = obs(static_cast<int>(rng.below(3)), rng.below(2) == 1, rng.below(2) == 1);
    q_update(t, s, static_cast<Action>(rng.below(3)), rng.uniform(-R, R), s2);
  }
  for (const auto& row : t.values) {
    for (double v : row) CHECK(std::abs(v) <= bound);
  }
}

TEST_CASE("step_episode: deterministic traces and greedy-after-annealing") {
  auto run_trace = [](std::uint64_t seed) {
    Agent agent;
    agent.name = "a";
    agent.rng = Rng(seed);
    agent.epsilon = 0.3;
    agent.schedule = {0.3, 0.9, 0.0};
    std::vector<std::pair<Action, double>> trace;
    for (int ep = 0; ep < 30; ++ep) {
      Observation s = obs(ep % 3, ep % 2 == 0, ep > 15);
      StepResult r = step_episode(
          agent, s,
          [&](Action a) {
            RoundOutcome out;
            out.delta_val_acc = a == Action::FullTrain ? 0.01 : 0.0;
            out.accepted = a != Action::Abstain;
            return out;
          },
          [&] { return obs((ep + 1) % 3, true, ep > 15); }, RewardWeights{});
      trace.push_back({r.action, r.reward});
    }
    return trace;
  };
  auto t1 = run_trace(999);
  auto t2 = run_trace(999);
  CHECK(t1 == t2);
  auto t3 = run_trace(1000);
  CHECK(t1 != t3);

  // once epsilon anneals to zero the trace is purely greedy
  Agent agent;
  agent.rng = Rng(5);
  agent.epsilon = 0.0;
  agent.schedule = {0.0, 0.99, 0.0};
  agent.table.values[obs().index()][static_cast<int>(Action::PartialTrain)] = 10.0;
  for (int i = 0; i < 10; ++i) {
    StepResult r = step_episode(
        agent, obs(), [](Action) { return RoundOutcome{}; }, [] { return obs(); },
        RewardWeights{});
    CHECK(r.action == Action::PartialTrain);
  }
}

TEST_CASE("epsilon schedule decays per episode down to the floor") {
  Agent agent;
  agent.rng = Rng(1);
  agent.epsilon = 0.3;
  agent.schedule = {0.3, 0.5, 0.05};
  for (int i = 0; i < 10; ++i) {
    step_episode(
        agent, obs(), [](Action) { return RoundOutcome{}; }, [] { return obs(); },
        RewardWeights{});
  }
  CHECK(agent.epsilon == doctest::Approx(0.05));
  CHECK(agent.episodes == 10);
}

TEST_CASE("observation bucketing") {
  CHECK(make_observation(0.2, false, 0, 10).acc_bucket == 0);
  CHECK(make_observation(0.6, false, 0, 10).acc_bucket == 1);
  CHECK(make_observation(0.95, false, 0, 10).acc_bucket == 2);
  CHECK_FALSE(make_observation(0.5, false, 2, 10).late_phase);
  CHECK(make_observation(0.5, false, 5, 10).late_phase);
  // all twelve states map to distinct indices
  std::set<int> seen;
  for (int acc = 0; acc < 3; ++acc) {
    for (int acc2 = 0; acc2 < 2; ++acc2) {
      for (int ph = 0; ph < 2; ++ph) {
        seen.insert(Observation{acc, acc2 == 1, ph == 1}.index());
      }
    }
  }
  CHECK(seen.size() == 12);
}
