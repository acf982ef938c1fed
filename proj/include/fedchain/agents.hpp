#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>

#include "fedchain/federation.hpp"
#include "fedchain/rng.hpp"

namespace fedchain::agents {

using federation::Action;

inline constexpr int kNumActions = 3;

// (global-accuracy bucket, last-contribution-accepted, round-phase bucket).
struct Observation {
  int acc_bucket = 0;       // 0 low, 1 mid, 2 high
  bool last_accepted = false;
  bool late_phase = false;

  int index() const { return acc_bucket * 4 + (last_accepted ? 2 : 0) + (late_phase ? 1 : 0); }
  static constexpr int kStates = 12;
};

Observation make_observation(double global_acc, bool last_accepted, std::uint64_t round,
                             std::uint64_t total_rounds);

struct QTable {
  double alpha = 0.1;
  double gamma = 0.9;
  std::array<std::array<double, kNumActions>, Observation::kStates> values{};

  double q(const Observation& s, Action a) const {
    return values[s.index()][static_cast<int>(a)];
  }
  double max_q(const Observation& s) const;
  Action argmax(const Observation& s) const;  // ties -> lowest action index
};

// Q(s,a) <- Q(s,a) + alpha * (r + gamma * max_a' Q(s',a') - Q(s,a))
void q_update(QTable& table, const Observation& s, Action a, double reward,
              const Observation& s_next);

// eps-greedy; exploration draws uniformly over all actions.
Action select_action(const QTable& table, const Observation& s, double epsilon, Rng& rng);

struct RewardWeights {
  double accuracy = 1.0;
  double cost = 0.1;
  double bonus = 0.5;
};

double action_cost(Action a);

struct RoundOutcome {
  double delta_val_acc = 0.0;
  Action action = Action::FullTrain;
  bool accepted = false;
};

// r = w_acc * delta_acc * 100 - w_cost * cost(action) + w_bonus * accepted
double compute_reward(const RoundOutcome& outcome, const RewardWeights& weights);

struct EpsilonSchedule {
  double start = 0.3;
  double decay = 0.99;
  double floor = 0.01;
};

struct Agent {
  std::string name;
  std::string org;
  QTable table;
  EpsilonSchedule schedule;
  double epsilon = 0.3;
  Rng rng{0};
  std::optional<Observation> pending_obs;
  std::optional<Action> pending_action;
  std::uint64_t episodes = 0;
};

// Round split into two phases so the federation step can run in between.
Action agent_begin_round(Agent& agent, const Observation& s);
double agent_finish_round(Agent& agent, const RoundOutcome& outcome, const Observation& s_next,
                          const RewardWeights& weights);

struct StepResult {
  Action action;
  double reward;
};

// One full episode against a caller-supplied environment: observe, act,
// collect the outcome, learn.
StepResult step_episode(Agent& agent, const Observation& s,
                        const std::function<RoundOutcome(Action)>& environment,
                        const std::function<Observation()>& observe_next,
                        const RewardWeights& weights);

}  // namespace fedchain::agents
