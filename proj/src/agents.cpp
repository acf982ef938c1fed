#include "fedchain/agents.hpp"

#include <algorithm>
#include <cmath>

#include "fedchain/errors.hpp"

namespace fedchain::agents {

Observation make_observation(double global_acc, bool last_accepted, std::uint64_t round,
                             std::uint64_t total_rounds) {
  Observation obs;
  obs.acc_bucket = global_acc < 0.5 ? 0 : (global_acc < 0.8 ? 1 : 2);
  obs.last_accepted = last_accepted;
  obs.late_phase = total_rounds > 0 && round * 2 >= total_rounds;
  return obs;
}

double QTable::max_q(const Observation& s) const {
  const auto& row = values[s.index()];
  return *std::max_element(row.begin(), row.end());
}

Action QTable::argmax(const Observation& s) const {
  const auto& row = values[s.index()];
  int best = 0;
  for (int a = 1; a < kNumActions; ++a) {
    if (row[a] > row[best]) best = a;
  }
  return static_cast<Action>(best);
}

void q_update(QTable& table, const Observation& s, Action a, double reward,
              const Observation& s_next) {
  if (!std::isfinite(reward)) raise(Errc::ConfigError, "reward must be finite");
  double& q = table.values[s.index()][static_cast<int>(a)];
  q += table.alpha * (reward + table.gamma * table.max_q(s_next) - q);
}

Action select_action(const QTable& table, const Observation& s, double epsilon, Rng& rng) {
  if (epsilon > 0.0 && rng.uniform() < epsilon) {
    return static_cast<Action>(rng.below(kNumActions));
  }
  return table.argmax(s);
}

double action_cost(Action a) {
  switch (a) {
    case Action::FullTrain: return 1.0;
    case Action::PartialTrain: return 0.5;
    case Action::Abstain: return 0.0;
  }
  return 0.0;
}

double compute_reward(const RoundOutcome& outcome, const RewardWeights& weights) {
  return weights.accuracy * outcome.delta_val_acc * 100.0 -
         weights.cost * action_cost(outcome.action) + (outcome.accepted ? weights.bonus : 0.0);
}

Action agent_begin_round(Agent& agent, const Observation& s) {
  Action a = select_action(agent.table, s, agent.epsilon, agent.rng);
  agent.pending_obs = s;
  agent.pending_action = a;
  return a;
}

double agent_finish_round(Agent& agent, const RoundOutcome& outcome, const Observation& s_next,
                          const RewardWeights& weights) {
  if (!agent.pending_obs || !agent.pending_action) {
    raise(Errc::ConfigError, "agent_finish_round without a pending round");
  }
  double reward = compute_reward(outcome, weights);
  q_update(agent.table, *agent.pending_obs, *agent.pending_action, reward, s_next);
  agent.pending_obs.reset();
  agent.pending_action.reset();
  ++agent.episodes;
  agent.epsilon = std::max(agent.schedule.floor, agent.epsilon * agent.schedule.decay);
  return reward;
}

StepResult step_episode(Agent& agent, const Observation& s,
                        const std::function<RoundOutcome(Action)>& environment,
                        const std::function<Observation()>& observe_next,
                        const RewardWeights& weights) {
  Action a = agent_begin_round(agent, s);
  RoundOutcome outcome = environment(a);
  outcome.action = a;
  Observation s_next = observe_next();
  double reward = agent_finish_round(agent, outcome, s_next, weights);
  return StepResult{a, reward};
}

}  // namespace fedchain::agents
