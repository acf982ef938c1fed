#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fedchain/agents.hpp"
#include "fedchain/data.hpp"
#include "fedchain/federation.hpp"
#include "fedchain/identity.hpp"
#include "fedchain/unlearning.hpp"

namespace fedchain::sim {

struct CostModel {
  std::int64_t setup = 48;      // one-time network setup
  std::int64_t consensus = 6;   // per cross-chain aggregation
  std::int64_t tx = 4;          // per committed transaction
  std::int64_t epoch = 30;      // per training epoch
  std::string mode = "hybrid";  // normal | public | hybrid
};

struct SimClock {
  std::int64_t now = 0;
  struct Event {
    std::int64_t at;
    std::string kind;
    std::string detail;
  };
  std::vector<Event> log;

  void advance(std::int64_t seconds) { now += seconds; }
  void record(const std::string& kind, const std::string& detail) {
    log.push_back(Event{now, kind, detail});
  }
};

struct OrgDataSpec {
  std::string type = "synthetic";  // synthetic | csv
  std::size_t n = 100;
  std::uint64_t seed_offset = 0;
  std::string csv_path;
};

struct ScenarioOrg {
  std::string id;
  std::string org;
  int agents = 1;
  OrgDataSpec data;
};

struct UnlearnEvent {
  std::string org;
  std::uint64_t at_round = 1;
  data::SplitSpec selector{data::Selector::ByLabel, 0.0, 1, ""};
  unlearning::UnlearnRequest request;
};

struct AgentConfig {
  double alpha = 0.1;
  double gamma = 0.9;
  agents::EpsilonSchedule epsilon;
  agents::RewardWeights reward;
};

struct Scenario {
  std::string name;
  std::uint64_t seed = 1;
  int classes = 2;
  std::size_t feature_dims = 1 << 14;
  std::vector<std::string> organization_whitelist;
  std::int64_t token_ttl = 3600;
  std::size_t private_chain_threshold = 1000;
  std::uint64_t private_epochs = 1;   // Private_epoch
  std::uint64_t global_rounds = 1;
  std::size_t endorsement_k = 0;      // 0 -> ceil(n/2)
  std::size_t validation_n = 80;
  model::TrainConfig train;
  AgentConfig agent_cfg;
  CostModel cost;
  data::SynthSpec synth;
  std::vector<ScenarioOrg> orgs;
  std::vector<UnlearnEvent> unlearn_events;
  unlearning::VerificationCriteria criteria;
  std::optional<std::filesystem::path> base_dir;  // for relative csv paths
};

Scenario parse_scenario(const std::string& json_text);  // throws ConfigError naming the field
Scenario load_scenario(const std::filesystem::path& path);
std::string scenario_to_json(const Scenario& s);

struct AgentRoundMetrics {
  std::string agent;
  std::string action;
  double reward = 0;
};

struct RoundMetrics {
  std::uint64_t round = 0;
  double global_accuracy = 0;
  std::int64_t clock = 0;
  std::vector<AgentRoundMetrics> agents;
  // round record: who participated and where the aggregate landed
  std::vector<std::string> participating_orgs;
  std::uint64_t aggregate_version = 0;
  std::string aggregate_tx_id;
};

struct UnlearnEventMetrics {
  std::uint64_t round = 0;
  std::string org;
  std::string config_label;
  unlearning::UnlearnMetrics metrics;
  std::string tx_id;      // empty when rejected
  std::string rejection;  // empty when accepted
};

struct MetricsLog {
  std::vector<RoundMetrics> rounds;
  std::vector<UnlearnEventMetrics> unlearns;
};

struct RunResult {
  model::DenseParams final_model;
  double final_val_accuracy = 0;
  federation::ChainContext public_chain;
  std::map<std::string, federation::ChainContext> private_chains;  // by org id
  MetricsLog metrics;
  SimClock clock;
  std::map<std::string, agents::Agent> agent_states;       // by agent name
  std::map<std::string, agents::Observation> last_obs;     // by agent name
  federation::ModelStore store;
  data::Dataset validation_ds;
  std::vector<model::Example> validation_set;
  std::map<std::string, data::Dataset> org_datasets;       // by org id
  std::optional<identity::Registry> registry;
  std::map<std::string, std::string> tokens;               // agent name -> token
};

// Executes the eight protocol steps in order under the scenario master seed:
// register, upload, establish private chains, then per round train / private
// aggregate / unlearn / verify / public aggregate.
RunResult run_scenario(const Scenario& scenario);

// Totals per mode for iteration counts t (epochs = t + 1):
//   normal(t) = epoch * (t+1)
//   public(t) = setup + (t+1) * (epoch + tx)
//   hybrid(t) = setup + (t+1) * (epoch + consensus)
std::map<std::string, std::vector<std::int64_t>> time_table(const CostModel& cost,
                                                            std::span<const std::uint64_t> ts);

}  // namespace fedchain::sim
