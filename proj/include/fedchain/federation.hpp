#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fedchain/chain.hpp"
#include "fedchain/data.hpp"
#include "fedchain/model.hpp"

namespace fedchain::federation {

// Side store for full parameter tensors; ledgers carry only digests and
// references into it. Keyed by the params digest (hex).
struct ModelStore {
  std::map<std::string, model::DenseParams> by_digest;

  std::string put(const model::DenseParams& params);
  const model::DenseParams& get(const std::string& digest_hex) const;
  bool contains(const std::string& digest_hex) const { return by_digest.contains(digest_hex); }
};

// One channel: its ledger, endorsement policy, the peers that sign for it, and
// the private data collection when the channel is organization-scoped.
struct ChainContext {
  chain::Ledger ledger;
  chain::EndorsementPolicy policy;
  std::vector<std::string> endorsers;
  std::optional<chain::PrivateDataCollection> pdc;
};

struct CommitReceipt {
  std::string tx_id_hex;
  std::uint64_t block_index = 0;
};

// propose -> endorse by every context endorser -> order_and_commit, one block.
CommitReceipt submit_tx(ChainContext& chain_ctx, const identity::Registry& registry,
                        const std::string& proposer, chain::Payload payload, std::int64_t now);

struct OrgState {
  std::string org_id;
  data::Dataset dataset;
  std::vector<model::Example> features;
  model::DenseParams local;
  std::optional<std::string> private_channel;

  std::size_t sample_count() const { return dataset.items.size(); }
};

enum class Action { FullTrain = 0, PartialTrain = 1, Abstain = 2 };

inline const char* action_name(Action a) {
  switch (a) {
    case Action::FullTrain: return "FullTrain";
    case Action::PartialTrain: return "PartialTrain";
    case Action::Abstain: return "Abstain";
  }
  return "?";
}

// Token-gated write of the global model to the public world state. Re-uploads
// must carry a strictly higher params version.
CommitReceipt upload_global(ChainContext& public_chain, const identity::Registry& registry,
                            const std::string& agent, std::string_view token,
                            const model::DenseParams& params, ModelStore& store,
                            std::int64_t now);

// Creates the org-scoped channel seeded with the current global model.
ChainContext establish_private_chain(const identity::Registry& registry, std::string_view token,
                                     const std::string& agent, const OrgState& org,
                                     const model::DenseParams& global_params,
                                     std::size_t sample_threshold, ModelStore& store,
                                     std::int64_t now);

// SGD epochs scaled by the action: full = config.epochs, partial = half
// rounded up, abstain = no-op copy.
model::DenseParams local_train(const OrgState& org, const model::DenseParams& params_in,
                               const model::TrainConfig& config, Action action, Rng& rng);

struct Update {
  std::string org;
  model::DenseParams params;
  double weight = 1.0;  // n_i
};

// Sample-weighted average in the given input order. Callers sort by org id
// to pin the floating-point summation order.
model::DenseParams fedavg(std::span<const Update> updates);

void sort_updates(std::vector<Update>& updates);

struct PrivateRound {
  std::uint64_t round = 0;
  std::uint64_t epochs_done = 0;     // N_p
  std::uint64_t private_epoch = 1;   // configured Private_epoch
  std::vector<Update> member_updates;
};

// Aggregates member updates on the private chain, then submits the result to
// the public chain as this org's round submission. Token validated first.
struct PrivateAggregateResult {
  model::DenseParams aggregated;
  CommitReceipt private_commit;
  CommitReceipt public_commit;
};
PrivateAggregateResult private_aggregate(ChainContext& private_chain, ChainContext& public_chain,
                                         const identity::Registry& registry,
                                         std::string_view token, const std::string& agent,
                                         const std::string& org, PrivateRound& round_state,
                                         ModelStore& store, std::int64_t now);

struct PublicRound {
  std::uint64_t round = 0;
  std::uint64_t submissions_seen = 0;  // N_g
  std::uint64_t expected = 0;          // configured epoch
  std::vector<Update> submissions;
};

// Weighted aggregate over all round submissions, committed as the new global
// model. Zero submissions mark the round failed on the ledger and raise
// NoSubmissions.
struct PublicAggregateResult {
  model::DenseParams final_model;
  CommitReceipt commit;
};
PublicAggregateResult public_aggregate(ChainContext& public_chain,
                                       const identity::Registry& registry,
                                       const std::string& agent, PublicRound& round_state,
                                       ModelStore& store, std::int64_t now);

}  // namespace fedchain::federation
