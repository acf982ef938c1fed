#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "fedchain/crypto.hpp"
#include "fedchain/identity.hpp"

namespace fedchain::chain {

using crypto::Digest;

// Model-update stages, named by where the parameters sit in the pipeline.
inline constexpr const char* kStageGlobalUpload = "global-upload";
inline constexpr const char* kStagePrivateSeed = "private-seed";
inline constexpr const char* kStagePrivateLocal = "private-local";
inline constexpr const char* kStagePrivateAggregate = "private-aggregate";
inline constexpr const char* kStageOrgSubmission = "org-submission";
inline constexpr const char* kStageGlobalAggregate = "global-aggregate";

struct ModelUpdatePayload {
  std::string org;
  std::string params_digest;  // hex
  std::uint64_t sample_count = 0;
  std::uint64_t round = 0;
  std::string stage;
  std::string checkpoint_ref;
  std::uint64_t params_version = 0;
};

struct UnlearnResultPayload {
  std::string org;
  std::string delta_digest;  // hex
  double forget_acc_before = 0, forget_acc_after = 0;
  double retain_acc_before = 0, retain_acc_after = 0;
  double tau_forget = 0, tau_retain_drop = 0;
  std::uint64_t base_version = 0;
};

struct RegistrationEventPayload {
  std::string name;
  std::string role;
  std::string org;
  std::string public_key_hex;
};

struct ConfigEventPayload {
  std::string key;
  std::string value;
};

using Payload = std::variant<ModelUpdatePayload, UnlearnResultPayload, RegistrationEventPayload,
                             ConfigEventPayload>;

const char* payload_kind(const Payload& p);

// Canonical encoding: one kind byte, then every field in declared order as a
// u32-LE length prefix plus bytes. Numbers are rendered as decimal strings,
// doubles with %.17g. tx ids and block payload hashes are computed over this.
std::vector<std::uint8_t> canonical_encode(const Payload& p);
Digest payload_digest(const Payload& p);

enum class TxState { Proposal, Endorsement, Ordering, Validation, Committed, Rejected };

inline const char* tx_state_name(TxState s) {
  switch (s) {
    case TxState::Proposal: return "Proposal";
    case TxState::Endorsement: return "Endorsement";
    case TxState::Ordering: return "Ordering";
    case TxState::Validation: return "Validation";
    case TxState::Committed: return "Committed";
    case TxState::Rejected: return "Rejected";
  }
  return "?";
}

struct Endorsement {
  std::string peer;
  std::vector<std::uint8_t> signature;  // over the tx id bytes
};

struct Transaction {
  Digest tx_id{};
  std::string proposer;
  Payload payload;
  TxState state = TxState::Proposal;
  std::vector<Endorsement> endorsements;
};

struct EndorsementPolicy {
  std::size_t required_k = 1;
  std::set<std::string> eligible_peers;
};

struct Block {
  std::uint64_t index = 0;
  Digest prev_hash{};
  Digest payload_hash{};
  std::vector<Digest> tx_ids;
  std::int64_t timestamp = 0;
  Digest block_hash{};
  std::vector<Transaction> txs;
};

struct Ledger {
  std::string channel_id;
  std::vector<Block> blocks;
  std::map<std::string, std::string> world_state;
};

struct ChainVerdict {
  bool ok = true;
  std::uint64_t first_bad_index = 0;
  std::string what;
};

Digest block_header_hash(const Block& b);

Transaction propose_tx(const identity::Registry& registry, const std::string& proposer,
                       Payload payload);

// Appends one valid endorsement; the same peer endorsing twice is an error and
// never raises the distinct-endorsement count.
void endorse_tx(Transaction& tx, const std::string& peer, std::span<const std::uint8_t> signature,
                const EndorsementPolicy& policy, const identity::Registry& registry);

std::size_t distinct_valid_endorsements(const Transaction& tx, const EndorsementPolicy& policy,
                                        const identity::Registry& registry);
bool eligible_for_ordering(const Transaction& tx, const EndorsementPolicy& policy,
                           const identity::Registry& registry);

// Orders the batch by tx id, validates each tx (schema + endorsement recheck),
// applies payloads to the world state and appends a single block. Rejected txs
// are excluded; if every tx is rejected, no block forms and ValidationFailed is
// thrown. NotEndorsed if any tx in the batch is below the threshold.
const Block& order_and_commit(Ledger& ledger, std::vector<Transaction>& txs, std::int64_t now,
                              const EndorsementPolicy& policy,
                              const identity::Registry& registry);

ChainVerdict validate_chain(const Ledger& ledger);

// Rebuilds the world state from the block log. Throws CorruptChain when
// validate_chain fails.
std::map<std::string, std::string> replay(const Ledger& ledger);

std::string state_digest_hex(const std::map<std::string, std::string>& state);

struct PrivateDataCollection {
  std::map<std::string, std::string> data;
  std::set<std::string> member_orgs;
  EndorsementPolicy endorsement_policy;
};

void pdc_put(PrivateDataCollection& pdc, const std::string& caller_org, const std::string& key,
             std::string value, const identity::Registry& registry);
const std::string& pdc_get(const PrivateDataCollection& pdc, const std::string& caller_org,
                           const std::string& key);

// JSON-lines export: a header record with the final-state digest, then one
// block per line. import_jsonl throws ParseError on malformed input.
std::string export_jsonl(const Ledger& ledger);

struct ImportedLedger {
  Ledger ledger;
  std::string declared_final_state;  // hex digest from the header record
};
ImportedLedger import_jsonl(std::string_view text);

}  // namespace fedchain::chain
