#include "fedchain/chain.hpp"

#include <algorithm>
#include <cassert>
#include <cstdio>
#include <sstream>

#include <json.hpp>

#include "fedchain/errors.hpp"

namespace fedchain::chain {

using nlohmann::json;

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 24));
}

void put_field(std::vector<std::uint8_t>& out, std::string_view s) {
  put_u32(out, static_cast<std::uint32_t>(s.size()));
  out.insert(out.end(), s.begin(), s.end());
}

void put_field(std::vector<std::uint8_t>& out, std::uint64_t v) {
  put_field(out, std::to_string(v));
}

void put_field(std::vector<std::uint8_t>& out, double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  put_field(out, std::string_view(buf));
}

void put_field(std::vector<std::uint8_t>& out, std::int64_t v) {
  put_field(out, std::to_string(v));
}

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

const char* payload_kind(const Payload& p) {
  switch (p.index()) {
    case 0: return "model-update";
    case 1: return "unlearn-result";
    case 2: return "registration-event";
    default: return "config-event";
  }
}

std::vector<std::uint8_t> canonical_encode(const Payload& p) {
  std::vector<std::uint8_t> out;
  out.push_back(static_cast<std::uint8_t>(p.index()));
  if (const auto* m = std::get_if<ModelUpdatePayload>(&p)) {
    put_field(out, m->org);
    put_field(out, m->params_digest);
    put_field(out, m->sample_count);
    put_field(out, m->round);
    put_field(out, m->stage);
    put_field(out, m->checkpoint_ref);
    put_field(out, m->params_version);
  } else if (const auto* u = std::get_if<UnlearnResultPayload>(&p)) {
    put_field(out, u->org);
    put_field(out, u->delta_digest);
    put_field(out, u->forget_acc_before);
    put_field(out, u->forget_acc_after);
    put_field(out, u->retain_acc_before);
    put_field(out, u->retain_acc_after);
    put_field(out, u->tau_forget);
    put_field(out, u->tau_retain_drop);
    put_field(out, u->base_version);
  } else if (const auto* r = std::get_if<RegistrationEventPayload>(&p)) {
    put_field(out, r->name);
    put_field(out, r->role);
    put_field(out, r->org);
    put_field(out, r->public_key_hex);
  } else {
    const auto& c = std::get<ConfigEventPayload>(p);
    put_field(out, c.key);
    put_field(out, c.value);
  }
  return out;
}

Digest payload_digest(const Payload& p) {
  auto bytes = canonical_encode(p);
  return crypto::sha256(std::span<const std::uint8_t>(bytes));
}

Digest block_header_hash(const Block& b) {
  std::vector<std::uint8_t> buf;
  put_field(buf, b.index);
  buf.insert(buf.end(), b.prev_hash.begin(), b.prev_hash.end());
  buf.insert(buf.end(), b.payload_hash.begin(), b.payload_hash.end());
  put_field(buf, b.timestamp);
  return crypto::sha256(std::span<const std::uint8_t>(buf));
}

namespace {

// Covers every byte of every transaction: id, payload, proposer and the
// collected endorsements, so any mutation of an exported block is detectable.
Digest block_payload_hash(const std::vector<Transaction>& txs) {
  std::vector<std::uint8_t> buf;
  for (const Transaction& tx : txs) {
    buf.insert(buf.end(), tx.tx_id.begin(), tx.tx_id.end());
    auto enc = canonical_encode(tx.payload);
    put_u32(buf, static_cast<std::uint32_t>(enc.size()));
    buf.insert(buf.end(), enc.begin(), enc.end());
    put_field(buf, tx.proposer);
    put_u32(buf, static_cast<std::uint32_t>(tx.endorsements.size()));
    for (const Endorsement& e : tx.endorsements) {
      put_field(buf, e.peer);
      put_u32(buf, static_cast<std::uint32_t>(e.signature.size()));
      buf.insert(buf.end(), e.signature.begin(), e.signature.end());
    }
  }
  return crypto::sha256(std::span<const std::uint8_t>(buf));
}

bool payload_schema_ok(const Payload& p) {
  if (const auto* m = std::get_if<ModelUpdatePayload>(&p)) {
    return !m->org.empty() && m->params_digest.size() == 64 && m->sample_count > 0 &&
           !m->stage.empty();
  }
  if (const auto* u = std::get_if<UnlearnResultPayload>(&p)) {
    return !u->org.empty() && u->delta_digest.size() == 64;
  }
  if (const auto* r = std::get_if<RegistrationEventPayload>(&p)) {
    return !r->name.empty() && !r->org.empty();
  }
  return !std::get<ConfigEventPayload>(p).key.empty();
}

void apply_payload(std::map<std::string, std::string>& ws, const Transaction& tx) {
  if (const auto* m = std::get_if<ModelUpdatePayload>(&tx.payload)) {
    std::uint64_t version = 0;
    if (auto it = ws.find("global_model_version"); it != ws.end()) {
      version = std::stoull(it->second);
    }
    ws["global_model_version"] = std::to_string(version + 1);
    ws["model:" + m->stage + ":" + m->org] = m->params_digest;
    ws["round:" + std::to_string(m->round) + ":" + m->stage + ":" + m->org] = m->params_digest;
    if (m->stage == kStageGlobalUpload || m->stage == kStageGlobalAggregate) {
      ws["global_model"] = m->params_digest;
      ws["global_model_src_version"] = std::to_string(m->params_version);
      ws["global_model_org"] = m->org;
    }
    if (m->stage == kStagePrivateSeed || m->stage == kStagePrivateAggregate) {
      ws["private_model"] = m->params_digest;
    }
  } else if (const auto* u = std::get_if<UnlearnResultPayload>(&tx.payload)) {
    std::string id = crypto::to_hex(tx.tx_id);
    ws["unlearn:" + u->org + ":" + id] = u->delta_digest;
    ws["unlearn_last:" + u->org] = u->delta_digest;
    ws["unlearn_last_metrics:" + u->org] =
        fmt_double(u->forget_acc_before) + "," + fmt_double(u->forget_acc_after) + "," +
        fmt_double(u->retain_acc_before) + "," + fmt_double(u->retain_acc_after);
  } else if (const auto* r = std::get_if<RegistrationEventPayload>(&tx.payload)) {
    ws["entity:" + r->name] = r->role + ":" + r->org;
  } else {
    const auto& c = std::get<ConfigEventPayload>(tx.payload);
    ws[c.key] = c.value;
  }
}

}  // namespace

Transaction propose_tx(const identity::Registry& registry, const std::string& proposer,
                       Payload payload) {
  if (!registry.has_entity(proposer)) {
    raise(Errc::UnknownProposer, "proposer '" + proposer + "' is not registered");
  }
  Transaction tx;
  tx.proposer = proposer;
  tx.payload = std::move(payload);
  tx.tx_id = payload_digest(tx.payload);
  tx.state = TxState::Proposal;
  return tx;
}

void endorse_tx(Transaction& tx, const std::string& peer, std::span<const std::uint8_t> signature,
                const EndorsementPolicy& policy, const identity::Registry& registry) {
  if (tx.state != TxState::Proposal && tx.state != TxState::Endorsement) {
    raise(Errc::ValidationFailed,
          std::string("cannot endorse a transaction in state ") + tx_state_name(tx.state));
  }
  if (!policy.eligible_peers.contains(peer)) {
    raise(Errc::IneligiblePeer, "peer '" + peer + "' is not in the endorsement policy");
  }
  for (const Endorsement& e : tx.endorsements) {
    if (e.peer == peer) {
      raise(Errc::DuplicateEndorsement, "peer '" + peer + "' already endorsed this transaction");
    }
  }
  if (!registry.verify(peer, std::span<const std::uint8_t>(tx.tx_id), signature)) {
    raise(Errc::BadSignature, "endorsement signature from '" + peer + "' does not verify");
  }
  tx.endorsements.push_back(Endorsement{peer, {signature.begin(), signature.end()}});
  tx.state = TxState::Endorsement;
}

std::size_t distinct_valid_endorsements(const Transaction& tx, const EndorsementPolicy& policy,
                                        const identity::Registry& registry) {
  std::set<std::string> seen;
  for (const Endorsement& e : tx.endorsements) {
    if (!policy.eligible_peers.contains(e.peer)) continue;
    if (seen.contains(e.peer)) continue;
    if (registry.verify(e.peer, std::span<const std::uint8_t>(tx.tx_id),
                        std::span<const std::uint8_t>(e.signature))) {
      seen.insert(e.peer);
    }
  }
  return seen.size();
}

bool eligible_for_ordering(const Transaction& tx, const EndorsementPolicy& policy,
                           const identity::Registry& registry) {
  return distinct_valid_endorsements(tx, policy, registry) >= policy.required_k;
}

const Block& order_and_commit(Ledger& ledger, std::vector<Transaction>& txs, std::int64_t now,
                              const EndorsementPolicy& policy,
                              const identity::Registry& registry) {
  if (txs.empty()) raise(Errc::NotEndorsed, "no transactions eligible for ordering");
  for (Transaction& tx : txs) {
    if (!eligible_for_ordering(tx, policy, registry)) {
      raise(Errc::NotEndorsed, "transaction " + crypto::to_hex(tx.tx_id) + " has fewer than " +
                                   std::to_string(policy.required_k) + " valid endorsements");
    }
    tx.state = TxState::Ordering;
  }
  std::sort(txs.begin(), txs.end(),
            [](const Transaction& a, const Transaction& b) { return a.tx_id < b.tx_id; });

  // replay protection: a tx id may appear in exactly one committed block
  std::set<Digest> committed_ids;
  for (const Block& b : ledger.blocks) {
    committed_ids.insert(b.tx_ids.begin(), b.tx_ids.end());
  }

  std::vector<Transaction> accepted;
  for (Transaction& tx : txs) {
    tx.state = TxState::Validation;
    bool ok = payload_schema_ok(tx.payload) && tx.tx_id == payload_digest(tx.payload) &&
              eligible_for_ordering(tx, policy, registry) &&
              !committed_ids.contains(tx.tx_id);
    if (ok) {
      tx.state = TxState::Committed;
      committed_ids.insert(tx.tx_id);
      accepted.push_back(tx);
    } else {
      tx.state = TxState::Rejected;
    }
  }
  if (accepted.empty()) {
    raise(Errc::ValidationFailed, "every transaction in the batch failed validation");
  }

  Block b;
  b.index = ledger.blocks.size();
  b.prev_hash = ledger.blocks.empty() ? Digest{} : ledger.blocks.back().block_hash;
  b.timestamp = now;
  b.txs = std::move(accepted);
  for (const Transaction& tx : b.txs) b.tx_ids.push_back(tx.tx_id);
  b.payload_hash = block_payload_hash(b.txs);
  b.block_hash = block_header_hash(b);
  for (const Transaction& tx : b.txs) apply_payload(ledger.world_state, tx);
  ledger.blocks.push_back(std::move(b));
#ifndef NDEBUG
  assert(replay(ledger) == ledger.world_state);
#endif
  return ledger.blocks.back();
}

ChainVerdict validate_chain(const Ledger& ledger) {
  for (std::size_t i = 0; i < ledger.blocks.size(); ++i) {
    const Block& b = ledger.blocks[i];
    if (b.index != i) return {false, i, "index mismatch"};
    for (std::size_t t = 0; t < b.txs.size(); ++t) {
      if (b.txs[t].tx_id != payload_digest(b.txs[t].payload)) {
        return {false, i, "tx id does not match payload digest"};
      }
      if (t >= b.tx_ids.size() || b.tx_ids[t] != b.txs[t].tx_id) {
        return {false, i, "tx id list mismatch"};
      }
    }
    if (b.tx_ids.size() != b.txs.size()) return {false, i, "tx id list mismatch"};
    if (b.payload_hash != block_payload_hash(b.txs)) return {false, i, "payload hash mismatch"};
    Digest expected_prev = i == 0 ? Digest{} : ledger.blocks[i - 1].block_hash;
    if (b.prev_hash != expected_prev) return {false, i, "broken chain link"};
    if (b.block_hash != block_header_hash(b)) return {false, i, "block hash mismatch"};
  }
  return {true, 0, "ok"};
}

std::map<std::string, std::string> replay(const Ledger& ledger) {
  ChainVerdict v = validate_chain(ledger);
  if (!v.ok) {
    raise(Errc::CorruptChain,
          "chain invalid at block " + std::to_string(v.first_bad_index) + " (" + v.what + ")");
  }
  std::map<std::string, std::string> ws;
  for (const Block& b : ledger.blocks) {
    for (const Transaction& tx : b.txs) apply_payload(ws, tx);
  }
  return ws;
}

std::string state_digest_hex(const std::map<std::string, std::string>& state) {
  std::vector<std::uint8_t> buf;
  for (const auto& [k, v] : state) {
    put_field(buf, k);
    put_field(buf, v);
  }
  return crypto::to_hex(crypto::sha256(std::span<const std::uint8_t>(buf)));
}

void pdc_put(PrivateDataCollection& pdc, const std::string& caller_org, const std::string& key,
             std::string value, const identity::Registry& registry) {
  if (!pdc.member_orgs.contains(caller_org)) {
    raise(Errc::AccessDenied, "org '" + caller_org + "' is not a collection member");
  }
  // The write threshold must be satisfiable by member-org peers.
  std::size_t satisfiable = 0;
  for (const std::string& peer : pdc.endorsement_policy.eligible_peers) {
    const identity::EntityRecord* rec = registry.find(peer);
    if (rec != nullptr && pdc.member_orgs.contains(rec->org)) ++satisfiable;
  }
  if (satisfiable < pdc.endorsement_policy.required_k) {
    raise(Errc::AccessDenied, "collection endorsement threshold not satisfiable by member peers");
  }
  pdc.data[key] = std::move(value);
}

const std::string& pdc_get(const PrivateDataCollection& pdc, const std::string& caller_org,
                           const std::string& key) {
  if (!pdc.member_orgs.contains(caller_org)) {
    raise(Errc::AccessDenied, "org '" + caller_org + "' is not a collection member");
  }
  auto it = pdc.data.find(key);
  if (it == pdc.data.end()) raise(Errc::AccessDenied, "no such key in collection: " + key);
  return it->second;
}

namespace {

json payload_to_json(const Payload& p) {
  json j;
  j["kind"] = payload_kind(p);
  if (const auto* m = std::get_if<ModelUpdatePayload>(&p)) {
    j["org"] = m->org;
    j["params_digest"] = m->params_digest;
    j["sample_count"] = m->sample_count;
    j["round"] = m->round;
    j["stage"] = m->stage;
    j["checkpoint_ref"] = m->checkpoint_ref;
    j["params_version"] = m->params_version;
  } else if (const auto* u = std::get_if<UnlearnResultPayload>(&p)) {
    j["org"] = u->org;
    j["delta_digest"] = u->delta_digest;
    j["forget_acc_before"] = u->forget_acc_before;
    j["forget_acc_after"] = u->forget_acc_after;
    j["retain_acc_before"] = u->retain_acc_before;
    j["retain_acc_after"] = u->retain_acc_after;
    j["tau_forget"] = u->tau_forget;
    j["tau_retain_drop"] = u->tau_retain_drop;
    j["base_version"] = u->base_version;
  } else if (const auto* r = std::get_if<RegistrationEventPayload>(&p)) {
    j["name"] = r->name;
    j["role"] = r->role;
    j["org"] = r->org;
    j["public_key"] = r->public_key_hex;
  } else {
    const auto& c = std::get<ConfigEventPayload>(p);
    j["key"] = c.key;
    j["value"] = c.value;
  }
  return j;
}

Payload payload_from_json(const json& j) {
  std::string kind = j.at("kind").get<std::string>();
  if (kind == "model-update") {
    ModelUpdatePayload m;
    m.org = j.at("org").get<std::string>();
    m.params_digest = j.at("params_digest").get<std::string>();
    m.sample_count = j.at("sample_count").get<std::uint64_t>();
    m.round = j.at("round").get<std::uint64_t>();
    m.stage = j.at("stage").get<std::string>();
    m.checkpoint_ref = j.at("checkpoint_ref").get<std::string>();
    m.params_version = j.at("params_version").get<std::uint64_t>();
    return m;
  }
  if (kind == "unlearn-result") {
    UnlearnResultPayload u;
    u.org = j.at("org").get<std::string>();
    u.delta_digest = j.at("delta_digest").get<std::string>();
    u.forget_acc_before = j.at("forget_acc_before").get<double>();
    u.forget_acc_after = j.at("forget_acc_after").get<double>();
    u.retain_acc_before = j.at("retain_acc_before").get<double>();
    u.retain_acc_after = j.at("retain_acc_after").get<double>();
    u.tau_forget = j.at("tau_forget").get<double>();
    u.tau_retain_drop = j.at("tau_retain_drop").get<double>();
    u.base_version = j.at("base_version").get<std::uint64_t>();
    return u;
  }
  if (kind == "registration-event") {
    RegistrationEventPayload r;
    r.name = j.at("name").get<std::string>();
    r.role = j.at("role").get<std::string>();
    r.org = j.at("org").get<std::string>();
    r.public_key_hex = j.at("public_key").get<std::string>();
    return r;
  }
  if (kind == "config-event") {
    ConfigEventPayload c;
    c.key = j.at("key").get<std::string>();
    c.value = j.at("value").get<std::string>();
    return c;
  }
  raise(Errc::ParseError, "unknown payload kind '" + kind + "'");
}

Digest digest_from_hex(const std::string& hex) {
  auto bytes = crypto::from_hex(hex);
  if (bytes.size() != 32) raise(Errc::ParseError, "digest must be 32 bytes");
  Digest d{};
  std::copy(bytes.begin(), bytes.end(), d.begin());
  return d;
}

}  // namespace

std::string export_jsonl(const Ledger& ledger) {
  std::ostringstream out;
  json header = {{"type", "header"},
                 {"channel", ledger.channel_id},
                 {"blocks", ledger.blocks.size()},
                 {"final_state", state_digest_hex(ledger.world_state)}};
  out << header.dump() << "\n";
  for (const Block& b : ledger.blocks) {
    json jb;
    jb["index"] = b.index;
    jb["prev_hash"] = crypto::to_hex(b.prev_hash);
    jb["payload_hash"] = crypto::to_hex(b.payload_hash);
    jb["timestamp"] = b.timestamp;
    jb["block_hash"] = crypto::to_hex(b.block_hash);
    json txs = json::array();
    for (const Transaction& tx : b.txs) {
      json jt;
      jt["tx_id"] = crypto::to_hex(tx.tx_id);
      jt["proposer"] = tx.proposer;
      jt["payload"] = payload_to_json(tx.payload);
      json ends = json::array();
      for (const Endorsement& e : tx.endorsements) {
        ends.push_back({{"peer", e.peer},
                        {"signature", crypto::to_hex(std::span<const std::uint8_t>(e.signature))}});
      }
      jt["endorsements"] = ends;
      txs.push_back(jt);
    }
    jb["txs"] = txs;
    out << jb.dump() << "\n";
  }
  return out.str();
}

ImportedLedger import_jsonl(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  Ledger ledger;
  bool have_header = false;
  std::uint64_t declared_blocks = 0;
  std::string final_state;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const std::exception& e) {
      raise(Errc::ParseError, "line " + std::to_string(lineno) + ": " + e.what());
    }
    try {
      if (!have_header) {
        if (j.value("type", "") != "header") {
          raise(Errc::ParseError, "line 1: expected header record");
        }
        ledger.channel_id = j.at("channel").get<std::string>();
        declared_blocks = j.at("blocks").get<std::uint64_t>();
        final_state = j.at("final_state").get<std::string>();
        have_header = true;
        continue;
      }
      Block b;
      b.index = j.at("index").get<std::uint64_t>();
      b.prev_hash = digest_from_hex(j.at("prev_hash").get<std::string>());
      b.payload_hash = digest_from_hex(j.at("payload_hash").get<std::string>());
      b.timestamp = j.at("timestamp").get<std::int64_t>();
      b.block_hash = digest_from_hex(j.at("block_hash").get<std::string>());
      for (const json& jt : j.at("txs")) {
        Transaction tx;
        tx.tx_id = digest_from_hex(jt.at("tx_id").get<std::string>());
        tx.proposer = jt.at("proposer").get<std::string>();
        tx.payload = payload_from_json(jt.at("payload"));
        tx.state = TxState::Committed;
        for (const json& je : jt.at("endorsements")) {
          tx.endorsements.push_back(Endorsement{
              je.at("peer").get<std::string>(),
              crypto::from_hex(je.at("signature").get<std::string>())});
        }
        b.txs.push_back(std::move(tx));
        b.tx_ids.push_back(b.txs.back().tx_id);
      }
      ledger.blocks.push_back(std::move(b));
    } catch (const Error&) {
      throw;
    } catch (const std::exception& e) {
      raise(Errc::ParseError, "line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (!have_header) raise(Errc::ParseError, "empty or headerless ledger file");
  if (ledger.blocks.size() != declared_blocks) {
    raise(Errc::ParseError, "header declares " + std::to_string(declared_blocks) +
                                " blocks but file has " + std::to_string(ledger.blocks.size()));
  }
  // The materialized state is rebuilt rather than trusted from the file; the
  // header digest is the caller's cross-check.
  for (const Block& b : ledger.blocks) {
    for (const Transaction& tx : b.txs) apply_payload(ledger.world_state, tx);
  }
  return ImportedLedger{std::move(ledger), std::move(final_state)};
}

}  // namespace fedchain::chain
