#include "fedchain/federation.hpp"

#include <algorithm>
#include <cmath>

#include "fedchain/errors.hpp"

namespace fedchain::federation {

std::string ModelStore::put(const model::DenseParams& params) {
  std::string digest = crypto::to_hex(model::params_digest(params));
  by_digest.emplace(digest, params);
  return digest;
}

const model::DenseParams& ModelStore::get(const std::string& digest_hex) const {
  auto it = by_digest.find(digest_hex);
  if (it == by_digest.end()) raise(Errc::IoError, "no checkpoint for digest " + digest_hex);
  return it->second;
}

CommitReceipt submit_tx(ChainContext& chain_ctx, const identity::Registry& registry,
                        const std::string& proposer, chain::Payload payload, std::int64_t now) {
  chain::Transaction tx = chain::propose_tx(registry, proposer, std::move(payload));
  for (const std::string& peer : chain_ctx.endorsers) {
    auto sig = registry.sign_as(peer, std::span<const std::uint8_t>(tx.tx_id));
    chain::endorse_tx(tx, peer, sig, chain_ctx.policy, registry);
    if (chain::eligible_for_ordering(tx, chain_ctx.policy, registry) &&
        tx.endorsements.size() >= chain_ctx.policy.required_k) {
      break;  // threshold met, no need to gather more
    }
  }
  std::vector<chain::Transaction> batch;
  batch.push_back(std::move(tx));
  const chain::Block& block =
      chain::order_and_commit(chain_ctx.ledger, batch, now, chain_ctx.policy, registry);
  return CommitReceipt{crypto::to_hex(block.txs.front().tx_id), block.index};
}

namespace {

void require_valid_token(const identity::Registry& registry, std::string_view token,
                         std::int64_t now, const std::string& what) {
  identity::TokenStatus st = registry.validate_token(token, now);
  if (st != identity::TokenStatus::Valid) {
    raise(Errc::TokenInvalid,
          what + ": jwt " + (st == identity::TokenStatus::Expired ? "expired" : "invalid"));
  }
}

}  // namespace

CommitReceipt upload_global(ChainContext& public_chain, const identity::Registry& registry,
                            const std::string& agent, std::string_view token,
                            const model::DenseParams& params, ModelStore& store,
                            std::int64_t now) {
  require_valid_token(registry, token, now, "global model upload");
  const auto& ws = public_chain.ledger.world_state;
  if (auto it = ws.find("global_model_src_version"); it != ws.end()) {
    std::uint64_t current = std::stoull(it->second);
    if (params.version <= current) {
      raise(Errc::StaleVersion, "re-upload needs version > " + it->second + ", got " +
                                    std::to_string(params.version));
    }
  }
  const identity::EntityRecord* rec = registry.find(agent);
  if (rec == nullptr) raise(Errc::UnknownProposer, "agent '" + agent + "' is not registered");
  std::string digest = store.put(params);
  chain::ModelUpdatePayload payload{rec->org,
                                    digest,
                                    std::max<std::uint64_t>(params.classes * params.features, 1),
                                    0,
                                    chain::kStageGlobalUpload,
                                    "store:" + digest.substr(0, 12),
                                    params.version};
  return submit_tx(public_chain, registry, agent, payload, now);
}

ChainContext establish_private_chain(const identity::Registry& registry, std::string_view token,
                                     const std::string& agent, const OrgState& org,
                                     const model::DenseParams& global_params,
                                     std::size_t sample_threshold, ModelStore& store,
                                     std::int64_t now) {
  require_valid_token(registry, token, now, "private chain establish");
  if (org.sample_count() < sample_threshold) {
    raise(Errc::BelowThreshold, "org '" + org.org_id + "' has " +
                                    std::to_string(org.sample_count()) + " samples, needs " +
                                    std::to_string(sample_threshold));
  }
  ChainContext ctx;
  ctx.ledger.channel_id = "private:" + org.org_id;
  ctx.policy = chain::EndorsementPolicy{1, {agent}};
  ctx.endorsers = {agent};
  chain::PrivateDataCollection pdc;
  pdc.member_orgs = {org.org_id};
  pdc.endorsement_policy = ctx.policy;
  ctx.pdc = std::move(pdc);

  std::string digest = store.put(global_params);
  chain::ModelUpdatePayload seed{org.org_id,
                                 digest,
                                 std::max<std::uint64_t>(org.sample_count(), 1),
                                 0,
                                 chain::kStagePrivateSeed,
                                 "store:" + digest.substr(0, 12),
                                 global_params.version};
  submit_tx(ctx, registry, agent, seed, now);
  return ctx;
}

model::DenseParams local_train(const OrgState& org, const model::DenseParams& params_in,
                               const model::TrainConfig& config, Action action, Rng& rng) {
  if (action == Action::Abstain) return params_in;
  if (org.features.empty()) raise(Errc::EmptyDataset, "org '" + org.org_id + "' has no data");
  int epochs = config.epochs;
  if (action == Action::PartialTrain) epochs = (epochs + 1) / 2;

  model::DenseParams params = params_in;
  std::vector<std::size_t> order(org.features.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::size_t bs = config.batch_size > 0 ? static_cast<std::size_t>(config.batch_size)
                                         : org.features.size();
  std::vector<model::Example> batch;
  for (int e = 0; e < epochs; ++e) {
    rng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += bs) {
      batch.clear();
      for (std::size_t i = start; i < std::min(start + bs, order.size()); ++i) {
        batch.push_back(org.features[order[i]]);
      }
      model::Grads g = model::grad(params, nullptr, batch, false);
      model::sgd_step(params.W, g.dW, config.learning_rate, +1);
      model::sgd_step(params.b, g.db, config.learning_rate, +1);
    }
  }
  params.version = params_in.version + 1;
  return params;
}

model::DenseParams fedavg(std::span<const Update> updates) {
  if (updates.empty()) raise(Errc::EmptyUpdateSet, "fedavg over zero updates");
  const model::DenseParams& first = updates.front().params;
  double total = 0.0;
  for (const Update& u : updates) {
    if (!u.params.same_shape(first)) {
      raise(Errc::ShapeMismatch, "update shapes differ across organizations");
    }
    if (u.weight <= 0.0) raise(Errc::ConfigError, "update weight must be positive");
    total += u.weight;
  }
  model::DenseParams out = model::DenseParams::zeros(first.classes, first.features);
  std::uint64_t max_version = 0;
  for (const Update& u : updates) {
    double w = u.weight / total;
    for (std::size_t i = 0; i < out.W.size(); ++i) out.W[i] += w * u.params.W[i];
    for (std::size_t i = 0; i < out.b.size(); ++i) out.b[i] += w * u.params.b[i];
    max_version = std::max(max_version, u.params.version);
  }
  out.version = max_version + 1;
  return out;
}

void sort_updates(std::vector<Update>& updates) {
  std::sort(updates.begin(), updates.end(),
            [](const Update& a, const Update& b) { return a.org < b.org; });
}

PrivateAggregateResult private_aggregate(ChainContext& private_chain, ChainContext& public_chain,
                                         const identity::Registry& registry,
                                         std::string_view token, const std::string& agent,
                                         const std::string& org, PrivateRound& round_state,
                                         ModelStore& store, std::int64_t now) {
  if (round_state.epochs_done != round_state.private_epoch) {
    raise(Errc::EpochNotReached, "private chain at epoch " +
                                     std::to_string(round_state.epochs_done) + " of " +
                                     std::to_string(round_state.private_epoch));
  }
  require_valid_token(registry, token, now, "private aggregation");
  sort_updates(round_state.member_updates);
  model::DenseParams aggregated = fedavg(round_state.member_updates);
  std::string digest = store.put(aggregated);
  double weight = 0.0;
  for (const Update& u : round_state.member_updates) weight += u.weight;

  chain::ModelUpdatePayload private_payload{org,
                                            digest,
                                            static_cast<std::uint64_t>(weight),
                                            round_state.round,
                                            chain::kStagePrivateAggregate,
                                            "store:" + digest.substr(0, 12),
                                            aggregated.version};
  CommitReceipt private_commit = submit_tx(private_chain, registry, agent, private_payload, now);

  chain::ModelUpdatePayload submission{org,
                                       digest,
                                       static_cast<std::uint64_t>(weight),
                                       round_state.round,
                                       chain::kStageOrgSubmission,
                                       "store:" + digest.substr(0, 12),
                                       aggregated.version};
  CommitReceipt public_commit = submit_tx(public_chain, registry, agent, submission, now);
  return PrivateAggregateResult{std::move(aggregated), private_commit, public_commit};
}

PublicAggregateResult public_aggregate(ChainContext& public_chain,
                                       const identity::Registry& registry,
                                       const std::string& agent, PublicRound& round_state,
                                       ModelStore& store, std::int64_t now) {
  if (round_state.submissions_seen != round_state.expected) {
    raise(Errc::EpochNotReached, "public chain saw " +
                                     std::to_string(round_state.submissions_seen) +
                                     " submissions of " + std::to_string(round_state.expected));
  }
  if (round_state.submissions.empty()) {
    chain::ConfigEventPayload failure{"round:" + std::to_string(round_state.round) + ":status",
                                      "failed:no-submissions"};
    submit_tx(public_chain, registry, agent, failure, now);
    raise(Errc::NoSubmissions,
          "round " + std::to_string(round_state.round) + " had no submissions");
  }
  sort_updates(round_state.submissions);
  model::DenseParams final_model = fedavg(round_state.submissions);
  std::string digest = store.put(final_model);
  double weight = 0.0;
  for (const Update& u : round_state.submissions) weight += u.weight;
  chain::ModelUpdatePayload payload{registry.find(agent) != nullptr ? registry.find(agent)->org
                                                                    : agent,
                                    digest,
                                    static_cast<std::uint64_t>(weight),
                                    round_state.round,
                                    chain::kStageGlobalAggregate,
                                    "store:" + digest.substr(0, 12),
                                    final_model.version};
  CommitReceipt commit = submit_tx(public_chain, registry, agent, payload, now);
  return PublicAggregateResult{std::move(final_model), commit};
}

}  // namespace fedchain::federation
