#include "fedchain/sim.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "fedchain/errors.hpp"

namespace fedchain::sim {

using nlohmann::json;

namespace {

[[noreturn]] void bad_field(const std::string& field, const std::string& why) {
  raise(Errc::ConfigError, "scenario field '" + field + "': " + why);
}

template <typename T>
T get_field(const json& j, const std::string& field, T fallback) {
  if (!j.contains(field)) return fallback;
  try {
    return j.at(field).get<T>();
  } catch (const std::exception& e) {
    bad_field(field, e.what());
  }
}

template <typename T>
T need_field(const json& j, const std::string& field) {
  if (!j.contains(field)) bad_field(field, "missing");
  try {
    return j.at(field).get<T>();
  } catch (const std::exception& e) {
    bad_field(field, e.what());
  }
}

data::SplitSpec parse_selector(const json& j) {
  data::SplitSpec spec;
  std::string type = need_field<std::string>(j, "type");
  if (type == "by-label") {
    spec.selector = data::Selector::ByLabel;
    spec.label = need_field<int>(j, "label");
  } else if (type == "by-keyword") {
    spec.selector = data::Selector::ByKeyword;
    spec.keyword = need_field<std::string>(j, "keyword");
  } else if (type == "random-seeded") {
    spec.selector = data::Selector::RandomSeeded;
    spec.forget_fraction = need_field<double>(j, "fraction");
  } else {
    bad_field("selector.type", "must be by-label, by-keyword or random-seeded");
  }
  return spec;
}

}  // namespace

Scenario parse_scenario(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const std::exception& e) {
    raise(Errc::ConfigError, std::string("scenario is not valid JSON: ") + e.what());
  }
  Scenario s;
  s.name = need_field<std::string>(j, "name");
  s.seed = need_field<std::uint64_t>(j, "seed");
  s.classes = get_field<int>(j, "classes", 2);
  if (s.classes < 2) bad_field("classes", "must be >= 2");
  s.feature_dims = get_field<std::size_t>(j, "feature_dims", 1 << 14);
  if (s.feature_dims == 0 || (s.feature_dims & (s.feature_dims - 1)) != 0) {
    bad_field("feature_dims", "must be a power of two");
  }
  s.organization_whitelist =
      need_field<std::vector<std::string>>(j, "organization_whitelist");
  s.token_ttl = get_field<std::int64_t>(j, "token_ttl", 3600);
  if (s.token_ttl <= 0) bad_field("token_ttl", "must be positive");
  s.private_chain_threshold = get_field<std::size_t>(j, "private_chain_threshold", 1000);
  s.private_epochs = get_field<std::uint64_t>(j, "private_epochs", 1);
  if (s.private_epochs < 1) bad_field("private_epochs", "must be >= 1");
  s.global_rounds = get_field<std::uint64_t>(j, "global_rounds", 1);
  if (s.global_rounds < 1) bad_field("global_rounds", "must be >= 1");
  s.endorsement_k = get_field<std::size_t>(j, "endorsement_k", 0);
  s.validation_n = get_field<std::size_t>(j, "validation_n", 80);

  if (j.contains("train")) {
    const json& t = j["train"];
    s.train.learning_rate = get_field<double>(t, "learning_rate", 0.3);
    s.train.epochs = get_field<int>(t, "epochs", 1);
    s.train.batch_size = get_field<int>(t, "batch_size", 16);
    if (s.train.learning_rate <= 0) bad_field("train.learning_rate", "must be > 0");
    if (s.train.epochs < 1) bad_field("train.epochs", "must be >= 1");
  }
  if (j.contains("agents")) {
    const json& a = j["agents"];
    s.agent_cfg.alpha = get_field<double>(a, "alpha", 0.1);
    s.agent_cfg.gamma = get_field<double>(a, "gamma", 0.9);
    if (s.agent_cfg.alpha <= 0 || s.agent_cfg.alpha > 1) bad_field("agents.alpha", "must be in (0,1]");
    if (s.agent_cfg.gamma < 0 || s.agent_cfg.gamma >= 1) bad_field("agents.gamma", "must be in [0,1)");
    s.agent_cfg.epsilon.start = get_field<double>(a, "epsilon_start", 0.3);
    s.agent_cfg.epsilon.decay = get_field<double>(a, "epsilon_decay", 0.99);
    s.agent_cfg.epsilon.floor = get_field<double>(a, "epsilon_floor", 0.01);
    if (a.contains("reward_weights")) {
      const json& w = a["reward_weights"];
      s.agent_cfg.reward.accuracy = get_field<double>(w, "accuracy", 1.0);
      s.agent_cfg.reward.cost = get_field<double>(w, "cost", 0.1);
      s.agent_cfg.reward.bonus = get_field<double>(w, "bonus", 0.5);
    }
  }
  if (j.contains("cost_model")) {
    const json& c = j["cost_model"];
    s.cost.mode = get_field<std::string>(c, "mode", "hybrid");
    if (s.cost.mode != "normal" && s.cost.mode != "public" && s.cost.mode != "hybrid") {
      bad_field("cost_model.mode", "must be normal, public or hybrid");
    }
    s.cost.setup = get_field<std::int64_t>(c, "setup", 48);
    s.cost.consensus = get_field<std::int64_t>(c, "consensus", 6);
    s.cost.tx = get_field<std::int64_t>(c, "tx", 4);
    s.cost.epoch = get_field<std::int64_t>(c, "epoch", 30);
    if (s.cost.setup < 0 || s.cost.consensus < 0 || s.cost.tx < 0 || s.cost.epoch < 0) {
      bad_field("cost_model", "costs must be >= 0");
    }
  }
  if (j.contains("synth")) {
    const json& g = j["synth"];
    s.synth.class_vocab = get_field<std::size_t>(g, "class_vocab", 8);
    s.synth.shared_vocab = get_field<std::size_t>(g, "shared_vocab", 12);
    s.synth.min_tokens = get_field<int>(g, "min_tokens", 6);
    s.synth.max_tokens = get_field<int>(g, "max_tokens", 10);
    s.synth.class_token_prob = get_field<double>(g, "class_token_prob", 0.98);
    if (s.synth.min_tokens < 1 || s.synth.max_tokens < s.synth.min_tokens) {
      bad_field("synth.min_tokens", "need 1 <= min_tokens <= max_tokens");
    }
  }

  if (!j.contains("organizations") || !j["organizations"].is_array() ||
      j["organizations"].empty()) {
    bad_field("organizations", "must be a non-empty array");
  }
  for (const json& jo : j["organizations"]) {
    ScenarioOrg org;
    org.id = need_field<std::string>(jo, "id");
    org.org = get_field<std::string>(jo, "org", org.id);
    org.agents = get_field<int>(jo, "agents", 1);
    if (org.agents < 1) bad_field("organizations[].agents", "must be >= 1");
    if (jo.contains("data")) {
      const json& d = jo["data"];
      org.data.type = get_field<std::string>(d, "type", "synthetic");
      if (org.data.type == "synthetic") {
        org.data.n = need_field<std::size_t>(d, "n");
        org.data.seed_offset = get_field<std::uint64_t>(d, "seed_offset", 0);
      } else if (org.data.type == "csv") {
        org.data.csv_path = need_field<std::string>(d, "path");
      } else {
        bad_field("organizations[].data.type", "must be synthetic or csv");
      }
    }
    s.orgs.push_back(std::move(org));
  }
  for (std::size_t i = 0; i < s.orgs.size(); ++i) {
    for (std::size_t k = i + 1; k < s.orgs.size(); ++k) {
      if (s.orgs[i].id == s.orgs[k].id) bad_field("organizations[].id", "duplicate id '" + s.orgs[i].id + "'");
    }
  }

  if (j.contains("unlearn_requests")) {
    for (const json& ju : j["unlearn_requests"]) {
      UnlearnEvent ev;
      ev.org = need_field<std::string>(ju, "org");
      bool known = false;
      for (const ScenarioOrg& org : s.orgs) known = known || org.id == ev.org;
      if (!known) bad_field("unlearn_requests[].org", "unknown org '" + ev.org + "'");
      ev.at_round = get_field<std::uint64_t>(ju, "at_round", s.global_rounds);
      if (ev.at_round < 1 || ev.at_round > s.global_rounds) {
        bad_field("unlearn_requests[].at_round", "outside [1, global_rounds]");
      }
      if (ju.contains("selector")) ev.selector = parse_selector(ju["selector"]);
      ev.request.org = ev.org;
      ev.request.learning_rate = get_field<double>(ju, "learning_rate", 0.1);
      ev.request.epochs = get_field<int>(ju, "epochs", 20);
      ev.request.batch_size = get_field<int>(ju, "batch_size", 12);
      ev.request.rank = get_field<std::size_t>(ju, "rank", 8);
      ev.request.alpha = get_field<double>(ju, "alpha", 8.0);
      ev.request.dropout = get_field<double>(ju, "dropout", 0.1);
      if (ev.request.rank < 1) bad_field("unlearn_requests[].rank", "must be >= 1");
      if (ev.request.dropout < 0 || ev.request.dropout >= 1) {
        bad_field("unlearn_requests[].dropout", "must be in [0,1)");
      }
      s.unlearn_events.push_back(std::move(ev));
    }
  }
  if (j.contains("criteria")) {
    const json& c = j["criteria"];
    s.criteria.tau_forget = get_field<double>(c, "tau_forget", 0.15);
    s.criteria.tau_retain_drop_points = get_field<double>(c, "tau_retain_drop_points", 5.0);
    if (s.criteria.tau_forget < 0 || s.criteria.tau_forget > 1) {
      bad_field("criteria.tau_forget", "must be in [0,1]");
    }
    if (s.criteria.tau_retain_drop_points < 0) {
      bad_field("criteria.tau_retain_drop_points", "must be >= 0");
    }
  }
  return s;
}

Scenario load_scenario(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) raise(Errc::ConfigError, "cannot open scenario file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  Scenario s = parse_scenario(buf.str());
  s.base_dir = path.parent_path();
  return s;
}

std::string scenario_to_json(const Scenario& s) {
  json j;
  j["name"] = s.name;
  j["seed"] = s.seed;
  j["classes"] = s.classes;
  j["feature_dims"] = s.feature_dims;
  j["organization_whitelist"] = s.organization_whitelist;
  j["token_ttl"] = s.token_ttl;
  j["private_chain_threshold"] = s.private_chain_threshold;
  j["private_epochs"] = s.private_epochs;
  j["global_rounds"] = s.global_rounds;
  j["endorsement_k"] = s.endorsement_k;
  j["validation_n"] = s.validation_n;
  j["train"] = {{"learning_rate", s.train.learning_rate},
                {"epochs", s.train.epochs},
                {"batch_size", s.train.batch_size}};
  j["agents"] = {{"alpha", s.agent_cfg.alpha},
                 {"gamma", s.agent_cfg.gamma},
                 {"epsilon_start", s.agent_cfg.epsilon.start},
                 {"epsilon_decay", s.agent_cfg.epsilon.decay},
                 {"epsilon_floor", s.agent_cfg.epsilon.floor},
                 {"reward_weights",
                  {{"accuracy", s.agent_cfg.reward.accuracy},
                   {"cost", s.agent_cfg.reward.cost},
                   {"bonus", s.agent_cfg.reward.bonus}}}};
  j["cost_model"] = {{"mode", s.cost.mode},
                     {"setup", s.cost.setup},
                     {"consensus", s.cost.consensus},
                     {"tx", s.cost.tx},
                     {"epoch", s.cost.epoch}};
  j["synth"] = {{"class_vocab", s.synth.class_vocab},
                {"shared_vocab", s.synth.shared_vocab},
                {"min_tokens", s.synth.min_tokens},
                {"max_tokens", s.synth.max_tokens},
                {"class_token_prob", s.synth.class_token_prob}};
  json orgs = json::array();
  for (const ScenarioOrg& o : s.orgs) {
    json d;
    d["type"] = o.data.type;
    if (o.data.type == "synthetic") {
      d["n"] = o.data.n;
      d["seed_offset"] = o.data.seed_offset;
    } else {
      d["path"] = o.data.csv_path;
    }
    orgs.push_back({{"id", o.id}, {"org", o.org}, {"agents", o.agents}, {"data", d}});
  }
  j["organizations"] = orgs;
  return j.dump(2);
}

namespace {

struct SimOrg {
  ScenarioOrg cfg;
  federation::OrgState state;
  std::vector<std::string> agent_names;
  std::vector<std::vector<model::Example>> agent_shards;
  bool has_private_chain = false;
};

data::Dataset load_org_dataset(const Scenario& sc, const ScenarioOrg& org, SeedSource seeds) {
  if (org.data.type == "csv") {
    std::filesystem::path p = org.data.csv_path;
    if (p.is_relative() && sc.base_dir) p = *sc.base_dir / p;
    data::Dataset ds = data::load_csv(p, sc.classes);
    ds.name = org.id;
    return ds;
  }
  data::Dataset ds = data::synth_gen(org.data.n, sc.classes,
                                     seeds.stream_seed("data:" + org.id) + org.data.seed_offset,
                                     sc.synth);
  ds.name = org.id;
  return ds;
}

}  // namespace

RunResult run_scenario(const Scenario& sc) {
  SeedSource seeds{sc.seed};
  RunResult out;
  SimClock& clock = out.clock;

  bool chain_costed = sc.cost.mode != "normal";
  if (chain_costed) clock.advance(sc.cost.setup);

  // (1) registration
  identity::Registry registry(sc.organization_whitelist, sc.token_ttl,
                              seeds.stream_seed("registry"));
  std::vector<SimOrg> orgs;
  std::map<std::string, std::string> tokens;  // agent name -> token
  std::vector<std::string> all_agents;
  for (const ScenarioOrg& cfg : sc.orgs) {
    SimOrg so;
    so.cfg = cfg;
    registry.register_entity(cfg.id, identity::Role::Client, cfg.org, clock.now);
    for (int a = 0; a < cfg.agents; ++a) {
      std::string name = cfg.id + "_agent_" + std::to_string(a);
      auto [rec, token] = registry.register_entity(name, identity::Role::Agent, cfg.org, clock.now);
      tokens[name] = token;
      so.agent_names.push_back(name);
      all_agents.push_back(name);
    }
    orgs.push_back(std::move(so));
  }

  federation::ChainContext& pub = out.public_chain;
  pub.ledger.channel_id = "public";
  pub.endorsers = all_agents;
  std::size_t k = sc.endorsement_k > 0 ? sc.endorsement_k : (all_agents.size() + 1) / 2;
  pub.policy.required_k = std::min(k, all_agents.size());
  pub.policy.eligible_peers = {all_agents.begin(), all_agents.end()};

  // Registration events are committed in one genesis block, endorsed by the
  // just-registered agents.
  {
    std::vector<chain::Transaction> regs;
    for (const SimOrg& so : orgs) {
      const identity::EntityRecord* crec = registry.find(so.cfg.id);
      regs.push_back(chain::propose_tx(
          registry, so.agent_names.front(),
          chain::RegistrationEventPayload{crec->name, identity::role_name(crec->role), crec->org,
                                          crypto::to_hex(std::span<const std::uint8_t>(
                                              crec->public_key))}));
      for (const std::string& agent : so.agent_names) {
        const identity::EntityRecord* arec = registry.find(agent);
        regs.push_back(chain::propose_tx(
            registry, agent,
            chain::RegistrationEventPayload{arec->name, identity::role_name(arec->role),
                                            arec->org,
                                            crypto::to_hex(std::span<const std::uint8_t>(
                                                arec->public_key))}));
      }
    }
    for (chain::Transaction& tx : regs) {
      for (const std::string& peer : all_agents) {
        auto sig = registry.sign_as(peer, std::span<const std::uint8_t>(tx.tx_id));
        chain::endorse_tx(tx, peer, sig, pub.policy, registry);
        if (chain::eligible_for_ordering(tx, pub.policy, registry)) break;
      }
    }
    chain::order_and_commit(pub.ledger, regs, clock.now, pub.policy, registry);
    if (chain_costed) clock.advance(sc.cost.tx * static_cast<std::int64_t>(regs.size()));
    clock.record("register", std::to_string(regs.size()) + " entities");
  }

  // datasets and validation split
  for (SimOrg& so : orgs) {
    so.state.org_id = so.cfg.id;
    so.state.dataset = load_org_dataset(sc, so.cfg, seeds);
    so.state.features = data::featurize(so.state.dataset, sc.feature_dims);
    so.agent_shards.resize(so.agent_names.size());
    for (std::size_t i = 0; i < so.state.features.size(); ++i) {
      so.agent_shards[i % so.agent_names.size()].push_back(so.state.features[i]);
    }
    out.org_datasets[so.cfg.id] = so.state.dataset;
  }
  out.validation_ds = data::synth_gen(std::max<std::size_t>(sc.validation_n, 8), sc.classes,
                                      seeds.stream_seed("validation"), sc.synth);
  out.validation_set = data::featurize(out.validation_ds, sc.feature_dims);

  // (2) global model upload by the first org's first agent
  model::DenseParams global = model::DenseParams::zeros(sc.classes, sc.feature_dims);
  const std::string uploader = orgs.front().agent_names.front();
  federation::upload_global(pub, registry, uploader, tokens[uploader], global, out.store,
                            clock.now);
  if (chain_costed) clock.advance(sc.cost.tx);
  clock.record("global_upload", "by " + uploader);

  // (3) private chains for orgs above the sample threshold, hybrid mode only
  for (SimOrg& so : orgs) {
    if (so.state.sample_count() >= sc.private_chain_threshold && sc.cost.mode == "hybrid") {
      federation::ChainContext ctx = federation::establish_private_chain(
          registry, tokens[so.agent_names.front()], so.agent_names.front(), so.state, global,
          sc.private_chain_threshold, out.store, clock.now);
      ctx.endorsers = so.agent_names;
      ctx.policy.eligible_peers = {so.agent_names.begin(), so.agent_names.end()};
      ctx.policy.required_k = (so.agent_names.size() + 1) / 2;
      if (ctx.pdc) ctx.pdc->endorsement_policy = ctx.policy;
      out.private_chains.emplace(so.cfg.id, std::move(ctx));
      so.has_private_chain = true;
      if (chain_costed) clock.advance(sc.cost.tx);
      clock.record("private_chain_establish", so.cfg.id);
    }
  }

  // agent state
  for (SimOrg& so : orgs) {
    for (const std::string& name : so.agent_names) {
      agents::Agent ag;
      ag.name = name;
      ag.org = so.cfg.id;
      ag.table.alpha = sc.agent_cfg.alpha;
      ag.table.gamma = sc.agent_cfg.gamma;
      ag.schedule = sc.agent_cfg.epsilon;
      ag.epsilon = sc.agent_cfg.epsilon.start;
      ag.rng = Rng(seeds.stream_seed("agent:" + name));
      out.agent_states.emplace(name, std::move(ag));
    }
  }

  double val_acc = model::accuracy(global, nullptr, out.validation_set);
  std::map<std::string, bool> accepted_last;
  for (const std::string& a : all_agents) accepted_last[a] = false;

  for (std::uint64_t round = 1; round <= sc.global_rounds; ++round) {
    // (4) training, per org; agents pick one action per round
    std::map<std::string, agents::Action> actions;
    for (SimOrg& so : orgs) {
      for (const std::string& name : so.agent_names) {
        agents::Agent& ag = out.agent_states.at(name);
        agents::Observation obs = agents::make_observation(val_acc, accepted_last[name], round - 1,
                                                           sc.global_rounds);
        actions[name] = agents::agent_begin_round(ag, obs);
      }
    }

    federation::PublicRound pub_round;
    pub_round.round = round;
    pub_round.expected = orgs.size();

    for (SimOrg& so : orgs) {
      model::DenseParams chain_model = global;
      if (so.has_private_chain) {
        federation::PrivateRound priv_round;
        priv_round.round = round;
        priv_round.private_epoch = sc.private_epochs;
        federation::ChainContext& priv = out.private_chains.at(so.cfg.id);
        for (std::uint64_t pe = 1; pe <= sc.private_epochs; ++pe) {
          priv_round.member_updates.clear();
          for (std::size_t ai = 0; ai < so.agent_names.size(); ++ai) {
            const std::string& name = so.agent_names[ai];
            federation::OrgState shard_state;
            shard_state.org_id = so.cfg.id;
            shard_state.features = so.agent_shards[ai];
            model::TrainConfig cfg = sc.train;
            Rng train_rng(seeds.stream_seed("train:" + name + ":" + std::to_string(round) + ":" +
                                            std::to_string(pe)));
            model::DenseParams updated =
                federation::local_train(shard_state, chain_model, cfg, actions[name], train_rng);
            std::string digest = out.store.put(updated);
            federation::submit_tx(
                priv, registry, name,
                chain::ModelUpdatePayload{so.cfg.id, digest,
                                          std::max<std::uint64_t>(so.agent_shards[ai].size(), 1),
                                          round, chain::kStagePrivateLocal,
                                          "store:" + digest.substr(0, 12), updated.version},
                clock.now);
            if (chain_costed) clock.advance(sc.cost.tx);
            priv_round.member_updates.push_back(
                federation::Update{name, std::move(updated),
                                   static_cast<double>(std::max<std::size_t>(
                                       so.agent_shards[ai].size(), 1))});
          }
          clock.advance(sc.cost.epoch);
          clock.record("train", so.cfg.id + " private epoch " + std::to_string(pe));
          priv_round.epochs_done = pe;
          if (pe < sc.private_epochs) {
            federation::sort_updates(priv_round.member_updates);
            chain_model = federation::fedavg(priv_round.member_updates);
            std::string digest = out.store.put(chain_model);
            federation::submit_tx(
                priv, registry, so.agent_names.front(),
                chain::ModelUpdatePayload{so.cfg.id, digest,
                                          std::max<std::uint64_t>(so.state.sample_count(), 1),
                                          round, chain::kStagePrivateAggregate,
                                          "store:" + digest.substr(0, 12), chain_model.version},
                clock.now);
            if (chain_costed) clock.advance(sc.cost.tx);
          }
        }
        // (5) private aggregation and cross-chain submission
        federation::PrivateAggregateResult agg = federation::private_aggregate(
            priv, pub, registry, tokens[so.agent_names.front()], so.agent_names.front(),
            so.cfg.id, priv_round, out.store, clock.now);
        if (chain_costed) clock.advance(sc.cost.consensus + 2 * sc.cost.tx);
        clock.record("private_aggregate", so.cfg.id);
        pub_round.submissions.push_back(federation::Update{
            so.cfg.id, std::move(agg.aggregated),
            static_cast<double>(std::max<std::size_t>(so.state.sample_count(), 1))});
        ++pub_round.submissions_seen;
      } else {
        const std::string& name = so.agent_names.front();
        Rng train_rng(seeds.stream_seed("train:" + name + ":" + std::to_string(round) + ":1"));
        model::DenseParams updated =
            federation::local_train(so.state, chain_model, sc.train, actions[name], train_rng);
        clock.advance(sc.cost.epoch);
        clock.record("train", so.cfg.id);
        std::string digest = out.store.put(updated);
        federation::submit_tx(
            pub, registry, name,
            chain::ModelUpdatePayload{so.cfg.id, digest,
                                      std::max<std::uint64_t>(so.state.sample_count(), 1),
                                      round, chain::kStageOrgSubmission,
                                      "store:" + digest.substr(0, 12), updated.version},
            clock.now);
        if (chain_costed) clock.advance(sc.cost.tx);
        pub_round.submissions.push_back(federation::Update{
            so.cfg.id, std::move(updated),
            static_cast<double>(std::max<std::size_t>(so.state.sample_count(), 1))});
        ++pub_round.submissions_seen;
      }
    }

    // (6)+(7) unlearning requests scheduled for this round
    std::vector<unlearning::DeltaParams> round_deltas;
    for (const UnlearnEvent& ev : sc.unlearn_events) {
      if (ev.at_round != round) continue;
      SimOrg* so = nullptr;
      for (SimOrg& cand : orgs) {
        if (cand.cfg.id == ev.org) so = &cand;
      }
      if (so == nullptr) continue;
      auto [forget_ds, retain_ds] =
          data::split_forget(so->state.dataset, ev.selector,
                             seeds.stream_seed("forget:" + ev.org + ":" + std::to_string(round)));
      std::vector<model::Example> forget_feats = data::featurize(forget_ds, sc.feature_dims);
      std::vector<model::Example> retain_feats = data::featurize(retain_ds, sc.feature_dims);
      std::vector<model::Example> val_eval = out.validation_set;
      try {
        auto [val_forget, val_retain] = data::split_forget(
            out.validation_ds, ev.selector,
            seeds.stream_seed("valsplit:" + ev.org + ":" + std::to_string(round)));
        val_eval = data::featurize(val_retain, sc.feature_dims);
      } catch (const Error&) {
        // selector matched nothing in the validation set; evaluate on all of it
      }
      unlearning::UnlearnRequest request = ev.request;
      request.seed = seeds.stream_seed("unlearn:" + ev.org + ":" + std::to_string(round));
      UnlearnEventMetrics evm;
      evm.round = round;
      evm.org = ev.org;
      try {
        unlearning::UnlearnResult res =
            unlearning::unlearn_lora(global, request, forget_feats, retain_feats);
        evm.config_label = res.config_label;
        clock.record("unlearn", ev.org + " " + res.config_label);
        chain::PrivateDataCollection* pdc = nullptr;
        if (auto it = out.private_chains.find(ev.org);
            it != out.private_chains.end() && it->second.pdc) {
          pdc = &*it->second.pdc;
        }
        const std::string& agent = so->agent_names.front();
        std::string txid = unlearning::verify_and_submit(
            res, forget_feats, val_eval, sc.criteria, registry, tokens[agent], agent,
            pub, global, out.store, pdc, clock.now);
        if (chain_costed) clock.advance(sc.cost.tx);
        clock.record("unlearn_verify", ev.org + " tx=" + txid.substr(0, 12));
        evm.metrics = res.metrics;
        evm.tx_id = txid;
        round_deltas.push_back(res.delta);
        // The forgotten rows leave the org's training data for later rounds.
        so->state.dataset = retain_ds;
        so->state.features = retain_feats;
        so->agent_shards.assign(so->agent_names.size(), {});
        for (std::size_t i = 0; i < so->state.features.size(); ++i) {
          so->agent_shards[i % so->agent_names.size()].push_back(so->state.features[i]);
        }
      } catch (const unlearning::CriteriaError& ce) {
        evm.metrics = ce.metrics();
        evm.rejection = ce.what();
        clock.record("unlearn_verify", ev.org + " rejected");
      } catch (const Error& e) {
        evm.rejection = e.what();
        clock.record("unlearn_verify", ev.org + " failed");
      }
      out.metrics.unlearns.push_back(std::move(evm));
    }

    // (8) public aggregation closes the round
    federation::PublicAggregateResult agg = federation::public_aggregate(
        pub, registry, orgs.front().agent_names.front(), pub_round, out.store, clock.now);
    if (chain_costed) clock.advance(sc.cost.tx);
    model::DenseParams next_global = std::move(agg.final_model);
    for (const unlearning::DeltaParams& delta : round_deltas) {
      next_global = unlearning::apply_delta(next_global, delta);
    }
    if (!round_deltas.empty()) out.store.put(next_global);
    clock.record("public_aggregate", "round " + std::to_string(round));

    double next_val_acc = model::accuracy(next_global, nullptr, out.validation_set);

    RoundMetrics rm;
    rm.round = round;
    rm.global_accuracy = next_val_acc;
    for (const federation::Update& u : pub_round.submissions) {
      rm.participating_orgs.push_back(u.org);
    }
    rm.aggregate_version = next_global.version;
    rm.aggregate_tx_id = agg.commit.tx_id_hex;
    for (SimOrg& so : orgs) {
      for (const std::string& name : so.agent_names) {
        agents::Agent& ag = out.agent_states.at(name);
        bool accepted = actions[name] != agents::Action::Abstain;
        agents::RoundOutcome outcome{next_val_acc - val_acc, actions[name], accepted};
        agents::Observation next_obs =
            agents::make_observation(next_val_acc, accepted, round, sc.global_rounds);
        double reward = agents::agent_finish_round(ag, outcome, next_obs, sc.agent_cfg.reward);
        accepted_last[name] = accepted;
        out.last_obs[name] = next_obs;
        rm.agents.push_back(AgentRoundMetrics{name, federation::action_name(actions[name]),
                                              reward});
      }
    }
    rm.clock = clock.now;
    out.metrics.rounds.push_back(std::move(rm));

    global = std::move(next_global);
    val_acc = next_val_acc;
  }

  out.final_model = global;
  out.final_val_accuracy = val_acc;
  out.registry = std::move(registry);
  out.tokens = std::move(tokens);
  return out;
}

std::map<std::string, std::vector<std::int64_t>> time_table(const CostModel& cost,
                                                            std::span<const std::uint64_t> ts) {
  if (ts.empty()) raise(Errc::ConfigError, "time_table needs at least one t value");
  std::map<std::string, std::vector<std::int64_t>> out;
  for (std::uint64_t t : ts) {
    std::int64_t epochs = static_cast<std::int64_t>(t) + 1;
    out["normal"].push_back(cost.epoch * epochs);
    out["public"].push_back(cost.setup + epochs * (cost.epoch + cost.tx));
    out["hybrid"].push_back(cost.setup + epochs * (cost.epoch + cost.consensus));
  }
  return out;
}

}  // namespace fedchain::sim
