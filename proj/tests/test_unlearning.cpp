#include <doctest.h>

#include <cmath>

#include "fedchain/data.hpp"
#include "fedchain/errors.hpp"
#include "fedchain/unlearning.hpp"

using namespace fedchain;
using namespace fedchain::unlearning;

namespace {

constexpr std::size_t kDims = 4096;

struct Workbench {
  data::Dataset dataset = data::synth_gen(200, 2, 7);
  std::vector<model::Example> all = data::featurize(dataset, kDims);
  std::vector<model::Example> forget, retain;
  model::DenseParams base = model::DenseParams::zeros(2, kDims);

  Workbench() {
    auto [f, r] = data::split_forget(dataset, {data::Selector::ByLabel, 0.0, 1, ""}, 1);
    forget = data::featurize(f, kDims);
    retain = data::featurize(r, kDims);
    // one light epoch, the ignition regime for ascent-based forgetting
    model::TrainConfig cfg{0.3, 1, 16, 11};
    base = retrain_oracle(all, cfg, 2, kDims);
    base.version = 3;
  }
};

UnlearnRequest default_request(std::uint64_t seed = 21) {
  UnlearnRequest req;
  req.org = "lab";
  req.seed = seed;
  return req;
}

struct SubmitRig {
  identity::Registry registry{{"lab"}, 3600, 5150};
  federation::ChainContext pub;
  federation::ModelStore store;
  std::string token;
  chain::PrivateDataCollection pdc;

  SubmitRig() {
    auto [rec, tok] = registry.register_entity("lab_agent", identity::Role::Agent, "lab", 0);
    token = tok;
    pub.ledger.channel_id = "public";
    pub.endorsers = {"lab_agent"};
    pub.policy.required_k = 1;
    pub.policy.eligible_peers = {"lab_agent"};
    pdc.member_orgs = {"lab"};
    pdc.endorsement_policy = pub.policy;
  }
};

}  // namespace

TEST_CASE("zero learning rate leaves a zero delta") {
  Workbench wb;
  UnlearnRequest req = default_request();
  req.learning_rate = 0.0;
  UnlearnResult res = unlearn_lora(wb.base, req, wb.forget, wb.retain);
  for (double v : res.delta.dW) CHECK(v == 0.0);
  for (double v : res.delta.db) CHECK(v == 0.0);
  CHECK(res.metrics.forget_acc_after == res.metrics.forget_acc_before);
}

TEST_CASE("ascent with defaults collapses forget accuracy and spares retain") {
  Workbench wb;
  UnlearnResult res = unlearn_lora(wb.base, default_request(), wb.forget, wb.retain);
  CHECK(res.metrics.forget_acc_before >= 0.90);
  CHECK(res.metrics.forget_acc_after < res.metrics.forget_acc_before);
  CHECK(res.metrics.forget_acc_after <= 0.15);
  CHECK(res.metrics.retain_acc_before - res.metrics.retain_acc_after <= 0.05);
  CHECK(res.metrics.forget_loss_after > res.metrics.forget_loss_before);
  CHECK(res.config_label == "r=8,alpha=8,dropout=0.1");
}

TEST_CASE("base model parameters are never touched") {
  Workbench wb;
  std::vector<double> w_before = wb.base.W;
  std::vector<double> b_before = wb.base.b;
  unlearn_lora(wb.base, default_request(), wb.forget, wb.retain);
  CHECK(wb.base.W == w_before);
  CHECK(wb.base.b == b_before);
}

TEST_CASE("delta consistency: base + delta reproduces the adapted model") {
  Workbench wb;
  UnlearnResult res = unlearn_lora(wb.base, default_request(), wb.forget, wb.retain);
  model::DenseParams updated = apply_delta(wb.base, res.delta);
  // the recomputed delta between updated and base matches elementwise
  DeltaParams rt = delta_between(updated, wb.base);
  for (std::size_t i = 0; i < rt.dW.size(); ++i) {
    CHECK(std::abs(rt.dW[i] - res.delta.dW[i]) <= 1e-12);
  }
  // bias is not adapted, so its delta is exactly zero
  for (double v : res.delta.db) CHECK(v == 0.0);
}

TEST_CASE("divergence guard aborts with the epoch") {
  Workbench wb;
  UnlearnRequest req = default_request();
  req.learning_rate = 50.0;
  req.epochs = 200;
  req.batch_size = 4;
  try {
    unlearn_lora(wb.base, req, wb.forget, wb.retain);
    FAIL("expected Divergence");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::Divergence);
    CHECK(std::string(e.what()).find("epoch") != std::string::npos);
  }
}

TEST_CASE("empty forget set is rejected") {
  Workbench wb;
  std::vector<model::Example> empty;
  CHECK_THROWS_AS((void)unlearn_lora(wb.base, default_request(), empty, wb.retain), Error);
}

TEST_CASE("verify_and_submit: invalid token fails identity check, ledger untouched") {
  Workbench wb;
  SubmitRig rig;
  UnlearnResult res = unlearn_lora(wb.base, default_request(), wb.forget, wb.retain);
  std::string before = chain::export_jsonl(rig.pub.ledger);
  try {
    verify_and_submit(res, wb.forget, wb.retain, {}, rig.registry, rig.token, "lab_agent",
                      rig.pub, wb.base, rig.store, &rig.pdc, /*now=*/999999);
    FAIL("expected TokenInvalid");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::TokenInvalid);
    CHECK(std::string(e.what()).find("Agent identity check failed") != std::string::npos);
  }
  CHECK(chain::export_jsonl(rig.pub.ledger) == before);
  CHECK_FALSE(res.tx_id.has_value());
}

TEST_CASE("verify_and_submit: passing result lands on chain with readable digest") {
  Workbench wb;
  SubmitRig rig;
  UnlearnResult res = unlearn_lora(wb.base, default_request(), wb.forget, wb.retain);
  std::string txid = verify_and_submit(res, wb.forget, wb.retain, {}, rig.registry, rig.token,
                                       "lab_agent", rig.pub, wb.base, rig.store, &rig.pdc, 5);
  CHECK(res.tx_id == txid);
  std::string expected_digest = crypto::to_hex(delta_digest(res.delta));
  CHECK(rig.pub.ledger.world_state.at("unlearn_last:lab") == expected_digest);
  CHECK(rig.pub.ledger.world_state.at("unlearn:lab:" + txid) == expected_digest);
  // raw delta sits in the org collection, retrievable by members only
  CHECK(chain::pdc_get(rig.pdc, "lab", "unlearn-delta:" + txid) == encode_delta(res.delta));
  CHECK(chain::validate_chain(rig.pub.ledger).ok);
}

TEST_CASE("verify_and_submit: zero delta with an unreachable threshold is rejected") {
  Workbench wb;
  SubmitRig rig;
  UnlearnRequest req = default_request();
  req.learning_rate = 0.0;  // nothing forgotten
  UnlearnResult res = unlearn_lora(wb.base, req, wb.forget, wb.retain);
  VerificationCriteria strict;
  strict.tau_forget = 0.0;
  std::string before = chain::export_jsonl(rig.pub.ledger);
  try {
    verify_and_submit(res, wb.forget, wb.retain, strict, rig.registry, rig.token, "lab_agent",
                      rig.pub, wb.base, rig.store, &rig.pdc, 5);
    FAIL("expected CriteriaNotMet");
  } catch (const CriteriaError& e) {
    CHECK(e.code() == Errc::CriteriaNotMet);
    CHECK(e.metrics().forget_acc_after > 0.9);  // still remembers everything
  }
  CHECK(chain::export_jsonl(rig.pub.ledger) == before);
}

TEST_CASE("retrain oracle equals ordinary training when retain is the full set") {
  Workbench wb;
  model::TrainConfig cfg{0.3, 2, 16, 123};
  model::DenseParams a = retrain_oracle(wb.all, cfg, 2, kDims);

  federation::OrgState org;
  org.org_id = "lab";
  org.features = wb.all;
  Rng rng(cfg.seed);
  model::DenseParams b = federation::local_train(org, model::DenseParams::zeros(2, kDims), cfg,
                                                 federation::Action::FullTrain, rng);
  CHECK(a.W == b.W);
  CHECK(a.b == b.b);
}

TEST_CASE("identical request seeds give identical deltas") {
  Workbench wb;
  UnlearnResult a = unlearn_lora(wb.base, default_request(33), wb.forget, wb.retain);
  UnlearnResult b = unlearn_lora(wb.base, default_request(33), wb.forget, wb.retain);
  CHECK(delta_digest(a.delta) == delta_digest(b.delta));
  UnlearnResult c = unlearn_lora(wb.base, default_request(34), wb.forget, wb.retain);
  CHECK(delta_digest(a.delta) != delta_digest(c.delta));
}

TEST_CASE("unlearning tracks the retrain-from-scratch baseline on the forget set") {
  Workbench wb;
  UnlearnResult res = unlearn_lora(wb.base, default_request(), wb.forget, wb.retain);
  model::TrainConfig cfg{0.3, 1, 16, 11};
  model::DenseParams retrained = retrain_oracle(wb.retain, cfg, 2, kDims);
  double oracle_forget_acc = model::accuracy(retrained, nullptr, wb.forget);
  CHECK(std::abs(res.metrics.forget_acc_after - oracle_forget_acc) <= 0.05);
}
