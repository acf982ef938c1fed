#include "fedchain/unlearning.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>

#include "fedchain/rng.hpp"

namespace fedchain::unlearning {

namespace {

constexpr double kDivergenceBound = 1e6;

bool tensor_sane(std::span<const double> t) {
  for (double v : t) {
    if (!std::isfinite(v) || std::abs(v) > kDivergenceBound) return false;
  }
  return true;
}

std::string config_label(const UnlearnRequest& r) {
  char buf[96];
  std::snprintf(buf, sizeof(buf), "r=%zu,alpha=%g,dropout=%g", r.rank, r.alpha, r.dropout);
  return buf;
}

}  // namespace

model::DenseParams apply_delta(const model::DenseParams& base, const DeltaParams& delta) {
  if (delta.classes != base.classes || delta.features != base.features) {
    raise(Errc::DimensionMismatch, "delta shape does not match base model");
  }
  model::DenseParams out = base;
  for (std::size_t i = 0; i < out.W.size(); ++i) out.W[i] += delta.dW[i];
  for (std::size_t i = 0; i < out.b.size(); ++i) out.b[i] += delta.db[i];
  out.version = base.version + 1;
  return out;
}

DeltaParams delta_between(const model::DenseParams& updated, const model::DenseParams& base) {
  if (!updated.same_shape(base)) raise(Errc::DimensionMismatch, "model shapes differ");
  DeltaParams d;
  d.classes = base.classes;
  d.features = base.features;
  d.dW.resize(base.W.size());
  d.db.resize(base.b.size());
  for (std::size_t i = 0; i < d.dW.size(); ++i) d.dW[i] = updated.W[i] - base.W[i];
  for (std::size_t i = 0; i < d.db.size(); ++i) d.db[i] = updated.b[i] - base.b[i];
  return d;
}

crypto::Digest delta_digest(const DeltaParams& delta) {
  std::vector<std::uint8_t> buf;
  buf.reserve((delta.dW.size() + delta.db.size()) * 8 + 16);
  auto put_u64 = [&buf](std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  };
  put_u64(delta.classes);
  put_u64(delta.features);
  auto put_doubles = [&buf](const std::vector<double>& v) {
    for (double x : v) {
      std::uint64_t bits;
      std::memcpy(&bits, &x, sizeof(bits));
      for (int i = 0; i < 8; ++i) buf.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
    }
  };
  put_doubles(delta.dW);
  put_doubles(delta.db);
  return crypto::sha256(std::span<const std::uint8_t>(buf));
}

std::string encode_delta(const DeltaParams& delta) {
  std::string body;
  body.reserve((delta.dW.size() + delta.db.size()) * 8);
  auto put_doubles = [&body](const std::vector<double>& v) {
    for (double x : v) {
      std::uint64_t bits;
      std::memcpy(&bits, &x, sizeof(bits));
      for (int i = 0; i < 8; ++i) body.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
    }
  };
  put_doubles(delta.dW);
  put_doubles(delta.db);
  return crypto::b64url_encode(body);
}

UnlearnResult unlearn_lora(const model::DenseParams& global_params, const UnlearnRequest& request,
                           std::span<const model::Example> forget_set,
                           std::span<const model::Example> retain_eval) {
  if (forget_set.empty()) raise(Errc::EmptyForget, "forget set is empty");
  if (request.epochs < 1) raise(Errc::ConfigError, "unlearning epochs must be >= 1");
  for (double v : global_params.W) {
    if (!std::isfinite(v)) raise(Errc::ConfigError, "global model has non-finite parameters");
  }

  // LLM_local starts as the global model; only the adapter ever trains.
  Rng rng(splitmix64(request.seed ^ fnv1a64("unlearn-adapter")));
  model::LoraAdapter adapter =
      model::LoraAdapter::init(global_params.classes, global_params.features, request.rank,
                               request.alpha, request.dropout, rng);

  UnlearnResult result;
  result.base_version = global_params.version;
  result.config_label = config_label(request);
  result.metrics.forget_acc_before = model::accuracy(global_params, nullptr, forget_set);
  result.metrics.forget_loss_before = model::mean_nll(global_params, nullptr, forget_set);
  if (!retain_eval.empty()) {
    result.metrics.retain_acc_before = model::accuracy(global_params, nullptr, retain_eval);
    result.metrics.retain_loss_before = model::mean_nll(global_params, nullptr, retain_eval);
  }

  std::vector<std::size_t> order(forget_set.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::size_t bs = request.batch_size > 0 ? static_cast<std::size_t>(request.batch_size)
                                          : forget_set.size();
  std::vector<model::Example> batch;
  for (int epoch = 1; epoch <= request.epochs; ++epoch) {
    rng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += bs) {
      batch.clear();
      for (std::size_t i = start; i < std::min(start + bs, order.size()); ++i) {
        batch.push_back(forget_set[order[i]]);
      }
      model::Grads g = model::grad(global_params, &adapter, batch, true, true, &rng);
      // Ascent on the forget loss, adapter tensors only.
      model::sgd_step(adapter.A, g.dA, request.learning_rate, -1);
      model::sgd_step(adapter.B, g.dB, request.learning_rate, -1);
    }
    if (!tensor_sane(adapter.A) || !tensor_sane(adapter.B)) {
      raise(Errc::Divergence, "adapter diverged at epoch " + std::to_string(epoch));
    }
  }

  model::DenseParams merged = model::merge_adapter(global_params, adapter);
  result.delta = delta_between(merged, global_params);
  result.metrics.forget_acc_after = model::accuracy(merged, nullptr, forget_set);
  result.metrics.forget_loss_after = model::mean_nll(merged, nullptr, forget_set);
  if (!retain_eval.empty()) {
    result.metrics.retain_acc_after = model::accuracy(merged, nullptr, retain_eval);
    result.metrics.retain_loss_after = model::mean_nll(merged, nullptr, retain_eval);
  }
  return result;
}

std::string verify_and_submit(UnlearnResult& result, std::span<const model::Example> forget_set,
                              std::span<const model::Example> validation_set,
                              const VerificationCriteria& criteria,
                              const identity::Registry& registry, std::string_view token,
                              const std::string& agent, federation::ChainContext& public_chain,
                              const model::DenseParams& global_params,
                              federation::ModelStore& store,
                              chain::PrivateDataCollection* pdc, std::int64_t now) {
  // Identity first, evaluation second, submission last.
  if (registry.validate_token(token, now) != identity::TokenStatus::Valid) {
    raise(Errc::TokenInvalid, "Agent identity check failed");
  }
  model::DenseParams updated = apply_delta(global_params, result.delta);

  UnlearnMetrics checked;
  checked.forget_acc_before = model::accuracy(global_params, nullptr, forget_set);
  checked.forget_loss_before = model::mean_nll(global_params, nullptr, forget_set);
  checked.retain_acc_before = model::accuracy(global_params, nullptr, validation_set);
  checked.retain_loss_before = model::mean_nll(global_params, nullptr, validation_set);
  checked.forget_acc_after = model::accuracy(updated, nullptr, forget_set);
  checked.forget_loss_after = model::mean_nll(updated, nullptr, forget_set);
  checked.retain_acc_after = model::accuracy(updated, nullptr, validation_set);
  checked.retain_loss_after = model::mean_nll(updated, nullptr, validation_set);
  result.metrics = checked;

  double retain_drop_points = (checked.retain_acc_before - checked.retain_acc_after) * 100.0;
  if (checked.forget_acc_after > criteria.tau_forget ||
      retain_drop_points > criteria.tau_retain_drop_points) {
    char buf[160];
    std::snprintf(buf, sizeof(buf),
                  "forget accuracy %.4f (tau %.4f), retain drop %.2f points (tau %.2f)",
                  checked.forget_acc_after, criteria.tau_forget, retain_drop_points,
                  criteria.tau_retain_drop_points);
    throw CriteriaError(buf, checked);
  }

  const identity::EntityRecord* rec = registry.find(agent);
  std::string digest_hex = crypto::to_hex(delta_digest(result.delta));
  chain::UnlearnResultPayload payload{rec != nullptr ? rec->org : agent,
                                      digest_hex,
                                      checked.forget_acc_before,
                                      checked.forget_acc_after,
                                      checked.retain_acc_before,
                                      checked.retain_acc_after,
                                      criteria.tau_forget,
                                      criteria.tau_retain_drop_points,
                                      result.base_version};
  federation::CommitReceipt receipt =
      federation::submit_tx(public_chain, registry, agent, payload, now);
  store.put(updated);
  if (pdc != nullptr) {
    chain::pdc_put(*pdc, payload.org, "unlearn-delta:" + receipt.tx_id_hex,
                   encode_delta(result.delta), registry);
  }
  result.tx_id = receipt.tx_id_hex;
  return receipt.tx_id_hex;
}

model::DenseParams retrain_oracle(std::span<const model::Example> retain_set,
                                  const model::TrainConfig& config, std::size_t classes,
                                  std::size_t features) {
  if (retain_set.empty()) raise(Errc::EmptyDataset, "retrain oracle needs a non-empty retain set");
  model::DenseParams params = model::DenseParams::zeros(classes, features);
  Rng rng(config.seed);
  std::vector<std::size_t> order(retain_set.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::size_t bs = config.batch_size > 0 ? static_cast<std::size_t>(config.batch_size)
                                         : retain_set.size();
  std::vector<model::Example> batch;
  for (int e = 0; e < config.epochs; ++e) {
    rng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += bs) {
      batch.clear();
      for (std::size_t i = start; i < std::min(start + bs, order.size()); ++i) {
        batch.push_back(retain_set[order[i]]);
      }
      model::Grads g = model::grad(params, nullptr, batch, false);
      model::sgd_step(params.W, g.dW, config.learning_rate, +1);
      model::sgd_step(params.b, g.db, config.learning_rate, +1);
    }
  }
  return params;
}

}  // namespace fedchain::unlearning
