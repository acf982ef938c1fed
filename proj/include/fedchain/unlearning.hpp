#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>

#include "fedchain/errors.hpp"
#include "fedchain/federation.hpp"
#include "fedchain/model.hpp"

namespace fedchain::unlearning {

struct UnlearnRequest {
  std::string org;
  double learning_rate = 0.1;
  int epochs = 20;         // E_u
  int batch_size = 12;     // minibatch size per forgetting epoch
  std::size_t rank = 8;    // LoRA r
  double alpha = 8.0;      // LoRA alpha
  double dropout = 0.1;    // LoRA dropout
  std::uint64_t seed = 0;
};

// Dense difference between the adapted model and the base it was built on.
struct DeltaParams {
  std::size_t classes = 0;
  std::size_t features = 0;
  std::vector<double> dW;
  std::vector<double> db;
};

struct UnlearnMetrics {
  double forget_acc_before = 0, forget_acc_after = 0;
  double retain_acc_before = 0, retain_acc_after = 0;
  double forget_loss_before = 0, forget_loss_after = 0;
  double retain_loss_before = 0, retain_loss_after = 0;
};

struct UnlearnResult {
  DeltaParams delta;
  UnlearnMetrics metrics;
  std::uint64_t base_version = 0;
  std::string config_label;  // "r=8,alpha=8,dropout=0.1"
  std::optional<std::string> tx_id;
};

struct VerificationCriteria {
  double tau_forget = 0.15;            // max forget-set accuracy after unlearning
  double tau_retain_drop_points = 5.0; // max retain accuracy drop, percentage points
};

class CriteriaError : public Error {
 public:
  CriteriaError(const std::string& msg, UnlearnMetrics metrics)
      : Error(Errc::CriteriaNotMet, msg), metrics_(metrics) {}
  const UnlearnMetrics& metrics() const { return metrics_; }

 private:
  UnlearnMetrics metrics_;
};

// Gradient-ascent forgetting through a fresh LoRA adapter on a frozen base.
// Each epoch sweeps the forget set in seeded minibatches; dropout is active.
// Aborts with Divergence if any parameter leaves [-1e6, 1e6] or goes
// non-finite.
UnlearnResult unlearn_lora(const model::DenseParams& global_params, const UnlearnRequest& request,
                           std::span<const model::Example> forget_set,
                           std::span<const model::Example> retain_eval);

model::DenseParams apply_delta(const model::DenseParams& base, const DeltaParams& delta);
DeltaParams delta_between(const model::DenseParams& updated, const model::DenseParams& base);
crypto::Digest delta_digest(const DeltaParams& delta);
std::string encode_delta(const DeltaParams& delta);  // base64url of LE float64 body

// Checks the token, re-evaluates the delta against the evaluation sets, and on
// success commits an unlearn-result transaction (plus the raw delta into the
// org's private collection when one exists). Returns the transaction id.
// Throws TokenInvalid ("Agent identity check failed") or CriteriaError; on any
// throw every ledger byte is left untouched.
std::string verify_and_submit(UnlearnResult& result, std::span<const model::Example> forget_set,
                              std::span<const model::Example> validation_set,
                              const VerificationCriteria& criteria,
                              const identity::Registry& registry, std::string_view token,
                              const std::string& agent, federation::ChainContext& public_chain,
                              const model::DenseParams& global_params,
                              federation::ModelStore& store,
                              chain::PrivateDataCollection* pdc, std::int64_t now);

// Fresh model trained only on the retained data; the comparison baseline.
model::DenseParams retrain_oracle(std::span<const model::Example> retain_set,
                                  const model::TrainConfig& config, std::size_t classes,
                                  std::size_t features);

}  // namespace fedchain::unlearning
