#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fedchain/crypto.hpp"
#include "fedchain/rng.hpp"

namespace fedchain::model {

// Sparse feature vector, indices strictly increasing.
struct SparseVec {
  std::vector<std::uint32_t> idx;
  std::vector<double> val;
};

struct Example {
  SparseVec x;
  int label = 0;
};

using Batch = std::span<const Example>;

// Multinomial logistic classifier: logits = W x + b, row-major W.
struct DenseParams {
  std::size_t classes = 0;
  std::size_t features = 0;
  std::vector<double> W;  // classes * features
  std::vector<double> b;  // classes
  std::uint64_t version = 1;

  static DenseParams zeros(std::size_t classes, std::size_t features);
  double& w(std::size_t c, std::size_t j) { return W[c * features + j]; }
  double w(std::size_t c, std::size_t j) const { return W[c * features + j]; }
  bool same_shape(const DenseParams& o) const {
    return classes == o.classes && features == o.features;
  }
};

// Low-rank adapter on W: effective delta is (alpha / rank) * B * A.
// A starts small-uniform, B starts zero, so a fresh adapter is a no-op.
struct LoraAdapter {
  std::size_t rank = 1;
  double alpha = 1.0;
  double dropout = 0.0;
  std::size_t classes = 0;
  std::size_t features = 0;
  std::vector<double> A;  // rank * features
  std::vector<double> B;  // classes * rank

  static LoraAdapter init(std::size_t classes, std::size_t features, std::size_t rank,
                          double alpha, double dropout, Rng& rng);
  double scaling() const { return alpha / static_cast<double>(rank); }
  double& a(std::size_t k, std::size_t j) { return A[k * features + j]; }
  double a(std::size_t k, std::size_t j) const { return A[k * features + j]; }
  double& bm(std::size_t c, std::size_t k) { return B[c * rank + k]; }
  double bm(std::size_t c, std::size_t k) const { return B[c * rank + k]; }
};

struct TrainConfig {
  double learning_rate = 0.1;
  int epochs = 1;
  int batch_size = 16;
  std::uint64_t seed = 0;
};

// Class probabilities. In training mode dropout is applied to the adapter's
// input activations, with masks drawn from rng (inverted scaling).
std::vector<double> forward(const DenseParams& params, const LoraAdapter* adapter,
                            const SparseVec& x, bool train_mode = false, Rng* rng = nullptr);

double nll_loss(std::span<const double> probs, int label);

struct Grads {
  std::vector<double> dW, db;  // empty when adapter_only
  std::vector<double> dA, dB;  // empty when no adapter
  bool adapter_only = false;
};

// Exact gradient of the mean NLL over the batch. With adapter_only set, the
// base weights are frozen and only dA/dB are produced.
Grads grad(const DenseParams& params, const LoraAdapter* adapter, Batch batch, bool adapter_only,
           bool train_mode = false, Rng* rng = nullptr);

// tensor <- tensor - sign * eta * gradient. sign=+1 descends, sign=-1 ascends.
void sgd_step(std::span<double> tensor, std::span<const double> gradient, double eta, int sign);

DenseParams merge_adapter(const DenseParams& params, const LoraAdapter& adapter);

// Argmax accuracy; ties break toward the lowest class index.
double accuracy(const DenseParams& params, const LoraAdapter* adapter, Batch dataset);
double mean_nll(const DenseParams& params, const LoraAdapter* adapter, Batch dataset);

crypto::Digest params_digest(const DenseParams& params);

// Checkpoint: one JSON header line, then little-endian float64 tensors
// (W, b, then A, B when an adapter is present).
void save_checkpoint(const std::filesystem::path& path, const DenseParams& params,
                     const LoraAdapter* adapter = nullptr);
DenseParams load_checkpoint(const std::filesystem::path& path,
                            std::optional<LoraAdapter>* adapter_out = nullptr);

}  // namespace fedchain::model
