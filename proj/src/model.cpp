#include "fedchain/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "fedchain/errors.hpp"

namespace fedchain::model {

using nlohmann::json;

namespace {

constexpr double kProbFloor = 1e-12;

void softmax_inplace(std::vector<double>& logits) {
  double mx = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double& z : logits) {
    z = std::exp(z - mx);
    sum += z;
  }
  for (double& z : logits) z /= sum;
}

// Per-example dropout mask over the sparse support, inverted scaling.
std::vector<double> draw_mask(const SparseVec& x, double dropout, Rng& rng) {
  std::vector<double> mask(x.idx.size());
  double keep = 1.0 - dropout;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    mask[i] = rng.uniform() >= dropout ? 1.0 / keep : 0.0;
  }
  return mask;
}

std::vector<double> logits_of(const DenseParams& p, const LoraAdapter* adapter,
                              const SparseVec& x, const std::vector<double>* mask,
                              std::vector<double>* ax_out) {
  if (!x.idx.empty() && x.idx.back() >= p.features) {
    raise(Errc::DimensionMismatch, "feature index exceeds model dimension");
  }
  std::vector<double> logits(p.b);
  for (std::size_t i = 0; i < x.idx.size(); ++i) {
    std::uint32_t j = x.idx[i];
    double v = x.val[i];
    for (std::size_t c = 0; c < p.classes; ++c) logits[c] += p.w(c, j) * v;
  }
  if (adapter != nullptr) {
    if (adapter->features != p.features || adapter->classes != p.classes) {
      raise(Errc::DimensionMismatch, "adapter shape does not match model");
    }
    std::vector<double> ax(adapter->rank, 0.0);
    for (std::size_t i = 0; i < x.idx.size(); ++i) {
      double v = x.val[i] * (mask != nullptr ? (*mask)[i] : 1.0);
      if (v == 0.0) continue;
      std::uint32_t j = x.idx[i];
      for (std::size_t k = 0; k < adapter->rank; ++k) ax[k] += adapter->a(k, j) * v;
    }
    double s = adapter->scaling();
    for (std::size_t c = 0; c < p.classes; ++c) {
      double acc = 0.0;
      for (std::size_t k = 0; k < adapter->rank; ++k) acc += adapter->bm(c, k) * ax[k];
      logits[c] += s * acc;
    }
    if (ax_out != nullptr) *ax_out = std::move(ax);
  }
  return logits;
}

}  // namespace

DenseParams DenseParams::zeros(std::size_t classes, std::size_t features) {
  DenseParams p;
  p.classes = classes;
  p.features = features;
  p.W.assign(classes * features, 0.0);
  p.b.assign(classes, 0.0);
  p.version = 1;
  return p;
}

LoraAdapter LoraAdapter::init(std::size_t classes, std::size_t features, std::size_t rank,
                              double alpha, double dropout, Rng& rng) {
  if (rank < 1) raise(Errc::ConfigError, "adapter rank must be >= 1");
  if (dropout < 0.0 || dropout >= 1.0) raise(Errc::ConfigError, "dropout must be in [0,1)");
  LoraAdapter ad;
  ad.rank = rank;
  ad.alpha = alpha;
  ad.dropout = dropout;
  ad.classes = classes;
  ad.features = features;
  ad.A.resize(rank * features);
  for (double& v : ad.A) v = rng.uniform(-0.01, 0.01);
  ad.B.assign(classes * rank, 0.0);
  return ad;
}

std::vector<double> forward(const DenseParams& params, const LoraAdapter* adapter,
                            const SparseVec& x, bool train_mode, Rng* rng) {
  std::vector<double> mask;
  const std::vector<double>* mask_ptr = nullptr;
  if (adapter != nullptr && train_mode && adapter->dropout > 0.0) {
    if (rng == nullptr) raise(Errc::ConfigError, "training-mode dropout needs an rng");
    mask = draw_mask(x, adapter->dropout, *rng);
    mask_ptr = &mask;
  }
  std::vector<double> logits = logits_of(params, adapter, x, mask_ptr, nullptr);
  softmax_inplace(logits);
  return logits;
}

double nll_loss(std::span<const double> probs, int label) {
  if (label < 0 || static_cast<std::size_t>(label) >= probs.size()) {
    raise(Errc::LabelOutOfRange, "label " + std::to_string(label) + " out of range");
  }
  return -std::log(std::max(probs[static_cast<std::size_t>(label)], kProbFloor));
}

Grads grad(const DenseParams& params, const LoraAdapter* adapter, Batch batch, bool adapter_only,
           bool train_mode, Rng* rng) {
  if (batch.empty()) raise(Errc::EmptyDataset, "gradient of an empty batch");
  if (adapter_only && adapter == nullptr) {
    raise(Errc::ConfigError, "adapter-only gradients need an adapter");
  }
  Grads g;
  g.adapter_only = adapter_only;
  if (!adapter_only) {
    g.dW.assign(params.classes * params.features, 0.0);
    g.db.assign(params.classes, 0.0);
  }
  if (adapter != nullptr) {
    g.dA.assign(adapter->rank * adapter->features, 0.0);
    g.dB.assign(adapter->classes * adapter->rank, 0.0);
  }
  double inv_n = 1.0 / static_cast<double>(batch.size());
  double s = adapter != nullptr ? adapter->scaling() : 0.0;

  for (const Example& ex : batch) {
    std::vector<double> mask;
    const std::vector<double>* mask_ptr = nullptr;
    if (adapter != nullptr && train_mode && adapter->dropout > 0.0) {
      if (rng == nullptr) raise(Errc::ConfigError, "training-mode dropout needs an rng");
      mask = draw_mask(ex.x, adapter->dropout, *rng);
      mask_ptr = &mask;
    }
    std::vector<double> ax;
    std::vector<double> probs =
        logits_of(params, adapter, ex.x, mask_ptr, adapter != nullptr ? &ax : nullptr);
    softmax_inplace(probs);
    if (ex.label < 0 || static_cast<std::size_t>(ex.label) >= params.classes) {
      raise(Errc::LabelOutOfRange, "label " + std::to_string(ex.label) + " out of range");
    }
    // dL/dlogit_c = p_c - [c == label], scaled by 1/n for the batch mean.
    std::vector<double> gl(probs);
    gl[static_cast<std::size_t>(ex.label)] -= 1.0;
    for (double& v : gl) v *= inv_n;

    if (!adapter_only) {
      for (std::size_t c = 0; c < params.classes; ++c) {
        if (gl[c] == 0.0) continue;
        for (std::size_t i = 0; i < ex.x.idx.size(); ++i) {
          g.dW[c * params.features + ex.x.idx[i]] += gl[c] * ex.x.val[i];
        }
        g.db[c] += gl[c];
      }
    }
    if (adapter != nullptr) {
      // dB[c,k] = s * gl[c] * (A x')_k ; dA[k,j] = s * (B^T gl)_k * x'_j
      for (std::size_t c = 0; c < adapter->classes; ++c) {
        if (gl[c] == 0.0) continue;
        for (std::size_t k = 0; k < adapter->rank; ++k) {
          g.dB[c * adapter->rank + k] += s * gl[c] * ax[k];
        }
      }
      std::vector<double> btg(adapter->rank, 0.0);
      for (std::size_t k = 0; k < adapter->rank; ++k) {
        for (std::size_t c = 0; c < adapter->classes; ++c) {
          btg[k] += adapter->bm(c, k) * gl[c];
        }
      }
      for (std::size_t k = 0; k < adapter->rank; ++k) {
        if (btg[k] == 0.0) continue;
        for (std::size_t i = 0; i < ex.x.idx.size(); ++i) {
          double v = ex.x.val[i] * (mask_ptr != nullptr ? mask[i] : 1.0);
          if (v == 0.0) continue;
          g.dA[k * adapter->features + ex.x.idx[i]] += s * btg[k] * v;
        }
      }
    }
  }
  return g;
}

void sgd_step(std::span<double> tensor, std::span<const double> gradient, double eta, int sign) {
  if (tensor.size() != gradient.size()) {
    raise(Errc::ShapeMismatch, "tensor and gradient sizes differ");
  }
  double step = eta * static_cast<double>(sign);
  for (std::size_t i = 0; i < tensor.size(); ++i) tensor[i] -= step * gradient[i];
}

DenseParams merge_adapter(const DenseParams& params, const LoraAdapter& adapter) {
  if (adapter.features != params.features || adapter.classes != params.classes) {
    raise(Errc::DimensionMismatch, "adapter shape does not match model");
  }
  DenseParams out = params;
  double s = adapter.scaling();
  for (std::size_t c = 0; c < params.classes; ++c) {
    for (std::size_t k = 0; k < adapter.rank; ++k) {
      double bk = adapter.bm(c, k);
      if (bk == 0.0) continue;
      const double* arow = &adapter.A[k * adapter.features];
      double* wrow = &out.W[c * params.features];
      for (std::size_t j = 0; j < params.features; ++j) wrow[j] += s * bk * arow[j];
    }
  }
  out.version = params.version + 1;
  return out;
}

double accuracy(const DenseParams& params, const LoraAdapter* adapter, Batch dataset) {
  if (dataset.empty()) raise(Errc::EmptyDataset, "accuracy of an empty dataset");
  std::size_t hits = 0;
  for (const Example& ex : dataset) {
    std::vector<double> logits = logits_of(params, adapter, ex.x, nullptr, nullptr);
    std::size_t best = 0;
    for (std::size_t c = 1; c < logits.size(); ++c) {
      if (logits[c] > logits[best]) best = c;  // strict: ties keep the lowest index
    }
    if (static_cast<int>(best) == ex.label) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(dataset.size());
}

double mean_nll(const DenseParams& params, const LoraAdapter* adapter, Batch dataset) {
  if (dataset.empty()) raise(Errc::EmptyDataset, "loss of an empty dataset");
  double total = 0.0;
  for (const Example& ex : dataset) {
    std::vector<double> probs = forward(params, adapter, ex.x);
    total += nll_loss(probs, ex.label);
  }
  return total / static_cast<double>(dataset.size());
}

crypto::Digest params_digest(const DenseParams& params) {
  std::vector<std::uint8_t> buf;
  buf.reserve((params.W.size() + params.b.size()) * sizeof(double) + 24);
  auto put_u64 = [&buf](std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  };
  put_u64(params.classes);
  put_u64(params.features);
  put_u64(params.version);
  auto put_doubles = [&buf](const std::vector<double>& v) {
    for (double d : v) {
      std::uint64_t bits;
      std::memcpy(&bits, &d, sizeof(bits));
      for (int i = 0; i < 8; ++i) buf.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
    }
  };
  put_doubles(params.W);
  put_doubles(params.b);
  return crypto::sha256(std::span<const std::uint8_t>(buf));
}

namespace {

void write_doubles(std::ofstream& out, const std::vector<double>& v) {
  static_assert(sizeof(double) == 8);
  out.write(reinterpret_cast<const char*>(v.data()),
            static_cast<std::streamsize>(v.size() * sizeof(double)));
}

void read_doubles(std::ifstream& in, std::vector<double>& v, std::size_t n) {
  v.resize(n);
  in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(double)));
  if (!in) raise(Errc::ParseError, "checkpoint body truncated");
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const DenseParams& params,
                     const LoraAdapter* adapter) {
  std::ofstream out(path, std::ios::binary);
  if (!out) raise(Errc::IoError, "cannot open " + path.string() + " for writing");
  json header = {{"classes", params.classes},
                 {"features", params.features},
                 {"version", params.version}};
  if (adapter != nullptr) {
    header["adapter"] = {{"rank", adapter->rank},
                         {"alpha", adapter->alpha},
                         {"dropout", adapter->dropout}};
  } else {
    header["adapter"] = nullptr;
  }
  out << header.dump() << "\n";
  write_doubles(out, params.W);
  write_doubles(out, params.b);
  if (adapter != nullptr) {
    write_doubles(out, adapter->A);
    write_doubles(out, adapter->B);
  }
  if (!out) raise(Errc::IoError, "write failed: " + path.string());
}

DenseParams load_checkpoint(const std::filesystem::path& path,
                            std::optional<LoraAdapter>* adapter_out) {
  std::ifstream in(path, std::ios::binary);
  if (!in) raise(Errc::IoError, "cannot open " + path.string());
  std::string header_line;
  if (!std::getline(in, header_line)) raise(Errc::ParseError, "missing checkpoint header");
  json header;
  try {
    header = json::parse(header_line);
  } catch (const std::exception& e) {
    raise(Errc::ParseError, std::string("bad checkpoint header: ") + e.what());
  }
  DenseParams p;
  p.classes = header.at("classes").get<std::size_t>();
  p.features = header.at("features").get<std::size_t>();
  p.version = header.at("version").get<std::uint64_t>();
  read_doubles(in, p.W, p.classes * p.features);
  read_doubles(in, p.b, p.classes);
  if (adapter_out != nullptr) {
    adapter_out->reset();
    if (!header.at("adapter").is_null()) {
      LoraAdapter ad;
      ad.rank = header["adapter"].at("rank").get<std::size_t>();
      ad.alpha = header["adapter"].at("alpha").get<double>();
      ad.dropout = header["adapter"].at("dropout").get<double>();
      ad.classes = p.classes;
      ad.features = p.features;
      read_doubles(in, ad.A, ad.rank * ad.features);
      read_doubles(in, ad.B, ad.classes * ad.rank);
      *adapter_out = std::move(ad);
    }
  }
  return p;
}

}  // namespace fedchain::model
