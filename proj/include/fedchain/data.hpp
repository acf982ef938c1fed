#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "fedchain/model.hpp"

namespace fedchain::data {

struct Item {
  std::string text;
  int label = 0;
};

struct Dataset {
  std::vector<Item> items;
  std::string name;
  std::string source;  // "csv" or "synthetic"
};

// CSV schema: header `text,label`, RFC-4180 quoting for embedded commas,
// quotes and newlines. ParseError carries the offending line number.
Dataset load_csv(const std::filesystem::path& path, int classes);
void write_csv(const std::filesystem::path& path, const Dataset& ds);

// Lowercase, split on non-alphanumerics, FNV-1a 64 hash mod dims (dims must be
// a power of two), accumulate counts, L2-normalize. Empty text gives an empty
// vector.
model::SparseVec vectorize(std::string_view text, std::size_t dims);

std::vector<model::Example> featurize(const Dataset& ds, std::size_t dims);

enum class Selector { RandomSeeded, ByLabel, ByKeyword };

struct SplitSpec {
  Selector selector = Selector::RandomSeeded;
  double forget_fraction = 0.0;  // random-seeded only
  int label = 0;                 // by-label
  std::string keyword;           // by-keyword
};

// Disjoint, exhaustive (forget, retain) split; deterministic under seed.
// Throws EmptyForget when the selector matches nothing.
std::pair<Dataset, Dataset> split_forget(const Dataset& ds, const SplitSpec& spec,
                                         std::uint64_t seed);

struct SynthSpec {
  std::size_t class_vocab = 8;    // class-specific tokens per class
  std::size_t shared_vocab = 12;  // tokens shared across classes
  int min_tokens = 6;
  int max_tokens = 10;
  double class_token_prob = 0.98;  // remainder drawn from the shared vocab
};

// Class-correlated keyword sentences with balanced labels. A fitted logistic
// model separates the classes comfortably above 0.9 accuracy.
Dataset synth_gen(std::size_t n, int classes, std::uint64_t seed, const SynthSpec& spec = {});

}  // namespace fedchain::data
