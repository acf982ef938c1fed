#include "fedchain/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "fedchain/errors.hpp"
#include "fedchain/rng.hpp"

namespace fedchain::data {

namespace {

// One logical CSV record; quoted fields may span physical lines.
bool read_record(std::istream& in, std::vector<std::string>& fields, std::size_t& lineno) {
  fields.clear();
  std::string field;
  bool in_quotes = false;
  bool any = false;
  char c;
  while (in.get(c)) {
    any = true;
    if (in_quotes) {
      if (c == '"') {
        if (in.peek() == '"') {
          in.get(c);
          field.push_back('"');
        } else {
          in_quotes = false;
        }
      } else {
        if (c == '\n') ++lineno;
        field.push_back(c);
      }
    } else if (c == '"') {
      in_quotes = true;
    } else if (c == ',') {
      fields.push_back(std::move(field));
      field.clear();
    } else if (c == '\n') {
      ++lineno;
      fields.push_back(std::move(field));
      return true;
    } else if (c != '\r') {
      field.push_back(c);
    }
  }
  if (!any) return false;
  fields.push_back(std::move(field));
  return true;
}

std::string csv_quote(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += "\"\"";
    else out.push_back(c);
  }
  out += "\"";
  return out;
}

}  // namespace

Dataset load_csv(const std::filesystem::path& path, int classes) {
  std::ifstream in(path, std::ios::binary);
  if (!in) raise(Errc::IoError, "cannot open " + path.string());
  Dataset ds;
  ds.name = path.stem().string();
  ds.source = "csv";
  std::vector<std::string> fields;
  std::size_t lineno = 1;
  if (!read_record(in, fields, lineno) || fields.size() != 2 || fields[0] != "text" ||
      fields[1] != "label") {
    raise(Errc::ParseError, path.string() + ": line 1: expected header 'text,label'");
  }
  while (true) {
    std::size_t record_line = lineno;
    if (!read_record(in, fields, lineno)) break;
    if (fields.size() == 1 && fields[0].empty()) continue;  // trailing blank line
    if (fields.size() != 2) {
      raise(Errc::ParseError, path.string() + ": line " + std::to_string(record_line) +
                                  ": expected 2 fields, got " + std::to_string(fields.size()));
    }
    int label = 0;
    try {
      std::size_t pos = 0;
      label = std::stoi(fields[1], &pos);
      if (pos != fields[1].size()) throw std::invalid_argument("trailing junk");
    } catch (const std::exception&) {
      raise(Errc::ParseError, path.string() + ": line " + std::to_string(record_line) +
                                  ": label '" + fields[1] + "' is not an integer");
    }
    if (label < 0 || label >= classes) {
      raise(Errc::LabelOutOfRange, path.string() + ": line " + std::to_string(record_line) +
                                       ": label " + std::to_string(label) +
                                       " outside [0, " + std::to_string(classes) + ")");
    }
    ds.items.push_back(Item{std::move(fields[0]), label});
  }
  return ds;
}

void write_csv(const std::filesystem::path& path, const Dataset& ds) {
  std::ofstream out(path, std::ios::binary);
  if (!out) raise(Errc::IoError, "cannot open " + path.string() + " for writing");
  out << "text,label\n";
  for (const Item& item : ds.items) {
    out << csv_quote(item.text) << "," << item.label << "\n";
  }
  if (!out) raise(Errc::IoError, "write failed: " + path.string());
}

model::SparseVec vectorize(std::string_view text, std::size_t dims) {
  if (dims == 0 || (dims & (dims - 1)) != 0) {
    raise(Errc::ConfigError, "feature dims must be a power of two");
  }
  std::map<std::uint32_t, double> counts;
  std::string token;
  auto flush = [&]() {
    if (token.empty()) return;
    counts[static_cast<std::uint32_t>(fnv1a64(token) & (dims - 1))] += 1.0;
    token.clear();
  };
  for (char ch : text) {
    unsigned char c = static_cast<unsigned char>(ch);
    if (std::isalnum(c)) {
      token.push_back(static_cast<char>(std::tolower(c)));
    } else {
      flush();
    }
  }
  flush();
  model::SparseVec v;
  double norm_sq = 0.0;
  for (const auto& [idx, cnt] : counts) {
    v.idx.push_back(idx);
    v.val.push_back(cnt);
    norm_sq += cnt * cnt;
  }
  if (norm_sq > 0.0) {
    double inv = 1.0 / std::sqrt(norm_sq);
    for (double& x : v.val) x *= inv;
  }
  return v;
}

std::vector<model::Example> featurize(const Dataset& ds, std::size_t dims) {
  std::vector<model::Example> out;
  out.reserve(ds.items.size());
  for (const Item& item : ds.items) {
    out.push_back(model::Example{vectorize(item.text, dims), item.label});
  }
  return out;
}

std::pair<Dataset, Dataset> split_forget(const Dataset& ds, const SplitSpec& spec,
                                         std::uint64_t seed) {
  std::vector<std::size_t> forget_idx;
  if (spec.selector == Selector::RandomSeeded) {
    if (spec.forget_fraction < 0.0 || spec.forget_fraction >= 1.0) {
      raise(Errc::ConfigError, "forget_fraction must be in [0,1)");
    }
    std::vector<std::size_t> order(ds.items.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(seed);
    rng.shuffle(order);
    auto k = static_cast<std::size_t>(
        std::floor(spec.forget_fraction * static_cast<double>(ds.items.size())));
    forget_idx.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
    std::sort(forget_idx.begin(), forget_idx.end());
  } else if (spec.selector == Selector::ByLabel) {
    for (std::size_t i = 0; i < ds.items.size(); ++i) {
      if (ds.items[i].label == spec.label) forget_idx.push_back(i);
    }
  } else {
    std::string needle;
    for (char c : spec.keyword) needle.push_back(static_cast<char>(std::tolower(
        static_cast<unsigned char>(c))));
    for (std::size_t i = 0; i < ds.items.size(); ++i) {
      std::string hay;
      for (char c : ds.items[i].text) hay.push_back(static_cast<char>(std::tolower(
          static_cast<unsigned char>(c))));
      if (!needle.empty() && hay.find(needle) != std::string::npos) forget_idx.push_back(i);
    }
  }
  if (forget_idx.empty()) raise(Errc::EmptyForget, "forget selector matched no items");

  Dataset forget, retain;
  forget.name = ds.name + ":forget";
  retain.name = ds.name + ":retain";
  forget.source = retain.source = ds.source;
  std::size_t next = 0;
  for (std::size_t i = 0; i < ds.items.size(); ++i) {
    if (next < forget_idx.size() && forget_idx[next] == i) {
      forget.items.push_back(ds.items[i]);
      ++next;
    } else {
      retain.items.push_back(ds.items[i]);
    }
  }
  return {std::move(forget), std::move(retain)};
}

Dataset synth_gen(std::size_t n, int classes, std::uint64_t seed, const SynthSpec& spec) {
  if (classes < 2) raise(Errc::ConfigError, "need at least two classes");
  if (n < static_cast<std::size_t>(classes)) {
    raise(Errc::ConfigError, "n must be at least the class count");
  }
  Rng rng(seed);
  Dataset ds;
  ds.name = "synthetic";
  ds.source = "synthetic";
  ds.items.reserve(n);
  int span = spec.max_tokens - spec.min_tokens;
  for (std::size_t i = 0; i < n; ++i) {
    int cls = static_cast<int>(i % static_cast<std::size_t>(classes));
    int len = spec.min_tokens + (span > 0 ? static_cast<int>(rng.below(span + 1)) : 0);
    std::string text;
    for (int t = 0; t < len; ++t) {
      if (!text.empty()) text.push_back(' ');
      if (rng.uniform() < spec.class_token_prob) {
        text += "c" + std::to_string(cls) + "w" + std::to_string(rng.below(spec.class_vocab));
      } else {
        text += "shw" + std::to_string(rng.below(spec.shared_vocab));
      }
    }
    ds.items.push_back(Item{std::move(text), cls});
  }
  return ds;
}

}  // namespace fedchain::data
