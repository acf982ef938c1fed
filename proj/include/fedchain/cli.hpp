#pragma once

#include <filesystem>
#include <optional>
#include <string>

namespace fedchain::cli {

// Exit codes: 0 success, 1 runtime failure, 2 usage/config error,
// 3 unlearning criteria rejection.
inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitRejected = 3;

int run_cli(int argc, const char* const* argv);

// Subcommand bodies, callable directly from tests.
int cmd_run(const std::string& scenario_path, std::optional<std::uint64_t> seed_override,
            const std::filesystem::path& out_dir);

struct UnlearnFlags {
  std::string scenario_path;
  std::filesystem::path out_dir;
  std::string org;
  std::optional<std::string> selector;  // "by-label:1" | "by-keyword:word" | "random:0.25"
  std::optional<std::uint64_t> rank;
  std::optional<double> alpha;
  std::optional<double> dropout;
  std::optional<int> epochs;
  std::optional<double> learning_rate;
  std::optional<double> tau_forget;
  std::optional<double> tau_retain_drop;
};
int cmd_unlearn(const UnlearnFlags& flags);

int cmd_verify_ledger(const std::filesystem::path& ledger_path);

int cmd_report(const std::filesystem::path& out_dir, const std::string& format);

}  // namespace fedchain::cli
