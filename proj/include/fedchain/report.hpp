#pragma once

#include <filesystem>
#include <string>

#include "fedchain/sim.hpp"

namespace fedchain::report {

// Writes the run artifacts into out_dir: metrics.csv, one ledger_*.jsonl per
// chain, qtable_*.csv per agent, summary.txt, final_model.ckpt, run_meta.json.
void emit_report(const sim::RunResult& run, const sim::Scenario& scenario,
                 const std::filesystem::path& out_dir);

// Rebuilds the summary tables (unlearning sweep, time cost, agent policy) from
// a completed run directory. format is "md" or "csv". Throws IoError when the
// directory lacks run outputs.
void regenerate(const std::filesystem::path& out_dir, const std::string& format);

}  // namespace fedchain::report
