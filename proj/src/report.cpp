#include "fedchain/report.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "fedchain/errors.hpp"

namespace fedchain::report {

using nlohmann::json;

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

void write_file(const std::filesystem::path& p, const std::string& content) {
  std::ofstream out(p, std::ios::binary);
  if (!out) raise(Errc::IoError, "cannot open " + p.string() + " for writing");
  out << content;
  if (!out) raise(Errc::IoError, "write failed: " + p.string());
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) raise(Errc::IoError, "missing run output: " + p.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

std::string obs_label(int state_index) {
  static const char* kAcc[] = {"low", "mid", "high"};
  int acc = state_index / 4;
  bool accepted = (state_index % 4) / 2 != 0;
  bool late = state_index % 2 != 0;
  std::string s = kAcc[acc];
  s += accepted ? "|accepted" : "|not-accepted";
  s += late ? "|late" : "|early";
  return s;
}

constexpr std::uint64_t kTimeTableTs[] = {0, 9, 99, 999};

json time_table_json(const sim::CostModel& cost) {
  auto table = sim::time_table(cost, kTimeTableTs);
  json jt;
  for (const auto& [mode, row] : table) jt[mode] = row;
  return jt;
}

std::string render_time_table_md(const json& jt) {
  std::ostringstream out;
  out << "| mode | t=0 | t=9 | t=99 | t=999 |\n|---|---|---|---|---|\n";
  for (const std::string mode : {"normal", "public", "hybrid"}) {
    if (!jt.contains(mode)) continue;
    out << "| " << mode;
    for (const auto& v : jt[mode]) out << " | " << v.get<std::int64_t>();
    out << " |\n";
  }
  return out.str();
}

}  // namespace

void emit_report(const sim::RunResult& run, const sim::Scenario& scenario,
                 const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);

  // metrics.csv: one row per completed round
  {
    std::ostringstream csv;
    csv << "round,global_accuracy,clock_seconds,participants,aggregate_version,"
           "aggregate_tx_id,actions,rewards\n";
    for (const sim::RoundMetrics& rm : run.metrics.rounds) {
      csv << rm.round << "," << fmt(rm.global_accuracy) << "," << rm.clock << ",";
      std::string orgs;
      for (const std::string& org : rm.participating_orgs) {
        if (!orgs.empty()) orgs += ";";
        orgs += org;
      }
      csv << orgs << "," << rm.aggregate_version << "," << rm.aggregate_tx_id << ",";
      std::string actions, rewards;
      for (const sim::AgentRoundMetrics& am : rm.agents) {
        if (!actions.empty()) actions += ";";
        if (!rewards.empty()) rewards += ";";
        actions += am.agent + ":" + am.action;
        rewards += am.agent + ":" + fmt(am.reward);
      }
      csv << actions << "," << rewards << "\n";
    }
    write_file(out_dir / "metrics.csv", csv.str());
  }

  write_file(out_dir / "ledger_public.jsonl", chain::export_jsonl(run.public_chain.ledger));
  for (const auto& [org, ctx] : run.private_chains) {
    write_file(out_dir / ("ledger_private_" + org + ".jsonl"), chain::export_jsonl(ctx.ledger));
  }

  for (const auto& [name, agent] : run.agent_states) {
    std::ostringstream csv;
    csv << "state,action,value\n";
    for (int s = 0; s < agents::Observation::kStates; ++s) {
      for (int a = 0; a < agents::kNumActions; ++a) {
        csv << obs_label(s) << "," << federation::action_name(static_cast<federation::Action>(a))
            << "," << fmt(agent.table.values[s][a]) << "\n";
      }
    }
    write_file(out_dir / ("qtable_" + name + ".csv"), csv.str());
  }

  model::save_checkpoint(out_dir / "final_model.ckpt", run.final_model);

  json meta;
  meta["scenario"] = scenario.name;
  meta["seed"] = scenario.seed;
  meta["rounds"] = run.metrics.rounds.size();
  meta["final_accuracy"] = run.final_val_accuracy;
  meta["final_model_digest"] = crypto::to_hex(model::params_digest(run.final_model));
  meta["clock_seconds"] = run.clock.now;
  meta["cost_model"] = {{"mode", scenario.cost.mode},
                        {"setup", scenario.cost.setup},
                        {"consensus", scenario.cost.consensus},
                        {"tx", scenario.cost.tx},
                        {"epoch", scenario.cost.epoch}};
  meta["time_table"] = time_table_json(scenario.cost);
  json events = json::array();
  for (const sim::UnlearnEventMetrics& ev : run.metrics.unlearns) {
    events.push_back({{"round", ev.round},
                      {"org", ev.org},
                      {"config", ev.config_label},
                      {"forget_acc_before", ev.metrics.forget_acc_before},
                      {"forget_acc_after", ev.metrics.forget_acc_after},
                      {"retain_acc_before", ev.metrics.retain_acc_before},
                      {"retain_acc_after", ev.metrics.retain_acc_after},
                      {"forget_loss_before", ev.metrics.forget_loss_before},
                      {"forget_loss_after", ev.metrics.forget_loss_after},
                      {"tx_id", ev.tx_id},
                      {"rejection", ev.rejection}});
  }
  meta["unlearn_events"] = events;
  json policy = json::object();
  for (const auto& [name, agent] : run.agent_states) {
    json rows = json::object();
    for (int s = 0; s < agents::Observation::kStates; ++s) {
      agents::Observation obs;
      // index() is acc*4 + accepted*2 + late; reconstruct for argmax
      obs.acc_bucket = s / 4;
      obs.last_accepted = (s % 4) / 2 != 0;
      obs.late_phase = s % 2 != 0;
      rows[obs_label(s)] = federation::action_name(agent.table.argmax(obs));
    }
    policy[name] = rows;
  }
  meta["greedy_policy"] = policy;
  write_file(out_dir / "run_meta.json", meta.dump(2) + "\n");

  // summary.txt mirrors the paper-style sweep table layout
  std::ostringstream txt;
  txt << "scenario: " << scenario.name << "  seed: " << scenario.seed << "\n";
  txt << "rounds: " << run.metrics.rounds.size()
      << "  final validation accuracy: " << fmt(run.final_val_accuracy) << "\n";
  txt << "simulated clock: " << run.clock.now << " s\n\n";
  txt << "unlearning results (forget set)\n";
  txt << "lora_config,initial_accuracy,final_accuracy\n";
  for (const sim::UnlearnEventMetrics& ev : run.metrics.unlearns) {
    txt << (ev.config_label.empty() ? "-" : ev.config_label) << ","
        << fmt(ev.metrics.forget_acc_before) << "," << fmt(ev.metrics.forget_acc_after);
    if (!ev.rejection.empty()) txt << ",rejected";
    txt << "\n";
  }
  if (run.metrics.unlearns.empty()) txt << "(none)\n";
  txt << "\ntime cost table (seconds)\n";
  txt << "mode,t=0,t=9,t=99,t=999\n";
  json jt = time_table_json(scenario.cost);
  for (const std::string mode : {"normal", "public", "hybrid"}) {
    txt << mode;
    for (const auto& v : jt[mode]) txt << "," << v.get<std::int64_t>();
    txt << "\n";
  }
  write_file(out_dir / "summary.txt", txt.str());
}

void regenerate(const std::filesystem::path& out_dir, const std::string& format) {
  json meta;
  try {
    meta = json::parse(slurp(out_dir / "run_meta.json"));
  } catch (const Error&) {
    throw;
  } catch (const std::exception& e) {
    raise(Errc::IoError, std::string("run_meta.json unreadable: ") + e.what());
  }
  slurp(out_dir / "metrics.csv");  // presence check: a stale directory fails here

  if (format == "md") {
    std::ostringstream md;
    md << "# Run report: " << meta.value("scenario", "?") << "\n\n";
    md << "- seed: " << meta.value("seed", 0ULL) << "\n";
    md << "- rounds: " << meta.value("rounds", 0ULL) << "\n";
    md << "- final validation accuracy: " << fmt(meta.value("final_accuracy", 0.0)) << "\n";
    md << "- simulated clock: " << meta.value("clock_seconds", 0LL) << " s\n\n";
    md << "## Unlearning sweep\n\n";
    md << "| LoRA config | Initial Accuracy | Final Accuracy | T_id |\n|---|---|---|---|\n";
    for (const json& ev : meta["unlearn_events"]) {
      md << "| " << ev.value("config", "-") << " | "
         << fmt(ev.value("forget_acc_before", 0.0)) << " | "
         << fmt(ev.value("forget_acc_after", 0.0)) << " | ";
      std::string tx = ev.value("tx_id", "");
      md << (tx.empty() ? ("rejected: " + ev.value("rejection", "")) : tx.substr(0, 12)) << " |\n";
    }
    md << "\n## Time cost\n\n" << render_time_table_md(meta["time_table"]);
    md << "\n## Agent greedy policy\n\n| agent | state | action |\n|---|---|---|\n";
    for (const auto& [agent, rows] : meta["greedy_policy"].items()) {
      for (const auto& [state, action] : rows.items()) {
        md << "| " << agent << " | " << state << " | " << action.get<std::string>() << " |\n";
      }
    }
    write_file(out_dir / "summary.md", md.str());
    return;
  }
  if (format == "csv") {
    std::ostringstream sweep;
    sweep << "lora_config,initial_accuracy,final_accuracy,tx_id,rejection\n";
    for (const json& ev : meta["unlearn_events"]) {
      sweep << ev.value("config", "-") << "," << fmt(ev.value("forget_acc_before", 0.0)) << ","
            << fmt(ev.value("forget_acc_after", 0.0)) << "," << ev.value("tx_id", "") << ","
            << "\"" << ev.value("rejection", "") << "\"\n";
    }
    write_file(out_dir / "report_sweep.csv", sweep.str());

    std::ostringstream time_csv;
    time_csv << "mode,t0,t9,t99,t999\n";
    for (const std::string mode : {"normal", "public", "hybrid"}) {
      time_csv << mode;
      for (const auto& v : meta["time_table"][mode]) time_csv << "," << v.get<std::int64_t>();
      time_csv << "\n";
    }
    write_file(out_dir / "report_time.csv", time_csv.str());

    std::ostringstream pol;
    pol << "agent,state,action\n";
    for (const auto& [agent, rows] : meta["greedy_policy"].items()) {
      for (const auto& [state, action] : rows.items()) {
        pol << agent << "," << state << "," << action.get<std::string>() << "\n";
      }
    }
    write_file(out_dir / "report_policy.csv", pol.str());
    return;
  }
  raise(Errc::ConfigError, "report format must be csv or md, got '" + format + "'");
}

}  // namespace fedchain::report
