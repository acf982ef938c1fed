#include "fedchain/cli.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "fedchain/errors.hpp"
#include "fedchain/report.hpp"
#include "fedchain/sim.hpp"

namespace fedchain::cli {

namespace {

std::optional<std::uint64_t> env_seed() {
  const char* v = std::getenv("FEDCHAIN_SEED");
  if (v == nullptr || *v == '\0') return std::nullopt;
  try {
    return std::stoull(v);
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

data::SplitSpec parse_selector_flag(const std::string& spec) {
  auto colon = spec.find(':');
  std::string kind = spec.substr(0, colon);
  std::string arg = colon == std::string::npos ? "" : spec.substr(colon + 1);
  data::SplitSpec out;
  if (kind == "by-label") {
    out.selector = data::Selector::ByLabel;
    out.label = std::stoi(arg);
  } else if (kind == "by-keyword") {
    out.selector = data::Selector::ByKeyword;
    out.keyword = arg;
  } else if (kind == "random") {
    out.selector = data::Selector::RandomSeeded;
    out.forget_fraction = std::stod(arg);
  } else {
    raise(Errc::ConfigError, "selector must be by-label:<n>, by-keyword:<word> or random:<frac>");
  }
  return out;
}

int report_failure(const Error& e) {
  std::cerr << "error: " << e.what() << "\n";
  switch (e.code()) {
    case Errc::ConfigError:
    case Errc::ParseError:
    case Errc::IoError:
    case Errc::LabelOutOfRange:
      return kExitUsage;
    case Errc::CriteriaNotMet:
      return kExitRejected;
    default:
      return kExitRuntime;
  }
}

}  // namespace

int cmd_run(const std::string& scenario_path, std::optional<std::uint64_t> seed_override,
            const std::filesystem::path& out_dir) {
  try {
    if (!std::filesystem::exists(scenario_path)) {
      std::cerr << "error: scenario file not found: " << scenario_path << "\n";
      return kExitUsage;
    }
    sim::Scenario scenario = sim::load_scenario(scenario_path);
    if (!seed_override) seed_override = env_seed();
    if (seed_override) scenario.seed = *seed_override;
    sim::RunResult run = sim::run_scenario(scenario);
    report::emit_report(run, scenario, out_dir);
    std::cout << "scenario " << scenario.name << " complete: rounds="
              << run.metrics.rounds.size() << " final_accuracy=" << run.final_val_accuracy
              << " clock=" << run.clock.now << "s\noutputs in " << out_dir.string() << "\n";
    return kExitOk;
  } catch (const Error& e) {
    return report_failure(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

int cmd_unlearn(const UnlearnFlags& flags) {
  try {
    if (!std::filesystem::exists(flags.scenario_path)) {
      std::cerr << "error: scenario file not found: " << flags.scenario_path << "\n";
      return kExitUsage;
    }
    sim::Scenario scenario = sim::load_scenario(flags.scenario_path);
    if (auto seed = env_seed()) scenario.seed = *seed;

    std::filesystem::path ckpt = flags.out_dir / "final_model.ckpt";
    if (!std::filesystem::exists(ckpt)) {
      std::cerr << "error: no prior run outputs in " << flags.out_dir.string()
                << " (missing final_model.ckpt); run `fedchain run` first\n";
      return kExitUsage;
    }

    bool known_org = false;
    for (const sim::ScenarioOrg& org : scenario.orgs) known_org |= org.id == flags.org;
    if (!known_org) {
      std::cerr << "error: unknown org '" << flags.org << "' in scenario " << scenario.name
                << "\n";
      return kExitUsage;
    }

    // Rebuild the run state deterministically, then check it matches the
    // stored checkpoint; a mismatch means the directory is stale.
    sim::RunResult run = sim::run_scenario(scenario);
    model::DenseParams stored = model::load_checkpoint(ckpt);
    if (model::params_digest(stored) != model::params_digest(run.final_model)) {
      std::cerr << "error: " << ckpt.string()
                << " does not match this scenario/seed (stale output directory)\n";
      return kExitUsage;
    }

    sim::UnlearnEvent ev;
    // flag defaults mirror the strongest reported configuration
    ev.request.rank = 32;
    ev.request.alpha = 2.0;
    ev.request.dropout = 0.1;
    for (const sim::UnlearnEvent& cand : scenario.unlearn_events) {
      if (cand.org == flags.org) ev = cand;
    }
    ev.org = flags.org;
    ev.request.org = flags.org;
    if (flags.selector) ev.selector = parse_selector_flag(*flags.selector);
    if (flags.rank) ev.request.rank = *flags.rank;
    if (flags.alpha) ev.request.alpha = *flags.alpha;
    if (flags.dropout) ev.request.dropout = *flags.dropout;
    if (flags.epochs) ev.request.epochs = *flags.epochs;
    if (flags.learning_rate) ev.request.learning_rate = *flags.learning_rate;
    unlearning::VerificationCriteria criteria = scenario.criteria;
    if (flags.tau_forget) criteria.tau_forget = *flags.tau_forget;
    if (flags.tau_retain_drop) criteria.tau_retain_drop_points = *flags.tau_retain_drop;

    const data::Dataset& ds = run.org_datasets.at(flags.org);
    SeedSource seeds{scenario.seed};
    auto [forget_ds, retain_ds] =
        data::split_forget(ds, ev.selector, seeds.stream_seed("cli-forget:" + flags.org));
    auto forget = data::featurize(forget_ds, scenario.feature_dims);
    auto retain = data::featurize(retain_ds, scenario.feature_dims);
    std::vector<model::Example> val_eval = run.validation_set;
    try {
      auto [vf, vr] = data::split_forget(run.validation_ds, ev.selector,
                                         seeds.stream_seed("cli-valsplit:" + flags.org));
      val_eval = data::featurize(vr, scenario.feature_dims);
    } catch (const Error&) {
    }
    ev.request.seed = seeds.stream_seed("cli-unlearn:" + flags.org);

    unlearning::UnlearnResult result =
        unlearning::unlearn_lora(run.final_model, ev.request, forget, retain);
    std::printf("unlearn %s on %s\n", result.config_label.c_str(), flags.org.c_str());
    std::printf("  forget accuracy: %.4f -> %.4f\n", result.metrics.forget_acc_before,
                result.metrics.forget_acc_after);
    std::printf("  retain accuracy: %.4f -> %.4f\n", result.metrics.retain_acc_before,
                result.metrics.retain_acc_after);

    std::string agent = flags.org + "_agent_0";
    chain::PrivateDataCollection* pdc = nullptr;
    if (auto it = run.private_chains.find(flags.org);
        it != run.private_chains.end() && it->second.pdc) {
      pdc = &*it->second.pdc;
    }
    try {
      std::string txid = unlearning::verify_and_submit(
          result, forget, val_eval, criteria, *run.registry, run.tokens.at(agent),
          agent, run.public_chain, run.final_model, run.store, pdc, run.clock.now);
      std::printf("verified and submitted: T_id=%s\n", txid.c_str());
    } catch (const unlearning::CriteriaError& ce) {
      std::printf("rejected: %s\n", ce.what());
      return kExitRejected;
    }

    // Persist the extended public ledger so audits see the unlearning record.
    std::ofstream ledger_out(flags.out_dir / "ledger_public.jsonl", std::ios::binary);
    ledger_out << chain::export_jsonl(run.public_chain.ledger);
    return kExitOk;
  } catch (const Error& e) {
    return report_failure(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

int cmd_verify_ledger(const std::filesystem::path& ledger_path) {
  try {
    std::ifstream in(ledger_path, std::ios::binary);
    if (!in) {
      std::cerr << "error: cannot open " << ledger_path.string() << "\n";
      return kExitUsage;
    }
    std::stringstream buf;
    buf << in.rdbuf();
    chain::ImportedLedger imported;
    try {
      imported = chain::import_jsonl(buf.str());
    } catch (const Error& e) {
      std::cerr << "error: malformed ledger export: " << e.what() << "\n";
      return kExitUsage;
    }
    chain::ChainVerdict verdict = chain::validate_chain(imported.ledger);
    if (!verdict.ok) {
      std::printf("ledger INVALID: first bad block index %llu (%s)\n",
                  static_cast<unsigned long long>(verdict.first_bad_index),
                  verdict.what.c_str());
      return kExitRuntime;
    }
    auto replayed = chain::replay(imported.ledger);
    std::string digest = chain::state_digest_hex(replayed);
    if (digest != imported.declared_final_state) {
      std::printf("ledger INVALID: replayed state digest %s does not match header %s\n",
                  digest.c_str(), imported.declared_final_state.c_str());
      return kExitRuntime;
    }
    std::printf("ledger OK: %zu blocks, state digest %s\n", imported.ledger.blocks.size(),
                digest.c_str());
    return kExitOk;
  } catch (const Error& e) {
    return report_failure(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

int cmd_report(const std::filesystem::path& out_dir, const std::string& format) {
  try {
    report::regenerate(out_dir, format);
    std::cout << "report written to " << out_dir.string() << "\n";
    return kExitOk;
  } catch (const Error& e) {
    return report_failure(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"fedchain: hybrid-blockchain federated learning simulator with LoRA unlearning"};
  app.require_subcommand(1);

  std::string scenario_path;
  std::string out_dir = "out";
  std::optional<std::uint64_t> seed;

  CLI::App* run = app.add_subcommand("run", "run a scenario and emit its report");
  run->add_option("--scenario", scenario_path, "scenario JSON file")->required();
  std::uint64_t seed_val = 0;
  bool seed_set = false;
  run->add_option("--seed", seed_val, "master seed override")->each([&](const std::string&) {
    seed_set = true;
  });
  run->add_option("--out", out_dir, "output directory");

  UnlearnFlags uf;
  std::string selector_str, out_str = "out";
  std::uint64_t rank_v = 0;
  double alpha_v = 0, dropout_v = 0, lr_v = 0, tauf_v = 0, taur_v = 0;
  int epochs_v = 0;
  CLI::App* unl = app.add_subcommand("unlearn", "forget a data subset of a completed run");
  unl->add_option("--scenario", uf.scenario_path, "scenario JSON file")->required();
  unl->add_option("--out", out_str, "output directory of the prior run");
  unl->add_option("--org", uf.org, "requesting organization id")->required();
  CLI::Option* o_sel = unl->add_option("--selector", selector_str,
                                       "by-label:<n> | by-keyword:<w> | random:<frac>");
  CLI::Option* o_r = unl->add_option("--r", rank_v, "LoRA rank");
  CLI::Option* o_a = unl->add_option("--alpha", alpha_v, "LoRA alpha");
  CLI::Option* o_d = unl->add_option("--dropout", dropout_v, "LoRA dropout");
  CLI::Option* o_e = unl->add_option("--epochs", epochs_v, "unlearning epochs");
  CLI::Option* o_l = unl->add_option("--lr", lr_v, "unlearning learning rate");
  CLI::Option* o_tf = unl->add_option("--tau-forget", tauf_v, "max forget accuracy");
  CLI::Option* o_tr = unl->add_option("--tau-retain-drop", taur_v, "max retain drop (points)");

  std::string ledger_path;
  CLI::App* ver = app.add_subcommand("verify-ledger", "audit a ledger export");
  ver->add_option("--ledger", ledger_path, "ledger JSON-lines file")->required();

  std::string report_dir = "out", format = "md";
  CLI::App* rep = app.add_subcommand("report", "regenerate summary tables from run outputs");
  rep->add_option("--out", report_dir, "run output directory");
  rep->add_option("--format", format, "csv or md")->check(CLI::IsMember({"csv", "md"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitUsage;
  }

  if (run->parsed()) {
    if (seed_set) seed = seed_val;
    return cmd_run(scenario_path, seed, out_dir);
  }
  if (unl->parsed()) {
    uf.out_dir = out_str;
    if (o_sel->count() > 0) uf.selector = selector_str;
    if (o_r->count() > 0) uf.rank = rank_v;
    if (o_a->count() > 0) uf.alpha = alpha_v;
    if (o_d->count() > 0) uf.dropout = dropout_v;
    if (o_e->count() > 0) uf.epochs = epochs_v;
    if (o_l->count() > 0) uf.learning_rate = lr_v;
    if (o_tf->count() > 0) uf.tau_forget = tauf_v;
    if (o_tr->count() > 0) uf.tau_retain_drop = taur_v;
    return cmd_unlearn(uf);
  }
  if (ver->parsed()) return cmd_verify_ledger(ledger_path);
  if (rep->parsed()) return cmd_report(report_dir, format);
  return kExitUsage;
}

}  // namespace fedchain::cli
