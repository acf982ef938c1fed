#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <fstream>
#include <sstream>

#include "fedchain/errors.hpp"
#include "fedchain/report.hpp"
#include "fedchain/sim.hpp"

namespace py = pybind11;
using namespace fedchain;

namespace {

py::dict metrics_dict(const unlearning::UnlearnMetrics& m) {
  py::dict d;
  d["forget_acc_before"] = m.forget_acc_before;
  d["forget_acc_after"] = m.forget_acc_after;
  d["retain_acc_before"] = m.retain_acc_before;
  d["retain_acc_after"] = m.retain_acc_after;
  d["forget_loss_before"] = m.forget_loss_before;
  d["forget_loss_after"] = m.forget_loss_after;
  return d;
}

py::dict summarize(const sim::RunResult& run, const sim::Scenario& sc) {
  py::dict out;
  out["scenario"] = sc.name;
  out["seed"] = sc.seed;
  out["rounds"] = run.metrics.rounds.size();
  out["final_accuracy"] = run.final_val_accuracy;
  out["final_model_digest"] = crypto::to_hex(model::params_digest(run.final_model));
  out["clock_seconds"] = run.clock.now;
  out["public_blocks"] = run.public_chain.ledger.blocks.size();
  py::dict chains;
  for (const auto& [org, ctx] : run.private_chains) {
    chains[py::str(org)] = ctx.ledger.blocks.size();
  }
  out["private_chains"] = chains;
  out["public_ledger_valid"] = chain::validate_chain(run.public_chain.ledger).ok;
  py::list events;
  for (const auto& ev : run.metrics.unlearns) {
    py::dict e = metrics_dict(ev.metrics);
    e["org"] = ev.org;
    e["round"] = ev.round;
    e["config"] = ev.config_label;
    e["tx_id"] = ev.tx_id;
    e["rejection"] = ev.rejection;
    events.append(e);
  }
  out["unlearn_events"] = events;
  py::dict policy;
  for (const auto& [name, agent] : run.agent_states) {
    auto it = run.last_obs.find(name);
    if (it != run.last_obs.end()) {
      policy[py::str(name)] = federation::action_name(agent.table.argmax(it->second));
    }
  }
  out["steady_state_policy"] = policy;
  return out;
}

sim::Scenario scenario_with_seed(const std::string& text_or_path, bool is_path,
                                 std::optional<std::uint64_t> seed) {
  sim::Scenario sc = is_path ? sim::load_scenario(text_or_path) : sim::parse_scenario(text_or_path);
  if (seed) sc.seed = *seed;
  return sc;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Hybrid-blockchain federated learning simulator with LoRA-based unlearning";

  py::register_exception<Error>(m, "FedchainError");

  // ---- data ----------------------------------------------------------
  m.def(
      "vectorize",
      [](const std::string& text, std::size_t dims) {
        model::SparseVec v = data::vectorize(text, dims);
        std::vector<std::pair<std::uint32_t, double>> out;
        for (std::size_t i = 0; i < v.idx.size(); ++i) out.push_back({v.idx[i], v.val[i]});
        return out;
      },
      py::arg("text"), py::arg("dims") = 1 << 14,
      "Hashing featurizer: (index, value) pairs of the L2-normalized bag of words.");

  m.def(
      "synth_gen",
      [](std::size_t n, int classes, std::uint64_t seed) {
        data::Dataset ds = data::synth_gen(n, classes, seed);
        std::vector<std::pair<std::string, int>> out;
        for (const auto& item : ds.items) out.push_back({item.text, item.label});
        return out;
      },
      py::arg("n"), py::arg("classes") = 2, py::arg("seed") = 0,
      "Seeded synthetic labeled sentences.");

  // ---- model / federation --------------------------------------------
  m.def(
      "fedavg",
      [](const std::vector<std::pair<std::vector<double>, double>>& updates) {
        std::vector<federation::Update> ups;
        for (std::size_t i = 0; i < updates.size(); ++i) {
          model::DenseParams p = model::DenseParams::zeros(1, updates[i].first.size());
          p.W = updates[i].first;
          ups.push_back({"u" + std::to_string(i), std::move(p), updates[i].second});
        }
        return federation::fedavg(ups).W;
      },
      py::arg("updates"),
      "Sample-weighted average of flat parameter vectors given (vector, weight) pairs.");

  m.def(
      "nll_loss",
      [](const std::vector<double>& probs, int label) { return model::nll_loss(probs, label); },
      py::arg("probabilities"), py::arg("label"));

  m.def(
      "q_update",
      [](double q, double alpha, double gamma, double reward, double max_next) {
        return q + alpha * (reward + gamma * max_next - q);
      },
      py::arg("q"), py::arg("alpha"), py::arg("gamma"), py::arg("reward"), py::arg("max_next"),
      "One tabular Q-learning update in closed form.");

  // ---- simulation ------------------------------------------------------
  m.def(
      "run_scenario_file",
      [](const std::string& path, std::optional<std::uint64_t> seed,
         std::optional<std::string> out_dir) {
        sim::Scenario sc = scenario_with_seed(path, true, seed);
        sim::RunResult run = sim::run_scenario(sc);
        if (out_dir) report::emit_report(run, sc, *out_dir);
        return summarize(run, sc);
      },
      py::arg("path"), py::arg("seed") = py::none(), py::arg("out_dir") = py::none(),
      "Run a scenario config file; optionally write the report artifacts.");

  m.def(
      "run_scenario_json",
      [](const std::string& json_text, std::optional<std::uint64_t> seed,
         std::optional<std::string> out_dir) {
        sim::Scenario sc = scenario_with_seed(json_text, false, seed);
        sim::RunResult run = sim::run_scenario(sc);
        if (out_dir) report::emit_report(run, sc, *out_dir);
        return summarize(run, sc);
      },
      py::arg("json_text"), py::arg("seed") = py::none(), py::arg("out_dir") = py::none(),
      "Run a scenario given as a JSON string.");

  m.def(
      "unlearn",
      [](const std::string& scenario_path, const std::string& org, std::uint64_t rank,
         double alpha, double dropout, int epochs, double learning_rate, int label) {
        sim::Scenario sc = sim::load_scenario(scenario_path);
        sim::RunResult run = sim::run_scenario(sc);
        auto [forget_ds, retain_ds] = data::split_forget(
            run.org_datasets.at(org), {data::Selector::ByLabel, 0.0, label, ""}, sc.seed);
        auto forget = data::featurize(forget_ds, sc.feature_dims);
        auto retain = data::featurize(retain_ds, sc.feature_dims);
        unlearning::UnlearnRequest req;
        req.org = org;
        req.rank = rank;
        req.alpha = alpha;
        req.dropout = dropout;
        req.epochs = epochs;
        req.learning_rate = learning_rate;
        req.seed = splitmix64(sc.seed ^ fnv1a64("py-unlearn"));
        unlearning::UnlearnResult res =
            unlearning::unlearn_lora(run.final_model, req, forget, retain);
        py::dict out = metrics_dict(res.metrics);
        out["config"] = res.config_label;
        return out;
      },
      py::arg("scenario_path"), py::arg("org"), py::arg("rank") = 8, py::arg("alpha") = 8.0,
      py::arg("dropout") = 0.1, py::arg("epochs") = 20, py::arg("learning_rate") = 0.1,
      py::arg("label") = 1,
      "Train the scenario, then forget the given label's data by LoRA gradient ascent.");

  m.def(
      "time_table",
      [](std::int64_t setup, std::int64_t consensus, std::int64_t tx, std::int64_t epoch,
         const std::vector<std::uint64_t>& ts) {
        sim::CostModel cost{setup, consensus, tx, epoch, "hybrid"};
        return sim::time_table(cost, ts);
      },
      py::arg("setup") = 48, py::arg("consensus") = 6, py::arg("tx") = 4, py::arg("epoch") = 30,
      py::arg("ts") = std::vector<std::uint64_t>{0, 9, 99, 999},
      "Per-mode total seconds for each iteration count t.");

  m.def(
      "verify_ledger_file",
      [](const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) raise(Errc::IoError, "cannot open " + path);
        std::stringstream buf;
        buf << in.rdbuf();
        chain::ImportedLedger imported = chain::import_jsonl(buf.str());
        if (!chain::validate_chain(imported.ledger).ok) return false;
        return chain::state_digest_hex(chain::replay(imported.ledger)) ==
               imported.declared_final_state;
      },
      py::arg("path"), "Audit a ledger export: hash chain plus state-digest replay.");

#ifdef FEDCHAIN_VERSION
  m.attr("__version__") = FEDCHAIN_VERSION;
#else
  m.attr("__version__") = "dev";
#endif
}
