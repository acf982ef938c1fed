"""Hybrid-blockchain federated learning simulator with LoRA-based unlearning."""

from ._core import (
    FedchainError,
    fedavg,
    nll_loss,
    q_update,
    run_scenario_file,
    run_scenario_json,
    synth_gen,
    time_table,
    unlearn,
    vectorize,
    verify_ledger_file,
    __version__,
)

__all__ = [
    "FedchainError",
    "fedavg",
    "nll_loss",
    "q_update",
    "run_scenario_file",
    "run_scenario_json",
    "synth_gen",
    "time_table",
    "unlearn",
    "vectorize",
    "verify_ledger_file",
    "__version__",
]
