"""A complete hyperparameter search, end to end, in one script.

The engine launches each trial as a subprocess, hands it parameters
through environment variables and files, ingests its metric reports,
early-stops stragglers, journals every event, and keeps the weights of
the best trial by test accuracy. Everything below also works through the
command line (``spikehpo run <config.json>``); this demo drives the same
machinery in-process to keep the narrative in one file.
"""

from __future__ import annotations

import json
import tempfile
import time
from pathlib import Path

from spikehpo.engine import ExperimentConfig, run_experiment
from spikehpo.report import export_parallel_coordinates, status
from spikehpo.searchspace import parse_search_space

SEARCH_SPACE = {
    "n_rec": {"_type": "quniform", "_value": [16, 48, 16]},
    "threshold": {"_type": "quniform", "_value": [0.05, 0.5, 0.05]},
    "tau_mem": {"_type": "choice", "_value": [20e-3, 50e-3, 100e-3]},
    "tau_out": {"_type": "choice", "_value": [20e-3, 50e-3, 100e-3]},
    "delay_targets": {"_type": "choice", "_value": [5, 10, 20]},
    "lr": {"_type": "choice", "_value": [0.01, 0.05, 0.1]},
    "gamma": {"_type": "quniform", "_value": [0.1, 1, 0.1]},
    "reset_mechanism": {"_type": "choice", "_value": ["subtract", "zero"]},
}

# shrink the built-in task so ten trials finish in well under a minute
TRIAL_OVERRIDES = {
    "epochs": 6,
    "batch_size": 20,
    "n_classes": 3,
    "n_inputs": 12,
    "n_steps": 60,
    "train_size": 120,
    "val_size": 60,
    "test_size": 60,
}


def main() -> None:
    working_dir = Path(tempfile.mkdtemp(prefix="hpo_demo_"))
    config = ExperimentConfig(
        experiment_name="demo_search",
        working_dir=working_dir,
        search_space=parse_search_space(json.dumps(SEARCH_SPACE)),
        max_trial_number=10,
        trial_concurrency=2,
        resource_slots=[0, 1],
        max_trials_per_slot=1,
        max_experiment_duration="5m",
        seed=321,
        trial_env={"HPO_TRIAL_OVERRIDES": json.dumps(TRIAL_OVERRIDES)},
    )
    print(f"running 10 trials, 2 at a time, under {working_dir} ...")
    started = time.perf_counter()
    state = run_experiment(config, experiment_id="demo0001")
    print(f"done in {time.perf_counter() - started:.1f}s\n")

    experiment_dir = working_dir / "logs" / "demo_search" / "demo0001"
    print(status(experiment_dir))

    print("\nper-trial results (the 'default' metric is best validation accuracy):")
    for record in state.records_in_order():
        final = record.final.values if record.final else {}
        print(f"  #{record.sequence_id} {record.trial_id} {record.status:<12} "
              f"default={final.get('default', '-'):>7} test={final.get('test', '-'):>7}")

    csv_document = export_parallel_coordinates(state)
    csv_path = working_dir / "trials.csv"
    csv_path.write_text(csv_document)
    print(f"\nparallel-coordinates export ({csv_path}):")
    for line in csv_document.splitlines()[:4]:
        print(f"  {line}")
    print("  ...")

    kept = sorted((working_dir / "models" / "demo_search" / "demo0001").glob("*.model"))
    print(f"\nretained model files (highest test accuracy wins): "
          f"{[p.name for p in kept] or 'none'}")
    print(f"\neverything above is derived from one append-only journal:")
    print(f"  {experiment_dir / 'journal'}")
    print("replaying that file reconstructs the experiment bit for bit")


if __name__ == "__main__":
    main()
