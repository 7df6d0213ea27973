"""Hyperparameter-optimization engine for spiking recurrent networks.

The package couples a self-contained HPO loop — search-space grammar,
annealing tuner, median-stop assessor, subprocess trial supervision with an
append-only journal — with a NumPy implementation of a recurrent spiking
network trained by eligibility traces, plus the built-in trial program that
ties the two together. Trials talk to the engine through environment
variables and metric files, so any language can implement one.
"""

from __future__ import annotations

from .assessor import AssessVerdict, MedianStopAssessor
from .engine import (
    ExperimentConfig,
    ExperimentJournal,
    ExperimentPaths,
    ExperimentState,
    TrialRecord,
    load_config,
    recover_experiment,
    run_experiment,
)
from .objective import SpikeDataset, generate_dataset, train_trial
from .protocol import MetricReport, TrialContext
from .report import ConfusionMatrix, confusion_matrix, export_parallel_coordinates, status
from .searchspace import ParamSpec, SearchSpace, parse_search_space, serialize_search_space
from .snn import SRNNModel, eprop_grads, forward
from .tuner import AnnealingTuner, ReseedPolicy

__version__ = "0.1.0"

__all__ = [
    "AnnealingTuner",
    "AssessVerdict",
    "ConfusionMatrix",
    "ExperimentConfig",
    "ExperimentJournal",
    "ExperimentPaths",
    "ExperimentState",
    "MedianStopAssessor",
    "MetricReport",
    "ParamSpec",
    "ReseedPolicy",
    "SRNNModel",
    "SearchSpace",
    "SpikeDataset",
    "TrialContext",
    "TrialRecord",
    "confusion_matrix",
    "eprop_grads",
    "export_parallel_coordinates",
    "forward",
    "generate_dataset",
    "load_config",
    "parse_search_space",
    "recover_experiment",
    "run_experiment",
    "serialize_search_space",
    "status",
    "train_trial",
    "__version__",
]
