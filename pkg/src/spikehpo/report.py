"""Post-hoc analysis over experiment journals: exports, matrices, status."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .engine import STATUS_SUCCEEDED, ExperimentJournal, ExperimentState

__all__ = [
    "ConfusionMatrix",
    "confusion_matrix",
    "export_parallel_coordinates",
    "status",
]

METRIC_COLUMNS = ("best training", "default", "test")


@dataclass(frozen=True)
class ConfusionMatrix:
    """Class-by-class prediction counts: rows are true, columns predicted."""

    counts: np.ndarray

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def accuracy(self) -> float:
        """Diagonal mass as a percentage; undefined (error) on zero samples."""
        if self.total == 0:
            raise ValueError("accuracy undefined for an empty confusion matrix")
        return float(np.trace(self.counts)) / self.total * 100.0

    def render(self) -> str:
        k = self.counts.shape[0]
        width = max(5, len(str(int(self.counts.max(initial=0)))) + 2)
        header = "true\\pred" + "".join(f"{c:>{width}}" for c in range(k))
        rows = [header]
        for r in range(k):
            rows.append(f"{r:<9}" + "".join(f"{int(self.counts[r, c]):>{width}}" for c in range(k)))
        return "\n".join(rows)


def confusion_matrix(preds, labels, n_classes: int) -> ConfusionMatrix:
    """Tally predictions against true labels into a K x K count matrix."""
    preds = np.asarray(preds, dtype=int)
    labels = np.asarray(labels, dtype=int)
    if preds.shape != labels.shape:
        raise ValueError(f"preds and labels differ in length: {preds.shape} vs {labels.shape}")
    counts = np.zeros((n_classes, n_classes), dtype=int)
    if preds.size:
        if preds.min() < 0 or preds.max() >= n_classes:
            raise ValueError(f"prediction outside [0, {n_classes})")
        if labels.min() < 0 or labels.max() >= n_classes:
            raise ValueError(f"label outside [0, {n_classes})")
        np.add.at(counts, (labels, preds), 1)
    return ConfusionMatrix(counts=counts)


def _param_names(state: ExperimentState) -> list[str]:
    if not state.config or "search_space" not in state.config:
        raise ValueError("journal carries no search-space snapshot")
    return list(state.config["search_space"].keys())


def export_parallel_coordinates(state: ExperimentState) -> str:
    """CSV with one row per Succeeded trial: hyperparameters then metrics.

    A pure function of the journal: identical journals export byte-identical
    documents. With no succeeded trials the header row stands alone.
    """
    names = _param_names(state)
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(list(names) + list(METRIC_COLUMNS))
    for record in state.records_in_order():
        if record.status != STATUS_SUCCEEDED or record.final is None:
            continue
        row = [record.assignment.get(name, "") for name in names]
        row += [record.final.values.get(column, "") for column in METRIC_COLUMNS]
        writer.writerow(row)
    return buffer.getvalue()


def status(experiment_dir: Path | str) -> str:
    """Human-readable experiment summary reconstructed from the journal."""
    journal_path = Path(experiment_dir) / "journal"
    if not journal_path.exists():
        raise FileNotFoundError(f"no journal at {journal_path}")
    state = ExperimentJournal.replay_file(journal_path)
    order = ("Waiting", "Running", "Succeeded", "Failed", "EarlyStopped", "Canceled")
    counts = {name: 0 for name in order}
    for record in state.records.values():
        counts[record.status] += 1
    lines = [
        f"Experiment {state.experiment_id} ({state.experiment_name})",
        "Trials: " + " | ".join(f"{name} {counts[name]}" for name in order),
        f"Created: {len(state.records)}",
    ]
    finals = [
        (record.final.default, record)
        for record in state.records_in_order()
        if record.status == STATUS_SUCCEEDED and record.final is not None
    ]
    if finals:
        best_default, best = max(finals, key=lambda pair: pair[0])
        lines.append(f"Best default: {best_default} (trial {best.trial_id}, #{best.sequence_id})")
        lines.append(f"Best assignment: {best.assignment}")
    else:
        lines.append("Best default: none yet")
    if state.started_at is not None and state.last_event_time is not None:
        lines.append(f"Elapsed: {state.last_event_time - state.started_at:.1f}s")
    lines.append(f"Finished: {state.finished_reason}" if state.finished_reason else "Finished: no (journal still open)")
    return "\n".join(lines)
