"""Experiment lifecycle: configuration, scheduling, journaling, supervision.

A single coordinator thread owns the tuner, assessor, and journal. Trials
run as supervised child processes wired up through the metric protocol's
environment variables and files; their stdout/stderr land in per-trial log
files. Every state change is appended to a JSON-lines journal before it
takes effect in memory, so replaying the journal reconstructs all trial
records exactly — including after a crash.
"""

from __future__ import annotations

import json
import logging
import os
import re
import string
import subprocess
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from .assessor import AssessVerdict, MedianStopAssessor
from .protocol import (
    ENV_EXPERIMENT_ID,
    ENV_METRICS_FILE,
    ENV_PARAMS_FILE,
    ENV_SEQUENCE_ID,
    ENV_TRIAL_ID,
    POLL_INTERVAL_SECONDS,
    MetricReport,
    MetricsFileReader,
    write_params_file,
)
from .searchspace import SearchSpace, parse_search_space, serialize_search_space
from .tuner import DEFAULT_DECAY, DEFAULT_T0, DEFAULT_WARMUP, AnnealingTuner, ReseedPolicy

logger = logging.getLogger(__name__)

__all__ = [
    "ConfigError",
    "EngineError",
    "ExperimentConfig",
    "ExperimentPaths",
    "ExperimentJournal",
    "ExperimentState",
    "TrialRecord",
    "load_config",
    "parse_duration",
    "schedule",
    "run_experiment",
    "recover_experiment",
    "append_report",
    "retain_best_model",
    "make_trial_id",
]

# Engine-provided environment extensions beyond the wire protocol; the
# built-in trial uses them to locate its staging directories and seed.
ENV_WORKING_DIR = "HPO_WORKING_DIR"
ENV_EXPERIMENT_NAME = "HPO_EXPERIMENT_NAME"
ENV_EXPERIMENT_SEED = "HPO_EXPERIMENT_SEED"

STATUS_WAITING = "Waiting"
STATUS_RUNNING = "Running"
STATUS_SUCCEEDED = "Succeeded"
STATUS_FAILED = "Failed"
STATUS_EARLY_STOPPED = "EarlyStopped"
STATUS_CANCELED = "Canceled"
TERMINAL_STATUSES = frozenset({STATUS_SUCCEEDED, STATUS_FAILED, STATUS_EARLY_STOPPED, STATUS_CANCELED})
_TRANSITIONS = {
    STATUS_WAITING: {STATUS_RUNNING, STATUS_FAILED, STATUS_CANCELED},
    STATUS_RUNNING: TERMINAL_STATUSES,
}

DEFAULT_RESEED_EVERY = 250
DURATION_UNITS = {"s": 1, "m": 60, "h": 3600, "d": 86400}
TOKEN_ALPHABET = string.ascii_lowercase + string.ascii_uppercase + string.digits
TOKEN_LENGTH = 8


class ConfigError(ValueError):
    """Raised for malformed or inconsistent experiment configuration."""


class EngineError(RuntimeError):
    """Raised for unrecoverable engine failures."""


def parse_duration(text: str) -> int:
    """Convert "<integer><unit>" (s, m, h, d) to seconds."""
    match = re.fullmatch(r"(\d+)([smhd])", text.strip())
    if match is None:
        raise ConfigError(f"invalid duration {text!r}: expected <integer><unit> with unit in s/m/h/d")
    return int(match.group(1)) * DURATION_UNITS[match.group(2)]


def make_trial_id(rng: np.random.Generator, taken: Iterable[str] = ()) -> str:
    """Fresh 8-character [a-zA-Z0-9] token, unique against ``taken``."""
    taken = set(taken)
    while True:
        token = "".join(TOKEN_ALPHABET[i] for i in rng.integers(0, len(TOKEN_ALPHABET), TOKEN_LENGTH))
        if token not in taken:
            return token


@dataclass
class TrialRecord:
    """Everything the journal knows about one trial."""

    sequence_id: int
    trial_id: str
    status: str
    assignment: dict[str, Any]
    intermediates: list[MetricReport] = field(default_factory=list)
    final: MetricReport | None = None
    slot: int | None = None
    started_at: float | None = None
    ended_at: float | None = None


@dataclass(frozen=True)
class ExperimentPaths:
    """The four per-experiment roots plus well-known files inside them."""

    logs: Path
    models: Path
    reports: Path
    results: Path

    @classmethod
    def build(cls, working_dir: Path | str, experiment_name: str, experiment_id: str) -> ExperimentPaths:
        base = Path(working_dir)
        return cls(
            logs=base / "logs" / experiment_name / experiment_id,
            models=base / "models" / experiment_name / experiment_id,
            reports=base / "reports" / experiment_name / experiment_id,
            results=base / "results" / experiment_name / experiment_id,
        )

    @property
    def journal(self) -> Path:
        return self.logs / "journal"

    @property
    def searchspace(self) -> Path:
        return self.logs / "searchspace"

    @property
    def stop_file(self) -> Path:
        return self.logs / "stop"

    @property
    def report_test(self) -> Path:
        return self.reports / "report_test"

    @property
    def models_staging(self) -> Path:
        return self.models / "staging"

    @property
    def results_staging(self) -> Path:
        return self.results / "staging"

    def trial_dir(self, trial_id: str) -> Path:
        return self.logs / "trials" / trial_id

    def ensure(self) -> None:
        for root in (self.logs, self.models, self.reports, self.results,
                     self.models_staging, self.results_staging):
            root.mkdir(parents=True, exist_ok=True)


@dataclass
class ExperimentConfig:
    """Validated experiment settings; mirrors the configuration file."""

    experiment_name: str
    working_dir: Path
    search_space: SearchSpace
    trial_command: str = "spikehpo trial-builtin"
    trial_code_dir: Path = Path(".")
    tuner: dict[str, Any] = field(default_factory=dict)
    assessor: dict[str, Any] | None = field(default_factory=dict)
    max_trial_number: int = 10
    max_experiment_duration: str = "1h"
    trial_concurrency: int = 1
    resource_slots: list[int] = field(default_factory=lambda: [0])
    max_trials_per_slot: int = 1
    seed: int = 42
    trial_env: dict[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.working_dir = Path(self.working_dir)
        self.trial_code_dir = Path(self.trial_code_dir)
        if not self.experiment_name or "/" in self.experiment_name or os.sep in self.experiment_name:
            raise ConfigError(f"experiment_name must be a non-empty path-safe string, got {self.experiment_name!r}")
        if not self.trial_command.strip():
            raise ConfigError("trial_command must be a non-empty shell command")
        if self.max_trial_number < 1:
            raise ConfigError(f"max_trial_number must be >= 1, got {self.max_trial_number}")
        if self.trial_concurrency < 1:
            raise ConfigError(f"trial_concurrency must be >= 1, got {self.trial_concurrency}")
        if self.max_trials_per_slot < 1:
            raise ConfigError(f"max_trials_per_slot must be >= 1, got {self.max_trials_per_slot}")
        if not self.resource_slots:
            raise ConfigError("resource_slots must name at least one slot")
        if len(set(self.resource_slots)) != len(self.resource_slots):
            raise ConfigError(f"resource_slots contains duplicates: {self.resource_slots}")
        capacity = len(self.resource_slots) * self.max_trials_per_slot
        if self.trial_concurrency > capacity:
            raise ConfigError(
                f"trial_concurrency {self.trial_concurrency} exceeds slot capacity "
                f"{len(self.resource_slots)} x {self.max_trials_per_slot} = {capacity}"
            )
        parse_duration(self.max_experiment_duration)


_CONFIG_KEYS = {
    "experiment_name", "working_dir", "search_space", "trial_command", "trial_code_dir",
    "tuner", "assessor", "max_trial_number", "max_experiment_duration", "trial_concurrency",
    "resource_slots", "max_trials_per_slot", "seed", "trial_env",
}


def load_config(path: Path | str) -> ExperimentConfig:
    """Parse a JSON configuration file into a validated ExperimentConfig."""
    raw = Path(path).read_text(encoding="utf-8")
    try:
        doc = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"configuration is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("configuration must be a JSON object")
    unknown = set(doc) - _CONFIG_KEYS
    if unknown:
        raise ConfigError(f"unknown configuration keys: {sorted(unknown)}")
    missing = {"experiment_name", "working_dir", "search_space"} - set(doc)
    if missing:
        raise ConfigError(f"missing required configuration keys: {sorted(missing)}")
    doc = dict(doc)
    doc["search_space"] = parse_search_space(doc["search_space"])
    return ExperimentConfig(**doc)


def config_snapshot(config: ExperimentConfig) -> dict[str, Any]:
    """JSON-serializable echo of the configuration for the journal."""
    return {
        "experiment_name": config.experiment_name,
        "working_dir": str(config.working_dir),
        "search_space": json.loads(serialize_search_space(config.search_space)),
        "trial_command": config.trial_command,
        "trial_code_dir": str(config.trial_code_dir),
        "tuner": dict(config.tuner),
        "assessor": dict(config.assessor) if config.assessor is not None else None,
        "max_trial_number": config.max_trial_number,
        "max_experiment_duration": config.max_experiment_duration,
        "trial_concurrency": config.trial_concurrency,
        "resource_slots": list(config.resource_slots),
        "max_trials_per_slot": config.max_trials_per_slot,
        "seed": config.seed,
        "trial_env": dict(config.trial_env),
    }


class ExperimentState:
    """Trial records reconstructed purely from journal events."""

    def __init__(self) -> None:
        self.experiment_id: str | None = None
        self.experiment_name: str | None = None
        self.seed: int | None = None
        self.config: dict[str, Any] | None = None
        self.records: dict[str, TrialRecord] = {}
        self.order: list[str] = []
        self.started_at: float | None = None
        self.ended_at: float | None = None
        self.last_event_time: float | None = None
        self.finished_reason: str | None = None

    def apply(self, event: dict[str, Any]) -> None:
        kind = event["event"]
        self.last_event_time = event.get("time", self.last_event_time)
        if kind == "experiment_started":
            self.experiment_id = event["experiment_id"]
            self.experiment_name = event["experiment_name"]
            self.seed = event["seed"]
            self.config = event["config"]
            self.started_at = event["time"]
        elif kind == "trial_created":
            trial_id = event["trial_id"]
            self.records[trial_id] = TrialRecord(
                sequence_id=event["sequence_id"],
                trial_id=trial_id,
                status=STATUS_WAITING,
                assignment=event["assignment"],
            )
            self.order.append(trial_id)
        elif kind == "trial_status":
            record = self.records[event["trial_id"]]
            status = event["status"]
            allowed = _TRANSITIONS.get(record.status, frozenset())
            if status not in allowed:
                raise EngineError(f"illegal status transition {record.status} -> {status} for {record.trial_id}")
            record.status = status
            if status == STATUS_RUNNING:
                record.slot = event.get("slot")
                record.started_at = event["time"]
            if status in TERMINAL_STATUSES:
                record.ended_at = event["time"]
        elif kind == "trial_metric":
            record = self.records[event["trial_id"]]
            report = MetricReport(kind=event["kind"], values=event["values"], step=event.get("step"))
            if report.kind == "final":
                record.final = report
            else:
                record.intermediates.append(report)
        elif kind == "experiment_finished":
            self.finished_reason = event["reason"]
            self.ended_at = event["time"]
        else:
            raise EngineError(f"unknown journal event: {kind!r}")

    def records_in_order(self) -> list[TrialRecord]:
        return [self.records[tid] for tid in self.order]

    def completed(self) -> dict[str, TrialRecord]:
        return {tid: rec for tid, rec in self.records.items() if rec.status in TERMINAL_STATUSES}


class ExperimentJournal:
    """Append-only JSON-lines event log; the single source of truth.

    Every append is flushed and fsynced before the event mutates the
    in-memory state, so the on-disk journal is never behind what the
    engine believes.
    """

    def __init__(self, path: Path, state: ExperimentState | None = None) -> None:
        self.path = Path(path)
        self.state = state if state is not None else ExperimentState()
        self._handle = None

    @classmethod
    def create(cls, path: Path, first_event: dict[str, Any]) -> ExperimentJournal:
        journal = cls(path)
        journal._handle = open(path, "a", encoding="utf-8")
        journal.append(first_event)
        return journal

    def append(self, event: dict[str, Any]) -> None:
        if self._handle is None:
            self._handle = open(self.path, "a", encoding="utf-8")
        self._handle.write(json.dumps(event) + "\n")
        self._handle.flush()
        os.fsync(self._handle.fileno())
        self.state.apply(event)

    def close(self) -> None:
        if self._handle is not None:
            self._handle.close()
            self._handle = None

    @staticmethod
    def replay(text: str) -> ExperimentState:
        """Rebuild state from journal text, ignoring a torn trailing line."""
        state = ExperimentState()
        pieces = text.split("\n")
        complete, tail = pieces[:-1], pieces[-1]
        if tail:
            logger.warning("journal ends in a torn line (%d bytes), ignored", len(tail))
        for line in complete:
            if not line.strip():
                continue
            state.apply(json.loads(line))
        return state

    @classmethod
    def replay_file(cls, path: Path | str) -> ExperimentState:
        return cls.replay(Path(path).read_text(encoding="utf-8"))


def schedule(
    slots: Sequence[int],
    running: Sequence[TrialRecord],
    waiting: Sequence[Any],
    max_trials_per_slot: int,
    trial_concurrency: int,
) -> list[tuple[Any, int]]:
    """Assign waiting items to slots, least-occupied first, ties to lowest id.

    Never exceeds ``trial_concurrency`` total running trials or
    ``max_trials_per_slot`` per slot; assigns in waiting order.
    """
    occupancy = {slot: 0 for slot in slots}
    for record in running:
        if record.slot in occupancy:
            occupancy[record.slot] += 1
    total = len(running)
    assignments: list[tuple[Any, int]] = []
    for item in waiting:
        if total >= trial_concurrency:
            break
        open_slots = [slot for slot in slots if occupancy[slot] < max_trials_per_slot]
        if not open_slots:
            break
        slot = min(open_slots, key=lambda s: (occupancy[s], s))
        assignments.append((item, slot))
        occupancy[slot] += 1
        total += 1
    return assignments


def append_report(report_path: Path | str, test_acc: float, sequence_id: int, trial_id: str) -> None:
    """Append one "<test_acc> <sequence_id> <trial_id>" line."""
    with open(report_path, "a", encoding="utf-8") as handle:
        handle.write(f"{test_acc} {sequence_id} {trial_id}\n")
        handle.flush()
        os.fsync(handle.fileno())


def retain_best_model(
    report_path: Path | str,
    test_best_val: float,
    model_blob: bytes,
    metadata: dict[str, Any],
) -> bool:
    """Persist the model and its series iff it ties or beats every prior test value.

    ``metadata`` carries trial_id, sequence_id, the destination models/results
    directories, and the staging directory holding the trial's series files.
    Malformed report lines are skipped with a warning.
    """
    maxima: list[float] = []
    with open(report_path, "r", encoding="utf-8") as handle:
        for line in handle:
            line = line.strip()
            if not line:
                continue
            try:
                maxima.append(float(line.split(" ")[0]))
            except ValueError:
                logger.warning("skipping malformed report line: %r", line)
    if maxima and test_best_val < max(maxima):
        return False
    trial_id = metadata["trial_id"]
    sequence_id = metadata["sequence_id"]
    models_dir = Path(metadata["models_dir"])
    results_dir = Path(metadata["results_dir"])
    staging_dir = Path(metadata["staging_dir"])
    stamp = time.strftime("%Y%m%d-%H%M%S")
    (models_dir / f"{sequence_id}_{stamp}_{trial_id}.model").write_bytes(model_blob)
    for staged in sorted(staging_dir.glob(f"{trial_id}_*")):
        (results_dir / staged.name).write_bytes(staged.read_bytes())
    return True


@dataclass
class _LiveTrial:
    record: TrialRecord
    process: subprocess.Popen
    reader: MetricsFileReader
    stdout_handle: Any
    stderr_handle: Any


class Experiment:
    """One running experiment; owns tuner, assessor, journal, and children."""

    def __init__(self, config: ExperimentConfig, experiment_id: str | None = None) -> None:
        self.config = config
        id_rng = np.random.default_rng()
        self.experiment_id = experiment_id or make_trial_id(id_rng)
        self.paths = ExperimentPaths.build(config.working_dir, config.experiment_name, self.experiment_id)
        try:
            self.paths.ensure()
        except OSError as exc:
            raise EngineError(f"cannot create experiment directories under {config.working_dir}: {exc}") from exc
        self.paths.searchspace.write_text(serialize_search_space(config.search_space), encoding="utf-8")

        tuner_cfg = dict(config.tuner)
        self.reseed_policy = ReseedPolicy(n_tr=tuner_cfg.pop("reseed_every", DEFAULT_RESEED_EVERY))
        self.tuner = AnnealingTuner(
            optimize_mode=tuner_cfg.pop("optimize_mode", "maximize"),
            seed=tuner_cfg.pop("seed", config.seed),
            t0=tuner_cfg.pop("t0", DEFAULT_T0),
            decay=tuner_cfg.pop("decay", DEFAULT_DECAY),
            warmup=tuner_cfg.pop("warmup", DEFAULT_WARMUP),
        )
        if tuner_cfg:
            raise ConfigError(f"unknown tuner settings: {sorted(tuner_cfg)}")
        if config.assessor is None:
            self.assessor = None
        else:
            assessor_cfg = dict(config.assessor)
            self.assessor = MedianStopAssessor(
                start_step=assessor_cfg.pop("start_step", 10),
                optimize_mode=assessor_cfg.pop("optimize_mode", "maximize"),
            )
            if assessor_cfg:
                raise ConfigError(f"unknown assessor settings: {sorted(assessor_cfg)}")

        self.id_rng = id_rng
        self.taken_ids = {self.experiment_id}
        self.journal = ExperimentJournal.create(
            self.paths.journal,
            {
                "event": "experiment_started",
                "experiment_id": self.experiment_id,
                "experiment_name": config.experiment_name,
                "seed": config.seed,
                "config": config_snapshot(config),
                "time": time.time(),
            },
        )
        self.live: dict[str, _LiveTrial] = {}
        self.created = 0
        self._stop_requested = False

    @property
    def state(self) -> ExperimentState:
        return self.journal.state

    # -- journal helpers -------------------------------------------------

    def _journal_status(self, trial_id: str, status: str, slot: int | None = None) -> None:
        event: dict[str, Any] = {
            "event": "trial_status",
            "trial_id": trial_id,
            "status": status,
            "time": time.time(),
        }
        if slot is not None:
            event["slot"] = slot
        self.journal.append(event)

    def _journal_metric(self, trial_id: str, report: MetricReport) -> None:
        event: dict[str, Any] = {
            "event": "trial_metric",
            "trial_id": trial_id,
            "kind": report.kind,
            "values": report.values,
            "time": time.time(),
        }
        if report.step is not None:
            event["step"] = report.step
        self.journal.append(event)

    # -- trial lifecycle -------------------------------------------------

    def _launch_one(self, slot: int) -> None:
        sequence_id = self.created
        self.tuner.maybe_reseed(sequence_id, self.reseed_policy)
        assignment = self.tuner.propose(self.config.search_space)
        trial_id = make_trial_id(self.id_rng, self.taken_ids)
        self.taken_ids.add(trial_id)
        self.journal.append(
            {
                "event": "trial_created",
                "trial_id": trial_id,
                "sequence_id": sequence_id,
                "assignment": assignment,
                "time": time.time(),
            }
        )
        self.created += 1

        trial_dir = self.paths.trial_dir(trial_id)
        trial_dir.mkdir(parents=True, exist_ok=True)
        params_path = trial_dir / "parameter.json"
        metrics_path = trial_dir / "metrics.jsonl"
        write_params_file(str(params_path), assignment)
        metrics_path.touch()

        env = dict(os.environ)
        env.update({str(k): str(v) for k, v in self.config.trial_env.items()})
        env.update(
            {
                ENV_EXPERIMENT_ID: self.experiment_id,
                ENV_TRIAL_ID: trial_id,
                ENV_SEQUENCE_ID: str(sequence_id),
                ENV_PARAMS_FILE: str(params_path),
                ENV_METRICS_FILE: str(metrics_path),
                ENV_WORKING_DIR: str(self.config.working_dir),
                ENV_EXPERIMENT_NAME: self.config.experiment_name,
                ENV_EXPERIMENT_SEED: str(self.config.seed),
            }
        )
        stdout_handle = open(trial_dir / "stdout.log", "ab")
        stderr_handle = open(trial_dir / "stderr.log", "ab")
        try:
            process = subprocess.Popen(
                self.config.trial_command,
                shell=True,
                cwd=str(self.config.trial_code_dir),
                env=env,
                stdout=stdout_handle,
                stderr=stderr_handle,
            )
        except OSError as exc:
            stdout_handle.close()
            stderr_handle.close()
            logger.error("failed to spawn trial %s: %s", trial_id, exc)
            self._journal_status(trial_id, STATUS_FAILED)
            return
        record = self.state.records[trial_id]
        self._journal_status(trial_id, STATUS_RUNNING, slot=slot)
        self.live[trial_id] = _LiveTrial(
            record=record,
            process=process,
            reader=MetricsFileReader(str(metrics_path)),
            stdout_handle=stdout_handle,
            stderr_handle=stderr_handle,
        )
        logger.info("trial %s (#%d) running on slot %d", trial_id, sequence_id, slot)

    def _handle_report(self, trial_id: str, report: MetricReport, assess: bool = True) -> None:
        self._journal_metric(trial_id, report)
        if report.kind != "intermediate" or self.assessor is None:
            return
        self.assessor.record(trial_id, report.step, report.default)
        accepted = len(self.assessor.streams.get(trial_id, ())) == report.step
        if not (assess and accepted):
            return
        if self.assessor.assess(trial_id, report.step) is AssessVerdict.STOP:
            logger.info("assessor stopped trial %s at step %d", trial_id, report.step)
            self._terminate(trial_id, STATUS_EARLY_STOPPED)

    def _ingest_metrics(self) -> None:
        for trial_id, live in list(self.live.items()):
            for report in live.reader.poll():
                self._handle_report(trial_id, report)
                if trial_id not in self.live:  # early-stopped mid-batch
                    break

    def _terminate(self, trial_id: str, status: str) -> None:
        live = self.live.pop(trial_id)
        live.process.terminate()
        try:
            live.process.wait(timeout=5)
        except subprocess.TimeoutExpired:
            live.process.kill()
            live.process.wait()
        live.stdout_handle.close()
        live.stderr_handle.close()
        live.reader.drain()
        self._journal_status(trial_id, status)

    def _reap_finished(self) -> None:
        for trial_id, live in list(self.live.items()):
            returncode = live.process.poll()
            if returncode is None:
                continue
            del self.live[trial_id]
            live.stdout_handle.close()
            live.stderr_handle.close()
            # Collect reports written between the last poll and process exit.
            for report in live.reader.poll():
                self._handle_report(trial_id, report, assess=False)
            live.reader.drain()
            record = live.record
            if returncode == 0 and record.final is not None:
                self._journal_status(trial_id, STATUS_SUCCEEDED)
                self.tuner.observe(record.assignment, record.final.default)
                if self.assessor is not None:
                    self.assessor.complete(trial_id)
                self._report_and_retain(record)
            else:
                logger.warning(
                    "trial %s failed (exit code %s, final %s)",
                    trial_id, returncode, "present" if record.final else "missing",
                )
                self._journal_status(trial_id, STATUS_FAILED)

    def _report_and_retain(self, record: TrialRecord) -> None:
        test_value = record.final.values.get("test") if record.final else None
        blob_path = self.paths.models_staging / f"{record.trial_id}.model"
        if test_value is None or not blob_path.exists():
            return
        try:
            append_report(self.paths.report_test, float(test_value), record.sequence_id, record.trial_id)
            retained = retain_best_model(
                self.paths.report_test,
                float(test_value),
                blob_path.read_bytes(),
                metadata={
                    "trial_id": record.trial_id,
                    "sequence_id": record.sequence_id,
                    "models_dir": self.paths.models,
                    "results_dir": self.paths.results,
                    "staging_dir": self.paths.results_staging,
                },
            )
            if retained:
                logger.info("retained best model from trial %s (test %.4f)", record.trial_id, test_value)
        except OSError as exc:
            logger.error("report/retention failed for trial %s: %s", record.trial_id, exc)

    # -- main loop -------------------------------------------------------

    def run(self) -> ExperimentState:
        config = self.config
        budget = parse_duration(config.max_experiment_duration)
        t_start = time.monotonic()
        log_handler = logging.FileHandler(self.paths.logs / "engine.log")
        log_handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
        logging.getLogger("spikehpo").addHandler(log_handler)
        try:
            while True:
                self._ingest_metrics()
                self._reap_finished()
                if not self._stop_requested and self.paths.stop_file.exists():
                    logger.info("stop file detected, canceling %d running trials", len(self.live))
                    self._stop_requested = True
                    for trial_id in list(self.live):
                        self._terminate(trial_id, STATUS_CANCELED)
                within_budget = time.monotonic() - t_start < budget
                can_create = (
                    not self._stop_requested
                    and self.created < config.max_trial_number
                    and within_budget
                )
                if can_create:
                    running = [lt.record for lt in self.live.values()]
                    room = schedule(
                        config.resource_slots,
                        running,
                        range(config.max_trial_number - self.created),
                        config.max_trials_per_slot,
                        config.trial_concurrency,
                    )
                    for _, slot in room:
                        self._launch_one(slot)
                if not self.live:
                    if self._stop_requested:
                        reason = "stopped"
                        break
                    if self.created >= config.max_trial_number:
                        reason = "max_trial_number reached"
                        break
                    if not within_budget:
                        reason = "duration budget elapsed"
                        break
                time.sleep(POLL_INTERVAL_SECONDS)
            self.journal.append({"event": "experiment_finished", "reason": reason, "time": time.time()})
            logger.info("experiment %s finished: %s", self.experiment_id, reason)
        finally:
            self.journal.close()
            logging.getLogger("spikehpo").removeHandler(log_handler)
            log_handler.close()
        return self.state


def run_experiment(config: ExperimentConfig, experiment_id: str | None = None) -> ExperimentState:
    """Run a complete experiment; returns the final journal-backed state."""
    return Experiment(config, experiment_id=experiment_id).run()


def recover_experiment(experiment_logs_dir: Path | str) -> ExperimentState:
    """Replay a (possibly crashed) journal and close out interrupted trials.

    Completed trial records are reconstructed untouched; trials that were
    still Waiting or Running when the engine died are marked Failed, and a
    finish event is appended if missing. Interrupted trials are not
    relaunched.
    """
    logs_dir = Path(experiment_logs_dir)
    journal_path = logs_dir / "journal"
    if not journal_path.exists():
        raise EngineError(f"no journal found in {logs_dir}")
    state = ExperimentJournal.replay_file(journal_path)
    journal = ExperimentJournal(journal_path, state)
    try:
        for record in state.records_in_order():
            if record.status in TERMINAL_STATUSES:
                continue
            logger.warning("marking interrupted trial %s as Failed", record.trial_id)
            journal.append(
                {
                    "event": "trial_status",
                    "trial_id": record.trial_id,
                    "status": STATUS_FAILED,
                    "time": time.time(),
                }
            )
        if state.finished_reason is None:
            journal.append({"event": "experiment_finished", "reason": "recovered after crash", "time": time.time()})
    finally:
        journal.close()
    return state
