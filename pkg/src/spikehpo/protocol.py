"""Wire contract between the engine and a trial process.

Trials are arbitrary subprocesses in any language. The engine delivers
identity and file locations through environment variables, parameters
through a JSON file, and receives metrics as JSON lines appended to a
per-trial metrics file:

    HPO_EXPERIMENT_ID   experiment token
    HPO_TRIAL_ID        trial token
    HPO_SEQUENCE_ID     0-based trial number
    HPO_PARAMS_FILE     path to the JSON parameter assignment
    HPO_METRICS_FILE    path the trial appends metric lines to

Each metrics line is a self-delimiting JSON document of the form
``{"kind": "intermediate"|"final", "step": k, "values": {...}}`` where
``values`` must contain a finite ``"default"`` entry. The engine polls the
metrics file (100 ms period), tracking a byte offset; a torn trailing line
left by a crash is dropped without corrupting prior lines.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from typing import Any

__all__ = [
    "ENV_EXPERIMENT_ID",
    "ENV_TRIAL_ID",
    "ENV_SEQUENCE_ID",
    "ENV_PARAMS_FILE",
    "ENV_METRICS_FILE",
    "POLL_INTERVAL_SECONDS",
    "MetricReport",
    "MetricsFileReader",
    "ProtocolError",
    "TrialContext",
    "get_next_parameter",
    "report_intermediate_result",
    "report_final_result",
    "identity",
    "write_params_file",
]

ENV_EXPERIMENT_ID = "HPO_EXPERIMENT_ID"
ENV_TRIAL_ID = "HPO_TRIAL_ID"
ENV_SEQUENCE_ID = "HPO_SEQUENCE_ID"
ENV_PARAMS_FILE = "HPO_PARAMS_FILE"
ENV_METRICS_FILE = "HPO_METRICS_FILE"

POLL_INTERVAL_SECONDS = 0.1

KIND_INTERMEDIATE = "intermediate"
KIND_FINAL = "final"


class ProtocolError(RuntimeError):
    """Raised when the wire contract is violated on the trial side."""


@dataclass
class TrialContext:
    """Identity and file locations of one trial process."""

    experiment_id: str
    trial_id: str
    sequence_id: int
    params_file: str
    metrics_file: str
    next_step: int = 1
    final_reported: bool = False
    _params: dict[str, Any] | None = field(default=None, repr=False)

    @classmethod
    def from_env(cls, env: dict[str, str] | None = None) -> TrialContext:
        env = dict(os.environ) if env is None else env
        values = {}
        for var in (ENV_EXPERIMENT_ID, ENV_TRIAL_ID, ENV_SEQUENCE_ID, ENV_PARAMS_FILE, ENV_METRICS_FILE):
            value = env.get(var, "")
            if not value:
                raise ProtocolError(f"required environment variable {var} is unset or empty")
            values[var] = value
        return cls(
            experiment_id=values[ENV_EXPERIMENT_ID],
            trial_id=values[ENV_TRIAL_ID],
            sequence_id=int(values[ENV_SEQUENCE_ID]),
            params_file=values[ENV_PARAMS_FILE],
            metrics_file=values[ENV_METRICS_FILE],
        )


@dataclass(frozen=True)
class MetricReport:
    """One reported metric map; ``values`` always carries a finite "default"."""

    kind: str
    values: dict[str, float]
    step: int | None = None

    def __post_init__(self) -> None:
        if self.kind not in (KIND_INTERMEDIATE, KIND_FINAL):
            raise ProtocolError(f"unknown metric kind: {self.kind!r}")
        default = self.values.get("default")
        if default is None or not isinstance(default, (int, float)) or not math.isfinite(default):
            raise ProtocolError(f"metric values must contain a finite 'default', got {self.values!r}")
        if self.kind == KIND_INTERMEDIATE and (self.step is None or self.step < 1):
            raise ProtocolError(f"intermediate report requires step >= 1, got {self.step!r}")

    @property
    def default(self) -> float:
        return float(self.values["default"])

    def to_json(self) -> str:
        doc: dict[str, Any] = {"kind": self.kind}
        if self.step is not None:
            doc["step"] = self.step
        doc["values"] = self.values
        return json.dumps(doc)

    @classmethod
    def from_json(cls, line: str) -> MetricReport:
        doc = json.loads(line)
        return cls(kind=doc["kind"], values=doc["values"], step=doc.get("step"))


def write_params_file(path: str, assignment: dict[str, Any]) -> None:
    """Engine side: persist the assignment a trial will read."""
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(assignment, handle, indent=2)


def get_next_parameter(ctx: TrialContext) -> dict[str, Any]:
    """Read the engine-written assignment; idempotent within one process."""
    if ctx._params is not None:
        return dict(ctx._params)
    try:
        with open(ctx.params_file, "r", encoding="utf-8") as handle:
            params = json.load(handle)
    except (OSError, json.JSONDecodeError) as exc:
        raise ProtocolError(f"cannot read parameter file {ctx.params_file}: {exc}") from exc
    if not isinstance(params, dict):
        raise ProtocolError(f"parameter file {ctx.params_file} must hold a JSON object")
    ctx._params = params
    return dict(params)


def _append_line(ctx: TrialContext, report: MetricReport) -> None:
    with open(ctx.metrics_file, "a", encoding="utf-8") as handle:
        handle.write(report.to_json() + "\n")
        handle.flush()
        os.fsync(handle.fileno())


def report_intermediate_result(ctx: TrialContext, values: dict[str, float]) -> None:
    """Append one intermediate metric line; steps are assigned 1, 2, 3, ..."""
    report = MetricReport(kind=KIND_INTERMEDIATE, values=dict(values), step=ctx.next_step)
    _append_line(ctx, report)
    ctx.next_step += 1


def report_final_result(ctx: TrialContext, values: dict[str, float]) -> None:
    """Append the single final metric line; a second call is a local error."""
    if ctx.final_reported:
        raise ProtocolError("report_final_result called twice within one trial")
    report = MetricReport(kind=KIND_FINAL, values=dict(values))
    _append_line(ctx, report)
    ctx.final_reported = True


def identity(ctx: TrialContext) -> tuple[str, str, int]:
    """Echo the env-delivered identity triple."""
    return ctx.experiment_id, ctx.trial_id, ctx.sequence_id


class MetricsFileReader:
    """Engine side: incremental reader over one trial's metrics file.

    Tracks a byte offset so each poll returns only newly completed lines.
    Bytes after the last newline are held back until the line completes;
    ``drain`` treats a still-unterminated tail as torn and drops it.
    """

    def __init__(self, path: str) -> None:
        self.path = path
        self.offset = 0
        self._tail = b""

    def poll(self) -> list[MetricReport]:
        try:
            with open(self.path, "rb") as handle:
                handle.seek(self.offset)
                chunk = handle.read()
        except FileNotFoundError:
            return []
        if not chunk:
            return []
        self.offset += len(chunk)
        data = self._tail + chunk
        lines = data.split(b"\n")
        self._tail = lines.pop()
        reports = []
        for raw in lines:
            text = raw.decode("utf-8", errors="replace").strip()
            if not text:
                continue
            try:
                reports.append(MetricReport.from_json(text))
            except (json.JSONDecodeError, KeyError, TypeError, ProtocolError):
                # Malformed line: skip it rather than poison the stream.
                continue
        return reports

    def drain(self) -> list[MetricReport]:
        """Final poll after the writer exited; a torn tail is discarded."""
        reports = self.poll()
        self._tail = b""
        return reports
