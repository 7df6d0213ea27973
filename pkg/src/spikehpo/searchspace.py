"""Hyperparameter search-space grammar: parsing, validation, and sampling.

A search space is an ordered map of parameter name to specification. Two
parameter kinds are supported: quantized-uniform ranges and categorical
choices. The on-disk form is a JSON document mapping each name to
``{"_type": "quniform"|"choice", "_value": [...]}``; parsing accepts exactly
what :func:`serialize_search_space` emits.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any, Iterator

import numpy as np

__all__ = [
    "ParamKind",
    "ParamSpec",
    "SearchSpace",
    "SearchSpaceError",
    "parse_search_space",
    "serialize_search_space",
    "sample_param",
    "sample_assignment",
    "merge_params",
]

Scalar = int | float | str


class SearchSpaceError(ValueError):
    """Raised for malformed or unsupported search-space documents."""


class ParamKind:
    QUNIFORM = "quniform"
    CHOICE = "choice"


@dataclass(frozen=True)
class ParamSpec:
    """Domain of a single hyperparameter.

    For ``quniform`` the domain is the quantization grid of step ``q``
    inside ``[low, high]``; for ``choice`` it is the listed values.
    """

    kind: str
    low: float = 0.0
    high: float = 0.0
    q: float = 0.0
    values: tuple[Scalar, ...] = ()

    def __post_init__(self) -> None:
        if self.kind == ParamKind.QUNIFORM:
            if not (self.low <= self.high):
                raise SearchSpaceError(f"quniform requires low <= high, got [{self.low}, {self.high}]")
            if not (self.q > 0):
                raise SearchSpaceError(f"quniform requires q > 0, got {self.q}")
        elif self.kind == ParamKind.CHOICE:
            if not self.values:
                raise SearchSpaceError("choice requires a non-empty value list")
            if len(set(self.values)) != len(self.values):
                raise SearchSpaceError(f"choice values contain duplicates: {list(self.values)}")
        else:
            raise SearchSpaceError(f"unsupported parameter kind: {self.kind!r}")

    @property
    def integer_valued(self) -> bool:
        """True when every grid point of a quniform spec is integral."""
        if self.kind != ParamKind.QUNIFORM:
            return False
        return all(float(x).is_integer() for x in (self.low, self.high, self.q))

    def contains(self, value: Scalar) -> bool:
        if self.kind == ParamKind.CHOICE:
            return value in self.values
        if isinstance(value, str):
            return False
        v = float(value)
        if not (self.low <= v <= self.high):
            return False
        if v in (self.low, self.high):
            # The bounds themselves are reachable through clipping even when
            # they sit off the grid.
            return True
        ratio = v / self.q
        return abs(ratio - round(ratio)) < 1e-9


@dataclass(frozen=True)
class SearchSpace:
    """Ordered, immutable collection of named parameter specs."""

    params: dict[str, ParamSpec] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for name in self.params:
            if not name:
                raise SearchSpaceError("parameter names must be non-empty")

    def __len__(self) -> int:
        return len(self.params)

    def __iter__(self) -> Iterator[str]:
        return iter(self.params)

    def __getitem__(self, name: str) -> ParamSpec:
        return self.params[name]


def _parse_spec(name: str, entry: Any) -> ParamSpec:
    if not isinstance(entry, dict) or "_type" not in entry or "_value" not in entry:
        raise SearchSpaceError(f"parameter {name!r}: expected an object with _type and _value")
    kind = entry["_type"]
    value = entry["_value"]
    if kind == ParamKind.QUNIFORM:
        if not isinstance(value, list) or len(value) != 3:
            raise SearchSpaceError(f"parameter {name!r}: quniform _value must be [low, high, q]")
        low, high, q = value
        return ParamSpec(kind=ParamKind.QUNIFORM, low=float(low), high=float(high), q=float(q))
    if kind == ParamKind.CHOICE:
        if not isinstance(value, list):
            raise SearchSpaceError(f"parameter {name!r}: choice _value must be a list")
        return ParamSpec(kind=ParamKind.CHOICE, values=tuple(value))
    raise SearchSpaceError(f"parameter {name!r}: unsupported parameter kind {kind!r}")


def _reject_duplicate_keys(pairs: list[tuple[str, Any]]) -> dict[str, Any]:
    out: dict[str, Any] = {}
    for key, value in pairs:
        if key in out:
            raise SearchSpaceError(f"duplicate parameter name: {key!r}")
        out[key] = value
    return out


def parse_search_space(text: str | dict[str, Any]) -> SearchSpace:
    """Parse a search-space document (JSON text or an already-decoded map)."""
    if isinstance(text, str):
        try:
            doc = json.loads(text, object_pairs_hook=_reject_duplicate_keys)
        except json.JSONDecodeError as exc:
            raise SearchSpaceError(f"search space is not valid JSON: {exc}") from exc
    else:
        doc = text
    if not isinstance(doc, dict):
        raise SearchSpaceError("search space must be a map of name -> spec")
    return SearchSpace(params={name: _parse_spec(name, entry) for name, entry in doc.items()})


def serialize_search_space(space: SearchSpace) -> str:
    """Canonical textual form; ``parse -> serialize -> parse`` is a fixed point."""
    doc: dict[str, Any] = {}
    for name, spec in space.params.items():
        if spec.kind == ParamKind.QUNIFORM:
            doc[name] = {"_type": spec.kind, "_value": [spec.low, spec.high, spec.q]}
        else:
            doc[name] = {"_type": spec.kind, "_value": list(spec.values)}
    return json.dumps(doc, indent=2)


def quantize(value: float, spec: ParamSpec) -> int | float:
    """Snap ``value`` onto the quniform grid: clip(round(value / q) * q).

    Rounding is half-away-from-zero so grid cells are symmetric; the result
    is clipped into [low, high] and returned as int when the whole grid is
    integral.
    """
    ratio = value / spec.q
    snapped = math.copysign(math.floor(abs(ratio) + 0.5), ratio) * spec.q
    clipped = min(max(snapped, spec.low), spec.high)
    if spec.integer_valued:
        return int(round(clipped))
    return float(clipped)


def sample_param(spec: ParamSpec, rng: np.random.Generator) -> Scalar:
    """Draw one value from a parameter's domain."""
    if spec.kind == ParamKind.CHOICE:
        return spec.values[int(rng.integers(0, len(spec.values)))]
    u = rng.uniform(spec.low, spec.high)
    return quantize(u, spec)


def sample_assignment(space: SearchSpace, rng: np.random.Generator) -> dict[str, Scalar]:
    """Draw one independent value per parameter, in space order."""
    return {name: sample_param(spec, rng) for name, spec in space.params.items()}


def merge_params(defaults: dict[str, Any], sampled: dict[str, Any]) -> dict[str, Any]:
    """Overlay a sampled assignment onto defaults; sampled entries always win."""
    merged = {k: v for k, v in defaults.items() if k not in sampled}
    merged.update(sampled)
    return merged


def validate_assignment(space: SearchSpace, assignment: dict[str, Scalar]) -> None:
    """Check an assignment has exactly the space's keys, all within domain."""
    if set(assignment) != set(space.params):
        missing = set(space.params) - set(assignment)
        extra = set(assignment) - set(space.params)
        raise SearchSpaceError(f"assignment keys mismatch (missing={sorted(missing)}, extra={sorted(extra)})")
    for name, value in assignment.items():
        if not space[name].contains(value):
            raise SearchSpaceError(f"value {value!r} outside domain of parameter {name!r}")
