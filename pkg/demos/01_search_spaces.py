"""Defining, sampling, and round-tripping hyperparameter search spaces.

A search space is a JSON object mapping parameter names to specs. Two kinds
exist: ``quniform`` (a quantized grid between two bounds) and ``choice``
(an explicit value list). This demo walks through parsing, the snapping
rule, sampling, and the serialize/parse fixed point.
"""

from __future__ import annotations

import json

import numpy as np

from spikehpo.searchspace import (
    parse_search_space,
    quantize,
    sample_assignment,
    serialize_search_space,
)

SPACE_DOC = {
    "n_rec": {"_type": "quniform", "_value": [11, 256, 1]},
    "threshold": {"_type": "quniform", "_value": [0.05, 1, 0.05]},
    "tau_mem": {"_type": "choice", "_value": [1e-3, 5e-3, 10e-3, 50e-3, 100e-3, 200e-3]},
    "lr": {"_type": "choice", "_value": [0.0001, 0.001, 0.01, 0.1]},
    "reset_mechanism": {"_type": "choice", "_value": ["subtract", "zero"]},
}


def main() -> None:
    space = parse_search_space(json.dumps(SPACE_DOC))
    print(f"parsed {len(space)} parameters: {', '.join(space)}\n")

    # -- the snapping rule -------------------------------------------------
    # quniform draws a uniform value and snaps it to the nearest multiple
    # of q (ties round away from zero), then clips into [low, high].
    threshold = space["threshold"]
    print("snapping uniform draws onto the threshold grid (q = 0.05):")
    for raw in (0.061, 0.074, 0.97, 1.2, 0.05):
        print(f"  {raw:>6} -> {quantize(raw, threshold)}")

    # integer grids produce integers, not floats
    n_rec = space["n_rec"]
    print(f"\ninteger-valued spec: quantize(147.7) = {quantize(147.7, n_rec)!r}")

    # -- sampling ----------------------------------------------------------
    rng = np.random.default_rng(7)
    print("\nthree sampled assignments:")
    for _ in range(3):
        print(f"  {sample_assignment(space, rng)}")

    # every sampled value lies on its parameter's grid
    counts = {}
    for _ in range(10_000):
        value = sample_assignment(space, rng)["threshold"]
        counts[value] = counts.get(value, 0) + 1
    print("\nthreshold sample frequencies over 10,000 draws:")
    for value in sorted(counts):
        bar = "#" * (counts[value] // 20)
        print(f"  {value:0.2f}: {counts[value]:>4} {bar}")
    print("(interior points share the mass evenly; the two endpoints catch")
    print(" only half a cell each, hence the smaller bars)")

    # -- serialization is a fixed point -------------------------------------
    text = serialize_search_space(space)
    assert serialize_search_space(parse_search_space(text)) == text
    print("\nserialize -> parse -> serialize reproduces the document byte for byte")


if __name__ == "__main__":
    main()
