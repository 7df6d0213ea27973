"""A minimal external trial program, written against the wire protocol alone.

This script is what any third-party objective looks like to the experiment
engine: a black box launched once per trial. The whole contract fits in a
few lines, and this file doubles as its documentation:

  * ``HPO_PARAMS_FILE`` points at a JSON object with the sampled
    hyperparameters for this trial.
  * ``HPO_TRIAL_ID``, ``HPO_EXPERIMENT_ID`` and ``HPO_SEQUENCE_ID``
    identify the trial (read here only to prove they arrive).
  * Metrics go to ``HPO_METRICS_FILE`` as one JSON object per line:
    ``{"kind": "intermediate", "step": N, "values": {"default": ...}}``
    while running, and one ``{"kind": "final", "values": {...}}`` at the
    end. The engine requires a finite ``default`` entry in every report.
  * Exit 0 on success; any other code marks the trial Failed.

The objective itself is a negated quadratic bowl over two parameters,

    f(a, b) = -((a - a*)**2 + (b - b*)**2)

with its unique maximum of 0 at the optimum ``(a*, b*)``. The optimum
defaults to (50, 50) and can be moved through the ``TOY_OPTIMUM_A`` /
``TOY_OPTIMUM_B`` environment variables, so a tuner pointed at this script
has a known target to find. No third-party imports: the standard runtime
is the point.
"""

from __future__ import annotations

import json
import os
import sys

REQUIRED_ENV = (
    "HPO_EXPERIMENT_ID",
    "HPO_TRIAL_ID",
    "HPO_SEQUENCE_ID",
    "HPO_PARAMS_FILE",
    "HPO_METRICS_FILE",
)


def toy_objective(a: float, b: float, a_star: float, b_star: float) -> float:
    """The negated quadratic; its unique maximizer is (a_star, b_star)."""
    return -((a - a_star) ** 2 + (b - b_star) ** 2)


def write_report(metrics_path: str, document: dict) -> None:
    with open(metrics_path, "a", encoding="utf-8") as handle:
        handle.write(json.dumps(document) + "\n")
        handle.flush()


def run_toy_trial(env: dict) -> int:
    missing = [name for name in REQUIRED_ENV if not env.get(name)]
    if missing:
        print(f"missing required environment: {', '.join(missing)}", file=sys.stderr)
        return 2

    try:
        with open(env["HPO_PARAMS_FILE"], encoding="utf-8") as handle:
            params = json.load(handle)
        a, b = params["a"], params["b"]
    except (OSError, ValueError, KeyError, TypeError) as exc:
        print(f"unusable parameter file: {exc}", file=sys.stderr)
        return 1

    a_star = float(env.get("TOY_OPTIMUM_A", "50"))
    b_star = float(env.get("TOY_OPTIMUM_B", "50"))
    value = toy_objective(a, b, a_star, b_star)

    metrics_path = env["HPO_METRICS_FILE"]
    # Three mock training steps closing in on the true objective value.
    for step in (1, 2, 3):
        write_report(
            metrics_path,
            {"kind": "intermediate", "step": step, "values": {"default": value + 0.5**step}},
        )
    write_report(metrics_path, {"kind": "final", "values": {"default": value}})
    print(f"trial {env['HPO_TRIAL_ID']} (#{env['HPO_SEQUENCE_ID']}) reported {value}")
    return 0


if __name__ == "__main__":
    sys.exit(run_toy_trial(dict(os.environ)))
