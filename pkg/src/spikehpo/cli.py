"""Command-line front end for running and inspecting experiments."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .engine import ExperimentJournal, load_config, run_experiment
from .report import confusion_matrix, export_parallel_coordinates, status

logger = logging.getLogger(__name__)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spikehpo",
        description="Hyperparameter-optimization engine for spiking networks.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment from a JSON configuration file")
    run.add_argument("config", type=Path, help="path to the experiment configuration")
    run.add_argument("--experiment-id", default=None, help="fix the experiment id (default: random token)")

    stat = sub.add_parser("status", help="summarize an experiment from its journal")
    stat.add_argument("experiment_dir", type=Path, help="the experiment's logs directory")

    export = sub.add_parser("export-parcoords", help="export succeeded trials as CSV")
    export.add_argument("experiment_dir", type=Path)
    export.add_argument("-o", "--output", type=Path, default=None, help="write CSV here instead of stdout")

    confusion = sub.add_parser("confusion", help="print a trial's test-set confusion matrix")
    confusion.add_argument("experiment_dir", type=Path)
    confusion.add_argument("trial_id")

    sub.add_parser("trial-builtin", help="run the built-in training trial (engine-invoked)")

    stop = sub.add_parser("stop", help="ask a running experiment to stop")
    stop.add_argument("experiment_dir", type=Path)

    return parser


def _cmd_run(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    from .engine import Experiment

    experiment = Experiment(config, experiment_id=args.experiment_id)
    print(f"experiment {experiment.experiment_id} -> {experiment.paths.logs}")
    experiment.run()
    print(status(experiment.paths.logs))
    return 0


def _cmd_export(args: argparse.Namespace) -> int:
    state = ExperimentJournal.replay_file(args.experiment_dir / "journal")
    document = export_parallel_coordinates(state)
    if args.output is None:
        sys.stdout.write(document)
    else:
        args.output.write_text(document, encoding="utf-8")
        print(f"wrote {args.output}")
    return 0


def _results_dir(experiment_dir: Path) -> Path:
    # <working>/logs/<name>/<id> -> <working>/results/<name>/<id>
    experiment_id = experiment_dir.name
    name = experiment_dir.parent.name
    working = experiment_dir.parent.parent.parent
    return working / "results" / name / experiment_id


def _cmd_confusion(args: argparse.Namespace) -> int:
    results = _results_dir(args.experiment_dir.resolve())
    candidates = [
        results / f"{args.trial_id}_test_predictions.json",
        results / "staging" / f"{args.trial_id}_test_predictions.json",
    ]
    path = next((p for p in candidates if p.exists()), None)
    if path is None:
        print(f"no test predictions recorded for trial {args.trial_id}", file=sys.stderr)
        return 1
    payload = json.loads(path.read_text(encoding="utf-8"))
    matrix = confusion_matrix(payload["predictions"], payload["labels"], payload["n_classes"])
    print(matrix.render())
    print(f"accuracy: {matrix.accuracy:.2f}%")
    return 0


def _cmd_stop(args: argparse.Namespace) -> int:
    stop_file = args.experiment_dir / "stop"
    stop_file.touch()
    print(f"stop requested via {stop_file}")
    return 0


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    if args.command == "run":
        return _cmd_run(args)
    if args.command == "status":
        print(status(args.experiment_dir))
        return 0
    if args.command == "export-parcoords":
        return _cmd_export(args)
    if args.command == "confusion":
        return _cmd_confusion(args)
    if args.command == "trial-builtin":
        from .objective import run_builtin_trial

        return run_builtin_trial()
    if args.command == "stop":
        return _cmd_stop(args)
    raise AssertionError(f"unhandled command {args.command!r}")
