"""Built-in trial program: synthetic spiking task and the training loop.

The dataset is a rate-coded classification task: every class owns a fixed
per-channel firing-rate template, and each sample is an independent
Bernoulli spike raster drawn from its class template. Templates are
permutations of one shared rate vector, so all classes have identical
aggregate statistics (total rate, rate histogram) and discrimination
requires reading which channels are active.

Training follows the e-prop loop: per-batch gradient updates, a validation
pass per epoch, checkpointing on every new running-max validation accuracy,
four streak counters that stop training when validation metrics stagnate
or degrade, and a final test pass through the best-validation weights.
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .protocol import (
    TrialContext,
    get_next_parameter,
    report_final_result,
    report_intermediate_result,
)
from .searchspace import merge_params
from .snn import (
    AdamOptimizer,
    SRNNModel,
    eprop_grads,
    forward,
    load_model_blob,
    save_model_blob,
    softmax,
)

logger = logging.getLogger(__name__)

__all__ = [
    "SpikeDataset",
    "GenerationError",
    "generate_dataset",
    "encode_targets",
    "infer",
    "loss",
    "do_epoch",
    "EarlyStopState",
    "TrainingSeries",
    "train_trial",
    "run_builtin_trial",
    "TRIAL_DEFAULTS",
]

RATE_LOW = 0.02
RATE_HIGH = 0.25
N_FOLDS = 10

# Mirrors the trial program's argument defaults; sampled hyperparameters
# and explicit overrides are merged on top.
TRIAL_DEFAULTS: dict = {
    "n_rec": 100,
    "threshold": 0.9,
    "tau_mem": 250e-3,
    "tau_out": 5e-3,
    "delay_targets": 100,
    "lr": 1e-3,
    "gamma": 0.3,
    "reset_mechanism": "subtract",
    "epochs": 1000,
    "batch_size": 10,
    "bias_out": 0.0,
    "dt": 1e-3,
    "w_init_gain": (0.5, 0.1, 0.5),
    "lr_layer_norm": (0.05, 0.05, 1.0),
    "n_classes": 5,
    "n_inputs": 20,
    "n_steps": 100,
    "train_size": 500,
    "val_size": 100,
    "test_size": 100,
}


class GenerationError(ValueError):
    """Raised when a dataset cannot satisfy its size/coverage contract."""


@dataclass
class SpikeDataset:
    """Spike rasters with a fixed test split and fold-based validation."""

    samples: np.ndarray  # [N, T, n_in] of {0, 1}
    labels: np.ndarray  # [N] class indices
    train_idx: np.ndarray
    val_idx: np.ndarray
    test_idx: np.ndarray
    random_split: int
    rate_templates: np.ndarray  # [n_classes, n_in]

    @property
    def n_classes(self) -> int:
        return self.rate_templates.shape[0]

    def split(self, name: str) -> tuple[np.ndarray, np.ndarray]:
        idx = {"train": self.train_idx, "val": self.val_idx, "test": self.test_idx}[name]
        return self.samples[idx], self.labels[idx]


def generate_dataset(
    n_classes: int,
    n_in: int,
    n_steps: int,
    sizes: tuple[int, int, int],
    seed: int,
    random_split: int,
) -> SpikeDataset:
    """Synthesize the rate-template task and carve out its three splits.

    The test split is held out before folding and depends only on the seed;
    ``random_split`` selects which cyclic window of the remaining pool
    becomes validation, so different splits share pool and test set.
    """
    if n_classes < 2:
        raise GenerationError(f"need at least 2 classes, got {n_classes}")
    train_size, val_size, test_size = sizes
    if min(sizes) < 1:
        raise GenerationError(f"split sizes must be positive, got {sizes}")
    if not 0 <= random_split < N_FOLDS:
        raise GenerationError(f"random_split must lie in [0, {N_FOLDS}), got {random_split}")
    if min(sizes) < n_classes:
        raise GenerationError(
            f"sizes {sizes} too small to cover {n_classes} classes in every split"
        )
    pool_size = train_size + val_size
    if pool_size < N_FOLDS:
        raise GenerationError(f"train+val pool of {pool_size} cannot be cut into {N_FOLDS} folds")

    # Class templates: permutations of one shared rate vector, so aggregate
    # rate statistics carry no class information.
    template_rng = np.random.default_rng((seed, 1))
    base_rates = np.linspace(RATE_LOW, RATE_HIGH, n_in)
    templates = np.stack([template_rng.permutation(base_rates) for _ in range(n_classes)])

    total = pool_size + test_size
    labels = np.arange(total) % n_classes
    order_rng = np.random.default_rng((seed, 2))
    labels = labels[order_rng.permutation(total)]

    sample_rng = np.random.default_rng((seed, 3))
    rates = templates[labels]  # [N, n_in]
    samples = (sample_rng.random((total, n_steps, n_in)) < rates[:, None, :]).astype(float)

    indices = np.arange(total)
    test_idx = indices[pool_size:]
    pool = indices[:pool_size]
    fold_len = pool_size // N_FOLDS
    start = random_split * fold_len
    val_idx = pool[(start + np.arange(val_size)) % pool_size]
    in_val = np.zeros(pool_size, dtype=bool)
    in_val[(start + np.arange(val_size)) % pool_size] = True
    train_idx = pool[~in_val][:train_size]

    for name, idx in (("train", train_idx), ("val", val_idx), ("test", test_idx)):
        present = np.unique(labels[idx])
        if len(present) < n_classes:
            raise GenerationError(
                f"{name} split of {len(idx)} samples misses classes "
                f"{sorted(set(range(n_classes)) - set(present.tolist()))}; sizes too small"
            )

    return SpikeDataset(
        samples=samples,
        labels=labels,
        train_idx=train_idx,
        val_idx=val_idx,
        test_idx=test_idx,
        random_split=random_split,
        rate_templates=templates,
    )


def encode_targets(labels: np.ndarray, n_classes: int, n_steps: int) -> np.ndarray:
    """One-hot targets tiled across time: shape [T, batch, n_classes]."""
    labels = np.asarray(labels, dtype=int)
    if labels.min() < 0 or labels.max() >= n_classes:
        raise ValueError(f"labels outside [0, {n_classes}): {labels}")
    onehot = np.zeros((len(labels), n_classes))
    onehot[np.arange(len(labels)), labels] = 1.0
    return np.broadcast_to(onehot, (n_steps, len(labels), n_classes)).copy()


def infer(outputs: np.ndarray, delay: int) -> int | np.ndarray:
    """Predicted class: argmax of readout summed over the last ``delay`` steps.

    Ties resolve to the lowest class index. Accepts [T, n_out] for a single
    sequence or [T, batch, n_out] for a batch.
    """
    steps = outputs.shape[0]
    if not 1 <= delay <= steps:
        raise ValueError(f"delay must lie in [1, {steps}], got {delay}")
    summed = outputs[steps - delay :].sum(axis=0)
    if outputs.ndim == 2:
        return int(np.argmax(summed))
    return np.argmax(summed, axis=-1)


def loss(outputs: np.ndarray, targets: np.ndarray, delay: int) -> float:
    """Cross-entropy between softmax readouts and one-hot targets.

    Averaged over the last ``delay`` steps and the batch.
    """
    squeeze = outputs.ndim == 2
    if squeeze:
        outputs = outputs[:, None, :]
        targets = targets[:, None, :]
    steps, batch, _ = outputs.shape
    if not 1 <= delay <= steps:
        raise ValueError(f"delay must lie in [1, {steps}], got {delay}")
    window = outputs[steps - delay :]
    shifted = window - window.max(axis=-1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    return float(-(targets[steps - delay :] * log_probs).sum() / (delay * batch))


def do_epoch(
    model: SRNNModel,
    samples: np.ndarray,
    labels: np.ndarray,
    mode: str,
    batch_size: int,
    optimizer: AdamOptimizer | None = None,
    rng: np.random.Generator | None = None,
) -> tuple[float, float]:
    """One pass over a split; returns (accuracy %, accumulated loss).

    Train mode shuffles, then applies one gradient update per batch;
    val/test modes leave the weights untouched. The loss is the plain sum
    of per-batch means, so its scale grows with the number of batches.
    """
    if mode not in ("train", "val", "test"):
        raise ValueError(f"unknown mode: {mode!r}")
    n = len(samples)
    if n == 0:
        raise ValueError(f"empty {mode} split")
    if mode == "train":
        if optimizer is None:
            raise ValueError("train mode requires an optimizer")
        order = rng.permutation(n) if rng is not None else np.arange(n)
    else:
        order = np.arange(n)

    correct = 0
    loss_sum = 0.0
    n_classes = model.n_out
    for lo in range(0, n, batch_size):
        idx = order[lo : lo + batch_size]
        x = np.ascontiguousarray(samples[idx].transpose(1, 0, 2))  # [T, B, n_in]
        batch_labels = labels[idx]
        traces = forward(model, x)
        y = traces[0]
        if mode == "train":
            grads = eprop_grads(model, x, batch_labels, traces)
            optimizer.apply(model, grads)
        targets = encode_targets(batch_labels, n_classes, x.shape[0])
        loss_sum += loss(y, targets, model.t_crop)
        preds = infer(y, model.t_crop)
        correct += int((preds == batch_labels).sum())
    return correct / n * 100.0, loss_sum


_STOP_RULES = (
    ("small validation loss changes", 10),
    ("validation loss increase", 10),
    ("small validation accuracy changes", 5),
    ("validation accuracy decrease", 5),
)


@dataclass
class EarlyStopState:
    """Four streak counters over relative validation-metric changes.

    Thresholds are percentages of the previous epoch's value: loss change
    below 0.5%, loss increase above 0.5%, accuracy change below 0.1%,
    accuracy drop above 2%. A counter resets whenever its condition fails;
    a zero previous value leaves the dependent counters untouched for that
    epoch. Patience is 10 epochs for the loss rules, 5 for accuracy.
    """

    small_loss_change: int = 0
    loss_increase: int = 0
    small_acc_change: int = 0
    acc_decrease: int = 0

    def update(self, prev_loss: float, cur_loss: float, prev_acc: float, cur_acc: float) -> None:
        if prev_loss != 0.0:
            change = (cur_loss - prev_loss) / prev_loss * 100.0
            self.small_loss_change = self.small_loss_change + 1 if abs(change) < 0.5 else 0
            self.loss_increase = self.loss_increase + 1 if change > 0.5 else 0
        if prev_acc != 0.0:
            change = (cur_acc - prev_acc) / prev_acc * 100.0
            self.small_acc_change = self.small_acc_change + 1 if abs(change) < 0.1 else 0
            self.acc_decrease = self.acc_decrease + 1 if -change > 2.0 else 0

    def stop_reason(self) -> str | None:
        """First exhausted rule in declaration order, or None."""
        counters = (self.small_loss_change, self.loss_increase, self.small_acc_change, self.acc_decrease)
        for (reason, patience), value in zip(_STOP_RULES, counters):
            if value >= patience:
                return reason
        return None


@dataclass
class TrainingSeries:
    """Per-epoch metric records plus the stop bookkeeping."""

    train_loss: list[float] = field(default_factory=list)
    train_acc: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    val_acc: list[float] = field(default_factory=list)
    test_loss: list[float] = field(default_factory=list)
    test_acc: list[float] = field(default_factory=list)
    stop_reason: str = ""
    epochs_run: int = 0
    best_val_epoch: int = 0

    def as_dict(self) -> dict[str, list[float]]:
        return {
            "train_loss": self.train_loss,
            "train_acc": self.train_acc,
            "val_loss": self.val_loss,
            "val_acc": self.val_acc,
            "test_loss": self.test_loss,
            "test_acc": self.test_acc,
        }


def _round(value: float, decimals: int) -> float:
    return float(np.round(value, decimals))


def train_trial(
    params: dict,
    data: SpikeDataset,
    reporter=None,
    rng: np.random.Generator | None = None,
) -> tuple[TrainingSeries, float, SRNNModel]:
    """The full trial loop: train, validate, early-stop, test from best val.

    ``reporter`` needs ``intermediate(values)`` and ``final(values)``
    callables (both optional when None). Returns the per-epoch series, the
    test accuracy of the best-validation checkpoint, and that model.
    """
    if rng is None:
        rng = np.random.default_rng()
    train_x, train_y = data.split("train")
    val_x, val_y = data.split("val")
    test_x, test_y = data.split("test")

    model = SRNNModel.initialize(
        n_in=train_x.shape[2],
        n_rec=int(params["n_rec"]),
        n_out=data.n_classes,
        thr=float(params["threshold"]),
        tau_mem=float(params["tau_mem"]),
        tau_out=float(params["tau_out"]),
        gamma=float(params["gamma"]),
        reset_mechanism=params["reset_mechanism"],
        t_crop=int(params["delay_targets"]),
        rng=rng,
        b_out=float(params["bias_out"]),
        dt=float(params["dt"]),
        init_gains=tuple(params["w_init_gain"]),
    )
    optimizer = AdamOptimizer(lr=float(params["lr"]), layer_factors=tuple(params["lr_layer_norm"]))
    batch_size = int(params["batch_size"])
    epochs = int(params["epochs"])

    series = TrainingSeries()
    monitor = EarlyStopState()
    running_max = -np.inf
    best_blob = save_model_blob(model)
    epoch = 0
    while monitor.stop_reason() is None and epoch < epochs:
        epoch += 1
        train_acc, train_loss = do_epoch(model, train_x, train_y, "train", batch_size, optimizer, rng)
        val_acc, val_loss = do_epoch(model, val_x, val_y, "val", batch_size)
        series.train_acc.append(train_acc)
        series.train_loss.append(train_loss)
        series.val_acc.append(val_acc)
        series.val_loss.append(val_loss)
        if val_acc >= running_max:
            running_max = val_acc
            series.best_val_epoch = epoch
            best_blob = save_model_blob(model)
        if reporter is not None:
            reporter.intermediate(
                {
                    "default": _round(val_acc, 4),
                    "training acc.": _round(train_acc, 4),
                    "val. loss": _round(val_loss, 5),
                    "train. loss": _round(train_loss, 5),
                }
            )
        if epoch >= 2:
            monitor.update(series.val_loss[-2], series.val_loss[-1], series.val_acc[-2], series.val_acc[-1])
    series.epochs_run = epoch
    series.stop_reason = monitor.stop_reason() or "epoch budget exhausted"
    if monitor.stop_reason() is not None:
        logger.info("training stopped after %d/%d epochs: stop condition for %s met",
                    epoch, epochs, series.stop_reason)
    else:
        logger.info("training ended after %d/%d epochs", epoch, epochs)

    best_model = load_model_blob(best_blob)
    test_acc, test_loss = do_epoch(best_model, test_x, test_y, "test", batch_size)
    series.test_acc.append(test_acc)
    series.test_loss.append(test_loss)

    final_values = {
        "default": _round(max(series.val_acc), 4),
        "best training": _round(max(series.train_acc), 4),
        "test": _round(test_acc, 4),
    }
    if reporter is not None:
        reporter.final(final_values)
    return series, test_acc, best_model


class ProtocolReporter:
    """Forwards metric dictionaries over the trial wire protocol."""

    def __init__(self, ctx: TrialContext) -> None:
        self.ctx = ctx

    def intermediate(self, values: dict) -> None:
        report_intermediate_result(self.ctx, values)

    def final(self, values: dict) -> None:
        report_final_result(self.ctx, values)


def _staging_dirs(ctx: TrialContext) -> tuple[Path, Path] | None:
    """Model/results staging directories, when the engine exported its roots."""
    working = os.environ.get("HPO_WORKING_DIR")
    name = os.environ.get("HPO_EXPERIMENT_NAME")
    if not working or not name:
        return None
    base = Path(working)
    models = base / "models" / name / ctx.experiment_id / "staging"
    results = base / "results" / name / ctx.experiment_id / "staging"
    models.mkdir(parents=True, exist_ok=True)
    results.mkdir(parents=True, exist_ok=True)
    return models, results


def _stage_artifacts(
    ctx: TrialContext, series: TrainingSeries, best_model: SRNNModel, data: SpikeDataset
) -> None:
    staging = _staging_dirs(ctx)
    if staging is None:
        return
    models_dir, results_dir = staging
    (models_dir / f"{ctx.trial_id}.model").write_bytes(save_model_blob(best_model))
    for name, values in series.as_dict().items():
        path = results_dir / f"{ctx.trial_id}_{name}.json"
        path.write_text(json.dumps(values), encoding="utf-8")
    test_x, test_y = data.split("test")
    y, _, _ = forward(best_model, np.ascontiguousarray(test_x.transpose(1, 0, 2)))
    preds = infer(y, best_model.t_crop)
    payload = {
        "predictions": np.asarray(preds).astype(int).tolist(),
        "labels": test_y.astype(int).tolist(),
        "n_classes": data.n_classes,
    }
    (results_dir / f"{ctx.trial_id}_test_predictions.json").write_text(
        json.dumps(payload), encoding="utf-8"
    )


def run_builtin_trial() -> int:
    """Entry point for the engine's default trial command.

    Reads the sampled assignment through the wire protocol, merges it over
    the defaults (explicit overrides win last), trains, stages the
    best-validation model and series for the engine's retention step, and
    reports intermediate/final metrics. Returns a process exit code.
    """
    try:
        ctx = TrialContext.from_env()
    except Exception:
        logger.exception("trial environment incomplete")
        return 2
    try:
        params = dict(TRIAL_DEFAULTS)
        params = merge_params(params, get_next_parameter(ctx))
        overrides = os.environ.get("HPO_TRIAL_OVERRIDES")
        if overrides:
            params = merge_params(params, json.loads(overrides))
        seed = int(os.environ.get("HPO_EXPERIMENT_SEED", "42"))
        rng = np.random.default_rng((seed, ctx.sequence_id))
        random_split = int(rng.integers(0, N_FOLDS))
        logger.info(
            "trial %s (#%d): random_split=%d params=%s",
            ctx.trial_id, ctx.sequence_id, random_split, params,
        )
        data = generate_dataset(
            n_classes=int(params["n_classes"]),
            n_in=int(params["n_inputs"]),
            n_steps=int(params["n_steps"]),
            sizes=(int(params["train_size"]), int(params["val_size"]), int(params["test_size"])),
            seed=seed,
            random_split=random_split,
        )
        reporter = ProtocolReporter(ctx)
        series, _, best_model = train_trial(params, data, reporter=reporter, rng=rng)
        _stage_artifacts(ctx, series, best_model, data)
    except Exception:
        logger.exception("trial failed")
        return 1
    return 0
