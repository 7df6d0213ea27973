"""Tests for the built-in trial: dataset synthesis, training loop, early stop."""

from __future__ import annotations

import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import special

from spikehpo.objective import (
    RATE_HIGH,
    RATE_LOW,
    TRIAL_DEFAULTS,
    EarlyStopState,
    GenerationError,
    SpikeDataset,
    TrainingSeries,
    do_epoch,
    encode_targets,
    generate_dataset,
    infer,
    loss,
    run_builtin_trial,
    train_trial,
)
from spikehpo.protocol import MetricsFileReader, write_params_file
from spikehpo.snn import AdamOptimizer, SRNNModel, forward

# the four stop rules in their checking order, as documented
STOP_RULES = (
    ("small validation loss changes", 10),
    ("validation loss increase", 10),
    ("small validation accuracy changes", 5),
    ("validation accuracy decrease", 5),
)


def small_data(seed: int = 7, random_split: int = 3) -> SpikeDataset:
    return generate_dataset(
        n_classes=3, n_in=8, n_steps=25, sizes=(24, 12, 9), seed=seed, random_split=random_split
    )


def tiny_model(seed: int = 3, n_in: int = 8, n_out: int = 3, t_crop: int = 5) -> SRNNModel:
    return SRNNModel.initialize(
        n_in=n_in,
        n_rec=12,
        n_out=n_out,
        thr=0.3,
        tau_mem=20e-3,
        tau_out=20e-3,
        gamma=0.3,
        reset_mechanism="subtract",
        t_crop=t_crop,
        rng=np.random.default_rng(seed),
    )


def fast_params(**overrides) -> dict:
    params = dict(TRIAL_DEFAULTS)
    params.update(
        n_rec=16,
        threshold=0.3,
        tau_mem=20e-3,
        tau_out=20e-3,
        delay_targets=5,
        lr=0.05,
        gamma=0.3,
        reset_mechanism="subtract",
        epochs=8,
        batch_size=8,
    )
    params.update(overrides)
    return params


class RecordingReporter:
    def __init__(self) -> None:
        self.intermediates: list[dict] = []
        self.final_values: dict | None = None

    def intermediate(self, values: dict) -> None:
        self.intermediates.append(dict(values))

    def final(self, values: dict) -> None:
        self.final_values = dict(values)


class TestGenerateDataset:
    def test_same_args_same_dataset(self):
        a = small_data()
        b = small_data()
        assert np.array_equal(a.samples, b.samples)
        assert np.array_equal(a.labels, b.labels)
        assert np.array_equal(a.train_idx, b.train_idx)
        assert np.array_equal(a.val_idx, b.val_idx)
        assert np.array_equal(a.test_idx, b.test_idx)
        assert np.array_equal(a.rate_templates, b.rate_templates)

    def test_splits_partition_the_samples(self):
        data = small_data()
        combined = np.concatenate([data.train_idx, data.val_idx, data.test_idx])
        assert len(combined) == len(set(combined.tolist())) == len(data.samples)
        assert len(data.train_idx) == 24
        assert len(data.val_idx) == 12
        assert len(data.test_idx) == 9

    def test_every_class_in_every_split(self):
        data = small_data()
        for name in ("train", "val", "test"):
            _, labels = data.split(name)
            assert set(labels.tolist()) == {0, 1, 2}

    def test_samples_are_binary_spike_rasters(self):
        data = small_data()
        assert data.samples.shape == (45, 25, 8)
        assert set(np.unique(data.samples).tolist()) <= {0.0, 1.0}

    def test_folds_share_pool_and_test(self):
        a = small_data(random_split=0)
        b = small_data(random_split=1)
        assert np.array_equal(a.samples, b.samples)
        assert np.array_equal(a.test_idx, b.test_idx)
        assert set(a.val_idx.tolist()) != set(b.val_idx.tolist())
        pool_a = set(a.train_idx.tolist()) | set(a.val_idx.tolist())
        pool_b = set(b.train_idx.tolist()) | set(b.val_idx.tolist())
        assert pool_a == pool_b

    def test_templates_are_permutations_of_shared_rates(self):
        data = small_data()
        base = np.linspace(RATE_LOW, RATE_HIGH, 8)
        for template in data.rate_templates:
            assert np.allclose(np.sort(template), base)
        # identical aggregate rate per class: discrimination needs channel identity
        sums = data.rate_templates.sum(axis=1)
        assert np.allclose(sums, sums[0])

    def test_single_class_rejected(self):
        with pytest.raises(GenerationError, match="2 classes"):
            generate_dataset(n_classes=1, n_in=4, n_steps=5, sizes=(10, 10, 10), seed=0, random_split=0)

    def test_sizes_below_class_count_rejected(self):
        with pytest.raises(GenerationError):
            generate_dataset(n_classes=5, n_in=4, n_steps=5, sizes=(20, 3, 20), seed=0, random_split=0)

    def test_bad_random_split_rejected(self):
        with pytest.raises(GenerationError, match="random_split"):
            small_data(random_split=10)

    def test_tiny_pool_rejected(self):
        with pytest.raises(GenerationError, match="folds"):
            generate_dataset(n_classes=2, n_in=4, n_steps=5, sizes=(4, 4, 4), seed=0, random_split=0)

    @given(
        n_classes=st.integers(2, 4),
        random_split=st.integers(0, 9),
        seed=st.integers(0, 100),
    )
    @settings(max_examples=40, deadline=None)
    def test_partition_property(self, n_classes, random_split, seed):
        sizes = (8 * n_classes, 4 * n_classes, 4 * n_classes)
        try:
            data = generate_dataset(
                n_classes=n_classes, n_in=5, n_steps=4, sizes=sizes, seed=seed, random_split=random_split
            )
        except GenerationError:
            return  # coverage can legitimately fail for unlucky shuffles
        combined = np.concatenate([data.train_idx, data.val_idx, data.test_idx])
        assert sorted(combined.tolist()) == list(range(sum(sizes)))
        assert len(data.train_idx) == sizes[0]
        assert len(data.val_idx) == sizes[1]


class TestEncodeTargets:
    def test_one_hot_tiled_over_time(self):
        targets = encode_targets(np.array([2]), n_classes=4, n_steps=6)
        assert targets.shape == (6, 1, 4)
        for t in range(6):
            assert targets[t, 0].tolist() == [0.0, 0.0, 1.0, 0.0]

    def test_class_axis_sums_to_one(self):
        targets = encode_targets(np.array([0, 3, 1]), n_classes=4, n_steps=5)
        assert np.allclose(targets.sum(axis=-1), 1.0)

    def test_single_step_reduces_to_plain_one_hot(self):
        targets = encode_targets(np.array([1, 0]), n_classes=2, n_steps=1)
        assert targets.shape == (1, 2, 2)
        assert targets[0].tolist() == [[0.0, 1.0], [1.0, 0.0]]

    def test_out_of_range_label_rejected(self):
        with pytest.raises(ValueError):
            encode_targets(np.array([4]), n_classes=4, n_steps=3)
        with pytest.raises(ValueError):
            encode_targets(np.array([-1]), n_classes=4, n_steps=3)


class TestInfer:
    def test_dominant_class_in_late_window(self):
        outputs = np.zeros((8, 4))
        outputs[:3, 0] = 5.0  # early lead for class 0
        outputs[3:, 3] = 1.0  # class 3 dominates the last 5 steps
        assert infer(outputs, delay=5) == 3
        assert infer(outputs, delay=8) == 0  # full-window sum flips the call

    def test_full_window_sums_whole_sequence(self):
        outputs = np.array([[1.0, 0.0], [0.0, 0.4], [0.0, 0.7]])
        assert infer(outputs, delay=3) == 1

    def test_all_equal_ties_to_class_zero(self):
        assert infer(np.ones((4, 3)), delay=2) == 0

    def test_batched_inference(self):
        outputs = np.zeros((5, 2, 3))
        outputs[:, 0, 1] = 1.0
        outputs[:, 1, 2] = 1.0
        assert infer(outputs, delay=5).tolist() == [1, 2]

    def test_delay_out_of_range_rejected(self):
        outputs = np.ones((4, 3))
        with pytest.raises(ValueError):
            infer(outputs, delay=5)
        with pytest.raises(ValueError):
            infer(outputs, delay=0)


class TestLoss:
    def test_uniform_logits_give_log_k(self):
        outputs = np.zeros((6, 4))
        targets = encode_targets(np.array([2]), 4, 6)[:, 0, :]
        assert loss(outputs, targets, delay=6) == pytest.approx(math.log(4), abs=1e-9)
        assert loss(outputs, targets, delay=6) == pytest.approx(1.386294, abs=1e-6)

    def test_peaked_correct_logits_drive_loss_to_zero(self):
        outputs = np.zeros((4, 3))
        outputs[:, 1] = 60.0
        targets = encode_targets(np.array([1]), 3, 4)[:, 0, :]
        assert loss(outputs, targets, delay=4) < 1e-20

    def test_matches_log_softmax_oracle(self):
        rng = np.random.default_rng(12)
        outputs = rng.normal(size=(7, 3, 5))
        labels = rng.integers(0, 5, size=3)
        targets = encode_targets(labels, 5, 7)
        delay = 4
        log_probs = special.log_softmax(outputs[-delay:], axis=-1)
        expected = -(targets[-delay:] * log_probs).sum() / (delay * 3)
        assert loss(outputs, targets, delay) == pytest.approx(expected, rel=1e-12)

    def test_steps_outside_window_are_ignored(self):
        rng = np.random.default_rng(4)
        outputs = rng.normal(size=(6, 2, 3))
        targets = encode_targets(np.array([0, 2]), 3, 6)
        reference = loss(outputs, targets, delay=2)
        noisy = outputs.copy()
        noisy[:4] += 100.0
        assert loss(noisy, targets, delay=2) == reference


class TestDoEpoch:
    def test_val_mode_leaves_weights_bit_identical(self):
        data = small_data()
        model = tiny_model()
        before = model.copy()
        samples, labels = data.split("val")
        do_epoch(model, samples, labels, "val", batch_size=5)
        assert np.array_equal(model.w_in, before.w_in)
        assert np.array_equal(model.w_rec, before.w_rec)
        assert np.array_equal(model.w_out, before.w_out)
        assert model.b_out == before.b_out

    def test_accuracy_is_correct_percentage(self):
        data = small_data()
        model = tiny_model()
        samples, labels = data.split("val")
        acc, _ = do_epoch(model, samples, labels, "val", batch_size=5)
        y, _, _ = forward(model, np.ascontiguousarray(samples.transpose(1, 0, 2)))
        preds = infer(y, model.t_crop)
        expected = int((preds == labels).sum()) / len(labels) * 100.0
        assert acc == expected

    def test_loss_is_sum_of_batch_means(self):
        data = small_data()
        model = tiny_model()
        samples, labels = data.split("val")
        _, loss_sum = do_epoch(model, samples, labels, "val", batch_size=6)
        expected = 0.0
        for lo in (0, 6):
            x = np.ascontiguousarray(samples[lo : lo + 6].transpose(1, 0, 2))
            y, _, _ = forward(model, x)
            targets = encode_targets(labels[lo : lo + 6], model.n_out, x.shape[0])
            expected += loss(y, targets, model.t_crop)
        assert loss_sum == expected

    def test_batch_count_via_optimizer_steps(self):
        data = small_data()
        model = tiny_model()
        samples, labels = data.split("train")  # 24 samples
        optimizer = AdamOptimizer(lr=1e-3)
        do_epoch(model, samples, labels, "train", batch_size=10, optimizer=optimizer)
        assert optimizer.step_count == 3  # batches of 10, 10, 4

    def test_train_mode_updates_weights(self):
        data = small_data()
        model = tiny_model()
        before = model.copy()
        samples, labels = data.split("train")
        do_epoch(model, samples, labels, "train", batch_size=8, optimizer=AdamOptimizer(lr=0.05))
        assert not np.array_equal(model.w_out, before.w_out)

    def test_empty_split_rejected(self):
        model = tiny_model()
        with pytest.raises(ValueError, match="empty"):
            do_epoch(model, np.zeros((0, 5, 8)), np.zeros(0, dtype=int), "val", batch_size=4)

    def test_train_requires_optimizer(self):
        data = small_data()
        model = tiny_model()
        samples, labels = data.split("train")
        with pytest.raises(ValueError, match="optimizer"):
            do_epoch(model, samples, labels, "train", batch_size=8)

    def test_unknown_mode_rejected(self):
        data = small_data()
        samples, labels = data.split("val")
        with pytest.raises(ValueError, match="mode"):
            do_epoch(tiny_model(), samples, labels, "predict", batch_size=4)


def run_monitor(val_loss: list[float], val_acc: list[float]) -> tuple[int | None, str | None]:
    """Drive the counters the way the training loop does: checks begin at
    epoch 2 and compare each epoch against its predecessor. Returns the
    first epoch whose update exhausts a counter, with the reported reason."""
    monitor = EarlyStopState()
    for epoch in range(2, len(val_loss) + 1):
        monitor.update(val_loss[epoch - 2], val_loss[epoch - 1], val_acc[epoch - 2], val_acc[epoch - 1])
        if monitor.stop_reason() is not None:
            return epoch, monitor.stop_reason()
    return None, None


class TestEarlyStop:
    def test_constant_metrics_stop_after_epoch_6(self):
        # flat loss and accuracy: the accuracy-stagnation counter (patience 5)
        # beats the loss-stagnation counter (patience 10)
        epoch, reason = run_monitor([1.0] * 15, [80.0] * 15)
        assert (epoch, reason) == (6, "small validation accuracy changes")

    def test_rising_loss_constant_acc_race(self):
        # loss climbing 1% per epoch arms the loss-increase counter (patience
        # 10), but constant accuracy still wins at epoch 6
        val_loss = [1.01**k for k in range(15)]
        epoch, reason = run_monitor(val_loss, [80.0] * 15)
        assert (epoch, reason) == (6, "small validation accuracy changes")

    def test_flat_loss_moving_acc_stops_at_epoch_11(self):
        val_acc = [50.0 * 1.01**k for k in range(15)]
        epoch, reason = run_monitor([1.0] * 15, val_acc)
        assert (epoch, reason) == (11, "small validation loss changes")

    def test_rising_loss_moving_acc_stops_at_epoch_11(self):
        val_loss = [1.0 * 1.01**k for k in range(15)]
        val_acc = [50.0 * 1.01**k for k in range(15)]
        epoch, reason = run_monitor(val_loss, val_acc)
        assert (epoch, reason) == (11, "validation loss increase")

    def test_collapsing_accuracy_stops_at_epoch_6(self):
        val_loss = [1.0 * 0.99**k for k in range(15)]
        val_acc = [90.0 * 0.97**k for k in range(15)]
        epoch, reason = run_monitor(val_loss, val_acc)
        assert (epoch, reason) == (6, "validation accuracy decrease")

    def test_alternating_loss_never_arms_loss_counters(self):
        val_loss = [1.0 if k % 2 == 0 else 1.01 for k in range(15)]
        epoch, reason = run_monitor(val_loss, [80.0] * 15)
        assert (epoch, reason) == (6, "small validation accuracy changes")

    def test_zero_previous_loss_skips_loss_counters(self):
        monitor = EarlyStopState(small_loss_change=3, loss_increase=2)
        monitor.update(0.0, 5.0, 100.0, 100.0)
        assert monitor.small_loss_change == 3
        assert monitor.loss_increase == 2
        assert monitor.small_acc_change == 1  # accuracy side still updates

    def test_zero_previous_acc_skips_acc_counters(self):
        monitor = EarlyStopState(small_acc_change=4, acc_decrease=1)
        monitor.update(1.0, 1.0, 0.0, 50.0)
        assert monitor.small_acc_change == 4
        assert monitor.acc_decrease == 1
        assert monitor.small_loss_change == 1

    def test_counter_equals_current_streak_length(self):
        monitor = EarlyStopState()
        for _ in range(3):
            monitor.update(1.0, 1.0, 100.0, 50.0)
        assert monitor.small_loss_change == 3
        monitor.update(1.0, 2.0, 100.0, 50.0)  # streak broken
        assert monitor.small_loss_change == 0
        monitor.update(1.0, 1.0, 100.0, 50.0)
        monitor.update(1.0, 1.0, 100.0, 50.0)
        assert monitor.small_loss_change == 2

    @given(
        small_loss=st.integers(0, 12),
        loss_up=st.integers(0, 12),
        small_acc=st.integers(0, 7),
        acc_down=st.integers(0, 7),
    )
    @settings(max_examples=200)
    def test_stop_reason_is_first_exhausted_rule(self, small_loss, loss_up, small_acc, acc_down):
        monitor = EarlyStopState(
            small_loss_change=small_loss,
            loss_increase=loss_up,
            small_acc_change=small_acc,
            acc_decrease=acc_down,
        )
        expected = None
        for (reason, patience), value in zip(STOP_RULES, (small_loss, loss_up, small_acc, acc_down)):
            if value >= patience:
                expected = reason
                break
        assert monitor.stop_reason() == expected


class TestTrainTrial:
    def test_single_epoch_boundary(self):
        reporter = RecordingReporter()
        series, test_acc, _ = train_trial(
            fast_params(epochs=1), small_data(), reporter=reporter, rng=np.random.default_rng(0)
        )
        assert series.epochs_run == 1
        assert len(series.val_acc) == len(series.train_acc) == 1
        assert series.stop_reason == "epoch budget exhausted"
        assert len(reporter.intermediates) == 1
        assert reporter.final_values is not None
        assert reporter.final_values["test"] == pytest.approx(test_acc, abs=1e-4)

    def test_stagnant_training_stops_after_epoch_6(self):
        # zero learning rate freezes the weights, so validation metrics are
        # exactly constant and the accuracy-stagnation rule fires
        series, _, _ = train_trial(
            fast_params(lr=0.0, epochs=50), small_data(), rng=np.random.default_rng(1)
        )
        assert series.epochs_run == 6
        assert series.stop_reason == "small validation accuracy changes"

    def test_final_default_is_max_intermediate_default(self):
        reporter = RecordingReporter()
        train_trial(fast_params(), small_data(), reporter=reporter, rng=np.random.default_rng(2))
        best_seen = max(values["default"] for values in reporter.intermediates)
        assert reporter.final_values["default"] == best_seen

    def test_report_shapes(self):
        reporter = RecordingReporter()
        series, _, _ = train_trial(
            fast_params(epochs=3), small_data(), reporter=reporter, rng=np.random.default_rng(3)
        )
        for i, values in enumerate(reporter.intermediates):
            assert set(values) == {"default", "training acc.", "val. loss", "train. loss"}
            assert values["default"] == float(np.round(series.val_acc[i], 4))
            assert values["val. loss"] == float(np.round(series.val_loss[i], 5))
            assert values["train. loss"] == float(np.round(series.train_loss[i], 5))
        assert set(reporter.final_values) == {"default", "best training", "test"}
        assert reporter.final_values["best training"] == float(np.round(max(series.train_acc), 4))

    def test_checkpoint_is_latest_running_max(self):
        series, _, _ = train_trial(fast_params(), small_data(), rng=np.random.default_rng(4))
        best = max(series.val_acc)
        expected_epoch = max(i + 1 for i, v in enumerate(series.val_acc) if v == best)
        assert series.best_val_epoch == expected_epoch

    def test_returned_test_acc_comes_from_best_model(self):
        data = small_data()
        series, test_acc, best_model = train_trial(fast_params(), data, rng=np.random.default_rng(5))
        test_x, test_y = data.split("test")
        recomputed, _ = do_epoch(best_model, test_x, test_y, "test", batch_size=8)
        assert recomputed == test_acc
        assert series.test_acc == [test_acc]

    def test_training_is_reproducible(self):
        first, _, _ = train_trial(fast_params(epochs=4), small_data(), rng=np.random.default_rng(6))
        second, _, _ = train_trial(fast_params(epochs=4), small_data(), rng=np.random.default_rng(6))
        assert first.val_loss == second.val_loss
        assert first.train_loss == second.train_loss
        assert first.val_acc == second.val_acc


BUILTIN_OVERRIDES = {
    "epochs": 2,
    "n_rec": 12,
    "n_classes": 2,
    "n_inputs": 6,
    "n_steps": 20,
    "train_size": 16,
    "val_size": 12,
    "test_size": 12,
    "batch_size": 8,
    "delay_targets": 5,
    "tau_mem": 20e-3,
    "tau_out": 20e-3,
    "threshold": 0.3,
}


class TestBuiltinTrial:
    def set_env(self, tmp_path, monkeypatch):
        write_params_file(str(tmp_path / "parameter.json"), {"lr": 0.05, "gamma": 0.3})
        monkeypatch.setenv("HPO_EXPERIMENT_ID", "expAAAA1")
        monkeypatch.setenv("HPO_TRIAL_ID", "triBBBB2")
        monkeypatch.setenv("HPO_SEQUENCE_ID", "0")
        monkeypatch.setenv("HPO_PARAMS_FILE", str(tmp_path / "parameter.json"))
        monkeypatch.setenv("HPO_METRICS_FILE", str(tmp_path / "metrics.jsonl"))
        monkeypatch.setenv("HPO_TRIAL_OVERRIDES", json.dumps(BUILTIN_OVERRIDES))
        monkeypatch.setenv("HPO_WORKING_DIR", str(tmp_path))
        monkeypatch.setenv("HPO_EXPERIMENT_NAME", "unitexp")
        monkeypatch.setenv("HPO_EXPERIMENT_SEED", "42")

    def test_successful_trial_reports_and_stages(self, tmp_path, monkeypatch):
        self.set_env(tmp_path, monkeypatch)
        assert run_builtin_trial() == 0
        reports = MetricsFileReader(str(tmp_path / "metrics.jsonl")).drain()
        assert [r.kind for r in reports] == ["intermediate", "intermediate", "final"]
        assert reports[0].step == 1 and reports[1].step == 2
        final = reports[-1]
        assert set(final.values) == {"default", "best training", "test"}
        models_staging = tmp_path / "models" / "unitexp" / "expAAAA1" / "staging"
        results_staging = tmp_path / "results" / "unitexp" / "expAAAA1" / "staging"
        assert (models_staging / "triBBBB2.model").exists()
        for name in ("train_acc", "train_loss", "val_acc", "val_loss", "test_acc", "test_loss"):
            series = json.loads((results_staging / f"triBBBB2_{name}.json").read_text())
            assert isinstance(series, list)
        predictions = json.loads((results_staging / "triBBBB2_test_predictions.json").read_text())
        assert len(predictions["predictions"]) == len(predictions["labels"]) == 12
        assert predictions["n_classes"] == 2

    def test_missing_environment_returns_2(self, monkeypatch):
        for var in (
            "HPO_EXPERIMENT_ID",
            "HPO_TRIAL_ID",
            "HPO_SEQUENCE_ID",
            "HPO_PARAMS_FILE",
            "HPO_METRICS_FILE",
        ):
            monkeypatch.delenv(var, raising=False)
        assert run_builtin_trial() == 2

    def test_corrupt_params_file_returns_1(self, tmp_path, monkeypatch):
        self.set_env(tmp_path, monkeypatch)
        (tmp_path / "parameter.json").write_text("{broken", encoding="utf-8")
        assert run_builtin_trial() == 1
