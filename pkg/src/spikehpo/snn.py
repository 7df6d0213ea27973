"""Recurrent spiking network with eligibility-trace learning.

The network is a single recurrent layer of leaky integrate-and-fire
neurons feeding a leaky readout. Membrane potentials decay with
``alpha = exp(-dt / tau_mem)`` and readouts with ``kappa = exp(-dt / tau_out)``.
A neuron fires when its potential reaches the threshold; the reset either
subtracts the threshold or zeroes the potential within the same step.

Weight updates are computed online from eligibility traces rather than by
backpropagation through time. For this neuron model the eligibility vector
of a synapse reduces to a leak-filtered copy of its presynaptic activity
(input at the step it drives the membrane, spikes from the step before),
gated by a triangular pseudo-derivative of the postsynaptic potential and
smoothed with the readout leak. The learning signal is the softmax
cross-entropy error broadcast back through the readout weights, restricted
to the last ``t_crop`` time steps and averaged over them and the batch.

All arithmetic is 64-bit; identical seeds, hyperparameters, and inputs
reproduce spike rasters and gradients bit-exactly.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, replace

import numpy as np

__all__ = [
    "SRNNModel",
    "NetState",
    "EpropTraces",
    "Gradients",
    "AdamOptimizer",
    "NumericalError",
    "he_normal_init",
    "pseudo_deriv",
    "lif_step",
    "readout_step",
    "forward",
    "eprop_grads",
    "softmax",
    "save_model_blob",
    "load_model_blob",
]

RESET_SUBTRACT = "subtract"
RESET_ZERO = "zero"

DEFAULT_INIT_GAINS = (0.5, 0.1, 0.5)
DEFAULT_LR_FACTORS = (0.05, 0.05, 1.0)


class NumericalError(ArithmeticError):
    """Raised when network activity stops being finite."""


def he_normal_init(shape: tuple[int, int], gain: float, rng: np.random.Generator) -> np.ndarray:
    """He-normal matrix: entries i.i.d. Normal(0, (gain * sqrt(2 / fan_in))^2).

    Fan-in is the column count. A zero gain yields a zero matrix.
    """
    if gain < 0:
        raise ValueError(f"gain must be >= 0, got {gain}")
    fan_in = shape[1]
    sigma = gain * np.sqrt(2.0 / fan_in)
    return rng.normal(0.0, sigma, size=shape) if sigma > 0 else np.zeros(shape)


@dataclass
class SRNNModel:
    """Weights and neuron constants of the recurrent spiking network."""

    w_in: np.ndarray  # [n_rec, n_in]
    w_rec: np.ndarray  # [n_rec, n_rec], zero diagonal
    w_out: np.ndarray  # [n_out, n_rec]
    b_out: float
    thr: float
    alpha: float
    kappa: float
    gamma: float
    reset_mechanism: str
    t_crop: int
    dt: float = 1e-3

    def __post_init__(self) -> None:
        if self.thr <= 0:
            raise ValueError(f"threshold must be positive, got {self.thr}")
        # The upper bound is inclusive so the infinite-time-constant (leakless)
        # limit stays constructible; finite tau values always land strictly inside.
        if not (0.0 < self.alpha <= 1.0) or not (0.0 < self.kappa <= 1.0):
            raise ValueError(f"leak factors must lie in (0, 1], got alpha={self.alpha}, kappa={self.kappa}")
        if self.gamma <= 0:
            raise ValueError(f"surrogate magnitude must be positive, got {self.gamma}")
        if self.reset_mechanism not in (RESET_SUBTRACT, RESET_ZERO):
            raise ValueError(f"unknown reset mechanism: {self.reset_mechanism!r}")
        if self.t_crop < 1:
            raise ValueError(f"t_crop must be >= 1, got {self.t_crop}")
        if np.diag(self.w_rec).any():
            raise ValueError("recurrent weight matrix must have a zero diagonal")
        for name in ("w_in", "w_rec", "w_out"):
            if not np.isfinite(getattr(self, name)).all():
                raise ValueError(f"{name} contains non-finite entries")

    @property
    def n_in(self) -> int:
        return self.w_in.shape[1]

    @property
    def n_rec(self) -> int:
        return self.w_rec.shape[0]

    @property
    def n_out(self) -> int:
        return self.w_out.shape[0]

    @classmethod
    def initialize(
        cls,
        n_in: int,
        n_rec: int,
        n_out: int,
        thr: float,
        tau_mem: float,
        tau_out: float,
        gamma: float,
        reset_mechanism: str,
        t_crop: int,
        rng: np.random.Generator,
        b_out: float = 0.0,
        dt: float = 1e-3,
        init_gains: tuple[float, float, float] = DEFAULT_INIT_GAINS,
    ) -> SRNNModel:
        """Build a model with He-normal weights and leak factors from time constants."""
        w_in = he_normal_init((n_rec, n_in), init_gains[0], rng)
        w_rec = he_normal_init((n_rec, n_rec), init_gains[1], rng)
        np.fill_diagonal(w_rec, 0.0)
        w_out = he_normal_init((n_out, n_rec), init_gains[2], rng)
        return cls(
            w_in=w_in,
            w_rec=w_rec,
            w_out=w_out,
            b_out=b_out,
            thr=thr,
            alpha=float(np.exp(-dt / tau_mem)),
            kappa=float(np.exp(-dt / tau_out)),
            gamma=gamma,
            reset_mechanism=reset_mechanism,
            t_crop=t_crop,
            dt=dt,
        )

    def copy(self) -> SRNNModel:
        return replace(self, w_in=self.w_in.copy(), w_rec=self.w_rec.copy(), w_out=self.w_out.copy())


@dataclass
class NetState:
    """Instantaneous network state: membranes, spikes, readouts."""

    v: np.ndarray
    z: np.ndarray
    y: np.ndarray

    @classmethod
    def zeros(cls, model: SRNNModel, batch: int | None = None) -> NetState:
        lead = () if batch is None else (batch,)
        return cls(
            v=np.zeros(lead + (model.n_rec,)),
            z=np.zeros(lead + (model.n_rec,)),
            y=np.zeros(lead + (model.n_out,)),
        )


def lif_step(model: SRNNModel, state: NetState, x_t: np.ndarray) -> NetState:
    """One membrane update: integrate, threshold, reset within the same step.

    ``u = alpha * v + W_in x_t + W_rec z``; spikes where ``u >= thr``; the
    subtract reset leaves ``u - thr`` on spiking neurons, the zero reset
    clears them.
    """
    u = model.alpha * state.v + x_t @ model.w_in.T + state.z @ model.w_rec.T
    z_new = (u >= model.thr).astype(float)
    if model.reset_mechanism == RESET_SUBTRACT:
        v_new = u - model.thr * z_new
    else:
        v_new = u * (1.0 - z_new)
    return NetState(v=v_new, z=z_new, y=state.y)


def readout_step(model: SRNNModel, state: NetState) -> np.ndarray:
    """Leaky readout: ``y' = kappa * y + W_out z + b_out``."""
    return model.kappa * state.y + state.z @ model.w_out.T + model.b_out


def pseudo_deriv(model: SRNNModel, v: np.ndarray | float) -> np.ndarray | float:
    """Triangular surrogate of the spike derivative, peaked at the threshold.

    ``gamma * max(0, 1 - |v - thr| / thr)``: equals gamma at ``v == thr``
    and vanishes at 0 and ``2 * thr``.
    """
    return model.gamma * np.maximum(0.0, 1.0 - np.abs(v - model.thr) / model.thr)


def forward(model: SRNNModel, x: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Run the network over a [T, n_in] or [T, batch, n_in] input tensor.

    Starts from the all-zero state and returns the per-step readout, spike,
    and membrane traces with the same leading layout as the input.
    """
    squeeze = x.ndim == 2
    if squeeze:
        x = x[:, None, :]
    steps, batch, _ = x.shape
    state = NetState.zeros(model, batch)
    y = np.empty((steps, batch, model.n_out))
    z = np.empty((steps, batch, model.n_rec))
    v = np.empty((steps, batch, model.n_rec))
    for t in range(steps):
        state = lif_step(model, state, x[t])
        state.y = readout_step(model, state)
        y[t], z[t], v[t] = state.y, state.z, state.v
    if not np.isfinite(y).all() or not np.isfinite(v).all():
        bad_y = ~np.isfinite(y).reshape(steps, -1).all(axis=1)
        bad_v = ~np.isfinite(v).reshape(steps, -1).all(axis=1)
        step = int(np.argmax(bad_y | bad_v)) + 1
        raise NumericalError(f"non-finite network activity at step {step} of {steps}")
    if squeeze:
        return y[:, 0], z[:, 0], v[:, 0]
    return y, z, v


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax over the last axis, numerically stabilized."""
    shifted = logits - logits.max(axis=-1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=-1, keepdims=True)


@dataclass
class EpropTraces:
    """Synaptic trace state carried across time steps, all zero at t = 0.

    The leak-filtered presynaptic traces are stored once per presynaptic
    unit (their postsynaptic rows are identical for this neuron model);
    the readout-filtered eligibility traces are full matrices per sample.
    """

    xbar: np.ndarray  # [batch, n_in], alpha-filtered input
    zbar_alpha: np.ndarray  # [batch, n_rec], alpha-filtered previous-step spikes
    ebar_in: np.ndarray  # [batch, n_rec, n_in]
    ebar_rec: np.ndarray  # [batch, n_rec, n_rec]
    zbar_out: np.ndarray  # [batch, n_rec], kappa-filtered spikes

    @classmethod
    def zeros(cls, model: SRNNModel, batch: int) -> EpropTraces:
        return cls(
            xbar=np.zeros((batch, model.n_in)),
            zbar_alpha=np.zeros((batch, model.n_rec)),
            ebar_in=np.zeros((batch, model.n_rec, model.n_in)),
            ebar_rec=np.zeros((batch, model.n_rec, model.n_rec)),
            zbar_out=np.zeros((batch, model.n_rec)),
        )


@dataclass
class Gradients:
    w_in: np.ndarray
    w_rec: np.ndarray
    w_out: np.ndarray
    b_out: float

    def scaled(self, factor: float) -> Gradients:
        return Gradients(self.w_in * factor, self.w_rec * factor, self.w_out * factor, self.b_out * factor)


def output_error(model: SRNNModel, y: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Per-step learning-signal error: softmax minus one-hot target.

    Restricted to the last ``t_crop`` steps and scaled by 1 / (t_crop * batch)
    so the implied loss is the mean cropped cross-entropy; earlier steps are
    exactly zero.
    """
    steps, batch, n_out = y.shape
    if model.t_crop > steps:
        raise ValueError(f"t_crop={model.t_crop} exceeds sequence length {steps}")
    onehot = np.zeros((batch, n_out))
    onehot[np.arange(batch), labels] = 1.0
    delta = np.zeros_like(y)
    scale = 1.0 / (model.t_crop * batch)
    for t in range(steps - model.t_crop, steps):
        delta[t] = (softmax(y[t]) - onehot) * scale
    return delta


def grads_from_error(
    model: SRNNModel, delta: np.ndarray, x: np.ndarray, z: np.ndarray, v: np.ndarray
) -> Gradients:
    """Accumulate eligibility-trace gradients for a given error signal.

    Linear in ``delta``: scaling the error scales every gradient by the
    same factor. The recurrent gradient's diagonal is forced to zero.
    """
    steps, batch, _ = x.shape
    traces = EpropTraces.zeros(model, batch)
    g_in = np.zeros_like(model.w_in)
    g_rec = np.zeros_like(model.w_rec)
    g_out = np.zeros_like(model.w_out)
    g_b = 0.0
    first_active = steps - model.t_crop
    for t in range(steps):
        z_prev = z[t - 1] if t > 0 else np.zeros((batch, model.n_rec))
        traces.xbar = model.alpha * traces.xbar + x[t]
        traces.zbar_alpha = model.alpha * traces.zbar_alpha + z_prev
        psi = pseudo_deriv(model, v[t])
        traces.ebar_in = model.kappa * traces.ebar_in + psi[:, :, None] * traces.xbar[:, None, :]
        traces.ebar_rec = model.kappa * traces.ebar_rec + psi[:, :, None] * traces.zbar_alpha[:, None, :]
        traces.zbar_out = model.kappa * traces.zbar_out + z[t]
        if t < first_active:
            continue
        learning_signal = delta[t] @ model.w_out  # [batch, n_rec]
        g_in += np.einsum("bj,bji->ji", learning_signal, traces.ebar_in)
        g_rec += np.einsum("bj,bji->ji", learning_signal, traces.ebar_rec)
        g_out += np.einsum("bk,bj->kj", delta[t], traces.zbar_out)
        g_b += float(delta[t].sum())
    np.fill_diagonal(g_rec, 0.0)
    return Gradients(w_in=g_in, w_rec=g_rec, w_out=g_out, b_out=g_b)


def eprop_grads(
    model: SRNNModel,
    x: np.ndarray,
    labels: np.ndarray | int,
    traces: tuple[np.ndarray, np.ndarray, np.ndarray],
) -> Gradients:
    """Gradients for (W_in, W_rec, W_out, b_out) from a forward pass.

    ``traces`` is the (y, z, v) triple returned by :func:`forward` for the
    same input ``x``; ``labels`` holds the target class per sample.
    """
    y, z, v = traces
    squeeze = x.ndim == 2
    if squeeze:
        x, y, z, v = x[:, None, :], y[:, None, :], z[:, None, :], v[:, None, :]
    labels = np.atleast_1d(np.asarray(labels, dtype=int))
    delta = output_error(model, y, labels)
    return grads_from_error(model, delta, x, z, v)


@dataclass
class _MomentPair:
    m: np.ndarray | float
    v: np.ndarray | float


class AdamOptimizer:
    """Bias-corrected Adam with per-layer learning-rate modulation.

    Layer factors apply in (input, recurrent, output) order; the output
    factor also covers the readout bias.
    """

    beta1 = 0.9
    beta2 = 0.999
    eps = 1e-8

    def __init__(self, lr: float, layer_factors: tuple[float, float, float] = DEFAULT_LR_FACTORS) -> None:
        self.lr = lr
        self.layer_factors = layer_factors
        self.step_count = 0
        self._moments: dict[str, _MomentPair] = {}

    def _moment(self, name: str, like: np.ndarray | float) -> _MomentPair:
        if name not in self._moments:
            if isinstance(like, np.ndarray):
                self._moments[name] = _MomentPair(m=np.zeros_like(like), v=np.zeros_like(like))
            else:
                self._moments[name] = _MomentPair(m=0.0, v=0.0)
        return self._moments[name]

    def _update(self, name: str, param, grad, lr_eff):
        pair = self._moment(name, param)
        pair.m = self.beta1 * pair.m + (1.0 - self.beta1) * grad
        pair.v = self.beta2 * pair.v + (1.0 - self.beta2) * np.square(grad)
        m_hat = pair.m / (1.0 - self.beta1**self.step_count)
        v_hat = pair.v / (1.0 - self.beta2**self.step_count)
        return param - lr_eff * m_hat / (np.sqrt(v_hat) + self.eps)

    def apply(self, model: SRNNModel, grads: Gradients) -> None:
        """One optimization step, updating the model's weights in place."""
        self.step_count += 1
        f_in, f_rec, f_out = self.layer_factors
        model.w_in = self._update("w_in", model.w_in, grads.w_in, self.lr * f_in)
        model.w_rec = self._update("w_rec", model.w_rec, grads.w_rec, self.lr * f_rec)
        np.fill_diagonal(model.w_rec, 0.0)
        model.w_out = self._update("w_out", model.w_out, grads.w_out, self.lr * f_out)
        model.b_out = float(self._update("b_out", model.b_out, grads.b_out, self.lr * f_out))


def adam_step(
    params: np.ndarray | float,
    grads: np.ndarray | float,
    base_lr: float,
    layer_factor: float,
    moment_state: dict,
) -> np.ndarray | float:
    """Single standalone Adam update for one parameter tensor.

    ``moment_state`` is a mutable dict carrying ``m``, ``v``, and ``t``
    across calls; the effective rate is ``base_lr * layer_factor``.
    """
    beta1, beta2, eps = AdamOptimizer.beta1, AdamOptimizer.beta2, AdamOptimizer.eps
    moment_state.setdefault("m", np.zeros_like(params) if isinstance(params, np.ndarray) else 0.0)
    moment_state.setdefault("v", np.zeros_like(params) if isinstance(params, np.ndarray) else 0.0)
    moment_state["t"] = moment_state.get("t", 0) + 1
    t = moment_state["t"]
    moment_state["m"] = beta1 * moment_state["m"] + (1.0 - beta1) * grads
    moment_state["v"] = beta2 * moment_state["v"] + (1.0 - beta2) * np.square(grads)
    m_hat = moment_state["m"] / (1.0 - beta1**t)
    v_hat = moment_state["v"] / (1.0 - beta2**t)
    return params - base_lr * layer_factor * m_hat / (np.sqrt(v_hat) + eps)


BLOB_FORMAT = "srnn-f64le-v1"


def save_model_blob(model: SRNNModel) -> bytes:
    """Serialize to a JSON shape header plus little-endian float64 payload.

    Matrices are written in W_in, W_rec, W_out order followed by the scalar
    readout bias; the header carries shapes and neuron constants so the
    blob round-trips to a usable model bit-exactly.
    """
    header = {
        "format": BLOB_FORMAT,
        "shapes": {
            "w_in": list(model.w_in.shape),
            "w_rec": list(model.w_rec.shape),
            "w_out": list(model.w_out.shape),
        },
        "constants": {
            "thr": model.thr,
            "alpha": model.alpha,
            "kappa": model.kappa,
            "gamma": model.gamma,
            "reset_mechanism": model.reset_mechanism,
            "t_crop": model.t_crop,
            "dt": model.dt,
            "b_out": model.b_out,
        },
    }
    buffer = io.BytesIO()
    buffer.write(json.dumps(header).encode("utf-8"))
    buffer.write(b"\n")
    for matrix in (model.w_in, model.w_rec, model.w_out):
        buffer.write(np.ascontiguousarray(matrix, dtype="<f8").tobytes())
    buffer.write(np.float64(model.b_out).astype("<f8").tobytes())
    return buffer.getvalue()


def load_model_blob(blob: bytes) -> SRNNModel:
    """Inverse of :func:`save_model_blob`."""
    newline = blob.index(b"\n")
    header = json.loads(blob[:newline].decode("utf-8"))
    if header.get("format") != BLOB_FORMAT:
        raise ValueError(f"unknown model blob format: {header.get('format')!r}")
    shapes = header["shapes"]
    constants = header["constants"]
    offset = newline + 1
    matrices = {}
    for name in ("w_in", "w_rec", "w_out"):
        shape = tuple(shapes[name])
        count = int(np.prod(shape))
        matrices[name] = np.frombuffer(blob, dtype="<f8", count=count, offset=offset).reshape(shape).copy()
        offset += count * 8
    b_out = float(np.frombuffer(blob, dtype="<f8", count=1, offset=offset)[0])
    return SRNNModel(
        w_in=matrices["w_in"],
        w_rec=matrices["w_rec"],
        w_out=matrices["w_out"],
        b_out=b_out,
        thr=constants["thr"],
        alpha=constants["alpha"],
        kappa=constants["kappa"],
        gamma=constants["gamma"],
        reset_mechanism=constants["reset_mechanism"],
        t_crop=constants["t_crop"],
        dt=constants["dt"],
    )
