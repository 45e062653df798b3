"""Fully-connected threshold network with exact manual backpropagation.

Layers: input -> LeakyReLU hidden stack -> linear -> scaled logistic, so the
output always lands inside (0, output_cap).  Parameters live in one flat
vector (layer order, weights then bias per layer) with reshaped views for the
matrix math; that makes Adagrad updates, weight clipping, and serialization
single-array operations.

Conventions fixed for reproducibility:
* LeakyReLU derivative at exactly 0 uses the z >= 0 branch (slope 1).
* Pre-activations of the output logistic are clamped to a dtype-dependent
  range where the logistic is still strictly inside (0, 1).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import ConfigurationError, DecisionRule, ValidationError, register_rule_kind

DEFAULT_HIDDEN = (10,) * 10
DEFAULT_LEAKY_SLOPE = 0.2
DEFAULT_OUTPUT_CAP = 0.5
ADAGRAD_LR = 0.01
ADAGRAD_EPS = 1e-8

# largest |z| where the logistic stays strictly inside (0, 1) per dtype
_Z_CLIP = {np.dtype(np.float64): 36.0, np.dtype(np.float32): 16.0}


def _z_clip(dtype) -> float:
    return _Z_CLIP[np.dtype(dtype)]


class MlpParams:
    """Network parameters as a flat vector plus per-layer views."""

    __slots__ = ("widths", "theta", "leaky_slope", "output_cap", "clip_bound", "weights", "biases")

    def __init__(
        self,
        widths: Sequence[int],
        theta: np.ndarray,
        leaky_slope: float = DEFAULT_LEAKY_SLOPE,
        output_cap: float = DEFAULT_OUTPUT_CAP,
        clip_bound: float | None = None,
    ):
        widths = tuple(int(w) for w in widths)
        if len(widths) < 2 or widths[-1] != 1 or any(w < 1 for w in widths):
            raise ConfigurationError(f"widths must be (d, ..., 1) with positive entries, got {widths}")
        if not (0.0 < output_cap <= 0.5):
            raise ConfigurationError(f"output_cap must lie in (0, 0.5], got {output_cap}")
        if clip_bound is not None and clip_bound <= 0.0:
            raise ConfigurationError(f"clip_bound must be positive, got {clip_bound}")
        expected = n_params(widths)
        theta = np.ascontiguousarray(theta)
        if theta.shape != (expected,):
            raise ConfigurationError(f"theta must be flat with {expected} entries, got {theta.shape}")
        self.widths = widths
        self.theta = theta
        self.leaky_slope = float(leaky_slope)
        self.output_cap = float(output_cap)
        self.clip_bound = None if clip_bound is None else float(clip_bound)
        self.weights, self.biases = [], []
        offset = 0
        for fan_in, fan_out in zip(widths[:-1], widths[1:]):
            self.weights.append(theta[offset : offset + fan_in * fan_out].reshape(fan_in, fan_out))
            offset += fan_in * fan_out
            self.biases.append(theta[offset : offset + fan_out])
            offset += fan_out

    @property
    def dim(self) -> int:
        return self.widths[0]

    @property
    def dtype(self):
        return self.theta.dtype

    @property
    def n_layers(self) -> int:
        return len(self.widths) - 1

    def copy(self) -> "MlpParams":
        return MlpParams(self.widths, self.theta.copy(), self.leaky_slope, self.output_cap, self.clip_bound)

    def clip(self) -> None:
        if self.clip_bound is not None:
            np.clip(self.theta, -self.clip_bound, self.clip_bound, out=self.theta)

    def to_config(self) -> dict:
        return {
            "kind": "mlp",
            "widths": list(self.widths),
            "theta": [float(v) for v in self.theta],
            "leaky_slope": self.leaky_slope,
            "output_cap": self.output_cap,
            "clip_bound": self.clip_bound,
            "dtype": self.theta.dtype.name,
        }

    @classmethod
    def from_config(cls, cfg: dict) -> "MlpParams":
        theta = np.asarray(cfg["theta"], dtype=np.dtype(cfg.get("dtype", "float64")))
        return cls(cfg["widths"], theta, cfg["leaky_slope"], cfg["output_cap"], cfg.get("clip_bound"))


def n_params(widths: Sequence[int]) -> int:
    return sum((i + 1) * o for i, o in zip(widths[:-1], widths[1:]))


def init_params(
    dim: int,
    hidden: Sequence[int] = DEFAULT_HIDDEN,
    seed: int = 0,
    output_cap: float = DEFAULT_OUTPUT_CAP,
    leaky_slope: float = DEFAULT_LEAKY_SLOPE,
    clip_bound: float | None = None,
    dtype=np.float64,
) -> MlpParams:
    """He-style normal weights (scaled for the leaky slope), zero biases."""
    widths = (dim, *hidden, 1)
    rng = np.random.default_rng(seed)
    theta = np.zeros(n_params(widths), dtype=np.float64)
    params = MlpParams(widths, theta, leaky_slope, output_cap, clip_bound)
    gain = 2.0 / (1.0 + leaky_slope**2)
    for W in params.weights:
        W[:] = rng.normal(0.0, np.sqrt(gain / W.shape[0]), W.shape)
    params.clip()
    if np.dtype(dtype) != np.float64:
        params = MlpParams(widths, theta.astype(dtype), leaky_slope, output_cap, clip_bound)
    return params


def zeros_params(
    dim: int,
    hidden: Sequence[int] = DEFAULT_HIDDEN,
    output_cap: float = DEFAULT_OUTPUT_CAP,
    leaky_slope: float = DEFAULT_LEAKY_SLOPE,
    clip_bound: float | None = None,
    dtype=np.float64,
) -> MlpParams:
    widths = (dim, *hidden, 1)
    return MlpParams(widths, np.zeros(n_params(widths), dtype=dtype), leaky_slope, output_cap, clip_bound)


# ---------------------------------------------------------------------------
# Forward / backward
# ---------------------------------------------------------------------------


class BatchWorkspace:
    """Preallocated buffers for repeated forward/backward at a fixed batch size.

    The training loop calls this thousands of times; reusing buffers and
    accumulating bias gradients through a ones-vector matmul keeps the
    per-iteration cost low.  Activations are consumed during backward, so a
    backward call must follow its own forward call.
    """

    def __init__(self, params: MlpParams, batch_size: int):
        self.params = params
        self.B = int(batch_size)
        dt = params.dtype
        L = params.n_layers
        self.acts = [np.empty((self.B, w), dtype=dt) for w in params.widths]
        self.scale_tmp = [np.empty((self.B, w), dtype=dt) for w in params.widths[1:]]
        self.ones_row = np.ones((1, self.B), dtype=dt)
        self.sig = np.empty(self.B, dtype=dt)
        self.grad = np.zeros_like(params.theta)
        self.grad_views = MlpParams(params.widths, self.grad, params.leaky_slope, params.output_cap)
        self.zclip = _z_clip(dt)
        self._L = L

    def forward(self, X: np.ndarray) -> np.ndarray:
        """Thresholds for a (B, d) batch; caches activations for backward."""
        p = self.params
        if X.shape != (self.B, p.dim):
            raise ConfigurationError(f"workspace expects {(self.B, p.dim)} input, got {X.shape}")
        np.copyto(self.acts[0], X)
        a = self.acts[0]
        slope = p.dtype.type(p.leaky_slope)
        for i in range(self._L - 1):
            z = np.matmul(a, p.weights[i], out=self.acts[i + 1])
            z += p.biases[i]
            np.multiply(z, slope, out=self.scale_tmp[i])
            np.maximum(z, self.scale_tmp[i], out=z)
            a = z
        z = np.matmul(a, p.weights[-1], out=self.acts[-1])
        z += p.biases[-1]
        s = self.sig
        np.clip(z[:, 0], -self.zclip, self.zclip, out=s)
        np.exp(np.negative(s, out=s), out=s)
        s += p.dtype.type(1.0)
        np.reciprocal(s, out=s)
        return p.dtype.type(p.output_cap) * s

    def backward(self, upstream: np.ndarray) -> np.ndarray:
        """Parameter gradient of sum_i upstream_i * t_i; consumes cached activations."""
        p = self.params
        gv = self.grad_views
        dt = p.dtype
        s = self.sig
        # through the scaled logistic: dt/dz = cap * s * (1 - s)
        delta = (upstream.astype(dt, copy=False) * (dt.type(p.output_cap) * s * (dt.type(1.0) - s)))[:, None]
        np.matmul(self.acts[-2].T, delta, out=gv.weights[-1])
        np.matmul(self.ones_row, delta, out=gv.biases[-1][None, :])
        if self._L == 1:
            return self.grad
        da = np.matmul(delta, p.weights[-1].T, out=self.scale_tmp[self._L - 2])
        for i in range(self._L - 2, -1, -1):
            a_out = self.acts[i + 1]
            # LeakyReLU derivative recovered from the output sign (a >= 0 <=> z >= 0)
            np.multiply(a_out >= 0, dt.type(1.0 - p.leaky_slope), out=a_out)
            a_out += dt.type(p.leaky_slope)
            np.multiply(da, a_out, out=da)
            np.matmul(self.acts[i].T, da, out=gv.weights[i])
            np.matmul(self.ones_row, da, out=gv.biases[i][None, :])
            if i > 0:
                da = np.matmul(da, p.weights[i].T, out=self.scale_tmp[i - 1])
        return self.grad


def forward(params: MlpParams, features: np.ndarray) -> np.ndarray:
    """Thresholds in (0, output_cap) for an (n, d) feature matrix (or one vector)."""
    X = np.asarray(features, dtype=params.dtype)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    if X.shape[1] != params.dim:
        raise ConfigurationError(f"input dimension {X.shape[1]} != network input width {params.dim}")
    if not np.all(np.isfinite(X)):
        raise ValidationError("non-finite network input")
    ws = BatchWorkspace(params, X.shape[0])
    t = ws.forward(X).copy()
    return t[0] if single else t


def backward(params: MlpParams, features: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    """Gradient of sum_i upstream_i * t(x_i) w.r.t. the flat parameter vector."""
    X = np.atleast_2d(np.asarray(features, dtype=params.dtype))
    upstream = np.atleast_1d(np.asarray(upstream, dtype=params.dtype))
    if upstream.shape[0] != X.shape[0]:
        raise ConfigurationError("one upstream gradient per batch row required")
    ws = BatchWorkspace(params, X.shape[0])
    ws.forward(X)
    return ws.backward(upstream).copy()


# ---------------------------------------------------------------------------
# Adagrad
# ---------------------------------------------------------------------------


@dataclass
class AdagradState:
    """Per-parameter squared-gradient accumulator."""

    accum: np.ndarray
    lr: float = ADAGRAD_LR
    eps: float = ADAGRAD_EPS

    @classmethod
    def for_params(cls, params: MlpParams, lr: float = ADAGRAD_LR, eps: float = ADAGRAD_EPS):
        return cls(accum=np.zeros_like(params.theta), lr=lr, eps=eps)


def adagrad_step(params: MlpParams, state: AdagradState, grad: np.ndarray) -> tuple[MlpParams, AdagradState]:
    """In-place update: accum += g^2; theta -= lr * g / (sqrt(accum) + eps); clip."""
    state.accum += grad * grad
    params.theta -= state.lr * grad / (np.sqrt(state.accum) + state.eps)
    params.clip()
    return params, state


def fit_regression(
    params: MlpParams,
    features: np.ndarray,
    targets: np.ndarray,
    iters: int = 6000,
    seed: int = 0,
    batch_size: int | None = None,
    lr: float = ADAGRAD_LR,
) -> MlpParams:
    """Adagrad on mean squared error between the network output and targets.

    Targets must lie strictly inside (0, output_cap).  With batch_size None
    (or >= n) every step uses the full data, otherwise minibatches are drawn
    uniformly with replacement.
    """
    X = np.ascontiguousarray(features, dtype=params.dtype)
    y = np.asarray(targets, dtype=params.dtype)
    if np.any(y <= 0.0) or np.any(y >= params.output_cap):
        raise ValidationError("regression targets must lie strictly inside (0, output_cap)")
    n = X.shape[0]
    full_batch = batch_size is None or batch_size >= n
    B = n if full_batch else int(batch_size)
    ws = BatchWorkspace(params, B)
    state = AdagradState.for_params(params, lr=lr)
    rng = np.random.default_rng(seed)
    two_over_B = params.dtype.type(2.0 / B)
    for _ in range(iters):
        if full_batch:
            xb, yb = X, y
        else:
            idx = rng.integers(0, n, B)
            xb, yb = X[idx], y[idx]
        t = ws.forward(xb)
        grad = ws.backward(two_over_B * (t - yb))
        adagrad_step(params, state, grad)
    return params


class MlpRule(DecisionRule):
    """Decision rule backed by an immutable snapshot of network parameters."""

    def __init__(self, params: MlpParams):
        self.params = params
        self.t_cap = self._check_cap(params.output_cap)
        self.dim = params.dim

    def thresholds(self, features):
        return forward(self.params, np.asarray(features)).astype(np.float64)

    def to_config(self):
        return self.params.to_config()


register_rule_kind("mlp", lambda cfg: MlpRule(MlpParams.from_config(cfg)))
