"""Bias-free ReLU MLP with hand-rolled backprop, L1/L2 losses, and Adam.

The parameter update implements Adam with uniform L2 regularization and an
exponentially decaying learning rate:

    lr(t) = base_lr * decay_base ** floor(max(0, t - decay_start) / decay_interval)

Parameters and activations are float32 in production models; gradient-check
builds run the identical code in float64.  Loss reductions always accumulate
in float64.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

ALLOWED_NEURONS = (16, 32, 64, 128)


@dataclass(frozen=True)
class MlpConfig:
    input_width: int
    n_neurons: int = 64
    n_hidden_layers: int = 4
    output_activation: str = "relu"
    output_width: int = 1

    def __post_init__(self) -> None:
        if self.n_neurons not in ALLOWED_NEURONS:
            raise ConfigError(f"n_neurons must be one of {ALLOWED_NEURONS}, got {self.n_neurons}")
        if self.n_hidden_layers < 1:
            raise ConfigError("n_hidden_layers must be >= 1")
        if self.output_activation not in ("none", "relu"):
            raise ConfigError(f"output_activation must be 'none' or 'relu', got {self.output_activation!r}")
        if self.input_width < 1 or self.output_width < 1:
            raise ConfigError("input_width and output_width must be >= 1")


class Mlp:
    """Weight matrices W_i (out x in, row-major), widths N -> n_neurons^h -> 1."""

    def __init__(self, config: MlpConfig, dtype=np.float32, rng: np.random.Generator | None = None):
        self.config = config
        self.dtype = np.dtype(dtype)
        rng = rng if rng is not None else np.random.default_rng(0)
        widths = [config.input_width] + [config.n_neurons] * config.n_hidden_layers + [config.output_width]
        self.weights: list[np.ndarray] = []
        for fan_in, fan_out in zip(widths[:-1], widths[1:]):
            bound = math.sqrt(6.0 / fan_in)  # Kaiming-uniform
            self.weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)).astype(self.dtype))
        self.grads = [np.zeros_like(w) for w in self.weights]

    @property
    def n_params(self) -> int:
        return sum(int(w.size) for w in self.weights)

    def forward(self, x: np.ndarray):
        """Returns (outputs (B,), cache of layer activations for backward)."""
        x = np.asarray(x, dtype=self.dtype)
        if x.ndim != 2 or x.shape[1] != self.config.input_width:
            raise ConfigError(f"input width {x.shape} does not match configured {self.config.input_width}")
        acts = [x]
        h = x
        last = len(self.weights) - 1
        for i, w in enumerate(self.weights):
            h = h @ w.T
            if i < last or self.config.output_activation == "relu":
                h = np.maximum(h, 0)
            acts.append(h)
        return h[:, 0] if self.config.output_width == 1 else h, acts

    def backward(self, cache: list[np.ndarray], dl_dout: np.ndarray) -> np.ndarray:
        """Fills self.grads (accumulating) and returns dL/dinput (B, N)."""
        if len(cache) != len(self.weights) + 1:
            raise ConfigError("stale or mismatched forward cache")
        d = np.asarray(dl_dout, dtype=self.dtype)
        if d.ndim == 1:
            d = d[:, None]
        if d.shape[0] != cache[0].shape[0]:
            raise ConfigError("stale forward cache: batch size mismatch")
        last = len(self.weights) - 1
        for i in range(last, -1, -1):
            act_applied = i < last or self.config.output_activation == "relu"
            if act_applied:
                d = d * (cache[i + 1] > 0)
            self.grads[i] += d.T @ cache[i]
            if i > 0:
                d = d @ self.weights[i]
        return d @ self.weights[0]


def loss_and_grad(pred: np.ndarray, target: np.ndarray, kind: str):
    """(scalar loss, dL/dpred).  L1 subgradient at a tie is 0."""
    pred = np.asarray(pred)
    target = np.asarray(target)
    if pred.shape != target.shape:
        raise ConfigError(f"pred/target shapes differ: {pred.shape} vs {target.shape}")
    b = pred.shape[0]
    if b == 0:
        raise ConfigError("empty batch")
    diff = pred.astype(np.float64) - target.astype(np.float64)
    if kind == "L1":
        loss = float(np.mean(np.abs(diff)))
        grad = np.sign(diff) / b
    elif kind == "L2":
        loss = float(np.mean(diff * diff))
        grad = 2.0 * diff / b
    else:
        raise ConfigError(f"unknown loss kind {kind!r}; expected 'L1' or 'L2'")
    return loss, grad.astype(pred.dtype)


@dataclass
class OptimizerState:
    base_lr: float = 0.005
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-15
    l2_reg: float = 1e-6
    decay_start: int = 2000
    decay_interval: int = 1000
    decay_base: float = 0.99
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def ensure_moments(self, params: list[np.ndarray]) -> None:
        if not self.m:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]

    def to_json(self) -> dict:
        return {
            "otype": "ExponentialDecay",
            "decay_start": self.decay_start,
            "decay_interval": self.decay_interval,
            "decay_base": self.decay_base,
            "nested": {
                "otype": "Adam",
                "learning_rate": self.base_lr,
                "beta1": self.beta1,
                "beta2": self.beta2,
                "epsilon": self.epsilon,
                "l2_reg": self.l2_reg,
            },
        }


def lr_at(opt: OptimizerState, t: int) -> float:
    if t < 0:
        raise ConfigError("step must be >= 0")
    intervals = max(0, t - opt.decay_start) // opt.decay_interval
    return opt.base_lr * opt.decay_base ** intervals


def adam_step(opt: OptimizerState, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
    """One Adam update over all parameter groups; zeroes grads; advances t."""
    opt.ensure_moments(params)
    lr = lr_at(opt, opt.t)
    step = opt.t + 1  # bias correction counts from 1
    c1 = 1.0 - opt.beta1 ** step
    c2 = 1.0 - opt.beta2 ** step
    for gi, (p, g) in enumerate(zip(params, grads)):
        bad = np.isnan(g)
        if bad.any():
            j = int(np.flatnonzero(bad.ravel())[0])
            raise FloatingPointError(f"NaN gradient in parameter group {gi} at flat index {j}")
        dt = p.dtype.type
        geff = g + dt(opt.l2_reg) * p
        m, v = opt.m[gi], opt.v[gi]
        m *= dt(opt.beta1)
        m += dt(1.0 - opt.beta1) * geff
        v *= dt(opt.beta2)
        v += dt(1.0 - opt.beta2) * (geff * geff)
        mhat = m / dt(c1)
        vhat = v / dt(c2)
        p -= dt(lr) * mhat / (np.sqrt(vhat) + dt(opt.epsilon))
        g[...] = 0
    opt.t += 1
