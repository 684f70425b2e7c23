"""Scikit-learn style regressor facade over the neural field engine.

`FieldRegressor` duck-types the estimator protocol (fit/predict/score,
get_params/set_params, trailing-underscore fitted attributes) without a
scikit-learn dependency, so it composes with `sklearn.base.clone`, pipelines,
and grid search when those are installed.  X rows are coordinates in the unit
cube; y holds the scalar values to regress.
"""
from __future__ import annotations

import inspect

import numpy as np

from .model import NeuralModel, build_model
from .network import lr_at
from .sampler import SampleBatch
from .trainer import TrainHistory, train

_ONE_BELOW = np.nextafter(np.float32(1.0), np.float32(0.0))


def validate_coords(X) -> np.ndarray:
    """(n, 3) float64 coordinates inside the unit cube (1.0 nudged inward)."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != 3:
        raise ValueError(f"X must be (n_samples, 3) coordinates, got shape {X.shape}")
    if not np.isfinite(X).all():
        raise ValueError("X contains NaN or infinity")
    if X.min() < 0.0 or X.max() > 1.0:
        raise ValueError("coordinates must lie in the unit cube [0, 1]^3")
    return X


def validate_targets(y, n: int) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    if y.ndim == 2 and y.shape[1] == 1:
        y = y[:, 0]
    if y.shape != (n,):
        raise ValueError(f"y must have shape ({n},), got {np.asarray(y).shape}")
    if not np.isfinite(y).all():
        raise ValueError("y contains NaN or infinity")
    return y


class _ArraySampler:
    """Batch source over an in-memory (coords, targets) dataset."""

    def __init__(self, coords: np.ndarray, targets: np.ndarray, seed: int):
        self.coords = coords
        self.targets = targets
        self.rng = np.random.default_rng(seed)

    def sample(self, b: int) -> SampleBatch:
        idx = self.rng.integers(0, self.coords.shape[0], size=b)
        return SampleBatch(self.coords[idx], self.targets[idx])


class FieldRegressor:
    """Coordinate-to-scalar regressor: multi-resolution feature encoding in
    front of a small ReLU MLP, trained with Adam.

    Defaults are sized for desk-scale point sets; raise n_levels,
    log2_hashmap_size, and n_steps for volumetric workloads.
    """

    def __init__(self, encoding: str = "hashgrid", n_levels: int = 8,
                 n_features_per_level: int = 2, log2_hashmap_size: int = 15,
                 base_resolution: int = 4, per_level_scale: float = 2.0,
                 n_frequencies: int = 32, n_bins: int = 64,
                 n_neurons: int = 32, n_hidden_layers: int = 2,
                 loss: str = "L1", n_steps: int = 500, batch_size: int = 8192,
                 seed: int = 0):
        self.encoding = encoding
        self.n_levels = n_levels
        self.n_features_per_level = n_features_per_level
        self.log2_hashmap_size = log2_hashmap_size
        self.base_resolution = base_resolution
        self.per_level_scale = per_level_scale
        self.n_frequencies = n_frequencies
        self.n_bins = n_bins
        self.n_neurons = n_neurons
        self.n_hidden_layers = n_hidden_layers
        self.loss = loss
        self.n_steps = n_steps
        self.batch_size = batch_size
        self.seed = seed

    # ------------------------------------------------------------ sklearn protocol

    @classmethod
    def _param_names(cls) -> list[str]:
        sig = inspect.signature(cls.__init__)
        return [p for p in sig.parameters if p != "self"]

    def get_params(self, deep: bool = True) -> dict:
        return {name: getattr(self, name) for name in self._param_names()}

    def set_params(self, **params) -> "FieldRegressor":
        valid = set(self._param_names())
        for name, value in params.items():
            if name not in valid:
                raise ValueError(
                    f"invalid parameter {name!r} for FieldRegressor; "
                    f"valid parameters are {sorted(valid)}"
                )
            setattr(self, name, value)
        return self

    def __repr__(self) -> str:
        defaults = {p.name: p.default for p in
                    inspect.signature(type(self).__init__).parameters.values()
                    if p.name != "self"}
        shown = {k: v for k, v in self.get_params().items() if v != defaults[k]}
        args = ", ".join(f"{k}={v!r}" for k, v in shown.items())
        return f"FieldRegressor({args})"

    # ------------------------------------------------------------------- training

    def _network_config(self) -> dict:
        otypes = {"identity": "Identity", "frequency": "Frequency",
                  "oneblob": "OneBlob", "densegrid": "DenseGrid",
                  "hashgrid": "HashGrid"}
        kind = str(self.encoding).lower()
        if kind not in otypes:
            raise ValueError(f"unknown encoding {self.encoding!r}; "
                             f"expected one of {sorted(otypes)}")
        return {
            "encoding": {
                "otype": otypes[kind],
                "n_levels": self.n_levels,
                "n_features_per_level": self.n_features_per_level,
                "log2_hashmap_size": self.log2_hashmap_size,
                "base_resolution": self.base_resolution,
                "per_level_scale": self.per_level_scale,
                "n_frequencies": self.n_frequencies,
                "n_bins": self.n_bins,
            },
            "network": {"n_neurons": self.n_neurons,
                        "n_hidden_layers": self.n_hidden_layers},
            "loss": {"otype": self.loss},
            "batch_size": int(self.batch_size),
        }

    def _prepare(self, X, y):
        X = validate_coords(X)
        y = validate_targets(y, X.shape[0])
        coords = np.minimum(X, _ONE_BELOW).astype(np.float32)
        lo, hi = float(y.min()), float(y.max())
        if hi <= lo:
            hi = lo + 1.0  # constant targets still need a nonzero scale
        targets = ((y - lo) / (hi - lo)).astype(np.float32)
        return coords, targets, (lo, hi)

    def fit(self, X, y) -> "FieldRegressor":
        """Train a fresh model on coordinate/value pairs."""
        coords, targets, vrange = self._prepare(X, y)
        if self.n_steps < 1:
            raise ValueError(f"n_steps must be >= 1, got {self.n_steps}")
        self.model_ = build_model(self._network_config(), value_range=vrange,
                                  seed=self.seed)
        self.value_range_ = vrange
        self.n_features_in_ = 3
        sampler = _ArraySampler(coords, targets, seed=self.seed + 1)
        self.history_ = train(self.model_, sampler, steps=int(self.n_steps))
        return self

    def partial_fit(self, X, y) -> "FieldRegressor":
        """One optimizer step on the given batch; initializes on first call.

        The value scale is frozen by whichever call sees data first, so feed
        a representative batch (or call fit) before streaming increments.
        """
        coords, targets, vrange = self._prepare(X, y)
        if not hasattr(self, "model_"):
            self.model_ = build_model(self._network_config(), value_range=vrange,
                                      seed=self.seed)
            self.value_range_ = vrange
            self.n_features_in_ = 3
            self.history_ = TrainHistory()
        else:
            lo, hi = self.value_range_
            targets = ((np.asarray(y, dtype=np.float64).ravel() - lo)
                       / (hi - lo)).astype(np.float32)
        b = min(int(self.batch_size), coords.shape[0])
        step = self.model_.opt.t
        loss = self.model_.train_step(SampleBatch(coords[:b], targets[:b]))
        self.history_.append(step, loss, lr_at(self.model_.opt, step), 0.0)
        return self

    # ------------------------------------------------------------------ inference

    def _check_fitted(self) -> NeuralModel:
        if not hasattr(self, "model_"):
            raise ValueError("this FieldRegressor instance is not fitted yet; "
                             "call fit before using predict or score")
        return self.model_

    def predict(self, X) -> np.ndarray:
        model = self._check_fitted()
        X = validate_coords(X)
        coords = np.minimum(X, _ONE_BELOW).astype(model.dtype)
        pred = model.eval_fused(coords).astype(np.float64)
        lo, hi = self.value_range_
        return lo + pred * (hi - lo)

    def score(self, X, y) -> float:
        """Coefficient of determination R^2 of self.predict(X) against y."""
        y = validate_targets(y, np.asarray(X).shape[0])
        pred = self.predict(X)
        ss_res = float(((y - pred) ** 2).sum())
        ss_tot = float(((y - y.mean()) ** 2).sum())
        if ss_tot == 0.0:
            return 1.0 if ss_res == 0.0 else 0.0
        return 1.0 - ss_res / ss_tot
