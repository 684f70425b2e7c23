"""Input encoders: identity, frequency, one-blob, dense grid, multi-resolution hash grid.

An encoder maps a normalized coordinate in [0,1)^3 to a feature vector.  Grid
encoders carry trainable per-vertex features and provide a parameter-gradient
backward pass; the other kinds are fixed functions of the input.

All grid math here is dtype-parametric: float32 for production models,
float64 for finite-difference gradient verification.  A fused float32 fast
path for training lives in _kernels and is checked against this reference.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError

# Spatial hash primes; x is multiplied by 1 so the three axes stay symmetric
# in form.  Arithmetic wraps modulo 2^32.
HASH_PRIMES = (1, 2654435761, 805459861)

GRID_KINDS = ("densegrid", "hashgrid")
KINDS = ("identity", "frequency", "oneblob") + GRID_KINDS

FEATURE_INIT_SCALE = 1e-4  # uniform init range for grid features


@dataclass(frozen=True)
class EncoderConfig:
    kind: str = "hashgrid"
    n_levels: int = 8
    n_features_per_level: int = 4
    log2_hashmap_size: int = 15
    base_resolution: int = 4
    per_level_scale: float = 2.0
    n_frequencies: int = 32
    n_bins: int = 64

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ConfigError(f"unknown encoder kind {self.kind!r}; expected one of {KINDS}")
        if self.kind in GRID_KINDS:
            if self.n_levels < 1:
                raise ConfigError("grid encoders require n_levels >= 1")
            if self.n_features_per_level not in (1, 2, 4, 8):
                raise ConfigError(f"n_features_per_level must be in {{1,2,4,8}}, got {self.n_features_per_level}")
            if not 10 <= self.log2_hashmap_size <= 24:
                raise ConfigError(f"log2_hashmap_size must lie in [10,24], got {self.log2_hashmap_size}")
            if self.base_resolution < 1:
                raise ConfigError("base_resolution must be >= 1")
            if self.per_level_scale <= 0:
                raise ConfigError("per_level_scale must be > 0")
        if self.kind == "frequency" and self.n_frequencies < 1:
            raise ConfigError("frequency encoder requires n_frequencies >= 1")
        if self.kind == "oneblob" and self.n_bins < 1:
            raise ConfigError("oneblob encoder requires n_bins >= 1")

    @property
    def out_width(self) -> int:
        if self.kind == "identity":
            return 3
        if self.kind == "frequency":
            return 6 * self.n_frequencies
        if self.kind == "oneblob":
            return 3 * self.n_bins
        return self.n_features_per_level * self.n_levels


def level_resolution(config: EncoderConfig, level: int) -> int:
    """R_l = floor(base_resolution * per_level_scale^level)."""
    if not 0 <= level < config.n_levels:
        raise ConfigError(f"level {level} out of range [0, {config.n_levels})")
    return int(math.floor(config.base_resolution * config.per_level_scale ** level))


def _check_coords(p: np.ndarray) -> np.ndarray:
    p = np.atleast_2d(np.asarray(p))
    if p.ndim != 2 or p.shape[1] != 3:
        raise ConfigError(f"coordinates must be (B,3), got shape {p.shape}")
    if np.isnan(p).any():
        raise ConfigError("encode input contains NaN")
    return p


class Encoder:
    """Base: fixed-function encoders hold no parameters."""

    def __init__(self, config: EncoderConfig, dtype=np.float32):
        self.config = config
        self.dtype = np.dtype(dtype)
        self.params = np.zeros(0, dtype=self.dtype)
        self.param_grads = np.zeros(0, dtype=self.dtype)

    @property
    def out_width(self) -> int:
        return self.config.out_width

    @property
    def n_params(self) -> int:
        return int(self.params.size)

    def encode(self, p: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def encode_backward(self, p: np.ndarray, dl_dfeat: np.ndarray) -> None:
        # Non-parametric kinds: nothing to accumulate.
        _check_coords(p)


class IdentityEncoder(Encoder):
    def encode(self, p: np.ndarray) -> np.ndarray:
        return _check_coords(p).astype(self.dtype)


class FrequencyEncoder(Encoder):
    """[sin(2^k pi p_a), cos(2^k pi p_a)] for each axis a and k < n_frequencies."""

    def encode(self, p: np.ndarray) -> np.ndarray:
        p = _check_coords(p).astype(np.float64)
        f = self.config.n_frequencies
        freqs = (2.0 ** np.arange(f)) * np.pi  # (F,)
        # (B, 3, F) phase grid; layout: axis-major, frequency, then sin|cos.
        phase = p[:, :, None] * freqs[None, None, :]
        out = np.empty((p.shape[0], 3, f, 2), dtype=np.float64)
        out[..., 0] = np.sin(phase)
        out[..., 1] = np.cos(phase)
        return out.reshape(p.shape[0], 6 * f).astype(self.dtype)


class OneBlobEncoder(Encoder):
    """Per axis, n_bins unnormalized Gaussian activations, sigma = 1/n_bins."""

    def encode(self, p: np.ndarray) -> np.ndarray:
        p = _check_coords(p).astype(np.float64)
        nb = self.config.n_bins
        centers = (np.arange(nb) + 0.5) / nb
        sigma = 1.0 / nb
        d = p[:, :, None] - centers[None, None, :]
        out = np.exp(-(d * d) / (2.0 * sigma * sigma))
        return out.reshape(p.shape[0], 3 * nb).astype(self.dtype)


class GridEncoder(Encoder):
    """Dense or hashed multi-resolution feature grids with trilinear blending.

    Parameter layout is flat and level-major: level l's table starts at
    level_offsets[l] (in elements), each entry holding n consecutive features.
    This is also the order of the serialized model blob.
    """

    def __init__(self, config: EncoderConfig, dtype=np.float32, rng: np.random.Generator | None = None):
        super().__init__(config, dtype)
        n = config.n_features_per_level
        table_size = 1 << config.log2_hashmap_size
        self.level_resolutions = np.array(
            [level_resolution(config, l) for l in range(config.n_levels)], dtype=np.int64
        )
        dense_sizes = (self.level_resolutions + 1) ** 3
        if config.kind == "densegrid":
            self.level_entries = dense_sizes.copy()
        else:
            self.level_entries = np.minimum(dense_sizes, table_size)
        self.level_offsets = np.concatenate([[0], np.cumsum(self.level_entries * n)])[:-1].astype(np.int64)
        total = int((self.level_entries * n).sum())
        rng = rng if rng is not None else np.random.default_rng(0)
        self.params = rng.uniform(-FEATURE_INIT_SCALE, FEATURE_INIT_SCALE, size=total).astype(self.dtype)
        self.param_grads = np.zeros(total, dtype=self.dtype)

    def _level_dense(self, l: int) -> bool:
        return bool((self.level_resolutions[l] + 1) ** 3 <= self.level_entries[l])

    def kernel_tables(self):
        """Level tables in the layout the numba kernels expect."""
        dense = np.array([self._level_dense(l) for l in range(self.config.n_levels)], dtype=np.uint8)
        return self.level_resolutions, self.level_entries, dense, self.level_offsets

    def _corners(self, p: np.ndarray, l: int):
        """Per-level cell decomposition: (slot indices (B,8), weights (B,8))."""
        R = int(self.level_resolutions[l])
        s = p.astype(self.dtype) * self.dtype.type(R)
        cell = np.minimum(np.floor(s), self.dtype.type(R - 1)).astype(np.int64)
        cell = np.maximum(cell, 0)
        fr = s - cell.astype(self.dtype)
        idx = np.empty((p.shape[0], 8), dtype=np.int64)
        w = np.empty((p.shape[0], 8), dtype=self.dtype)
        entries = int(self.level_entries[l])
        dense = self._level_dense(l)
        for c in range(8):
            ox, oy, oz = (c >> 0) & 1, (c >> 1) & 1, (c >> 2) & 1
            vx = cell[:, 0] + ox
            vy = cell[:, 1] + oy
            vz = cell[:, 2] + oz
            idx[:, c] = hash_index_many(entries, R, vx, vy, vz, dense)
            w[:, c] = (
                (fr[:, 0] if ox else 1 - fr[:, 0])
                * (fr[:, 1] if oy else 1 - fr[:, 1])
                * (fr[:, 2] if oz else 1 - fr[:, 2])
            )
        return idx, w

    def encode(self, p: np.ndarray) -> np.ndarray:
        p = _check_coords(p)
        n = self.config.n_features_per_level
        out = np.zeros((p.shape[0], self.out_width), dtype=self.dtype)
        for l in range(self.config.n_levels):
            idx, w = self._corners(p, l)
            table = self.params[self.level_offsets[l] : self.level_offsets[l] + self.level_entries[l] * n]
            table = table.reshape(-1, n)
            feats = np.einsum("bc,bcf->bf", w, table[idx])
            out[:, l * n : (l + 1) * n] = feats.astype(self.dtype)
        return out

    def encode_backward(self, p: np.ndarray, dl_dfeat: np.ndarray) -> None:
        p = _check_coords(p)
        n = self.config.n_features_per_level
        if dl_dfeat.shape != (p.shape[0], self.out_width):
            raise ConfigError(f"gradient shape {dl_dfeat.shape} does not match ({p.shape[0]}, {self.out_width})")
        for l in range(self.config.n_levels):
            idx, w = self._corners(p, l)
            g = dl_dfeat[:, l * n : (l + 1) * n].astype(self.dtype)
            view = self.param_grads[self.level_offsets[l] : self.level_offsets[l] + self.level_entries[l] * n]
            view = view.reshape(-1, n)
            for c in range(8):
                np.add.at(view, idx[:, c], w[:, c, None] * g)


def hash_index(level_entries: int, resolution: int, vertex, dense: bool | None = None) -> int:
    """Slot of one lattice vertex: dense row-major if the lattice fits, else XOR-prime hash."""
    vx, vy, vz = (np.int64(v) for v in vertex)
    if dense is None:
        dense = (resolution + 1) ** 3 <= level_entries
    return int(hash_index_many(level_entries, resolution, vx, vy, vz, dense))


def hash_index_many(level_entries: int, resolution: int, vx, vy, vz, dense: bool) -> np.ndarray:
    if dense:
        r1 = np.int64(resolution + 1)
        return (np.asarray(vz, dtype=np.int64) * r1 + np.asarray(vy, dtype=np.int64)) * r1 + np.asarray(
            vx, dtype=np.int64
        )
    hx = np.asarray(vx, dtype=np.uint64).astype(np.uint32) * np.uint32(HASH_PRIMES[0])
    hy = np.asarray(vy, dtype=np.uint64).astype(np.uint32) * np.uint32(HASH_PRIMES[1])
    hz = np.asarray(vz, dtype=np.uint64).astype(np.uint32) * np.uint32(HASH_PRIMES[2])
    return ((hx ^ hy ^ hz) % np.uint32(level_entries)).astype(np.int64)


def corner_weights(fr: np.ndarray) -> np.ndarray:
    """The 8 trilinear weights for fractional offsets fr (B,3); rows sum to 1."""
    fr = np.atleast_2d(fr)
    w = np.empty((fr.shape[0], 8), dtype=fr.dtype)
    for c in range(8):
        ox, oy, oz = (c >> 0) & 1, (c >> 1) & 1, (c >> 2) & 1
        w[:, c] = (
            (fr[:, 0] if ox else 1 - fr[:, 0])
            * (fr[:, 1] if oy else 1 - fr[:, 1])
            * (fr[:, 2] if oz else 1 - fr[:, 2])
        )
    return w


def make_encoder(config: EncoderConfig, dtype=np.float32, rng: np.random.Generator | None = None) -> Encoder:
    if config.kind == "identity":
        return IdentityEncoder(config, dtype)
    if config.kind == "frequency":
        return FrequencyEncoder(config, dtype)
    if config.kind == "oneblob":
        return OneBlobEncoder(config, dtype)
    return GridEncoder(config, dtype, rng)


def encode(encoder: Encoder, p) -> np.ndarray:
    """Feature vector(s) for p; accepts one coordinate (3,) or a batch (B,3)."""
    arr = np.asarray(p)
    single = arr.ndim == 1
    out = encoder.encode(arr if not single else arr[None, :])
    return out[0] if single else out


def encode_backward(encoder: Encoder, p, dl_dfeat) -> None:
    arr = np.asarray(p)
    g = np.asarray(dl_dfeat)
    if arr.ndim == 1:
        arr = arr[None, :]
        g = g[None, :]
    encoder.encode_backward(arr, g)
