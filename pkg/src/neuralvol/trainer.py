"""Training orchestration, progressive decoding, and model serialization.

The training loop is the sole parameter writer.  The optional per-batch tap
exists so a renderer can grow macro-cell value ranges from the very samples
the trainer already paid for.
"""
from __future__ import annotations

import csv
import json
import logging
import struct
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatError
from .model import NeuralModel, build_model
from .network import lr_at
from .volume import ScalarField, VolumeMeta

log = logging.getLogger(__name__)

MODEL_MAGIC = b"VNRM"
MODEL_VERSION = 1


@dataclass
class TrainHistory:
    steps: list[int] = field(default_factory=list)
    losses: list[float] = field(default_factory=list)
    lrs: list[float] = field(default_factory=list)
    wall_ms: list[float] = field(default_factory=list)

    def append(self, step: int, loss: float, lr: float, ms: float) -> None:
        if self.steps and step <= self.steps[-1]:
            raise ConfigError(f"history steps must increase: {step} after {self.steps[-1]}")
        self.steps.append(step)
        self.losses.append(loss)
        self.lrs.append(lr)
        self.wall_ms.append(ms)

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "loss", "lr", "ms"])
            for row in zip(self.steps, self.losses, self.lrs, self.wall_ms):
                w.writerow([row[0], f"{row[1]:.8g}", f"{row[2]:.8g}", f"{row[3]:.3f}"])

    @staticmethod
    def from_csv(path: str | Path) -> "TrainHistory":
        h = TrainHistory()
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                h.append(int(row["step"]), float(row["loss"]), float(row["lr"]), float(row["ms"]))
        return h


def train(model: NeuralModel, sampler, steps: int, tap=None, log_every: int = 0) -> TrainHistory:
    """Run `steps` optimization steps, drawing one batch per step from sampler."""
    if steps < 1:
        raise ConfigError(f"steps must be >= 1, got {steps}")
    history = TrainHistory()
    for _ in range(steps):
        t0 = time.perf_counter()
        step_index = model.opt.t
        batch = sampler.sample(model.batch_size)
        loss = model.train_step(batch)
        if tap is not None:
            tap(batch)
        ms = (time.perf_counter() - t0) * 1e3
        history.append(step_index, loss, lr_at(model.opt, step_index), ms)
        if log_every and (step_index + 1) % log_every == 0:
            log.info("step %d  loss %.6f  lr %.5g  %.1f ms", step_index + 1, loss, history.lrs[-1], ms)
    return history


def decode_slabs(model: NeuralModel, dims=None, slab_z: int = 16):
    """Yield (z0, slab) pairs of the decoded volume in ascending z."""
    if slab_z < 1:
        raise ConfigError("slab_z must be >= 1")
    dx, dy, dz = dims if dims is not None else model.dims
    lo, hi = model.value_range
    xs = (np.arange(dx, dtype=np.float32) + np.float32(0.5)) / np.float32(dx)
    ys = (np.arange(dy, dtype=np.float32) + np.float32(0.5)) / np.float32(dy)
    for z0 in range(0, dz, slab_z):
        nz = min(slab_z, dz - z0)
        zs = (np.arange(z0, z0 + nz, dtype=np.float32) + np.float32(0.5)) / np.float32(dz)
        gz, gy, gx = np.meshgrid(zs, ys, xs, indexing="ij")
        coords = np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1)
        vals = model.eval_batch(coords).astype(np.float64)
        slab = (vals * (hi - lo) + lo).astype(np.float32).reshape(nz, dy, dx)
        yield z0, slab


def decode(model: NeuralModel, dims=None, slab_z: int = 16) -> ScalarField:
    """Evaluate Phi at every voxel center and denormalize by value_range."""
    dims = tuple(dims if dims is not None else model.dims)
    out = np.empty((dims[2], dims[1], dims[0]), dtype=np.float32)
    for z0, slab in decode_slabs(model, dims, slab_z):
        out[z0 : z0 + slab.shape[0]] = slab
    lo, hi = model.value_range
    meta = VolumeMeta(dims=dims, dtype="f32", value_range=(lo, hi))
    return ScalarField(meta=meta, data=out)


def compression_ratio(model: NeuralModel, meta: VolumeMeta) -> float:
    """(source bytes) / (parameter bytes at f32)."""
    return (meta.voxel_count * meta.itemsize) / (model.n_params * 4.0)


# --------------------------------------------------------------------------
# Serialization: magic, version, config JSON, then one f32 blob.
# Blob order: encoder tables level-major/entry-major/feature-minor, then each
# MLP weight matrix row-major in layer order.

def _flatten_params(model: NeuralModel) -> np.ndarray:
    parts = [np.asarray(model.encoder.params, dtype="<f4").ravel()]
    parts += [np.asarray(w, dtype="<f4").ravel() for w in model.mlp.weights]
    return np.concatenate(parts)


def save_model(model: NeuralModel, path: str | Path) -> None:
    if model.dtype != np.float32:
        raise ConfigError("only float32 models serialize; rebuild with dtype=float32")
    cfg = model.config_json()
    cfg["dims"] = list(model.dims)
    cfg["value_range"] = [model.value_range[0], model.value_range[1]]
    cfg["n_params"] = model.n_params
    blob = _flatten_params(model)
    payload = json.dumps(cfg, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(struct.pack("<II", MODEL_VERSION, len(payload)))
        fh.write(payload)
        fh.write(blob.tobytes())


def load_model(path: str | Path) -> NeuralModel:
    raw = Path(path).read_bytes()
    if len(raw) < 12 or raw[:4] != MODEL_MAGIC:
        raise FormatError(f"{path}: bad magic; not a model file")
    version, jlen = struct.unpack("<II", raw[4:12])
    if version != MODEL_VERSION:
        raise FormatError(f"{path}: unsupported version {version} (expected {MODEL_VERSION})")
    if len(raw) < 12 + jlen:
        raise FormatError(f"{path}: truncated config (expected {jlen} bytes, found {len(raw) - 12})")
    try:
        cfg = json.loads(raw[12 : 12 + jlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: config block is not valid JSON ({exc})") from exc
    model = build_model(
        cfg,
        dims=tuple(cfg.get("dims", (2, 2, 2))),
        value_range=tuple(cfg.get("value_range", (0.0, 1.0))),
    )
    blob = np.frombuffer(raw[12 + jlen :], dtype="<f4")
    expected = model.n_params
    if "n_params" in cfg and cfg["n_params"] != expected:
        raise FormatError(f"{path}: header n_params {cfg['n_params']} != config-derived {expected}")
    if blob.size != expected:
        raise FormatError(f"{path}: parameter blob has {blob.size} floats, expected {expected}")
    k = model.encoder.n_params
    model.encoder.params[...] = blob[:k]
    pos = k
    for w in model.mlp.weights:
        w[...] = blob[pos : pos + w.size].reshape(w.shape)
        pos += w.size
    return model
