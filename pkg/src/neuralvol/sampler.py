"""Training-batch generation: in-core, analytic, and out-of-core block-buffered.

The out-of-core path keeps R randomly chosen blocks of the volume resident
(default interior 24^3 voxels, ~70KB per payload with the ghost layer) and
refreshes S of them per step.  Refresh I/O runs on background workers but the
buffer joins them before the next batch is drawn, so sampling never observes
a half-written slot.  Ghost voxels let block-local interpolation reproduce
the full-volume trilinear read bit for bit.
"""
from __future__ import annotations

import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatError
from .volume import DTYPES, ScalarField, VolumeMeta, sample_trilinear_many

log = logging.getLogger(__name__)

_ONE_BELOW_1 = np.nextafter(np.float32(1.0), np.float32(0.0))

DEFAULT_BLOCK_DIMS = (24, 24, 24)
DEFAULT_R = 65536
DEFAULT_S = 1024


@dataclass(frozen=True)
class SampleBatch:
    """Parallel arrays: B normalized coordinates and B normalized targets."""

    coords: np.ndarray  # (B, 3) float32 in [0,1)
    targets: np.ndarray  # (B,) float32 in [0,1]

    def __post_init__(self) -> None:
        if self.coords.ndim != 2 or self.coords.shape[1] != 3 or self.targets.shape != (self.coords.shape[0],):
            raise ConfigError(
                f"batch arrays misshaped: coords {self.coords.shape}, targets {self.targets.shape}"
            )
        if self.coords.size and not (self.coords.min() >= 0.0 and self.coords.max() < 1.0):
            raise ConfigError("coordinates must lie in [0,1)")
        if self.targets.size and not (self.targets.min() >= 0.0 and self.targets.max() <= 1.0):
            raise ConfigError("targets must lie in [0,1]")

    def __len__(self) -> int:
        return self.coords.shape[0]


def _uniform_coords(b: int, rng: np.random.Generator) -> np.ndarray:
    return rng.random((b, 3), dtype=np.float32)


def _nearest_targets(field: ScalarField, coords: np.ndarray) -> np.ndarray:
    dims = np.array(field.meta.dims, dtype=np.int64)
    idx = np.minimum((coords * dims.astype(np.float32)).astype(np.int64), dims - 1)
    return field.normalized[idx[:, 2], idx[:, 1], idx[:, 0]]


def sample_incore(field: ScalarField, b: int, rng: np.random.Generator,
                  interpolation: str = "trilinear") -> SampleBatch:
    """B i.i.d. uniform coordinates with interpolated (or nearest) targets."""
    if b < 1:
        raise ConfigError("batch size must be >= 1")
    coords = _uniform_coords(b, rng)
    if interpolation == "nearest":
        targets = _nearest_targets(field, coords)
    else:
        targets = sample_trilinear_many(field, coords)
    return SampleBatch(coords=coords, targets=np.clip(targets, 0.0, 1.0))


def sample_analytic(fn, b: int, rng: np.random.Generator) -> SampleBatch:
    """Targets from an analytic field fn(p)->[0,1], clamped."""
    if b < 1:
        raise ConfigError("batch size must be >= 1")
    coords = _uniform_coords(b, rng)
    targets = np.clip(np.asarray(fn(coords), dtype=np.float64), 0.0, 1.0).astype(np.float32)
    return SampleBatch(coords=coords, targets=targets)


class BlockBuffer:
    """R resident blocks of a disk-backed volume, refreshed S per step.

    Payloads are stored normalized (float32) with a one-voxel ghost border,
    border rows replicated at the volume boundary, so block-local reads use
    exactly the in-core clamped-trilinear arithmetic.
    """

    def __init__(
        self,
        sidecar: str | Path,
        r: int = DEFAULT_R,
        s: int = DEFAULT_S,
        rng: np.random.Generator | None = None,
        block_dims: tuple[int, int, int] = DEFAULT_BLOCK_DIMS,
        io_workers: int = 4,
    ):
        if r < 1:
            raise ConfigError(f"block count R must be >= 1, got {r}")
        if not 0 <= s <= r:
            raise ConfigError(f"refresh count S must satisfy 0 <= S <= R, got S={s}, R={r}")
        sidecar = Path(sidecar)
        meta_obj = json.loads(sidecar.read_text())
        self.meta = VolumeMeta.from_json(meta_obj)
        if self.meta.value_range is None:
            raise ConfigError("out-of-core source sidecar must carry value_range (no full pre-pass on disk data)")
        self.path = sidecar.parent / meta_obj.get("path", sidecar.stem + ".raw")
        need = self.meta.voxel_count * self.meta.itemsize
        if self.path.stat().st_size < need:
            raise FormatError(f"{self.path}: expected at least {need} bytes for dims {self.meta.dims}")
        self.r = int(r)
        self.s = int(s)
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.block_dims = tuple(int(x) for x in block_dims)
        dims = self.meta.dims
        # Block-grid-aligned origins: ceil(D/bd) blocks per axis.
        self.grid_dims = tuple(-(-dims[a] // self.block_dims[a]) for a in range(3))
        pd = tuple(min(self.block_dims[a], dims[a]) + 2 for a in range(3))
        self.payloads = np.zeros((self.r, pd[2], pd[1], pd[0]), dtype=np.float32)
        self.origins = np.zeros((self.r, 3), dtype=np.int64)
        self.interiors = np.zeros((self.r, 3), dtype=np.int64)
        self.generations = np.zeros(self.r, dtype=np.int64)
        self._fd = os.open(self.path, os.O_RDONLY)
        self._pool = ThreadPoolExecutor(max_workers=io_workers)
        self._pending: list = []
        # First fill: all R slots, synchronously visible before first sample.
        for slot in range(self.r):
            origin = self._random_origin()
            try:
                payload, interior = self._load_block(origin)
            except OSError as exc:
                raise FormatError(f"block load failed for slot {slot} at origin {tuple(origin)}: {exc}") from exc
            self._store(slot, origin, payload, interior)

    # ------------------------------------------------------------------ I/O

    def _random_origin(self) -> np.ndarray:
        g = np.array([self.rng.integers(0, self.grid_dims[a]) for a in range(3)], dtype=np.int64)
        return g * np.array(self.block_dims, dtype=np.int64)

    def _load_block(self, origin: np.ndarray):
        """Positioned reads of the block region plus clamped ghost layer."""
        dx, dy, dz = self.meta.dims
        bd = self.block_dims
        interior = np.array(
            [min(bd[a], self.meta.dims[a] - int(origin[a])) for a in range(3)], dtype=np.int64
        )
        gx = np.clip(np.arange(origin[0] - 1, origin[0] + interior[0] + 1), 0, dx - 1)
        gy = np.clip(np.arange(origin[1] - 1, origin[1] + interior[1] + 1), 0, dy - 1)
        gz = np.clip(np.arange(origin[2] - 1, origin[2] + interior[2] + 1), 0, dz - 1)
        dt = DTYPES[self.meta.dtype]
        isz = dt.itemsize
        y0, y1 = int(gy[0]), int(gy[-1])
        ny = y1 - y0 + 1
        rows = np.empty((len(gz), ny, dx), dtype=dt)
        for k, z in enumerate(gz):
            off = ((int(z) * dy + y0) * dx) * isz
            buf = os.pread(self._fd, ny * dx * isz, off)
            if len(buf) != ny * dx * isz:
                raise OSError(f"short read at offset {off}")
            rows[k] = np.frombuffer(buf, dtype=dt).reshape(ny, dx)
        region = rows[:, gy - y0, :][:, :, gx]
        lo, hi = self.meta.value_range
        norm = np.clip((region.astype(np.float64) - lo) / (hi - lo), 0.0, 1.0).astype(np.float32)
        return norm, interior

    def _store(self, slot: int, origin, payload: np.ndarray, interior) -> None:
        pz, py, px = payload.shape
        self.payloads[slot, :pz, :py, :px] = payload
        self.origins[slot] = origin
        self.interiors[slot] = interior
        self.generations[slot] += 1

    # ------------------------------------------------------------------ refresh

    def refresh(self) -> None:
        """Queue S slot replacements; overlaps compute until join()."""
        picks = self.rng.choice(self.r, size=self.s, replace=False) if self.s else []
        for slot in picks:
            origin = self._random_origin()
            self._pending.append((int(slot), origin, self._pool.submit(self._load_block, origin)))

    def join(self) -> None:
        """Synchronization barrier: land all queued refreshes (single writer)."""
        for slot, origin, fut in self._pending:
            try:
                payload, interior = fut.result()
            except OSError as exc:
                log.warning("block refresh failed for slot %d at %s: %s; keeping previous contents",
                            slot, tuple(origin), exc)
                continue
            self._store(slot, origin, payload, interior)
        self._pending = []

    def close(self) -> None:
        self.join()
        self._pool.shutdown(wait=True)
        os.close(self._fd)

    # ------------------------------------------------------------------ sampling

    def sample(self, b: int, rng: np.random.Generator, interpolation: str = "trilinear") -> SampleBatch:
        """Uniform block -> uniform interior voxel -> half-voxel jitter."""
        if b < 1:
            raise ConfigError("batch size must be >= 1")
        if self._pending:
            raise RuntimeError("sample_outofcore called before refresh barrier; call join() first")
        dims_f = np.array(self.meta.dims, dtype=np.float32)
        slots = rng.integers(0, self.r, size=b)
        interior = self.interiors[slots].astype(np.float32)
        voxel = np.minimum((rng.random((b, 3), dtype=np.float32) * interior).astype(np.int64),
                           self.interiors[slots] - 1)
        jitter = rng.random((b, 3), dtype=np.float32) - np.float32(0.5)
        centers = self.origins[slots].astype(np.float32) + voxel.astype(np.float32) + np.float32(0.5)
        coords = np.clip((centers + jitter) / dims_f, 0.0, _ONE_BELOW_1).astype(np.float32)
        if interpolation == "nearest":
            lx = voxel[:, 0] + 1
            ly = voxel[:, 1] + 1
            lz = voxel[:, 2] + 1
            targets = self.payloads[slots, lz, ly, lx]
        else:
            # Global trilinear decomposition, then translate indices into payloads.
            s = coords * dims_f - np.float32(0.5)
            i0 = np.floor(s).astype(np.int64)
            fr = s - i0.astype(np.float32)
            hi = np.array(self.meta.dims, dtype=np.int64) - 1
            targets = np.zeros(b, dtype=np.float32)
            base = self.origins[slots] - 1  # payload index 0 is global origin-1
            for c in range(8):
                off = np.array([(c >> 0) & 1, (c >> 1) & 1, (c >> 2) & 1], dtype=np.int64)
                gidx = np.clip(i0 + off, 0, hi)
                lidx = gidx - base
                w = np.ones(b, dtype=np.float32)
                for a in range(3):
                    w = w * (fr[:, a] if off[a] else np.float32(1.0) - fr[:, a])
                targets += w * self.payloads[slots, lidx[:, 2], lidx[:, 1], lidx[:, 0]]
        return SampleBatch(coords=coords, targets=np.clip(targets, 0.0, 1.0))


def blockbuffer_init(sidecar, r: int, s: int, rng: np.random.Generator, **kw) -> BlockBuffer:
    return BlockBuffer(sidecar, r=r, s=s, rng=rng, **kw)


def blockbuffer_refresh(buf: BlockBuffer) -> None:
    buf.refresh()
    buf.join()


def sample_outofcore(buf: BlockBuffer, b: int, rng: np.random.Generator,
                     interpolation: str = "trilinear") -> SampleBatch:
    buf.join()
    return buf.sample(b, rng, interpolation)


# --------------------------------------------------------------------------
# Sampler objects consumed by the training loop

class InCoreSampler:
    def __init__(self, field: ScalarField, seed: int = 0, interpolation: str = "trilinear"):
        self.field = field
        self.rng = np.random.default_rng(seed)
        self.interpolation = interpolation

    def sample(self, b: int) -> SampleBatch:
        return sample_incore(self.field, b, self.rng, self.interpolation)


class AnalyticSampler:
    def __init__(self, fn, seed: int = 0):
        self.fn = fn
        self.rng = np.random.default_rng(seed)

    def sample(self, b: int) -> SampleBatch:
        return sample_analytic(self.fn, b, self.rng)


class OutOfCoreSampler:
    """Joins the pending refresh, draws a batch, then kicks off the next refresh."""

    def __init__(self, buf: BlockBuffer, seed: int = 0, interpolation: str = "trilinear"):
        self.buf = buf
        self.rng = np.random.default_rng(seed)
        self.interpolation = interpolation

    def sample(self, b: int) -> SampleBatch:
        self.buf.join()
        batch = self.buf.sample(b, self.rng, self.interpolation)
        self.buf.refresh()
        return batch

    def close(self) -> None:
        self.buf.close()
