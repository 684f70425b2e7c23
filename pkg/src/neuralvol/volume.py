"""Dense scalar-field storage, raw-file I/O, and reconstruction quality metrics.

Fields live on a cell-centered lattice: voxel i owns the slab
[i/D, (i+1)/D) of the normalized domain per axis, with its value at the
center (i+0.5)/D.  All consumers (training targets, neural decodes, the
out-of-core block sampler) share this convention so their interpolations
agree at block seams and domain borders.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy.ndimage import uniform_filter

from .errors import ConfigError, FormatError

# Supported scalar types: tag -> little-endian numpy dtype.
DTYPES = {
    "u8": np.dtype("<u1"),
    "u16": np.dtype("<u2"),
    "f32": np.dtype("<f4"),
    "f64": np.dtype("<f8"),
}


@dataclass(frozen=True)
class VolumeMeta:
    """Shape, scalar type, and normalization range of a raw volume."""

    dims: tuple[int, int, int]  # (D_x, D_y, D_z)
    dtype: str
    value_range: tuple[float, float] | None = None

    def __post_init__(self) -> None:
        if self.dtype not in DTYPES:
            raise ConfigError(f"unknown dtype tag {self.dtype!r}; expected one of {sorted(DTYPES)}")
        if len(self.dims) != 3 or any(int(d) < 2 for d in self.dims):
            raise ConfigError(f"dims must be three components >= 2, got {self.dims}")
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        if self.value_range is not None:
            lo, hi = float(self.value_range[0]), float(self.value_range[1])
            if not lo < hi:
                raise FormatError(f"degenerate range: value_range must satisfy lo < hi, got ({lo}, {hi})")
            object.__setattr__(self, "value_range", (lo, hi))

    @property
    def voxel_count(self) -> int:
        dx, dy, dz = self.dims
        return dx * dy * dz

    @property
    def itemsize(self) -> int:
        return DTYPES[self.dtype].itemsize

    def to_json(self) -> dict:
        out = {"dims": list(self.dims), "dtype": self.dtype}
        if self.value_range is not None:
            out["value_range"] = [self.value_range[0], self.value_range[1]]
        return out

    @staticmethod
    def from_json(obj: dict) -> "VolumeMeta":
        try:
            dims = tuple(obj["dims"])
            dtype = obj["dtype"]
        except (KeyError, TypeError) as exc:
            raise FormatError(f"volume sidecar missing required key: {exc}") from exc
        vr = obj.get("value_range")
        return VolumeMeta(dims=dims, dtype=dtype, value_range=tuple(vr) if vr is not None else None)


@dataclass(eq=False)
class ScalarField:
    """A dense scalar grid; `data` is (D_z, D_y, D_x), x-fastest in memory.

    Treated as immutable after construction, so any number of readers
    (samplers, metric passes, renderers) may share one instance.
    """

    meta: VolumeMeta
    data: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        dx, dy, dz = self.meta.dims
        if self.data.shape != (dz, dy, dx):
            raise FormatError(f"data shape {self.data.shape} does not match dims {self.meta.dims}")
        if self.meta.value_range is None:
            lo = float(self.data.min())
            hi = float(self.data.max())
            if not lo < hi:
                raise FormatError(f"degenerate range: constant volume (min == max == {lo})")
            self.meta = VolumeMeta(self.meta.dims, self.meta.dtype, (lo, hi))

    @cached_property
    def normalized(self) -> np.ndarray:
        """float32 view of the data mapped through value_range into [0, 1]."""
        return self.normalized_as(np.float32)

    def normalized_as(self, dtype) -> np.ndarray:
        lo, hi = self.meta.value_range
        out = (self.data.astype(np.float64) - lo) / (hi - lo)
        return np.clip(out, 0.0, 1.0).astype(dtype)


def load_raw(meta: VolumeMeta, path: str | Path) -> ScalarField:
    """Read a little-endian raw scalar file described by `meta`."""
    path = Path(path)
    need = meta.voxel_count * meta.itemsize
    have = path.stat().st_size
    if have < need:
        raise FormatError(f"{path}: expected at least {need} bytes for dims {meta.dims}, found {have}")
    raw = np.fromfile(path, dtype=DTYPES[meta.dtype], count=meta.voxel_count)
    dx, dy, dz = meta.dims
    return ScalarField(meta=meta, data=raw.reshape(dz, dy, dx))


def save_raw(f: ScalarField, path: str | Path) -> None:
    np.ascontiguousarray(f.data, dtype=DTYPES[f.meta.dtype]).tofile(path)


def load_volume(sidecar: str | Path) -> ScalarField:
    """Load a volume from its JSON sidecar; the raw file sits next to it."""
    sidecar = Path(sidecar)
    try:
        obj = json.loads(sidecar.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{sidecar}: not valid JSON ({exc})") from exc
    meta = VolumeMeta.from_json(obj)
    raw_path = sidecar.parent / obj.get("path", sidecar.stem + ".raw")
    return load_raw(meta, raw_path)


def save_volume(f: ScalarField, sidecar: str | Path) -> None:
    sidecar = Path(sidecar)
    raw_path = sidecar.with_suffix(".raw")
    save_raw(f, raw_path)
    sidecar.write_text(json.dumps({**f.meta.to_json(), "path": raw_path.name}, indent=2) + "\n")


# --------------------------------------------------------------------------
# Sampling

def _gather_corners(norm: np.ndarray, dims, pts: np.ndarray):
    """Shared index/weight computation for trilinear reads, float32 throughout."""
    dx, dy, dz = dims
    p = np.asarray(pts, dtype=np.float32)
    s = p * np.array([dx, dy, dz], dtype=np.float32) - np.float32(0.5)
    i0 = np.floor(s).astype(np.int64)
    fr = s - i0.astype(np.float32)
    out = np.zeros(p.shape[:-1], dtype=np.float32)
    hi = np.array([dx - 1, dy - 1, dz - 1], dtype=np.int64)
    for c in range(8):
        off = np.array([(c >> 0) & 1, (c >> 1) & 1, (c >> 2) & 1], dtype=np.int64)
        idx = np.clip(i0 + off, 0, hi)
        w = np.ones(p.shape[:-1], dtype=np.float32)
        for a in range(3):
            w = w * (fr[..., a] if off[a] else np.float32(1.0) - fr[..., a])
        out += w * norm[idx[..., 2], idx[..., 1], idx[..., 0]]
    return out


def sample_trilinear_many(f: ScalarField, pts: np.ndarray) -> np.ndarray:
    """Trilinear reads at an (N, 3) array of normalized coordinates."""
    if np.isnan(pts).any():
        raise ConfigError("sample coordinates contain NaN")
    return _gather_corners(f.normalized, f.meta.dims, pts)


def sample_trilinear(f: ScalarField, p) -> float:
    """Trilinear read at one normalized coordinate in [0,1)^3 (borders clamp)."""
    return float(sample_trilinear_many(f, np.asarray(p, dtype=np.float32)[None, :])[0])


# --------------------------------------------------------------------------
# Quality metrics

@dataclass(frozen=True)
class QualityReport:
    psnr_db: float
    mssim: float
    mse: float

    def to_json(self) -> dict:
        return {"psnr_db": self.psnr_db, "mssim": self.mssim, "mse": self.mse}


def _check_same_dims(a: ScalarField, b: ScalarField) -> None:
    if a.meta.dims != b.meta.dims:
        raise ConfigError(f"field dims differ: {a.meta.dims} vs {b.meta.dims}")


def mse(a: ScalarField, b: ScalarField) -> float:
    """Mean squared error over normalized values, accumulated in float64."""
    _check_same_dims(a, b)
    d = a.normalized_as(np.float64) - b.normalized_as(np.float64)
    return float(np.mean(d * d))


def psnr(a: ScalarField, b: ScalarField) -> float:
    """PSNR in dB on normalized values; identical fields report the 99 dB cap."""
    e = mse(a, b)
    if e == 0.0:
        return 99.0
    return -10.0 * math.log10(e)


_SSIM_C1 = 0.01 ** 2
_SSIM_C2 = 0.03 ** 2


def mssim(a: ScalarField, b: ScalarField, window: int = 7) -> float:
    """Mean SSIM with a uniform cubic window (border-clamped), range 1."""
    _check_same_dims(a, b)
    x = a.normalized_as(np.float64)
    y = b.normalized_as(np.float64)

    def mean(v):
        return uniform_filter(v, size=window, mode="nearest")

    mu_x = mean(x)
    mu_y = mean(y)
    # Var/cov via E[uv] - E[u]E[v]; tiny negatives from roundoff are clipped.
    var_x = np.maximum(mean(x * x) - mu_x * mu_x, 0.0)
    var_y = np.maximum(mean(y * y) - mu_y * mu_y, 0.0)
    cov = mean(x * y) - mu_x * mu_y
    num = (2 * mu_x * mu_y + _SSIM_C1) * (2 * cov + _SSIM_C2)
    den = (mu_x * mu_x + mu_y * mu_y + _SSIM_C1) * (var_x + var_y + _SSIM_C2)
    return float(np.mean(num / den))


def compare(a: ScalarField, b: ScalarField) -> QualityReport:
    e = mse(a, b)
    return QualityReport(
        psnr_db=99.0 if e == 0.0 else -10.0 * math.log10(e),
        mssim=mssim(a, b),
        mse=e,
    )
