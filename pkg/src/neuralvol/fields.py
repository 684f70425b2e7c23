"""Synthetic analytic scalar fields used for tests, benchmarks, and demos.

Each field maps normalized coordinates in [0,1)^3 to values in [0,1] and can
be rasterized onto a voxel grid at cell centers, giving a ground truth whose
trilinear reconstruction is known exactly.
"""
from __future__ import annotations

import numpy as np

from .errors import ConfigError
from .volume import ScalarField, VolumeMeta


def _gauss(p: np.ndarray, center, sigma: float) -> np.ndarray:
    d2 = np.sum((p - np.asarray(center, dtype=p.dtype)) ** 2, axis=-1)
    return np.exp(-d2 / (2.0 * sigma * sigma))


def field_gauss(p: np.ndarray) -> np.ndarray:
    """One smooth blob centered in the domain."""
    return _gauss(p, (0.5, 0.5, 0.5), 0.18)


def field_blobs(p: np.ndarray) -> np.ndarray:
    """Three compact blobs in a mostly empty domain (macro-cell friendly)."""
    a = _gauss(p, (0.30, 0.32, 0.28), 0.09)
    b = _gauss(p, (0.68, 0.60, 0.55), 0.07)
    c = _gauss(p, (0.45, 0.75, 0.72), 0.06)
    return np.maximum(np.maximum(a, b), c)


def field_waves(p: np.ndarray) -> np.ndarray:
    """Smooth separable trig field with moderate frequency content."""
    two_pi = 2.0 * np.pi
    x, y, z = p[..., 0], p[..., 1], p[..., 2]
    v = np.sin(two_pi * 3 * x) * np.sin(two_pi * 2 * y) * np.sin(two_pi * 4 * z)
    return 0.5 + 0.5 * v


def field_mlobb(p: np.ndarray) -> np.ndarray:
    """Marschner-Lobb-style test signal, affinely mapped into [0,1]."""
    fm, alpha = 6.0, 0.25
    q = 2.0 * np.asarray(p, dtype=np.float64) - 1.0  # [-1,1]^3
    x, y, z = q[..., 0], q[..., 1], q[..., 2]
    r = np.sqrt(x * x + y * y)
    rho = np.cos(2.0 * np.pi * fm * 0.5 * np.cos(np.pi * r / 2.0))
    v = (1.0 - np.sin(np.pi * z / 2.0) + alpha * (1.0 + rho)) / (2.0 * (1.0 + alpha))
    return np.clip(v, 0.0, 1.0)


FIELDS = {
    "gauss": field_gauss,
    "blobs": field_blobs,
    "waves": field_waves,
    "mlobb": field_mlobb,
}


def get_field(name: str):
    try:
        return FIELDS[name]
    except KeyError:
        raise ConfigError(f"unknown synthetic field {name!r}; expected one of {sorted(FIELDS)}") from None


def rasterize(name_or_fn, dims: tuple[int, int, int], dtype: str = "f32") -> ScalarField:
    """Evaluate a field at all voxel centers of a (D_x,D_y,D_z) grid."""
    fn = get_field(name_or_fn) if isinstance(name_or_fn, str) else name_or_fn
    dx, dy, dz = dims
    zs = (np.arange(dz, dtype=np.float64) + 0.5) / dz
    ys = (np.arange(dy, dtype=np.float64) + 0.5) / dy
    xs = (np.arange(dx, dtype=np.float64) + 0.5) / dx
    gz, gy, gx = np.meshgrid(zs, ys, xs, indexing="ij")
    pts = np.stack([gx, gy, gz], axis=-1)
    vals = np.clip(fn(pts), 0.0, 1.0)
    meta = VolumeMeta(dims=dims, dtype=dtype, value_range=(0.0, 1.0))
    if dtype == "u8":
        data = np.round(vals * 255.0).astype(np.uint8)
        meta = VolumeMeta(dims=dims, dtype=dtype, value_range=(0.0, 255.0))
    elif dtype == "u16":
        data = np.round(vals * 65535.0).astype(np.uint16)
        meta = VolumeMeta(dims=dims, dtype=dtype, value_range=(0.0, 65535.0))
    elif dtype == "f64":
        data = vals
    else:
        data = vals.astype(np.float32)
    return ScalarField(meta=meta, data=data)
