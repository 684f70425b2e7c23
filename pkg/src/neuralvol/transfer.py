"""Transfer functions: piecewise-linear color/opacity maps over normalized values.

density_scale multiplies opacity into extinction at render time; it is the
knob that turns a classification map into the collision density used by the
trackers, and it feeds the per-cell majorants of the macro-cell grid.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatError


def _as_sorted_points(points, width: int, what: str) -> np.ndarray:
    arr = np.asarray(points, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != width or arr.shape[0] == 0:
        raise ConfigError(f"{what} must be a nonempty list of {width}-tuples")
    v = arr[:, 0]
    if np.any(np.diff(v) <= 0):
        raise ConfigError(f"{what} positions must be strictly increasing")
    return arr


@dataclass(eq=False)
class TransferFunction:
    """Color and opacity control points, each sorted by normalized value."""

    color_points: np.ndarray  # (K, 4): v, r, g, b
    opacity_points: np.ndarray  # (M, 2): v, alpha
    density_scale: float = 1.0

    def __post_init__(self) -> None:
        self.color_points = _as_sorted_points(self.color_points, 4, "color points")
        self.opacity_points = _as_sorted_points(self.opacity_points, 2, "opacity points")
        if not self.density_scale > 0:
            raise ConfigError(f"density_scale must be > 0, got {self.density_scale}")

    # Float32 tables consumed by the render kernels.
    @property
    def tables(self):
        c = self.color_points.astype(np.float32)
        o = self.opacity_points.astype(np.float32)
        return c[:, 0].copy(), c[:, 1:].copy(), o[:, 0].copy(), o[:, 1].copy()

    def to_json(self) -> dict:
        return {
            "colors": [[float(x) for x in row] for row in self.color_points],
            "opacities": [[float(x) for x in row] for row in self.opacity_points],
            "density_scale": float(self.density_scale),
        }


def tf_eval(tf: TransferFunction, v) -> tuple[np.ndarray, np.ndarray]:
    """Piecewise-linear (rgb, alpha) at normalized value(s) v, end-clamped."""
    v = np.clip(np.asarray(v, dtype=np.float64), 0.0, 1.0)
    cv = tf.color_points[:, 0]
    rgb = np.stack([np.interp(v, cv, tf.color_points[:, 1 + ch]) for ch in range(3)], axis=-1)
    alpha = np.interp(v, tf.opacity_points[:, 0], tf.opacity_points[:, 1])
    return rgb, alpha


def tf_max_opacity(tf: TransferFunction, lo: float, hi: float) -> float:
    """Exact max of the piecewise-linear opacity over [lo, hi].

    The maximum of a piecewise-linear function on an interval is attained at
    an endpoint or at a control point interior to the interval.
    """
    if not lo <= hi:
        raise ConfigError(f"invalid range ({lo}, {hi})")
    _, a_lo = tf_eval(tf, lo)
    _, a_hi = tf_eval(tf, hi)
    best = max(float(a_lo), float(a_hi))
    pv = tf.opacity_points[:, 0]
    pa = tf.opacity_points[:, 1]
    interior = (pv > lo) & (pv < hi)
    if interior.any():
        best = max(best, float(pa[interior].max()))
    return best


def tf_from_json(obj: dict) -> TransferFunction:
    if not isinstance(obj, dict):
        raise FormatError(f"transfer function must be an object, got {type(obj).__name__}")
    try:
        return TransferFunction(
            color_points=obj["colors"],
            opacity_points=obj["opacities"],
            density_scale=float(obj.get("density_scale", 1.0)),
        )
    except KeyError as exc:
        raise FormatError(f"transfer function missing key {exc}") from exc
    except (TypeError, ValueError) as exc:
        raise FormatError(f"bad transfer function: {exc}") from exc


def load_tf(path: str | Path) -> TransferFunction:
    try:
        obj = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: not valid JSON ({exc})") from exc
    return tf_from_json(obj)


def save_tf(tf: TransferFunction, path: str | Path) -> None:
    Path(path).write_text(json.dumps(tf.to_json(), indent=2) + "\n")


def grayscale_ramp(density_scale: float = 1.0) -> TransferFunction:
    """Identity grayscale map: color = value, opacity = value."""
    return TransferFunction(
        color_points=[[0.0, 0.0, 0.0, 0.0], [1.0, 1.0, 1.0, 1.0]],
        opacity_points=[[0.0, 0.0], [1.0, 1.0]],
        density_scale=density_scale,
    )


def default_tf() -> TransferFunction:
    """Thresholded blue-to-warm map; low values fully transparent so that
    empty-space structures are actually empty."""
    return TransferFunction(
        color_points=[[0.0, 0.1, 0.2, 0.9], [0.5, 0.9, 0.4, 0.1], [1.0, 1.0, 0.9, 0.2]],
        opacity_points=[[0.0, 0.0], [0.3, 0.0], [0.6, 0.9], [1.0, 1.0]],
        density_scale=2.0,
    )
