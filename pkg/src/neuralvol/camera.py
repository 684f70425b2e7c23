"""Pinhole camera, per-pixel rays, and ray/box intersection.

World units are voxels: a volume with dims (Dx,Dy,Dz) occupies the box
[0,Dx]x[0,Dy]x[0,Dz].  Directions are computed in float64 and cast to float32
at the very end, through one shared code path, so a single camera_ray() call
and the corresponding row of camera_rays() agree bitwise.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ConfigError, FormatError


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray  # (3,) f32
    direction: np.ndarray  # (3,) f32, unit length


@dataclass
class Camera:
    eye: tuple[float, float, float]
    center: tuple[float, float, float]
    up: tuple[float, float, float] = (0.0, 1.0, 0.0)
    vfov_deg: float = 45.0
    width: int = 768
    height: int = 768

    def __post_init__(self) -> None:
        e, c, u = (np.asarray(v, dtype=np.float64).reshape(-1) for v in (self.eye, self.center, self.up))
        if e.shape != (3,) or c.shape != (3,) or u.shape != (3,):
            raise ConfigError("camera eye/center/up must be 3-vectors")
        if not (np.isfinite(e).all() and np.isfinite(c).all() and np.isfinite(u).all()):
            raise ConfigError("camera vectors must be finite")
        if not 0.0 < float(self.vfov_deg) < 180.0:
            raise ConfigError(f"vfov_deg must be in (0, 180), got {self.vfov_deg}")
        if int(self.width) < 1 or int(self.height) < 1:
            raise ConfigError("image size must be positive")
        self.eye = tuple(float(x) for x in e)
        self.center = tuple(float(x) for x in c)
        self.up = tuple(float(x) for x in u)
        self.width = int(self.width)
        self.height = int(self.height)
        self.basis()  # validates eye != center and up not parallel to view

    def basis(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Right-handed (forward, right, up) in float64."""
        e = np.asarray(self.eye, dtype=np.float64)
        c = np.asarray(self.center, dtype=np.float64)
        fwd = c - e
        n = np.linalg.norm(fwd)
        if n == 0.0:
            raise ConfigError("camera eye and center coincide")
        fwd = fwd / n
        side = np.cross(fwd, np.asarray(self.up, dtype=np.float64))
        ns = np.linalg.norm(side)
        if ns == 0.0:
            raise ConfigError("camera up is parallel to the view direction")
        side = side / ns
        return fwd, side, np.cross(side, fwd)

    def to_json(self) -> dict:
        return {
            "eye": list(self.eye),
            "center": list(self.center),
            "up": list(self.up),
            "vfov_deg": float(self.vfov_deg),
            "width": self.width,
            "height": self.height,
        }


def camera_from_json(obj: dict, width: Optional[int] = None, height: Optional[int] = None) -> Camera:
    try:
        return Camera(
            eye=tuple(obj["eye"]),
            center=tuple(obj["center"]),
            up=tuple(obj.get("up", (0.0, 1.0, 0.0))),
            vfov_deg=float(obj.get("vfov_deg", 45.0)),
            width=int(width if width is not None else obj.get("width", 768)),
            height=int(height if height is not None else obj.get("height", 768)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"bad camera JSON: {exc}") from exc


def load_camera(path: str | Path, width: Optional[int] = None, height: Optional[int] = None) -> Camera:
    try:
        obj = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: not valid JSON ({exc})") from exc
    return camera_from_json(obj, width=width, height=height)


def save_camera(cam: Camera, path: str | Path) -> None:
    Path(path).write_text(json.dumps(cam.to_json(), indent=2) + "\n")


def default_camera(dims, width: int = 768, height: int = 768) -> Camera:
    """Three-quarter view framing a volume of the given (dx, dy, dz) extent."""
    dx, dy, dz = (float(d) for d in dims)
    center = (dx / 2.0, dy / 2.0, dz / 2.0)
    reach = 1.6 * max(dx, dy, dz)
    look = np.array([1.0, 0.8, 1.1])
    look /= np.linalg.norm(look)
    eye = tuple(c + reach * l for c, l in zip(center, look))
    return Camera(eye=eye, center=center, vfov_deg=45.0, width=width, height=height)


def _pixel_dirs(cam: Camera, ii: np.ndarray, jj: np.ndarray) -> np.ndarray:
    fwd, right, up = cam.basis()
    tan_half = math.tan(math.radians(cam.vfov_deg) * 0.5)
    aspect = cam.width / cam.height
    nx = ((ii + 0.5) / cam.width * 2.0 - 1.0) * (tan_half * aspect)
    ny = (1.0 - (jj + 0.5) / cam.height * 2.0) * tan_half
    d = fwd[None, :] + nx[:, None] * right[None, :] + ny[:, None] * up[None, :]
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    return d.astype(np.float32)


def camera_ray(cam: Camera, i: int, j: int) -> Ray:
    """Unit ray through the center of pixel (i, j); i indexes columns, j rows."""
    if not (0 <= i < cam.width and 0 <= j < cam.height):
        raise ConfigError(f"pixel ({i}, {j}) outside {cam.width}x{cam.height} image")
    d = _pixel_dirs(cam, np.array([float(i)]), np.array([float(j)]))[0]
    return Ray(np.asarray(cam.eye, dtype=np.float32), d)


def camera_rays(cam: Camera) -> tuple[np.ndarray, np.ndarray]:
    """Origins and unit directions for all pixels, row-major (pixel = j*width + i)."""
    idx = np.arange(cam.width * cam.height, dtype=np.float64)
    ii = idx % cam.width
    jj = np.floor(idx / cam.width)
    dirs = _pixel_dirs(cam, ii, jj)
    origins = np.broadcast_to(np.asarray(cam.eye, dtype=np.float32), (dirs.shape[0], 3)).copy()
    return origins, dirs


def project(cam: Camera, point) -> tuple[float, float]:
    """Continuous pixel coordinates of a world point (inverse of camera_ray)."""
    fwd, right, up = cam.basis()
    q = np.asarray(point, dtype=np.float64) - np.asarray(cam.eye, dtype=np.float64)
    z = float(q @ fwd)
    if z <= 0.0:
        raise ConfigError("cannot project a point at or behind the eye plane")
    tan_half = math.tan(math.radians(cam.vfov_deg) * 0.5)
    aspect = cam.width / cam.height
    nx = float(q @ right) / (z * tan_half * aspect)
    ny = float(q @ up) / (z * tan_half)
    i = (nx + 1.0) * 0.5 * cam.width - 0.5
    j = (1.0 - ny) * 0.5 * cam.height - 0.5
    return i, j


def intersect_aabb(origin, direction, box_hi, box_lo=(0.0, 0.0, 0.0)) -> Optional[tuple[float, float]]:
    """Slab intersection with [box_lo, box_hi]; returns (t_min, t_max) with
    t_min clamped to 0, or None when the box is missed or entirely behind."""
    o = np.asarray(origin, dtype=np.float64)
    d = np.asarray(direction, dtype=np.float64)
    lo = np.asarray(box_lo, dtype=np.float64)
    hi = np.asarray(box_hi, dtype=np.float64)
    t0, t1 = -math.inf, math.inf
    for a in range(3):
        if d[a] != 0.0:
            ta = (lo[a] - o[a]) / d[a]
            tb = (hi[a] - o[a]) / d[a]
            if ta > tb:
                ta, tb = tb, ta
            t0 = max(t0, ta)
            t1 = min(t1, tb)
        elif not (lo[a] <= o[a] <= hi[a]):
            return None
    t0 = max(t0, 0.0)
    if t1 <= t0:
        return None
    return t0, t1
