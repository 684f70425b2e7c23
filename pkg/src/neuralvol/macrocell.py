"""Macro-cell acceleration grid: per-cell value ranges and opacity majorants.

Each cell covers n_g voxels per axis (the grid may overhang the volume on the
high side).  A cell's value range bounds every voxel in the cell plus a
one-voxel border, so any trilinearly interpolated sample inside the cell stays
within the range; the majorant mu_max = max opacity over that range times
density_scale is then sound for both empty-space skipping and Woodcock
tracking.  Ranges can also be accumulated online from training batches, in
which case they only ever widen.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _render_kernels
from .camera import intersect_aabb
from .errors import ConfigError
from .sampler import SampleBatch
from .transfer import TransferFunction
from .volume import ScalarField

DEFAULT_CELL_SIZE = 64


@dataclass
class MacroCellGrid:
    vol_dims: tuple[int, int, int]  # (Dx, Dy, Dz)
    n_g: int = DEFAULT_CELL_SIZE
    value_lo: np.ndarray = field(default=None, repr=False)  # (gz, gy, gx) f32
    value_hi: np.ndarray = field(default=None, repr=False)
    mu_max: np.ndarray = field(default=None, repr=False)

    def __post_init__(self) -> None:
        if self.n_g < 1:
            raise ConfigError(f"macro-cell size must be >= 1, got {self.n_g}")
        dx, dy, dz = (int(d) for d in self.vol_dims)
        if min(dx, dy, dz) < 1:
            raise ConfigError(f"bad volume dims {self.vol_dims}")
        self.vol_dims = (dx, dy, dz)
        gx, gy, gz = self.grid_dims
        shape = (gz, gy, gx)
        if self.value_lo is None:
            self.value_lo = np.full(shape, np.inf, dtype=np.float32)
            self.value_hi = np.full(shape, -np.inf, dtype=np.float32)
        if self.mu_max is None:
            self.mu_max = np.zeros(shape, dtype=np.float32)
        for arr in (self.value_lo, self.value_hi, self.mu_max):
            if arr.shape != shape:
                raise ConfigError(f"cell array shape {arr.shape} != grid {shape}")

    @property
    def grid_dims(self) -> tuple[int, int, int]:
        return tuple(-(-d // self.n_g) for d in self.vol_dims)


def macrocell_empty(dims, n_g: int = DEFAULT_CELL_SIZE) -> MacroCellGrid:
    """Grid with empty ranges (+inf, -inf), ready for online widening."""
    return MacroCellGrid(vol_dims=tuple(dims), n_g=n_g)


def _ranges_from_array(norm: np.ndarray, dims, n_g: int) -> MacroCellGrid:
    grid = macrocell_empty(dims, n_g)
    gx, gy, gz = grid.grid_dims
    dx, dy, dz = grid.vol_dims
    for cz in range(gz):
        z0, z1 = max(cz * n_g - 1, 0), min((cz + 1) * n_g + 1, dz)
        for cy in range(gy):
            y0, y1 = max(cy * n_g - 1, 0), min((cy + 1) * n_g + 1, dy)
            for cx in range(gx):
                x0, x1 = max(cx * n_g - 1, 0), min((cx + 1) * n_g + 1, dx)
                block = norm[z0:z1, y0:y1, x0:x1]
                grid.value_lo[cz, cy, cx] = block.min()
                grid.value_hi[cz, cy, cx] = block.max()
    return grid


def macrocell_build(fld: ScalarField, n_g: int = DEFAULT_CELL_SIZE) -> MacroCellGrid:
    """Precompute per-cell min/max (with border) from a dense volume."""
    return _ranges_from_array(fld.normalized, fld.meta.dims, n_g)


def macrocell_from_model(model, n_g: int = DEFAULT_CELL_SIZE, chunk: int = 262144) -> MacroCellGrid:
    """Ranges from the model decoded at voxel centers (for offline rendering
    of a model without its source volume; online taps are the other path)."""
    dx, dy, dz = model.dims
    vals = np.empty(dx * dy * dz, dtype=np.float32)
    zz, yy, xx = np.meshgrid(np.arange(dz), np.arange(dy), np.arange(dx), indexing="ij")
    coords = np.stack([
        (xx.ravel() + 0.5) / dx,
        (yy.ravel() + 0.5) / dy,
        (zz.ravel() + 0.5) / dz,
    ], axis=1).astype(np.float32)
    for s in range(0, coords.shape[0], chunk):
        vals[s:s + chunk] = model.eval_fused(coords[s:s + chunk])
    grid = _ranges_from_array(np.clip(vals, 0.0, 1.0).reshape(dz, dy, dx), model.dims, n_g)
    return grid


def macrocell_update_online(grid: MacroCellGrid, batch: SampleBatch) -> None:
    """Widen cell ranges to include every sample in the batch.

    A trilinear sample is a convex combination of its stencil voxels, so it
    widens every cell whose bordered scan window (the one macrocell_build
    uses) contains that stencil: the containing cell always, plus a neighbor
    when the stencil straddles the cell boundary.  Streamed ranges therefore
    stay inside the precomputed ones and converge to them from below as
    samples accumulate.  Stencil arithmetic mirrors the float32 lookup path.
    """
    if batch.coords.shape[0] == 0:
        return
    gx, gy, gz = grid.grid_dims
    n = grid.n_g
    dims = np.array(grid.vol_dims, dtype=np.float32)
    s = batch.coords.astype(np.float32) * dims - np.float32(0.5)
    i0 = np.floor(s).astype(np.int64)
    vmax = np.array(grid.vol_dims, dtype=np.int64) - 1
    v_lo = np.clip(i0, 0, vmax)
    v_hi = np.clip(i0 + (s > i0.astype(np.float32)), 0, vmax)
    bound = np.array((gx, gy, gz), dtype=np.int64) - 1
    c_lo = np.clip((v_hi + n - 1) // n - 1, 0, bound)
    c_hi = np.clip((v_lo + 1) // n, 0, bound)
    corners = [
        (iz * gy + iy) * gx + ix
        for iz in (c_lo[:, 2], c_hi[:, 2])
        for iy in (c_lo[:, 1], c_hi[:, 1])
        for ix in (c_lo[:, 0], c_hi[:, 0])
    ]
    flat = np.concatenate(corners)
    t = np.tile(batch.targets.astype(np.float32), 8)
    np.minimum.at(grid.value_lo.reshape(-1), flat, t)
    np.maximum.at(grid.value_hi.reshape(-1), flat, t)


def macrocell_set_tf(grid: MacroCellGrid, tf: TransferFunction) -> None:
    """Recompute every cell's majorant for the current transfer function.

    Exact, vectorized version of tf_max_opacity over all cells: the max of a
    piecewise-linear opacity on [lo, hi] sits at an endpoint or at an interior
    control point.  Untouched cells (lo > hi) get mu_max = 0.
    """
    lo = np.clip(grid.value_lo.reshape(-1).astype(np.float64), 0.0, 1.0)
    hi = np.clip(grid.value_hi.reshape(-1).astype(np.float64), 0.0, 1.0)
    touched = grid.value_lo.reshape(-1) <= grid.value_hi.reshape(-1)
    pv = tf.opacity_points[:, 0]
    pa = tf.opacity_points[:, 1]
    a_lo = np.interp(lo, pv, pa)
    a_hi = np.interp(hi, pv, pa)
    best = np.maximum(a_lo, a_hi)
    interior = (pv[None, :] > lo[:, None]) & (pv[None, :] < hi[:, None])
    if interior.any():
        interior_max = np.where(interior, pa[None, :], -np.inf).max(axis=1)
        best = np.maximum(best, interior_max)
    mu = np.where(touched, best * tf.density_scale, 0.0)
    grid.mu_max[...] = mu.reshape(grid.mu_max.shape).astype(np.float32)


def dda_traverse(grid: MacroCellGrid, origin, direction, visitor) -> None:
    """Walk the cells pierced by the ray inside the volume box, front to back.

    visitor(cell_xyz: (3,) int array, s_enter: float, s_exit: float) -> bool;
    returning False stops the traversal.  Segments tile [t_min, t_max] of the
    ray/volume intersection exactly.
    """
    dx, dy, dz = grid.vol_dims
    hit = intersect_aabb(origin, direction, (dx, dy, dz))
    if hit is None:
        return
    t0, t1 = hit
    gx, gy, gz = grid.grid_dims
    cap = gx + gy + gz + 4
    cells = np.empty((cap, 3), dtype=np.int64)
    ts = np.empty((cap, 2), dtype=np.float64)
    o = np.asarray(origin, dtype=np.float64)
    d = np.asarray(direction, dtype=np.float64)
    n = _render_kernels.dda_collect(o[0], o[1], o[2], d[0], d[1], d[2],
                                    t0, t1, float(grid.n_g), gx, gy, gz, cells, ts)
    for i in range(n):
        if visitor(cells[i], float(ts[i, 0]), float(ts[i, 1])) is False:
            return
