"""Numba fast paths for the float32 production pipeline.

Every kernel is serial over the batch (or parallel-free), so results are
bitwise deterministic and independent of how callers chop batches up.  That
property is what the renderer-equality and repeat-run acceptance checks lean
on, and on this box (single core, fast BLAS) parallel scatter would buy
nothing anyway.  The grid math mirrors encoding.GridEncoder exactly; a test
cross-checks the two implementations.
"""
from __future__ import annotations

import numpy as np
from numba import njit

from .encoding import HASH_PRIMES

_P1 = np.uint32(HASH_PRIMES[0])
_P2 = np.uint32(HASH_PRIMES[1])
_P3 = np.uint32(HASH_PRIMES[2])


@njit(cache=True)
def _vertex_slot(vx, vy, vz, res, entries, dense):
    if dense:
        r1 = res + 1
        return (vz * r1 + vy) * r1 + vx
    h = np.uint32(vx) * _P1 ^ np.uint32(vy) * _P2 ^ np.uint32(vz) * _P3
    return np.int64(h % np.uint32(entries))


@njit(cache=True)
def grid_encode_fwd(coords, params, level_off, level_res, level_entries, level_dense,
                    n_feat, idx_cache, w_cache, out):
    """Trilinear multi-level gather; also fills per-corner caches for backward.

    idx_cache holds the flat element offset of each corner's feature row.
    """
    b = coords.shape[0]
    m = level_res.shape[0]
    for i in range(b):
        for j in range(m * n_feat):
            out[i, j] = np.float32(0.0)
        for l in range(m):
            res = level_res[l]
            s_x = coords[i, 0] * np.float32(res)
            s_y = coords[i, 1] * np.float32(res)
            s_z = coords[i, 2] * np.float32(res)
            cx = np.int64(np.floor(s_x))
            cy = np.int64(np.floor(s_y))
            cz = np.int64(np.floor(s_z))
            if cx > res - 1:
                cx = res - 1
            if cy > res - 1:
                cy = res - 1
            if cz > res - 1:
                cz = res - 1
            if cx < 0:
                cx = 0
            if cy < 0:
                cy = 0
            if cz < 0:
                cz = 0
            fx = s_x - np.float32(cx)
            fy = s_y - np.float32(cy)
            fz = s_z - np.float32(cz)
            dense = level_dense[l] != 0
            for c in range(8):
                ox = c & 1
                oy = (c >> 1) & 1
                oz = (c >> 2) & 1
                slot = _vertex_slot(cx + ox, cy + oy, cz + oz, res, level_entries[l], dense)
                w = (fx if ox else np.float32(1.0) - fx)
                w *= (fy if oy else np.float32(1.0) - fy)
                w *= (fz if oz else np.float32(1.0) - fz)
                base = level_off[l] + slot * n_feat
                idx_cache[i, l, c] = base
                w_cache[i, l, c] = w
                for f in range(n_feat):
                    out[i, l * n_feat + f] += w * params[base + f]


@njit(cache=True)
def grid_encode_bwd(dl_dfeat, idx_cache, w_cache, n_feat, grad_out):
    """Scatter dL/dfeature back onto the touched table rows (serial, race-free)."""
    b, m, _ = idx_cache.shape
    for i in range(b):
        for l in range(m):
            for c in range(8):
                base = idx_cache[i, l, c]
                w = w_cache[i, l, c]
                for f in range(n_feat):
                    grad_out[base + f] += w * dl_dfeat[i, l * n_feat + f]


@njit(cache=True)
def _mlp_row(feat, weights, relu_out, h0, h1):
    """Serial matvec chain for one sample; returns the scalar output."""
    n_in = feat.shape[0]
    for k in range(n_in):
        h0[k] = feat[k]
    cur, nxt = h0, h1
    last = len(weights) - 1
    width_in = n_in
    li = 0
    for w in weights:
        n_out = w.shape[0]
        for j in range(n_out):
            acc = np.float32(0.0)
            for k in range(width_in):
                acc += w[j, k] * cur[k]
            if li < last or relu_out:
                acc = max(acc, np.float32(0.0))
            nxt[j] = acc
        cur, nxt = nxt, cur
        width_in = n_out
        li += 1
    return cur[0]


@njit(cache=True, nogil=True)
def _field_one(x, y, z, params, level_off, level_res, level_entries, level_dense,
               n_feat, weights, relu_out, feat, h0, h1):
    """Fused encode+MLP for a single coordinate; scratch buffers are reused."""
    m = level_res.shape[0]
    n = m * n_feat
    for j in range(n):
        feat[j] = np.float32(0.0)
    for l in range(m):
        res = level_res[l]
        s_x = x * np.float32(res)
        s_y = y * np.float32(res)
        s_z = z * np.float32(res)
        cx = min(max(np.int64(np.floor(s_x)), 0), res - 1)
        cy = min(max(np.int64(np.floor(s_y)), 0), res - 1)
        cz = min(max(np.int64(np.floor(s_z)), 0), res - 1)
        fx = s_x - np.float32(cx)
        fy = s_y - np.float32(cy)
        fz = s_z - np.float32(cz)
        dense = level_dense[l] != 0
        for c in range(8):
            ox = c & 1
            oy = (c >> 1) & 1
            oz = (c >> 2) & 1
            slot = _vertex_slot(cx + ox, cy + oy, cz + oz, res, level_entries[l], dense)
            w = (fx if ox else np.float32(1.0) - fx)
            w *= (fy if oy else np.float32(1.0) - fy)
            w *= (fz if oz else np.float32(1.0) - fz)
            base = level_off[l] + slot * n_feat
            for f in range(n_feat):
                feat[l * n_feat + f] += w * params[base + f]
    return _mlp_row(feat, weights, relu_out, h0, h1)


@njit(cache=True, nogil=True)
def field_eval_model(coords, params, level_off, level_res, level_entries, level_dense,
                     n_feat, weights, relu_out, out):
    """Fused encode+MLP, one ray/sample per row.  Rendering's Phi evaluator.

    Per-row serial accumulation means a sample's value never depends on which
    other samples share the batch -- required for the wavefront renderer to
    reproduce the reference renderer exactly.
    """
    b = coords.shape[0]
    m = level_res.shape[0]
    n = m * n_feat
    maxw = n
    for w in weights:
        if w.shape[0] > maxw:
            maxw = w.shape[0]
    feat = np.zeros(n, dtype=np.float32)
    h0 = np.empty(maxw, dtype=np.float32)
    h1 = np.empty(maxw, dtype=np.float32)
    for i in range(b):
        out[i] = _field_one(coords[i, 0], coords[i, 1], coords[i, 2],
                            params, level_off, level_res, level_entries, level_dense,
                            n_feat, weights, relu_out, feat, h0, h1)


@njit(cache=True, nogil=True)
def _grid_one(x, y, z, norm, dims_x, dims_y, dims_z):
    """Trilinear read from a dense normalized grid (cell-centered, clamped)."""
    s_x = x * np.float32(dims_x) - np.float32(0.5)
    s_y = y * np.float32(dims_y) - np.float32(0.5)
    s_z = z * np.float32(dims_z) - np.float32(0.5)
    x0 = np.int64(np.floor(s_x))
    y0 = np.int64(np.floor(s_y))
    z0 = np.int64(np.floor(s_z))
    fx = s_x - np.float32(x0)
    fy = s_y - np.float32(y0)
    fz = s_z - np.float32(z0)
    acc = np.float32(0.0)
    for c in range(8):
        ox = c & 1
        oy = (c >> 1) & 1
        oz = (c >> 2) & 1
        ix = min(max(x0 + ox, 0), dims_x - 1)
        iy = min(max(y0 + oy, 0), dims_y - 1)
        iz = min(max(z0 + oz, 0), dims_z - 1)
        w = (fx if ox else np.float32(1.0) - fx)
        w *= (fy if oy else np.float32(1.0) - fy)
        w *= (fz if oz else np.float32(1.0) - fz)
        acc += w * norm[iz, iy, ix]
    return acc


@njit(cache=True, nogil=True)
def field_eval_grid(coords, norm, dims_x, dims_y, dims_z, out):
    """Batched trilinear reads; same per-sample math as the renderers use."""
    b = coords.shape[0]
    for i in range(b):
        out[i] = _grid_one(coords[i, 0], coords[i, 1], coords[i, 2],
                           norm, dims_x, dims_y, dims_z)
