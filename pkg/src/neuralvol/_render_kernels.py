"""Numba kernels shared by both renderer architectures.

The reference (mega-kernel) renderer and the wavefront renderer differ only in
scheduling: the reference runs each ray's state machine to completion and
evaluates the field inline, while the wavefront stages coordinates, batch
evaluates, then resumes shading.  Every state transition, uniform draw, and
float operation lives in the shared helpers below and is executed in the same
per-ray order by both drivers, which is what makes their frames bitwise equal.

Per-ray state is kept in packed arrays (one row per ray) so the wavefront can
compact rays with a numpy gather.  Column meanings are defined by the RM_*/PT_*
constants.
"""
from __future__ import annotations

import math

import numpy as np
from numba import njit

from ._kernels import _field_one, _grid_one

# ------------------------------------------------------------------ rng
# Mirror of rng.RngStream / rng.hash_key; a test asserts bitwise agreement.

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_STRIDE_FRAME = np.uint64(0xD1B54A32D192ED03)
_STRIDE_PIXEL = np.uint64(0x8CB92BA72F3D8DD7)
_U24 = np.float32(1.0 / (1 << 24))
_ONE_BELOW = np.float32(np.nextafter(np.float32(1.0), np.float32(0.0)))


@njit(cache=True, nogil=True)
def _mix64(z):
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


@njit(cache=True, nogil=True)
def _u01(seed, frame, pixel, event):
    """float32 uniform in [0, 1) for one (seed, frame, pixel, event) key."""
    h = _mix64(seed + _GOLDEN)
    h = _mix64(h + frame * _STRIDE_FRAME)
    h = _mix64(h + np.uint64(pixel) * _STRIDE_PIXEL)
    h = _mix64(h + np.uint64(event) * _GOLDEN)
    return np.float32(h >> np.uint64(40)) * _U24


# ------------------------------------------------------------------ geometry

@njit(cache=True, nogil=True)
def _isect(ox, oy, oz, dx, dy, dz, hx, hy, hz):
    """Slab test against [0,h]^3; returns (t0, t1, hit) with t0 clamped to 0."""
    t0 = -math.inf
    t1 = math.inf
    if dx != 0.0:
        ta = (0.0 - ox) / dx
        tb = (hx - ox) / dx
        if ta > tb:
            ta, tb = tb, ta
        t0 = max(t0, ta)
        t1 = min(t1, tb)
    elif ox < 0.0 or ox > hx:
        return 0.0, 0.0, False
    if dy != 0.0:
        ta = (0.0 - oy) / dy
        tb = (hy - oy) / dy
        if ta > tb:
            ta, tb = tb, ta
        t0 = max(t0, ta)
        t1 = min(t1, tb)
    elif oy < 0.0 or oy > hy:
        return 0.0, 0.0, False
    if dz != 0.0:
        ta = (0.0 - oz) / dz
        tb = (hz - oz) / dz
        if ta > tb:
            ta, tb = tb, ta
        t0 = max(t0, ta)
        t1 = min(t1, tb)
    elif oz < 0.0 or oz > hz:
        return 0.0, 0.0, False
    t0 = max(t0, 0.0)
    if t1 <= t0:
        return 0.0, 0.0, False
    return t0, t1, True


@njit(cache=True, nogil=True)
def _dda_enter(ox, oy, oz, dx, dy, dz, t0, ng, gx, gy, gz):
    """DDA setup at parameter t0: cell indices, step signs, per-axis exit
    parameters and parameter deltas (float64 throughout)."""
    px = ox + t0 * dx
    py = oy + t0 * dy
    pz = oz + t0 * dz
    cx = min(max(np.int64(math.floor(px / ng)), 0), gx - 1)
    cy = min(max(np.int64(math.floor(py / ng)), 0), gy - 1)
    cz = min(max(np.int64(math.floor(pz / ng)), 0), gz - 1)
    if dx > 0.0:
        sx = np.int64(1)
        tmx = t0 + ((cx + 1) * ng - px) / dx
        tdx = ng / dx
    elif dx < 0.0:
        sx = np.int64(-1)
        tmx = t0 + (cx * ng - px) / dx
        tdx = -ng / dx
    else:
        sx = np.int64(0)
        tmx = math.inf
        tdx = math.inf
    if dy > 0.0:
        sy = np.int64(1)
        tmy = t0 + ((cy + 1) * ng - py) / dy
        tdy = ng / dy
    elif dy < 0.0:
        sy = np.int64(-1)
        tmy = t0 + (cy * ng - py) / dy
        tdy = -ng / dy
    else:
        sy = np.int64(0)
        tmy = math.inf
        tdy = math.inf
    if dz > 0.0:
        sz = np.int64(1)
        tmz = t0 + ((cz + 1) * ng - pz) / dz
        tdz = ng / dz
    elif dz < 0.0:
        sz = np.int64(-1)
        tmz = t0 + (cz * ng - pz) / dz
        tdz = -ng / dz
    else:
        sz = np.int64(0)
        tmz = math.inf
        tdz = math.inf
    return cx, cy, cz, sx, sy, sz, tmx, tmy, tmz, tdx, tdy, tdz


@njit(cache=True, nogil=True)
def _mu_read(mu, cx, cy, cz):
    gx = mu.shape[2]
    gy = mu.shape[1]
    gz = mu.shape[0]
    ix = min(max(cx, 0), gx - 1)
    iy = min(max(cy, 0), gy - 1)
    iz = min(max(cz, 0), gz - 1)
    return mu[iz, iy, ix]


@njit(cache=True, nogil=True)
def dda_collect(ox, oy, oz, dx, dy, dz, t0, t1, ng, gx, gy, gz, cells, ts):
    """Record every (cell, s_enter, s_exit) along [t0, t1]; returns the count.

    Zero-length boundary grazes are dropped so segments tile the interval.
    """
    cx, cy, cz, sx, sy, sz, tmx, tmy, tmz, tdx, tdy, tdz = _dda_enter(
        ox, oy, oz, dx, dy, dz, t0, ng, gx, gy, gz)
    cur = t0
    count = 0
    while True:
        se = tmx
        if tmy < se:
            se = tmy
        if tmz < se:
            se = tmz
        if se > t1:
            se = t1
        if se > cur:
            cells[count, 0] = min(max(cx, 0), gx - 1)
            cells[count, 1] = min(max(cy, 0), gy - 1)
            cells[count, 2] = min(max(cz, 0), gz - 1)
            ts[count, 0] = cur
            ts[count, 1] = se
            count += 1
            cur = se
        if se >= t1:
            return count
        if tmx <= tmy and tmx <= tmz:
            cx += sx
            tmx += tdx
        elif tmy <= tmz:
            cy += sy
            tmy += tdy
        else:
            cz += sz
            tmz += tdz


# ------------------------------------------------------------------ field + tf

@njit(cache=True, nogil=True)
def _phi_one(use_grid, norm,
             params, loff, lres, lent, ldense, nfeat, weights, relu_out,
             x, y, z, feat, h0, h1):
    if use_grid:
        return _grid_one(x, y, z, norm, norm.shape[2], norm.shape[1], norm.shape[0])
    return _field_one(x, y, z, params, loff, lres, lent, ldense,
                      nfeat, weights, relu_out, feat, h0, h1)


@njit(cache=True, nogil=True)
def _tf_alpha(v, ov, oa):
    x = v
    if x < np.float32(0.0):
        x = np.float32(0.0)
    if x > np.float32(1.0):
        x = np.float32(1.0)
    n = ov.shape[0]
    if x <= ov[0]:
        return oa[0]
    if x >= ov[n - 1]:
        return oa[n - 1]
    i = 1
    while ov[i] < x:
        i += 1
    w = (x - ov[i - 1]) / (ov[i] - ov[i - 1])
    return oa[i - 1] + w * (oa[i] - oa[i - 1])


@njit(cache=True, nogil=True)
def _tf_rgb(v, cv, crgb):
    x = v
    if x < np.float32(0.0):
        x = np.float32(0.0)
    if x > np.float32(1.0):
        x = np.float32(1.0)
    n = cv.shape[0]
    if x <= cv[0]:
        return crgb[0, 0], crgb[0, 1], crgb[0, 2]
    if x >= cv[n - 1]:
        return crgb[n - 1, 0], crgb[n - 1, 1], crgb[n - 1, 2]
    i = 1
    while cv[i] < x:
        i += 1
    w = (x - cv[i - 1]) / (cv[i] - cv[i - 1])
    r = crgb[i - 1, 0] + w * (crgb[i, 0] - crgb[i - 1, 0])
    g = crgb[i - 1, 1] + w * (crgb[i, 1] - crgb[i - 1, 1])
    b = crgb[i - 1, 2] + w * (crgb[i, 2] - crgb[i - 1, 2])
    return r, g, b


@njit(cache=True, nogil=True)
def _adaptive(muc, s1, s2, pexp):
    m = muc
    if m > np.float32(1.0):
        m = np.float32(1.0)
    gap = np.float32(1.0) - m
    s = s1 + (s2 - s1) * gap ** pexp
    if s < s1:
        s = s1
    return s


# ------------------------------------------------------------------ ray march
# Packed per-ray state columns.
# f32 (RMF): 0 T, 1 r, 2 g, 3 b, 4 clock, 5 sbar, 6 best_w, 7 best_t, 8 T_sh,
#            9..11 origin, 12..14 direction, 15 cell mu
RMF = 16
# f64 (RMD): 0 cell exit, 1 march end, 2..4 tmax xyz, 5..7 tdelta xyz
RMD = 8
# i64 (RMI): 0 pixel, 1 phase (0 primary / 1 shadow), 2 in-cell flag,
#            3..5 cell xyz, 6..8 step xyz
RMI = 9


@njit(cache=True, nogil=True)
def _rm_cell_entry(rmf, rmd, rmi, r, use_mc, s1, s2, pexp, mu, ng):
    """Enter the cell containing the clock (or the whole interval w/o cells)."""
    t1 = rmd[r, 1]
    if not use_mc:
        rmd[r, 0] = t1
        rmf[r, 5] = s1
        rmf[r, 15] = np.float32(1.0)
        rmi[r, 2] = 1
        return
    cx, cy, cz, sx, sy, sz, tmx, tmy, tmz, tdx, tdy, tdz = _dda_enter(
        np.float64(rmf[r, 9]), np.float64(rmf[r, 10]), np.float64(rmf[r, 11]),
        np.float64(rmf[r, 12]), np.float64(rmf[r, 13]), np.float64(rmf[r, 14]),
        np.float64(rmf[r, 4]), ng, mu.shape[2], mu.shape[1], mu.shape[0])
    rmi[r, 3] = cx
    rmi[r, 4] = cy
    rmi[r, 5] = cz
    rmi[r, 6] = sx
    rmi[r, 7] = sy
    rmi[r, 8] = sz
    rmd[r, 2] = tmx
    rmd[r, 3] = tmy
    rmd[r, 4] = tmz
    rmd[r, 5] = tdx
    rmd[r, 6] = tdy
    rmd[r, 7] = tdz
    se = tmx
    if tmy < se:
        se = tmy
    if tmz < se:
        se = tmz
    if se > t1:
        se = t1
    rmd[r, 0] = se
    muc = _mu_read(mu, cx, cy, cz)
    rmf[r, 15] = muc
    rmf[r, 5] = _adaptive(muc, s1, s2, pexp)
    rmi[r, 2] = 1


@njit(cache=True, nogil=True)
def _rm_cell_advance(rmf, rmd, rmi, r, s1, s2, pexp, mu):
    t1 = rmd[r, 1]
    tmx = rmd[r, 2]
    tmy = rmd[r, 3]
    tmz = rmd[r, 4]
    if tmx <= tmy and tmx <= tmz:
        rmi[r, 3] += rmi[r, 6]
        rmd[r, 2] = tmx + rmd[r, 5]
    elif tmy <= tmz:
        rmi[r, 4] += rmi[r, 7]
        rmd[r, 3] = tmy + rmd[r, 6]
    else:
        rmi[r, 5] += rmi[r, 8]
        rmd[r, 4] = tmz + rmd[r, 7]
    se = rmd[r, 2]
    if rmd[r, 3] < se:
        se = rmd[r, 3]
    if rmd[r, 4] < se:
        se = rmd[r, 4]
    if se > t1:
        se = t1
    rmd[r, 0] = se
    muc = _mu_read(mu, rmi[r, 3], rmi[r, 4], rmi[r, 5])
    rmf[r, 15] = muc
    rmf[r, 5] = _adaptive(muc, s1, s2, pexp)


@njit(cache=True, nogil=True)
def _rm_next(rmf, rmd, rmi, r, use_mc, skip_empty, s1, s2, pexp, mu, ng):
    """Advance to the next sample position; returns its t (or -1 at march end).

    Empty cells (mu_max = 0) are walked with the same clock arithmetic as
    non-skipped marching, so the sampling phase carries over cell borders.
    """
    t1 = rmd[r, 1]
    if rmi[r, 2] == 0:
        _rm_cell_entry(rmf, rmd, rmi, r, use_mc, s1, s2, pexp, mu, ng)
    while True:
        sbar = rmf[r, 5]
        se = rmd[r, 0]
        if use_mc and skip_empty and rmf[r, 15] <= np.float32(0.0):
            t = rmf[r, 4]
            while np.float64(t + np.float32(0.5) * sbar) < se:
                t = t + sbar
            rmf[r, 4] = t
        else:
            ts = rmf[r, 4] + np.float32(0.5) * sbar
            if np.float64(ts) < se:
                rmf[r, 4] = rmf[r, 4] + sbar
                return ts
        if se >= t1:
            return np.float32(-1.0)
        _rm_cell_advance(rmf, rmd, rmi, r, s1, s2, pexp, mu)


@njit(cache=True, nogil=True)
def _rm_consume(rmf, rmi, r, v, ts, sbar, mode_shadow, s1, cv, crgb, ov, oa, ds, term):
    """Composite one sample value; True when the current march just ended.

    sbar must be the step length in effect when the sample was produced; the
    live rmf column may already describe a later cell.
    """
    a = _tf_alpha(v, ov, oa) * ds
    if a < np.float32(0.0):
        a = np.float32(0.0)
    if a > np.float32(1.0):
        a = np.float32(1.0)
    abar = np.float32(1.0) - (np.float32(1.0) - a) ** (sbar / s1)
    if rmi[r, 1] == 0:
        T = rmf[r, 0]
        w = T * abar
        if mode_shadow and w > rmf[r, 6]:
            rmf[r, 6] = w
            rmf[r, 7] = ts
        cr, cg, cb = _tf_rgb(v, cv, crgb)
        rmf[r, 1] += w * cr
        rmf[r, 2] += w * cg
        rmf[r, 3] += w * cb
        T = T * (np.float32(1.0) - abar)
        rmf[r, 0] = T
        return T < term
    Tsh = rmf[r, 8] * (np.float32(1.0) - abar)
    rmf[r, 8] = Tsh
    return Tsh < term


@njit(cache=True, nogil=True)
def _rm_phase_end(rmf, rmd, rmi, r, mode_shadow, sdx, sdy, sdz, hx, hy, hz):
    """March finished; start the shadow march if one is due.  True = ray done."""
    if not mode_shadow or rmi[r, 1] != 0:
        return True
    rmi[r, 1] = 1
    if rmf[r, 1] == np.float32(0.0) and rmf[r, 2] == np.float32(0.0) and rmf[r, 3] == np.float32(0.0):
        return True  # nothing to attenuate, T_sh stays 1
    bt = np.float64(rmf[r, 7])
    bx = np.float64(rmf[r, 9]) + bt * np.float64(rmf[r, 12])
    by = np.float64(rmf[r, 10]) + bt * np.float64(rmf[r, 13])
    bz = np.float64(rmf[r, 11]) + bt * np.float64(rmf[r, 14])
    t0s, t1s, hit = _isect(bx, by, bz,
                           np.float64(sdx), np.float64(sdy), np.float64(sdz), hx, hy, hz)
    if not hit:
        return True
    rmf[r, 9] = np.float32(bx)
    rmf[r, 10] = np.float32(by)
    rmf[r, 11] = np.float32(bz)
    rmf[r, 12] = sdx
    rmf[r, 13] = sdy
    rmf[r, 14] = sdz
    rmf[r, 4] = np.float32(t0s)
    rmd[r, 1] = t1s
    rmi[r, 2] = 0
    return False


@njit(cache=True, nogil=True)
def _rm_final(rmf, rmi, r, mode_shadow, ka, bgr, bgg, bgb, img):
    scale = np.float32(1.0)
    if mode_shadow:
        scale = ka + (np.float32(1.0) - ka) * rmf[r, 8]
    T = rmf[r, 0]
    pix = rmi[r, 0]
    img[pix, 0] = rmf[r, 1] * scale + T * bgr
    img[pix, 1] = rmf[r, 2] * scale + T * bgg
    img[pix, 2] = rmf[r, 3] * scale + T * bgb


@njit(cache=True, nogil=True)
def _coord_at(rmf, r, ts, hx, hy, hz):
    x = np.float32((np.float64(rmf[r, 9]) + np.float64(ts) * np.float64(rmf[r, 12])) / hx)
    y = np.float32((np.float64(rmf[r, 10]) + np.float64(ts) * np.float64(rmf[r, 13])) / hy)
    z = np.float32((np.float64(rmf[r, 11]) + np.float64(ts) * np.float64(rmf[r, 14])) / hz)
    if x < np.float32(0.0):
        x = np.float32(0.0)
    if x >= np.float32(1.0):
        x = _ONE_BELOW
    if y < np.float32(0.0):
        y = np.float32(0.0)
    if y >= np.float32(1.0):
        y = _ONE_BELOW
    if z < np.float32(0.0):
        z = np.float32(0.0)
    if z >= np.float32(1.0):
        z = _ONE_BELOW
    return x, y, z


@njit(cache=True, nogil=True)
def rm_reference(rmf, rmd, rmi, n, mode_shadow, use_mc, skip_empty,
                 s1, s2, pexp, term, ka, mu, ng, sdx, sdy, sdz,
                 bgr, bgg, bgb, hx, hy, hz,
                 use_grid, norm, params, loff, lres, lent, ldense, nfeat, weights, relu_out,
                 cv, crgb, ov, oa, ds, img, counters):
    """Mega-kernel ray marcher: each ray runs to completion, field inline."""
    nf = lres.shape[0] * nfeat
    maxw = nf
    for w in weights:
        if w.shape[0] > maxw:
            maxw = w.shape[0]
    feat = np.zeros(nf, dtype=np.float32)
    h0 = np.empty(maxw, dtype=np.float32)
    h1 = np.empty(maxw, dtype=np.float32)
    evals = 0
    for r in range(n):
        while True:
            ts = _rm_next(rmf, rmd, rmi, r, use_mc, skip_empty, s1, s2, pexp, mu, ng)
            if ts < np.float32(0.0):
                if _rm_phase_end(rmf, rmd, rmi, r, mode_shadow, sdx, sdy, sdz, hx, hy, hz):
                    _rm_final(rmf, rmi, r, mode_shadow, ka, bgr, bgg, bgb, img)
                    break
                continue
            x, y, z = _coord_at(rmf, r, ts, hx, hy, hz)
            v = _phi_one(use_grid, norm,
                         params, loff, lres, lent, ldense, nfeat, weights, relu_out,
                         x, y, z, feat, h0, h1)
            evals += 1
            if _rm_consume(rmf, rmi, r, v, ts, rmf[r, 5], mode_shadow, s1, cv, crgb, ov, oa, ds, term):
                if _rm_phase_end(rmf, rmd, rmi, r, mode_shadow, sdx, sdy, sdz, hx, hy, hz):
                    _rm_final(rmf, rmi, r, mode_shadow, ka, bgr, bgg, bgb, img)
                    break
    counters[0] += evals


@njit(cache=True, nogil=True)
def rm_coord(rmf, rmd, rmi, n, k, use_mc, skip_empty, s1, s2, pexp, mu, ng,
             hx, hy, hz, stage_xyz, stage_ts, stage_sbar, counts, mdone):
    """Wavefront coordinate kernel: stage up to K next samples per alive ray.

    The per-sample step length is staged too, because one batch may span
    macro-cells with different adaptive steps.
    """
    for r in range(n):
        c = 0
        mdone[r] = 0
        while c < k:
            ts = _rm_next(rmf, rmd, rmi, r, use_mc, skip_empty, s1, s2, pexp, mu, ng)
            if ts < np.float32(0.0):
                mdone[r] = 1
                break
            x, y, z = _coord_at(rmf, r, ts, hx, hy, hz)
            i = r * k + c
            stage_xyz[i, 0] = x
            stage_xyz[i, 1] = y
            stage_xyz[i, 2] = z
            stage_ts[i] = ts
            stage_sbar[i] = rmf[r, 5]
            c += 1
        counts[r] = c


@njit(cache=True, nogil=True)
def phi_eval_staged(stage_xyz, counts, k, use_grid, norm,
                    params, loff, lres, lent, ldense, nfeat, weights, relu_out,
                    values, counters):
    """Batch inference over the staged coordinates (holes skipped)."""
    nf = lres.shape[0] * nfeat
    maxw = nf
    for w in weights:
        if w.shape[0] > maxw:
            maxw = w.shape[0]
    feat = np.zeros(nf, dtype=np.float32)
    h0 = np.empty(maxw, dtype=np.float32)
    h1 = np.empty(maxw, dtype=np.float32)
    total = 0
    for r in range(counts.shape[0]):
        for c in range(counts[r]):
            i = r * k + c
            values[i] = _phi_one(use_grid, norm,
                                 params, loff, lres, lent, ldense, nfeat, weights, relu_out,
                                 stage_xyz[i, 0], stage_xyz[i, 1], stage_xyz[i, 2],
                                 feat, h0, h1)
            total += 1
    counters[0] += total


@njit(cache=True, nogil=True)
def rm_shade(rmf, rmd, rmi, n, k, values, stage_ts, stage_sbar, counts, mdone,
             mode_shadow, s1, cv, crgb, ov, oa, ds, term, ka,
             sdx, sdy, sdz, bgr, bgg, bgb, hx, hy, hz, img, alive_out):
    """Wavefront shading kernel: consume staged values, retire finished rays."""
    for r in range(n):
        ended = False
        for c in range(counts[r]):
            i = r * k + c
            if _rm_consume(rmf, rmi, r, values[i], stage_ts[i], stage_sbar[i],
                           mode_shadow, s1, cv, crgb, ov, oa, ds, term):
                ended = True
                break
        if not ended and mdone[r] == 1:
            ended = True
        alive = True
        if ended:
            if _rm_phase_end(rmf, rmd, rmi, r, mode_shadow, sdx, sdy, sdz, hx, hy, hz):
                _rm_final(rmf, rmi, r, mode_shadow, ka, bgr, bgg, bgb, img)
                alive = False
        alive_out[r] = 1 if alive else 0


# ------------------------------------------------------------------ path trace
# f32 (PTF): 0..2 throughput, 3..5 radiance, 6..8 origin, 9..11 direction,
#            12..14 collision point, 15..17 collision albedo, 18 staged mu
PTF = 19
# f64 (PTD): 0 t, 1 t1, 2 tau remaining, 3 cell exit, 4..6 tmax, 7..9 tdelta
PTD = 10
# i64 (PTI): 0 pixel, 1 event counter, 2 role (0 scatter / 1 shadow / 2 done),
#            3 bounces, 4 tau-pending, 5 in-cell, 6..8 cell, 9..11 step
PTI = 12


@njit(cache=True, nogil=True)
def _pt_after_nee(ptf, ptd, pti, r, seed, frame, rr_depth, bgr, bgg, bgb, hx, hy, hz):
    """Post-collision bookkeeping once the shadow ray is resolved: apply the
    albedo, draw an isotropic direction, then Russian roulette.  True = done."""
    ptf[r, 0] *= ptf[r, 15]
    ptf[r, 1] *= ptf[r, 16]
    ptf[r, 2] *= ptf[r, 17]
    pix = pti[r, 0]
    u1 = _u01(seed, frame, pix, pti[r, 1])
    pti[r, 1] += 1
    u2 = _u01(seed, frame, pix, pti[r, 1])
    pti[r, 1] += 1
    zz = 1.0 - 2.0 * np.float64(u1)
    rr = math.sqrt(max(0.0, 1.0 - zz * zz))
    ph = 2.0 * math.pi * np.float64(u2)
    ptf[r, 9] = np.float32(rr * math.cos(ph))
    ptf[r, 10] = np.float32(rr * math.sin(ph))
    ptf[r, 11] = np.float32(zz)
    ptf[r, 6] = ptf[r, 12]
    ptf[r, 7] = ptf[r, 13]
    ptf[r, 8] = ptf[r, 14]
    t0, t1, hit = _isect(np.float64(ptf[r, 6]), np.float64(ptf[r, 7]), np.float64(ptf[r, 8]),
                         np.float64(ptf[r, 9]), np.float64(ptf[r, 10]), np.float64(ptf[r, 11]),
                         hx, hy, hz)
    if not hit:
        ptf[r, 3] += ptf[r, 0] * bgr
        ptf[r, 4] += ptf[r, 1] * bgg
        ptf[r, 5] += ptf[r, 2] * bgb
        pti[r, 2] = 2
        return True
    ptd[r, 0] = t0
    ptd[r, 1] = t1
    pti[r, 4] = 0
    pti[r, 5] = 0
    if pti[r, 3] > rr_depth:
        q = ptf[r, 0]
        if ptf[r, 1] > q:
            q = ptf[r, 1]
        if ptf[r, 2] > q:
            q = ptf[r, 2]
        if q > np.float32(1.0):
            q = np.float32(1.0)
        u = _u01(seed, frame, pix, pti[r, 1])
        pti[r, 1] += 1
        if u >= q:
            pti[r, 2] = 2
            return True
        ptf[r, 0] /= q
        ptf[r, 1] /= q
        ptf[r, 2] /= q
    pti[r, 2] = 0
    return False


@njit(cache=True, nogil=True)
def _pt_next(ptf, ptd, pti, r, use_mc, mu, ng, mu_glob, seed, frame,
             bgr, bgg, bgb, lr, lg, lb, rr_depth, hx, hy, hz):
    """Track until a tentative collision needs a field value (returns 1.0,
    position already stored in ptd[r,0]) or the ray resolves (returns -1.0).
    Escapes, empty cells, and shadow-ray bookkeeping draw no field values."""
    while True:
        if pti[r, 2] == 2:
            return np.float32(-1.0)
        if pti[r, 4] == 0:
            zeta = _u01(seed, frame, pti[r, 0], pti[r, 1])
            pti[r, 1] += 1
            ptd[r, 2] = -math.log1p(-np.float64(zeta))
            pti[r, 4] = 1
        escape = False
        if use_mc:
            if pti[r, 5] == 0:
                cx, cy, cz, sx, sy, sz, tmx, tmy, tmz, tdx, tdy, tdz = _dda_enter(
                    np.float64(ptf[r, 6]), np.float64(ptf[r, 7]), np.float64(ptf[r, 8]),
                    np.float64(ptf[r, 9]), np.float64(ptf[r, 10]), np.float64(ptf[r, 11]),
                    ptd[r, 0], ng, mu.shape[2], mu.shape[1], mu.shape[0])
                pti[r, 6] = cx
                pti[r, 7] = cy
                pti[r, 8] = cz
                pti[r, 9] = sx
                pti[r, 10] = sy
                pti[r, 11] = sz
                ptd[r, 4] = tmx
                ptd[r, 5] = tmy
                ptd[r, 6] = tmz
                ptd[r, 7] = tdx
                ptd[r, 8] = tdy
                ptd[r, 9] = tdz
                se = tmx
                if tmy < se:
                    se = tmy
                if tmz < se:
                    se = tmz
                if se > ptd[r, 1]:
                    se = ptd[r, 1]
                ptd[r, 3] = se
                pti[r, 5] = 1
            muc = _mu_read(mu, pti[r, 6], pti[r, 7], pti[r, 8])
            if muc > np.float32(0.0):
                seg = ptd[r, 3] - ptd[r, 0]
                tauc = np.float64(muc) * seg
                if ptd[r, 2] <= tauc:
                    ptd[r, 0] = ptd[r, 0] + ptd[r, 2] / np.float64(muc)
                    ptf[r, 18] = muc
                    return np.float32(1.0)
                ptd[r, 2] -= tauc
            if ptd[r, 3] >= ptd[r, 1]:
                escape = True
            else:
                ptd[r, 0] = ptd[r, 3]
                tmx = ptd[r, 4]
                tmy = ptd[r, 5]
                tmz = ptd[r, 6]
                if tmx <= tmy and tmx <= tmz:
                    pti[r, 6] += pti[r, 9]
                    ptd[r, 4] = tmx + ptd[r, 7]
                elif tmy <= tmz:
                    pti[r, 7] += pti[r, 10]
                    ptd[r, 5] = tmy + ptd[r, 8]
                else:
                    pti[r, 8] += pti[r, 11]
                    ptd[r, 6] = tmz + ptd[r, 9]
                se = ptd[r, 4]
                if ptd[r, 5] < se:
                    se = ptd[r, 5]
                if ptd[r, 6] < se:
                    se = ptd[r, 6]
                if se > ptd[r, 1]:
                    se = ptd[r, 1]
                ptd[r, 3] = se
        else:
            if mu_glob > 0.0:
                seg = ptd[r, 1] - ptd[r, 0]
                tauc = mu_glob * seg
                if ptd[r, 2] <= tauc:
                    ptd[r, 0] = ptd[r, 0] + ptd[r, 2] / mu_glob
                    ptf[r, 18] = np.float32(mu_glob)
                    return np.float32(1.0)
            escape = True
        if escape:
            if pti[r, 2] == 0:
                ptf[r, 3] += ptf[r, 0] * bgr
                ptf[r, 4] += ptf[r, 1] * bgg
                ptf[r, 5] += ptf[r, 2] * bgb
                pti[r, 2] = 2
                return np.float32(-1.0)
            # shadow ray reached the light: T_sh = 1, take the NEE contribution
            ptf[r, 3] += ptf[r, 0] * ptf[r, 15] * lr
            ptf[r, 4] += ptf[r, 1] * ptf[r, 16] * lg
            ptf[r, 5] += ptf[r, 2] * ptf[r, 17] * lb
            if _pt_after_nee(ptf, ptd, pti, r, seed, frame, rr_depth, bgr, bgg, bgb, hx, hy, hz):
                return np.float32(-1.0)


@njit(cache=True, nogil=True)
def _pt_stage_coord(ptf, ptd, r, hx, hy, hz):
    t = ptd[r, 0]
    x = np.float32((np.float64(ptf[r, 6]) + t * np.float64(ptf[r, 9])) / hx)
    y = np.float32((np.float64(ptf[r, 7]) + t * np.float64(ptf[r, 10])) / hy)
    z = np.float32((np.float64(ptf[r, 8]) + t * np.float64(ptf[r, 11])) / hz)
    if x < np.float32(0.0):
        x = np.float32(0.0)
    if x >= np.float32(1.0):
        x = _ONE_BELOW
    if y < np.float32(0.0):
        y = np.float32(0.0)
    if y >= np.float32(1.0):
        y = _ONE_BELOW
    if z < np.float32(0.0):
        z = np.float32(0.0)
    if z >= np.float32(1.0):
        z = _ONE_BELOW
    return x, y, z


@njit(cache=True, nogil=True)
def _pt_consume(ptf, ptd, pti, r, v, seed, frame, rr_depth, ds,
                sdx, sdy, sdz, lr, lg, lb, bgr, bgg, bgb,
                cv, crgb, ov, oa, hx, hy, hz, counters):
    """Accept/reject the tentative collision at ptd[r,0].  True = ray done."""
    mu = ptf[r, 18]
    sig = _tf_alpha(v, ov, oa) * ds
    if sig > mu * np.float32(1.0001):
        counters[1] += 1
        sig = mu
    xi = _u01(seed, frame, pti[r, 0], pti[r, 1])
    pti[r, 1] += 1
    if not np.float64(xi) < np.float64(sig) / np.float64(mu):
        pti[r, 4] = 0  # null collision: fresh tau from here
        return False
    if pti[r, 2] == 0:
        pti[r, 3] += 1
        tc = ptd[r, 0]
        px = np.float32(np.float64(ptf[r, 6]) + tc * np.float64(ptf[r, 9]))
        py = np.float32(np.float64(ptf[r, 7]) + tc * np.float64(ptf[r, 10]))
        pz = np.float32(np.float64(ptf[r, 8]) + tc * np.float64(ptf[r, 11]))
        ptf[r, 12] = px
        ptf[r, 13] = py
        ptf[r, 14] = pz
        ar, ag, ab = _tf_rgb(v, cv, crgb)  # the collision's value doubles as albedo
        ptf[r, 15] = ar
        ptf[r, 16] = ag
        ptf[r, 17] = ab
        t0, t1, hit = _isect(np.float64(px), np.float64(py), np.float64(pz),
                             np.float64(sdx), np.float64(sdy), np.float64(sdz), hx, hy, hz)
        if not hit:
            ptf[r, 3] += ptf[r, 0] * ptf[r, 15] * lr
            ptf[r, 4] += ptf[r, 1] * ptf[r, 16] * lg
            ptf[r, 5] += ptf[r, 2] * ptf[r, 17] * lb
            return _pt_after_nee(ptf, ptd, pti, r, seed, frame, rr_depth, bgr, bgg, bgb, hx, hy, hz)
        pti[r, 2] = 1
        ptf[r, 6] = px
        ptf[r, 7] = py
        ptf[r, 8] = pz
        ptf[r, 9] = sdx
        ptf[r, 10] = sdy
        ptf[r, 11] = sdz
        ptd[r, 0] = t0
        ptd[r, 1] = t1
        pti[r, 4] = 0
        pti[r, 5] = 0
        return False
    # shadow ray hit something: occluded, no NEE contribution
    return _pt_after_nee(ptf, ptd, pti, r, seed, frame, rr_depth, bgr, bgg, bgb, hx, hy, hz)


@njit(cache=True, nogil=True)
def pt_reference(ptf, ptd, pti, n, use_mc, mu, ng, mu_glob, seed, frame,
                 rr_depth, ds, sdx, sdy, sdz, lr, lg, lb, bgr, bgg, bgb,
                 hx, hy, hz,
                 use_grid, norm, params, loff, lres, lent, ldense, nfeat, weights, relu_out,
                 cv, crgb, ov, oa, img, counters):
    """Mega-kernel path tracer: single logical routine per ray."""
    nf = lres.shape[0] * nfeat
    maxw = nf
    for w in weights:
        if w.shape[0] > maxw:
            maxw = w.shape[0]
    feat = np.zeros(nf, dtype=np.float32)
    h0 = np.empty(maxw, dtype=np.float32)
    h1 = np.empty(maxw, dtype=np.float32)
    evals = 0
    for r in range(n):
        while True:
            flag = _pt_next(ptf, ptd, pti, r, use_mc, mu, ng, mu_glob, seed, frame,
                            bgr, bgg, bgb, lr, lg, lb, rr_depth, hx, hy, hz)
            if flag < np.float32(0.0):
                break
            x, y, z = _pt_stage_coord(ptf, ptd, r, hx, hy, hz)
            v = _phi_one(use_grid, norm,
                         params, loff, lres, lent, ldense, nfeat, weights, relu_out,
                         x, y, z, feat, h0, h1)
            evals += 1
            if _pt_consume(ptf, ptd, pti, r, v, seed, frame, rr_depth, ds,
                           sdx, sdy, sdz, lr, lg, lb, bgr, bgg, bgb,
                           cv, crgb, ov, oa, hx, hy, hz, counters):
                break
        pix = pti[r, 0]
        img[pix, 0] = ptf[r, 3]
        img[pix, 1] = ptf[r, 4]
        img[pix, 2] = ptf[r, 5]
    counters[0] += evals


@njit(cache=True, nogil=True)
def pt_coord(ptf, ptd, pti, n, use_mc, mu, ng, mu_glob, seed, frame,
             bgr, bgg, bgb, lr, lg, lb, rr_depth, hx, hy, hz,
             stage_xyz, counts, img, alive_out):
    """Wavefront coordinate kernel: at most one tentative collision per ray."""
    for r in range(n):
        flag = _pt_next(ptf, ptd, pti, r, use_mc, mu, ng, mu_glob, seed, frame,
                        bgr, bgg, bgb, lr, lg, lb, rr_depth, hx, hy, hz)
        if flag < np.float32(0.0):
            pix = pti[r, 0]
            img[pix, 0] = ptf[r, 3]
            img[pix, 1] = ptf[r, 4]
            img[pix, 2] = ptf[r, 5]
            counts[r] = 0
            alive_out[r] = 0
        else:
            x, y, z = _pt_stage_coord(ptf, ptd, r, hx, hy, hz)
            stage_xyz[r, 0] = x
            stage_xyz[r, 1] = y
            stage_xyz[r, 2] = z
            counts[r] = 1
            alive_out[r] = 1


@njit(cache=True, nogil=True)
def pt_shade(ptf, ptd, pti, n, values, counts, seed, frame, rr_depth, ds,
             sdx, sdy, sdz, lr, lg, lb, bgr, bgg, bgb,
             cv, crgb, ov, oa, hx, hy, hz, img, alive_out, counters):
    for r in range(n):
        if counts[r] == 0:
            continue
        if _pt_consume(ptf, ptd, pti, r, values[r], seed, frame, rr_depth, ds,
                       sdx, sdy, sdz, lr, lg, lb, bgr, bgg, bgb,
                       cv, crgb, ov, oa, hx, hy, hz, counters):
            pix = pti[r, 0]
            img[pix, 0] = ptf[r, 3]
            img[pix, 1] = ptf[r, 4]
            img[pix, 2] = ptf[r, 5]
            alive_out[r] = 0
