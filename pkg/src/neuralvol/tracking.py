"""Free-flight sampling and step-size control inside heterogeneous media.

Scalar reference implementations of the collision routines the renderers run
in compiled form; slow but convenient for statistics and for pinning the
contract the kernels must reproduce.
"""
from __future__ import annotations

import math
import warnings

import numpy as np

from .camera import Ray, intersect_aabb
from .errors import ConfigError, MajorantViolation
from .macrocell import MacroCellGrid, dda_traverse

_VIOLATION_SLACK = 1.0 + 1e-4


def adaptive_step(mu_max: float, s1: float, s2: float, p: float) -> np.float32:
    """Step length between s1 (dense regions) and s2 (empty regions)."""
    if not 0 < s1 <= s2:
        raise ConfigError(f"need 0 < s1 <= s2, got s1={s1}, s2={s2}")
    step = s1 + (s2 - s1) * abs(min(mu_max, 1.0) - 1.0) ** p
    return np.float32(max(step, s1))


def correct_opacity(alpha: float, sbar: float, s1: float) -> np.float32:
    """Opacity resampled from step s1 to step sbar: 1 - (1-a)^(sbar/s1)."""
    return np.float32(1.0 - (1.0 - alpha) ** (sbar / s1))


def _uniform_fn(rng):
    # np.random.Generator, or any nullary callable returning floats in [0,1)
    draw = getattr(rng, "random", None)
    return draw if draw is not None else rng


def _check_majorant(sig: float, mu: float) -> float:
    if sig > mu * _VIOLATION_SLACK:
        warnings.warn(f"sigma {sig} exceeds majorant {mu}", MajorantViolation, stacklevel=3)
    return min(sig, mu)


def woodcock(sigma, mu_max: float, t_min: float, t_max: float, rng):
    """First real collision of sigma(t) on [t_min, t_max], or None.

    Candidate distances are exponential in the majorant mu_max; a candidate
    at t is real with probability sigma(t)/mu_max, otherwise it is a null
    collision and tracking continues from t.
    """
    if not mu_max > 0:
        raise ConfigError(f"majorant must be > 0, got {mu_max}")
    if t_min >= t_max:
        return None
    draw = _uniform_fn(rng)
    t = t_min
    while True:
        tau = -math.log1p(-draw())
        t = t + tau / mu_max
        if t >= t_max:
            return None
        sig = _check_majorant(sigma(t), mu_max)
        if draw() < sig / mu_max:
            return t


def woodcock_dda(grid: MacroCellGrid, sigma, ray, rng):
    """Like woodcock, but walks macro-cells so each cell uses its own
    majorant and empty cells consume neither random numbers nor field
    evaluations.  Statistically identical to the global-majorant routine.

    ray is a camera.Ray or an (origin, direction) pair; the tracked interval
    is the ray's span inside the volume box.
    """
    if isinstance(ray, Ray):
        origin, direction = ray.origin, ray.direction
    else:
        origin, direction = ray
    if intersect_aabb(origin, direction, grid.vol_dims) is None:
        return None
    draw = _uniform_fn(rng)
    # The target optical thickness is drawn up front; empty cells then pass
    # underneath it without consuming any of it.
    state = {"tau": -math.log1p(-draw()), "hit": None}

    def visit(cell, s0, s1):
        mu_c = float(grid.mu_max[cell[2], cell[1], cell[0]])
        if mu_c <= 0.0:
            return True
        t = s0
        while True:
            cap = mu_c * (s1 - t)
            if state["tau"] > cap:
                state["tau"] -= cap
                return True
            t_star = t + state["tau"] / mu_c
            sig = _check_majorant(sigma(t_star), mu_c)
            if draw() < sig / mu_c:
                state["hit"] = t_star
                return False
            state["tau"] = -math.log1p(-draw())
            t = t_star

    dda_traverse(grid, origin, direction, visit)
    return state["hit"]
