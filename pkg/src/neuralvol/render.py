"""Volume renderers over a field oracle (neural model or dense grid).

Two interchangeable architectures produce identical pixels for the same
configuration and seed: a per-ray mega-kernel (`render_reference`) and a
batched sample-streaming renderer (`render_wavefront`) that alternates
coordinate staging, batched field inference, and shading with stream
compaction.  Three modes: emission-absorption ray marching, ray marching with
a single-shot heuristic shadow, and volumetric path tracing with next-event
estimation.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import _render_kernels as _rk
from .camera import Camera, camera_rays
from .errors import ConfigError
from .macrocell import MacroCellGrid, macrocell_build, macrocell_from_model, macrocell_set_tf
from .model import NeuralModel
from .transfer import TransferFunction, tf_max_opacity
from .volume import ScalarField

MODES = ("raymarch", "raymarch_shadow", "pathtrace")
TERMINATION = 1e-3  # early ray exit below this transmittance


def _unit3(v, what: str) -> tuple[float, float, float]:
    a = np.asarray(v, dtype=np.float64)
    if a.shape != (3,) or not np.all(np.isfinite(a)):
        raise ConfigError(f"{what} must be three finite components, got {v!r}")
    n = float(np.linalg.norm(a))
    if n == 0.0:
        raise ConfigError(f"{what} must be nonzero")
    return tuple(a / n)


@dataclass
class RenderConfig:
    mode: str = "raymarch"
    use_macrocells: bool = False
    frames: int = 1
    step_size: float = 1.0       # s1, voxels
    max_step: float = 64.0       # s2
    step_exponent: float = 2.0
    rr_depth: int = 4
    k_batch: int = 8             # samples streamed per ray per iteration
    light_direction: tuple = (-0.57735026919, -0.57735026919, -0.57735026919)
    light_radiance: tuple = (1.0, 1.0, 1.0)
    background: tuple = (1.0, 1.0, 1.0)
    seed: int = 0
    ambient: float = 0.2         # k_a floor for the shadow mode
    skip_empty: bool = True      # bypass mu_max = 0 cells when macro-cells are on

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ConfigError(f"unknown render mode {self.mode!r}; expected one of {MODES}")
        if not self.step_size > 0:
            raise ConfigError(f"step_size must be > 0, got {self.step_size}")
        if self.max_step < self.step_size:
            raise ConfigError(f"max_step {self.max_step} < step_size {self.step_size}")
        if self.k_batch < 1:
            raise ConfigError(f"k_batch must be >= 1, got {self.k_batch}")
        if self.frames < 1:
            raise ConfigError(f"frames must be >= 1, got {self.frames}")
        if self.rr_depth < 0:
            raise ConfigError(f"rr_depth must be >= 0, got {self.rr_depth}")
        if not 0.0 <= self.ambient <= 1.0:
            raise ConfigError(f"ambient must be in [0,1], got {self.ambient}")
        self.light_direction = _unit3(self.light_direction, "light direction")
        self.light_radiance = tuple(float(c) for c in self.light_radiance)
        self.background = tuple(float(c) for c in self.background)
        if len(self.light_radiance) != 3 or len(self.background) != 3:
            raise ConfigError("light radiance and background must have three components")

    def to_json(self) -> dict:
        return {
            "mode": self.mode,
            "use_macrocells": self.use_macrocells,
            "frames": self.frames,
            "step_size": self.step_size,
            "max_step": self.max_step,
            "step_exponent": self.step_exponent,
            "rr_depth": self.rr_depth,
            "k_batch": self.k_batch,
            "light": {"direction": list(self.light_direction), "radiance": list(self.light_radiance)},
            "background": list(self.background),
            "seed": self.seed,
            "ambient": self.ambient,
            "skip_empty": self.skip_empty,
        }


def render_config_from_json(obj: dict) -> RenderConfig:
    if not isinstance(obj, dict):
        raise ConfigError(f"render config must be an object, got {type(obj).__name__}")
    light = obj.get("light", {})
    kw = {}

    def take(name, *aliases, convert=None):
        for key in (name,) + aliases:
            if key in obj:
                kw[name] = convert(obj[key]) if convert else obj[key]
                return

    take("mode", convert=str)
    take("use_macrocells", "macrocells", convert=bool)
    take("frames", "spp", convert=int)
    take("step_size", convert=float)
    take("max_step", convert=float)
    take("step_exponent", convert=float)
    take("rr_depth", convert=int)
    take("k_batch", "k", convert=int)
    take("background", convert=tuple)
    take("seed", convert=int)
    take("ambient", convert=float)
    take("skip_empty", convert=bool)
    if "direction" in light:
        kw["light_direction"] = tuple(light["direction"])
    if "radiance" in light:
        kw["light_radiance"] = tuple(light["radiance"])
    try:
        return RenderConfig(**kw)
    except TypeError as e:
        raise ConfigError(f"bad render config: {e}") from None


@dataclass
class FrameStats:
    evals: int = 0
    violations: int = 0
    alive_per_iteration: list = field(default_factory=list)
    ms: float = 0.0

    def to_json(self) -> dict:
        return {
            "field_evaluations": self.evals,
            "majorant_violations": self.violations,
            "rays_alive_per_iteration": list(self.alive_per_iteration),
            "ms": self.ms,
        }


@dataclass
class Framebuffer:
    """Running mean of frames, accumulated in float64; clamping happens only
    when converting for export."""
    width: int
    height: int
    total: np.ndarray = None
    count: int = 0

    def __post_init__(self) -> None:
        if self.total is None:
            self.total = np.zeros((self.height, self.width, 3), dtype=np.float64)

    def reset(self) -> None:
        self.total[...] = 0.0
        self.count = 0

    @property
    def mean(self) -> np.ndarray:
        if self.count == 0:
            return np.zeros_like(self.total)
        return self.total / self.count

    def to_u8(self) -> np.ndarray:
        m = np.clip(self.mean, 0.0, 1.0)
        return np.floor(m * 255.0 + 0.5).astype(np.uint8)


def accumulate(fb: Framebuffer, frame: np.ndarray, n: int | None = None) -> np.ndarray:
    """Fold one frame into the running mean and return the current mean."""
    if frame.shape != fb.total.shape:
        raise ConfigError(f"frame shape {frame.shape} != framebuffer {fb.total.shape}")
    fb.total += frame.astype(np.float64)
    fb.count += 1
    if n is not None and n != fb.count:
        raise ConfigError(f"accumulation count mismatch: caller says {n}, buffer has {fb.count}")
    return fb.mean


# --------------------------------------------------------------- field packing

_DUMMY_NORM = np.zeros((1, 1, 1), dtype=np.float32)
_DUMMY_TABLES = (
    np.zeros(1, dtype=np.float32),   # params
    np.zeros(1, dtype=np.int64),     # level offsets
    np.ones(1, dtype=np.int64),      # level resolutions
    np.ones(1, dtype=np.int64),      # level entries
    np.ones(1, dtype=np.uint8),      # dense flags
    1,                               # features per level
    (np.zeros((1, 1), dtype=np.float32),),  # weights
    False,                           # relu output
)


def _phi_pack(phi):
    """(dims, kernel args) for a field oracle.

    Renderers evaluate the field inside compiled kernels, which supports
    dense grids and float32 grid-encoded models; other encoder kinds decode
    through the training path and are not renderable directly.
    """
    if isinstance(phi, ScalarField):
        return phi.meta.dims, (True, phi.normalized) + _DUMMY_TABLES
    if isinstance(phi, NeuralModel):
        if not phi._use_kernels():
            raise ConfigError(
                "renderers require a float32 grid-encoded model; "
                f"got encoder {type(phi.encoder).__name__}, dtype {np.dtype(phi.dtype).name}"
            )
        params, off, res, entries, dense = phi._grid_tables()
        args = (False, _DUMMY_NORM, params, off, res, entries, dense,
                phi.encoder.config.n_features_per_level,
                tuple(phi.mlp.weights),
                phi.mlp.config.output_activation == "relu")
        return phi.dims, args
    raise ConfigError(f"cannot render a {type(phi).__name__}; expected ScalarField or NeuralModel")


def _isect_batch(origins: np.ndarray, dirs: np.ndarray, hi) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized slab test for all primary rays at once (float64)."""
    o = origins.astype(np.float64)
    d = dirs.astype(np.float64)
    h = np.asarray(hi, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        ta = (0.0 - o) / d
        tb = (h - o) / d
    lo = np.minimum(ta, tb)
    up = np.maximum(ta, tb)
    par = d == 0.0
    inside = (o >= 0.0) & (o <= h)
    lo[par & inside] = -np.inf
    up[par & inside] = np.inf
    lo[par & ~inside] = np.inf
    up[par & ~inside] = -np.inf
    t0 = np.maximum(lo.max(axis=1), 0.0)
    t1 = up.min(axis=1)
    return t0, t1, t1 > t0


def ensure_macrocells(phi, tf: TransferFunction, cfg: RenderConfig,
                      grid: MacroCellGrid | None) -> MacroCellGrid | None:
    """Build value ranges if needed and refresh majorants for the current TF."""
    if not cfg.use_macrocells:
        return None
    if grid is None:
        if isinstance(phi, ScalarField):
            grid = macrocell_build(phi)
        else:
            grid = macrocell_from_model(phi)
    macrocell_set_tf(grid, tf)
    return grid


class _Scene:
    """Everything both architectures share for one frame, pre-typed for the
    kernels so the two drivers cannot diverge on argument preparation."""

    def __init__(self, phi, tf: TransferFunction, cam: Camera, cfg: RenderConfig,
                 grid: MacroCellGrid | None):
        dims, self.phi_args = _phi_pack(phi)
        if cfg.use_macrocells:
            if grid is None:
                raise ConfigError("macro-cell rendering needs a grid; call ensure_macrocells")
            if grid.vol_dims != tuple(dims):
                raise ConfigError(f"macro-cell grid dims {grid.vol_dims} != field dims {tuple(dims)}")
            self.mu = grid.mu_max
            self.ng = float(grid.n_g)
        else:
            self.mu = np.zeros((1, 1, 1), dtype=np.float32)
            self.ng = 1.0
        self.hx, self.hy, self.hz = (float(d) for d in dims)
        cv, crgb, ov, oa = tf.tables
        self.tf_tables = (cv, crgb, ov, oa)
        self.ds = np.float32(tf.density_scale)
        # Global majorant for path tracing without macro-cells; rounded
        # through f32 so candidate generation and acceptance share one value.
        self.mu_glob = float(np.float32(tf_max_opacity(tf, 0.0, 1.0) * tf.density_scale))
        self.s1 = np.float32(cfg.step_size)
        self.s2 = np.float32(cfg.max_step)
        self.pexp = np.float32(cfg.step_exponent)
        self.term = np.float32(TERMINATION)
        self.ka = np.float32(cfg.ambient)
        ld = cfg.light_direction
        self.sd = (np.float32(-ld[0]), np.float32(-ld[1]), np.float32(-ld[2]))
        self.light = tuple(np.float32(c) for c in cfg.light_radiance)
        self.bg = tuple(np.float32(c) for c in cfg.background)
        self.mode_shadow = cfg.mode == "raymarch_shadow"
        self.use_mc = bool(cfg.use_macrocells)
        self.skip = bool(cfg.skip_empty)
        self.seed = np.uint64(cfg.seed & 0xFFFFFFFFFFFFFFFF)
        self.rr_depth = int(cfg.rr_depth)

        origins, dirs = camera_rays(cam)
        t0, t1, hit = _isect_batch(origins, dirs, (self.hx, self.hy, self.hz))
        self.origins = origins[hit]
        self.dirs = dirs[hit]
        self.t0 = t0[hit]
        self.t1 = t1[hit]
        self.pixels = np.nonzero(hit)[0].astype(np.int64)
        self.width, self.height = cam.width, cam.height

    def new_image(self) -> np.ndarray:
        img = np.empty((self.width * self.height, 3), dtype=np.float32)
        img[:, 0] = self.bg[0]
        img[:, 1] = self.bg[1]
        img[:, 2] = self.bg[2]
        return img

    def rm_state(self):
        n = self.origins.shape[0]
        rmf = np.zeros((n, _rk.RMF), dtype=np.float32)
        rmf[:, 0] = 1.0                       # transmittance
        rmf[:, 4] = self.t0.astype(np.float32)  # sampling clock
        rmf[:, 8] = 1.0                       # shadow transmittance
        rmf[:, 9:12] = self.origins
        rmf[:, 12:15] = self.dirs
        rmd = np.zeros((n, _rk.RMD), dtype=np.float64)
        rmd[:, 1] = self.t1
        rmi = np.zeros((n, _rk.RMI), dtype=np.int64)
        rmi[:, 0] = self.pixels
        return rmf, rmd, rmi

    def pt_state(self):
        n = self.origins.shape[0]
        ptf = np.zeros((n, _rk.PTF), dtype=np.float32)
        ptf[:, 0:3] = 1.0                     # throughput
        ptf[:, 6:9] = self.origins
        ptf[:, 9:12] = self.dirs
        ptd = np.zeros((n, _rk.PTD), dtype=np.float64)
        ptd[:, 0] = self.t0
        ptd[:, 1] = self.t1
        pti = np.zeros((n, _rk.PTI), dtype=np.int64)
        pti[:, 0] = self.pixels
        return ptf, ptd, pti


def _finish(img: np.ndarray, scene: _Scene) -> np.ndarray:
    return img.reshape(scene.height, scene.width, 3)


def render_reference(phi, tf: TransferFunction, cam: Camera, cfg: RenderConfig,
                     grid: MacroCellGrid | None = None, frame: int = 0,
                     stats_out: list | None = None) -> np.ndarray:
    """Mega-kernel renderer: one frame, each ray runs to completion."""
    if cfg.use_macrocells and grid is None:
        grid = ensure_macrocells(phi, tf, cfg, None)
    sc = _Scene(phi, tf, cam, cfg, grid)
    img = sc.new_image()
    counters = np.zeros(2, dtype=np.int64)
    n = sc.origins.shape[0]
    begin = time.perf_counter()
    if n:
        cv, crgb, ov, oa = sc.tf_tables
        if cfg.mode == "pathtrace":
            ptf, ptd, pti = sc.pt_state()
            _rk.pt_reference(ptf, ptd, pti, n, sc.use_mc, sc.mu, sc.ng, sc.mu_glob,
                             sc.seed, np.uint64(frame), sc.rr_depth, sc.ds,
                             sc.sd[0], sc.sd[1], sc.sd[2],
                             sc.light[0], sc.light[1], sc.light[2],
                             sc.bg[0], sc.bg[1], sc.bg[2],
                             sc.hx, sc.hy, sc.hz,
                             *sc.phi_args, cv, crgb, ov, oa, img, counters)
        else:
            rmf, rmd, rmi = sc.rm_state()
            _rk.rm_reference(rmf, rmd, rmi, n, sc.mode_shadow, sc.use_mc, sc.skip,
                             sc.s1, sc.s2, sc.pexp, sc.term, sc.ka, sc.mu, sc.ng,
                             sc.sd[0], sc.sd[1], sc.sd[2],
                             sc.bg[0], sc.bg[1], sc.bg[2],
                             sc.hx, sc.hy, sc.hz,
                             *sc.phi_args, cv, crgb, ov, oa, sc.ds, img, counters)
    if stats_out is not None:
        stats_out.append(FrameStats(int(counters[0]), int(counters[1]), [n],
                                    (time.perf_counter() - begin) * 1e3))
    return _finish(img, sc)


def render_wavefront(phi, tf: TransferFunction, cam: Camera, cfg: RenderConfig,
                     grid: MacroCellGrid | None = None, frame: int = 0,
                     stats_out: list | None = None) -> np.ndarray:
    """Sample-streaming renderer: stage coordinates, batch-infer, shade,
    compact; pixel-identical to render_reference."""
    if cfg.use_macrocells and grid is None:
        grid = ensure_macrocells(phi, tf, cfg, None)
    sc = _Scene(phi, tf, cam, cfg, grid)
    img = sc.new_image()
    counters = np.zeros(2, dtype=np.int64)
    alive_hist = []
    begin = time.perf_counter()
    cv, crgb, ov, oa = sc.tf_tables
    if cfg.mode == "pathtrace":
        ptf, ptd, pti = sc.pt_state()
        while ptf.shape[0]:
            nn = ptf.shape[0]
            alive_hist.append(nn)
            stage_xyz = np.empty((nn, 3), dtype=np.float32)
            counts = np.empty(nn, dtype=np.int64)
            alive = np.empty(nn, dtype=np.uint8)
            _rk.pt_coord(ptf, ptd, pti, nn, sc.use_mc, sc.mu, sc.ng, sc.mu_glob,
                         sc.seed, np.uint64(frame),
                         sc.bg[0], sc.bg[1], sc.bg[2],
                         sc.light[0], sc.light[1], sc.light[2],
                         sc.rr_depth, sc.hx, sc.hy, sc.hz,
                         stage_xyz, counts, img, alive)
            values = np.empty(nn, dtype=np.float32)
            _rk.phi_eval_staged(stage_xyz, counts, 1, *sc.phi_args, values, counters)
            _rk.pt_shade(ptf, ptd, pti, nn, values, counts,
                         sc.seed, np.uint64(frame), sc.rr_depth, sc.ds,
                         sc.sd[0], sc.sd[1], sc.sd[2],
                         sc.light[0], sc.light[1], sc.light[2],
                         sc.bg[0], sc.bg[1], sc.bg[2],
                         cv, crgb, ov, oa, sc.hx, sc.hy, sc.hz,
                         img, alive, counters)
            keep = alive.astype(bool)
            if not keep.all():
                ptf = np.ascontiguousarray(ptf[keep])
                ptd = np.ascontiguousarray(ptd[keep])
                pti = np.ascontiguousarray(pti[keep])
    else:
        k = cfg.k_batch
        rmf, rmd, rmi = sc.rm_state()
        while rmf.shape[0]:
            nn = rmf.shape[0]
            alive_hist.append(nn)
            stage_xyz = np.empty((nn * k, 3), dtype=np.float32)
            stage_ts = np.empty(nn * k, dtype=np.float32)
            stage_sbar = np.empty(nn * k, dtype=np.float32)
            counts = np.empty(nn, dtype=np.int64)
            mdone = np.empty(nn, dtype=np.uint8)
            _rk.rm_coord(rmf, rmd, rmi, nn, k, sc.use_mc, sc.skip,
                         sc.s1, sc.s2, sc.pexp, sc.mu, sc.ng,
                         sc.hx, sc.hy, sc.hz, stage_xyz, stage_ts, stage_sbar, counts, mdone)
            values = np.empty(nn * k, dtype=np.float32)
            _rk.phi_eval_staged(stage_xyz, counts, k, *sc.phi_args, values, counters)
            alive = np.empty(nn, dtype=np.uint8)
            _rk.rm_shade(rmf, rmd, rmi, nn, k, values, stage_ts, stage_sbar, counts, mdone,
                         sc.mode_shadow, sc.s1, cv, crgb, ov, oa, sc.ds, sc.term, sc.ka,
                         sc.sd[0], sc.sd[1], sc.sd[2],
                         sc.bg[0], sc.bg[1], sc.bg[2],
                         sc.hx, sc.hy, sc.hz, img, alive)
            keep = alive.astype(bool)
            if not keep.all():
                rmf = np.ascontiguousarray(rmf[keep])
                rmd = np.ascontiguousarray(rmd[keep])
                rmi = np.ascontiguousarray(rmi[keep])
    if stats_out is not None:
        stats_out.append(FrameStats(int(counters[0]), int(counters[1]), alive_hist,
                                    (time.perf_counter() - begin) * 1e3))
    return _finish(img, sc)


_ARCHITECTURES = {"reference": render_reference, "wavefront": render_wavefront}


def render(phi, tf: TransferFunction, cam: Camera, cfg: RenderConfig,
           architecture: str = "wavefront", grid: MacroCellGrid | None = None,
           stats_out: list | None = None) -> np.ndarray:
    """Accumulate cfg.frames frames (frame index feeds the random stream) and
    return the running mean as (height, width, 3) float32."""
    try:
        one = _ARCHITECTURES[architecture]
    except KeyError:
        raise ConfigError(f"unknown architecture {architecture!r}; "
                          f"expected one of {sorted(_ARCHITECTURES)}") from None
    grid = ensure_macrocells(phi, tf, cfg, grid)
    fb = Framebuffer(cam.width, cam.height)
    for f in range(cfg.frames):
        frame = one(phi, tf, cam, cfg, grid=grid, frame=f, stats_out=stats_out)
        accumulate(fb, frame)
    return fb.mean.astype(np.float32)
