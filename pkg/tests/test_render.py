"""Renderer contracts: cross-architecture equality, mode semantics, counters.

The central oracle is exact: the sample-streaming renderer must reproduce the
per-ray mega-kernel bit for bit in every mode, with and without macro-cells,
for dense-grid and neural fields alike.  Statistical modes get analytic
oracles (Beer-Lambert transmittance) on top.
"""
import math

import numpy as np
import pytest

from neuralvol import fields
from neuralvol import _render_kernels as _rk
from neuralvol.camera import Camera
from neuralvol.errors import ConfigError
from neuralvol.macrocell import macrocell_build, macrocell_from_model, macrocell_set_tf
from neuralvol.model import build_model
from neuralvol.render import (
    Framebuffer,
    RenderConfig,
    accumulate,
    ensure_macrocells,
    render,
    render_config_from_json,
    render_reference,
    render_wavefront,
)
from neuralvol.rng import RngStream
from neuralvol.transfer import TransferFunction, grayscale_ramp

from conftest import make_field

MODES = ("raymarch", "raymarch_shadow", "pathtrace")


def scene_tf(ds=2.0):
    return TransferFunction(
        color_points=[[0.0, 0.1, 0.2, 0.9], [0.5, 0.9, 0.4, 0.1], [1.0, 1.0, 0.9, 0.2]],
        opacity_points=[[0.0, 0.0], [0.35, 0.0], [0.55, 0.8], [1.0, 1.0]],
        density_scale=ds,
    )


def scene_cam(w=16, h=16):
    return Camera(eye=(30.0, 26.0, 34.0), center=(8.0, 8.0, 8.0), up=(0.0, 1.0, 0.0),
                  vfov_deg=35.0, width=w, height=h)


def cells_grid(phi, tf, n_g=4):
    # 16^3 volumes get 4^3 macro-cells, enough that skipping and per-cell
    # majorants actually differ from the single-cell degenerate case.
    if hasattr(phi, "normalized"):
        grid = macrocell_build(phi, n_g)
    else:
        grid = macrocell_from_model(phi, n_g)
    macrocell_set_tf(grid, tf)
    return grid


def spicy_model(seed=5, dims=(16, 16, 16)):
    """Small hash-grid model with re-randomized parameters so the field is
    spatially varied (fresh init is deliberately near zero)."""
    cfg = {
        "encoding": {"otype": "HashGrid", "n_levels": 4, "n_features_per_level": 2,
                     "log2_hashmap_size": 10, "base_resolution": 4, "per_level_scale": 1.5},
        "network": {"n_neurons": 16, "n_hidden_layers": 2},
    }
    m = build_model(cfg, dims=dims, seed=seed)
    r = np.random.default_rng(seed + 1)
    m.encoder.params[:] = r.normal(0, 0.5, m.encoder.params.shape).astype(np.float32)
    return m


@pytest.fixture(scope="module")
def gauss16():
    return fields.rasterize("gauss", (16, 16, 16))


def test_u01_matches_python_stream():
    for seed, frame in ((0, 0), (7, 3), (2**63 + 11, 40000)):
        stream = RngStream(seed=seed, frame=frame)
        for pixel in (0, 1, 513, 2**31):
            for event in (0, 1, 2, 77, 10**6):
                got = _rk._u01(np.uint64(seed), np.uint64(frame),
                               np.uint64(pixel), np.uint64(event))
                assert got == stream.uniform(pixel, event)


def test_wavefront_equals_reference_grid_field(gauss16):
    tf = scene_tf()
    cam = scene_cam()
    grid = cells_grid(gauss16, tf)
    for mode in MODES:
        for mc in (False, True):
            cfg = RenderConfig(mode=mode, use_macrocells=mc, seed=11,
                               background=(0.25, 0.5, 0.75))
            a = render_reference(gauss16, tf, cam, cfg, grid=grid if mc else None, frame=1)
            b = render_wavefront(gauss16, tf, cam, cfg, grid=grid if mc else None, frame=1)
            assert np.array_equal(a, b), f"{mode} mc={mc} diverged"


def test_wavefront_equals_reference_neural_field():
    m = spicy_model()
    tf = scene_tf()
    cam = scene_cam()
    grid = cells_grid(m, tf)
    for mode in MODES:
        for mc in (False, True):
            cfg = RenderConfig(mode=mode, use_macrocells=mc, seed=4)
            a = render_reference(m, tf, cam, cfg, grid=grid if mc else None)
            b = render_wavefront(m, tf, cam, cfg, grid=grid if mc else None)
            assert np.array_equal(a, b), f"{mode} mc={mc} diverged on model"


def test_k_batching_is_scheduling_only(gauss16):
    tf = scene_tf()
    cam = scene_cam()
    grid = cells_grid(gauss16, tf)
    for mode in ("raymarch", "raymarch_shadow"):
        base = None
        for k in (1, 2, 4, 8, 16):
            cfg = RenderConfig(mode=mode, use_macrocells=True, k_batch=k, seed=2)
            img = render_wavefront(gauss16, tf, cam, cfg, grid=grid)
            if base is None:
                base = img
            else:
                assert np.array_equal(base, img), f"K={k} changed {mode} pixels"


def test_macrocells_with_stepping_disabled_match_plain(gauss16):
    tf = scene_tf()
    cam = scene_cam()
    grid = cells_grid(gauss16, tf)
    for mode in ("raymarch", "raymarch_shadow"):
        plain = render_reference(gauss16, tf, cam, RenderConfig(mode=mode, seed=1))
        locked = RenderConfig(mode=mode, use_macrocells=True, seed=1,
                              max_step=1.0, skip_empty=False)
        got = render_reference(gauss16, tf, cam, locked, grid=grid)
        assert np.array_equal(plain, got), mode


def test_empty_space_skipping_is_sound(gauss16):
    # TF is exactly zero below 0.35, so cells whose range tops out below that
    # have mu_max = 0; skipping them must not change a single bit.
    tf = scene_tf()
    cam = scene_cam()
    grid = cells_grid(gauss16, tf)
    assert (grid.mu_max == 0).any() and (grid.mu_max > 0).any()
    for mode in ("raymarch", "raymarch_shadow"):
        on = RenderConfig(mode=mode, use_macrocells=True, seed=1, skip_empty=True)
        off = RenderConfig(mode=mode, use_macrocells=True, seed=1, skip_empty=False)
        a = render_reference(gauss16, tf, cam, on, grid=grid)
        b = render_reference(gauss16, tf, cam, off, grid=grid)
        assert np.array_equal(a, b), mode


def test_zero_opacity_tf_gives_background_exactly(gauss16):
    tf = TransferFunction(
        color_points=[[0.0, 1, 0, 0], [1.0, 0, 1, 0]],
        opacity_points=[[0.0, 0.0], [1.0, 0.0]],
        density_scale=3.0,
    )
    bg = (0.3, 0.6, 0.9)
    cam = scene_cam(8, 8)
    want = np.empty((8, 8, 3), dtype=np.float32)
    want[:, :] = np.array(bg, dtype=np.float32)
    for mode in MODES:
        for mc in (False, True):
            cfg = RenderConfig(mode=mode, use_macrocells=mc, seed=0, background=bg)
            for arch in ("reference", "wavefront"):
                img = render(gauss16, tf, cam, cfg, architecture=arch)
                assert np.array_equal(img, want), f"{mode} mc={mc} {arch}"


def test_camera_missing_volume_background_and_zero_evals(gauss16):
    cam = Camera(eye=(100.0, 8.0, 8.0), center=(200.0, 8.0, 8.0), up=(0.0, 1.0, 0.0),
                 vfov_deg=30.0, width=6, height=6)
    tf = scene_tf()
    bgc = np.array((0.1, 0.2, 0.3), dtype=np.float32)
    for mode in MODES:
        cfg = RenderConfig(mode=mode, seed=0, background=tuple(bgc))
        for one in (render_reference, render_wavefront):
            stats = []
            img = one(gauss16, tf, cam, cfg, stats_out=stats)
            assert np.array_equal(img, np.broadcast_to(bgc, (6, 6, 3)))
            assert stats[0].evals == 0


def test_opaque_slab_full_alpha():
    data = np.full((8, 8, 8), 0.5, dtype=np.float32)
    f = make_field(data, (0.0, 0.5))  # normalized value 1 everywhere
    tf = TransferFunction(
        color_points=[[0.0, 0.9, 0.25, 0.1], [1.0, 0.9, 0.25, 0.1]],
        opacity_points=[[0.0, 1.0], [1.0, 1.0]],
        density_scale=1.0,
    )
    cam = Camera(eye=(4.0, 4.0, 30.0), center=(4.0, 4.0, 4.0), up=(0.0, 1.0, 0.0),
                 vfov_deg=10.0, width=3, height=3)
    img = render_reference(f, tf, cam, RenderConfig(mode="raymarch", background=(0, 0, 1)))
    assert np.allclose(img, np.array([0.9, 0.25, 0.1], np.float32), atol=1e-3)


def test_pathtrace_beer_lambert_transmittance():
    # Purely absorbing homogeneous box (black albedo): mean pixel over many
    # frames estimates exp(-sigma L) times the background.
    data = np.full((8, 8, 8), 0.5, dtype=np.float32)
    f = make_field(data, (0.0, 1.0))
    sigma = 0.5 * 0.35  # tf opacity at value 0.5, times density_scale
    tf = TransferFunction(
        color_points=[[0.0, 0, 0, 0], [1.0, 0, 0, 0]],
        opacity_points=grayscale_ramp().opacity_points,
        density_scale=0.35,
    )
    cam = Camera(eye=(4.0, 4.0, 30.0), center=(4.0, 4.0, 4.0), up=(0.0, 1.0, 0.0),
                 vfov_deg=5.0, width=1, height=1)
    n = 10_000
    cfg = RenderConfig(mode="pathtrace", frames=n, seed=123, background=(1.0, 1.0, 1.0))
    img = render(f, tf, cam, cfg, architecture="reference")
    p = math.exp(-sigma * 8.0)
    sd = math.sqrt(p * (1 - p) / n)
    assert abs(float(img[0, 0, 0]) - p) < 3 * sd


def test_shadow_mode_darkens(gauss16):
    tf = scene_tf()
    cam = scene_cam()
    plain = render_reference(gauss16, tf, cam, RenderConfig(mode="raymarch", seed=1))
    shadowed = render_reference(gauss16, tf, cam, RenderConfig(mode="raymarch_shadow", seed=1))
    assert np.all(shadowed <= plain + 1e-7)
    assert shadowed.sum() < plain.sum()  # some occlusion must exist in this scene


def test_macrocells_never_increase_evals():
    f = fields.rasterize("gauss", (32, 32, 32))
    tf = scene_tf()
    cam = Camera(eye=(60.0, 52.0, 68.0), center=(16.0, 16.0, 16.0), up=(0.0, 1.0, 0.0),
                 vfov_deg=35.0, width=16, height=16)
    grid = macrocell_build(f, 8)
    macrocell_set_tf(grid, tf)
    for mode in MODES:
        evals = {}
        for mc in (False, True):
            cfg = RenderConfig(mode=mode, use_macrocells=mc, seed=9)
            stats = []
            render_reference(f, tf, cam, cfg, grid=grid if mc else None, stats_out=stats)
            evals[mc] = stats[0].evals
        assert evals[True] <= evals[False], f"{mode}: {evals}"
    # the corner cells of this scene really are empty, so marching must skip work
    cfg = RenderConfig(mode="raymarch", use_macrocells=True, seed=9)
    stats = []
    render_reference(f, tf, cam, cfg, grid=grid, stats_out=stats)
    plain = []
    render_reference(f, tf, cam, RenderConfig(mode="raymarch", seed=9), stats_out=plain)
    assert stats[0].evals < plain[0].evals


def test_alive_counts_nonincreasing_and_pt_evals_match(gauss16):
    tf = scene_tf()
    cam = scene_cam()
    cfg = RenderConfig(mode="pathtrace", seed=5)
    sr, sw = [], []
    render_reference(gauss16, tf, cam, cfg, stats_out=sr)
    render_wavefront(gauss16, tf, cam, cfg, stats_out=sw)
    alive = sw[0].alive_per_iteration
    assert all(a >= b for a, b in zip(alive, alive[1:]))
    assert sw[0].evals == sr[0].evals  # PT stages exactly what it consumes


def test_stale_majorants_flagged(gauss16):
    weak = scene_tf(ds=0.05)
    strong = scene_tf(ds=6.0)
    cfg = RenderConfig(mode="pathtrace", use_macrocells=True, seed=3)
    grid = ensure_macrocells(gauss16, weak, cfg, None)  # majorants for the weak TF
    stats = []
    render_reference(gauss16, strong, scene_cam(), cfg, grid=grid, stats_out=stats)
    assert stats[0].violations > 0


def test_grid_dims_mismatch_rejected(gauss16):
    other = fields.rasterize("gauss", (8, 8, 8))
    tf = scene_tf()
    cfg = RenderConfig(mode="raymarch", use_macrocells=True)
    grid = ensure_macrocells(other, tf, cfg, None)
    with pytest.raises(ConfigError):
        render_reference(gauss16, tf, scene_cam(), cfg, grid=grid)


def test_unrenderable_fields_rejected(gauss16):
    tf = scene_tf()
    cam = scene_cam(4, 4)
    freq = build_model({"encoding": {"otype": "Frequency"}}, dims=(8, 8, 8))
    with pytest.raises(ConfigError):
        render_reference(freq, tf, cam, RenderConfig())
    f64_model = build_model(dims=(8, 8, 8), dtype=np.float64)
    with pytest.raises(ConfigError):
        render_reference(f64_model, tf, cam, RenderConfig())
    with pytest.raises(ConfigError):
        render_reference(np.zeros((4, 4, 4)), tf, cam, RenderConfig())
    with pytest.raises(ConfigError):
        render(gauss16, tf, cam, RenderConfig(), architecture="gpu")


def test_accumulate_contract(rng):
    fb = Framebuffer(4, 3)
    frames = [rng.random((3, 4, 3)).astype(np.float32) for _ in range(50)]
    assert np.array_equal(accumulate(fb, frames[0], 1), frames[0].astype(np.float64))
    for i, fr in enumerate(frames[1:], start=2):
        mean = accumulate(fb, fr, i)
    fb2 = Framebuffer(4, 3)
    for fr in reversed(frames):
        mean2 = accumulate(fb2, fr)
    assert np.allclose(mean, mean2, atol=1e-12)

    same = Framebuffer(4, 3)
    for _ in range(7):
        accumulate(same, frames[0])
    assert np.allclose(same.mean, frames[0], atol=1e-12)

    with pytest.raises(ConfigError):
        accumulate(fb, frames[0], 99)
    with pytest.raises(ConfigError):
        accumulate(fb, np.zeros((2, 2, 3), np.float32))


def test_render_means_individual_frames(gauss16):
    tf = scene_tf()
    cam = scene_cam(6, 6)
    cfg = RenderConfig(mode="pathtrace", frames=3, seed=21)
    mean = render(gauss16, tf, cam, cfg, architecture="reference")
    singles = [render_reference(gauss16, tf, cam, cfg, frame=i) for i in range(3)]
    want = (np.stack(singles).astype(np.float64).sum(axis=0) / 3).astype(np.float32)
    assert np.array_equal(mean, want)


def test_render_config_json():
    cfg = RenderConfig(mode="pathtrace", use_macrocells=True, frames=8, seed=9,
                       k_batch=4, background=(0.1, 0.2, 0.3),
                       light_direction=(0.0, 1.0, 0.0))
    back = render_config_from_json(cfg.to_json())
    assert back == cfg
    alias = render_config_from_json({"mode": "raymarch", "spp": 5, "k": 2})
    assert alias.frames == 5 and alias.k_batch == 2
    with pytest.raises(ConfigError):
        render_config_from_json({"mode": "xray"})
    with pytest.raises(ConfigError):
        render_config_from_json({"step_size": -1.0})
    with pytest.raises(ConfigError):
        render_config_from_json({"light": {"direction": [0, 0, 0]}})
    with pytest.raises(ConfigError):
        render_config_from_json([1, 2])


def test_framebuffer_export_clamps():
    fb = Framebuffer(2, 2)
    frame = np.array([[[1.5, -0.25, 0.5], [0.0, 1.0, 0.25]],
                      [[2.0, 0.999, 0.001], [0.6, 0.4, 0.2]]], dtype=np.float32)
    accumulate(fb, frame)
    u8 = fb.to_u8()
    assert u8[0, 0, 0] == 255 and u8[0, 0, 1] == 0
    assert u8[0, 1, 1] == 255
    assert u8[0, 0, 2] == 128  # 0.5 -> 127.5 -> rounds up
