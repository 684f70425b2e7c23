from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from neuralvol import _kernels
from neuralvol.encoding import (
    HASH_PRIMES,
    EncoderConfig,
    GridEncoder,
    corner_weights,
    encode,
    encode_backward,
    hash_index,
    level_resolution,
    make_encoder,
)
from neuralvol.errors import ConfigError


def hash_oracle(entries: int, v) -> int:
    """Independent reimplementation of the XOR-prime vertex hash."""
    h = 0
    for a in range(3):
        h ^= (int(v[a]) * HASH_PRIMES[a]) & 0xFFFFFFFF
        h &= 0xFFFFFFFF
    return h % entries


def grid_cfg(**kw) -> EncoderConfig:
    base = dict(kind="hashgrid", n_levels=1, n_features_per_level=1,
                log2_hashmap_size=15, base_resolution=4, per_level_scale=2.0)
    base.update(kw)
    return EncoderConfig(**base)


# --------------------------------------------------------------------------
# level math and hashing

def test_level_resolution_examples():
    cfg = grid_cfg(n_levels=4)
    assert level_resolution(cfg, 0) == 4
    assert level_resolution(cfg, 3) == 32
    assert level_resolution(grid_cfg(n_levels=3, base_resolution=14), 2) == 56


def test_level_resolution_non_integer_scale():
    # floor(16 * 1.5^2) = floor(36.0) = 36
    assert level_resolution(grid_cfg(n_levels=3, base_resolution=16, per_level_scale=1.5), 2) == 36


def test_level_resolution_range_check():
    with pytest.raises(ConfigError):
        level_resolution(grid_cfg(n_levels=2), 2)


def test_hash_index_dense_row_major():
    # dense layout: (z*R1 + y)*R1 + x with R1 = resolution+1
    assert hash_index(125, 4, (1, 2, 3)) == 86
    assert hash_index(125, 4, (0, 0, 0)) == 0
    assert hash_index(125, 4, (4, 4, 4)) == 124


def test_hash_index_hashed_matches_oracle():
    entries = 2 ** 15
    assert hash_index(entries, 64, (7, 11, 13)) == hash_oracle(entries, (7, 11, 13))
    r = np.random.default_rng(7)
    for _ in range(200):
        v = tuple(int(x) for x in r.integers(0, 65, size=3))
        assert hash_index(entries, 64, v) == hash_oracle(entries, v)


def test_hash_index_u32_wraparound():
    # large vertex coordinates must wrap at 32 bits before the modulo
    entries = 1021
    v = (4000, 3999, 4001)
    assert hash_index(entries, 4096, v, dense=False) == hash_oracle(entries, v)


# --------------------------------------------------------------------------
# corner weights

def test_corner_weights_sum_to_one(rng):
    fr = rng.random((64, 3)).astype(np.float32)
    w = corner_weights(fr)
    assert w.shape == (64, 8)
    np.testing.assert_allclose(w.sum(axis=1), 1.0, atol=1e-6)
    assert np.all(w >= 0)


def test_corner_weights_at_vertex():
    w = corner_weights(np.zeros((1, 3), dtype=np.float32))
    np.testing.assert_allclose(w[0], [1, 0, 0, 0, 0, 0, 0, 0], atol=0)


# --------------------------------------------------------------------------
# encoders: shapes and direct values

def test_identity_encoder_passthrough(rng):
    enc = make_encoder(EncoderConfig(kind="identity"), rng=np.random.default_rng(0))
    p = rng.random((5, 3)).astype(np.float32)
    np.testing.assert_array_equal(encode(enc, p), p)
    assert enc.config.out_width == 3


def test_frequency_encoder_layout():
    enc = make_encoder(EncoderConfig(kind="frequency", n_frequencies=2), rng=np.random.default_rng(0))
    p = np.array([[0.25, 0.5, 1.0]], dtype=np.float32)
    out = encode(enc, p)
    assert out.shape == (1, 3 * 2 * 2)
    # axis-major, then frequency, then (sin, cos); phase = p * 2^k * pi
    want = []
    for a in range(3):
        for k in range(2):
            ph = float(p[0, a]) * (2.0 ** k) * np.pi
            want += [np.sin(ph), np.cos(ph)]
    np.testing.assert_allclose(out[0], want, atol=1e-6)


def test_oneblob_encoder_gaussian_shape():
    enc = make_encoder(EncoderConfig(kind="oneblob", n_bins=4), rng=np.random.default_rng(0))
    p = np.array([[0.125, 0.125, 0.125]], dtype=np.float32)
    out = encode(enc, p)
    assert out.shape == (1, 12)
    sigma = 1.0 / 4
    centers = (np.arange(4) + 0.5) / 4
    want = np.exp(-((0.125 - centers) ** 2) / (2 * sigma ** 2))
    np.testing.assert_allclose(out[0, :4], want, atol=1e-6)
    # peak lands in the bin containing the point
    assert out[0, :4].argmax() == 0


def test_grid_encoder_zero_params_zero_output(rng):
    enc = GridEncoder(grid_cfg(n_levels=3, n_features_per_level=2), rng=np.random.default_rng(0))
    enc.params[:] = 0.0
    out = encode(enc, rng.random((10, 3)).astype(np.float32))
    assert out.shape == (10, 6)
    np.testing.assert_array_equal(out, 0.0)


def test_dense_grid_single_level_matches_trilinear_oracle():
    cfg = EncoderConfig(kind="densegrid", n_levels=1, n_features_per_level=1,
                        log2_hashmap_size=15, base_resolution=2, per_level_scale=2.0)
    enc = make_encoder(cfg, rng=np.random.default_rng(0))
    # resolution 2 -> 3^3 = 27 vertices; set params to vertex x-coordinate
    r1 = 3
    vals = np.zeros(27, dtype=np.float32)
    for z in range(r1):
        for y in range(r1):
            for x in range(r1):
                vals[(z * r1 + y) * r1 + x] = x
    enc.params[:] = vals
    # p=(0.3,0.6,0.9): s = p*2, cell=(0,1,1), fr=(0.6,0.2,0.8)
    out = encode(enc, np.array([[0.3, 0.6, 0.9]], dtype=np.float32))
    # blend of x-coordinates: 0*(1-0.6) + 1*0.6 = 0.6 regardless of y,z corners
    assert out[0, 0] == pytest.approx(0.6, abs=1e-6)


def test_grid_encoder_cell_clamp_at_upper_border():
    cfg = grid_cfg(kind="densegrid", base_resolution=2)
    enc = make_encoder(cfg, rng=np.random.default_rng(0))
    enc.params[:] = np.arange(27, dtype=np.float32)
    # p very close to 1: s -> 2.0, cell clamps to resolution-1 = 1, fr -> 1
    p = np.array([[0.999999, 0.999999, 0.999999]], dtype=np.float32)
    out = encode(enc, p)
    assert np.isfinite(out).all()
    # should approach the (2,2,2) vertex value = 26
    assert out[0, 0] == pytest.approx(26.0, abs=1e-3)


def test_entries_capped_by_table_size():
    enc = GridEncoder(grid_cfg(n_levels=6, base_resolution=4, log2_hashmap_size=10),
                      rng=np.random.default_rng(0))
    for lvl, res in enumerate(enc.level_resolutions):
        dense = (res + 1) ** 3
        assert enc.level_entries[lvl] == min(2 ** 10, dense)


def test_densegrid_ignores_table_cap():
    cfg = EncoderConfig(kind="densegrid", n_levels=3, n_features_per_level=1,
                        log2_hashmap_size=10, base_resolution=4, per_level_scale=2.0)
    enc = make_encoder(cfg, rng=np.random.default_rng(0))
    for lvl, res in enumerate(enc.level_resolutions):
        assert enc.level_entries[lvl] == (res + 1) ** 3


def test_param_init_range():
    enc = GridEncoder(grid_cfg(n_levels=8, n_features_per_level=4), rng=np.random.default_rng(3))
    assert enc.params.dtype == np.float32
    assert np.all(np.abs(enc.params) <= 1e-4)
    assert np.abs(enc.params).max() > 1e-5  # actually randomized


# --------------------------------------------------------------------------
# gradients

def test_backward_zero_gradient_is_noop(rng):
    enc = GridEncoder(grid_cfg(n_levels=2, n_features_per_level=2), rng=np.random.default_rng(0))
    p = rng.random((6, 3)).astype(np.float32)
    encode_backward(enc, p, np.zeros((6, 4), dtype=np.float32))
    np.testing.assert_array_equal(enc.param_grads, 0.0)


def test_backward_vertex_point_touches_one_slot_per_level():
    enc = GridEncoder(grid_cfg(kind="densegrid", n_levels=2, base_resolution=2),
                      rng=np.random.default_rng(0))
    # p at the exact center vertex of level 0: s = p*2 = (1,1,1) -> fr = 0
    p = np.array([[0.5, 0.5, 0.5]], dtype=np.float32)
    encode_backward(enc, p, np.ones((1, 2), dtype=np.float32))
    for lvl in range(2):
        o = enc.level_offsets[lvl]
        n = enc.level_entries[lvl]
        g = enc.param_grads[o:o + n]
        assert np.count_nonzero(g) == 1
        assert g.sum() == pytest.approx(1.0)


@pytest.mark.parametrize("kind,base", [("hashgrid", 12), ("densegrid", 3)])
def test_grid_gradients_match_finite_differences(kind, base):
    # base 12 with T=2^10 forces hash collisions on both hashgrid levels
    cfg = EncoderConfig(kind=kind, n_levels=2, n_features_per_level=2,
                        log2_hashmap_size=10, base_resolution=base, per_level_scale=2.0)
    enc = make_encoder(cfg, dtype=np.float64, rng=np.random.default_rng(11))
    enc.params[:] = np.random.default_rng(12).normal(0, 0.1, enc.params.shape)
    r = np.random.default_rng(13)
    p = r.random((5, 3))
    dl = r.normal(0, 1, (5, cfg.out_width))

    encode_backward(enc, p, dl)
    got = enc.param_grads.copy()

    h = 1e-5
    # loss = sum(dl * encode(p)); finite-difference every touched parameter
    touched = np.nonzero(got)[0]
    assert touched.size > 0
    for i in touched[:40]:
        orig = enc.params[i]
        enc.params[i] = orig + h
        lp = float(np.sum(dl * encode(enc, p)))
        enc.params[i] = orig - h
        lm = float(np.sum(dl * encode(enc, p)))
        enc.params[i] = orig
        fd = (lp - lm) / (2 * h)
        assert got[i] == pytest.approx(fd, rel=1e-4, abs=1e-8)


def test_grads_accumulate_across_calls(rng):
    enc = GridEncoder(grid_cfg(), rng=np.random.default_rng(0))
    p = rng.random((4, 3)).astype(np.float32)
    dl = np.ones((4, 1), dtype=np.float32)
    encode_backward(enc, p, dl)
    g1 = enc.param_grads.copy()
    encode_backward(enc, p, dl)
    np.testing.assert_allclose(enc.param_grads, 2 * g1, atol=1e-6)


# --------------------------------------------------------------------------
# properties

@given(st.integers(min_value=0, max_value=2 ** 31))
@settings(max_examples=50, deadline=None)
def test_hash_determinism(seed):
    r = np.random.default_rng(seed)
    v = tuple(int(x) for x in r.integers(0, 2 ** 20, size=3))
    entries = int(r.integers(1, 2 ** 24))
    a = hash_index(entries, 10 ** 6, v, dense=False)
    b = hash_index(entries, 10 ** 6, v, dense=False)
    assert a == b and 0 <= a < entries


def test_dense_and_hash_agree_when_table_large_enough(rng):
    # when every level fits in the table, hashgrid stores densely and must
    # produce the same features as an explicit densegrid with equal params
    r = np.random.default_rng(21)
    cfg_h = EncoderConfig(kind="hashgrid", n_levels=2, n_features_per_level=2,
                          log2_hashmap_size=15, base_resolution=3, per_level_scale=2.0)
    cfg_d = EncoderConfig(kind="densegrid", n_levels=2, n_features_per_level=2,
                          log2_hashmap_size=15, base_resolution=3, per_level_scale=2.0)
    eh = make_encoder(cfg_h, rng=np.random.default_rng(5))
    ed = make_encoder(cfg_d, rng=np.random.default_rng(5))
    assert eh.params.shape == ed.params.shape
    ed.params[:] = eh.params
    p = r.random((32, 3)).astype(np.float32)
    np.testing.assert_array_equal(encode(eh, p), encode(ed, p))


@pytest.mark.parametrize("kind,width", [
    ("identity", 3),
    ("frequency", 3 * 32 * 2),
    ("oneblob", 3 * 64),
    ("hashgrid", 8 * 4),
])
def test_out_width_defaults(kind, width):
    assert EncoderConfig(kind=kind).out_width == width


def test_config_validation():
    with pytest.raises(ConfigError):
        EncoderConfig(kind="hashgrid", n_features_per_level=3)
    with pytest.raises(ConfigError):
        EncoderConfig(kind="hashgrid", log2_hashmap_size=9)
    with pytest.raises(ConfigError):
        EncoderConfig(kind="hashgrid", log2_hashmap_size=25)
    with pytest.raises(ConfigError):
        EncoderConfig(kind="nope")
    with pytest.raises(ConfigError):
        EncoderConfig(kind="hashgrid", n_levels=0)


# --------------------------------------------------------------------------
# numba kernel equivalence

def test_kernel_forward_matches_numpy_path(rng):
    cfg = EncoderConfig(kind="hashgrid", n_levels=4, n_features_per_level=2,
                        log2_hashmap_size=12, base_resolution=4, per_level_scale=2.0)
    enc = make_encoder(cfg, rng=np.random.default_rng(9))
    coords = rng.random((257, 3)).astype(np.float32)
    want = encode(enc, coords)

    res, entries, dense, offsets = enc.kernel_tables()
    b, nf = coords.shape[0], cfg.n_features_per_level
    out = np.empty((b, cfg.out_width), dtype=np.float32)
    idx_cache = np.empty((b, cfg.n_levels, 8), dtype=np.int64)
    w_cache = np.empty((b, cfg.n_levels, 8), dtype=np.float32)
    _kernels.grid_encode_fwd(coords, enc.params, offsets, res, entries, dense,
                             nf, idx_cache, w_cache, out)
    np.testing.assert_array_equal(out, want)


def test_kernel_backward_matches_numpy_path(rng):
    cfg = EncoderConfig(kind="hashgrid", n_levels=3, n_features_per_level=4,
                        log2_hashmap_size=10, base_resolution=4, per_level_scale=2.0)
    enc = make_encoder(cfg, rng=np.random.default_rng(14))
    coords = rng.random((129, 3)).astype(np.float32)
    dl = rng.normal(0, 1, (129, cfg.out_width)).astype(np.float32)

    encode_backward(enc, coords, dl)
    want = enc.param_grads.copy()
    enc.param_grads[:] = 0.0

    res, entries, dense, offsets = enc.kernel_tables()
    b, nf = coords.shape[0], cfg.n_features_per_level
    out = np.empty((b, cfg.out_width), dtype=np.float32)
    idx_cache = np.empty((b, cfg.n_levels, 8), dtype=np.int64)
    w_cache = np.empty((b, cfg.n_levels, 8), dtype=np.float32)
    _kernels.grid_encode_fwd(coords, enc.params, offsets, res, entries, dense,
                             nf, idx_cache, w_cache, out)
    _kernels.grid_encode_bwd(dl, idx_cache, w_cache, nf, enc.param_grads)
    np.testing.assert_allclose(enc.param_grads, want, atol=1e-5)
