from __future__ import annotations

import struct

import numpy as np
import pytest

from neuralvol import fields
from neuralvol.errors import ConfigError, FormatError
from neuralvol.model import build_model
from neuralvol.sampler import AnalyticSampler, InCoreSampler
from neuralvol.trainer import (
    MODEL_MAGIC,
    TrainHistory,
    compression_ratio,
    decode,
    decode_slabs,
    load_model,
    save_model,
    train,
)
from neuralvol.volume import VolumeMeta, psnr


def tiny_model(batch=512, seed=0, **enc):
    encoding = {"otype": "HashGrid", "n_levels": 2, "n_features_per_level": 2,
                "log2_hashmap_size": 10, "base_resolution": 4}
    encoding.update(enc)
    cfg = {
        "encoding": encoding,
        "network": {"n_neurons": 16, "n_hidden_layers": 1},
        "batch_size": batch,
    }
    return build_model(cfg, dims=(16, 16, 16), value_range=(0.0, 1.0), seed=seed)


# --------------------------------------------------------------------------
# training loop

def test_train_rejects_zero_steps():
    model = tiny_model()
    with pytest.raises(ConfigError, match="steps"):
        train(model, AnalyticSampler(lambda p: p[:, 0], seed=0), steps=0)


def test_train_records_history_and_advances_steps():
    model = tiny_model(batch=256)
    hist = train(model, AnalyticSampler(lambda p: p[:, 0], seed=1), steps=5)
    assert hist.steps == [0, 1, 2, 3, 4]
    assert model.opt.t == 5
    assert all(ms >= 0 for ms in hist.wall_ms)
    assert hist.lrs == [0.005] * 5


def test_train_tap_sees_every_batch():
    model = tiny_model(batch=128)
    seen = []
    train(model, AnalyticSampler(lambda p: p[:, 0], seed=2), steps=7,
          tap=lambda b: seen.append(len(b)))
    assert seen == [128] * 7


def test_train_resume_continues_step_numbers():
    model = tiny_model(batch=128)
    sampler = AnalyticSampler(lambda p: p[:, 0], seed=3)
    train(model, sampler, steps=3)
    hist2 = train(model, sampler, steps=2)
    assert hist2.steps == [3, 4]


def test_history_rejects_non_increasing_steps():
    h = TrainHistory()
    h.append(0, 1.0, 0.005, 1.0)
    with pytest.raises(ConfigError):
        h.append(0, 0.9, 0.005, 1.0)


def test_history_csv_roundtrip(tmp_path):
    h = TrainHistory()
    for i in range(5):
        h.append(i, 1.0 / (i + 1), 0.005, 12.25 + i)
    path = tmp_path / "hist.csv"
    h.to_csv(path)
    assert path.read_text().splitlines()[0] == "step,loss,lr,ms"
    h2 = TrainHistory.from_csv(path)
    assert h2.steps == h.steps
    np.testing.assert_allclose(h2.losses, h.losses, rtol=1e-6)


# --------------------------------------------------------------------------
# decoding

def test_decode_constant_fit():
    model = tiny_model(batch=1024)
    train(model, AnalyticSampler(lambda p: np.full(p.shape[0], 0.5), seed=4), steps=300)
    out = decode(model, dims=(8, 8, 8))
    # L1 + Adam dithers around the optimum with amplitude ~lr, so allow a few lr
    np.testing.assert_allclose(out.data, 0.5, atol=0.015)
    assert out.meta.dtype == "f32"


def test_decode_slab_boundaries_invisible():
    model = tiny_model()
    a = decode(model, dims=(8, 8, 12), slab_z=12)
    b = decode(model, dims=(8, 8, 12), slab_z=5)  # 5 + 5 + 2
    np.testing.assert_array_equal(a.data, b.data)


def test_decode_slabs_cover_volume_once():
    model = tiny_model()
    starts, total = [], 0
    for z0, slab in decode_slabs(model, dims=(4, 4, 10), slab_z=4):
        starts.append(z0)
        total += slab.shape[0]
        assert slab.shape[1:] == (4, 4)
    assert starts == [0, 4, 8]
    assert total == 10


def test_decode_denormalizes_by_value_range():
    cfg = {"encoding": {"otype": "HashGrid", "n_levels": 2, "n_features_per_level": 2,
                        "log2_hashmap_size": 10, "base_resolution": 4},
           "network": {"n_neurons": 16, "n_hidden_layers": 1},
           "batch_size": 256}
    model = build_model(cfg, dims=(8, 8, 8), value_range=(-100.0, 300.0), seed=1)
    train(model, AnalyticSampler(lambda p: np.full(p.shape[0], 0.25), seed=5), steps=300)
    out = decode(model)
    # normalized 0.25 maps to -100 + 0.25 * 400 = 0
    assert abs(float(np.median(out.data))) < 2.0
    assert out.meta.value_range == (-100.0, 300.0)


def test_trilinear_targets_beat_nearest():
    f = fields.rasterize("gauss", (24, 24, 24))
    kw = dict(batch=2048, seed=3)
    m_tri, m_near = tiny_model(**kw), tiny_model(**kw)
    train(m_tri, InCoreSampler(f, seed=9, interpolation="trilinear"), steps=250)
    train(m_near, InCoreSampler(f, seed=9, interpolation="nearest"), steps=250)
    dec_tri = decode(m_tri, dims=f.meta.dims)
    dec_near = decode(m_near, dims=f.meta.dims)
    assert psnr(f, dec_tri) > psnr(f, dec_near)


# --------------------------------------------------------------------------
# compression ratio

def test_compression_ratio_reference_value():
    class Stub:
        n_params = 3_462_656

    meta = VolumeMeta(dims=(512, 512, 512), dtype="f32", value_range=(0.0, 1.0))
    assert compression_ratio(Stub(), meta) == pytest.approx(
        512 ** 3 * 4 / (3_462_656 * 4.0), rel=1e-12
    )
    assert compression_ratio(Stub(), meta) == pytest.approx(38.7615, abs=1e-3)


def test_compression_ratio_below_one_is_reported():
    class Stub:
        n_params = 10 ** 6

    meta = VolumeMeta(dims=(32, 32, 32), dtype="u8", value_range=(0.0, 255.0))
    ratio = compression_ratio(Stub(), meta)
    assert 0 < ratio < 1


def test_compression_ratio_scales_inversely_with_params():
    class Stub:
        def __init__(self, n):
            self.n_params = n

    meta = VolumeMeta(dims=(64, 64, 64), dtype="u16", value_range=(0.0, 1.0))
    assert compression_ratio(Stub(1000), meta) == pytest.approx(
        2 * compression_ratio(Stub(2000), meta)
    )


# --------------------------------------------------------------------------
# serialization

def test_save_load_roundtrip_bitwise(tmp_path):
    model = tiny_model(batch=256, seed=8)
    train(model, AnalyticSampler(lambda p: p[:, 1], seed=6), steps=10)
    p1 = tmp_path / "a.vnr"
    save_model(model, p1)
    m2 = load_model(p1)
    p2 = tmp_path / "b.vnr"
    save_model(m2, p2)
    assert p1.read_bytes() == p2.read_bytes()
    coords = np.random.default_rng(0).random((64, 3)).astype(np.float32)
    np.testing.assert_array_equal(model.eval_batch(coords), m2.eval_batch(coords))


def test_model_file_header_layout(tmp_path):
    model = tiny_model()
    path = tmp_path / "m.vnr"
    save_model(model, path)
    raw = path.read_bytes()
    assert raw[:4] == MODEL_MAGIC == b"VNRM"
    version, jlen = struct.unpack("<II", raw[4:12])
    assert version == 1
    import json

    cfg = json.loads(raw[12 : 12 + jlen])
    assert cfg["n_params"] == model.n_params
    assert cfg["dims"] == [16, 16, 16]
    assert len(raw) == 12 + jlen + 4 * model.n_params
    # keys are sorted for reproducible files
    assert raw[12 : 12 + jlen].decode() == json.dumps(cfg, sort_keys=True)


def test_load_rejects_bad_magic(tmp_path):
    path = tmp_path / "junk.vnr"
    path.write_bytes(b"NOPE" + b"\x00" * 32)
    with pytest.raises(FormatError, match="bad magic"):
        load_model(path)


def test_load_rejects_wrong_version(tmp_path):
    model = tiny_model()
    path = tmp_path / "m.vnr"
    save_model(model, path)
    raw = bytearray(path.read_bytes())
    raw[4:8] = struct.pack("<I", 9)
    path.write_bytes(bytes(raw))
    with pytest.raises(FormatError, match="version 9"):
        load_model(path)


def test_load_rejects_truncated_blob(tmp_path):
    model = tiny_model()
    path = tmp_path / "m.vnr"
    save_model(model, path)
    raw = path.read_bytes()
    path.write_bytes(raw[:-8])  # drop two floats
    with pytest.raises(FormatError, match=rf"{model.n_params - 2} floats, expected {model.n_params}"):
        load_model(path)


def test_load_rejects_truncated_config(tmp_path):
    model = tiny_model()
    path = tmp_path / "m.vnr"
    save_model(model, path)
    raw = path.read_bytes()
    path.write_bytes(raw[:40])
    with pytest.raises(FormatError, match="truncated config"):
        load_model(path)


def test_save_rejects_f64_models(tmp_path):
    cfg = {"encoding": {"otype": "HashGrid", "n_levels": 2, "n_features_per_level": 2,
                        "log2_hashmap_size": 10, "base_resolution": 4},
           "network": {"n_neurons": 16, "n_hidden_layers": 1}}
    model = build_model(cfg, seed=0, dtype=np.float64)
    with pytest.raises(ConfigError, match="float32"):
        save_model(model, tmp_path / "m.vnr")


def test_loaded_model_can_resume_training(tmp_path):
    model = tiny_model(batch=256)
    sampler = AnalyticSampler(lambda p: p[:, 0], seed=7)
    train(model, sampler, steps=50)
    path = tmp_path / "m.vnr"
    save_model(model, path)
    m2 = load_model(path)
    hist = train(m2, AnalyticSampler(lambda p: p[:, 0], seed=8), steps=30)
    assert hist.losses[-1] < 0.3  # keeps fitting rather than diverging
