from __future__ import annotations

import numpy as np
import pytest

from neuralvol import fields
from neuralvol.volume import ScalarField, VolumeMeta


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def random_field_8(rng):
    data = rng.random((8, 8, 8)).astype(np.float32)
    meta = VolumeMeta(dims=(8, 8, 8), dtype="f32", value_range=(0.0, 1.0))
    return ScalarField(meta=meta, data=data)


@pytest.fixture
def gauss_16():
    return fields.rasterize("gauss", (16, 16, 16))


def make_field(data: np.ndarray, value_range=None) -> ScalarField:
    dz, dy, dx = data.shape
    tag = {np.dtype("uint8"): "u8", np.dtype("uint16"): "u16",
           np.dtype("float32"): "f32", np.dtype("float64"): "f64"}[data.dtype]
    meta = VolumeMeta(dims=(dx, dy, dz), dtype=tag, value_range=value_range)
    return ScalarField(meta=meta, data=data)
