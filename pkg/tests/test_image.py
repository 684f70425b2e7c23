"""PPM and PNG byte-level round trips."""
import struct
import zlib

import numpy as np
import pytest

from neuralvol.errors import FormatError
from neuralvol.image import load_png, load_ppm, save_png, save_ppm


def rand_img(rng, h=5, w=7):
    return rng.integers(0, 256, size=(h, w, 3), dtype=np.uint8)


def test_ppm_roundtrip(tmp_path, rng):
    img = rand_img(rng)
    p = tmp_path / "a.ppm"
    save_ppm(p, img)
    assert np.array_equal(load_ppm(p), img)
    raw = p.read_bytes()
    assert raw.startswith(b"P6")
    assert raw[-5 * 7 * 3:] == img.tobytes()


def test_ppm_header_comments(tmp_path):
    img = np.arange(2 * 2 * 3, dtype=np.uint8).reshape(2, 2, 3)
    p = tmp_path / "c.ppm"
    p.write_bytes(b"P6 # a comment\n2 # width\n 2\n255\n" + img.tobytes())
    assert np.array_equal(load_ppm(p), img)


def test_ppm_rejects_bad_files(tmp_path):
    good = np.zeros((2, 2, 3), dtype=np.uint8)
    p = tmp_path / "x.ppm"
    p.write_bytes(b"P3\n2 2\n255\n" + good.tobytes())
    with pytest.raises(FormatError):
        load_ppm(p)
    p.write_bytes(b"P6\n2 2\n65535\n" + b"\x00" * 24)
    with pytest.raises(FormatError):
        load_ppm(p)
    p.write_bytes(b"P6\n2 2\n255\n\x00\x01")
    with pytest.raises(FormatError):
        load_ppm(p)
    p.write_bytes(b"P6\n2 2")
    with pytest.raises(FormatError):
        load_ppm(p)


def test_png_roundtrip(tmp_path, rng):
    img = rand_img(rng, h=9, w=4)
    p = tmp_path / "a.png"
    save_png(p, img)
    assert np.array_equal(load_png(p), img)


def test_png_matches_ppm(tmp_path, rng):
    img = rand_img(rng, h=3, w=8)
    pp, pn = tmp_path / "b.ppm", tmp_path / "b.png"
    save_ppm(pp, img)
    save_png(pn, img)
    assert np.array_equal(load_ppm(pp), load_png(pn))


def _filter_row(ftype: int, cur: np.ndarray, prev: np.ndarray) -> np.ndarray:
    # Forward PNG filtering (the inverse of what the loader undoes), bpp = 3.
    cur = cur.astype(np.int32)
    prev = prev.astype(np.int32)
    left = np.concatenate([np.zeros(3, np.int32), cur[:-3]])
    upleft = np.concatenate([np.zeros(3, np.int32), prev[:-3]])
    if ftype == 0:
        out = cur
    elif ftype == 1:
        out = cur - left
    elif ftype == 2:
        out = cur - prev
    elif ftype == 3:
        out = cur - (left + prev) // 2
    else:
        p = left + prev - upleft
        pa, pb, pc = np.abs(p - left), np.abs(p - prev), np.abs(p - upleft)
        pred = np.where((pa <= pb) & (pa <= pc), left, np.where(pb <= pc, prev, upleft))
        out = cur - pred
    return (out % 256).astype(np.uint8)


def test_png_all_filter_types_decode(tmp_path, rng):
    h, w = 10, 6
    img = rand_img(rng, h, w)
    flat = img.reshape(h, w * 3)
    raw = bytearray()
    prev = np.zeros(w * 3, dtype=np.uint8)
    for y in range(h):
        ftype = y % 5
        raw.append(ftype)
        raw.extend(_filter_row(ftype, flat[y], prev).tobytes())
        prev = flat[y]

    def chunk(tag, payload):
        return (struct.pack(">I", len(payload)) + tag + payload
                + struct.pack(">I", zlib.crc32(tag + payload)))

    p = tmp_path / "f.png"
    p.write_bytes(
        b"\x89PNG\r\n\x1a\n"
        + chunk(b"IHDR", struct.pack(">IIBBBBB", w, h, 8, 2, 0, 0, 0))
        + chunk(b"IDAT", zlib.compress(bytes(raw)))
        + chunk(b"IEND", b"")
    )
    assert np.array_equal(load_png(p), img)


def test_png_rejects_bad_files(tmp_path):
    p = tmp_path / "bad.png"
    p.write_bytes(b"NOTAPNG!")
    with pytest.raises(FormatError):
        load_png(p)

    def chunk(tag, payload):
        return (struct.pack(">I", len(payload)) + tag + payload
                + struct.pack(">I", zlib.crc32(tag + payload)))

    # 16-bit depth is out of scope
    p.write_bytes(b"\x89PNG\r\n\x1a\n"
                  + chunk(b"IHDR", struct.pack(">IIBBBBB", 2, 2, 16, 2, 0, 0, 0))
                  + chunk(b"IDAT", zlib.compress(b"\x00" * 26))
                  + chunk(b"IEND", b""))
    with pytest.raises(FormatError):
        load_png(p)


def test_save_rejects_non_u8(tmp_path):
    with pytest.raises(FormatError):
        save_ppm(tmp_path / "z.ppm", np.zeros((2, 2, 3), dtype=np.float32))
    with pytest.raises(FormatError):
        save_png(tmp_path / "z.png", np.zeros((2, 2), dtype=np.uint8))
