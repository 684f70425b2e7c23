"""8-bit RGB image files: binary PPM (P6) and minimal PNG.

PNG files are written with zlib and no filtering (filter byte 0 per row); the
reader defilters all five standard filter types so round-trips and externally
produced files both load.
"""
from __future__ import annotations

import struct
import zlib
from pathlib import Path

import numpy as np

from .errors import FormatError

_PNG_SIG = b"\x89PNG\r\n\x1a\n"


def _as_u8_rgb(img: np.ndarray) -> np.ndarray:
    a = np.asarray(img)
    if a.ndim != 3 or a.shape[2] != 3:
        raise FormatError(f"expected (h, w, 3) image, got shape {a.shape}")
    if a.dtype != np.uint8:
        raise FormatError(f"expected uint8 pixels, got {a.dtype}")
    return a


def save_ppm(path, img: np.ndarray) -> None:
    a = _as_u8_rgb(img)
    h, w, _ = a.shape
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(a.tobytes())


def load_ppm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    # Header: magic, width, height, maxval as whitespace/comment-separated tokens.
    tokens = []
    i = 0
    while len(tokens) < 4:
        if i >= len(raw):
            raise FormatError(f"{path}: truncated PPM header")
        c = raw[i:i + 1]
        if c == b"#":
            while i < len(raw) and raw[i:i + 1] != b"\n":
                i += 1
        elif c.isspace():
            i += 1
        else:
            j = i
            while j < len(raw) and not raw[j:j + 1].isspace():
                j += 1
            tokens.append(raw[i:j])
            i = j
    if tokens[0] != b"P6":
        raise FormatError(f"{path}: not a binary PPM (magic {tokens[0]!r})")
    w, h, maxval = (int(t) for t in tokens[1:])
    if maxval != 255:
        raise FormatError(f"{path}: only maxval 255 supported, got {maxval}")
    i += 1  # single whitespace byte after the header
    need = w * h * 3
    data = raw[i:i + need]
    if len(data) != need:
        raise FormatError(f"{path}: expected {need} pixel bytes, found {len(data)}")
    return np.frombuffer(data, dtype=np.uint8).reshape(h, w, 3).copy()


def _chunk(tag: bytes, payload: bytes) -> bytes:
    return (struct.pack(">I", len(payload)) + tag + payload
            + struct.pack(">I", zlib.crc32(tag + payload)))


def save_png(path, img: np.ndarray) -> None:
    a = _as_u8_rgb(img)
    h, w, _ = a.shape
    rows = np.empty((h, 1 + w * 3), dtype=np.uint8)
    rows[:, 0] = 0  # filter type: none
    rows[:, 1:] = a.reshape(h, w * 3)
    ihdr = struct.pack(">IIBBBBB", w, h, 8, 2, 0, 0, 0)  # 8-bit truecolor
    with open(path, "wb") as f:
        f.write(_PNG_SIG)
        f.write(_chunk(b"IHDR", ihdr))
        f.write(_chunk(b"IDAT", zlib.compress(rows.tobytes(), 6)))
        f.write(_chunk(b"IEND", b""))


def _paeth(a: int, b: int, c: int) -> int:
    p = a + b - c
    pa, pb, pc = abs(p - a), abs(p - b), abs(p - c)
    if pa <= pb and pa <= pc:
        return a
    if pb <= pc:
        return b
    return c


def load_png(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:8] != _PNG_SIG:
        raise FormatError(f"{path}: not a PNG file")
    pos = 8
    ihdr = None
    idat = bytearray()
    while pos + 8 <= len(raw):
        length, tag = struct.unpack(">I4s", raw[pos:pos + 8])
        payload = raw[pos + 8:pos + 8 + length]
        if len(payload) != length:
            raise FormatError(f"{path}: truncated chunk {tag!r}")
        if tag == b"IHDR":
            ihdr = struct.unpack(">IIBBBBB", payload)
        elif tag == b"IDAT":
            idat += payload
        elif tag == b"IEND":
            break
        pos += 12 + length
    if ihdr is None:
        raise FormatError(f"{path}: missing IHDR")
    w, h, depth, color, comp, filt, interlace = ihdr
    if (depth, color, comp, filt, interlace) != (8, 2, 0, 0, 0):
        raise FormatError(f"{path}: unsupported PNG variant {ihdr}")
    data = zlib.decompress(bytes(idat))
    stride = w * 3
    if len(data) != h * (stride + 1):
        raise FormatError(f"{path}: bad decompressed length {len(data)}")
    out = np.zeros((h, stride), dtype=np.uint8)
    bpp = 3
    for y in range(h):
        row = data[y * (stride + 1): (y + 1) * (stride + 1)]
        ftype, cur = row[0], bytearray(row[1:])
        prev = out[y - 1] if y else np.zeros(stride, dtype=np.uint8)
        if ftype == 0:
            pass
        elif ftype == 1:
            for x in range(bpp, stride):
                cur[x] = (cur[x] + cur[x - bpp]) & 0xFF
        elif ftype == 2:
            for x in range(stride):
                cur[x] = (cur[x] + int(prev[x])) & 0xFF
        elif ftype == 3:
            for x in range(stride):
                left = cur[x - bpp] if x >= bpp else 0
                cur[x] = (cur[x] + ((left + int(prev[x])) >> 1)) & 0xFF
        elif ftype == 4:
            for x in range(stride):
                left = cur[x - bpp] if x >= bpp else 0
                ul = int(prev[x - bpp]) if x >= bpp else 0
                cur[x] = (cur[x] + _paeth(left, int(prev[x]), ul)) & 0xFF
        else:
            raise FormatError(f"{path}: unknown filter type {ftype}")
        out[y] = np.frombuffer(bytes(cur), dtype=np.uint8)
    return out.reshape(h, w, 3)
