"""Counter-based random number streams for replayable rendering.

Every random decision a renderer makes is a pure function of
(seed, frame, pixel_index, event_counter).  Rays therefore draw identical
numbers no matter how they are scheduled, which is what lets the wavefront
renderer reproduce the reference renderer bit for bit and lets repeated runs
reproduce each other.  The generator is a SplitMix64-style avalanche over the
four key words; uniforms keep 24 bits so they are exact in float32.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Mixing constants: SplitMix64 finalizer plus distinct odd stride constants
# so that neighboring frames/pixels/events decorrelate.
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_STRIDE_FRAME = np.uint64(0xD1B54A32D192ED03)
_STRIDE_PIXEL = np.uint64(0x8CB92BA72F3D8DD7)
_U24 = np.float32(1.0 / (1 << 24))


def _mix64(z: np.ndarray | np.uint64) -> np.ndarray | np.uint64:
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


def hash_key(seed: int, frame: int, pixel, event) -> np.ndarray:
    """64-bit hash of the full key; `pixel`/`event` may be arrays."""
    with np.errstate(over="ignore"):
        h = _mix64(np.uint64(seed) + _GOLDEN)
        h = _mix64(h + np.uint64(frame) * _STRIDE_FRAME)
        h = _mix64(h + np.asarray(pixel, dtype=np.uint64) * _STRIDE_PIXEL)
        h = _mix64(h + np.asarray(event, dtype=np.uint64) * _GOLDEN)
    return h


@dataclass(frozen=True)
class RngStream:
    """Stateless uniform stream for one (seed, frame) pair.

    uniform() never returns 1.0, so log(1 - u) and 1/(1 - u) stay finite.
    """

    seed: int
    frame: int

    def uniform(self, pixel, event):
        """float32 uniforms in [0, 1); shape follows broadcast of pixel/event."""
        h = hash_key(self.seed, self.frame, pixel, event)
        bits = (h >> np.uint64(40)).astype(np.float32)
        u = bits * _U24
        if u.ndim == 0:
            return np.float32(u)
        return u
