"""Counter-based random numbers keyed by (seed, path, step).

Philox4x32-10 evaluated directly on arrays of counters, so any subset of
paths can draw its increments for a step without touching the others.  The
counter layout is ``(path_lo, path_hi, step, stream << 16 | block)``; the key
is the 64-bit seed split into two words.
"""

from __future__ import annotations

import numpy as np

_M0, _M1 = np.uint64(0xD2511F53), np.uint64(0xCD9E8D57)
_W0, _W1 = np.uint64(0x9E3779B9), np.uint64(0xBB67AE85)
_MASK = np.uint64(0xFFFFFFFF)
_S32 = np.uint64(32)

NORMAL_STREAM = 0
UNIFORM_STREAM = 1


def philox4x32(c0, c1, c2, c3, k0, k1, rounds: int = 10):
    """Philox4x32 block function on uint32 values held in uint64 arrays."""
    c0, c1, c2, c3 = (np.asarray(c, dtype=np.uint64) for c in (c0, c1, c2, c3))
    k0, k1 = np.uint64(k0), np.uint64(k1)
    for r in range(rounds):
        if r:
            k0 = (k0 + _W0) & _MASK
            k1 = (k1 + _W1) & _MASK
        p0 = _M0 * c0
        p1 = _M1 * c2
        c0, c1, c2, c3 = (p1 >> _S32) ^ c1 ^ k0, p1 & _MASK, (p0 >> _S32) ^ c3 ^ k1, p0 & _MASK
    return c0, c1, c2, c3


def _words(seed: int, step: int, paths: np.ndarray, stream: int, block: int):
    paths = np.asarray(paths, dtype=np.uint64)
    seed = int(seed) & 0xFFFFFFFFFFFFFFFF
    return philox4x32(paths & _MASK, paths >> _S32, np.uint64(step & 0xFFFFFFFF),
                      np.uint64(((stream & 0xFFFF) << 16) | (block & 0xFFFF)),
                      seed & 0xFFFFFFFF, seed >> 32)


def _res53(a, b):
    # 53-bit uniform in [0, 1) from two 32-bit words
    return ((a >> np.uint64(5)).astype(np.float64) * 67108864.0
            + (b >> np.uint64(6)).astype(np.float64)) * (1.0 / 9007199254740992.0)


def uniforms(seed: int, step: int, paths, stream: int = UNIFORM_STREAM, block: int = 0):
    """Two independent U[0,1) per path, shape ``(n, 2)``."""
    w = _words(seed, step, paths, stream, block)
    return np.stack([_res53(w[0], w[1]), _res53(w[2], w[3])], axis=-1)


def normals(seed: int, step: int, paths, d1: int) -> np.ndarray:
    """Standard normal increments of shape ``(len(paths), d1)``."""
    paths = np.asarray(paths)
    out = np.empty((paths.size, 2 * ((d1 + 1) // 2)))
    for j in range((d1 + 1) // 2):
        u = uniforms(seed, step, paths, NORMAL_STREAM, j)
        rad = np.sqrt(-2.0 * np.log1p(-u[:, 0]))
        ang = 2.0 * np.pi * u[:, 1]
        out[:, 2 * j] = rad * np.cos(ang)
        out[:, 2 * j + 1] = rad * np.sin(ang)
    return out[:, :d1]
