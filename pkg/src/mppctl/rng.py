"""Counter-based random numbers: Philox4x64-10, vectorized over keys and counters.

Every trajectory owns the key ``(seed, stream)``; the k-th candidate event of
that trajectory reads block ``counter = (k, 0, 0, 0)``.  Results therefore do
not depend on how streams are split across workers or in which order they are
processed.  Output matches :class:`numpy.random.Philox` block-for-block.
"""
from __future__ import annotations

import numpy as np

_M0 = np.uint64(0xD2E7470EE14C6C93)
_M1 = np.uint64(0xCA5A826395121157)
_W0 = np.uint64(0x9E3779B97F4A7C15)
_W1 = np.uint64(0xBB67AE8584CAA73B)
_LO32 = np.uint64(0xFFFFFFFF)
_S32 = np.uint64(32)


def _mulhilo(a: np.uint64, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a_lo, a_hi = a & _LO32, a >> _S32
    b_lo, b_hi = b & _LO32, b >> _S32
    ll = a_lo * b_lo
    lh = a_lo * b_hi
    hl = a_hi * b_lo
    hh = a_hi * b_hi
    mid = (ll >> _S32) + (lh & _LO32) + (hl & _LO32)
    hi = hh + (lh >> _S32) + (hl >> _S32) + (mid >> _S32)
    return hi, a * b


def philox4x64(counter, key) -> np.ndarray:
    """Encrypt ``counter`` (..., 4) under ``key`` (..., 2); returns (..., 4) uint64."""
    counter = np.asarray(counter, dtype=np.uint64)
    key = np.asarray(key, dtype=np.uint64)
    shape = np.broadcast_shapes(counter.shape[:-1], key.shape[:-1])
    c0, c1, c2, c3 = (np.broadcast_to(counter[..., i], shape).copy() for i in range(4))
    k0 = np.broadcast_to(key[..., 0], shape).copy()
    k1 = np.broadcast_to(key[..., 1], shape).copy()
    with np.errstate(over="ignore"):
        for rnd in range(10):
            hi0, lo0 = _mulhilo(_M0, c0)
            hi1, lo1 = _mulhilo(_M1, c2)
            c0, c1, c2, c3 = hi1 ^ c1 ^ k0, lo1, hi0 ^ c3 ^ k1, lo0
            if rnd < 9:
                k0 = k0 + _W0
                k1 = k1 + _W1
    return np.stack([c0, c1, c2, c3], axis=-1)


def to_unit(words: np.ndarray) -> np.ndarray:
    """Map uint64 words to doubles in [0, 1) using the top 53 bits."""
    return (np.asarray(words, dtype=np.uint64) >> np.uint64(11)).astype(np.float64) * 2.0**-53


def stream_uniforms(seed: int, streams, index) -> np.ndarray:
    """Four uniforms per (stream, index) pair; shape (..., 4)."""
    streams = np.asarray(streams, dtype=np.uint64)
    index = np.asarray(index, dtype=np.uint64)
    shape = np.broadcast_shapes(streams.shape, index.shape)
    key = np.empty(shape + (2,), dtype=np.uint64)
    key[..., 0] = np.uint64(seed % 2**64)
    key[..., 1] = streams
    ctr = np.zeros(shape + (4,), dtype=np.uint64)
    ctr[..., 0] = index
    return to_unit(philox4x64(ctr, key))
