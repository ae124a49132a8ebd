"""Counter-based random number streams for reproducible parallel Monte Carlo.

Every stream is a pure function of (master seed, stream id, counter), so a
trial can be replayed bit-exactly and trials can be dispatched to any number
of workers without coordinating state.  The generator is a splitmix64-style
counter hash: output i of a stream is finalize(key + i * GOLDEN).
"""

from __future__ import annotations

import numpy as np
from scipy.special import ndtri

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_U64 = np.uint64
_INV53 = 2.0 ** -53


def _mix(z):
    """Stafford variant 13 of the splitmix64 finalizer (vectorized)."""
    with np.errstate(over="ignore"):
        z = np.array(z, dtype=np.uint64, copy=True)
        t = np.empty_like(z)
        for shift, mult in ((30, 0xBF58476D1CE4E5B9), (27, 0x94D049BB133111EB)):
            np.right_shift(z, _U64(shift), out=t)
            z ^= t
            z *= _U64(mult)
        np.right_shift(z, _U64(31), out=t)
        z ^= t
        return z


def _fold(key, word):
    with np.errstate(over="ignore"):
        return _mix(key ^ (_mix(_U64(word) + _GOLDEN) + _GOLDEN))


def keyed_uniforms_2d(key, rows, col_start, cols):
    """Uniforms u[r, c] in (0,1) keyed by (key, rows[r], col_start + c).

    The value at a given (row, column) pair never depends on which block of
    columns is requested, which makes lazily generated infinite codewords
    reproducible without storage.
    """
    rows = np.asarray(rows, dtype=np.uint64).reshape(-1, 1)
    cols = (np.uint64(col_start) + np.arange(cols, dtype=np.uint64)).reshape(1, -1)
    h = _mix(_mix(_U64(key) + rows * _GOLDEN) + cols * _GOLDEN)
    return ((h >> _U64(11)).astype(np.float64) + 0.5) * _INV53


class RngStream:
    """One reproducible stream, identified by (master_seed, stream_id).

    The stream owns a counter: ``uniforms(n)`` consumes the next n indices.
    ``derive(tag)`` forks a statistically independent sub-stream with its own
    counter (used e.g. to separate codebook randomness from channel noise
    within one trial).
    """

    def __init__(self, master_seed: int, stream_id: int = 0, _key=None):
        self.master_seed = int(master_seed)
        self.stream_id = int(stream_id)
        if _key is None:
            _key = _fold(_fold(_GOLDEN, master_seed), stream_id)
        self._key = _key
        self.counter = 0

    def derive(self, tag: int) -> "RngStream":
        sub = RngStream(self.master_seed, self.stream_id, _key=_fold(self._key, tag))
        return sub

    @property
    def key(self):
        return int(self._key)

    def uniforms(self, n: int) -> np.ndarray:
        """Next n uniforms in (0,1)."""
        idx = np.arange(self.counter, self.counter + n, dtype=np.uint64)
        self.counter += n
        h = _mix(self._key + idx * _GOLDEN)
        return ((h >> _U64(11)).astype(np.float64) + 0.5) * _INV53

    def uniforms_at(self, start: int, n: int) -> np.ndarray:
        """Uniforms for absolute counter positions [start, start+n), no state change."""
        idx = np.arange(start, start + n, dtype=np.uint64)
        h = _mix(self._key + idx * _GOLDEN)
        return ((h >> _U64(11)).astype(np.float64) + 0.5) * _INV53

    def normals(self, n: int) -> np.ndarray:
        return ndtri(self.uniforms(n))

    def integers(self, n: int, high: int) -> np.ndarray:
        """n integers uniform on [0, high)."""
        return np.minimum((self.uniforms(n) * high).astype(np.int64), high - 1)

    def choice(self, pmf_cumsum: np.ndarray, n: int = 1) -> np.ndarray:
        """Sample n indices from the pmf whose cumulative sums are given."""
        return np.searchsorted(pmf_cumsum, self.uniforms(n), side="right")


def seed_stream(master_seed: int, trial_id: int) -> RngStream:
    """Stream for one trial; the (master, trial) -> stream map is injective."""
    return RngStream(master_seed, trial_id)
