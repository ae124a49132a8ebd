"""Discrete memoryless channel and AWGN channel models.

A Dmc caches its capacity, capacity-achieving input/output distributions and
the maximum log-likelihood jump a0; all are computed once at construction and
the object is immutable afterwards, so it can be shared across trial workers.
"""

from __future__ import annotations

import numpy as np

from .rng import RngStream

_ROW_TOL = 1e-12

BA_GAP_TOL = 1e-10
BA_MAX_ITER = 100_000


def ba_capacity(W: np.ndarray, gap_tol: float = BA_GAP_TOL, max_iter: int = BA_MAX_ITER):
    """Blahut-Arimoto channel capacity.

    Returns (C nats, caid, caod, duality_gap).  Stops when the duality gap
    max_x D(W(.|x) || q) - I(r; W) drops below gap_tol, so the returned C is
    within gap_tol of the true capacity.
    """
    W = np.asarray(W, dtype=np.float64)
    if W.ndim != 2 or np.any(W < 0) or np.any(np.abs(W.sum(axis=1) - 1) > _ROW_TOL * W.shape[1]):
        raise ValueError("transition matrix must be row-stochastic")
    na = W.shape[0]
    r = np.full(na, 1.0 / na)
    logW = np.where(W > 0, np.log(np.where(W > 0, W, 1.0)), 0.0)
    gap = np.inf
    for _ in range(max_iter):
        q = r @ W
        # D_x = sum_y W(y|x) log(W(y|x)/q(y)); q(y)=0 only where W(.|y) column
        # is unreachable, and those terms have W=0.
        with np.errstate(divide="ignore"):
            logq = np.where(q > 0, np.log(np.where(q > 0, q, 1.0)), 0.0)
        D = np.einsum("xy,xy->x", W, logW - logq[None, :])
        I = float(r @ D)
        gap = float(D.max() - I)
        if gap <= gap_tol:
            break
        r = r * np.exp(D - D.max())
        r /= r.sum()
    q = r @ W
    C = max(float(r @ D), 0.0)
    return C, r, q, gap


def max_log_ratio_a0(W: np.ndarray) -> float:
    """Max over positive entries of log(W(y1|x1)/W(y2|x2)), in nats."""
    W = np.asarray(W, dtype=np.float64)
    pos = W[W > 0]
    return float(np.log(pos.max()) - np.log(pos.min()))


class Dmc:
    """Finite discrete memoryless channel with cached capacity quantities."""

    def __init__(self, W, gap_tol: float = BA_GAP_TOL):
        W = np.asarray(W, dtype=np.float64)
        C, caid, caod, gap = ba_capacity(W, gap_tol=gap_tol)
        self.W = W
        self.C = C
        self.caid = caid
        self.caod = caod
        self.ba_gap = gap
        self.a0 = max_log_ratio_a0(W)
        self.caid_cum = np.cumsum(caid)
        # log W(y|x) - log P_Y*(y), -inf on zero transitions
        with np.errstate(divide="ignore", invalid="ignore"):
            self.log_density = np.log(W) - np.log(caod)[None, :]
        self.W_cum = np.cumsum(W, axis=1)

    @property
    def n_inputs(self) -> int:
        return self.W.shape[0]

    @property
    def n_outputs(self) -> int:
        return self.W.shape[1]

    def __repr__(self):
        return f"Dmc({self.n_inputs}x{self.n_outputs}, C={self.C:.6f} nats)"


def bsc(delta: float) -> Dmc:
    return Dmc([[1 - delta, delta], [delta, 1 - delta]])


def bec(delta: float) -> Dmc:
    return Dmc([[1 - delta, delta, 0.0], [0.0, delta, 1 - delta]])


def dmc_step(dmc: Dmc, x: int, rng: RngStream) -> int:
    """Sample one channel output y ~ W(.|x)."""
    u = rng.uniforms(1)[0]
    return int(np.searchsorted(dmc.W_cum[x], u, side="right"))


def dmc_steps(dmc: Dmc, x: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Vectorized outputs for inputs x and per-use uniforms u."""
    # inverse-CDF per row: count of cumsum entries <= u
    return (dmc.W_cum[x] <= u[:, None]).sum(axis=1)


class AwgnChannel:
    """Real AWGN channel, noise variance N0/2 per degree of freedom."""

    def __init__(self, N0: float):
        if N0 <= 0:
            raise ValueError("N0 must be positive")
        self.N0 = float(N0)
        self.noise_std = float(np.sqrt(N0 / 2.0))


def awgn_step(x: float, ch: AwgnChannel, rng: RngStream) -> float:
    return float(x + ch.noise_std * rng.normals(1)[0])


def awgn_steps(x: np.ndarray, ch: AwgnChannel, rng: RngStream) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return x + ch.noise_std * rng.normals(x.size).reshape(x.shape)
