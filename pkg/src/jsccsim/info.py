"""Foundational probability and information quantities.

All information values are in nats internally; conversion to bits happens
only at the CLI/reporting boundary.  Zero-probability events produce explicit
infinities (float inf), never sentinel numbers.
"""

from __future__ import annotations

import numpy as np
from scipy.special import ndtr, ndtri

LN2 = float(np.log(2.0))

_PMF_TOL = 1e-12


def validate_pmf(p) -> np.ndarray:
    """Check non-negativity and normalization; return as float array."""
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 1 or p.size < 1:
        raise ValueError("pmf must be a non-empty 1-d vector")
    if np.any(p < 0):
        raise ValueError("pmf entries must be non-negative")
    s = p.sum()
    if abs(s - 1.0) > _PMF_TOL * max(1, p.size):
        raise ValueError(f"pmf sums to {s!r}, not 1")
    return p


def entropy(p) -> float:
    """Shannon entropy in nats; terms with p=0 contribute 0."""
    p = validate_pmf(p)
    nz = p[p > 0]
    return float(-np.dot(nz, np.log(nz)))


def varentropy(p) -> float:
    """Variance of the self-information -log p(S), S ~ p, in nats^2."""
    p = validate_pmf(p)
    nz = p[p > 0]
    logs = -np.log(nz)
    mean = np.dot(nz, logs)
    return float(np.dot(nz, (logs - mean) ** 2))


def info_density(dmc, x: int, y: int) -> float:
    """log W(y|x) / P_Y*(y) in nats; -inf when W(y|x) = 0.

    Outputs with zero capacity-achieving output probability are unreachable
    and rejected.
    """
    py = dmc.caod[y]
    if py <= 0:
        raise ValueError(f"output {y} has zero capacity-achieving probability")
    w = dmc.W[x, y]
    if w == 0:
        return float("-inf")
    return float(np.log(w) - np.log(py))


def normal_tail(x) -> float:
    """Q(x): standard normal complementary CDF."""
    return ndtr(-np.asarray(x, dtype=np.float64)) + 0.0


def normal_tail_inv(p) -> float:
    """Q^{-1}(p) for p in (0, 1)."""
    p = np.asarray(p, dtype=np.float64)
    if np.any(p <= 0) or np.any(p >= 1):
        raise ValueError("normal_tail_inv requires 0 < p < 1")
    return -ndtri(p) + 0.0


def truncated_normal_mean(eps: float) -> float:
    """E[Z 1{Z > Q^{-1}(eps)}] for standard normal Z, via the closed form
    phi(Q^{-1}(eps)) = exp(-Q^{-1}(eps)^2 / 2) / sqrt(2 pi)."""
    if not 0 < eps < 1:
        raise ValueError("eps must be in (0, 1)")
    q = normal_tail_inv(eps)
    return float(np.exp(-0.5 * q * q) / np.sqrt(2 * np.pi))
