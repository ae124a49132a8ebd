"""End-to-end variable-length joint source-channel simulations: random lossy
codebooks feeding the stop-feedback / VLFT channel codes, under excess,
average, and guaranteed distortion targets.

The source coder is a d-ball random-codebook surrogate: codewords drawn
i.i.d. from the rate-distortion-achieving output marginal, encoder emits the
first d-close index.  The resulting index distribution (a mixture of
geometrics over source types) is computed analytically and used as the
channel code's message prior.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .channels import Dmc
from .info import normal_tail_inv
from .ratedist import RdSolution, brute_force_deps_entropy, source_expansion
from .rng import RngStream, keyed_uniforms_2d, seed_stream
from .vlf import (FULL_DECODER_MAX_SUPPORT, MessagePrior, stop_feedback_transmit,
                  vlft_transmit)

_ENCODE_CHUNK = 4096


class LossyCodebook:
    """Codewords i.i.d. from the k-fold product of a generator marginal.

    Materialized when M*k is small; otherwise chunks are regenerated lazily
    from the key, so the same (seed, index) always yields the same codeword.
    """

    def __init__(self, key: int, k: int, M: int, output_pmf):
        self.key = int(key)
        self.k = int(k)
        self.M = int(M)
        self.q_cum = np.cumsum(np.asarray(output_pmf, dtype=np.float64))
        self._points = None

    def chunk(self, start: int, count: int) -> np.ndarray:
        if self._points is not None:
            return self._points[start:start + count]
        rows = np.arange(start, min(start + count, self.M))
        u = keyed_uniforms_2d(self.key, rows, 0, self.k)
        return np.searchsorted(self.q_cum, u, side="right")

    @property
    def points(self) -> np.ndarray:
        if self._points is None:
            if self.M * self.k > 2 ** 24:
                raise ValueError("codebook too large to materialize")
            self._points = self.chunk(0, self.M)
        return self._points


def dball_encode(s: np.ndarray, cb: LossyCodebook, d: float,
                 dist_matrix: np.ndarray):
    """First codeword index within average distortion d of s; (0, False) on miss."""
    budget = d * cb.k + 1e-12
    start = 0
    while start < cb.M:
        pts = cb.chunk(start, _ENCODE_CHUNK)
        totals = dist_matrix[s[None, :], pts].sum(axis=1)
        hits = np.flatnonzero(totals <= budget)
        if hits.size:
            return start + int(hits[0]), True
        start += pts.shape[0]
    return 0, False


def min_distortion_encode(s: np.ndarray, cb: LossyCodebook,
                          dist_matrix: np.ndarray) -> int:
    """Index of the distortion-minimizing codeword, smallest index on ties."""
    totals = dist_matrix[s[None, :], cb.points].sum(axis=1)
    return int(np.argmin(totals))


def ball_probability(counts: np.ndarray, dist_matrix: np.ndarray,
                     output_pmf: np.ndarray, k: int, d: float) -> float:
    """P[ d(s^k, Z^k) <= d*k ] for a source block with the given letter counts,
    Z i.i.d. ~ output_pmf.  Exact convolution over per-letter distortion values.
    """
    dist = {0.0: 1.0}
    budget = d * k + 1e-12
    for a, c in enumerate(counts):
        if c == 0:
            continue
        step = {}
        for z, qz in enumerate(output_pmf):
            if qz > 0:
                v = round(float(dist_matrix[a, z]), 12)
                step[v] = step.get(v, 0.0) + qz
        for _ in range(int(c)):
            new = {}
            for tot, p in dist.items():
                if tot > budget:
                    continue
                for v, pv in step.items():
                    t2 = round(tot + v, 12)
                    new[t2] = new.get(t2, 0.0) + p * pv
            dist = new
    return float(sum(p for tot, p in dist.items() if tot <= budget))


def type_ball_probs(rd: RdSolution, k: int, d: float):
    """(type probabilities, ball probabilities) over source type classes."""
    from scipy.special import gammaln

    src = rd.source
    pmf = src.pmf
    nz = pmf.size
    types = []
    def rec(prefix, remaining):
        if len(prefix) == nz - 1:
            types.append(prefix + [remaining])
            return
        for c in range(remaining + 1):
            rec(prefix + [c], remaining - c)
    rec([], k)
    counts = np.array(types)
    logp = (gammaln(k + 1) - gammaln(counts + 1).sum(axis=1)
            + (counts * np.log(np.where(pmf > 0, pmf, 1.0))).sum(axis=1))
    mask = ~np.any((counts > 0) & (pmf[None, :] == 0), axis=1)
    probs = np.where(mask, np.exp(logp), 0.0)
    pballs = np.array([ball_probability(c, src.distortion, rd.output_pmf, k, d)
                       for c in counts])
    keep = probs > 0
    return probs[keep], pballs[keep]


def analytic_miss(type_probs: np.ndarray, pballs: np.ndarray, M: int) -> float:
    """P[no codeword within distortion d among M i.i.d. draws]."""
    return float(np.sum(type_probs * (1.0 - pballs) ** M))


def choose_codebook_size(type_probs: np.ndarray, pballs: np.ndarray,
                         eps_source: float, cap: int = FULL_DECODER_MAX_SUPPORT) -> int:
    """Smallest M with analytic miss probability <= eps_source."""
    if analytic_miss(type_probs, pballs, cap) > eps_source:
        raise ValueError(f"cannot reach miss <= {eps_source} with M <= {cap}")
    lo, hi = 1, cap
    while lo < hi:
        mid = (lo + hi) // 2
        if analytic_miss(type_probs, pballs, mid) <= eps_source:
            hi = mid
        else:
            lo = mid + 1
    return lo


def expansion_codebook_size(k: int, d: float, eps_source: float,
                            rd: RdSolution) -> int:
    """M = exp(two-term rate expansion + log k safety margin)."""
    return int(np.ceil(np.exp(source_expansion(k, d, eps_source, rd) + np.log(k))))


def index_prior(type_probs: np.ndarray, pballs: np.ndarray, M: int) -> MessagePrior:
    """Analytic distribution of the d-ball encoder's index, miss folded into
    index 0.  A mixture of geometrics, hence non-increasing."""
    i = np.arange(M, dtype=np.float64)
    pmf = ((1.0 - pballs[:, None]) ** i[None, :] * pballs[:, None]
           * type_probs[:, None]).sum(axis=0)
    pmf[0] += analytic_miss(type_probs, pballs, M)
    pmf = np.maximum(pmf, 1e-300)
    return MessagePrior(pmf / pmf.sum())


@dataclass
class PipelineStats:
    """Monte-Carlo summary of one end-to-end configuration."""

    ell_hat: float               # average channel uses
    ell_half_width: float        # 95% CI half-width
    failure_hat: float           # excess / error / violation estimate
    failure_half_width: float
    avg_distortion: float
    trials: int
    mode: str
    config: dict = field(default_factory=dict)


def _ci(x: np.ndarray) -> float:
    return 1.96 * float(np.std(x, ddof=1)) / np.sqrt(x.size)


def _sample_block(pmf_cum: np.ndarray, k: int, rng: RngStream) -> np.ndarray:
    return np.searchsorted(pmf_cum, rng.uniforms(k), side="right")


def default_budget_split(eps: float, k: int):
    """Source gets eps - 1/sqrt(k), channel 1/sqrt(k)."""
    ch = 1.0 / np.sqrt(k)
    if eps - ch <= 0:
        raise ValueError(
            f"infeasible budget: eps={eps} <= 1/sqrt(k)={ch:.4f}; "
            "pass an explicit split")
    return eps - ch, ch


def simulate_excess(k: int, d: float, eps: float, dmc: Dmc, rd: RdSolution,
                    master_seed: int, trials: int, split=None,
                    sizing: str = "analytic", mode: str | None = None,
                    M: int | None = None) -> PipelineStats:
    """Excess-distortion pipeline: d-ball source code + stop-feedback channel
    code with the analytic index distribution as message prior.

    The failure estimate counts source misses and channel decoding errors.
    In true_path mode the channel error is accounted analytically as
    exp(-gamma) instead of per-trial flags.
    """
    if eps >= 1:
        return PipelineStats(0.0, 0.0, min(eps, 1.0), 0.0, float("nan"),
                             0, "degenerate", {"k": k, "d": d, "eps": eps})
    eps_src, eps_ch = split if split is not None else default_budget_split(eps, k)
    if eps_src <= 0 or eps_ch <= 0:
        raise ValueError("both budget components must be positive")
    tp, pb = type_ball_probs(rd, k, d)
    if M is None:
        M = (choose_codebook_size(tp, pb, eps_src) if sizing == "analytic"
             else expansion_codebook_size(k, d, eps_src, rd))
    prior = index_prior(tp, pb, M)
    gamma = float(np.log(1.0 / eps_ch))
    if mode is None:
        mode = "full_decoder" if M <= FULL_DECODER_MAX_SUPPORT else "true_path"

    pmf_cum = np.cumsum(rd.source.pmf)
    dm = rd.source.distortion
    taus = np.empty(trials)
    fails = np.zeros(trials)
    dists = np.empty(trials)
    for t in range(trials):
        rng = seed_stream(master_seed, t)
        s = _sample_block(pmf_cum, k, rng)
        cb = LossyCodebook(rng.derive(3).key, k, M, rd.output_pmf)
        w, hit = dball_encode(s, cb, d, dm)
        tr = stop_feedback_transmit(dmc, prior, gamma, w, mode, rng.derive(4))
        taus[t] = tr.tau
        decoded = tr.decoded if mode == "full_decoder" else w
        z = cb.chunk(decoded, 1)[0]
        dists[t] = float(dm[s, z].mean())
        fails[t] = float((not hit) or dists[t] > d + 1e-12)
    failure = fails.mean()
    fhw = _ci(fails)
    if mode == "true_path":
        failure += np.exp(-gamma)  # analytic channel-error allowance
    return PipelineStats(
        ell_hat=float(taus.mean()), ell_half_width=_ci(taus),
        failure_hat=float(failure), failure_half_width=float(fhw),
        avg_distortion=float(dists[fails == 0].mean()) if (fails == 0).any() else float("nan"),
        trials=trials, mode=mode,
        config={"k": k, "d": d, "eps": eps, "split": (eps_src, eps_ch),
                "M": M, "gamma_nats": gamma, "prior_entropy_nats": prior.entropy,
                "analytic_miss": analytic_miss(tp, pb, M),
                "expansion_ell": source_expansion(k, d, eps, rd) / dmc.C})


def simulate_average(k: int, d: float, dmc: Dmc, rd: RdSolution,
                     master_seed: int, trials: int, M: int | None = None,
                     holder_p: float = 2.0) -> PipelineStats:
    """Average-distortion pipeline: min-distortion encoder over a random
    codebook, uniform-prior stop-feedback channel code with error budget
    k^(1/p - 2).  Reports the end-to-end average distortion (channel errors
    included via the distortion of the wrongly decoded codeword)."""
    if rd.source.unbounded_distortion:
        raise ValueError("average-distortion mode requires bounded distortion")
    if M is None:
        M = int(np.ceil(np.exp(k * rd.rate + 0.5 * np.log(k) + 1.0)))
    if M > FULL_DECODER_MAX_SUPPORT:
        raise ValueError("codebook too large to materialize")
    eps_ch = float(k) ** (1.0 / holder_p - 2.0)
    gamma = float(np.log(1.0 / eps_ch))
    prior = MessagePrior(np.full(M, 1.0 / M))

    pmf_cum = np.cumsum(rd.source.pmf)
    dm = rd.source.distortion
    taus = np.empty(trials)
    errs = np.zeros(trials)
    dists = np.empty(trials)
    src_dists = np.empty(trials)
    for t in range(trials):
        rng = seed_stream(master_seed, t)
        s = _sample_block(pmf_cum, k, rng)
        cb = LossyCodebook(rng.derive(3).key, k, M, rd.output_pmf)
        w = min_distortion_encode(s, cb, dm)
        tr = stop_feedback_transmit(dmc, prior, gamma, w, "full_decoder",
                                    rng.derive(4))
        taus[t] = tr.tau
        errs[t] = tr.error
        src_dists[t] = float(dm[s, cb.chunk(w, 1)[0]].mean())
        z = cb.chunk(tr.decoded, 1)[0]
        dists[t] = float(dm[s, z].mean())
    return PipelineStats(
        ell_hat=float(taus.mean()), ell_half_width=_ci(taus),
        failure_hat=float(errs.mean()), failure_half_width=_ci(errs),
        avg_distortion=float(dists.mean()), trials=trials, mode="full_decoder",
        config={"k": k, "d": d, "M": M, "gamma_nats": gamma,
                "distortion_half_width": _ci(dists),
                "source_distortion": float(src_dists.mean()),
                "source_distortion_half_width": _ci(src_dists)})


def simulate_guaranteed(k: int, d: float, dmc: Dmc, rd, master_seed: int,
                        trials: int) -> PipelineStats:
    """Guaranteed-distortion pipeline: the entropy-minimizing d-covering map
    on S^k feeding the zero-error VLFT code.  Every trial must meet the
    distortion target; a violation raises immediately.

    Accepts an RdSolution or a bare SourceModel (the covering map only needs
    the source; d may sit at or above d_max, where the rate is zero).
    """
    if k > 4:
        raise ValueError("guaranteed mode uses exhaustive covering maps; k <= 4")
    src = rd.source if isinstance(rd, RdSolution) else rd
    H, assign = brute_force_deps_entropy(src, k, d, 0.0, return_map=True)
    ns, nz = src.distortion.shape
    pk = np.ones(1)
    for _ in range(k):
        pk = np.kron(pk, src.pmf)  # product pmf in base-ns digit order
    # relabel used reproduction sequences by non-increasing induced probability
    mass = np.zeros(nz ** k)
    np.add.at(mass, assign, pk)
    used = np.flatnonzero(mass > 0)
    order = used[np.argsort(-mass[used], kind="stable")]
    rank = np.full(nz ** k, -1, dtype=np.int64)
    rank[order] = np.arange(order.size)
    w_of_block = rank[assign]
    prior = MessagePrior(mass[order])
    digits = ns ** np.arange(k - 1, -1, -1)
    rep_digits = nz ** np.arange(k - 1, -1, -1)
    cw_table = (order[:, None] // rep_digits[None, :]) % nz

    pmf_cum = np.cumsum(src.pmf)
    dm = src.distortion
    taus = np.empty(trials)
    violations = 0
    for t in range(trials):
        rng = seed_stream(master_seed, t)
        s = _sample_block(pmf_cum, k, rng)
        w = int(w_of_block[int(np.dot(s, digits))])
        tr = vlft_transmit(dmc, prior, w, rng.derive(4))
        taus[t] = tr.tau
        z = cw_table[tr.decoded]
        if float(dm[s, z].mean()) > d + 1e-12:
            violations += 1
    if violations:
        raise AssertionError(f"guaranteed-distortion violated in {violations} trials")
    return PipelineStats(
        ell_hat=float(taus.mean()), ell_half_width=_ci(taus),
        failure_hat=0.0, failure_half_width=0.0, avg_distortion=float("nan"),
        trials=trials, mode="vlft",
        config={"k": k, "d": d, "map_entropy_nats": H,
                "prior_entropy_nats": prior.entropy})


def naive_separation_bound(k: int, d: float, eps: float, C: float,
                           rd: RdSolution, grid: int = 2001) -> float:
    """Length needed by naive separation: min over eta + zeta <= eps of
    (1 - eta) * (k R(d) + sqrt(k V(d)) Qinv(zeta)) / C, two-term forms with
    the O(.) remainders dropped."""
    if not 0 < eps < 1:
        raise ValueError("eps must be in (0,1)")
    R, V = rd.rate, rd.dispersion
    etas = np.linspace(0.0, eps, grid)[:-1]
    zetas = eps - etas
    qi = np.array([normal_tail_inv(z) for z in zetas])
    vals = (1.0 - etas) * (k * R + np.sqrt(k * V) * qi) / C
    best = float(vals.min())
    if V == 0.0:
        best = min(best, (1.0 - eps) * k * R / C)
    return best
