"""Experiment orchestration: validated configs, deterministic (worker-count
invariant) trial execution, statistics, and CSV/JSON emission.

Every trial is a pure function of (master seed, trial id), so results are
reduced in trial-id order and do not depend on how trials were distributed
across workers.
"""

from __future__ import annotations

import csv
import io
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .channels import Dmc, bec, bsc
from .info import LN2
from .ratedist import (SourceModel, ba_rate_distortion, bernoulli_hamming,
                       discrete_source, gaussian_source, source_expansion)
from .rng import seed_stream
from .vlf import (MessagePrior, geometric_prior, stop_feedback_length_bound,
                  stop_feedback_trial, uniform_prior, vlft_trial)

SCHEMA_VERSION = 1
MIN_TRIALS_FOR_CI = 1000

KINDS = ("stop_feedback", "vlft", "jscc_excess", "jscc_average",
         "jscc_guaranteed", "sk", "energy_vl", "ppm", "bound")


class ConfigError(ValueError):
    """Schema violation; the message names the offending field path."""


@dataclass
class RunRecord:
    kind: str
    config: dict
    metrics: dict          # name -> {"estimate", "half_width", "n"}
    bounds: dict = field(default_factory=dict)
    violations: list = field(default_factory=list)
    wall_time_s: float = 0.0
    schema_version: int = SCHEMA_VERSION

    def stripped(self) -> dict:
        """Dict form without the wall time (for determinism comparisons)."""
        d = record_to_dict(self)
        d.pop("wall_time_s")
        return d


def _need(cfg: dict, key: str, path: str = ""):
    if key not in cfg:
        raise ConfigError(f"missing field: {path}{key}")
    return cfg[key]


def _channel_from(cfg: dict, path: str = "channel.") -> Dmc:
    kind = _need(cfg, "kind", path)
    if kind == "bsc":
        return bsc(_need(cfg, "delta", path))
    if kind == "bec":
        return bec(_need(cfg, "delta", path))
    if kind == "matrix":
        return Dmc(np.asarray(_need(cfg, "W", path), dtype=np.float64))
    raise ConfigError(f"unknown channel kind: {path}kind={kind!r}")


def _prior_from(cfg: dict, path: str = "prior.") -> MessagePrior:
    kind = _need(cfg, "kind", path)
    if kind == "uniform":
        return uniform_prior(int(_need(cfg, "M", path)))
    if kind == "geometric":
        return geometric_prior(float(_need(cfg, "q", path)))
    if kind == "pmf":
        return MessagePrior(np.asarray(_need(cfg, "pmf", path), dtype=np.float64))
    raise ConfigError(f"unknown prior kind: {path}kind={kind!r}")


def _source_from(cfg: dict, path: str = "source.") -> SourceModel:
    kind = _need(cfg, "kind", path)
    if kind == "bernoulli":
        return bernoulli_hamming(float(_need(cfg, "p", path)))
    if kind == "gaussian":
        return gaussian_source(float(_need(cfg, "variance", path)))
    if kind == "discrete":
        return discrete_source(np.asarray(_need(cfg, "pmf", path)),
                               np.asarray(_need(cfg, "distortion", path)))
    raise ConfigError(f"unknown source kind: {path}kind={kind!r}")


def validate(config: dict) -> dict:
    if not isinstance(config, dict):
        raise ConfigError("config must be a mapping")
    kind = _need(config, "kind")
    if kind not in KINDS:
        raise ConfigError(f"unknown experiment kind: kind={kind!r}")
    if kind != "bound":
        trials = _need(config, "trials")
        if not isinstance(trials, int) or trials < 1:
            raise ConfigError("invalid field: trials must be a positive integer")
        _need(config, "seed")
    return config


def run_trials(fn, trials: int, workers: int = 1) -> np.ndarray:
    """Evaluate fn(trial_id) -> tuple of floats for all ids; results stacked
    in trial-id order regardless of worker count."""
    if workers <= 1:
        rows = [fn(t) for t in range(trials)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(fn, range(trials)))
    return np.asarray(rows, dtype=np.float64)


def _stat(x: np.ndarray, require_ci: bool = True):
    n = x.size
    if require_ci and n < MIN_TRIALS_FOR_CI:
        raise ConfigError(
            f"invalid field: trials={n} below the {MIN_TRIALS_FOR_CI} minimum "
            "for normal-approximation confidence intervals")
    hw = 1.96 * float(x.std(ddof=1)) / np.sqrt(n) if n > 1 else 0.0
    return {"estimate": float(x.mean()), "half_width": hw, "n": int(n)}


def _se(metric):  # standard error back out of the 95% half-width
    return metric["half_width"] / 1.96 if metric["half_width"] else 0.0


def run(config: dict, workers: int = 1) -> RunRecord:
    """Dispatch a validated config to the matching simulator or evaluator."""
    config = validate(config)
    kind = config["kind"]
    t0 = time.perf_counter()
    if kind == "stop_feedback":
        rec = _run_stop_feedback(config, workers)
    elif kind == "vlft":
        rec = _run_vlft(config, workers)
    elif kind == "jscc_excess":
        rec = _run_jscc_excess(config)
    elif kind == "jscc_average":
        rec = _run_jscc_average(config)
    elif kind == "jscc_guaranteed":
        rec = _run_jscc_guaranteed(config)
    elif kind == "sk":
        rec = _run_sk(config)
    elif kind == "energy_vl":
        rec = _run_energy_vl(config, workers)
    elif kind == "ppm":
        rec = _run_ppm(config)
    else:
        rec = _run_bound(config)
    rec.wall_time_s = time.perf_counter() - t0
    return rec


def _run_stop_feedback(cfg, workers):
    dmc = _channel_from(_need(cfg, "channel"))
    prior = _prior_from(_need(cfg, "prior"))
    gamma = float(_need(cfg, "gamma_nats"))
    mode = cfg.get("mode", "full_decoder")
    seed, trials = cfg["seed"], cfg["trials"]

    def one(t):
        tr = stop_feedback_trial(dmc, prior, gamma, mode, seed_stream(seed, t))
        return tr.tau, tr.error, tr.info_sum

    rows = run_trials(one, trials, workers)
    tau, err = _stat(rows[:, 0]), _stat(rows[:, 1])
    metrics = {"tau": tau, "error": err, "info_sum_nats": _stat(rows[:, 2])}
    bounds = {
        "error_bound": float(np.exp(-gamma)),
        "length_bound": stop_feedback_length_bound(
            prior.entropy, float(np.exp(-gamma)), dmc.C, dmc.a0),
    }
    violations = []
    if err["estimate"] > bounds["error_bound"] + 4 * _se(err):
        violations.append("error exceeds exp(-gamma) beyond 4 SE")
    if tau["estimate"] > bounds["length_bound"] + 4 * _se(tau):
        violations.append("mean length exceeds the stop-feedback bound beyond 4 SE")
    return RunRecord(cfg["kind"], cfg, metrics, bounds, violations)


def _run_vlft(cfg, workers):
    dmc = _channel_from(_need(cfg, "channel"))
    prior = _prior_from(_need(cfg, "prior"))
    seed, trials = cfg["seed"], cfg["trials"]
    rule = cfg.get("decode_rule", "map_stop")

    def one(t):
        tr = vlft_trial(dmc, prior, seed_stream(seed, t), decode_rule=rule)
        return tr.tau, tr.error, float(tr.anomaly)

    rows = run_trials(one, trials, workers)
    metrics = {"tau": _stat(rows[:, 0]), "error": _stat(rows[:, 1]),
               "anomalies": _stat(rows[:, 2])}
    bounds = {"entropy_over_C": prior.entropy / dmc.C}
    violations = []
    if rule == "map_stop" and metrics["error"]["estimate"] > 0:
        violations.append("zero-error VLFT produced decoding errors")
    return RunRecord(cfg["kind"], cfg, metrics, bounds, violations)


def _run_jscc_excess(cfg):
    from .jscc import simulate_excess

    dmc = _channel_from(_need(cfg, "channel"))
    src = _source_from(_need(cfg, "source"))
    k, d, eps = int(_need(cfg, "k")), float(_need(cfg, "d")), float(_need(cfg, "eps"))
    rd = ba_rate_distortion(src, d)
    split = tuple(cfg["split"]) if "split" in cfg else None
    st = simulate_excess(k, d, eps, dmc, rd, cfg["seed"], cfg["trials"],
                         split=split, mode=cfg.get("mode"))
    metrics = {
        "tau": {"estimate": st.ell_hat, "half_width": st.ell_half_width,
                "n": st.trials},
        "excess": {"estimate": st.failure_hat, "half_width": st.failure_half_width,
                   "n": st.trials},
    }
    bounds = {"eps_target": eps,
              "expansion_length": st.config["expansion_ell"],
              "converse_length_nats": source_expansion(k, d, eps, rd) / dmc.C}
    violations = []
    if st.failure_hat > eps + 4 * st.failure_half_width / 1.96:
        violations.append("excess-distortion probability exceeds target beyond 4 SE")
    return RunRecord(cfg["kind"], cfg, metrics, bounds, violations)


def _run_jscc_average(cfg):
    from .jscc import simulate_average

    dmc = _channel_from(_need(cfg, "channel"))
    src = _source_from(_need(cfg, "source"))
    k, d = int(_need(cfg, "k")), float(_need(cfg, "d"))
    rd = ba_rate_distortion(src, d)
    st = simulate_average(k, d, dmc, rd, cfg["seed"], cfg["trials"],
                          M=cfg.get("M"))
    metrics = {
        "tau": {"estimate": st.ell_hat, "half_width": st.ell_half_width,
                "n": st.trials},
        "distortion": {"estimate": st.avg_distortion,
                       "half_width": st.config["distortion_half_width"],
                       "n": st.trials},
    }
    return RunRecord(cfg["kind"], cfg, metrics, {"d_target": d})


def _run_jscc_guaranteed(cfg):
    from .jscc import simulate_guaranteed

    dmc = _channel_from(_need(cfg, "channel"))
    src = _source_from(_need(cfg, "source"))
    k, d = int(_need(cfg, "k")), float(_need(cfg, "d"))
    st = simulate_guaranteed(k, d, dmc, src, cfg["seed"], cfg["trials"])
    metrics = {"tau": {"estimate": st.ell_hat, "half_width": st.ell_half_width,
                       "n": st.trials},
               "violations": {"estimate": st.failure_hat, "half_width": 0.0,
                              "n": st.trials}}
    bounds = {"deps_entropy_nats": st.config["map_entropy_nats"]}
    return RunRecord(cfg["kind"], cfg, metrics, bounds)


def _run_sk(cfg):
    from .energy import sk_mse_batch

    sigma2 = float(cfg.get("sigma2", 1.0))
    P, n = float(_need(cfg, "P")), int(_need(cfg, "n"))
    mses, powers = sk_mse_batch(sigma2, P, n, cfg["trials"], cfg["seed"])
    metrics = {"mse": {"estimate": float(mses[-1]), "half_width": 0.0,
                       "n": cfg["trials"]},
               "per_use_power": {"estimate": float(powers.mean()),
                                 "half_width": 0.0, "n": cfg["trials"]}}
    return RunRecord(cfg["kind"], cfg, metrics,
                     {"mse_theory": sigma2 / (1 + P) ** n, "power_target": P})


def _run_energy_vl(cfg, workers):
    from .energy import IdealBitTransmitter, huffman_code, vl_feedback_energy_trial

    prior = _prior_from(_need(cfg, "prior"))
    N0 = float(cfg.get("N0", 2.0))
    tx = IdealBitTransmitter(N0)
    words = huffman_code(prior)
    seed = cfg["seed"]

    def one(t):
        ok, e, nb = vl_feedback_energy_trial(prior, tx, seed_stream(seed, t),
                                             codewords=words)
        return float(ok), e, float(nb)

    rows = run_trials(one, cfg["trials"], workers)
    metrics = {"correct": _stat(rows[:, 0]), "energy": _stat(rows[:, 1]),
               "bits": _stat(rows[:, 2])}
    bounds = {"energy_bound": N0 * LN2 * (prior.entropy / LN2 + 1.0),
              "entropy_nats": prior.entropy}
    violations = []
    if metrics["energy"]["estimate"] >= bounds["energy_bound"]:
        violations.append("mean energy not strictly below N0 ln2 (H+1)")
    return RunRecord(cfg["kind"], cfg, metrics, bounds, violations)


def _run_ppm(cfg):
    from .energy import ppm_error_prob, ppm_trials

    E, m = float(_need(cfg, "E")), int(_need(cfg, "m"))
    N0 = float(cfg.get("N0", 2.0))
    errs = ppm_trials(E, m, N0, cfg["trials"], cfg["seed"])
    err = _stat(errs)
    bound = ppm_error_prob(E, m, N0)
    violations = []
    if abs(err["estimate"] - bound) > 4 * _se(err):
        violations.append("PPM error rate disagrees with quadrature beyond 4 SE")
    return RunRecord(cfg["kind"], cfg, {"error": err},
                     {"quadrature": bound}, violations)


def _run_bound(cfg):
    """Pure evaluators: capacity, rate-distortion, expansions, converses."""
    from .energy import awgn_jscc_converse, energy_expansion
    from .jscc import naive_separation_bound
    from .vlf import vlf_converse_length, vlft_converse_length

    which = _need(cfg, "which", "bound.")
    out = {}
    if which == "capacity":
        dmc = _channel_from(_need(cfg, "channel"))
        out = {"capacity_nats": dmc.C, "a0_nats": dmc.a0}
    elif which == "rd":
        rd = ba_rate_distortion(_source_from(_need(cfg, "source")),
                                float(_need(cfg, "d")))
        out = {"rate_nats": rd.rate, "slope": rd.slope,
               "dispersion_nats2": rd.dispersion}
    elif which == "expansion":
        rd = ba_rate_distortion(_source_from(_need(cfg, "source")),
                                float(_need(cfg, "d")))
        out = {"rate_expansion_nats": source_expansion(
            int(_need(cfg, "k")), float(cfg["d"]), float(_need(cfg, "eps")), rd)}
    elif which == "naive_separation":
        dmc = _channel_from(_need(cfg, "channel"))
        rd = ba_rate_distortion(_source_from(_need(cfg, "source")),
                                float(_need(cfg, "d")))
        out = {"length": naive_separation_bound(
            int(_need(cfg, "k")), float(cfg["d"]), float(_need(cfg, "eps")),
            dmc.C, rd)}
    elif which == "converse_length":
        dmc = _channel_from(_need(cfg, "channel"))
        rd = ba_rate_distortion(_source_from(_need(cfg, "source")),
                                float(_need(cfg, "d")))
        k, d, eps = int(_need(cfg, "k")), float(cfg["d"]), float(_need(cfg, "eps"))
        out = {"vlf_length": vlf_converse_length(k, d, eps, rd, dmc.C),
               "vlft_length": vlft_converse_length(k, d, eps, rd, dmc.C)}
    elif which == "energy_expansion":
        rd = None
        if "source" in cfg:
            rd = ba_rate_distortion(_source_from(cfg["source"]),
                                    float(_need(cfg, "d")))
        out = {"energy_nats": energy_expansion(
            _need(cfg, "expansion_kind", "bound."), int(_need(cfg, "k")),
            rd, cfg.get("eps"))}
    elif which == "awgn_converse":
        rd = ba_rate_distortion(_source_from(_need(cfg, "source")),
                                float(_need(cfg, "d")))
        out = {"eps_lower": awgn_jscc_converse(
            rd, int(_need(cfg, "k")), float(_need(cfg, "E")),
            float(cfg.get("N0", 2.0)), cfg.get("gamma"))}
    else:
        raise ConfigError(f"unknown bound: which={which!r}")
    metrics = {name: {"estimate": float(v), "half_width": 0.0, "n": 0}
               for name, v in out.items()}
    return RunRecord(cfg["kind"], cfg, metrics)


def sweep(base: dict, grid: dict, workers: int = 1):
    """Cartesian sweep over at most two config fields, row-major order;
    per-point seed derived as (master seed, point index)."""
    if len(grid) > 2:
        raise ConfigError("sweep supports at most 2 parameters")
    names = list(grid)
    values = [list(grid[n]) for n in names]
    total = int(np.prod([len(v) for v in values])) if names else 1
    if total > 10 ** 4:
        raise ConfigError(f"sweep grid of {total} points exceeds the 10^4 cap")
    if not names:
        return [run(dict(base), workers)]
    records = []
    idx = 0
    master = base.get("seed", 0)
    combos = ([(a,) for a in values[0]] if len(names) == 1
              else [(a, b) for a in values[0] for b in values[1]])
    for combo in combos:
        cfg = dict(base)
        for n, v in zip(names, combo):
            cfg[n] = v
        cfg["seed"] = int(seed_stream(master, idx).key % (2 ** 63))
        records.append(run(cfg, workers))
        idx += 1
    return records


def record_to_dict(rec: RunRecord) -> dict:
    return {"schema_version": rec.schema_version, "kind": rec.kind,
            "config": rec.config, "metrics": rec.metrics, "bounds": rec.bounds,
            "violations": list(rec.violations), "wall_time_s": rec.wall_time_s}


def _convert_units(rec_dict: dict, units: str) -> dict:
    """units='bits': every key ending in _nats (and _nats2) is divided by
    ln2 (squared for variances) and renamed."""
    if units == "nats":
        return rec_dict
    if units != "bits":
        raise ConfigError(f"unknown units: {units!r}")
    out = json.loads(json.dumps(rec_dict))  # deep copy

    def conv(d):
        for key in list(d):
            v = d[key]
            if isinstance(v, dict):
                conv(v)
            if key.endswith("_nats2"):
                d[key.replace("_nats2", "_bits2")] = (
                    {k2: (x / LN2 ** 2 if k2 in ("estimate", "half_width") else x)
                     for k2, x in v.items()} if isinstance(v, dict) else v / LN2 ** 2)
                del d[key]
            elif key.endswith("_nats"):
                d[key.replace("_nats", "_bits")] = (
                    {k2: (x / LN2 if k2 in ("estimate", "half_width") else x)
                     for k2, x in v.items()} if isinstance(v, dict) else v / LN2)
                del d[key]
    conv(out)
    return out


def _flatten(d: dict, prefix: str = "") -> dict:
    flat = {}
    for key, v in d.items():
        name = f"{prefix}{key}"
        if isinstance(v, dict):
            flat.update(_flatten(v, name + "."))
        elif isinstance(v, (list, tuple)):
            flat[name] = json.dumps(v)
        else:
            flat[name] = v
    return flat


def emit(records, fmt: str = "json", units: str = "nats", path=None) -> str:
    """Serialize records: JSON (one schema-versioned object per record) or
    RFC-4180 CSV with stable column order and >= 12 significant digits."""
    dicts = [_convert_units(record_to_dict(r), units) for r in records]
    if fmt == "json":
        text = json.dumps(dicts, indent=2, sort_keys=True)
    elif fmt == "csv":
        rows = [_flatten(d) for d in dicts]
        cols = []
        for row in rows:
            for c in row:
                if c not in cols:
                    cols.append(c)
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=cols, quoting=csv.QUOTE_MINIMAL,
                                lineterminator="\r\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({c: (f"{v:.12e}" if isinstance(v, float) else v)
                             for c, v in row.items()})
        text = buf.getvalue()
    else:
        raise ConfigError(f"unknown format: {fmt!r}")
    if path is not None:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    return text
