"""Nonparametric bootstrap confidence intervals.

Resampling is by unit (whole trajectories, preserving within-unit
dependence) and the full pipeline, nuisance fitting included, is rerun on
every replicate.  Replicate b draws from an RNG stream derived
deterministically from (seed, b), so results are bit-identical for any
worker count.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from statistics import NormalDist

import numpy as np

from .errors import EstimationError, TooManyFailedReplicates
from .estimands import Estimand
from .estimators import EstimateReport, estimate_request
from .nuisance import LearnerConfig
from .panel import PanelDataset

MAX_FAILURE_SHARE = 0.10


@dataclass(frozen=True)
class BootstrapSpec:
    replicates: int = 500
    level: float = 0.95
    seed: int = 0
    interval: str = "percentile"  # or "normal"

    def __post_init__(self):
        if self.replicates < 2:
            raise ValueError("bootstrap needs at least 2 replicates")
        if not 0.0 < self.level < 1.0:
            raise ValueError("confidence level must be inside (0, 1)")
        if self.interval not in ("percentile", "normal"):
            raise ValueError(f"unknown interval type {self.interval!r}")


def _replicate_seeds(seed: int, count: int) -> list[np.random.SeedSequence]:
    return np.random.SeedSequence(seed).spawn(count)


def _worker(payload):
    b, data, estimands, methods, config, seed_seq = payload
    rng = np.random.default_rng(seed_seq)
    idx = rng.integers(0, data.n_units, data.n_units)
    try:
        reports = estimate_request(data.take(idx), estimands, methods, config)
    except EstimationError:
        return b, None
    return b, [r.estimate for r in reports]


def bootstrap(data: PanelDataset, estimands: list[Estimand],
              methods: list[str], spec: BootstrapSpec,
              config: LearnerConfig | None = None,
              threads: int = 1) -> list[EstimateReport]:
    """Point estimates with bootstrap confidence intervals.

    Replicates that fail estimation (a resample emptied a risk set or
    degenerated a denominator) are dropped and counted; more than 10%
    failures aborts.
    """
    reports = estimate_request(data, estimands, methods, config)
    B = spec.replicates
    seeds = _replicate_seeds(spec.seed, B)
    payloads = [(b, data, estimands, methods, config, seeds[b])
                for b in range(B)]

    results: dict[int, list[float] | None] = {}
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            for b, vals in pool.map(_worker, payloads,
                                    chunksize=max(1, B // (threads * 4))):
                results[b] = vals
    else:
        for payload in payloads:
            b, vals = _worker(payload)
            results[b] = vals

    draws = [results[b] for b in range(B)]  # replicate order, not finish order
    failed = sum(1 for d in draws if d is None)
    if failed > MAX_FAILURE_SHARE * B:
        raise TooManyFailedReplicates(
            f"{failed} of {B} bootstrap replicates failed"
        )
    kept = np.array([d for d in draws if d is not None])  # (B_ok, n_reports)

    alpha = 1.0 - spec.level
    z = NormalDist().inv_cdf(1.0 - alpha / 2.0)
    for j, report in enumerate(reports):
        vals = kept[:, j]
        report.failed_reps = failed
        report.interval = spec.interval
        if spec.interval == "percentile":
            lo, hi = np.quantile(vals, [alpha / 2.0, 1.0 - alpha / 2.0])
        else:
            # Influence-value variance for the DR estimator, replicate
            # spread otherwise.
            se = report.se_eif if report.se_eif is not None else float(
                np.std(vals, ddof=1))
            lo, hi = report.estimate - z * se, report.estimate + z * se
        report.ci_low = float(lo)
        report.ci_high = float(hi)
    return reports


def default_threads() -> int:
    env = os.environ.get("SELIG_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            return 1
    return 1
