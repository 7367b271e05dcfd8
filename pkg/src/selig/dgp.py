"""Structural model behind the simulation lab and the Monte Carlo oracle.

Three treatment periods.  Four independent standard-Normal baseline
covariates.  Outcomes are Normal with unit variance (configurable) around a
linear mean, or Bernoulli through the logistic link with the same linear
predictors.  The feedback strength ``delta`` routes the previous outcome
into the current treatment and outcome equations; with ``delta = 0`` the
confounders are time invariant.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

N_COVARIATES = 4
HORIZON = 3


def expit(eta: np.ndarray) -> np.ndarray:
    out = np.empty_like(eta, dtype=float)
    pos = eta >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-eta[pos]))
    e = np.exp(eta[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def y1_mean(z1, X):
    return -1.0 + z1 + 0.5 * X[:, 0] - X[:, 2]


def s2_prob(z1, X):
    return expit(1.0 + z1 + 0.5 * X[:, 1] - 0.5 * X[:, 2] - X[:, 3])


def y2_mean(z1, z2, X, y1, delta):
    return (-0.5 - 0.5 * z1 - 0.5 * z1 * z2 + X[:, 1] - 0.5 * X[:, 3]
            + delta * y1)


def s3_prob(z1, z2, X):
    return expit(1.0 - 0.5 * z1 - z2 + 0.5 * X[:, 1] - X[:, 2])


def y3_mean(z2, z3, X, y2, delta):
    return (-1.0 - 0.5 * z2 - z3 + 0.5 * z2 * z3 + X[:, 0] - 0.5 * X[:, 2]
            - delta * y2)


def z1_prob(X):
    return expit(0.2 + 0.2 * X[:, 0] - 0.4 * X[:, 1])


def z2_prob(z1, X, y1, delta):
    return expit(0.5 - 0.5 * z1 + 0.5 * X[:, 1] - 0.5 * X[:, 3] + delta * y1)


def z3_prob(z1, z2, X, y2, delta):
    return expit(1.0 - 0.2 * z1 - 0.5 * z2 + 0.5 * X[:, 0] + 0.5 * X[:, 2]
                 + delta * y2)


def misspecify(X: np.ndarray) -> np.ndarray:
    """Nonlinear covariate transforms handed to a mis-specified analyst."""
    Xs = np.empty_like(X)
    Xs[:, 0] = np.exp(X[:, 0] / 2.0)
    Xs[:, 1] = X[:, 1] / (1.0 + np.exp(X[:, 0])) + 10.0
    Xs[:, 2] = (X[:, 0] * X[:, 2] / 25.0 + 0.6) ** 3
    Xs[:, 3] = (X[:, 0] + X[:, 3] + 20.0) ** 2
    return Xs


@dataclass(frozen=True)
class DgpConfig:
    delta: float = 0.0
    outcome: str = "continuous"  # or "binary"
    noise_sd: float = 1.0

    def __post_init__(self):
        if self.outcome not in ("continuous", "binary"):
            raise ValueError(f"unknown outcome kind {self.outcome!r}")
        if self.delta not in (0.0, 0.5):
            # The coefficient is free in principle; the study grid uses these two.
            object.__setattr__(self, "delta", float(self.delta))


def _draw_outcome(rng, mean, kind, noise_sd):
    if kind == "binary":
        return (rng.random(mean.shape[0]) < expit(mean)).astype(float)
    return mean + noise_sd * rng.standard_normal(mean.shape[0])


@dataclass
class PotentialPanel:
    """Potential eligibility and outcomes for every treatment sequence.

    ``y1[z1]``, ``s2[z1]`` are keyed by the period-1 bit; ``y2``/``s3`` by the
    (z1, z2) pair; ``y3`` by (z1, z2, z3).  Eligibility arrays are {0,1};
    later-period outcome slots are NaN for ineligible draws.
    """

    X: np.ndarray
    y1: dict
    s2: dict
    y2: dict
    s3: dict
    y3: dict


def draw_potentials(rng: np.random.Generator, n: int, config: DgpConfig) -> PotentialPanel:
    """Simulate potential trajectories for all 2^t treatment sequences.

    Common random numbers are shared across sequences (one uniform per
    eligibility/treatment slot, one noise draw per outcome slot), which
    preserves every marginal the estimands depend on.
    """
    X = rng.standard_normal((n, N_COVARIATES))
    u_s2 = rng.random(n)
    u_s3 = rng.random(n)
    if config.outcome == "binary":
        e1, e2, e3 = rng.random(n), rng.random(n), rng.random(n)

        def outcome(mean, e):
            return (e < expit(mean)).astype(float)
    else:
        e1 = rng.standard_normal(n)
        e2 = rng.standard_normal(n)
        e3 = rng.standard_normal(n)

        def outcome(mean, e):
            return mean + config.noise_sd * e

    y1, s2, y2, s3, y3 = {}, {}, {}, {}, {}
    for z1 in (0, 1):
        y1[(z1,)] = outcome(y1_mean(z1, X), e1)
        s2[(z1,)] = (u_s2 < s2_prob(z1, X)).astype(np.int8)
    for z1 in (0, 1):
        for z2 in (0, 1):
            alive = s2[(z1,)] == 1
            ym = y2_mean(z1, z2, X, y1[(z1,)], config.delta)
            vals = np.where(alive, outcome(ym, e2), np.nan)
            y2[(z1, z2)] = vals
            s3_draw = (u_s3 < s3_prob(z1, z2, X)).astype(np.int8)
            s3[(z1, z2)] = np.where(alive, s3_draw, 0).astype(np.int8)
    for z1 in (0, 1):
        for z2 in (0, 1):
            for z3 in (0, 1):
                alive = s3[(z1, z2)] == 1
                ym = y3_mean(z2, z3, X, np.where(alive, y2[(z1, z2)], 0.0),
                             config.delta)
                y3[(z1, z2, z3)] = np.where(alive, outcome(ym, e3), np.nan)
    return PotentialPanel(X=X, y1=y1, s2=s2, y2=y2, s3=s3, y3=y3)


def assign_treatments(rng: np.random.Generator, pot: PotentialPanel,
                      config: DgpConfig) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Observational treatment draws; returns (S, Z, Y, X) panel arrays."""
    n = pot.X.shape[0]
    X = pot.X
    S = np.zeros((n, HORIZON), dtype=np.int8)
    Z = np.full((n, HORIZON), np.nan)
    Y = np.full((n, HORIZON), np.nan)

    S[:, 0] = 1
    z1 = (rng.random(n) < z1_prob(X)).astype(int)
    Z[:, 0] = z1
    pick1 = np.where(z1 == 1, pot.y1[(1,)], pot.y1[(0,)])
    Y[:, 0] = pick1
    s2 = np.where(z1 == 1, pot.s2[(1,)], pot.s2[(0,)])
    S[:, 1] = s2

    alive2 = s2 == 1
    z2 = np.zeros(n, dtype=int)
    draw2 = (rng.random(n) < z2_prob(z1, X, Y[:, 0], config.delta)).astype(int)
    z2[alive2] = draw2[alive2]
    Z[alive2, 1] = z2[alive2]
    y2 = np.full(n, np.nan)
    s3 = np.zeros(n, dtype=np.int8)
    for b1 in (0, 1):
        for b2 in (0, 1):
            sel = alive2 & (z1 == b1) & (z2 == b2)
            y2[sel] = pot.y2[(b1, b2)][sel]
            s3[sel] = pot.s3[(b1, b2)][sel]
    Y[:, 1] = y2
    S[:, 2] = s3

    alive3 = s3 == 1
    z3 = np.zeros(n, dtype=int)
    draw3 = (rng.random(n) < z3_prob(z1, z2, X, np.where(alive3, y2, 0.0),
                                     config.delta)).astype(int)
    z3[alive3] = draw3[alive3]
    Z[alive3, 2] = z3[alive3]
    y3 = np.full(n, np.nan)
    for b1 in (0, 1):
        for b2 in (0, 1):
            for b3 in (0, 1):
                sel = alive3 & (z1 == b1) & (z2 == b2) & (z3 == b3)
                y3[sel] = pot.y3[(b1, b2, b3)][sel]
    Y[:, 2] = y3
    return S, Z, Y, X
