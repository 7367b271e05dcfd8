"""Parametric nuisance learners: weighted least squares and IRLS logistic.

Every conditional-mean model in the package goes through `fit_linear` and
every conditional-probability model through `fit_logistic`.  Designs carry
their column names so the logistic ridge fallback can leave the intercept
unpenalized.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DegenerateFit, ShapeMismatch

PROB_CLIP = 1e-12
SCORE_TOL = 1e-8
COEF_TOL = 1e-10
MAX_ITER = 100
SEPARATION_NORM = 30.0
RIDGE_PENALTY = 1e-6


@dataclass(frozen=True)
class DesignMatrix:
    """An n x d design with named columns."""

    matrix: np.ndarray
    names: tuple[str, ...]

    def __post_init__(self):
        mat = np.atleast_2d(np.asarray(self.matrix, dtype=float))
        object.__setattr__(self, "matrix", mat)
        object.__setattr__(self, "names", tuple(self.names))
        if mat.ndim != 2 or mat.shape[1] != len(self.names):
            raise ShapeMismatch(
                f"design has {mat.shape[1]} columns but {len(self.names)} names"
            )
        if mat.shape[0] and not np.isfinite(mat).all():
            raise ShapeMismatch("design matrix contains non-finite entries")

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    @property
    def d(self) -> int:
        return self.matrix.shape[1]


def design(columns: dict[str, np.ndarray], intercept: bool = True) -> DesignMatrix:
    """Assemble a DesignMatrix from named columns, prepending an intercept."""
    names: list[str] = []
    cols: list[np.ndarray] = []
    n = len(next(iter(columns.values()))) if columns else 0
    if intercept:
        names.append("intercept")
        cols.append(np.ones(n))
    for name, col in columns.items():
        names.append(name)
        cols.append(np.asarray(col, dtype=float))
    mat = np.column_stack(cols) if cols else np.zeros((n, 0))
    return DesignMatrix(mat, tuple(names))


@dataclass(frozen=True)
class LearnerFit:
    """Fitted coefficients plus convergence bookkeeping."""

    kind: str  # "linear" or "logistic"
    coef: np.ndarray
    names: tuple[str, ...]
    converged: bool = True
    iterations: int = 0
    final_step_norm: float = 0.0
    note: str = ""

    def __post_init__(self):
        coef = np.asarray(self.coef, dtype=float)
        object.__setattr__(self, "coef", coef)
        if not np.isfinite(coef).all():
            raise DegenerateFit(f"{self.kind} fit produced non-finite coefficients")


def _clean_weights(X: DesignMatrix, y: np.ndarray, weights):
    y = np.asarray(y, dtype=float)
    if y.shape[0] != X.n:
        raise ShapeMismatch(f"response length {y.shape[0]} != design rows {X.n}")
    if weights is None:
        w = np.ones(X.n)
    else:
        w = np.asarray(weights, dtype=float)
        if w.shape[0] != X.n:
            raise ShapeMismatch("weight length does not match design rows")
        if (w < 0).any() or not np.isfinite(w).all():
            raise ValueError("weights must be finite and nonnegative")
    keep = w > 0
    return X.matrix[keep], y[keep], w[keep]


def fit_linear(X: DesignMatrix, y: np.ndarray, weights=None) -> LearnerFit:
    """Weighted least squares; minimal-norm solution when rank deficient."""
    mat, yy, w = _clean_weights(X, y, weights)
    if mat.shape[0] == 0:
        raise DegenerateFit("linear fit requested on an empty sample")
    sw = np.sqrt(w)
    coef, _, _, _ = np.linalg.lstsq(mat * sw[:, None], yy * sw, rcond=1e-10)
    return LearnerFit(kind="linear", coef=coef, names=X.names)


def _expit(eta: np.ndarray) -> np.ndarray:
    out = np.empty_like(eta)
    pos = eta >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-eta[pos]))
    e = np.exp(eta[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _loglik(mat, yy, w, coef, penalty_mask=None, lam=0.0):
    p = np.clip(_expit(mat @ coef), PROB_CLIP, 1.0 - PROB_CLIP)
    ll = float(np.sum(w * (yy * np.log(p) + (1.0 - yy) * np.log1p(-p))))
    if lam:
        ll -= 0.5 * lam * float(np.sum((coef * penalty_mask) ** 2))
    return ll


def _irls(mat, yy, w, penalty_mask, lam, col_sd, check_separation):
    """Monotone-ascent IRLS; returns (coef, iterations, step_norm, status).

    status is "converged", "separation", or "maxiter".
    """
    d = mat.shape[1]
    coef = np.zeros(d)
    ll = _loglik(mat, yy, w, coef, penalty_mask, lam)
    step_norm = np.inf
    for it in range(1, MAX_ITER + 1):
        p = _expit(mat @ coef)
        resid = w * (yy - p)
        score = mat.T @ resid
        if lam:
            score = score - lam * penalty_mask * coef
        if np.max(np.abs(score)) < SCORE_TOL:
            return coef, it - 1, step_norm, "converged"
        u = w * p * (1.0 - p)
        live = u > 1e-300
        if lam:
            # Augment the LS system with ridge rows so Fisher + lam*M is used.
            su = np.sqrt(u[live])
            A = np.vstack([mat[live] * su[:, None],
                           np.sqrt(lam) * np.diag(penalty_mask.astype(float))])
            b = np.concatenate([resid[live] / su, -np.sqrt(lam) * penalty_mask * coef])
        else:
            if not live.any():
                return coef, it - 1, step_norm, "separation"
            su = np.sqrt(u[live])
            A = mat[live] * su[:, None]
            b = resid[live] / su
        delta, _, _, _ = np.linalg.lstsq(A, b, rcond=1e-10)
        # Step halving keeps the log-likelihood ascent monotone.
        scale = 1.0
        for _ in range(40):
            cand = coef + scale * delta
            ll_cand = _loglik(mat, yy, w, cand, penalty_mask, lam)
            if ll_cand > ll or np.max(np.abs(scale * delta)) < 1e-14:
                break
            scale *= 0.5
        step = scale * delta
        step_norm = float(np.linalg.norm(step))
        rel = step_norm / max(1.0, float(np.linalg.norm(coef)))
        coef = coef + step
        ll = _loglik(mat, yy, w, coef, penalty_mask, lam)
        if check_separation:
            std_norm = float(np.linalg.norm(coef * penalty_mask * col_sd))
            if std_norm > SEPARATION_NORM:
                return coef, it, step_norm, "separation"
        if rel < COEF_TOL:
            p = _expit(mat @ coef)
            score = mat.T @ (w * (yy - p))
            if lam:
                score = score - lam * penalty_mask * coef
            ok = np.max(np.abs(score)) < 1e-6
            return coef, it, step_norm, "converged" if ok else "maxiter"
    return coef, MAX_ITER, step_norm, "maxiter"


def fit_logistic(X: DesignMatrix, y: np.ndarray, weights=None) -> LearnerFit:
    """Maximum-likelihood logistic regression by IRLS with step halving.

    Under separation (standardized coefficient norm above 30) the fit is
    redone with a 1e-6 ridge on the non-intercept terms and flagged
    non-converged.
    """
    mat, yy, w = _clean_weights(X, y, weights)
    if mat.shape[0] == 0:
        raise DegenerateFit("logistic fit requested on an empty sample")
    if not np.isin(yy, (0.0, 1.0)).all():
        raise ValueError("logistic response must be binary 0/1")

    penalty_mask = np.array([n != "intercept" for n in X.names], dtype=float)

    # Intercept-only designs have the closed-form MLE logit(mean).
    if mat.shape[1] == 1 and np.ptp(mat[:, 0]) == 0 and mat[0, 0] != 0:
        pbar = float(np.sum(w * yy) / np.sum(w))
        boundary = pbar <= 0.0 or pbar >= 1.0
        pbar = min(max(pbar, PROB_CLIP), 1.0 - PROB_CLIP)
        coef = np.array([np.log(pbar / (1.0 - pbar)) / mat[0, 0]])
        return LearnerFit(
            kind="logistic", coef=coef, names=X.names,
            converged=not boundary, iterations=0,
            note="boundary" if boundary else "closed-form",
        )

    col_sd = mat.std(axis=0)
    coef, iters, step, status = _irls(
        mat, yy, w, penalty_mask, 0.0, col_sd, check_separation=True
    )
    if status == "separation":
        coef, iters, step, _ = _irls(
            mat, yy, w, penalty_mask, RIDGE_PENALTY, col_sd, check_separation=False
        )
        return LearnerFit(
            kind="logistic", coef=coef, names=X.names,
            converged=False, iterations=iters, final_step_norm=step,
            note="separation",
        )
    return LearnerFit(
        kind="logistic", coef=coef, names=X.names,
        converged=(status == "converged"), iterations=iters,
        final_step_norm=step,
    )


def predict(fit: LearnerFit, X: DesignMatrix) -> np.ndarray:
    """Evaluate a fit on new rows; logistic outputs are clipped away from {0,1}."""
    if X.d != fit.coef.shape[0]:
        raise ShapeMismatch(
            f"design has {X.d} columns, fit expects {fit.coef.shape[0]}"
        )
    eta = X.matrix @ fit.coef
    if fit.kind == "linear":
        return eta
    return np.clip(_expit(eta), PROB_CLIP, 1.0 - PROB_CLIP)


def score_vector(fit: LearnerFit, X: DesignMatrix, y, weights=None) -> np.ndarray:
    """Log-likelihood score at the fitted coefficients (diagnostics/tests)."""
    mat, yy, w = _clean_weights(X, y, weights)
    if fit.kind == "linear":
        return mat.T @ (w * (yy - mat @ fit.coef))
    p = _expit(mat @ fit.coef)
    return mat.T @ (w * (yy - p))


@dataclass
class SaturatedFit:
    """Cell-mean lookup over the exact cross of the design's discrete columns.

    Used by tests and the oracle-agreement paths: on discrete covariates this
    reproduces the conditional expectation exactly.  Cells unseen in training
    fall back to the pooled mean.
    """

    kind: str
    cells: dict[tuple, float]
    fallback: float
    names: tuple[str, ...] = field(default_factory=tuple)
    converged: bool = True

    @property
    def coef(self) -> np.ndarray:  # interface parity with LearnerFit
        return np.array([self.fallback])


def fit_saturated(X: DesignMatrix, y, weights=None, kind: str = "linear") -> SaturatedFit:
    mat, yy, w = _clean_weights(X, y, weights)
    if mat.shape[0] == 0:
        raise DegenerateFit("saturated fit requested on an empty sample")
    sums: dict[tuple, float] = {}
    mass: dict[tuple, float] = {}
    for row, val, wt in zip(mat, yy, w):
        key = tuple(row)
        sums[key] = sums.get(key, 0.0) + wt * val
        mass[key] = mass.get(key, 0.0) + wt
    cells = {k: sums[k] / mass[k] for k in sums}
    fallback = float(np.sum(w * yy) / np.sum(w))
    return SaturatedFit(kind=kind, cells=cells, fallback=fallback, names=X.names)


def predict_saturated(fit: SaturatedFit, X: DesignMatrix) -> np.ndarray:
    out = np.empty(X.n)
    for i, row in enumerate(X.matrix):
        out[i] = fit.cells.get(tuple(row), fit.fallback)
    if fit.kind == "logistic":
        out = np.clip(out, PROB_CLIP, 1.0 - PROB_CLIP)
    return out
