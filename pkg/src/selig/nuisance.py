"""Sequential nuisance models: treatment propensities, eligibility
probabilities, outcome means, and the recursive partial-mean functions the
doubly robust estimator is built from.

A fitted bundle evaluates everything as length-n vectors aligned with the
dataset's units.  A vector entry is meaningful only where the underlying
covariate history exists (the unit is eligible at the level's period);
entries elsewhere hold a neutral fill and are always masked by the
indicator structure of the consuming estimator.

Per-period model fits (one propensity, eligibility, and outcome fit per
time) are shared across estimands; the backward recursion is rerun per
(target time, treatment history).  With only time-invariant covariates the
recursion collapses to products of the per-period fits and no auxiliary
regressions are needed.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import DegenerateFit
from .learners import (
    DesignMatrix,
    PROB_CLIP,
    fit_linear,
    fit_logistic,
    fit_saturated,
    predict,
    predict_saturated,
)
from .panel import PanelDataset, as_history

PI_FLOOR = 1e-6

FEATURE_MODES = ("additive", "history-saturated", "stratified", "saturated")


@dataclass(frozen=True)
class LearnerConfig:
    """How nuisance designs are built and which fits are run.

    feature_mode:
        additive            intercept + history bits + covariate main effects
        history-saturated   intercept + one dummy per treatment-history
                            pattern + covariate main effects
        stratified          a separate intercept and covariate slope per
                            treatment-history pattern (one model per arm)
        saturated           exact cell means over the cross of history and
                            covariate values (discrete covariates only)
    recursion:
        product             regress the next level's fitted values on the
                            eligible, then multiply by the eligibility model
        direct              regress eligibility-times-values on the previous
                            risk set
    """

    feature_mode: str = "additive"
    propensity_feature_mode: str | None = None  # None: same as feature_mode
    recursion: str = "product"
    outcome_kind: str = "auto"  # auto | continuous | binary
    invariant_path: str = "auto"  # auto | on | off
    cross_fit_folds: int = 0
    cross_fit_seed: int = 0
    # Optional covariate restrictions per model family (None = all columns).
    # The treatment models form one family; the outcome and eligibility
    # models form the other, matching the double-robustness pairing.
    outcome_covariates: tuple[str, ...] | None = None
    propensity_covariates: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.feature_mode not in FEATURE_MODES:
            raise ValueError(f"unknown feature mode {self.feature_mode!r}")
        if (self.propensity_feature_mode is not None
                and self.propensity_feature_mode not in FEATURE_MODES):
            raise ValueError(
                f"unknown feature mode {self.propensity_feature_mode!r}")
        if self.recursion not in ("product", "direct"):
            raise ValueError(f"unknown recursion mode {self.recursion!r}")
        if self.outcome_kind not in ("auto", "continuous", "binary"):
            raise ValueError(f"unknown outcome kind {self.outcome_kind!r}")
        if self.invariant_path not in ("auto", "on", "off"):
            raise ValueError(f"unknown invariant-path flag {self.invariant_path!r}")


@dataclass
class Diagnostics:
    clip_events: int = 0
    floored_pi: int = 0
    nonconverged_fits: int = 0
    fits: int = 0

    def merge(self, other: "Diagnostics") -> None:
        self.clip_events += other.clip_events
        self.floored_pi += other.floored_pi
        self.nonconverged_fits += other.nonconverged_fits
        self.fits += other.fits

    def as_dict(self) -> dict:
        return {
            "clip_events": self.clip_events,
            "floored_pi": self.floored_pi,
            "nonconverged_fits": self.nonconverged_fits,
            "fits": self.fits,
        }


class _Model:
    """A fitted conditional model bound to its design recipe."""

    def __init__(self, fit, mode: str, kept: np.ndarray | None,
                 cov_filter: tuple[str, ...] | None = None):
        self.fit = fit
        self.mode = mode  # feature mode used to assemble this design
        self.kept = kept  # boolean column mask applied after assembly
        self.cov_filter = cov_filter

    def predict(self, mat: np.ndarray, names: tuple[str, ...]) -> np.ndarray:
        if self.kept is not None:
            mat = mat[:, self.kept]
            names = tuple(n for n, k in zip(names, self.kept) if k)
        dm = DesignMatrix(mat, names)
        if self.mode == "saturated":
            return predict_saturated(self.fit, dm)
        return predict(self.fit, dm)


class FittedNuisances:
    """All nuisance fits for one dataset under one learner configuration.

    ``train_mask`` restricts every model fit to a subset of units while the
    evaluations still cover the whole dataset; cross-fitting is built on it.
    """

    def __init__(self, data: PanelDataset, config: LearnerConfig | None = None,
                 train_mask: np.ndarray | None = None):
        self.data = data
        self.config = config or LearnerConfig()
        self.diagnostics = Diagnostics()
        n = data.n_units
        self._train = (np.ones(n, dtype=bool) if train_mask is None
                       else np.asarray(train_mask, dtype=bool))
        self._ones = np.ones(n)
        self._cov_cache: dict[int, tuple[np.ndarray, list[str]]] = {}
        self._prop: dict[int, _Model] = {}
        self._elig: dict[int, _Model] = {}
        self._outcome: dict[int, _Model] = {}
        self._mys_cache: dict[tuple, dict[int, np.ndarray]] = {}
        self._ms_cache: dict[tuple, dict[int, np.ndarray]] = {}
        self._w_cache: dict[tuple, np.ndarray] = {}
        if self.config.outcome_kind == "auto":
            vals = data.Y[data.S == 1]
            kind = "binary" if np.isin(vals, (0.0, 1.0)).all() else "continuous"
        else:
            kind = self.config.outcome_kind
        self._outcome_kind = kind
        if self.config.invariant_path == "auto":
            self._invariant = data.time_invariant_only
        else:
            self._invariant = self.config.invariant_path == "on"

    # -- design assembly ---------------------------------------------------

    def _covariates(self, t: int):
        if t not in self._cov_cache:
            self._cov_cache[t] = self.data.covariate_history(t)
        return self._cov_cache[t]

    def _assemble(self, n_bits: int, t_cov: int, bits_source: np.ndarray,
                  mode: str, cov_filter: tuple[str, ...] | None = None):
        """Full design of history columns + covariate history through t_cov.

        bits_source is (n, >=n_bits): observed treatments when fitting, a
        constant target history when predicting.
        """
        cov, cov_names = self._covariates(t_cov)
        if cov_filter is not None:
            allowed = set(cov_filter)
            keep = [j for j, name in enumerate(cov_names)
                    if name in allowed or name.split("@")[0] in allowed]
            cov = cov[:, keep]
            cov_names = [cov_names[j] for j in keep]
        n = cov.shape[0]
        cols: list[np.ndarray] = []
        names: list[str] = []
        if mode == "saturated":
            for j in range(n_bits):
                cols.append(bits_source[:, j])
                names.append(f"z{j + 1}")
            cols.extend(cov.T)
            names.extend(cov_names)
            mat = np.column_stack(cols) if cols else np.zeros((n, 0))
            return mat, tuple(names)
        if mode == "stratified" and n_bits:
            # One intercept and one covariate block per history pattern:
            # equivalent to fitting each treatment arm separately.
            code = np.zeros(n)
            for j in range(n_bits):
                code = code * 2 + bits_source[:, j]
            for pattern in range(2 ** n_bits):
                dummy = (code == pattern).astype(float)
                cols.append(dummy)
                names.append(f"hist{pattern:0{n_bits}b}")
                for cname, col in zip(cov_names, cov.T):
                    cols.append(dummy * np.nan_to_num(col))
                    names.append(f"hist{pattern:0{n_bits}b}*{cname}")
            return np.column_stack(cols), tuple(names)
        cols.append(np.ones(n))
        names.append("intercept")
        if mode == "additive":
            for j in range(n_bits):
                cols.append(bits_source[:, j])
                names.append(f"z{j + 1}")
        elif mode == "history-saturated":
            if n_bits:
                code = np.zeros(n)
                for j in range(n_bits):
                    code = code * 2 + bits_source[:, j]
                for pattern in range(1, 2 ** n_bits):
                    cols.append((code == pattern).astype(float))
                    names.append(f"hist{pattern:0{n_bits}b}")
        cols.extend(cov.T)
        names.extend(cov_names)
        return np.column_stack(cols), tuple(names)

    def _fit(self, kind: str, n_bits: int, t_cov: int, rows: np.ndarray,
             y: np.ndarray, what: str, mode: str | None = None,
             cov_filter: tuple[str, ...] | None = None) -> _Model:
        rows = rows & self._train
        if rows.sum() == 0:
            raise DegenerateFit(f"no rows available to fit {what}")
        mode = mode or self.config.feature_mode
        mat, names = self._assemble(n_bits, t_cov, np.nan_to_num(self.data.Z),
                                    mode, cov_filter)
        mat = mat[rows]
        self.diagnostics.fits += 1
        if mode == "saturated":
            fit = fit_saturated(DesignMatrix(mat, names), y[rows], kind=kind)
            return _Model(fit, "saturated", None, cov_filter)
        # Columns that are constant on the training rows carry no signal and
        # break the logistic information matrix; the intercept absorbs them.
        kept = np.ptp(mat, axis=0) > 0
        if names[0] == "intercept":
            kept[0] = True
        dm = DesignMatrix(mat[:, kept],
                          tuple(n for n, k in zip(names, kept) if k))
        try:
            fit = (fit_linear(dm, y[rows]) if kind == "linear"
                   else fit_logistic(dm, y[rows]))
        except DegenerateFit as exc:
            raise DegenerateFit(f"{what}: {exc}") from exc
        if not fit.converged:
            self.diagnostics.nonconverged_fits += 1
        return _Model(fit, mode, kept, cov_filter)

    def _eval(self, model: _Model, n_bits: int, t_cov: int, bits: tuple,
              rows: np.ndarray, fill: float) -> np.ndarray:
        """Evaluate a model at a fixed target history on the given rows."""
        n = self.data.n_units
        src = (np.tile(np.asarray(bits, dtype=float), (n, 1)) if n_bits
               else np.zeros((n, 0)))
        mat, names = self._assemble(n_bits, t_cov, src, model.mode,
                                    model.cov_filter)
        out = np.full(n, fill)
        if rows.any():
            preds = model.predict(mat[rows], names)
            if model.fit.kind == "logistic":
                self.diagnostics.clip_events += int(
                    ((preds <= PROB_CLIP) | (preds >= 1.0 - PROB_CLIP)).sum()
                )
            out[rows] = preds
        return out

    # -- per-period fits ----------------------------------------------------

    def _propensity_model(self, t: int) -> _Model:
        if t not in self._prop:
            rows = self.data.eligible(t)
            self._prop[t] = self._fit(
                "logistic", t - 1, t, rows, np.nan_to_num(self.data.Z[:, t - 1]),
                f"treatment model at time {t}",
                mode=(self.config.propensity_feature_mode
                      or self.config.feature_mode),
                cov_filter=self.config.propensity_covariates,
            )
        return self._prop[t]

    def _eligibility_model(self, t: int) -> _Model:
        """Model of S_t given history, fit on the time-(t-1) risk set."""
        if t not in self._elig:
            rows = self.data.eligible(t - 1)
            self._elig[t] = self._fit(
                "logistic", t - 1, t - 1, rows,
                self.data.S[:, t - 1].astype(float),
                f"eligibility model for time {t}",
                cov_filter=self.config.outcome_covariates,
            )
        return self._elig[t]

    def _outcome_model(self, t: int) -> _Model:
        if t not in self._outcome:
            rows = self.data.eligible(t)
            kind = "logistic" if self._outcome_kind == "binary" else "linear"
            self._outcome[t] = self._fit(
                kind, t, t, rows, np.nan_to_num(self.data.Y[:, t - 1]),
                f"outcome model at time {t}",
                cov_filter=self.config.outcome_covariates,
            )
        return self._outcome[t]

    # -- evaluations ---------------------------------------------------------

    def w_eval(self, t: int, zbits) -> np.ndarray:
        """P-hat(Z_t = z_t | history, covariates) per unit; fill 1 off-support."""
        zbits = tuple(as_history(zbits).bits)
        key = (t, zbits)
        if key not in self._w_cache:
            model = self._propensity_model(t)
            rows = self.data.eligible(t)
            p1 = self._eval(model, t - 1, t, zbits[: t - 1], rows, fill=0.5)
            w = np.where(rows, p1 if zbits[t - 1] == 1 else 1.0 - p1, 1.0)
            self._w_cache[key] = w
        return self._w_cache[key]

    def pi_eval(self, t: int, zbits) -> np.ndarray:
        """Cumulative propensity product through t, floored at 1e-6."""
        zbits = tuple(as_history(zbits).bits)
        out = np.ones(self.data.n_units)
        for s in range(1, t + 1):
            out = out * self.w_eval(s, zbits[:s])
        low = out < PI_FLOOR
        if low.any():
            self.diagnostics.floored_pi += int((low & self.data.eligible(t)).sum())
            out = np.maximum(out, PI_FLOOR)
        return out

    def p_eval(self, t: int, zbits) -> np.ndarray:
        """P-hat(S_t = 1 | ...) at a target history (length t-1)."""
        zbits = tuple(as_history(zbits).bits)
        if t == 1:
            return self._ones.copy()
        model = self._eligibility_model(t)
        rows = self._ones > 0 if self._invariant else self.data.eligible(t - 1)
        return self._eval(model, t - 1, t - 1, zbits, rows, fill=1.0)

    def mu_eval(self, t: int, zbits) -> np.ndarray:
        zbits = tuple(as_history(zbits).bits)
        model = self._outcome_model(t)
        rows = self._ones > 0 if self._invariant else self.data.eligible(t)
        return self._eval(model, t, t, zbits, rows, fill=0.0)

    # -- recursive partial means ---------------------------------------------

    def _mys_levels(self, t: int, zbits: tuple) -> dict[int, np.ndarray]:
        key = (t, zbits)
        if key in self._mys_cache:
            return self._mys_cache[key]
        levels: dict[int, np.ndarray] = {t: self.mu_eval(t, zbits)}
        if self._invariant:
            for tp in range(t - 1, 0, -1):
                levels[tp] = levels[tp + 1] * self.p_eval(tp + 1, zbits[:tp])
        else:
            for tp in range(t - 1, 0, -1):
                levels[tp] = self._recurse_level(levels[tp + 1], tp, zbits)
        self._mys_cache[key] = levels
        return levels

    def _ms_levels(self, t: int, zbits: tuple) -> dict[int, np.ndarray]:
        """Partial means of eligibility; zbits has length t-1, levels 1..t-1."""
        key = (t, zbits)
        if key in self._ms_cache:
            return self._ms_cache[key]
        if t == 1:
            levels: dict[int, np.ndarray] = {}
        else:
            levels = {t - 1: self.p_eval(t, zbits)}
            if self._invariant:
                for tp in range(t - 2, 0, -1):
                    levels[tp] = levels[tp + 1] * self.p_eval(tp + 1, zbits[:tp])
            else:
                for tp in range(t - 2, 0, -1):
                    levels[tp] = self._recurse_level(levels[tp + 1], tp, zbits)
        self._ms_cache[key] = levels
        return levels

    def _recurse_level(self, upper: np.ndarray, tp: int, zbits: tuple) -> np.ndarray:
        """One backward step: from level tp+1 values to level tp values."""
        data = self.data
        next_elig = data.eligible(tp + 1)
        if self.config.recursion == "product":
            # Regress the fitted upper-level values among the still-eligible,
            # then multiply by the modeled continuation probability.
            model = self._fit(
                "linear", tp, tp, next_elig, upper,
                f"level-{tp} continuation regression",
                cov_filter=self.config.outcome_covariates,
            )
            rows = data.eligible(tp)
            pred = self._eval(model, tp, tp, zbits[:tp], rows, fill=0.0)
            return pred * self.p_eval(tp + 1, zbits[:tp])
        # Direct form: the regressand is zero for units that drop out.
        regressand = np.where(next_elig, upper, 0.0)
        rows = data.eligible(tp)
        model = self._fit(
            "linear", tp, tp, rows, regressand,
            f"level-{tp} dropout-weighted regression",
            cov_filter=self.config.outcome_covariates,
        )
        return self._eval(model, tp, tp, zbits[:tp], rows, fill=0.0)

    def mys_eval(self, t: int, zbits, tp: int) -> np.ndarray:
        """m-hat for the joint outcome-eligibility mean at level tp (1..t)."""
        zbits = tuple(as_history(zbits).bits)
        return self._mys_levels(t, zbits)[tp]

    def ms_eval(self, t: int, zbits, tp: int) -> np.ndarray:
        """m-hat for eligibility at level tp (1..t-1); zbits has length t-1."""
        zbits = tuple(as_history(zbits).bits)
        return self._ms_levels(t, zbits)[tp]

    @property
    def n_units(self) -> int:
        return self.data.n_units


class CrossFitNuisances:
    """K-fold cross-fitting: every unit is evaluated through the bundle whose
    training folds exclude it.  Fold assignment is by unit and seeded."""

    def __init__(self, data: PanelDataset, config: LearnerConfig):
        if config.cross_fit_folds < 2:
            raise ValueError("cross-fitting needs at least 2 folds")
        self.data = data
        self.config = config
        self.diagnostics = Diagnostics()
        rng = np.random.default_rng(
            np.random.SeedSequence(entropy=config.cross_fit_seed, spawn_key=(71,))
        )
        n = data.n_units
        folds = np.arange(n) % config.cross_fit_folds
        rng.shuffle(folds)
        self.folds = folds
        inner = replace(config, cross_fit_folds=0)
        self._bundles = [
            (folds == k, FittedNuisances(data, inner, train_mask=(folds != k)))
            for k in range(config.cross_fit_folds)
        ]

    def _stitch(self, name: str, *args) -> np.ndarray:
        out = np.empty(self.data.n_units)
        for held, bundle in self._bundles:
            out[held] = getattr(bundle, name)(*args)[held]
        return out

    def w_eval(self, t, zbits):
        return self._stitch("w_eval", t, zbits)

    def pi_eval(self, t, zbits):
        return self._stitch("pi_eval", t, zbits)

    def p_eval(self, t, zbits):
        return self._stitch("p_eval", t, zbits)

    def mys_eval(self, t, zbits, tp):
        return self._stitch("mys_eval", t, zbits, tp)

    def ms_eval(self, t, zbits, tp):
        return self._stitch("ms_eval", t, zbits, tp)

    def collect_diagnostics(self) -> Diagnostics:
        for _, bundle in self._bundles:
            self.diagnostics.merge(bundle.diagnostics)
            bundle.diagnostics = Diagnostics()
        return self.diagnostics

    @property
    def n_units(self) -> int:
        return self.data.n_units


def make_bundle(data: PanelDataset, config: LearnerConfig | None = None):
    config = config or LearnerConfig()
    if config.cross_fit_folds >= 2:
        return CrossFitNuisances(data, config)
    return FittedNuisances(data, config)
