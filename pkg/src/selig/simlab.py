"""Monte Carlo study harness around the three-period simulation process.

`generate` draws one observational panel (plus the hidden potential-outcome
tables it was derived from).  `run_study` repeats the draw, runs the
requested estimators on the nine standard targets, and reports bias, RMSE,
and Monte Carlo standard errors against oracle truths.

Truths: treatment-effect targets under continuous outcomes are known
constants of the process (additive effects); everything else comes from the
potential-outcome Monte Carlo oracle at ten million draws, cached as a
package fixture with its seed and standard errors.
"""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from . import dgp
from .errors import ValidationError
from .estimands import Estimand, parse_estimand
from .estimators import estimate_request
from .nuisance import LearnerConfig
from .panel import CovariateSchema, PanelDataset

STANDARD_ESTIMANDS = (
    "tau@1:",
    "tau@2:0",
    "tau@2:1",
    "tau@3:00",
    "tau@3:01",
    "tau@3:10",
    "tau@3:11",
    "theta:all:0",
    "theta:all:1",
)

# Additive treatment effects of the continuous-outcome process; immune to
# the outcome noise scale and to the feedback coefficient.
EXACT_TAU_CONTINUOUS = {
    "tau@1:": 1.0,
    "tau@2:0": 0.0,
    "tau@2:1": -0.5,
    "tau@3:00": -1.0,
    "tau@3:01": -0.5,
    "tau@3:10": -1.0,
    "tau@3:11": -0.5,
}

TRUTHS_FIXTURE = "simlab_truths.json"


@dataclass(frozen=True)
class SimulationConfig:
    n: int
    reps: int = 500
    delta: float = 0.0
    outcome: str = "continuous"  # or "binary"
    covariates: str = "correct"  # or "misspecified"
    learners: str = "parametric"  # or "saturated"
    seed: int = 0
    noise_sd: float = 1.0

    def __post_init__(self):
        if self.n < 1:
            raise ValidationError("sample size must be at least 1")
        if self.reps < 1:
            raise ValidationError("repetition count must be at least 1")
        if self.delta not in (0.0, 0.5):
            raise ValidationError("feedback strength must be 0 or 0.5")
        if self.outcome not in ("continuous", "binary"):
            raise ValidationError(f"unknown outcome kind {self.outcome!r}")
        if self.covariates not in ("correct", "misspecified"):
            raise ValidationError(f"unknown covariate mode {self.covariates!r}")
        if self.learners not in ("parametric", "saturated"):
            raise ValidationError(f"unknown learner mode {self.learners!r}")

    def dgp_config(self) -> dgp.DgpConfig:
        return dgp.DgpConfig(delta=self.delta, outcome=self.outcome,
                             noise_sd=self.noise_sd)

    def learner_config(self) -> LearnerConfig:
        # "Parametric" carries the full treatment-history interaction
        # structure: the outcome equations contain products of treatment
        # bits, so a correctly specified parametric model must too.
        mode = ("history-saturated" if self.learners == "parametric"
                else "saturated")
        return LearnerConfig(feature_mode=mode)


def generate(config: SimulationConfig,
             rng: np.random.Generator | None = None,
             keep_potentials: bool = True):
    """One draw of the observational panel (and its potential-outcome tables).

    With nonzero feedback the previous outcome enters the panel as a
    time-varying covariate column (zero in the first period, where it is
    constant and dropped from every design).
    """
    if rng is None:
        rng = np.random.default_rng(np.random.SeedSequence(config.seed))
    pot = dgp.draw_potentials(rng, config.n, config.dgp_config())
    S, Z, Y, X = dgp.assign_treatments(rng, pot, config.dgp_config())
    x_cols = dgp.misspecify(X) if config.covariates == "misspecified" else X
    names = tuple(f"x{j + 1}" for j in range(dgp.N_COVARIATES))
    n, T = S.shape
    if config.delta != 0.0:
        schema = CovariateSchema(time_invariant=names, time_varying=("ylag",))
        ylag = np.full((n, T, 1), np.nan)
        ylag[:, 0, 0] = np.where(S[:, 0] == 1, 0.0, np.nan)
        for t in range(1, T):
            ylag[:, t, 0] = np.where(S[:, t] == 1, Y[:, t - 1], np.nan)
        data = PanelDataset.from_arrays(
            [f"u{j:07d}" for j in range(n)], schema, S, Z, Y, x_cols, ylag)
    else:
        schema = CovariateSchema(time_invariant=names)
        data = PanelDataset.from_arrays(
            [f"u{j:07d}" for j in range(n)], schema, S, Z, Y, x_cols)
    return (data, pot) if keep_potentials else (data, None)


# ---------------------------------------------------------------------------
# Truths
# ---------------------------------------------------------------------------


def _truth_key(outcome: str, delta: float) -> str:
    return f"{outcome}:delta={delta:g}"


def load_cached_truths() -> dict:
    path = resources.files("selig").joinpath("fixtures", TRUTHS_FIXTURE)
    with path.open("r", encoding="utf-8") as fh:
        return json.load(fh)


def study_truths(config: SimulationConfig, recompute: bool = False,
                 draws: int = 10_000_000) -> dict[str, dict]:
    """Truth value and oracle SE for each standard estimand."""
    out: dict[str, dict] = {}
    needed = []
    for label in STANDARD_ESTIMANDS:
        if config.outcome == "continuous" and label in EXACT_TAU_CONTINUOUS:
            out[label] = {"value": EXACT_TAU_CONTINUOUS[label], "se": 0.0,
                          "method": "exact"}
        else:
            needed.append(label)
    if not needed:
        return out
    if not recompute:
        cache = load_cached_truths().get(_truth_key(config.outcome, config.delta), {})
        missing = [lab for lab in needed if lab not in cache]
        if not missing:
            for lab in needed:
                out[lab] = cache[lab]
            return out
    from . import oracle  # deferred: oracle imports this module's sibling dgp

    for lab in needed:
        truth = oracle.mc_truth(config.dgp_config(), parse_estimand(lab)[0],
                                draws=draws)
        out[lab] = {"value": truth.value, "se": truth.se, "method": "mc",
                    "draws": truth.draws}
    return out


# ---------------------------------------------------------------------------
# The study loop
# ---------------------------------------------------------------------------


@dataclass
class McRow:
    estimand: str
    estimator: str
    bias: float
    rmse: float
    mc_se: float
    truth: float


@dataclass
class McReport:
    config: SimulationConfig
    rows: list[McRow]
    estimates: dict = field(default_factory=dict)  # (estimand, method) -> array

    def row(self, estimand: str, estimator: str) -> McRow:
        for r in self.rows:
            if r.estimand == estimand and r.estimator == estimator:
                return r
        raise KeyError((estimand, estimator))


def _study_rep(payload):
    b, config, seed_seq, methods, labels, learner_config = payload
    rng = np.random.default_rng(seed_seq)
    data, _ = generate(config, rng=rng, keep_potentials=False)
    estimands: list[Estimand] = [parse_estimand(lab)[0] for lab in labels]
    reports = estimate_request(data, estimands, list(methods),
                               learner_config or config.learner_config())
    return b, [r.estimate for r in reports]


def run_study(config: SimulationConfig,
              methods: tuple[str, ...] = ("reg", "ipw", "dr"),
              labels: tuple[str, ...] = STANDARD_ESTIMANDS,
              threads: int = 1,
              truths: dict | None = None,
              learner_config: LearnerConfig | None = None) -> McReport:
    """Repeat the draw-and-estimate cycle and summarize against the truths."""
    truths = truths if truths is not None else study_truths(config)
    seeds = np.random.SeedSequence(config.seed).spawn(config.reps)
    payloads = [(b, config, seeds[b], methods, labels, learner_config)
                for b in range(config.reps)]
    results: dict[int, list[float]] = {}
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            for b, vals in pool.map(_study_rep, payloads,
                                    chunksize=max(1, config.reps // (threads * 4))):
                results[b] = vals
    else:
        for payload in payloads:
            b, vals = _study_rep(payload)
            results[b] = vals
    stacked = np.array([results[b] for b in range(config.reps)])

    rows: list[McRow] = []
    estimates: dict = {}
    j = 0
    for lab in labels:
        for method in methods:
            vals = stacked[:, j]
            j += 1
            truth = truths[lab]["value"]
            bias = float(np.mean(vals) - truth)
            rmse = float(np.sqrt(np.mean((vals - truth) ** 2)))
            mc_se = float(np.std(vals, ddof=1) / np.sqrt(len(vals)))
            rows.append(McRow(estimand=lab, estimator=method, bias=bias,
                              rmse=rmse, mc_se=mc_se, truth=truth))
            estimates[(lab, method)] = vals
    return McReport(config=config, rows=rows, estimates=estimates)
