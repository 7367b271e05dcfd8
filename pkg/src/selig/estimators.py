"""Point estimators for the eligible treatment effect and the expected
cumulative outcome: outcome-regression, inverse-probability-weighting, and
the influence-function-based doubly robust estimator.

Every estimator is assembled from two per-history components: the joint
mean N = E{Y_t(hist) S_t} and the eligibility probability D = P{S_t = 1
under hist}.  Effects are (N1 - N0) / D; policy values are sums of N over
the policy's support weighted by the sequence probabilities.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateDenominator, DegenerateFit, EmptyRiskSet
from .estimands import EligSpec, Estimand, MeanSpec, TauSpec, ThetaSpec
from .nuisance import CrossFitNuisances, LearnerConfig, make_bundle
from .panel import PanelDataset, as_history, risk_set
from .policy import Policy

DENOM_GUARD = 1e-8
RISK_SET_WARN = 30

METHODS = ("reg", "ipw", "dr")


@dataclass
class EstimateReport:
    """One estimand under one method, with diagnostics and optional CI."""

    estimand: str
    method: str
    estimate: float
    eif: np.ndarray | None = None
    risk_sets: dict = field(default_factory=dict)
    risk_set_min: int | None = None
    diagnostics: dict = field(default_factory=dict)
    se_eif: float | None = None
    ci_low: float | None = None
    ci_high: float | None = None
    interval: str | None = None
    failed_reps: int = 0

    def small_risk_sets(self, threshold: int = RISK_SET_WARN) -> dict:
        return {k: v for k, v in self.risk_sets.items() if v < threshold}


def _zbits(hist) -> tuple[int, ...]:
    return tuple(as_history(hist).bits)


def _match(data: PanelDataset, zbits) -> np.ndarray:
    """Indicator of observed history match (implies eligibility there)."""
    return data.history_match(zbits).astype(float)


def _record_risk_sets(data: PanelDataset, t: int, zbits, out: dict) -> None:
    for tp in range(1, t + 1):
        label = f"t{tp}:{''.join(map(str, zbits[: tp - 1]))}"
        if label not in out:
            out[label] = int(len(risk_set(data, tp, zbits[: tp - 1])))


def components_reg(data: PanelDataset, bundle, t: int, zbits) -> tuple[float, float]:
    """Plug-in averages of the recursive fits (the g-formula estimator)."""
    zbits = _zbits(zbits)
    num = float(np.mean(bundle.mys_eval(t, zbits, 1)))
    if t == 1:
        den = 1.0
    else:
        den = float(np.mean(bundle.ms_eval(t, zbits[: t - 1], 1)))
    return num, den


def components_ipw(data: PanelDataset, bundle, t: int, zbits) -> tuple[float, float]:
    """Inverse-probability-weighted moments (Horvitz-Thompson averages)."""
    zbits = _zbits(zbits)
    s_t = data.eligible(t).astype(float)
    ind_full = _match(data, zbits)
    ind_prev = _match(data, zbits[: t - 1]) * s_t
    y = np.where(ind_full > 0, data.Y[:, t - 1], 0.0)
    num = float(np.mean(y * ind_full / bundle.pi_eval(t, zbits)))
    den = float(np.mean(ind_prev / bundle.pi_eval(t - 1, zbits[: t - 1])))
    return num, den


def dr_summands(data: PanelDataset, bundle, t: int, zbits) -> np.ndarray:
    """Per-unit influence summands for the joint mean E{Y_t(hist) S_t}."""
    zbits = _zbits(zbits)
    phi = bundle.mys_eval(t, zbits, 1).copy()
    ind_full = _match(data, zbits)
    y = np.where(ind_full > 0, data.Y[:, t - 1], 0.0)
    resid = y - bundle.mys_eval(t, zbits, t)
    phi += ind_full * resid / bundle.pi_eval(t, zbits)
    for tp in range(2, t + 1):
        ind = _match(data, zbits[: tp - 1])
        s_tp = data.S[:, tp - 1].astype(float)
        step = (s_tp * bundle.mys_eval(t, zbits, tp)
                - bundle.mys_eval(t, zbits, tp - 1))
        phi += ind * step / bundle.pi_eval(tp - 1, zbits[: tp - 1])
    return phi


def dr_summands_elig(data: PanelDataset, bundle, t: int, zbits_prev) -> np.ndarray:
    """Per-unit influence summands for P{S_t = 1 under the history}."""
    zbits = _zbits(zbits_prev)
    n = data.n_units
    if t == 1:
        return np.ones(n)
    phi = bundle.ms_eval(t, zbits, 1).copy()
    ind = _match(data, zbits)
    s_t = data.S[:, t - 1].astype(float)
    resid = s_t - bundle.ms_eval(t, zbits, t - 1)
    phi += ind * resid / bundle.pi_eval(t - 1, zbits)
    for tp in range(2, t):
        ind = _match(data, zbits[: tp - 1])
        s_tp = data.S[:, tp - 1].astype(float)
        step = (s_tp * bundle.ms_eval(t, zbits, tp)
                - bundle.ms_eval(t, zbits, tp - 1))
        phi += ind * step / bundle.pi_eval(tp - 1, zbits[: tp - 1])
    return phi


def estimate_components(data: PanelDataset, bundle, t: int, zbits,
                        method: str):
    """(N-hat, D-hat) plus per-unit summand vectors when method is 'dr'."""
    if method == "reg":
        num, den = components_reg(data, bundle, t, zbits)
        return num, den, None, None
    if method == "ipw":
        num, den = components_ipw(data, bundle, t, zbits)
        return num, den, None, None
    if method == "dr":
        phi_n = dr_summands(data, bundle, t, zbits)
        phi_d = dr_summands_elig(data, bundle, t, _zbits(zbits)[: t - 1])
        return float(np.mean(phi_n)), float(np.mean(phi_d)), phi_n, phi_d
    raise ValueError(f"unknown method {method!r}")


def estimate_mean(data: PanelDataset, bundle, t: int, hist,
                  method: str = "dr") -> EstimateReport:
    """Mean outcome among the eligible under a full history (length t)."""
    zbits = _zbits(hist)
    label = f"mean@{t}:{''.join(map(str, zbits))}"
    try:
        num, den, phi_n, phi_d = estimate_components(data, bundle, t, zbits, method)
    except DegenerateFit as exc:
        raise EmptyRiskSet(f"{label}: {exc}") from exc
    if abs(den) < DENOM_GUARD:
        raise DegenerateDenominator(
            f"{label}: eligibility denominator {den:.3g} below guard"
        )
    report = EstimateReport(estimand=label, method=method, estimate=num / den)
    _record_risk_sets(data, t, zbits, report.risk_sets)
    if phi_n is not None:
        # Influence values of the ratio via the delta method.
        report.eif = (phi_n - (num / den) * phi_d) / den
        report.se_eif = float(np.sqrt(np.mean(report.eif ** 2) / data.n_units))
    _finish(report, bundle)
    return report


def estimate_elig(data: PanelDataset, bundle, t: int, hist,
                  method: str = "dr") -> EstimateReport:
    """Probability of being eligible at t under a history of length t-1."""
    zbits = _zbits(hist)
    label = f"elig@{t}:{''.join(map(str, zbits))}"
    try:
        if method == "reg":
            den = 1.0 if t == 1 else float(
                np.mean(bundle.ms_eval(t, zbits, 1)))
            phi_d = None
        elif method == "ipw":
            s_t = data.eligible(t).astype(float)
            ind_prev = _match(data, zbits) * s_t
            den = float(np.mean(ind_prev / bundle.pi_eval(t - 1, zbits)))
            phi_d = None
        else:
            phi_d = dr_summands_elig(data, bundle, t, zbits)
            den = float(np.mean(phi_d))
    except DegenerateFit as exc:
        raise EmptyRiskSet(f"{label}: {exc}") from exc
    report = EstimateReport(estimand=label, method=method, estimate=den)
    _record_risk_sets(data, t, zbits + (0,), report.risk_sets)
    if phi_d is not None:
        report.eif = phi_d - den
        report.se_eif = float(np.sqrt(np.mean(report.eif ** 2) / data.n_units))
    _finish(report, bundle)
    return report


def estimate_ete(data: PanelDataset, bundle, t: int, hist,
                 method: str = "dr") -> EstimateReport:
    """Average eligible treatment effect at time t after the given history."""
    zbits = _zbits(hist)
    label = f"tau@{t}:{''.join(map(str, zbits))}"
    try:
        n1, den, phi_n1, phi_d = estimate_components(
            data, bundle, t, zbits + (1,), method)
        n0, _, phi_n0, _ = estimate_components(
            data, bundle, t, zbits + (0,), method)
    except DegenerateFit as exc:
        raise EmptyRiskSet(f"{label}: {exc}") from exc
    if abs(den) < DENOM_GUARD:
        raise DegenerateDenominator(
            f"{label}: eligibility denominator {den:.3g} below guard"
        )
    tau = (n1 - n0) / den
    report = EstimateReport(estimand=label, method=method, estimate=tau)
    _record_risk_sets(data, t, zbits + (1,), report.risk_sets)
    _record_risk_sets(data, t, zbits + (0,), report.risk_sets)
    if method == "dr":
        report.eif = (phi_n1 - phi_n0 - tau * phi_d) / den
        report.se_eif = float(np.sqrt(np.mean(report.eif ** 2) / data.n_units))
    _finish(report, bundle)
    return report


def estimate_eoe(data: PanelDataset, bundle, policy: Policy,
                 method: str = "dr", label: str | None = None) -> EstimateReport:
    """Expected cumulative outcome under a treatment strategy.

    Histories with zero policy mass are skipped without touching the
    nuisance bundle, so overlap is only required on the policy's support.
    """
    label = label or f"theta:{policy.describe()}"
    total = 0.0
    eif = np.zeros(data.n_units) if method == "dr" else None
    risk_sets: dict = {}
    try:
        for t in range(1, data.horizon + 1):
            for hist, prob in policy.support(t):
                zbits = tuple(hist.bits)
                num, _, phi_n, _ = estimate_components(
                    data, bundle, t, zbits, method)
                total += prob * num
                if eif is not None:
                    eif = eif + prob * phi_n
                _record_risk_sets(data, t, zbits, risk_sets)
    except DegenerateFit as exc:
        raise EmptyRiskSet(f"{label}: {exc}") from exc
    report = EstimateReport(estimand=label, method=method, estimate=total,
                            risk_sets=risk_sets)
    if eif is not None:
        report.eif = eif - total
        report.se_eif = float(np.sqrt(np.mean(report.eif ** 2) / data.n_units))
    _finish(report, bundle)
    return report


def _finish(report: EstimateReport, bundle) -> None:
    report.risk_set_min = (min(report.risk_sets.values())
                           if report.risk_sets else None)
    if isinstance(bundle, CrossFitNuisances):
        report.diagnostics = bundle.collect_diagnostics().as_dict()
    else:
        report.diagnostics = bundle.diagnostics.as_dict()


def estimate_request(data: PanelDataset, estimands: list[Estimand],
                     methods: list[str], config: LearnerConfig | None = None,
                     bundle=None) -> list[EstimateReport]:
    """Fit one nuisance bundle and evaluate every (estimand, method) pair."""
    bundle = bundle if bundle is not None else make_bundle(data, config)
    reports = []
    for spec in estimands:
        for method in methods:
            if method not in METHODS:
                raise ValueError(f"unknown method {method!r}")
            if isinstance(spec, TauSpec):
                reports.append(
                    estimate_ete(data, bundle, spec.t, spec.hist, method))
            elif isinstance(spec, MeanSpec):
                reports.append(
                    estimate_mean(data, bundle, spec.t, spec.hist, method))
            elif isinstance(spec, EligSpec):
                reports.append(
                    estimate_elig(data, bundle, spec.t, spec.hist, method))
            elif isinstance(spec, ThetaSpec):
                reports.append(
                    estimate_eoe(data, bundle, spec.policy, method,
                                 label=spec.label))
            else:
                raise ValueError(f"unsupported estimand {spec!r}")
    return reports
