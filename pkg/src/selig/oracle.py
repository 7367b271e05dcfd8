"""Ground-truth machinery: exact enumeration over finite discrete populations
and potential-outcome Monte Carlo for the simulation-lab process.

The enumeration side keeps everything in `fractions.Fraction`, so the
identification identities it referees hold exactly rather than to a
tolerance.  Outcomes in an exact population are point masses at their
conditional mean; every quantity checked here is linear in the outcome, so
nothing is lost.

Three independent computations of the same objects are maintained on
purpose: the regression-route sums, the propensity-route expectation over
the observed-data tree, and the backward recursion for the partial-mean
functions.  Their mutual agreement is the test.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from importlib import resources
from typing import Callable

import numpy as np

from . import dgp
from .errors import OverlapViolation, ValidationError
from .estimands import EligSpec, Estimand, MeanSpec, TauSpec, ThetaSpec
from .panel import CovariateSchema, PanelDataset, as_history

Bits = tuple[int, ...]


def _frac(value) -> Fraction:
    if isinstance(value, Fraction):
        return value
    if isinstance(value, int):
        return Fraction(value)
    if isinstance(value, str):
        return Fraction(value)
    if isinstance(value, float):
        return Fraction(value)
    raise ValidationError(f"cannot interpret {value!r} as an exact probability")


def _bits(hist) -> Bits:
    return tuple(as_history(hist).bits)


@dataclass(frozen=True)
class ExactPopulation:
    """A finite-support population given by its exact probability tables.

    Tables are keyed by (time, treatment-history bits, covariate key); the
    covariate key is the scalar covariate value for time-invariant
    populations and the full covariate-history tuple otherwise.
    """

    name: str
    horizon: int
    x_values: tuple
    x1: dict
    w1: dict
    p: dict
    mu: dict
    time_invariant: bool = True
    transitions: dict = field(default_factory=dict)

    def __post_init__(self):
        self._validate()

    # -- covariate keys ---------------------------------------------------

    def _xkey(self, xbar: tuple):
        return xbar[-1] if self.time_invariant else tuple(xbar)

    def l(self, t: int, hist: Bits, xbar_prev: tuple) -> dict:
        """Conditional covariate distribution at time t: value -> mass."""
        if t == 1:
            return self.x1
        if self.time_invariant:
            return {xbar_prev[-1]: Fraction(1)}
        return self.transitions[(t, hist, tuple(xbar_prev))]

    def w1_at(self, t: int, hist: Bits, xbar: tuple) -> Fraction:
        return self.w1[(t, tuple(hist), self._xkey(xbar))]

    def w_at(self, t: int, zbits: Bits, xbar: tuple) -> Fraction:
        w1 = self.w1_at(t, zbits[:-1], xbar)
        return w1 if zbits[-1] == 1 else 1 - w1

    def p_at(self, t: int, hist: Bits, xbar_prev: tuple) -> Fraction:
        if t == 1:
            return Fraction(1)
        return self.p[(t, tuple(hist), self._xkey(xbar_prev))]

    def mu_at(self, t: int, zbits: Bits, xbar: tuple) -> Fraction:
        return self.mu[(t, tuple(zbits), self._xkey(xbar))]

    # -- validation --------------------------------------------------------

    def _validate(self):
        total = sum(self.x1.values())
        if total != 1:
            raise ValidationError(f"{self.name}: X_1 masses sum to {total}, not 1")
        for (t, hist, key), val in self.w1.items():
            if not 0 < val < 1:
                raise OverlapViolation(
                    f"{self.name}: treatment probability at t={t}, "
                    f"history {hist}, x={key} equals {val}"
                )
        for (t, hist, key), val in self.p.items():
            if not 0 < val <= 1:
                raise OverlapViolation(
                    f"{self.name}: eligibility probability at t={t}, "
                    f"history {hist}, x={key} equals {val}"
                )
        for table in self.transitions.values():
            if sum(table.values()) != 1:
                raise ValidationError(f"{self.name}: covariate transition "
                                      "masses do not sum to 1")

    # -- serialization -----------------------------------------------------

    @staticmethod
    def _flat_key(t: int, hist: Bits, xkey) -> str:
        hist_text = "".join(map(str, hist))
        if isinstance(xkey, tuple):
            x_text = ",".join(repr(v) for v in xkey)
        else:
            x_text = repr(xkey)
        return f"{t}|{hist_text}|{x_text}"

    @staticmethod
    def _parse_flat_key(key: str, values: dict):
        t_text, hist_text, x_text = key.split("|")
        hist = tuple(int(c) for c in hist_text)
        parts = [values[v] for v in x_text.split(",")] if x_text else []
        xkey = tuple(parts) if len(parts) != 1 else parts[0]
        return int(t_text), hist, xkey

    def to_json(self, path) -> None:
        def dump_table(table):
            return {
                self._flat_key(t, hist, key): str(v)
                for (t, hist, key), v in sorted(
                    table.items(), key=lambda kv: repr(kv[0])
                )
            }

        payload = {
            "name": self.name,
            "horizon": self.horizon,
            "time_invariant": self.time_invariant,
            "x_values": list(self.x_values),
            "x1": {repr(v): str(m) for v, m in self.x1.items()},
            "treatment": dump_table(self.w1),
            "eligibility": dump_table(self.p),
            "outcome_mean": dump_table(self.mu),
        }
        if not self.time_invariant:
            payload["transitions"] = {
                self._flat_key(t, hist, tuple(prev)): {
                    repr(v): str(m) for v, m in table.items()
                }
                for (t, hist, prev), table in sorted(
                    self.transitions.items(), key=lambda kv: repr(kv[0])
                )
            }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2)
            fh.write("\n")

    @classmethod
    def from_json(cls, path) -> "ExactPopulation":
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
        values = {repr(v): v for v in raw["x_values"]}
        time_invariant = bool(raw.get("time_invariant", True))

        def load_table(section, tuple_x=not time_invariant):
            out = {}
            for key, val in raw.get(section, {}).items():
                t, hist, xkey = cls._parse_flat_key(key, values)
                if tuple_x and not isinstance(xkey, tuple):
                    xkey = (xkey,)
                out[(t, hist, xkey)] = _frac(val)
            return out

        transitions = {}
        for key, table in raw.get("transitions", {}).items():
            t, hist, xkey = cls._parse_flat_key(key, values)
            if not isinstance(xkey, tuple):
                xkey = (xkey,)
            transitions[(t, hist, xkey)] = {
                values[v]: _frac(m) for v, m in table.items()
            }
        return cls(
            name=raw["name"],
            horizon=int(raw["horizon"]),
            x_values=tuple(raw["x_values"]),
            x1={values[v]: _frac(m) for v, m in raw["x1"].items()},
            w1=load_table("treatment"),
            p=load_table("eligibility"),
            mu=load_table("outcome_mean"),
            time_invariant=time_invariant,
            transitions=transitions,
        )


def build_population(name, horizon, x_values, x1, w1_fn, p_fn, mu_fn,
                     time_invariant=True, transition_fn=None) -> ExactPopulation:
    """Materialize probability tables by walking every reachable cell."""
    x1 = {v: _frac(m) for v, m in x1.items()}
    w1, p, mu, trans = {}, {}, {}, {}

    def reach(level: int, hist: Bits) -> list[tuple]:
        states = [()]
        for s in range(1, level + 1):
            nxt = []
            for xbar in states:
                if s == 1:
                    dist = x1
                elif time_invariant:
                    dist = {xbar[-1]: Fraction(1)}
                else:
                    dist = trans[(s, hist[: s - 1], tuple(xbar))]
                for x, m in dist.items():
                    if m > 0:
                        nxt.append(xbar + (x,))
            states = nxt
        return states

    for t in range(1, horizon + 1):
        for code in range(2 ** (t - 1)):
            hist = tuple((code >> (t - 2 - k)) & 1 for k in range(t - 1))
            if not time_invariant and t >= 2:
                for xbar in reach(t - 1, hist):
                    trans[(t, hist, tuple(xbar))] = {
                        v: _frac(m) for v, m in transition_fn(t, hist, xbar).items()
                    }
            for xbar in reach(t, hist):
                key = xbar[-1] if time_invariant else tuple(xbar)
                w1[(t, hist, key)] = _frac(w1_fn(t, hist, xbar))
            if t >= 2:
                for xbar in reach(t - 1, hist):
                    key = xbar[-1] if time_invariant else tuple(xbar)
                    p[(t, hist, key)] = _frac(p_fn(t, hist, xbar))
            for z_t in (0, 1):
                zb = hist + (z_t,)
                for xbar in reach(t, hist):
                    key = xbar[-1] if time_invariant else tuple(xbar)
                    mu[(t, zb, key)] = _frac(mu_fn(t, zb, xbar))
    return ExactPopulation(
        name=name, horizon=horizon, x_values=tuple(x_values), x1=x1,
        w1=w1, p=p, mu=mu, time_invariant=time_invariant, transitions=trans,
    )


# ---------------------------------------------------------------------------
# Model tables: the population's own tables, optionally shifted.  A shift is
# a callable (t, hist_bits, xbar) -> amount added to the table value.
# ---------------------------------------------------------------------------


@dataclass
class ModelTables:
    pop: ExactPopulation
    w1_shift: Callable | None = None
    p_shift: Callable | None = None
    mu_shift: Callable | None = None

    def w1_at(self, t, hist, xbar):
        val = self.pop.w1_at(t, hist, xbar)
        if self.w1_shift is not None:
            val = val + self.w1_shift(t, hist, xbar)
            if not 0 < val < 1:
                raise OverlapViolation("perturbed treatment probability left (0,1)")
        return val

    def w_at(self, t, zbits, xbar):
        w1 = self.w1_at(t, zbits[:-1], xbar)
        return w1 if zbits[-1] == 1 else 1 - w1

    def p_at(self, t, hist, xbar_prev):
        if t == 1:
            return Fraction(1)
        val = self.pop.p_at(t, hist, xbar_prev)
        if self.p_shift is not None:
            val = val + self.p_shift(t, hist, xbar_prev)
            if not 0 < val <= 1:
                raise OverlapViolation("perturbed eligibility probability left (0,1]")
        return val

    def mu_at(self, t, zbits, xbar):
        val = self.pop.mu_at(t, zbits, xbar)
        if self.mu_shift is not None:
            val = val + self.mu_shift(t, zbits, xbar)
        return val

    def pi_at(self, t, zbits, xbar) -> Fraction:
        out = Fraction(1)
        for s in range(1, t + 1):
            out = out * self.w_at(s, zbits[:s], xbar[:s])
        return out


# ---------------------------------------------------------------------------
# Covariate-history enumeration and the partial-mean recursions
# ---------------------------------------------------------------------------


def _reachable(pop: ExactPopulation, level: int, hist: Bits) -> list[tuple]:
    states = [()]
    for s in range(1, level + 1):
        nxt = []
        for xbar in states:
            for x, m in pop.l(s, hist[: s - 1], xbar).items():
                if m > 0:
                    nxt.append(xbar + (x,))
        states = nxt
    return states


def mys_levels(tables: ModelTables, t: int, hist) -> dict:
    """Backward recursion for the joint outcome-eligibility partial means.

    Returns {level: {xbar: value}} for levels 1..t plus the scalar level 0.
    """
    pop = tables.pop
    hist = _bits(hist)
    levels: dict = {t: {}}
    for xbar in _reachable(pop, t, hist):
        levels[t][xbar] = tables.mu_at(t, hist, xbar)
    for tp in range(t - 1, 0, -1):
        levels[tp] = {}
        for xbar in _reachable(pop, tp, hist):
            inner = sum(
                m * levels[tp + 1][xbar + (x,)]
                for x, m in pop.l(tp + 1, hist[:tp], xbar).items()
            )
            levels[tp][xbar] = inner * tables.p_at(tp + 1, hist[:tp], xbar)
    levels[0] = sum(m * levels[1][(x,)] for x, m in pop.x1.items())
    return levels


def ms_levels(tables: ModelTables, t: int, hist) -> dict:
    """Backward recursion for the eligibility partial means (levels 0..t-1)."""
    pop = tables.pop
    hist = _bits(hist)
    if t == 1:
        return {0: Fraction(1)}
    levels: dict = {t - 1: {}}
    for xbar in _reachable(pop, t - 1, hist):
        levels[t - 1][xbar] = tables.p_at(t, hist, xbar)
    for tp in range(t - 2, 0, -1):
        levels[tp] = {}
        for xbar in _reachable(pop, tp, hist):
            inner = sum(
                m * levels[tp + 1][xbar + (x,)]
                for x, m in pop.l(tp + 1, hist[:tp], xbar).items()
            )
            levels[tp][xbar] = inner * tables.p_at(tp + 1, hist[:tp], xbar)
    levels[0] = sum(m * levels[1][(x,)] for x, m in pop.x1.items())
    return levels


def forward_mys(tables: ModelTables, t: int, hist, tp: int, xbar: tuple):
    """Direct (non-recursive) sum for the same partial mean, from level tp."""
    pop = tables.pop
    hist = _bits(hist)

    def go(s: int, xb: tuple):
        if s > t:
            return tables.mu_at(t, hist, xb)
        total = Fraction(0)
        pe = tables.p_at(s, hist[: s - 1], xb)
        for x, m in pop.l(s, hist[: s - 1], xb).items():
            total += m * go(s + 1, xb + (x,))
        return pe * total

    return go(tp + 1, tuple(xbar))


def forward_ms(tables: ModelTables, t: int, hist, tp: int, xbar: tuple):
    pop = tables.pop
    hist = _bits(hist)
    if t == 1:
        return Fraction(1)

    def go(s: int, xb: tuple):
        if s == t:
            return tables.p_at(t, hist, xb)
        pe = tables.p_at(s, hist[: s - 1], xb)
        total = Fraction(0)
        for x, m in pop.l(s, hist[: s - 1], xb).items():
            total += m * go(s + 1, xb + (x,))
        return pe * total

    return go(tp + 1, tuple(xbar))


# ---------------------------------------------------------------------------
# The observed-data tree
# ---------------------------------------------------------------------------


def observed_paths(pop: ExactPopulation, depth: int):
    """Yield (k, zbits, xbars, mass) over the observed-data law truncated at
    ``depth``; k is the last eligible period on the path (k <= depth)."""

    def go(t, zbits, xbars, mass):
        for x, mx in pop.l(t, zbits, xbars).items():
            if mx == 0:
                continue
            xb = xbars + (x,)
            for z in (0, 1):
                mz = mass * mx * pop.w_at(t, zbits + (z,), xb)
                if mz == 0:
                    continue
                zb = zbits + (z,)
                if t == depth:
                    yield (t, zb, xb, mz)
                    continue
                pe = pop.p_at(t + 1, zb, xb)
                if pe < 1:
                    yield (t, zb, xb, mz * (1 - pe))
                if pe > 0:
                    yield from go(t + 1, zb, xb, mz * pe)

    yield from go(1, (), (), Fraction(1))


def _matches(zbits: Bits, target: Bits) -> bool:
    return zbits[: len(target)] == target


def phi_n_mean(pop: ExactPopulation, model: ModelTables, t: int, hist) -> Fraction:
    """Population mean of the per-unit numerator influence summand."""
    hist = _bits(hist)
    mys = mys_levels(model, t, hist)
    total = Fraction(0)
    for k, zb, xb, mass in observed_paths(pop, t):
        val = mys[1][xb[:1]]
        if k >= t and _matches(zb, hist):
            resid = pop.mu_at(t, hist, xb[:t]) - mys[t][xb[:t]]
            val = val + resid / model.pi_at(t, hist, xb[:t])
        for tp in range(2, t + 1):
            if k >= tp - 1 and _matches(zb, hist[: tp - 1]):
                s_tp = 1 if k >= tp else 0
                top = -mys[tp - 1][xb[: tp - 1]]
                if s_tp:
                    top = top + mys[tp][xb[:tp]]
                val = val + top / model.pi_at(tp - 1, hist[: tp - 1], xb[: tp - 1])
        total += mass * val
    return total


def phi_d_mean(pop: ExactPopulation, model: ModelTables, t: int, hist) -> Fraction:
    """Population mean of the per-unit denominator influence summand."""
    hist = _bits(hist)
    if t == 1:
        return Fraction(1)
    ms = ms_levels(model, t, hist)
    total = Fraction(0)
    for k, zb, xb, mass in observed_paths(pop, t):
        val = ms[1][xb[:1]]
        if k >= t - 1 and _matches(zb, hist):
            s_t = 1 if k >= t else 0
            top = s_t - ms[t - 1][xb[: t - 1]]
            val = val + top / model.pi_at(t - 1, hist, xb[: t - 1])
        for tp in range(2, t):
            if k >= tp - 1 and _matches(zb, hist[: tp - 1]):
                s_tp = 1 if k >= tp else 0
                top = -ms[tp - 1][xb[: tp - 1]]
                if s_tp:
                    top = top + ms[tp][xb[:tp]]
                val = val + top / model.pi_at(tp - 1, hist[: tp - 1], xb[: tp - 1])
        total += mass * val
    return total


# ---------------------------------------------------------------------------
# Population-level estimates for all three strategies (possibly under
# perturbed or mis-specified model tables)
# ---------------------------------------------------------------------------


def population_components(pop: ExactPopulation, t: int, hist,
                          method: str = "dr",
                          model: ModelTables | None = None):
    """(numerator, denominator) limits of an estimator at a full history.

    ``hist`` has length t.  The numerator targets the joint mean
    E{Y_t(hist) S_t}, the denominator P{S_t eligible under hist[:-1]}.
    """
    model = model or ModelTables(pop)
    hist = _bits(hist)
    if len(hist) != t:
        raise ValidationError(f"history {hist} must have length {t}")
    if method == "reg":
        mys = mys_levels(model, t, hist)
        num = sum(m * mys[1][(x,)] for x, m in pop.x1.items())
        if t == 1:
            den = Fraction(1)
        else:
            ms = ms_levels(model, t, hist[:-1])
            den = sum(m * ms[1][(x,)] for x, m in pop.x1.items())
        return num, den
    if method == "ipw":
        num = Fraction(0)
        den = Fraction(0)
        for k, zb, xb, mass in observed_paths(pop, t):
            if k >= t and _matches(zb, hist):
                num += mass * pop.mu_at(t, hist, xb[:t]) / model.pi_at(t, hist, xb[:t])
            if k >= t and _matches(zb, hist[: t - 1]):
                den += mass / model.pi_at(t - 1, hist[: t - 1], xb[: t - 1])
        return num, den
    if method == "dr":
        return (phi_n_mean(pop, model, t, hist),
                phi_d_mean(pop, model, t, hist[:-1]))
    raise ValidationError(f"unknown method {method!r}")


def population_estimate(pop: ExactPopulation, estimand: Estimand,
                        method: str = "dr",
                        model: ModelTables | None = None):
    """Plim of an estimator for tau/theta/mean/elig under the model tables."""
    model = model or ModelTables(pop)
    if isinstance(estimand, TauSpec):
        base = _bits(estimand.hist)
        n1, den = population_components(pop, estimand.t, base + (1,), method, model)
        n0, _ = population_components(pop, estimand.t, base + (0,), method, model)
        return (n1 - n0) / den
    if isinstance(estimand, MeanSpec):
        num, den = population_components(pop, estimand.t, _bits(estimand.hist),
                                         method, model)
        return num / den
    if isinstance(estimand, EligSpec):
        base = _bits(estimand.hist)
        _, den = population_components(pop, estimand.t, base + (0,), method, model)
        return den
    if isinstance(estimand, ThetaSpec):
        total = Fraction(0)
        for t in range(1, pop.horizon + 1):
            for hist, prob in estimand.policy.support(t):
                num, _ = population_components(pop, t, _bits(hist), method, model)
                total += num * Fraction(prob)
        return total
    raise ValidationError(f"unsupported estimand {estimand!r}")


def theorem3_bias(pop: ExactPopulation, model: ModelTables, t: int, hist,
                  which: str = "N"):
    """Analytic bias of the influence-summand mean under wrong model tables.

    ``hist`` is the full length-t sequence for both parts; the eligibility
    part uses its length-(t-1) prefix."""
    hist = _bits(hist)
    true = ModelTables(pop)
    if which == "N":
        m_true = mys_levels(true, t, hist)
        m_bad = mys_levels(model, t, hist)
        upper = t
    else:
        if t == 1:
            return Fraction(0)
        m_true = ms_levels(true, t, hist[: t - 1])
        m_bad = ms_levels(model, t, hist[: t - 1])
        upper = t - 1
    total = Fraction(0)
    for tp in range(1, upper + 1):
        for xbar in _reachable(pop, tp, hist):
            # outer measure: prod_{s=2..tp} p_s * prod_{s=1..tp} l_s
            mass = Fraction(1)
            xb = ()
            for s in range(1, tp + 1):
                if s >= 2:
                    mass *= pop.p_at(s, hist[: s - 1], xb)
                mass *= pop.l(s, hist[: s - 1], xb)[xbar[s - 1]]
                xb = xbar[:s]
            ratio_hi = (true.pi_at(tp, hist[:tp], xbar)
                        / model.pi_at(tp, hist[:tp], xbar))
            ratio_lo = (true.pi_at(tp - 1, hist[: tp - 1], xbar[: tp - 1])
                        / model.pi_at(tp - 1, hist[: tp - 1], xbar[: tp - 1]))
            gap = m_true[tp][xbar] - m_bad[tp][xbar]
            total += mass * gap * (ratio_hi - ratio_lo)
    return total


# ---------------------------------------------------------------------------
# Truths
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class OracleTruth:
    estimand: str
    value: float
    method: str  # "exact" or "mc"
    se: float | None = None
    draws: int | None = None
    exact: Fraction | None = None

    def as_row(self) -> dict:
        return {
            "estimand": self.estimand,
            "value": self.value,
            "method": self.method,
            "se": "" if self.se is None else self.se,
            "draws": "" if self.draws is None else self.draws,
            "exact": "" if self.exact is None else str(self.exact),
        }


def _dual_route(pop: ExactPopulation, t: int, hist: Bits):
    """Theorem-1 components via both routes, asserting their equality."""
    n_reg, d_reg = population_components(pop, t, hist, "reg")
    n_ipw, d_ipw = population_components(pop, t, hist, "ipw")
    for a, b, tag in ((n_reg, n_ipw, "numerator"), (d_reg, d_ipw, "denominator")):
        if isinstance(a, Fraction) and isinstance(b, Fraction):
            ok = a == b
        else:
            ok = abs(float(a) - float(b)) <= 1e-12
        if not ok:
            raise AssertionError(
                f"identification routes disagree on the {tag} at t={t}, "
                f"history {hist}: {a} vs {b}"
            )
    return n_reg, d_reg


def identification_gap(pop: ExactPopulation, t: int, hist,
                       reg_model: ModelTables | None = None,
                       ipw_model: ModelTables | None = None) -> float:
    """Largest component gap between the two identification routes when each
    is fed its own (possibly corrupted) tables; used as a checker self-test."""
    hist = _bits(hist)
    n_reg, d_reg = population_components(pop, t, hist, "reg", reg_model)
    n_ipw, d_ipw = population_components(pop, t, hist, "ipw", ipw_model)
    return max(abs(float(n_reg - n_ipw)), abs(float(d_reg - d_ipw)))


def enumerate_truth(pop: ExactPopulation, estimand: Estimand) -> OracleTruth:
    """Exact value of an estimand, computed via both identification routes."""
    if isinstance(estimand, TauSpec):
        base = _bits(estimand.hist)
        n1, den = _dual_route(pop, estimand.t, base + (1,))
        n0, _ = _dual_route(pop, estimand.t, base + (0,))
        value = (n1 - n0) / den
    elif isinstance(estimand, MeanSpec):
        num, den = _dual_route(pop, estimand.t, _bits(estimand.hist))
        value = num / den
    elif isinstance(estimand, EligSpec):
        _, value = _dual_route(pop, estimand.t, _bits(estimand.hist) + (0,))
    elif isinstance(estimand, ThetaSpec):
        value = Fraction(0)
        for t in range(1, pop.horizon + 1):
            for hist, prob in estimand.policy.support(t):
                num, _ = _dual_route(pop, t, _bits(hist))
                value += num * Fraction(prob)
    else:
        raise ValidationError(f"unsupported estimand {estimand!r}")
    exact = value if isinstance(value, Fraction) else None
    return OracleTruth(estimand=estimand.label, value=float(value),
                       method="exact", exact=exact)


# ---------------------------------------------------------------------------
# Identity verification report
# ---------------------------------------------------------------------------


@dataclass
class IdentityCheck:
    name: str
    max_dev: float
    passed: bool


@dataclass
class RecursionReport:
    checks: list[IdentityCheck]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def violations(self) -> list[IdentityCheck]:
        return [c for c in self.checks if not c.passed]


def verify_recursions(pop: ExactPopulation, tol: float = 1e-12) -> RecursionReport:
    """Check every identity the enumeration can referee on this population:
    the backward recursions against direct sums, the two identification
    routes, the influence-summand means, and the ratio identities."""
    model = ModelTables(pop)
    checks: list[IdentityCheck] = []

    def add(name, dev):
        dev = abs(float(dev))
        checks.append(IdentityCheck(name, dev, dev <= tol))

    for t in range(1, pop.horizon + 1):
        for code in range(2 ** t):
            hist = tuple((code >> (t - 1 - k)) & 1 for k in range(t))
            mys = mys_levels(model, t, hist)
            dev = 0.0
            for tp in range(0, t + 1):
                if tp == 0:
                    dev = max(dev, abs(float(
                        mys[0] - forward_mys(model, t, hist, 0, ()))))
                else:
                    for xbar, val in mys[tp].items():
                        dev = max(dev, abs(float(
                            val - forward_mys(model, t, hist, tp, xbar))))
            add(f"recursion-joint t={t} hist={''.join(map(str, hist))}", dev)

            ms = ms_levels(model, t, hist[:-1])
            dev = 0.0
            for tp in range(0, t):
                if tp == 0:
                    dev = max(dev, abs(float(
                        ms[0] - forward_ms(model, t, hist[:-1], 0, ()))))
                else:
                    for xbar, val in ms[tp].items():
                        dev = max(dev, abs(float(
                            val - forward_ms(model, t, hist[:-1], tp, xbar))))
            add(f"recursion-elig t={t} hist={''.join(map(str, hist[:-1]))}", dev)

            n_reg, d_reg = population_components(pop, t, hist, "reg")
            n_ipw, d_ipw = population_components(pop, t, hist, "ipw")
            add(f"routes-num t={t} hist={''.join(map(str, hist))}",
                n_reg - n_ipw)
            add(f"routes-den t={t} hist={''.join(map(str, hist))}",
                d_reg - d_ipw)

            add(f"eif-num-mean t={t} hist={''.join(map(str, hist))}",
                phi_n_mean(pop, model, t, hist) - n_reg)
            add(f"eif-den-mean t={t} hist={''.join(map(str, hist))}",
                phi_d_mean(pop, model, t, hist[:-1]) - d_reg)

        # Ratio identity: the centered effect influence mean vanishes.
        for code in range(2 ** (t - 1)):
            base = tuple((code >> (t - 2 - k)) & 1 for k in range(t - 1))
            n1, den = population_components(pop, t, base + (1,), "reg")
            n0, _ = population_components(pop, t, base + (0,), "reg")
            tau = (n1 - n0) / den
            phi1 = phi_n_mean(pop, model, t, base + (1,))
            phi0 = phi_n_mean(pop, model, t, base + (0,))
            phid = phi_d_mean(pop, model, t, base)
            add(f"eif-effect-zero t={t} hist={''.join(map(str, base))}",
                (phi1 - phi0 - tau * phid) / den)

    if pop.time_invariant:
        # Product shortcut for the partial means, valid without time-varying
        # covariates: mu_t * prod of eligibility probabilities.
        dev = 0.0
        for t in range(1, pop.horizon + 1):
            for code in range(2 ** t):
                hist = tuple((code >> (t - 1 - k)) & 1 for k in range(t))
                mys = mys_levels(model, t, hist)
                ms = ms_levels(model, t, hist[:-1])
                for x, _ in pop.x1.items():
                    for tp in range(1, t + 1):
                        prod = model.mu_at(t, hist, (x,) * t)
                        prod_s = Fraction(1)
                        for s in range(tp + 1, t + 1):
                            prod_s *= model.p_at(s, hist[: s - 1], (x,) * (s - 1))
                        dev = max(dev, abs(float(mys[tp][(x,) * tp] - prod * prod_s)))
                    for tp in range(1, t):
                        prod_s = Fraction(1)
                        for s in range(tp + 1, t + 1):
                            prod_s *= model.p_at(s, hist[: s - 1], (x,) * (s - 1))
                        dev = max(dev, abs(float(ms[tp][(x,) * tp] - prod_s)))
        add("invariant-shortcut", dev)

    return RecursionReport(checks)


# ---------------------------------------------------------------------------
# Monte Carlo oracle for the simulation-lab process
# ---------------------------------------------------------------------------


def mc_truth(config: dgp.DgpConfig, estimand: Estimand, draws: int = 10_000_000,
             seed: int = 977_001, block: int = 500_000) -> OracleTruth:
    """Potential-outcome Monte Carlo: simulate trajectories directly for the
    requested sequences (no observational sampling) and average."""
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    total = 0.0
    total_sq = 0.0
    count = 0
    done = 0
    while done < draws:
        n = min(block, draws - done)
        pot = dgp.draw_potentials(rng, n, config)
        vals, mask = _mc_values(pot, estimand, rng)
        total += float(np.sum(vals[mask]))
        total_sq += float(np.sum(vals[mask] ** 2))
        count += int(np.sum(mask))
        done += n
    mean = total / count
    var = max(total_sq / count - mean ** 2, 0.0)
    se = math.sqrt(var / count)
    return OracleTruth(estimand=estimand.label, value=mean, method="mc",
                       se=se, draws=draws)


def _eligibility_for(pot: dgp.PotentialPanel, t: int, hist: Bits) -> np.ndarray:
    if t == 1:
        return np.ones(pot.X.shape[0], dtype=bool)
    if t == 2:
        return pot.s2[(hist[0],)] == 1
    if t == 3:
        return pot.s3[(hist[0], hist[1])] == 1
    raise ValidationError(f"simulation process has horizon 3, got t={t}")


def _outcome_for(pot: dgp.PotentialPanel, t: int, zbits: Bits) -> np.ndarray:
    if t == 1:
        return pot.y1[(zbits[0],)]
    if t == 2:
        return pot.y2[(zbits[0], zbits[1])]
    return pot.y3[(zbits[0], zbits[1], zbits[2])]


def _mc_values(pot: dgp.PotentialPanel, estimand: Estimand,
               rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    n = pot.X.shape[0]
    if isinstance(estimand, TauSpec):
        base = _bits(estimand.hist)
        mask = _eligibility_for(pot, estimand.t, base)
        diff = (_outcome_for(pot, estimand.t, base + (1,))
                - _outcome_for(pot, estimand.t, base + (0,)))
        return np.where(mask, diff, 0.0), mask
    if isinstance(estimand, MeanSpec):
        zb = _bits(estimand.hist)
        mask = _eligibility_for(pot, estimand.t, zb[:-1])
        return np.where(mask, _outcome_for(pot, estimand.t, zb), 0.0), mask
    if isinstance(estimand, EligSpec):
        mask = np.ones(n, dtype=bool)
        return (_eligibility_for(pot, estimand.t, _bits(estimand.hist))
                .astype(float), mask)
    if isinstance(estimand, ThetaSpec):
        # One policy rollout per draw, reusing the drawn potential tables.
        policy = estimand.policy
        z1 = (rng.random(n) < policy.step(1, ())).astype(int)
        total = _outcome_for(pot, 1, (0,)) * (z1 == 0)
        total = total + _outcome_for(pot, 1, (1,)) * (z1 == 1)
        z_hist = [z1]
        alive = np.ones(n, dtype=bool)
        for t in range(2, dgp.HORIZON + 1):
            elig = np.zeros(n, dtype=bool)
            for code_bits in _all_bits(t - 1):
                sel = np.ones(n, dtype=bool)
                for j, b in enumerate(code_bits):
                    sel &= z_hist[j] == b
                elig |= sel & _eligibility_for(pot, t, code_bits)
            alive = alive & elig
            z_t = np.zeros(n, dtype=int)
            for code_bits in _all_bits(t - 1):
                sel = alive.copy()
                for j, b in enumerate(code_bits):
                    sel &= z_hist[j] == b
                if not sel.any():
                    continue
                step = policy.step(1, code_bits)
                z_t[sel] = (rng.random(int(sel.sum())) < step).astype(int)
            z_hist.append(z_t)
            contrib = np.zeros(n)
            for zb in _all_bits(t):
                sel = alive.copy()
                for j, b in enumerate(zb):
                    sel &= z_hist[j] == b
                if sel.any():
                    contrib[sel] = _outcome_for(pot, t, zb)[sel]
            total = total + np.where(alive, contrib, 0.0)
        mask = np.ones(n, dtype=bool)
        return total, mask
    raise ValidationError(f"unsupported estimand {estimand!r}")


def _all_bits(length: int) -> list[Bits]:
    return [tuple((c >> (length - 1 - k)) & 1 for k in range(length))
            for c in range(2 ** length)]


# ---------------------------------------------------------------------------
# Exact population -> finite dataset with integer replication
# ---------------------------------------------------------------------------


def population_dataset(pop: ExactPopulation, max_units: int = 500_000) -> PanelDataset:
    """Expand the population into a dataset whose empirical law is exact:
    every observed path appears with multiplicity proportional to its mass."""
    paths = list(observed_paths(pop, pop.horizon))
    denom = 1
    for _, _, _, mass in paths:
        denom = denom * mass.denominator // math.gcd(denom, mass.denominator)
    counts = [int(mass * denom) for _, _, _, mass in paths]
    n = sum(counts)
    if n > max_units:
        raise ValidationError(
            f"population {pop.name} expands to {n} units (> {max_units})"
        )
    T = pop.horizon
    S = np.zeros((n, T), dtype=np.int8)
    Z = np.full((n, T), np.nan)
    Y = np.full((n, T), np.nan)
    if pop.time_invariant:
        schema = CovariateSchema(time_invariant=("x",))
        x_inv = np.zeros((n, 1))
        x_tv = np.zeros((n, T, 0))
    else:
        schema = CovariateSchema(time_varying=("x",))
        x_inv = np.zeros((n, 0))
        x_tv = np.full((n, T, 1), np.nan)
    row = 0
    for (k, zb, xb, _), cnt in zip(paths, counts):
        if cnt == 0:
            continue
        rows = slice(row, row + cnt)
        S[rows, :k] = 1
        for s in range(k):
            Z[rows, s] = zb[s]
            Y[rows, s] = float(pop.mu_at(s + 1, zb[: s + 1], xb[: s + 1]))
            if not pop.time_invariant:
                x_tv[rows, s, 0] = float(xb[s])
        if pop.time_invariant:
            x_inv[rows, 0] = float(xb[0])
        row += cnt
    ids = [f"u{j:06d}" for j in range(n)]
    return PanelDataset.from_arrays(ids, schema, S, Z, Y, x_inv, x_tv)


# ---------------------------------------------------------------------------
# Reference populations
# ---------------------------------------------------------------------------


def d1() -> ExactPopulation:
    """Two periods, binary time-invariant covariate, all tables rational."""
    return build_population(
        name="d1", horizon=2, x_values=(0, 1),
        x1={0: Fraction(1, 2), 1: Fraction(1, 2)},
        w1_fn=lambda t, hist, xbar: Fraction(1, 2),
        p_fn=lambda t, hist, xbar: Fraction(2 + hist[0] + xbar[-1], 4),
        mu_fn=lambda t, zb, xbar: (
            Fraction(zb[0] + xbar[-1]) if t == 1
            else Fraction(zb[1] * (1 + xbar[-1]) + zb[0])
        ),
    )


def d2() -> ExactPopulation:
    """Three-period sibling of d1 with non-constant propensities."""

    def w1_fn(t, hist, xbar):
        x = xbar[-1]
        if t == 1:
            return Fraction(1 + x, 3)
        if t == 2:
            return Fraction(1 + hist[0] + x, 4)
        return Fraction(1 + hist[1] + 2 * x, 5)

    def p_fn(t, hist, xbar):
        x = xbar[-1]
        if t == 2:
            return Fraction(2 + hist[0] + x, 5)
        return Fraction(1 + hist[0] + hist[1] + x, 5)

    def mu_fn(t, zb, xbar):
        x = xbar[-1]
        if t == 1:
            return Fraction(zb[0] + x)
        if t == 2:
            return Fraction(zb[1] * (1 + x) + zb[0])
        return Fraction(zb[2] * (1 + zb[1] + x) - zb[0] + 2 * x)

    return build_population(
        name="d2", horizon=3, x_values=(0, 1),
        x1={0: Fraction(1, 2), 1: Fraction(1, 2)},
        w1_fn=w1_fn, p_fn=p_fn, mu_fn=mu_fn,
    )


def d3() -> ExactPopulation:
    """Two periods with a genuinely time-varying binary covariate."""

    def transition_fn(t, hist, xbar):
        p1 = Fraction(1 + hist[0] + 2 * xbar[-1], 5)
        return {0: 1 - p1, 1: p1}

    def w1_fn(t, hist, xbar):
        if t == 1:
            return Fraction(1 + xbar[0], 3)
        return Fraction(1 + hist[0] + xbar[0] + xbar[1], 5)

    def p_fn(t, hist, xbar):
        return Fraction(2 + hist[0] + xbar[0], 5)

    def mu_fn(t, zb, xbar):
        if t == 1:
            return Fraction(zb[0] + xbar[0])
        return Fraction(zb[1] * (1 + xbar[1]) + zb[0] * xbar[0] + xbar[1] - xbar[0])

    return build_population(
        name="d3", horizon=2, x_values=(0, 1),
        x1={0: Fraction(1, 2), 1: Fraction(1, 2)},
        w1_fn=w1_fn, p_fn=p_fn, mu_fn=mu_fn,
        time_invariant=False, transition_fn=transition_fn,
    )


class ExactBundle:
    """Nuisance-bundle interface backed by exact population tables.

    Evaluates the same per-unit vectors a fitted bundle would, but from the
    (optionally perturbed) tables, so the estimator code can be run under
    known-true or known-wrong nuisances.
    """

    def __init__(self, pop: ExactPopulation, data: PanelDataset,
                 model: ModelTables | None = None):
        from .nuisance import Diagnostics  # local import avoids a hard dependency

        self.pop = pop
        self.data = data
        self.model = model or ModelTables(pop)
        self.diagnostics = Diagnostics()
        lookup = {float(v): v for v in pop.x_values}
        n = data.n_units
        T = data.horizon
        self._xbar = []
        for i in range(n):
            vals = []
            for s in range(T):
                if data.S[i, s] != 1:
                    break
                raw = (data.x_inv[i, 0] if pop.time_invariant
                       else data.x_tv[i, s, 0])
                vals.append(lookup[float(raw)])
            self._xbar.append(tuple(vals))
        self._cache: dict = {}

    @property
    def n_units(self) -> int:
        return self.data.n_units

    def _per_unit(self, key, level_needed: int, value_fn, fill: float) -> np.ndarray:
        if key in self._cache:
            return self._cache[key]
        n = self.data.n_units
        out = np.full(n, fill)
        for i, xbar in enumerate(self._xbar):
            if len(xbar) >= level_needed:
                out[i] = float(value_fn(xbar))
        self._cache[key] = out
        return out

    def w_eval(self, t: int, zbits) -> np.ndarray:
        zbits = _bits(zbits)
        return self._per_unit(
            ("w", t, zbits), t,
            lambda xbar: self.model.w_at(t, zbits, xbar[:t]), 1.0,
        )

    def pi_eval(self, t: int, zbits) -> np.ndarray:
        zbits = _bits(zbits)
        out = np.ones(self.data.n_units)
        for s in range(1, t + 1):
            out = out * self.w_eval(s, zbits[:s])
        return out

    def p_eval(self, t: int, zbits) -> np.ndarray:
        zbits = _bits(zbits)
        if t == 1:
            return np.ones(self.data.n_units)
        return self._per_unit(
            ("p", t, zbits), t - 1,
            lambda xbar: self.model.p_at(t, zbits, xbar[: t - 1]), 1.0,
        )

    def mys_eval(self, t: int, zbits, tp: int) -> np.ndarray:
        zbits = _bits(zbits)
        levels = self._levels("mys", t, zbits)
        return self._per_unit(
            ("mys", t, zbits, tp), tp,
            lambda xbar: levels[tp][xbar[:tp]], 0.0,
        )

    def ms_eval(self, t: int, zbits, tp: int) -> np.ndarray:
        zbits = _bits(zbits)
        levels = self._levels("ms", t, zbits)
        return self._per_unit(
            ("ms", t, zbits, tp), tp,
            lambda xbar: levels[tp][xbar[:tp]], 0.0,
        )

    def _levels(self, which: str, t: int, zbits: Bits):
        key = ("levels", which, t, zbits)
        if key not in self._cache:
            builder = mys_levels if which == "mys" else ms_levels
            self._cache[key] = builder(self.model, t, zbits)
        return self._cache[key]


_BUILTIN = {"d1": d1, "d2": d2, "d3": d3}


def builtin_population(name: str) -> ExactPopulation:
    if name not in _BUILTIN:
        raise ValidationError(f"unknown reference population {name!r}")
    return _BUILTIN[name]()


def fixture_path(name: str):
    """Path to a shipped population fixture (d1/d2/d3)."""
    return resources.files("selig").joinpath("fixtures", f"{name}.json")
