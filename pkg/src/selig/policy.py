"""Treatment strategies: deterministic sequences, step-probability tables,
and mixtures, all exposing per-step and cumulative sequence probabilities.

Text forms accepted by `parse_policy`:

* ``all:1`` / ``all:0``       -- always-treat / never-treat
* ``101``                     -- deterministic sequence z_1=1, z_2=0, z_3=1
* ``"" = 0.5`` lines          -- table of step probabilities P(z_t=1 | history),
  one line per history bitstring (the empty string is the time-1 entry)
"""

from __future__ import annotations

import re
from typing import Sequence

from .errors import PolicyError
from .panel import TreatmentHistory, as_history

_TABLE_LINE = re.compile(r'^\s*"([01]*)"\s*=\s*([0-9.eE+-]+)\s*$')


class Policy:
    """A probability distribution over treatment sequences."""

    kind = "policy"

    def step(self, z: int, hist) -> float:
        """P(Z_t = z | Z_1..Z_{t-1} = hist) under this strategy."""
        p1 = self._step1(as_history(hist))
        return p1 if z == 1 else 1.0 - p1

    def seq_prob(self, hist) -> float:
        """Cumulative probability of the full sequence hist."""
        hist = as_history(hist)
        prob = 1.0
        for k, bit in enumerate(hist):
            prob *= self.step(bit, hist.prefix(k))
            if prob == 0.0:
                return 0.0
        return prob

    def support(self, t: int) -> list[tuple[TreatmentHistory, float]]:
        """Histories of length t with positive mass, with their seq_prob."""
        frontier = [(TreatmentHistory(), 1.0)]
        for _ in range(t):
            nxt = []
            for hist, prob in frontier:
                for bit in (0, 1):
                    p = prob * self.step(bit, hist)
                    if p > 0.0:
                        nxt.append((hist.extend(bit), p))
            frontier = nxt
        return frontier

    def _step1(self, hist: TreatmentHistory) -> float:
        raise NotImplementedError

    def describe(self) -> str:
        return self.kind


class ConstantPolicy(Policy):
    """Always-treat (z=1) or never-treat (z=0)."""

    def __init__(self, z: int):
        if z not in (0, 1):
            raise PolicyError(f"constant policy arm must be 0/1, got {z}")
        self.z = z
        self.kind = "always-treat" if z == 1 else "never-treat"

    def _step1(self, hist: TreatmentHistory) -> float:
        return float(self.z)

    def describe(self) -> str:
        return f"all:{self.z}"


class SequencePolicy(Policy):
    """Deterministic treatment sequence."""

    kind = "deterministic"

    def __init__(self, bits: Sequence[int]):
        self.bits = as_history(bits)
        if len(self.bits) == 0:
            raise PolicyError("deterministic policy needs at least one period")

    def _step1(self, hist: TreatmentHistory) -> float:
        k = len(hist)
        if k >= len(self.bits):
            raise PolicyError(
                f"deterministic policy {self.bits} covers only "
                f"{len(self.bits)} periods; asked for period {k + 1}"
            )
        return float(self.bits[k])

    def describe(self) -> str:
        return str(self.bits)


class TablePolicy(Policy):
    """Step probabilities P(z_t=1 | history) given explicitly per history."""

    kind = "table"

    def __init__(self, table: dict[str, float]):
        self.table: dict[str, float] = {}
        for hist, prob in table.items():
            hist = str(as_history(hist))
            prob = float(prob)
            if not 0.0 <= prob <= 1.0:
                raise PolicyError(f"step probability {prob} for {hist!r} not in [0,1]")
            self.table[hist] = prob

    def _step1(self, hist: TreatmentHistory) -> float:
        key = str(hist)
        if key not in self.table:
            raise PolicyError(f"policy table has no entry for history {key!r}")
        return self.table[key]

    def describe(self) -> str:
        body = ", ".join(f'"{h}"={p}' for h, p in sorted(self.table.items()))
        return f"table({body})"


class MixturePolicy(Policy):
    """Convex combination of policies at the sequence-probability level."""

    kind = "mixture"

    def __init__(self, components: Sequence[Policy], weights: Sequence[float]):
        if len(components) != len(weights) or not components:
            raise PolicyError("mixture needs matching non-empty components/weights")
        weights = [float(w) for w in weights]
        if any(w < 0 for w in weights) or abs(sum(weights) - 1.0) > 1e-12:
            raise PolicyError("mixture weights must be nonnegative and sum to 1")
        self.components = list(components)
        self.weights = weights

    def seq_prob(self, hist) -> float:
        hist = as_history(hist)
        return sum(
            w * c.seq_prob(hist) for w, c in zip(self.weights, self.components)
        )

    def _step1(self, hist: TreatmentHistory) -> float:
        denom = self.seq_prob(hist) if len(hist) else 1.0
        if denom == 0.0:
            raise PolicyError(f"mixture step undefined after zero-mass history {hist}")
        return self.seq_prob(hist.extend(1)) / denom

    def describe(self) -> str:
        parts = ", ".join(
            f"{w}*{c.describe()}" for w, c in zip(self.weights, self.components)
        )
        return f"mix({parts})"


def parse_policy(text: str) -> Policy:
    """Parse the policy text forms documented in the module docstring."""
    stripped = text.strip()
    if stripped == "all:1":
        return ConstantPolicy(1)
    if stripped == "all:0":
        return ConstantPolicy(0)
    if stripped and set(stripped) <= {"0", "1"} and "\n" not in stripped:
        return SequencePolicy([int(c) for c in stripped])
    if "=" in stripped:
        table: dict[str, float] = {}
        for line in stripped.splitlines():
            if not line.strip():
                continue
            m = _TABLE_LINE.match(line)
            if not m:
                raise PolicyError(f"cannot parse policy table line {line!r}")
            table[m.group(1)] = float(m.group(2))
        if not table:
            raise PolicyError("empty policy table")
        return TablePolicy(table)
    raise PolicyError(f"cannot parse policy {text!r}")
