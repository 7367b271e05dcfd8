"""Estimand descriptors and their text form.

Text grammar (used by the CLI and report files):

* ``tau@t:hist``   -- eligible treatment effect at time t after history
  ``hist`` (a bitstring of length t-1; empty for t=1).  ``tau@t:*`` expands
  to every history of length t-1.
* ``theta:POLICY`` -- expected cumulative outcome under a policy; POLICY is
  any `parse_policy` form, or ``@path`` to read a policy table from a file.
* ``mean@t:hist``  -- mean outcome at t under full history ``hist`` (length t)
  among the eligible.
* ``elig@t:hist``  -- eligibility probability at t after ``hist`` (length t-1).
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import ValidationError
from .panel import TreatmentHistory, all_histories, as_history
from .policy import Policy, parse_policy


@dataclass(frozen=True)
class TauSpec:
    t: int
    hist: TreatmentHistory

    def __post_init__(self):
        object.__setattr__(self, "hist", as_history(self.hist))
        if self.t < 1 or len(self.hist) != self.t - 1:
            raise ValidationError(
                f"tau history {self.hist} must have length {self.t - 1}"
            )

    @property
    def label(self) -> str:
        return f"tau@{self.t}:{self.hist}"


@dataclass(frozen=True)
class MeanSpec:
    t: int
    hist: TreatmentHistory

    def __post_init__(self):
        object.__setattr__(self, "hist", as_history(self.hist))
        if self.t < 1 or len(self.hist) != self.t:
            raise ValidationError(
                f"mean history {self.hist} must have length {self.t}"
            )

    @property
    def label(self) -> str:
        return f"mean@{self.t}:{self.hist}"


@dataclass(frozen=True)
class EligSpec:
    t: int
    hist: TreatmentHistory

    def __post_init__(self):
        object.__setattr__(self, "hist", as_history(self.hist))
        if self.t < 1 or len(self.hist) != self.t - 1:
            raise ValidationError(
                f"eligibility history {self.hist} must have length {self.t - 1}"
            )

    @property
    def label(self) -> str:
        return f"elig@{self.t}:{self.hist}"


@dataclass(frozen=True)
class ThetaSpec:
    policy: Policy
    policy_text: str

    @property
    def label(self) -> str:
        return f"theta:{self.policy_text}"


Estimand = TauSpec | MeanSpec | EligSpec | ThetaSpec


def _split_at(spec: str, prefix: str) -> tuple[int, str]:
    body = spec[len(prefix):]
    if ":" not in body:
        raise ValidationError(f"malformed estimand {spec!r}: expected '@t:hist'")
    t_text, hist = body.split(":", 1)
    try:
        t = int(t_text)
    except ValueError:
        raise ValidationError(f"malformed estimand {spec!r}: bad time {t_text!r}") from None
    return t, hist


def parse_estimand(spec: str, horizon: int | None = None) -> list[Estimand]:
    """Parse one estimand string, expanding ``tau@t:*`` into all histories."""
    spec = spec.strip()
    try:
        if spec.startswith("tau@"):
            t, hist = _split_at(spec, "tau@")
            if hist == "*":
                return [TauSpec(t, h) for h in all_histories(t - 1)]
            return [TauSpec(t, TreatmentHistory.parse(hist))]
        if spec.startswith("mean@"):
            t, hist = _split_at(spec, "mean@")
            return [MeanSpec(t, TreatmentHistory.parse(hist))]
        if spec.startswith("elig@"):
            t, hist = _split_at(spec, "elig@")
            return [EligSpec(t, TreatmentHistory.parse(hist))]
        if spec.startswith("theta:"):
            text = spec[len("theta:"):]
            if text.startswith("@"):
                with open(text[1:], "r", encoding="utf-8") as fh:
                    policy = parse_policy(fh.read())
            else:
                policy = parse_policy(text)
            return [ThetaSpec(policy=policy, policy_text=text)]
    except ValidationError:
        raise
    except (ValueError, OSError) as exc:
        raise ValidationError(f"malformed estimand {spec!r}: {exc}") from exc
    raise ValidationError(f"unknown estimand {spec!r}")
