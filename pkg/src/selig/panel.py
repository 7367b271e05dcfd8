"""Longitudinal panel data with selective eligibility.

A unit is eligible for the first treatment by construction, and can only
stay eligible through consecutive periods (monotone eligibility).  Treatment,
outcome, and time-varying covariates exist exactly where the unit is
eligible; everywhere else they are absent, encoded as NaN internally and as
empty cells on disk.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    DuplicateKey,
    EligibilityViolation,
    MalformedRow,
    PresenceViolation,
)

CSV_FIXED_COLUMNS = ("unit_id", "time", "eligible", "treatment", "outcome")


class TreatmentHistory:
    """An immutable sequence of treatment bits z_1..z_t."""

    __slots__ = ("_bits",)

    def __init__(self, bits: Iterable[int] = ()):
        bits = tuple(int(b) for b in bits)
        if any(b not in (0, 1) for b in bits):
            raise ValueError(f"treatment history bits must be 0/1, got {bits}")
        self._bits = bits

    @classmethod
    def parse(cls, text: str) -> "TreatmentHistory":
        """Parse a bitstring such as '101'; the empty string is the empty history."""
        if not set(text) <= {"0", "1"}:
            raise ValueError(f"cannot parse treatment history {text!r}")
        return cls(int(c) for c in text)

    @property
    def bits(self) -> tuple[int, ...]:
        return self._bits

    def prefix(self, k: int) -> "TreatmentHistory":
        if not 0 <= k <= len(self._bits):
            raise ValueError(f"prefix length {k} out of range for history {self}")
        return TreatmentHistory(self._bits[:k])

    def extend(self, bit: int) -> "TreatmentHistory":
        return TreatmentHistory(self._bits + (int(bit),))

    def __len__(self) -> int:
        return len(self._bits)

    def __iter__(self):
        return iter(self._bits)

    def __getitem__(self, i):
        return self._bits[i]

    def __eq__(self, other) -> bool:
        if isinstance(other, TreatmentHistory):
            return self._bits == other._bits
        return NotImplemented

    def __hash__(self) -> int:
        return hash(self._bits)

    def __repr__(self) -> str:
        return f"TreatmentHistory({''.join(map(str, self._bits))!r})"

    def __str__(self) -> str:
        return "".join(map(str, self._bits))


def as_history(value) -> TreatmentHistory:
    """Coerce a TreatmentHistory, bitstring, or iterable of bits."""
    if isinstance(value, TreatmentHistory):
        return value
    if isinstance(value, str):
        return TreatmentHistory.parse(value)
    return TreatmentHistory(value)


def all_histories(length: int) -> list[TreatmentHistory]:
    """All 2^length treatment histories of the given length, in binary order."""
    if length == 0:
        return [TreatmentHistory()]
    out = []
    for code in range(2 ** length):
        bits = [(code >> (length - 1 - k)) & 1 for k in range(length)]
        out.append(TreatmentHistory(bits))
    return out


@dataclass(frozen=True)
class CovariateSchema:
    """Covariate columns split by invariance class."""

    time_invariant: tuple[str, ...] = ()
    time_varying: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "time_invariant", tuple(self.time_invariant))
        object.__setattr__(self, "time_varying", tuple(self.time_varying))
        names = self.time_invariant + self.time_varying
        if len(set(names)) != len(names):
            raise MalformedRow(f"duplicate covariate names in schema: {names}")
        if set(names) & set(CSV_FIXED_COLUMNS):
            raise MalformedRow("covariate names collide with fixed CSV columns")

    @property
    def columns(self) -> tuple[str, ...]:
        return self.time_invariant + self.time_varying

    @classmethod
    def from_json(cls, path) -> "CovariateSchema":
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
        return cls(
            time_invariant=tuple(raw.get("time_invariant", ())),
            time_varying=tuple(raw.get("time_varying", ())),
        )

    def to_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(
                {
                    "time_invariant": list(self.time_invariant),
                    "time_varying": list(self.time_varying),
                },
                fh,
                indent=2,
            )
            fh.write("\n")


@dataclass(frozen=True)
class PanelDataset:
    """Validated long-format panel, immutable after construction.

    Arrays are aligned on (unit, time): ``S`` is 0/1 eligibility, ``Z``/``Y``
    hold treatment and outcome with NaN where the unit is ineligible,
    ``x_inv`` holds time-invariant covariates, and ``x_tv`` has shape
    (n, T, n_tv) with the same NaN presence pattern as ``Z``.
    """

    unit_ids: tuple[str, ...]
    schema: CovariateSchema
    S: np.ndarray
    Z: np.ndarray
    Y: np.ndarray
    x_inv: np.ndarray
    x_tv: np.ndarray
    horizon: int = field(init=False)
    time_invariant_only: bool = field(init=False)

    def __post_init__(self):
        n, T = self.S.shape
        object.__setattr__(self, "horizon", T)
        object.__setattr__(
            self, "time_invariant_only", len(self.schema.time_varying) == 0
        )
        _validate_arrays(self)
        for arr in (self.S, self.Z, self.Y, self.x_inv, self.x_tv):
            arr.setflags(write=False)

    @classmethod
    def from_arrays(
        cls,
        unit_ids: Sequence[str],
        schema: CovariateSchema,
        S: np.ndarray,
        Z: np.ndarray,
        Y: np.ndarray,
        x_inv: np.ndarray,
        x_tv: np.ndarray | None = None,
    ) -> "PanelDataset":
        n, T = np.asarray(S).shape
        if x_tv is None:
            x_tv = np.zeros((n, T, 0))
        return cls(
            unit_ids=tuple(unit_ids),
            schema=schema,
            S=np.ascontiguousarray(S, dtype=np.int8),
            Z=np.asarray(Z, dtype=float).copy(),
            Y=np.asarray(Y, dtype=float).copy(),
            x_inv=np.asarray(x_inv, dtype=float).copy(),
            x_tv=np.asarray(x_tv, dtype=float).copy(),
        )

    @property
    def n_units(self) -> int:
        return self.S.shape[0]

    def eligible(self, t: int) -> np.ndarray:
        """Boolean mask of units with S_t = 1 (t is 1-based)."""
        self._check_time(t)
        return self.S[:, t - 1] == 1

    def history_match(self, hist) -> np.ndarray:
        """Boolean mask of units whose observed Z_1..Z_k equal the given bits.

        Units ineligible before period k never match (their treatments do not
        exist).  The empty history matches everyone.
        """
        hist = as_history(hist)
        k = len(hist)
        if k == 0:
            return np.ones(self.n_units, dtype=bool)
        self._check_time(k)
        mask = self.S[:, k - 1] == 1
        for j, bit in enumerate(hist):
            mask &= self.Z[:, j] == bit
        return mask

    def covariate_history(self, t: int) -> tuple[np.ndarray, list[str]]:
        """Covariate history through period t as a matrix plus column names.

        Time-invariant columns appear once; each time-varying column
        contributes one column per period 1..t (named ``col@s``).  Rows for
        units ineligible at some period carry NaN in that period's columns.
        """
        self._check_time(t)
        blocks = [self.x_inv]
        names = list(self.schema.time_invariant)
        for s in range(t):
            if self.x_tv.shape[2]:
                blocks.append(self.x_tv[:, s, :])
                names.extend(f"{c}@{s + 1}" for c in self.schema.time_varying)
        mat = np.hstack(blocks) if blocks else np.zeros((self.n_units, 0))
        return mat, names

    def take(self, indices: Sequence[int], relabel: bool = True) -> "PanelDataset":
        """A new dataset of the selected units (repeats allowed, e.g. bootstrap)."""
        idx = np.asarray(indices, dtype=int)
        if relabel:
            ids = tuple(f"r{j:07d}" for j in range(len(idx)))
        else:
            ids = tuple(self.unit_ids[i] for i in idx)
        return PanelDataset.from_arrays(
            ids, self.schema, self.S[idx], self.Z[idx], self.Y[idx],
            self.x_inv[idx], self.x_tv[idx],
        )

    def _check_time(self, t: int) -> None:
        if not 1 <= t <= self.horizon:
            raise ValueError(f"time {t} outside 1..{self.horizon}")


def _validate_arrays(data: PanelDataset) -> None:
    n, T = data.S.shape
    if len(data.unit_ids) != n:
        raise MalformedRow("unit id count does not match array rows")
    if len(set(data.unit_ids)) != n:
        dupes = sorted({u for u in data.unit_ids if data.unit_ids.count(u) > 1})
        raise DuplicateKey(f"duplicate unit ids: {dupes[:5]}")
    if data.Z.shape != (n, T) or data.Y.shape != (n, T):
        raise MalformedRow("Z/Y arrays misaligned with eligibility array")
    if data.x_inv.shape[0] != n or data.x_tv.shape[:2] != (n, T):
        raise MalformedRow("covariate arrays misaligned with eligibility array")
    if data.x_inv.shape[1] != len(data.schema.time_invariant):
        raise MalformedRow("time-invariant covariate count does not match schema")
    if data.x_tv.shape[2] != len(data.schema.time_varying):
        raise MalformedRow("time-varying covariate count does not match schema")

    bad = ~np.isin(data.S, (0, 1))
    if bad.any():
        i, t = np.argwhere(bad)[0]
        raise MalformedRow(
            f"eligibility must be 0/1 (unit {data.unit_ids[i]}, time {t + 1})"
        )
    if not (data.S[:, 0] == 1).all():
        i = int(np.argmin(data.S[:, 0]))
        raise EligibilityViolation(
            f"unit {data.unit_ids[i]} is not eligible at time 1"
        )
    if T > 1:
        gains = (np.diff(data.S.astype(np.int8), axis=1) > 0)
        if gains.any():
            i, t = np.argwhere(gains)[0]
            raise EligibilityViolation(
                f"unit {data.unit_ids[i]} regains eligibility at time {t + 2}"
            )

    elig = data.S == 1
    for name, arr in (("treatment", data.Z), ("outcome", data.Y)):
        missing = elig & np.isnan(arr)
        if missing.any():
            i, t = np.argwhere(missing)[0]
            raise PresenceViolation(
                f"{name} absent for eligible unit {data.unit_ids[i]} at time {t + 1}"
            )
        present = ~elig & ~np.isnan(arr)
        if present.any():
            i, t = np.argwhere(present)[0]
            raise PresenceViolation(
                f"{name} present for ineligible unit {data.unit_ids[i]} at time {t + 1}"
            )
    bad_z = elig & ~np.isin(data.Z, (0.0, 1.0))
    if bad_z.any():
        i, t = np.argwhere(bad_z)[0]
        raise MalformedRow(
            f"treatment must be 0/1 (unit {data.unit_ids[i]}, time {t + 1})"
        )
    inf_y = elig & ~np.isfinite(data.Y)
    if inf_y.any():
        i, t = np.argwhere(inf_y)[0]
        raise MalformedRow(
            f"outcome not finite (unit {data.unit_ids[i]}, time {t + 1})"
        )

    if not np.isfinite(data.x_inv).all():
        i = int(np.argwhere(~np.isfinite(data.x_inv).all(axis=1))[0])
        raise PresenceViolation(
            f"missing time-invariant covariate for unit {data.unit_ids[i]}"
        )
    for j, col in enumerate(data.schema.time_varying):
        vals = data.x_tv[:, :, j]
        missing = elig & ~np.isfinite(vals)
        if missing.any():
            i, t = np.argwhere(missing)[0]
            raise PresenceViolation(
                f"missing covariate {col} for eligible unit "
                f"{data.unit_ids[i]} at time {t + 1}"
            )
        present = ~elig & ~np.isnan(vals)
        if present.any():
            i, t = np.argwhere(present)[0]
            raise PresenceViolation(
                f"covariate {col} present for ineligible unit "
                f"{data.unit_ids[i]} at time {t + 1}"
            )


def risk_set(data: PanelDataset, t: int, hist) -> np.ndarray:
    """Indices of units eligible at t with observed Z_1..Z_{t-1} = hist.

    For t = 1 this is every unit.  An empty result is legal; the estimators
    decide whether it is fatal.
    """
    hist = as_history(hist)
    if len(hist) != t - 1:
        raise ValueError(f"history {hist} has length {len(hist)}, expected {t - 1}")
    mask = data.eligible(t) & data.history_match(hist)
    return np.flatnonzero(mask)


def _parse_cell(raw: str, column: str, line_no: int):
    raw = raw.strip()
    if raw == "":
        return None
    try:
        return float(raw)
    except ValueError:
        raise MalformedRow(
            f"row {line_no}: column {column} has non-numeric value {raw!r}"
        ) from None


def _parse_flag(raw: str, column: str, line_no: int) -> int | None:
    value = _parse_cell(raw, column, line_no)
    if value is None:
        return None
    if value not in (0.0, 1.0):
        raise MalformedRow(
            f"row {line_no}: column {column} must be 0/1, got {raw!r}"
        )
    return int(value)


def load_csv(path, schema: CovariateSchema) -> PanelDataset:
    """Read and validate a long-format CSV (see package docs for the layout).

    Trailing ineligible rows (eligible = 0 with empty treatment/outcome) are
    accepted and normalized away; the horizon is the largest eligible time.
    """
    per_unit: dict[str, dict[int, dict]] = {}
    order: list[str] = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise MalformedRow(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        expected = list(CSV_FIXED_COLUMNS) + list(schema.columns)
        missing = [c for c in expected if c not in header]
        if missing:
            raise MalformedRow(f"{path}: missing columns {missing}")
        col = {name: header.index(name) for name in expected}

        for line_no, row in enumerate(reader, start=2):
            if not any(cell.strip() for cell in row):
                continue
            if len(row) < len(header):
                raise MalformedRow(f"row {line_no}: expected {len(header)} cells")
            unit = row[col["unit_id"]].strip()
            if not unit:
                raise MalformedRow(f"row {line_no}: empty unit_id")
            t_raw = row[col["time"]].strip()
            try:
                t = int(t_raw)
            except ValueError:
                raise MalformedRow(
                    f"row {line_no}: time must be an integer, got {t_raw!r}"
                ) from None
            if t < 1:
                raise MalformedRow(f"row {line_no}: time must be >= 1, got {t}")
            s = _parse_flag(row[col["eligible"]], "eligible", line_no)
            if s is None:
                raise MalformedRow(f"row {line_no}: eligible cell is empty")
            rec = {
                "line": line_no,
                "S": s,
                "Z": _parse_flag(row[col["treatment"]], "treatment", line_no),
                "Y": _parse_cell(row[col["outcome"]], "outcome", line_no),
                "x": {
                    c: _parse_cell(row[col[c]], c, line_no)
                    for c in schema.columns
                },
            }
            if unit not in per_unit:
                per_unit[unit] = {}
                order.append(unit)
            if t in per_unit[unit]:
                raise DuplicateKey(
                    f"row {line_no}: duplicate record for unit {unit}, time {t}"
                )
            per_unit[unit][t] = rec

    return _assemble(per_unit, sorted(order), schema)


def _assemble(per_unit, unit_order, schema: CovariateSchema) -> PanelDataset:
    # Normalize: drop trailing S=0 rows, then check the eligible block is a
    # prefix 1..k of consecutive periods.
    cleaned: dict[str, dict[int, dict]] = {}
    horizon = 0
    for unit in unit_order:
        rows = per_unit[unit]
        eligible_times = sorted(t for t, r in rows.items() if r["S"] == 1)
        if not eligible_times or eligible_times[0] != 1:
            raise EligibilityViolation(f"unit {unit}: missing eligible time-1 row")
        if eligible_times != list(range(1, len(eligible_times) + 1)):
            gap = next(
                t for k, t in enumerate(eligible_times) if t != k + 1
            )
            raise EligibilityViolation(
                f"unit {unit}: eligibility resumes at time {gap} after a gap"
            )
        last = eligible_times[-1]
        for t, r in rows.items():
            if r["S"] == 0:
                if t <= last:
                    raise EligibilityViolation(
                        f"unit {unit}: ineligible at time {t} but eligible later"
                    )
                if r["Z"] is not None or r["Y"] is not None:
                    raise PresenceViolation(
                        f"unit {unit}: treatment/outcome present at ineligible "
                        f"time {t}"
                    )
        cleaned[unit] = {t: rows[t] for t in eligible_times}
        horizon = max(horizon, last)

    n = len(unit_order)
    d_inv = len(schema.time_invariant)
    d_tv = len(schema.time_varying)
    S = np.zeros((n, horizon), dtype=np.int8)
    Z = np.full((n, horizon), np.nan)
    Y = np.full((n, horizon), np.nan)
    x_inv = np.full((n, d_inv), np.nan)
    x_tv = np.full((n, horizon, d_tv), np.nan)

    for i, unit in enumerate(unit_order):
        for t, rec in cleaned[unit].items():
            S[i, t - 1] = 1
            if rec["Z"] is None:
                raise PresenceViolation(
                    f"unit {unit}: treatment absent at eligible time {t}"
                )
            if rec["Y"] is None:
                raise PresenceViolation(
                    f"unit {unit}: outcome absent at eligible time {t}"
                )
            Z[i, t - 1] = rec["Z"]
            Y[i, t - 1] = rec["Y"]
            for j, c in enumerate(schema.time_invariant):
                val = rec["x"][c]
                if val is None:
                    raise PresenceViolation(
                        f"unit {unit}: covariate {c} missing at time {t}"
                    )
                if np.isnan(x_inv[i, j]):
                    x_inv[i, j] = val
                elif x_inv[i, j] != val:
                    raise MalformedRow(
                        f"unit {unit}: covariate {c} declared time-invariant "
                        f"but changes at time {t}"
                    )
            for j, c in enumerate(schema.time_varying):
                val = rec["x"][c]
                if val is None:
                    raise PresenceViolation(
                        f"unit {unit}: covariate {c} missing at time {t}"
                    )
                x_tv[i, t - 1, j] = val

    return PanelDataset.from_arrays(unit_order, schema, S, Z, Y, x_inv, x_tv)


def save_csv(data: PanelDataset, path) -> None:
    """Write the dataset back in the load_csv format (eligible rows only)."""

    def fmt(v: float) -> str:
        if np.isnan(v):
            return ""
        return repr(float(v))

    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(CSV_FIXED_COLUMNS) + list(data.schema.columns))
        for i, unit in enumerate(data.unit_ids):
            for t in range(1, data.horizon + 1):
                if data.S[i, t - 1] == 0:
                    continue
                row = [
                    unit,
                    str(t),
                    "1",
                    str(int(data.Z[i, t - 1])),
                    fmt(data.Y[i, t - 1]),
                ]
                row.extend(fmt(v) for v in data.x_inv[i])
                row.extend(fmt(v) for v in data.x_tv[i, t - 1])
                writer.writerow(row)
