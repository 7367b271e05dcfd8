"""Delimited report files and run manifests.

Every file written here is a pure function of its inputs: no timestamps,
no environment probes, fixed float formatting.  Reruns with the same
configuration are byte-identical.
"""

from __future__ import annotations

import csv
import json

from . import __version__
from .estimators import EstimateReport
from .oracle import OracleTruth
from .simlab import McReport


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_estimates_csv(path, reports: list[EstimateReport]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([
            "estimand", "method", "estimate", "ci_low", "ci_high",
            "risk_set_min", "clip_count", "failed_reps",
        ])
        for r in reports:
            writer.writerow([
                r.estimand, r.method, _fmt(r.estimate), _fmt(r.ci_low),
                _fmt(r.ci_high), _fmt(r.risk_set_min),
                _fmt(r.diagnostics.get("clip_events", 0)),
                _fmt(r.failed_reps),
            ])


def write_simulation_csv(path, report: McReport) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["estimand", "estimator", "bias", "rmse", "mc_se", "truth"])
        for row in report.rows:
            writer.writerow([
                row.estimand, row.estimator, _fmt(row.bias), _fmt(row.rmse),
                _fmt(row.mc_se), _fmt(row.truth),
            ])


def write_truths_csv(path, truths: list[OracleTruth]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["estimand", "value", "method", "se", "draws", "exact"])
        for t in truths:
            row = t.as_row()
            writer.writerow([
                row["estimand"], _fmt(row["value"]), row["method"],
                _fmt(row["se"]) if row["se"] != "" else "",
                row["draws"], row["exact"],
            ])


def write_manifest(path, command: str, config: dict) -> None:
    payload = {
        "tool": "selig",
        "version": __version__,
        "command": command,
        "config": config,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
