"""Evaluation: Dasgupta cost, constraint violation rate, run comparison."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .model import ConstraintProgram, Dendrogram, DistanceMatrix, FlatHierarchy, ValidationError


def dasgupta_cost(dd: Dendrogram, D: DistanceMatrix) -> float:
    """Sum over leaf pairs of similarity times the leaf count under their LCA.

    Similarities are ``1 - d`` on the normalized distances. Lower is better.
    """
    if dd.n != D.n:
        raise ValidationError(f"dendrogram has {dd.n} leaves but D is {D.n}x{D.n}")
    iu, ju = np.triu_indices(dd.n, 1)
    lca = dd.lca_matrix()[iu, ju]
    leaves = dd.sizes()[dd.n + lca]
    sim = 1.0 - D.values[iu, ju]
    return float(np.dot(sim, leaves))


@dataclass
class LayerViolations:
    layer: int
    must_link_violated: int
    must_link_total: int
    cannot_link_violated: int
    cannot_link_total: int

    @property
    def violated(self) -> int:
        return self.must_link_violated + self.cannot_link_violated

    @property
    def total(self) -> int:
        return self.must_link_total + self.cannot_link_total

    @property
    def rate(self) -> float:
        return self.violated / self.total if self.total else 0.0


def violation_rate(fh: FlatHierarchy, cp: ConstraintProgram) -> tuple[float, list[LayerViolations]]:
    """Overall fraction of violated constraints across all layers, plus the per-layer counts.

    In layer j a must-link is violated when its points sit in different
    layer-j clusters, a cannot-link when they share one.
    """
    if fh.n_layers != cp.n_layers:
        raise ValidationError(f"hierarchy has {fh.n_layers} layers, constraints have {cp.n_layers}")
    index = {lab: i for i, lab in enumerate(fh.labels)}
    per_layer = []
    for j, layer in enumerate(cp.layers):
        a = fh.assignments[j]
        ml, cl = layer.index_pairs(index)
        per_layer.append(LayerViolations(
            j + 1,
            int(np.count_nonzero(a[ml[:, 0]] != a[ml[:, 1]])),
            ml.shape[0],
            int(np.count_nonzero(a[cl[:, 0]] == a[cl[:, 1]])),
            cl.shape[0],
        ))
    total = sum(v.total for v in per_layer)
    rate = sum(v.violated for v in per_layer) / total if total else 0.0
    return rate, per_layer


@dataclass
class EvalReport:
    dasgupta_cost: float
    violation_rate: float
    per_layer: list[dict] = field(default_factory=list)
    wall_time: float | None = None
    warnings: list[str] = field(default_factory=list)

    def __post_init__(self):
        if not 0.0 <= self.violation_rate <= 1.0:
            raise ValidationError("violation rate must lie in [0, 1]")
        if self.dasgupta_cost < 0:
            raise ValidationError("Dasgupta cost must be nonnegative")

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> EvalReport:
        return cls(d["dasgupta_cost"], d["violation_rate"], d.get("per_layer", []),
                   d.get("wall_time"), d.get("warnings", []))


def evaluate(dd: Dendrogram, fh: FlatHierarchy, D: DistanceMatrix, cp: ConstraintProgram,
             wall_time: float | None = None, warnings: list[str] | None = None) -> EvalReport:
    rate, layers = violation_rate(fh, cp)
    per_layer = [
        {
            "layer": v.layer,
            "violated": v.violated,
            "total": v.total,
            "rate": v.rate,
            "must_link_violated": v.must_link_violated,
            "cannot_link_violated": v.cannot_link_violated,
        }
        for v in layers
    ]
    return EvalReport(dasgupta_cost(dd, D), rate, per_layer, wall_time, list(warnings or []))


def _improvement(before: float | None, after: float | None) -> float | None:
    """Relative reduction from ``before`` to ``after`` (positive = better)."""
    if before is None or after is None:
        return None
    if before == after:
        return 0.0
    if before == 0:
        return None
    return (before - after) / before


def compare_runs(constrained: EvalReport, unconstrained: EvalReport) -> dict:
    """Relative change of the constrained run with respect to the unconstrained one.

    ``cost_improvement`` and ``compliance_improvement`` are fractional
    reductions of Dasgupta cost and violation rate; ``time_ratio`` is
    constrained over unconstrained wall time. ``None`` marks ratios with a
    zero baseline.
    """
    c_t, u_t = constrained.wall_time, unconstrained.wall_time
    if c_t is None or u_t is None:
        ratio = None
    elif c_t == u_t:
        ratio = 1.0
    else:
        ratio = c_t / u_t if u_t else None
    return {
        "cost_delta": constrained.dasgupta_cost - unconstrained.dasgupta_cost,
        "violation_delta": constrained.violation_rate - unconstrained.violation_rate,
        "time_delta": None if c_t is None or u_t is None else c_t - u_t,
        "cost_improvement": _improvement(unconstrained.dasgupta_cost, constrained.dasgupta_cost),
        "compliance_improvement": _improvement(unconstrained.violation_rate, constrained.violation_rate),
        "time_ratio": ratio,
    }


CSV_FIELDS = ("dataset", "method", "constrained", "n", "dasgupta_cost", "violation_rate", "wall_time",
              "normalized_time")


def normalize_times(rows: list[dict], key: str = "dataset") -> None:
    """Fill ``normalized_time`` with wall time divided by the slowest row of the same dataset."""
    slowest: dict = {}
    for r in rows:
        t = r.get("wall_time")
        if t is not None:
            slowest[r[key]] = max(slowest.get(r[key], 0.0), t)
    for r in rows:
        t, top = r.get("wall_time"), slowest.get(r[key])
        r["normalized_time"] = (t / top if top else 1.0) if t is not None else None


def rows_to_csv(rows: list[dict], fields=CSV_FIELDS) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(fields), extrasaction="ignore", lineterminator="\n")
    writer.writeheader()
    for r in rows:
        writer.writerow({k: ("" if r.get(k) is None else r.get(k)) for k in fields})
    return buf.getvalue()


def report_csv_row(report: EvalReport, dataset: str, method: str, constrained: bool, n: int) -> dict:
    return {
        "dataset": dataset,
        "method": method,
        "constrained": constrained,
        "n": n,
        "dasgupta_cost": report.dasgupta_cost,
        "violation_rate": report.violation_rate,
        "wall_time": report.wall_time,
    }

