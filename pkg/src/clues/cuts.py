"""Step II: optimal level cuts of a dendrogram and flat-hierarchy extraction.

Every must-link connected component of a layer defines a height interval
``[low, high]``: ``low`` is where its last must-link gets satisfied, ``high``
is the first height at or above ``low`` where one of its cannot-links breaks.
The layer's cut minimizes the summed distance from the cut height to those
intervals; any point between the two middle endpoints is optimal.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .model import ConstraintProgram, DataPointSet, Dendrogram, FlatHierarchy, ValidationError


@dataclass(frozen=True)
class ConstraintGroup:
    members: np.ndarray
    must_links: np.ndarray
    cannot_links: np.ndarray


@dataclass(frozen=True)
class CutInterval:
    low: float
    high: float

    def __post_init__(self):
        if not 0.0 <= self.low <= self.high:
            raise ValidationError(f"invalid cut interval [{self.low}, {self.high}]")

    def distance(self, h):
        """Distance from ``h`` to its projection onto the interval."""
        h = np.asarray(h, dtype=np.float64)
        return np.abs(h - np.clip(h, self.low, self.high))


@dataclass(frozen=True)
class LayerCutResult:
    layer: int
    intervals: tuple[CutInterval, ...]
    solution_low: float
    solution_high: float
    chosen: float
    fallback: bool = False

    def to_dict(self) -> dict:
        return {
            "layer": self.layer,
            "intervals": [[iv.low, iv.high] for iv in self.intervals],
            "solution": [self.solution_low, self.solution_high],
            "chosen": self.chosen,
            "fallback": self.fallback,
        }


def constraint_groups(ml: np.ndarray, cl: np.ndarray, n: int) -> list[ConstraintGroup]:
    """Must-link connected components of one layer, with their constraints.

    ``ml`` and ``cl`` are (k, 2) point-index arrays. Points that only carry
    cannot-links form singleton groups. Each group lists its internal
    must-links and every cannot-link with at least one endpoint inside it, so
    a cannot-link between two groups is carried by both. Groups are ordered
    by their smallest member.
    """
    ml = np.asarray(ml, dtype=np.int64).reshape(-1, 2)
    cl = np.asarray(cl, dtype=np.int64).reshape(-1, 2)
    touched = np.zeros(n, dtype=bool)
    touched[ml.ravel()] = True
    touched[cl.ravel()] = True
    if not touched.any():
        return []
    graph = coo_matrix((np.ones(ml.shape[0]), (ml[:, 0], ml[:, 1])), shape=(n, n))
    _, comp = connected_components(graph, directed=False)
    groups = []
    seen = set()
    for i in np.flatnonzero(touched):
        c = comp[i]
        if c in seen:
            continue
        seen.add(c)
        members = np.flatnonzero((comp == c) & touched)
        inside = np.zeros(n, dtype=bool)
        inside[members] = True
        g_ml = ml[inside[ml[:, 0]]]
        g_cl = cl[inside[cl[:, 0]] | inside[cl[:, 1]]]
        groups.append(ConstraintGroup(members, g_ml, g_cl))
    return groups


def interval_for_group(dd: Dendrogram, group: ConstraintGroup) -> CutInterval:
    low = float(dd.lca_heights(group.must_links).max(initial=0.0))
    cl_h = dd.lca_heights(group.cannot_links)
    above = cl_h[cl_h >= low]
    high = float(above.min()) if above.size else dd.root_height
    return CutInterval(low, max(high, low))


def cut_objective(h, intervals) -> np.ndarray:
    """Summed distance from ``h`` (scalar or array) to every interval."""
    h = np.asarray(h, dtype=np.float64)
    return sum((iv.distance(h) for iv in intervals), np.zeros_like(h))


def optimal_cut(intervals, layer: int = 0) -> LayerCutResult:
    """Closed-form minimizer of :func:`cut_objective`.

    With the ``2k`` endpoints sorted ascending, every height between the
    k-th and (k+1)-th endpoint is optimal; the midpoint is returned as
    ``chosen``.
    """
    intervals = tuple(intervals)
    if not intervals:
        raise ValidationError("optimal_cut needs at least one interval")
    k = len(intervals)
    ends = np.sort([x for iv in intervals for x in (iv.low, iv.high)], kind="stable")
    lo, hi = float(ends[k - 1]), float(ends[k])
    return LayerCutResult(layer, intervals, lo, hi, 0.5 * (lo + hi))


def cut_for_k_clusters(dd: Dendrogram, k: int) -> float:
    """Height that leaves ``k`` clusters (fewer when heights tie)."""
    hs = dd.heights
    keep = dd.n - max(1, min(k, dd.n))
    if keep <= 0:
        return 0.5 * float(hs[0])
    if keep >= dd.n - 1:
        return float(hs[-1])
    return 0.5 * float(hs[keep - 1] + hs[keep])


def nesting_epsilon(dd: Dendrogram) -> float:
    levels = np.unique(dd.heights)
    if levels.size >= 2:
        return 0.5 * float(np.diff(levels).min())
    return 0.5 * (dd.root_height if dd.root_height > 0 else 1.0)


def extract_flat_hierarchy(dd: Dendrogram, cp: ConstraintProgram,
                           points: DataPointSet | None = None) -> tuple[FlatHierarchy, list[LayerCutResult]]:
    """Cut the dendrogram once per layer and return the nested partitions.

    Layers are processed from finest to coarsest. Each cut is pushed to at
    least the previous cut plus half the smallest gap between distinct merge
    heights, so every layer is a coarsening of the one below. A layer without
    constraints falls back to a cut yielding one cluster fewer than the
    previous layer (two clusters for the first layer).
    """
    if points is None:
        points = DataPointSet(tuple(str(i) for i in range(dd.n)))
    if points.n != dd.n:
        raise ValidationError(f"{points.n} labels for a dendrogram over {dd.n} leaves")
    index = points.index()
    eps = nesting_epsilon(dd)
    assignments, cuts, results = [], [], []
    prev_cut, prev_k = None, None
    for j, layer in enumerate(cp.layers, start=1):
        ml, cl = layer.index_pairs(index)
        groups = constraint_groups(ml, cl, dd.n)
        if groups:
            res = optimal_cut([interval_for_group(dd, g) for g in groups], layer=j)
        else:
            k = 2 if prev_k is None else max(prev_k - 1, 1)
            h = cut_for_k_clusters(dd, k)
            res = LayerCutResult(j, (), h, h, h, fallback=True)
        h = res.chosen if prev_cut is None else max(res.chosen, prev_cut + eps)
        a = dd.cut(h)
        assignments.append(a)
        cuts.append(h)
        results.append(res)
        prev_cut, prev_k = h, int(a.max()) + 1
    return FlatHierarchy(points.labels, tuple(assignments), tuple(cuts)), results
