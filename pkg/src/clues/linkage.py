"""Unconstrained agglomerative linkage via nearest-neighbour chains."""

from __future__ import annotations

from enum import Enum

import numpy as np

from . import kernels
from .model import Dendrogram, DistanceMatrix


class LinkageMethod(str, Enum):
    """Lance-Williams linkages that satisfy the reducibility property.

    Centroid and median linkage are deliberately absent: NN-chains are only
    exact for reducible updates.
    """

    SINGLE = "single"
    COMPLETE = "complete"
    AVERAGE = "average"
    WEIGHTED = "weighted"
    WARD = "ward"

    @property
    def code(self) -> int:
        return _CODES[self]

    @classmethod
    def parse(cls, value: LinkageMethod | str) -> LinkageMethod:
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            allowed = ", ".join(m.value for m in cls)
            raise ValueError(f"unsupported linkage {value!r}; choose one of: {allowed}") from None


_CODES = {
    LinkageMethod.SINGLE: 0,
    LinkageMethod.COMPLETE: 1,
    LinkageMethod.AVERAGE: 2,
    LinkageMethod.WEIGHTED: 3,
    LinkageMethod.WARD: 4,
}


def working_matrix(values: np.ndarray) -> np.ndarray:
    """C-contiguous float64 copy with ``+inf`` on the diagonal, as the kernels expect."""
    w = np.array(values, dtype=np.float64, order="C", copy=True)
    np.fill_diagonal(w, np.inf)
    return w


def slot_merges_to_dendrogram(n, pairs, heights, floor=0.0, prefix=None):
    """Turn slot-space merges (discovery order) into a canonical Dendrogram.

    ``pairs[k] = (a, b)`` with ``a < b`` means the cluster held in slot ``b``
    was absorbed into slot ``a``. Heights are first made monotone along the
    tree (guards against one-ulp inversions), floored at ``floor``, then
    merges are stably sorted by height and relabelled to node ids ``n + k``.

    ``prefix`` optionally carries already-final merges ``(pairs, heights)``
    that precede these ones; they are kept in order and not re-sorted.
    """
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    heights = np.asarray(heights, dtype=np.float64).reshape(-1)
    node_of = np.arange(n, dtype=np.int64)
    children, out_h = [], []
    slot_h = np.zeros(n)
    if prefix is not None:
        for (a, b), h in zip(*prefix):
            children.append((node_of[a], node_of[b]))
            out_h.append(h)
            node_of[a] = n + len(children) - 1
            slot_h[a] = max(h, slot_h[a], slot_h[b])
    eff = np.empty_like(heights)
    for k, (a, b) in enumerate(pairs):
        h = max(heights[k], slot_h[a], slot_h[b], floor)
        slot_h[a] = h
        eff[k] = h
    for k in np.argsort(eff, kind="stable"):
        a, b = pairs[k]
        children.append((node_of[a], node_of[b]))
        out_h.append(eff[k])
        node_of[a] = n + len(children) - 1
    return Dendrogram(n, np.array(children, dtype=np.int64).reshape(-1, 2), np.array(out_h))


def nn_chain_linkage(D: DistanceMatrix, method: LinkageMethod | str = "average", backend: str | None = None) -> Dendrogram:
    """Agglomerative clustering in O(n^2) with nearest-neighbour chains.

    Produces the same tree as greedy closest-pair agglomeration (up to the
    order of equal-height merges). Heights are linkage distances at merge
    time.
    """
    method = LinkageMethod.parse(method)
    impl = kernels.get_backend(backend)
    work = working_matrix(D.values)
    size = np.ones(D.n)
    pairs, heights = impl.nn_chain(work, size, method.code)
    return slot_merges_to_dendrogram(D.n, pairs, heights)
