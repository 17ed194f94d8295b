"""Step I: soft-constrained sequential coarsening into a dendrogram.

Two engines share one layer-driven driver (:func:`run_step1`):

* ``bottom-up``: greedy closest-pair agglomeration where, before every
  merge, the entries of the distance matrix touched by the current layer's
  constraints are moved by the closed-form update. Once the constrained
  layers are done the tree is completed with NN-chains.
* ``local-variation``: edge-based local-variation passes that contract a
  maximal matching at once; the full regularized problem is re-solved
  before every pass.
"""

from __future__ import annotations

import logging
import time
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
import scipy.linalg

from . import kernels
from .constraints import (
    LAPLACIAN,
    ConvergenceWarning,
    LiftedConstraints,
    PenaltyWeights,
    cannot_link_entries,
    constraint_status,
    lift_constraints,
    must_link_entries,
    solve_soft_qp,
)
from .linkage import LinkageMethod, slot_merges_to_dendrogram, working_matrix
from .model import (
    ConstraintProgram,
    DataPointSet,
    Dendrogram,
    DistanceMatrix,
    LaplacianView,
    Partition,
    ValidationError,
    canonical_labels,
    validate_constraints,
)

log = logging.getLogger(__name__)

BOTTOM_UP = "bottom-up"
LOCAL_VARIATION = "local-variation"
METHODS = (BOTTOM_UP, LOCAL_VARIATION)

# eigenvectors kept when scoring contractions
SPECTRAL_RANK = 10


@dataclass(frozen=True)
class CoarseningConfig:
    method: str = BOTTOM_UP
    linkage: LinkageMethod = LinkageMethod.AVERAGE
    weights: PenaltyWeights = field(default_factory=PenaltyWeights)
    i_max: int = 1_000_000
    satisfaction_threshold: float = 0.75
    relaxation: str = LAPLACIAN
    qp_tol: float = 1e-8
    qp_max_iter: int | None = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValidationError(f"unknown coarsening method {self.method!r}; choose {' or '.join(METHODS)}")
        object.__setattr__(self, "linkage", LinkageMethod.parse(self.linkage))
        if int(self.i_max) <= 0:
            raise ValidationError("i_max must be positive")
        if not 0.0 < self.satisfaction_threshold <= 1.0:
            raise ValidationError("satisfaction threshold must lie in (0, 1]")

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "linkage": self.linkage.value,
            "lambda1": self.weights.lambda1,
            "lambda2": self.weights.lambda2,
            "i_max": int(self.i_max),
            "satisfaction_threshold": self.satisfaction_threshold,
            "relaxation": self.relaxation,
            "qp_tol": self.qp_tol,
            "qp_max_iter": self.qp_max_iter,
        }

    @classmethod
    def from_dict(cls, d: dict) -> CoarseningConfig:
        return cls(
            method=d.get("method", BOTTOM_UP),
            linkage=LinkageMethod.parse(d.get("linkage", "average")),
            weights=PenaltyWeights(d.get("lambda1", 1.0), d.get("lambda2", 1.0)),
            i_max=d.get("i_max", 1_000_000),
            satisfaction_threshold=d.get("satisfaction_threshold", 0.75),
            relaxation=d.get("relaxation", LAPLACIAN),
            qp_tol=d.get("qp_tol", 1e-8),
            qp_max_iter=d.get("qp_max_iter"),
        )


@dataclass
class LayerReport:
    layer: int
    n_constraints: int
    status_start: float
    status_end: float
    iterations: int
    exhausted: bool
    conflicts: int = 0
    qp_solves: int = 0
    qp_unconverged: int = 0

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class Step1Result:
    dendrogram: Dendrogram
    layers: list[LayerReport]
    method: str
    relaxation: str | None
    warnings: list[str] = field(default_factory=list)
    elapsed: float = 0.0

    def report(self) -> dict:
        """Deterministic run summary (no timing)."""
        return {
            "method": self.method,
            "relaxation": self.relaxation,
            "n": self.dendrogram.n,
            "merges": self.dendrogram.n - 1,
            "root_height": self.dendrogram.root_height,
            "layers": [r.to_dict() for r in self.layers],
            "warnings": list(self.warnings),
        }


class MergeRecord(NamedTuple):
    left: int
    right: int
    height: float
    distance: float


def _update_working(W: np.ndarray, lifted: LiftedConstraints, w: PenaltyWeights) -> None:
    """Closed-form update applied to a distance working matrix (``L_ij = -d_ij``)."""
    ml, cl = lifted.must_links, lifted.cannot_links
    if ml.size:
        d = -must_link_entries(-W[ml[:, 0], ml[:, 1]], w.lambda1)
        W[ml[:, 0], ml[:, 1]] = d
        W[ml[:, 1], ml[:, 0]] = d
    if cl.size:
        d = -cannot_link_entries(-W[cl[:, 0], cl[:, 1]], w.lambda2)
        W[cl[:, 0], cl[:, 1]] = d
        W[cl[:, 1], cl[:, 0]] = d


def merge_step_constrained(D, p: Partition, ml_pairs, cl_pairs, w: PenaltyWeights,
                           method: LinkageMethod | str = "average", floor: float = 0.0, backend: str | None = None):
    """One constrained merge on a supernode distance matrix.

    Args:
        D: (m, m) supernode distances, or a DistanceMatrix when ``m == n``.
        p: current partition of the original points into the m supernodes.
        ml_pairs, cl_pairs: (k, 2) point-index pairs of the active layer.
        w: penalty weights.
        method: linkage used to recompute the merged row.
        floor: height of the previous merge; the recorded height never drops below it.

    Returns:
        ``(D', p', record)`` with ``D'`` the (m-1, m-1) updated distances,
        ``p'`` the coarser partition and a :class:`MergeRecord` whose
        supernode ids refer to ``p``.
    """
    impl = kernels.get_backend(backend)
    method = LinkageMethod.parse(method)
    values = D.values if isinstance(D, DistanceMatrix) else np.asarray(D, dtype=np.float64)
    m = values.shape[0]
    if m < 2:
        raise ValidationError("need at least two supernodes to merge")
    if p.n_supernodes != m:
        raise ValidationError(f"partition has {p.n_supernodes} supernodes but D is {m}x{m}")
    W = working_matrix(values)
    _update_working(W, lift_constraints(ml_pairs, cl_pairs, p), w)
    active = np.ones(m, dtype=np.uint8)
    sizes = np.bincount(p.labels, minlength=m).astype(np.float64)
    i, j, d = impl.argmin_pair(W, active)
    impl.merge_pair(W, sizes, active, i, j, method.code)
    keep = np.flatnonzero(active)
    out = W[np.ix_(keep, keep)]
    np.fill_diagonal(out, 0.0)
    labels = np.array(p.labels)
    labels[labels == j] = i
    return out, Partition.from_assignment(labels), MergeRecord(int(i), int(j), max(float(d), floor), float(d))


class LocalVariationPass(NamedTuple):
    mapping: np.ndarray
    laplacian: LaplacianView
    pairs: np.ndarray
    costs: np.ndarray


def edge_costs(weights: np.ndarray, rank: int = SPECTRAL_RANK) -> np.ndarray:
    """Local-variation cost of contracting each edge of a weighted graph.

    For edge (i, j) with weight w the restricted Laplacian of the contraction
    set is ``[[2 d_i - w, -w], [-w, 2 d_j - w]]``; the cost is the norm of
    that operator applied to the projection of the spectral embedding onto
    the complement of the constant vector, which reduces to
    ``(d_i + d_j) / 2 * ||a_i - a_j||^2``. The embedding rows ``a_i`` come from
    the ``rank`` lowest non-trivial eigenvectors scaled by
    ``lambda^(-1/2)``. Entries for non-edges are meaningless.
    """
    n = weights.shape[0]
    deg = weights.sum(axis=1)
    lap = np.diag(deg) - weights
    k = min(rank, n - 1)
    if n <= 64:
        vals, vecs = np.linalg.eigh(lap)
        vals, vecs = vals[: k + 1], vecs[:, : k + 1]
    else:
        vals, vecs = scipy.linalg.eigh(lap, subset_by_index=[0, k])
    scale = np.zeros_like(vals)
    nz = vals > 1e-10 * max(1.0, float(vals[-1]))
    scale[nz] = vals[nz] ** -0.5
    emb = vecs * scale
    gram = emb @ emb.T
    g = np.diag(gram)
    resist = np.maximum(g[:, None] + g[None, :] - 2.0 * gram, 0.0)
    return 0.5 * (deg[:, None] + deg[None, :]) * resist


def local_variation_pass(L: LaplacianView, backend: str | None = None) -> LocalVariationPass:
    """Contract a greedy maximal matching of lowest local-variation cost.

    ``-L_ij`` is read as the weight of edge (i, j); zero entries are not
    edges. Edges are visited in ascending (cost, i, j) order and kept when
    both endpoints are still free, so at most ``floor(N/2)`` pairs merge and
    the coarse graph keeps at least ``ceil(N/2)`` nodes.

    Returns the contraction map (old node -> coarse node), the coarse
    Laplacian (weights summed over supernode pairs, then rescaled so the
    largest weight is 1), and the contracted pairs with their costs in
    selection order.
    """
    N = L.n
    if N < 2:
        raise ValidationError("local-variation pass needs at least two nodes")
    weights = -np.array(L.offdiag)
    iu, ju = np.triu_indices(N, 1)
    is_edge = weights[iu, ju] > 0
    iu, ju = iu[is_edge], ju[is_edge]
    if iu.size == 0:
        return LocalVariationPass(np.arange(N), L, np.zeros((0, 2), dtype=np.int64), np.zeros(0))
    cost = edge_costs(weights)[iu, ju]
    order = np.lexsort((ju, iu, cost))
    u, v = np.ascontiguousarray(iu[order], dtype=np.int64), np.ascontiguousarray(ju[order], dtype=np.int64)
    keep = kernels.get_backend(backend).greedy_matching(u, v, N).astype(bool)
    pairs = np.stack([u[keep], v[keep]], axis=1)
    assign = np.arange(N)
    assign[pairs[:, 1]] = pairs[:, 0]
    mapping = canonical_labels(assign)
    M = mapping.max() + 1
    P = np.zeros((N, M))
    P[np.arange(N), mapping] = 1.0
    coarse = P.T @ weights @ P
    np.fill_diagonal(coarse, 0.0)
    top = coarse.max(initial=0.0)
    if top > 0:
        coarse = coarse / top
    coarse = 0.5 * (coarse + coarse.T)
    return LocalVariationPass(mapping, LaplacianView(-coarse), pairs, cost[order][keep])


class _State:
    """Slot-based merge state shared by both engines."""

    def __init__(self, D: DistanceMatrix, linkage: LinkageMethod, backend):
        self.n = D.n
        self.W = working_matrix(D.values)
        self.size = np.ones(self.n)
        self.active = np.ones(self.n, dtype=np.uint8)
        self.labels = np.arange(self.n)
        self.code = linkage.code
        self.impl = backend
        self.pairs: list[tuple[int, int]] = []
        self.heights: list[float] = []
        self.n_active = self.n

    def merge(self, i: int, j: int, height: float) -> None:
        if i > j:
            i, j = j, i
        self.impl.merge_pair(self.W, self.size, self.active, i, j, self.code)
        self.labels[self.labels == j] = i
        self.pairs.append((i, j))
        self.heights.append(height)
        self.n_active -= 1

    def slots(self) -> np.ndarray:
        return np.flatnonzero(self.active)


def _layer_pairs(cp: ConstraintProgram, points: DataPointSet):
    index = points.index()
    return [layer.index_pairs(index) for layer in cp.layers]


def run_step1(D: DistanceMatrix, cp: ConstraintProgram, cfg: CoarseningConfig,
              points: DataPointSet | None = None, backend: str | None = None) -> Step1Result:
    """Build the dendrogram layer by layer.

    For each layer the constraints are lifted onto the current supernodes and
    applied, then merges (bottom-up) or passes (local-variation) repeat until
    the layer's satisfied fraction reaches ``cfg.satisfaction_threshold``,
    ``cfg.i_max`` iterations are spent, or one supernode is left. After the
    last layer, merging continues without constraints up to a single root.
    """
    if points is None:
        points = DataPointSet(tuple(str(i) for i in range(D.n)))
    if points.n != D.n:
        raise ValidationError(f"{points.n} labels for a {D.n}x{D.n} distance matrix")
    problems = validate_constraints(cp, points)
    fatal = [p for p in problems if "unknown label" in p or "itself" in p]
    if fatal:
        raise ValidationError("; ".join(fatal))
    # contradictory pairs are soft: the lift drops them, the run goes on
    for p in problems:
        log.warning("%s", p)
    layer_pairs = _layer_pairs(cp, points)
    backend = backend or kernels.BACKEND
    t0 = time.perf_counter()
    if cfg.method == BOTTOM_UP:
        result = _run_bottom_up(D, layer_pairs, cfg, backend)
    else:
        result = _run_local_variation(D, layer_pairs, cfg, backend)
    result.elapsed = time.perf_counter() - t0
    result.warnings[:0] = problems
    return result


def _run_bottom_up(D, layer_pairs, cfg, backend) -> Step1Result:
    impl = kernels.get_backend(backend)
    st = _State(D, cfg.linkage, impl)
    w, thr = cfg.weights, cfg.satisfaction_threshold
    reports = []
    running = 0.0
    for j, (ml, cl) in enumerate(layer_pairs, start=1):
        lifted = lift_constraints(ml, cl, st.labels)
        conflicts = {tuple(p) for p in lifted.conflicts.tolist()}
        _update_working(st.W, lifted, w)
        status = start = constraint_status(st.labels, ml, cl)
        it = 0
        while status < thr and it < cfg.i_max and st.n_active > 1:
            a, b, d = impl.argmin_pair(st.W, st.active)
            running = max(running, d)
            st.merge(a, b, running)
            lifted = lift_constraints(ml, cl, st.labels)
            conflicts.update(tuple(p) for p in lifted.conflicts.tolist())
            _update_working(st.W, lifted, w)
            status = constraint_status(st.labels, ml, cl)
            it += 1
        rep = LayerReport(j, len(ml) + len(cl), start, status, it, status < thr and it >= cfg.i_max, len(conflicts))
        reports.append(rep)
        if rep.exhausted:
            log.info("layer %d: i_max=%d reached at status %.3f", j, cfg.i_max, status)
        if conflicts:
            log.info("layer %d: %d conflicting supernode pairs dropped", j, len(conflicts))

    # unconstrained completion; reducible linkages make NN-chains exact here
    slots = st.slots()
    if slots.size > 1:
        sub = np.ascontiguousarray(st.W[np.ix_(slots, slots)])
        tail_pairs, tail_heights = impl.nn_chain(sub, np.ascontiguousarray(st.size[slots]), st.code)
        tail_pairs = slots[tail_pairs]
    else:
        tail_pairs, tail_heights = np.zeros((0, 2), dtype=np.int64), np.zeros(0)
    prefix = (st.pairs, st.heights) if st.pairs else None
    dd = slot_merges_to_dendrogram(st.n, tail_pairs, tail_heights, floor=running, prefix=prefix)
    warn = [f"layer {r.layer}: stopped at i_max with status {r.status_end:.3f}" for r in reports if r.exhausted]
    warn += [f"layer {r.layer}: {r.conflicts} conflicting supernode pairs dropped" for r in reports if r.conflicts]
    return Step1Result(dd, reports, BOTTOM_UP, None, warn)


def _run_local_variation(D, layer_pairs, cfg, backend) -> Step1Result:
    impl = kernels.get_backend(backend)
    st = _State(D, cfg.linkage, impl)
    w, thr = cfg.weights, cfg.satisfaction_threshold
    reports = []
    warn: list[str] = []
    merge_pass: list[int] = []
    merge_dist: list[float] = []
    passes = 0

    def qp_update(ml, cl, rep):
        slots = st.slots()
        if slots.size < 2:
            return set()
        pos = np.full(st.n, -1)
        pos[slots] = np.arange(slots.size)
        lifted = lift_constraints(ml, cl, pos[st.labels])
        sub = st.W[np.ix_(slots, slots)]
        np.fill_diagonal(sub, 0.0)
        if not lifted.empty:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", ConvergenceWarning)
                res = solve_soft_qp(LaplacianView(-np.minimum(sub, 1.0)), lifted, w, tol=cfg.qp_tol,
                                    max_iter=cfg.qp_max_iter, relaxation=cfg.relaxation, backend=backend)
            rep.qp_solves += 1
            if not res.converged:
                rep.qp_unconverged += 1
            new = -res.laplacian.offdiag
            np.fill_diagonal(new, np.inf)
            st.W[np.ix_(slots, slots)] = new
        return {tuple(slots[p]) for p in lifted.conflicts.tolist()}

    def one_pass():
        nonlocal passes
        slots = st.slots()
        sub = st.W[np.ix_(slots, slots)]
        affinity = np.clip(1.0 - sub, 0.0, 1.0)
        np.fill_diagonal(affinity, 0.0)
        lv = local_variation_pass(LaplacianView(-affinity), backend=backend)
        passes += 1
        pairs = slots[lv.pairs]
        if pairs.shape[0] == 0:
            a, b, _ = impl.argmin_pair(st.W, st.active)
            pairs = np.array([[a, b]])
        for a, b in pairs:
            merge_dist.append(float(st.W[a, b]))
            merge_pass.append(passes)
            st.merge(int(a), int(b), float(passes))

    for j, (ml, cl) in enumerate(layer_pairs, start=1):
        rep = LayerReport(j, len(ml) + len(cl), 0.0, 0.0, 0, False)
        conflicts = qp_update(ml, cl, rep)
        status = rep.status_start = constraint_status(st.labels, ml, cl)
        it = 0
        while status < thr and it < cfg.i_max and st.n_active > 1:
            one_pass()
            conflicts |= qp_update(ml, cl, rep)
            status = constraint_status(st.labels, ml, cl)
            it += 1
        rep.status_end, rep.iterations = status, it
        rep.exhausted = status < thr and it >= cfg.i_max
        rep.conflicts = len(conflicts)
        reports.append(rep)
        if rep.exhausted:
            warn.append(f"layer {j}: stopped at i_max with status {status:.3f}")
        if rep.conflicts:
            warn.append(f"layer {j}: {rep.conflicts} conflicting supernode pairs dropped")
        if rep.qp_unconverged:
            warn.append(f"layer {j}: {rep.qp_unconverged} of {rep.qp_solves} QP solves hit max_iter")
    while st.n_active > 1:
        one_pass()

    dmax = max(merge_dist) if merge_dist else 1.0
    if not dmax > 0:
        dmax = 1.0
    heights = np.array(merge_pass, dtype=np.float64) / passes * dmax
    children = []
    node_of = np.arange(st.n)
    for k, (a, b) in enumerate(st.pairs):
        children.append((node_of[a], node_of[b]))
        node_of[a] = st.n + k
    dd = Dendrogram(st.n, np.array(children, dtype=np.int64).reshape(-1, 2), heights)
    return Step1Result(dd, reports, LOCAL_VARIATION, cfg.relaxation, warn)
