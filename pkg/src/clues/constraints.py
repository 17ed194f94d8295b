"""Soft must-link / cannot-link regularization of the graph Laplacian.

The regularized problem, for a coarsened Laplacian ``L_c`` on ``m`` nodes, is

    min_L  1/2 ||L - L_c||^2 + lambda1/2 sum_ML L_ij^2 + lambda2/2 sum_CL (L_ij + 1)^2

over Laplacians with off-diagonal entries in [-1, 0]. With the diagonal
eliminated through the zero-row-sum identity the feasible set is a box on
the upper triangle. Dropping the diagonal term decouples the entries and
gives the closed form in :func:`closed_form_update`.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .model import LaplacianView, Partition, ValidationError

log = logging.getLogger(__name__)

BOX = "box"
LAPLACIAN = "laplacian"


@dataclass(frozen=True)
class PenaltyWeights:
    lambda1: float = 1.0
    lambda2: float = 1.0

    def __post_init__(self):
        if not (self.lambda1 >= 0 and self.lambda2 >= 0):
            raise ValidationError(f"penalty weights must be nonnegative, got {self.lambda1}, {self.lambda2}")


@dataclass(frozen=True)
class LiftedConstraints:
    """Constraints mapped onto supernodes, as (k, 2) arrays of sorted id pairs.

    Bookkeeping from the lift is carried along: constraints already decided
    because both endpoints share a supernode, and supernode pairs that
    received both a must-link and a cannot-link (dropped from both sets).
    """

    must_links: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), dtype=np.int64))
    cannot_links: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), dtype=np.int64))
    ml_satisfied: int = 0
    cl_violated: int = 0
    conflicts: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), dtype=np.int64))

    @property
    def empty(self) -> bool:
        return self.must_links.shape[0] == 0 and self.cannot_links.shape[0] == 0


class ConvergenceWarning(UserWarning):
    pass


@dataclass
class QPResult:
    laplacian: LaplacianView
    objective: float
    iterations: int
    converged: bool
    relaxation: str
    history: list[float] = field(default_factory=list, repr=False)


def _pair_mask(m: int, pairs: np.ndarray) -> np.ndarray:
    mask = np.zeros((m, m), dtype=bool)
    if pairs.size:
        mask[pairs[:, 0], pairs[:, 1]] = True
        mask[pairs[:, 1], pairs[:, 0]] = True
    return mask


def must_link_entries(x: np.ndarray, lambda1: float) -> np.ndarray:
    """Closed-form update of Laplacian entries that carry a must-link."""
    return np.minimum(np.maximum(x / (1.0 + lambda1), -1.0), 0.0)


def cannot_link_entries(x: np.ndarray, lambda2: float) -> np.ndarray:
    """Closed-form update of Laplacian entries that carry a cannot-link."""
    return np.minimum(np.maximum((x - lambda2) / (1.0 + lambda2), -1.0), 0.0)


def closed_form_offdiag(offdiag: np.ndarray, lifted: LiftedConstraints, w: PenaltyWeights) -> np.ndarray:
    """Apply the entrywise closed form to a symmetric off-diagonal array in place.

    Only constrained entries are touched; every other entry keeps its exact
    bit pattern.
    """
    ml, cl = lifted.must_links, lifted.cannot_links
    if ml.size:
        x = must_link_entries(offdiag[ml[:, 0], ml[:, 1]], w.lambda1)
        offdiag[ml[:, 0], ml[:, 1]] = x
        offdiag[ml[:, 1], ml[:, 0]] = x
    if cl.size:
        x = cannot_link_entries(offdiag[cl[:, 0], cl[:, 1]], w.lambda2)
        offdiag[cl[:, 0], cl[:, 1]] = x
        offdiag[cl[:, 1], cl[:, 0]] = x
    return offdiag


def closed_form_update(L_c: LaplacianView, lifted: LiftedConstraints, w: PenaltyWeights) -> LaplacianView:
    """Exact minimizer of the regularized problem over the box [-1, 0] per entry.

    For each upper-triangle entry::

        L*_ij = clamp((L_c,ij - l2_ij) / (1 + l1_ij + l2_ij), -1, 0)

    where ``l1_ij = lambda1`` on must-link pairs and ``l2_ij = lambda2`` on
    cannot-link pairs (zero elsewhere).
    """
    out = np.array(L_c.offdiag)
    closed_form_offdiag(out, lifted, w)
    return LaplacianView(out)


def qp_objective(x: np.ndarray, c: np.ndarray, ml: np.ndarray, cl: np.ndarray, w: PenaltyWeights,
                 relaxation: str = LAPLACIAN) -> float:
    """Objective on full symmetric off-diagonal arrays (each unordered pair counted once).

    ``ml`` and ``cl`` are symmetric boolean masks. Full-matrix sums count every
    pair twice, hence the factors of 1/4.
    """
    diff = x - c
    f = 0.25 * float(np.sum(diff * diff))
    if w.lambda1:
        f += 0.25 * w.lambda1 * float(np.sum(np.where(ml, x * x, 0.0)))
    if w.lambda2:
        f += 0.25 * w.lambda2 * float(np.sum(np.where(cl, (x + 1.0) ** 2, 0.0)))
    if relaxation == LAPLACIAN:
        r = diff.sum(axis=1)
        f += 0.25 * float(r @ r)
    return f


def solve_soft_qp(L_c: LaplacianView, lifted: LiftedConstraints, w: PenaltyWeights, tol: float = 1e-8,
                  max_iter: int | None = None, relaxation: str = LAPLACIAN, x0: np.ndarray | None = None,
                  record_history: bool = False, backend: str | None = None) -> QPResult:
    """Projected gradient on the off-diagonal parametrization.

    ``relaxation="laplacian"`` keeps the diagonal of ``L - L_c`` in the
    Frobenius term (each diagonal entry is minus the row sum of the
    off-diagonal differences), which couples the entries. ``"box"`` drops it,
    which is the setting whose exact answer is :func:`closed_form_update`.

    The step size is 1 over the Lipschitz constant of the gradient; the
    projection is an entrywise clamp to [-1, 0]. Iteration stops once the
    relative objective decrease falls below ``tol``; hitting ``max_iter``
    returns the last iterate with ``converged=False`` and a
    :class:`ConvergenceWarning`.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if relaxation not in (BOX, LAPLACIAN):
        raise ValueError(f"unknown relaxation {relaxation!r}")
    impl = kernels.get_backend(backend)
    m = L_c.n
    if max_iter is None:
        max_iter = max(10 * m * m, 100)
    iu, ju = np.triu_indices(m, 1)
    c = np.ascontiguousarray(L_c.offdiag[iu, ju])
    code = np.zeros(c.size, dtype=np.uint8)
    code[_pair_mask(m, lifted.must_links)[iu, ju]] = 1
    code[_pair_mask(m, lifted.cannot_links)[iu, ju]] = 2
    coupled = relaxation == LAPLACIAN
    lam_max = max(w.lambda1 if (code == 1).any() else 0.0, w.lambda2 if (code == 2).any() else 0.0)
    lipschitz = 1.0 + lam_max + (m - 1 if coupled else 0.0)
    step = 1.0 / lipschitz

    x = c.copy() if x0 is None else np.ascontiguousarray(np.asarray(x0, dtype=np.float64)[iu, ju])
    np.clip(x, -1.0, 0.0, out=x)
    d = x - c
    r = np.bincount(iu, d, minlength=m) + np.bincount(ju, d, minlength=m)
    y = x[code == 2] + 1.0
    f = 0.5 * float(d @ d) + 0.5 * w.lambda1 * float(x[code == 1] @ x[code == 1]) + 0.5 * w.lambda2 * float(y @ y)
    if coupled:
        f += 0.25 * float(r @ r)
    history = [f] if record_history else []
    r_new = np.empty(m)
    converged = f == 0.0
    it = 0
    while not converged and it < max_iter:
        it += 1
        f_new = impl.pg_step(x, c, code, m, w.lambda1, w.lambda2, r, r_new, step, int(coupled))
        assert f_new <= f + 1e-12 * max(1.0, abs(f)), "projected gradient objective increased"
        if record_history:
            history.append(f_new)
        decrease = f - f_new
        f = f_new
        r, r_new = r_new, r
        if f == 0.0 or decrease <= tol * max(abs(f), np.finfo(float).tiny):
            converged = True
    if not converged:
        warnings.warn(
            f"soft-constrained QP stopped after {it} iterations without reaching tol={tol:g}",
            ConvergenceWarning,
            stacklevel=2,
        )
    x[x == 0.0] = 0.0
    out = np.zeros((m, m))
    out[iu, ju] = x
    out += out.T
    return QPResult(LaplacianView(out), f, it, converged, relaxation, history)


def lift_constraints(ml_pairs: np.ndarray, cl_pairs: np.ndarray, p: Partition | np.ndarray) -> LiftedConstraints:
    """Map point-level constraints of one layer onto supernode pairs.

    Pairs whose endpoints already share a supernode are dropped (counted as
    satisfied must-links / violated cannot-links). A supernode pair that ends
    up in both sets is removed from both and reported in ``conflicts``.
    """
    labels = p.labels if isinstance(p, Partition) else np.asarray(p)
    ml_pairs = np.asarray(ml_pairs, dtype=np.int64).reshape(-1, 2)
    cl_pairs = np.asarray(cl_pairs, dtype=np.int64).reshape(-1, 2)

    span = int(labels.max()) + 1 if labels.size else 1

    def lift(pairs):
        a, b = labels[pairs[:, 0]], labels[pairs[:, 1]]
        same = a == b
        lo, hi = np.minimum(a, b)[~same], np.maximum(a, b)[~same]
        return np.unique(lo * span + hi), int(same.sum())

    mk, ml_same = lift(ml_pairs)
    ck, cl_same = lift(cl_pairs)
    both = np.intersect1d(mk, ck, assume_unique=True)
    if both.size:
        mk = mk[~np.isin(mk, both, assume_unique=True)]
        ck = ck[~np.isin(ck, both, assume_unique=True)]
        log.debug("dropped %d supernode pairs carrying both must-link and cannot-link", both.size)

    def unkey(k):
        return np.stack([k // span, k % span], axis=1).astype(np.int64).reshape(-1, 2)

    ml, cl, conflicts = unkey(mk), unkey(ck), unkey(both)
    return LiftedConstraints(ml, cl, ml_same, cl_same, conflicts)


def constraint_status(p: Partition | np.ndarray, ml_pairs: np.ndarray, cl_pairs: np.ndarray) -> float:
    """Fraction of a layer's constraints that the current partition satisfies.

    A must-link is satisfied when both points share a supernode, a
    cannot-link when they do not. An empty layer counts as fully satisfied.
    """
    labels = p.labels if isinstance(p, Partition) else np.asarray(p)
    ml_pairs = np.asarray(ml_pairs, dtype=np.int64).reshape(-1, 2)
    cl_pairs = np.asarray(cl_pairs, dtype=np.int64).reshape(-1, 2)
    total = ml_pairs.shape[0] + cl_pairs.shape[0]
    if total == 0:
        return 1.0
    ok = int(np.count_nonzero(labels[ml_pairs[:, 0]] == labels[ml_pairs[:, 1]]))
    ok += int(np.count_nonzero(labels[cl_pairs[:, 0]] != labels[cl_pairs[:, 1]]))
    return ok / total
