"""Core data types and graph construction.

All types are frozen dataclasses; array fields are stored as read-only
copies so instances can be shared freely.
"""

from __future__ import annotations

import json
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DegenerateInputError, ParseError, ValidationError

SYMMETRY_TOL = 1e-9
_RANGE_TOL = 1e-12


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class DataPointSet:
    labels: tuple[str, ...]

    def __post_init__(self):
        labels = tuple(str(x) for x in self.labels)
        object.__setattr__(self, "labels", labels)
        if len(labels) < 2:
            raise ValidationError(f"need at least 2 data points, got {len(labels)}")
        if len(set(labels)) != len(labels):
            seen, dups = set(), []
            for x in labels:
                if x in seen:
                    dups.append(x)
                seen.add(x)
            raise ValidationError(f"duplicate labels: {sorted(set(dups))}")

    @property
    def n(self) -> int:
        return len(self.labels)

    def index(self) -> dict[str, int]:
        return {lab: i for i, lab in enumerate(self.labels)}


@dataclass(frozen=True)
class DistanceMatrix:
    """Dense symmetric dissimilarities in [0, 1] with a zero diagonal."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            raise ValidationError(f"distance matrix must be square, got shape {v.shape}")
        if v.shape[0] < 2:
            raise ValidationError("distance matrix needs at least 2 points")
        if not np.all(np.isfinite(v)):
            raise ValidationError("distance matrix has non-finite entries")
        if np.any(np.diag(v) != 0.0):
            raise ValidationError("distance matrix diagonal must be zero")
        if not np.array_equal(v, v.T):
            raise ValidationError("distance matrix must be exactly symmetric")
        if v.min() < -_RANGE_TOL or v.max() > 1.0 + _RANGE_TOL:
            raise ValidationError("distance entries must lie in [0, 1]; normalize first")
        object.__setattr__(self, "values", _frozen(np.clip(v, 0.0, 1.0)))

    @property
    def n(self) -> int:
        return self.values.shape[0]

    def condensed(self) -> np.ndarray:
        iu = np.triu_indices(self.n, 1)
        return self.values[iu]


@dataclass(frozen=True)
class LaplacianView:
    """Laplacian parametrized by its off-diagonal entries.

    ``offdiag`` is the full symmetric matrix of off-diagonal entries with a
    zero diagonal; the Laplacian diagonal is recovered as the negative row sum,
    so every row of :attr:`matrix` sums to zero by construction.
    """

    offdiag: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.offdiag, dtype=np.float64)
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise ValidationError(f"Laplacian must be square, got shape {w.shape}")
        if np.any(np.diag(w) != 0.0):
            raise ValidationError("offdiag storage must have a zero diagonal")
        if not np.array_equal(w, w.T):
            raise ValidationError("Laplacian must be symmetric")
        if w.size and (w.max() > _RANGE_TOL or w.min() < -1.0 - _RANGE_TOL):
            raise ValidationError("off-diagonal Laplacian entries must lie in [-1, 0]")
        object.__setattr__(self, "offdiag", _frozen(np.clip(w, -1.0, 0.0)))

    @property
    def n(self) -> int:
        return self.offdiag.shape[0]

    @property
    def diag(self) -> np.ndarray:
        return -self.offdiag.sum(axis=1)

    @property
    def matrix(self) -> np.ndarray:
        m = np.array(self.offdiag)
        m[np.diag_indices_from(m)] = self.diag
        return m

    def upper(self) -> np.ndarray:
        return self.offdiag[np.triu_indices(self.n, 1)]

    def to_distances(self) -> DistanceMatrix:
        d = -self.offdiag
        d[d == 0.0] = 0.0  # drop negative zeros
        return DistanceMatrix(d)


def _canon_pair(a: str, b: str) -> tuple[str, str]:
    return (a, b) if a <= b else (b, a)


@dataclass(frozen=True)
class ConstraintLayer:
    must_link: frozenset[tuple[str, str]] = frozenset()
    cannot_link: frozenset[tuple[str, str]] = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "must_link", frozenset(_canon_pair(*p) for p in self.must_link))
        object.__setattr__(self, "cannot_link", frozenset(_canon_pair(*p) for p in self.cannot_link))

    def __len__(self) -> int:
        return len(self.must_link) + len(self.cannot_link)

    def index_pairs(self, index: dict[str, int]) -> tuple[np.ndarray, np.ndarray]:
        """Return (must, cannot) as int arrays of shape (k, 2), rows sorted."""

        def conv(pairs):
            try:
                rows = sorted(tuple(sorted((index[a], index[b]))) for a, b in pairs)
            except KeyError as exc:
                raise ValidationError(f"constraint references unknown label {exc.args[0]!r}") from None
            return np.array(rows, dtype=np.int64).reshape(-1, 2)

        return conv(self.must_link), conv(self.cannot_link)

    def restricted_to(self, labels: Iterable[str]) -> ConstraintLayer:
        keep = set(labels)
        return ConstraintLayer(
            frozenset(p for p in self.must_link if p[0] in keep and p[1] in keep),
            frozenset(p for p in self.cannot_link if p[0] in keep and p[1] in keep),
        )


@dataclass(frozen=True)
class ConstraintProgram:
    """Layer-based constraints; ``layers[0]`` is the finest level."""

    layers: tuple[ConstraintLayer, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    def total(self) -> int:
        return sum(len(layer) for layer in self.layers)

    def restricted_to(self, labels: Iterable[str]) -> ConstraintProgram:
        labels = list(labels)
        return ConstraintProgram(tuple(layer.restricted_to(labels) for layer in self.layers))

    @classmethod
    def from_dict(cls, obj) -> ConstraintProgram:
        if not isinstance(obj, dict) or not isinstance(obj.get("layers", []), list):
            raise ParseError('constraint file must be an object with a "layers" list')
        layers = []
        for k, raw in enumerate(obj.get("layers", [])):
            if not isinstance(raw, dict):
                raise ParseError(f"layer {k + 1}: expected an object")
            parsed = {}
            for key in ("must_link", "cannot_link"):
                pairs = raw.get(key, [])
                if not isinstance(pairs, list):
                    raise ParseError(f"layer {k + 1}: {key} must be a list")
                out = []
                for p in pairs:
                    if not (isinstance(p, list) and len(p) == 2 and all(isinstance(x, str) for x in p)):
                        raise ParseError(f"layer {k + 1}: {key} entries must be pairs of labels, got {p!r}")
                    out.append((p[0], p[1]))
                parsed[key] = frozenset(out)
            layers.append(ConstraintLayer(parsed["must_link"], parsed["cannot_link"]))
        return cls(tuple(layers))

    def to_dict(self) -> dict:
        return {
            "layers": [
                {
                    "must_link": [list(p) for p in sorted(layer.must_link)],
                    "cannot_link": [list(p) for p in sorted(layer.cannot_link)],
                }
                for layer in self.layers
            ]
        }


def load_constraints(path: str | Path) -> ConstraintProgram:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"cannot read constraint file {path}: {exc}") from exc
    if not text.strip():
        return ConstraintProgram()
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}:{exc.lineno}: invalid JSON ({exc.msg})") from exc
    return ConstraintProgram.from_dict(obj)


def save_constraints(cp: ConstraintProgram, path: str | Path) -> None:
    Path(path).write_text(json.dumps(cp.to_dict(), indent=2) + "\n", encoding="utf-8")


@dataclass(frozen=True)
class Partition:
    """Assignment of each original point to a supernode id in ``0..k-1``."""

    labels: np.ndarray

    def __post_init__(self):
        lab = np.asarray(self.labels, dtype=np.int64)
        if lab.ndim != 1 or lab.size == 0:
            raise ValidationError("partition must be a non-empty 1-D assignment")
        if not np.array_equal(canonical_labels(lab), lab):
            raise ValidationError("supernode ids must be contiguous and ordered by first appearance")
        object.__setattr__(self, "labels", _frozen(lab))

    @classmethod
    def singletons(cls, n: int) -> Partition:
        return cls(np.arange(n))

    @classmethod
    def from_assignment(cls, assignment: Sequence[int] | np.ndarray) -> Partition:
        return cls(canonical_labels(assignment))

    @property
    def n_points(self) -> int:
        return self.labels.size

    @property
    def n_supernodes(self) -> int:
        return int(self.labels.max()) + 1


def canonical_labels(assignment) -> np.ndarray:
    """Relabel arbitrary ids to ``0..k-1`` in order of first appearance."""
    a = np.asarray(assignment)
    _, first, inv = np.unique(a, return_index=True, return_inverse=True)
    order = np.argsort(np.argsort(first, kind="stable"), kind="stable")
    return order[inv].astype(np.int64)


@dataclass(frozen=True)
class Dendrogram:
    """Binary merge tree in the usual linkage-matrix convention.

    Leaves are nodes ``0..n-1``; merge ``k`` joins ``children[k]`` and creates
    node ``n + k`` at ``heights[k]``.
    """

    n: int
    children: np.ndarray
    heights: np.ndarray
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        n = int(self.n)
        ch = np.asarray(self.children, dtype=np.int64).reshape(-1, 2)
        h = np.asarray(self.heights, dtype=np.float64).reshape(-1)
        if n < 2:
            raise ValidationError("dendrogram needs at least 2 leaves")
        if ch.shape[0] != n - 1 or h.shape[0] != n - 1:
            raise ValidationError(f"dendrogram over {n} leaves needs {n - 1} merges, got {ch.shape[0]}")
        if not np.all(np.isfinite(h)) or (h.size and h.min() < 0):
            raise ValidationError("merge heights must be finite and nonnegative")
        if np.any(np.diff(h) < 0):
            raise ValidationError("merge heights must be nondecreasing")
        new_ids = n + np.arange(n - 1)
        if np.any(ch >= new_ids[:, None]) or np.any(ch < 0):
            raise ValidationError("merge children must reference earlier nodes")
        counts = np.bincount(ch.ravel(), minlength=2 * n - 1)
        if np.any(counts[: 2 * n - 2] != 1) or counts[2 * n - 2] != 0:
            raise ValidationError("every non-root node must be a child exactly once")
        ch = np.sort(ch, axis=1)
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "children", _frozen(ch))
        object.__setattr__(self, "heights", _frozen(h))

    @property
    def root_height(self) -> float:
        return float(self.heights[-1])

    @property
    def merges(self) -> list[tuple[int, int, float, int]]:
        return [
            (int(a), int(b), float(h), self.n + k)
            for k, ((a, b), h) in enumerate(zip(self.children, self.heights))
        ]

    def sizes(self) -> np.ndarray:
        """Leaf counts for all ``2n-1`` nodes."""
        if "sizes" not in self._cache:
            s = np.ones(2 * self.n - 1, dtype=np.int64)
            for k, (a, b) in enumerate(self.children):
                s[self.n + k] = s[a] + s[b]
            s.setflags(write=False)
            self._cache["sizes"] = s
        return self._cache["sizes"]

    def lca_matrix(self) -> np.ndarray:
        """Merge index of the lowest common ancestor for every leaf pair (-1 on the diagonal).

        One upward pass over the merge sequence, carrying member lists per
        live cluster; every leaf pair is written exactly once.
        """
        if "lca" not in self._cache:
            n = self.n
            lca = np.full((n, n), -1, dtype=np.int64)
            members: dict[int, np.ndarray] = {i: np.array([i]) for i in range(n)}
            for k, (a, b) in enumerate(self.children):
                ma, mb = members.pop(int(a)), members.pop(int(b))
                lca[ma[:, None], mb] = k
                lca[mb[:, None], ma] = k
                members[n + k] = np.concatenate([ma, mb])
            lca.setflags(write=False)
            self._cache["lca"] = lca
        return self._cache["lca"]

    def lca_heights(self, pairs: np.ndarray) -> np.ndarray:
        pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
        if pairs.shape[0] == 0:
            return np.zeros(0)
        return self.heights[self.lca_matrix()[pairs[:, 0], pairs[:, 1]]]

    def cut(self, height: float) -> np.ndarray:
        """Cluster assignment after removing every merge above ``height``."""
        n = self.n
        parent = np.arange(2 * n - 1)
        for k, (a, b) in enumerate(self.children):
            if self.heights[k] > height:
                break
            parent[a] = n + k
            parent[b] = n + k
        # resolve roots; parents always have larger ids, so one reverse sweep suffices
        root = parent.copy()
        for v in range(2 * n - 2, -1, -1):
            root[v] = root[parent[v]] if parent[v] != v else v
        return canonical_labels(root[:n])

    def to_dict(self) -> dict:
        return {"n": self.n, "merges": [[a, b, h, new] for a, b, h, new in self.merges]}

    @classmethod
    def from_dict(cls, obj) -> Dendrogram:
        try:
            n = int(obj["n"])
            merges = obj["merges"]
            children = [(int(m[0]), int(m[1])) for m in merges]
            heights = [float(m[2]) for m in merges]
            ids = [int(m[3]) for m in merges]
        except (KeyError, TypeError, ValueError, IndexError) as exc:
            raise ParseError(f"malformed dendrogram JSON: {exc}") from exc
        if ids != list(range(n, n + len(merges))):
            raise ValidationError("merge new_id values must be n, n+1, ... in merge order")
        return cls(n, np.array(children, dtype=np.int64).reshape(-1, 2), np.array(heights))

    def to_newick(self, labels: Sequence[str] | None = None) -> str:
        """Newick string with branch lengths equal to height differences."""
        n = self.n
        labels = [str(i) for i in range(n)] if labels is None else list(labels)
        node_h = np.concatenate([np.zeros(n), self.heights])
        text: dict[int, str] = {}
        for i in range(n):
            text[i] = _newick_label(labels[i])
        for k, (a, b) in enumerate(self.children):
            v = n + k
            parts = []
            for c in (int(a), int(b)):
                parts.append(f"{text.pop(c)}:{float(node_h[v] - node_h[c])!r}")
            text[v] = "(" + ",".join(parts) + ")"
        return text[2 * n - 2] + ";"


def _newick_label(s: str) -> str:
    if s and not any(ch in s for ch in " \t\n()[]':;,"):
        return s
    return "'" + s.replace("'", "''") + "'"


@dataclass(frozen=True)
class FlatHierarchy:
    """Nested partitions, one per constraint layer (index 0 = finest)."""

    labels: tuple[str, ...]
    assignments: tuple[np.ndarray, ...]
    cuts: tuple[float, ...]

    def __post_init__(self):
        assignments = tuple(_frozen(canonical_labels(a)) for a in self.assignments)
        object.__setattr__(self, "labels", tuple(self.labels))
        object.__setattr__(self, "assignments", assignments)
        object.__setattr__(self, "cuts", tuple(float(c) for c in self.cuts))
        n = len(self.labels)
        if len(assignments) != len(self.cuts):
            raise ValidationError("one cut height per layer is required")
        for a in assignments:
            if a.shape != (n,):
                raise ValidationError("every layer must assign every point")
        if any(c2 < c1 for c1, c2 in zip(self.cuts, self.cuts[1:])):
            raise ValidationError("cut heights must be nondecreasing across layers")
        for j in range(len(assignments) - 1):
            if not is_refinement(assignments[j], assignments[j + 1]):
                raise ValidationError(f"layer {j + 2} is not a union of layer {j + 1} clusters")

    @property
    def n_layers(self) -> int:
        return len(self.assignments)

    def clusters(self, j: int) -> list[tuple[str, ...]]:
        """Clusters of layer ``j`` (0-based), each ordered by point index."""
        a = self.assignments[j]
        out: list[list[str]] = [[] for _ in range(int(a.max()) + 1)]
        for i, c in enumerate(a):
            out[c].append(self.labels[i])
        return [tuple(c) for c in out]

    def to_dict(self) -> dict:
        return {
            "layers": [
                {"cut": self.cuts[j], "clusters": [list(c) for c in self.clusters(j)]}
                for j in range(self.n_layers)
            ]
        }

    @classmethod
    def from_dict(cls, obj, labels: Sequence[str] | None = None) -> FlatHierarchy:
        try:
            layers = obj["layers"]
            if labels is None:
                if not layers:
                    raise ValueError("cannot infer labels from an empty hierarchy")
                labels = [lab for c in layers[0]["clusters"] for lab in c]
            index = {lab: i for i, lab in enumerate(labels)}
            assignments, cuts = [], []
            for layer in layers:
                a = np.full(len(labels), -1, dtype=np.int64)
                for ci, c in enumerate(layer["clusters"]):
                    for lab in c:
                        a[index[lab]] = ci
                if np.any(a < 0):
                    raise ValueError("a layer does not cover every point")
                assignments.append(a)
                cuts.append(float(layer["cut"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"malformed flat hierarchy JSON: {exc}") from exc
        return cls(tuple(labels), tuple(assignments), tuple(cuts))

    def render_text(self, root: str = "root") -> str:
        """Indented tree, coarsest layer first, point labels listed at the finest layer."""
        lines = [root]
        if self.n_layers == 0:
            return root + "\n"

        def walk(j: int, idx: np.ndarray, depth: int, prefix: str):
            a = self.assignments[j]
            for k, c in enumerate(_ordered_unique(a[idx])):
                sub = idx[a[idx] == c]
                name = f"{prefix}{k + 1}"
                pad = "  " * depth
                if j == 0:
                    words = ", ".join(self.labels[i] for i in sub)
                    lines.append(f"{pad}{name} {{{words}}}")
                else:
                    lines.append(f"{pad}{name} ({sub.size} points)")
                    walk(j - 1, sub, depth + 1, name + ".")

        walk(self.n_layers - 1, np.arange(len(self.labels)), 1, "")
        return "\n".join(lines) + "\n"


def _ordered_unique(a: np.ndarray) -> list[int]:
    _, first = np.unique(a, return_index=True)
    return [int(a[i]) for i in sorted(first)]


def is_refinement(fine: np.ndarray, coarse: np.ndarray) -> bool:
    """True if every cluster of ``fine`` lies inside one cluster of ``coarse``."""
    fine, coarse = np.asarray(fine), np.asarray(coarse)
    target = np.full(int(fine.max()) + 1, -1, dtype=np.int64)
    target[fine] = coarse
    return bool(np.array_equal(target[fine], coarse))


def normalize_distances(raw) -> DistanceMatrix:
    """Scale a symmetric nonnegative dissimilarity matrix into [0, 1].

    Entries are divided by the largest off-diagonal value. Raises
    ValidationError for asymmetric/invalid input and DegenerateInputError for
    an all-zero matrix.
    """
    a = np.array(raw, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValidationError(f"distance matrix must be square, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValidationError("distance matrix has non-finite entries")
    diff = np.abs(a - a.T)
    if diff.size and diff.max() > SYMMETRY_TOL:
        i, j = np.unravel_index(np.argmax(diff), diff.shape)
        raise ValidationError(f"distance matrix is not symmetric at ({i}, {j}): {a[i, j]!r} vs {a[j, i]!r}")
    if np.any(np.diag(a) != 0.0):
        raise ValidationError("distance matrix diagonal must be zero")
    if a.min() < 0:
        raise ValidationError("distances must be nonnegative")
    a = 0.5 * (a + a.T)
    top = a.max()
    if top <= 0:
        raise DegenerateInputError("all distances are zero")
    if top != 1.0:
        a = a / top
    return DistanceMatrix(a)


def laplacian_from_distances(D: DistanceMatrix) -> LaplacianView:
    """Laplacian with ``L_ij = -d_ij`` off the diagonal and zero row sums."""
    return LaplacianView(-D.values)


def validate_constraints(cp: ConstraintProgram, points: DataPointSet) -> list[str]:
    known = set(points.labels)
    problems = []
    for j, layer in enumerate(cp.layers, start=1):
        for kind, pairs in (("must-link", layer.must_link), ("cannot-link", layer.cannot_link)):
            for a, b in sorted(pairs):
                for lab in (a, b):
                    if lab not in known:
                        problems.append(f"layer {j}: {kind} ({a}, {b}) references unknown label {lab!r}")
                if a == b:
                    problems.append(f"layer {j}: {kind} ({a}, {b}) pairs a point with itself")
        for a, b in sorted(layer.must_link & layer.cannot_link):
            problems.append(f"layer {j}: pair ({a}, {b}) is both must-link and cannot-link")
    return problems
