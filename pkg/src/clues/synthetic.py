"""Planted two-level hierarchies with ground-truth-consistent constraints."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import ConstraintLayer, ConstraintProgram, DataPointSet, DistanceMatrix, normalize_distances


@dataclass(frozen=True)
class PlantedInstance:
    points: DataPointSet
    distances: DistanceMatrix
    constraints: ConstraintProgram
    sub: np.ndarray
    top: np.ndarray
    features: np.ndarray


def planted_hierarchy(n: int = 128, n_top: int = 3, n_sub: int = 3, dim: int = 8, noise: float = 0.3,
                      top_spread: float = 4.0, sub_spread: float = 1.5, constraint_fraction: float = 0.1,
                      seed: int = 0) -> PlantedInstance:
    """Gaussian blobs nested two levels deep.

    Top-level centres are drawn with scale ``top_spread``, sub-cluster centres
    around them with ``sub_spread``, and points around those with ``noise``.
    A ``constraint_fraction`` share of all point pairs is sampled once; in
    layer 1 a pair is a must-link when it shares a sub-cluster, in layer 2
    when it shares a top cluster, and a cannot-link otherwise.
    """
    rng = np.random.default_rng(seed)
    k = n_top * n_sub
    sub = np.concatenate([np.full(len(c), i) for i, c in enumerate(np.array_split(np.arange(n), k))])
    top = sub // n_sub
    top_c = rng.normal(scale=top_spread, size=(n_top, dim))
    sub_c = top_c[np.arange(k) // n_sub] + rng.normal(scale=sub_spread, size=(k, dim))
    X = sub_c[sub] + rng.normal(scale=noise, size=(n, dim))
    diff = X[:, None, :] - X[None, :, :]
    D = normalize_distances(np.sqrt(np.einsum("ijk,ijk->ij", diff, diff)))

    iu, ju = np.triu_indices(n, 1)
    m = int(round(constraint_fraction * iu.size))
    pick = np.sort(rng.choice(iu.size, size=m, replace=False))
    a, b = iu[pick], ju[pick]
    labels = tuple(f"p{i:0{len(str(n - 1))}d}" for i in range(n))

    def layer(groups):
        same = groups[a] == groups[b]
        ml = frozenset((labels[x], labels[y]) for x, y in zip(a[same], b[same]))
        cl = frozenset((labels[x], labels[y]) for x, y in zip(a[~same], b[~same]))
        return ConstraintLayer(ml, cl)

    cp = ConstraintProgram((layer(sub), layer(top)))
    return PlantedInstance(DataPointSet(labels), D, cp, sub, top, X)
