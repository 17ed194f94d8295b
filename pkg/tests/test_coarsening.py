import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from clues.coarsening import (BOTTOM_UP, LOCAL_VARIATION, CoarseningConfig, edge_costs, local_variation_pass,
                              merge_step_constrained, run_step1)
from clues.constraints import BOX, LAPLACIAN, PenaltyWeights
from clues.errors import ValidationError
from clues.linkage import nn_chain_linkage
from clues.model import ConstraintLayer, ConstraintProgram, DataPointSet, DistanceMatrix, LaplacianView, Partition
from clues.synthetic import planted_hierarchy

from conftest import check_laplacian, random_distances
from oracles import all_matchings, is_maximal_matching

ABCD = DataPointSet(("a", "b", "c", "d"))


def _pairs(*p):
    return np.array(p, dtype=np.int64).reshape(-1, 2)


def _layer(ml=(), cl=()):
    return ConstraintLayer(frozenset(ml), frozenset(cl))


def _planted_four():
    # two planted pairs {a,b}, {c,d}; the cross pair (a,c) is the closest pair overall
    D = np.array([
        [0.0, 0.5, 0.4, 0.8],
        [0.5, 0.0, 0.9, 1.0],
        [0.4, 0.9, 0.0, 0.6],
        [0.8, 1.0, 0.6, 0.0],
    ])
    return DistanceMatrix(D)


# ------------------------------------------------------------- config

def test_config_validation():
    with pytest.raises(ValidationError):
        CoarseningConfig(i_max=0)
    with pytest.raises(ValidationError):
        CoarseningConfig(satisfaction_threshold=0.0)
    with pytest.raises(ValidationError):
        CoarseningConfig(satisfaction_threshold=1.5)
    with pytest.raises(ValidationError):
        CoarseningConfig(method="top-down")
    with pytest.raises(ValueError):
        CoarseningConfig(linkage="centroid")


def test_config_round_trip():
    cfg = CoarseningConfig(method=LOCAL_VARIATION, linkage="ward", weights=PenaltyWeights(0.5, 4.0), i_max=7,
                           satisfaction_threshold=0.9, relaxation=BOX, qp_tol=1e-6, qp_max_iter=50)
    assert CoarseningConfig.from_dict(cfg.to_dict()) == cfg


# ------------------------------------------------------------- single constrained merge

def test_merge_step_without_constraints_is_greedy_step(backend, rng):
    D = random_distances(rng, 7)
    out, p, rec = merge_step_constrained(D, Partition.singletons(7), _pairs(), _pairs(), PenaltyWeights(),
                                         backend=backend)
    first = nn_chain_linkage(D, "average", backend=backend)
    assert rec.height == first.heights[0]
    assert {rec.left, rec.right} == set(first.children[0].tolist())
    assert out.shape == (6, 6) and p.n_supernodes == 6


def test_merge_step_must_link_pulls_pair_first():
    # d(a,b)=0.6 and every other distance 0.4
    D = np.full((4, 4), 0.4)
    D[0, 1] = D[1, 0] = 0.6
    np.fill_diagonal(D, 0.0)
    _, p, rec = merge_step_constrained(DistanceMatrix(D), Partition.singletons(4), _pairs((0, 1)), _pairs(),
                                       PenaltyWeights(1.0, 1.0))
    assert (rec.left, rec.right) == (0, 1)
    assert abs(rec.distance - 0.3) < 1e-12
    assert p.labels.tolist() == [0, 0, 1, 2]


def test_merge_step_cannot_link_pushes_pair_apart():
    # d(a,b)=0.2, d(a,c)=0.5, d(b,c)=0.9
    D = DistanceMatrix(np.array([[0, 0.2, 0.5], [0.2, 0, 0.9], [0.5, 0.9, 0]]))
    out, _, rec = merge_step_constrained(D, Partition.singletons(3), _pairs(), _pairs((0, 1)),
                                         PenaltyWeights(1.0, 1.0))
    assert (rec.left, rec.right) == (0, 2)
    assert abs(rec.distance - 0.5) < 1e-12
    # average of the adjusted d(a,b)=0.6 and d(c,b)=0.9
    assert abs(out[0, 1] - 0.75) < 1e-12


def test_merge_step_partition_mismatch():
    with pytest.raises(ValidationError):
        merge_step_constrained(np.zeros((3, 3)), Partition.singletons(4), _pairs(), _pairs(), PenaltyWeights())


# ------------------------------------------------------------- local variation

def test_local_variation_two_nodes():
    res = local_variation_pass(LaplacianView(np.array([[0, -0.5], [-0.5, 0]])))
    assert res.mapping.tolist() == [0, 0]
    assert res.laplacian.n == 1


def test_local_variation_single_node_is_error():
    with pytest.raises(ValidationError):
        local_variation_pass(LaplacianView(np.zeros((1, 1))))


@pytest.mark.parametrize("N", [5, 6, 9, 16])
def test_local_variation_halves_at_most(N, rng, backend):
    W = rng.uniform(0.1, 1.0, size=(N, N))
    W = np.triu(W, 1)
    W = W + W.T
    res = local_variation_pass(LaplacianView(-W), backend=backend)
    assert res.laplacian.n >= int(np.ceil(N / 2))
    assert res.laplacian.n == N - res.pairs.shape[0]
    check_laplacian(res.laplacian)


def test_local_variation_path_graph_matches_enumeration():
    W = np.zeros((4, 4))
    edges = [(0, 1), (1, 2), (2, 3)]
    for a, b in edges:
        W[a, b] = W[b, a] = 1.0
    res = local_variation_pass(LaplacianView(-W))
    cost = edge_costs(W)
    maximal = [m for m in all_matchings(edges) if is_maximal_matching(m, edges)]
    biggest = max(len(m) for m in maximal)
    best = min((m for m in maximal if len(m) == biggest), key=lambda m: sum(cost[a, b] for a, b in m))
    assert {tuple(p) for p in res.pairs.tolist()} == set(best)


def test_local_variation_matching_is_maximal(rng):
    N = 12
    W = (rng.uniform(size=(N, N)) < 0.3) * rng.uniform(0.1, 1, size=(N, N))
    W = np.triu(W, 1)
    W = W + W.T
    res = local_variation_pass(LaplacianView(-W))
    edges = [tuple(e) for e in np.argwhere(np.triu(W, 1) > 0).tolist()]
    chosen = [tuple(p) for p in res.pairs.tolist()]
    assert is_maximal_matching(chosen, edges)
    assert len({v for e in chosen for v in e}) == 2 * len(chosen)


def test_edge_costs_symmetric_nonnegative(rng):
    W = rng.uniform(size=(8, 8))
    W = np.triu(W, 1)
    W = W + W.T
    C = edge_costs(W)
    assert np.allclose(C, C.T) and C.min() >= 0


# ------------------------------------------------------------- step I driver

@pytest.mark.parametrize("method", ["single", "average", "complete", "ward"])
def test_no_constraints_equals_unconstrained_linkage(method, backend, rng):
    D = random_distances(rng, 15)
    cfg = CoarseningConfig(method=BOTTOM_UP, linkage=method)
    res = run_step1(D, ConstraintProgram((_layer(),)), cfg, backend=backend)
    ref = nn_chain_linkage(D, method, backend=backend)
    assert np.array_equal(res.dendrogram.children, ref.children)
    assert np.array_equal(res.dendrogram.heights, ref.heights)


def test_planted_four_point_hand_trace(backend):
    """Hand trace (lambda1 = lambda2 = 1, average linkage, threshold 0.75).

    Entry update: d(a,b) 0.5 -> 0.25, d(c,d) 0.6 -> 0.3, CL d(a,c) 0.4 -> 0.7.
    Status 1/3, merge (a,b) at 0.25; lifted CL d(ab,c) = (0.7+0.9)/2 = 0.8 -> 0.9,
    ML d(c,d) 0.3 -> 0.15. Status 2/3, merge (c,d) at max(0.15, 0.25); the
    lifted CL now sits on d(ab,cd) = (0.9 + 0.9) / 2 = 0.9 and moves to 0.95.
    Status 1.0 ends the layer and the root joins at 0.95.
    """
    cp = ConstraintProgram((_layer(ml=[("a", "b"), ("c", "d")], cl=[("a", "c")]),))
    res = run_step1(_planted_four(), cp, CoarseningConfig(), ABCD, backend=backend)
    dd = res.dendrogram
    assert res.layers[0].status_start == pytest.approx(1 / 3)
    assert res.layers[0].status_end == 1.0
    assert res.layers[0].iterations == 2
    assert dd.children.tolist() == [[0, 1], [2, 3], [4, 5]]
    assert np.allclose(dd.heights, [0.25, 0.25, 0.95], rtol=0, atol=1e-12)


def test_contradictory_constraints_still_complete(caplog):
    cp = ConstraintProgram((_layer(ml=[("a", "b"), ("c", "d")], cl=[("a", "b"), ("a", "c")]),))
    with caplog.at_level(logging.DEBUG):
        for method in (BOTTOM_UP, LOCAL_VARIATION):
            res = run_step1(_planted_four(), cp, CoarseningConfig(method=method), ABCD)
            assert res.dendrogram.children.shape == (3, 2)
            assert any("both must-link and cannot-link" in w for w in res.warnings)
    assert any("both" in r.getMessage() for r in caplog.records if r.levelno >= logging.WARNING)


def test_conflict_from_lifting_is_reported():
    # layer 2 places ML(a,d) and CL(b,c) on the same supernode pair {ab},{cd}
    cp = ConstraintProgram((_layer(ml=[("a", "b"), ("c", "d")], cl=[("a", "c")]),
                            _layer(ml=[("a", "d")], cl=[("b", "c")])))
    res = run_step1(_planted_four(), cp, CoarseningConfig(), ABCD)
    assert res.layers[1].conflicts == 1
    assert any("conflicting" in w for w in res.warnings)


def test_unknown_label_rejected():
    cp = ConstraintProgram((_layer(ml=[("a", "zzz")]),))
    with pytest.raises(ValidationError, match="zzz"):
        run_step1(_planted_four(), cp, CoarseningConfig(), ABCD)


def test_i_max_exhaustion_is_reported():
    cp = ConstraintProgram((_layer(ml=[("a", "b"), ("c", "d"), ("a", "d")]),))
    res = run_step1(_planted_four(), cp, CoarseningConfig(i_max=1), ABCD)
    assert res.layers[0].exhausted and res.layers[0].iterations == 1
    assert res.dendrogram.children.shape == (3, 2)


@pytest.mark.parametrize("relaxation", [LAPLACIAN, BOX])
def test_local_variation_runs_and_reports(relaxation, backend):
    inst = planted_hierarchy(n=40, noise=1.5, seed=3)
    res = run_step1(inst.distances, inst.constraints,
                    CoarseningConfig(method=LOCAL_VARIATION, relaxation=relaxation), inst.points, backend=backend)
    assert res.dendrogram.children.shape == (39, 2)
    assert res.relaxation == relaxation
    assert sum(r.qp_solves for r in res.layers) >= 1
    assert np.all(np.diff(res.dendrogram.heights) >= 0)


def test_backends_give_identical_dendrograms():
    from clues import kernels
    if len(kernels.available_backends()) < 2:
        pytest.skip("compiled kernels not built")
    inst = planted_hierarchy(n=48, noise=1.5, seed=1)
    cfg = CoarseningConfig()
    a = run_step1(inst.distances, inst.constraints, cfg, inst.points, backend="python").dendrogram
    b = run_step1(inst.distances, inst.constraints, cfg, inst.points, backend="cython").dendrogram
    assert np.array_equal(a.children, b.children) and np.array_equal(a.heights, b.heights)


@settings(max_examples=25, deadline=None)
@given(st.integers(4, 30), st.sampled_from([BOTTOM_UP, LOCAL_VARIATION]), st.integers(0, 2**31 - 1))
def test_property_step1_always_complete_and_monotone(n, method, seed):
    rng = np.random.default_rng(seed)
    D = random_distances(rng, n)
    pts = DataPointSet(tuple(f"x{i}" for i in range(n)))
    layers = []
    for _ in range(2):
        pairs = [tuple(sorted(rng.choice(n, 2, replace=False).tolist())) for _ in range(n)]
        ml = {(f"x{a}", f"x{b}") for a, b in pairs[: n // 2]}
        cl = {(f"x{a}", f"x{b}") for a, b in pairs[n // 2:]} - ml
        layers.append(_layer(ml, cl))
    res = run_step1(D, ConstraintProgram(tuple(layers)), CoarseningConfig(method=method), pts)
    assert res.dendrogram.children.shape == (n - 1, 2)
    assert np.all(np.diff(res.dendrogram.heights) >= 0)
