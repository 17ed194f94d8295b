import numpy as np
import pytest

import clues.coarsening
import clues.constraints
from clues import kernels
from clues.model import normalize_distances

BACKENDS = kernels.available_backends()

# filled by test_acceptance.py, printed once at the end of the session
ACCEPTANCE_LINES: dict[int, str] = {}


@pytest.fixture(params=BACKENDS)
def backend(request):
    return request.param


def random_distances(rng: np.random.Generator, n: int, dim: int = 3):
    X = rng.normal(size=(n, dim))
    return normalize_distances(np.sqrt(((X[:, None, :] - X[None, :, :]) ** 2).sum(-1)))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def check_laplacian(L) -> None:
    """Feasibility of a Laplacian: symmetric, zero row sums, off-diagonals in [-1, 0]."""
    M = L.matrix
    off = L.offdiag
    assert np.abs(M - M.T).max(initial=0.0) <= 1e-9
    assert np.abs(M.sum(axis=1)).max(initial=0.0) <= 1e-9
    iu = np.triu_indices(L.n, 1)
    assert off[iu].min(initial=0.0) >= -1.0 and off[iu].max(initial=-1.0) <= 0.0


QP_SOLVES = {"count": 0}


@pytest.fixture(autouse=True)
def _laplacian_invariants_after_every_qp_solve(monkeypatch):
    """Wrap the QP solver everywhere it is used and check every result it returns."""
    original = clues.constraints.solve_soft_qp

    def checked(*args, **kwargs):
        res = original(*args, **kwargs)
        check_laplacian(res.laplacian)
        QP_SOLVES["count"] += 1
        return res

    monkeypatch.setattr(clues.constraints, "solve_soft_qp", checked)
    monkeypatch.setattr(clues.coarsening, "solve_soft_qp", checked)
    yield


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
        terminalreporter.write_line(f"QP solves checked for Laplacian feasibility this session: {QP_SOLVES['count']}")
