"""Pure-Python/numpy kernels. Same API and results as the compiled ``_kernels``.

Working matrices are full square float64 arrays with ``+inf`` on the diagonal
and on every row/column of an inactive cluster slot. Merging slots ``i < j``
keeps the result in slot ``i``.
"""

import numpy as np

SINGLE, COMPLETE, AVERAGE, WEIGHTED, WARD = range(5)


def _lance_williams(method, d_ki, d_kj, d_ij, s_i, s_j, s_k):
    if method == SINGLE:
        return np.minimum(d_ki, d_kj)
    if method == COMPLETE:
        return np.maximum(d_ki, d_kj)
    if method == AVERAGE:
        return (s_i * d_ki + s_j * d_kj) / (s_i + s_j)
    if method == WEIGHTED:
        return 0.5 * (d_ki + d_kj)
    if method == WARD:
        t = ((s_i + s_k) * (d_ki * d_ki) + (s_j + s_k) * (d_kj * d_kj) - s_k * (d_ij * d_ij)) / (s_i + s_j + s_k)
        return np.sqrt(np.maximum(t, 0.0))
    raise ValueError(f"unknown linkage code {method}")


def merge_pair(D, size, active, i, j, method):
    """Merge slot ``j`` into slot ``i`` (``i < j``) and refresh row ``i``."""
    ks = np.flatnonzero(active)
    ks = ks[(ks != i) & (ks != j)]
    if ks.size:
        new = _lance_williams(method, D[ks, i], D[ks, j], D[i, j], size[i], size[j], size[ks])
        D[i, ks] = new
        D[ks, i] = new
    D[j, :] = np.inf
    D[:, j] = np.inf
    active[j] = 0
    size[i] += size[j]


def argmin_pair(D, active):
    """Smallest entry over active slots; ties go to the lexicographically smallest (i, j)."""
    flat = int(np.argmin(D))
    i, j = divmod(flat, D.shape[1])
    return i, j, float(D[i, j])


def nn_chain(D, size, method):
    """Nearest-neighbour-chain agglomeration; consumes ``D`` in place.

    Returns ``(pairs, heights)`` in discovery order, where each pair is the
    (smaller, larger) slot of the two merged clusters.
    """
    n = D.shape[0]
    active = np.ones(n, dtype=np.uint8)
    pairs = np.empty((max(n - 1, 0), 2), dtype=np.int64)
    heights = np.empty(max(n - 1, 0), dtype=np.float64)
    chain = []
    for step in range(n - 1):
        if not chain:
            chain.append(int(np.flatnonzero(active)[0]))
        while True:
            x = chain[-1]
            row = D[x]
            y = int(np.argmin(row))
            best = row[y]
            if len(chain) > 1 and row[chain[-2]] <= best:
                y = chain[-2]
                best = row[y]
                break
            chain.append(y)
        chain.pop()
        chain.pop()
        a, b = (x, y) if x < y else (y, x)
        pairs[step] = (a, b)
        heights[step] = best
        merge_pair(D, size, active, a, b, method)
    return pairs, heights


def greedy_matching(u, v, n):
    """Walk edges in the given order, keeping each edge whose endpoints are both free."""
    taken = np.zeros(n, dtype=np.uint8)
    keep = np.zeros(len(u), dtype=np.uint8)
    free = n
    for e in range(len(u)):
        a, b = u[e], v[e]
        if not taken[a] and not taken[b]:
            taken[a] = taken[b] = 1
            keep[e] = 1
            free -= 2
            if free < 2:
                break
    return keep


def pg_step(x, c, code, m, lam1, lam2, r, r_new, step, coupled):
    """One projected-gradient step of the soft-constrained QP, in place on ``x``.

    ``x`` and ``c`` hold the strict upper triangle row by row; ``code`` marks
    must-link (1) and cannot-link (2) entries; ``r`` holds the row sums of
    ``x - c`` before the step. Writes the new row sums into ``r_new`` and
    returns the objective at the new iterate.
    """
    iu, ju = np.triu_indices(m, 1)
    ml, cl = code == 1, code == 2
    g = x - c
    g[ml] += lam1 * x[ml]
    g[cl] += lam2 * (x[cl] + 1.0)
    if coupled:
        g += 0.5 * (r[iu] + r[ju])
    np.clip(x - step * g, -1.0, 0.0, out=x)
    d = x - c
    f = 0.5 * float(d @ d)
    f += 0.5 * lam1 * float(x[ml] @ x[ml])
    y = x[cl] + 1.0
    f += 0.5 * lam2 * float(y @ y)
    r_new[:] = np.bincount(iu, d, minlength=m) + np.bincount(ju, d, minlength=m)
    if coupled:
        f += 0.25 * float(r_new @ r_new)
    return f
