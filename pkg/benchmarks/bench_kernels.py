"""Compare the compiled and numpy kernel backends on the hot loops.

Usage:
    python benchmarks/bench_kernels.py [--sizes 200 500 1000] [--repeat 3] [--json out.json]

Each kernel runs on identical inputs under both backends; the table shows
the best wall time of ``--repeat`` runs and the speedup of the compiled
backend. Outputs are checked for agreement before timing is reported.
"""

from __future__ import annotations

import argparse
import json
import sys
import time

import numpy as np

from clues import kernels
from clues.linkage import LinkageMethod, working_matrix
from clues.synthetic import planted_hierarchy


def _best(fn, repeat):
    times = []
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def _inputs(n, seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, 8))
    D = np.sqrt(((X[:, None, :] - X[None, :, :]) ** 2).sum(-1))
    return D / D.max()


def bench_nn_chain(impl, D, method):
    def run():
        W = working_matrix(D)
        return impl.nn_chain(W, np.ones(D.shape[0]), method)
    return run


def bench_argmin_merge(impl, D, steps):
    def run():
        W = working_matrix(D)
        size = np.ones(D.shape[0])
        active = np.ones(D.shape[0], dtype=np.uint8)
        out = []
        for _ in range(steps):
            a, b, d = impl.argmin_pair(W, active)
            impl.merge_pair(W, size, active, a, b, LinkageMethod.AVERAGE.code)
            out.append((a, b, d))
        return out
    return run


def bench_pg_step(impl, D, iters, seed):
    m = D.shape[0]
    iu, ju = np.triu_indices(m, 1)
    c = np.ascontiguousarray(-D[iu, ju])
    rng = np.random.default_rng(seed)
    code = rng.choice(np.array([0, 1, 2], dtype=np.uint8), size=c.size, p=[0.98, 0.01, 0.01])

    def run():
        x = c.copy()
        r = np.zeros(m)
        r_new = np.empty(m)
        f = 0.0
        for _ in range(iters):
            f = impl.pg_step(x, c, code, m, 1.0, 1.0, r, r_new, 1.0 / (2.0 + m - 1), 1)
            r, r_new = r_new, r
        return f, x
    return run


def bench_greedy_matching(impl, n, seed):
    rng = np.random.default_rng(seed)
    iu, ju = np.triu_indices(n, 1)
    order = rng.permutation(iu.size)
    u = np.ascontiguousarray(iu[order])
    v = np.ascontiguousarray(ju[order])
    return lambda: impl.greedy_matching(u, v, n)


def _agree(a, b):
    if isinstance(a, tuple):
        return all(_agree(x, y) for x, y in zip(a, b))
    if isinstance(a, list):
        return a == b
    if isinstance(a, np.ndarray):
        return np.allclose(a, b, rtol=0, atol=1e-12)
    return abs(a - b) <= 1e-9 * max(1.0, abs(a))


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[200, 500, 1000],
                    help="problem sizes n (default: %(default)s)")
    ap.add_argument("--repeat", type=int, default=3, help="best-of repeats per timing (default: %(default)s)")
    ap.add_argument("--pg-iters", type=int, default=20,
                    help="projected-gradient steps per timing (default: %(default)s)")
    ap.add_argument("--seed", type=int, default=0, help="random seed for the inputs (default: %(default)s)")
    ap.add_argument("--json", help="also write the rows as JSON")
    args = ap.parse_args(argv)

    if "cython" not in kernels.available_backends():
        print("compiled kernels are not built; only the numpy backend is available", file=sys.stderr)
        return 1
    py, cy = kernels.get_backend("python"), kernels.get_backend("cython")

    rows = []
    for n in args.sizes:
        D = _inputs(n, args.seed)
        cases = {
            "nn_chain/average": lambda impl: bench_nn_chain(impl, D, LinkageMethod.AVERAGE.code),
            "nn_chain/ward": lambda impl: bench_nn_chain(impl, D, LinkageMethod.WARD.code),
            "argmin+merge x50": lambda impl: bench_argmin_merge(impl, D, 50),
            f"pg_step x{args.pg_iters}": lambda impl: bench_pg_step(impl, D, args.pg_iters, args.seed),
            "greedy_matching": lambda impl: bench_greedy_matching(impl, n, args.seed),
        }
        for name, make in cases.items():
            t_py, out_py = _best(make(py), args.repeat)
            t_cy, out_cy = _best(make(cy), args.repeat)
            rows.append({"kernel": name, "n": n, "python_s": t_py, "cython_s": t_cy,
                         "speedup": t_py / t_cy if t_cy > 0 else float("inf"),
                         "agree": bool(_agree(out_py, out_cy))})

    # end-to-end step I on a planted instance, both backends
    from clues.coarsening import CoarseningConfig, run_step1
    inst = planted_hierarchy(n=max(args.sizes[0], 128), noise=1.5, seed=args.seed)
    for method in ("bottom-up", "local-variation"):
        cfg = CoarseningConfig(method=method)
        t_py, r_py = _best(lambda: run_step1(inst.distances, inst.constraints, cfg, inst.points,
                                             backend="python"), 1)
        t_cy, r_cy = _best(lambda: run_step1(inst.distances, inst.constraints, cfg, inst.points,
                                             backend="cython"), 1)
        rows.append({"kernel": f"step1/{method}", "n": inst.points.n, "python_s": t_py, "cython_s": t_cy,
                     "speedup": t_py / t_cy if t_cy > 0 else float("inf"),
                     "agree": bool(np.array_equal(r_py.dendrogram.children, r_cy.dendrogram.children))})

    print(f"{'kernel':<22} {'n':>6} {'python s':>10} {'cython s':>10} {'speedup':>8}  agree")
    for r in rows:
        print(f"{r['kernel']:<22} {r['n']:>6} {r['python_s']:>10.4f} {r['cython_s']:>10.4f} "
              f"{r['speedup']:>7.1f}x  {'yes' if r['agree'] else 'NO'}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=2)
    return 0 if all(r["agree"] for r in rows) else 1


if __name__ == "__main__":
    sys.exit(main())
