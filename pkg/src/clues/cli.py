"""Command-line entry point: ingest, cluster, cut, eval, run, compare, synth, replay.

Every command writes a ``*.manifest.json`` next to its outputs. The manifest
records the exact argument vector and the resolved configuration, and carries
no timestamps, so ``clues replay`` reproduces byte-identical files.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .coarsening import BOTTOM_UP, METHODS, CoarseningConfig, run_step1
from .constraints import BOX, LAPLACIAN, PenaltyWeights
from .cuts import extract_flat_hierarchy
from .errors import CluesError, ConvergenceError, ParseError, ValidationError
from .ingest import (CorpusConfig, build_vocabulary, cooccurrence_distance, load_corpus, load_distance_csv,
                     load_stopwords, save_distance_csv)
from .linkage import LinkageMethod
from .metrics import evaluate, normalize_times, report_csv_row, rows_to_csv
from .model import (ConstraintLayer, ConstraintProgram, DataPointSet, Dendrogram, FlatHierarchy, load_constraints,
                    save_constraints)

log = logging.getLogger("clues")


@dataclass
class RunManifest:
    command: str
    argv: list[str]
    inputs: dict[str, str] = field(default_factory=dict)
    outputs: dict[str, str] = field(default_factory=dict)
    coarsening: dict | None = None
    corpus: dict | None = None
    seed: int | None = None
    version: str = __version__

    def to_dict(self) -> dict:
        return {
            "tool": "clues",
            "version": self.version,
            "command": self.command,
            "argv": list(self.argv),
            "inputs": dict(self.inputs),
            "outputs": dict(self.outputs),
            "coarsening": self.coarsening,
            "corpus": self.corpus,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> RunManifest:
        try:
            return cls(d["command"], list(d["argv"]), dict(d.get("inputs", {})), dict(d.get("outputs", {})),
                       d.get("coarsening"), d.get("corpus"), d.get("seed"), d.get("version", "unknown"))
        except (KeyError, TypeError) as e:
            raise ParseError(f"malformed manifest: {e}") from e

    def write(self, path: Path) -> None:
        _write_json(path, self.to_dict())


def _write_json(path: Path, obj) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _write_text(path: Path, text: str) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(text, encoding="utf-8")


def _read_json(path: str | Path, what: str):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise ParseError(f"cannot read {what} {path}: {e}") from e
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(f"{path}:{e.lineno}: invalid JSON ({e.msg})") from e


def _outputs(prefix: str, **suffixes: str) -> dict[str, Path]:
    return {k: Path(prefix + s) for k, s in suffixes.items()}


def _coarsening_config(args) -> CoarseningConfig:
    return CoarseningConfig(
        method=getattr(args, "method", BOTTOM_UP),
        linkage=args.linkage,
        weights=PenaltyWeights(args.lambda1, args.lambda2),
        i_max=args.imax,
        satisfaction_threshold=args.threshold,
        relaxation=args.relaxation,
        qp_tol=args.qp_tol,
        qp_max_iter=args.qp_max_iter,
    )


def _corpus_config(args) -> CorpusConfig:
    stop = load_stopwords(args.stopwords) if args.stopwords else frozenset()
    return CorpusConfig(args.min_count, stop, args.window, args.max_vocab)


def _empty_like(cp: ConstraintProgram) -> ConstraintProgram:
    return ConstraintProgram(tuple(ConstraintLayer() for _ in cp.layers))


def _check_convergence(result, strict: bool) -> None:
    bad = sum(r.qp_unconverged for r in result.layers)
    if strict and bad:
        raise ConvergenceError(f"{bad} soft-constrained QP solve(s) stopped at max_iter")


def _dendrogram_json(dd: Dendrogram, labels) -> dict:
    return {**dd.to_dict(), "labels": list(labels)}


def _load_dendrogram(path) -> tuple[Dendrogram, DataPointSet]:
    obj = _read_json(path, "dendrogram")
    dd = Dendrogram.from_dict(obj)
    labels = obj.get("labels") or [str(i) for i in range(dd.n)]
    if len(labels) != dd.n:
        raise ValidationError(f"{path}: {len(labels)} labels for {dd.n} leaves")
    return dd, DataPointSet(tuple(labels))


def _hierarchy_json(fh: FlatHierarchy, cut_results) -> dict:
    return {**fh.to_dict(), "labels": list(fh.labels), "optimal_cuts": [r.to_dict() for r in cut_results]}


# ---------------------------------------------------------------- commands

def cmd_ingest(args) -> int:
    cfg = _corpus_config(args)
    corpus = load_corpus(args.corpus)
    vocab = build_vocabulary(corpus, cfg)
    D = cooccurrence_distance(corpus, vocab, cfg)
    out = Path(args.output)
    vocab_path = out.with_suffix(".vocab.txt")
    out.parent.mkdir(parents=True, exist_ok=True)
    save_distance_csv(out, vocab, D)
    _write_text(vocab_path, "\n".join(vocab.labels) + "\n")
    RunManifest("ingest", args.argv, {"corpus": args.corpus, "stopwords": args.stopwords or ""},
                {"distances": str(out), "vocabulary": str(vocab_path)}, corpus=cfg.to_dict(),
                seed=args.seed).write(out.with_suffix(".manifest.json"))
    log.info("vocabulary of %d tokens written to %s", vocab.n, out)
    return 0


def _cluster(args, points, D, cp):
    cfg = _coarsening_config(args)
    np.random.seed(args.seed)
    t0 = time.perf_counter()
    result = run_step1(D, cp, cfg, points)
    elapsed = time.perf_counter() - t0
    _check_convergence(result, args.strict)
    for w in result.warnings:
        log.warning(w)
    return cfg, result, elapsed


def cmd_cluster(args) -> int:
    points, D = load_distance_csv(args.distances)
    cp = load_constraints(args.constraints)
    cfg, result, elapsed = _cluster(args, points, D, cp)
    out = _outputs(args.output, dendrogram=".dendrogram.json", newick=".nwk", report=".step1.json",
                   timing=".cluster.timing.json")
    _write_json(out["dendrogram"], _dendrogram_json(result.dendrogram, points.labels))
    _write_text(out["newick"], result.dendrogram.to_newick(points.labels) + "\n")
    _write_json(out["report"], result.report())
    _write_json(out["timing"], {"step": "cluster", "seconds": elapsed})
    RunManifest("cluster", args.argv, {"distances": args.distances, "constraints": args.constraints},
                {k: str(v) for k, v in out.items()}, cfg.to_dict(), seed=args.seed
                ).write(Path(args.output + ".cluster.manifest.json"))
    return 0


def cmd_cut(args) -> int:
    dd, points = _load_dendrogram(args.dendrogram)
    cp = load_constraints(args.constraints)
    t0 = time.perf_counter()
    fh, cut_results = extract_flat_hierarchy(dd, cp, points)
    elapsed = time.perf_counter() - t0
    out = _outputs(args.output, hierarchy=".hierarchy.json", tree=".tree.txt", timing=".cut.timing.json")
    _write_json(out["hierarchy"], _hierarchy_json(fh, cut_results))
    _write_text(out["tree"], fh.render_text())
    _write_json(out["timing"], {"step": "cut", "seconds": elapsed})
    RunManifest("cut", args.argv, {"dendrogram": args.dendrogram, "constraints": args.constraints},
                {k: str(v) for k, v in out.items()}).write(Path(args.output + ".cut.manifest.json"))
    return 0


def _wall_time(paths) -> float | None:
    if not paths:
        return None
    return float(sum(float(_read_json(p, "timing sidecar").get("seconds", 0.0)) for p in paths))


def cmd_eval(args) -> int:
    dd, dd_points = _load_dendrogram(args.dendrogram)
    obj = _read_json(args.hierarchy, "flat hierarchy")
    fh = FlatHierarchy.from_dict(obj, obj.get("labels"))
    points, D = load_distance_csv(args.distances)
    cp = load_constraints(args.constraints)
    if dd_points.labels != points.labels or tuple(fh.labels) != points.labels:
        raise ValidationError("dendrogram, hierarchy and distance matrix disagree on the point labels")
    report = evaluate(dd, fh, D, cp, wall_time=_wall_time(args.timing))
    out = Path(args.output)
    _write_text(out, report.to_json())
    outputs = {"report": str(out)}
    if args.csv:
        row = report_csv_row(report, args.dataset or Path(args.distances).stem, args.method_name,
                             cp.total() > 0, points.n)
        normalize_times([row])
        _write_text(Path(args.csv), rows_to_csv([row]))
        outputs["csv"] = args.csv
    inputs = {"dendrogram": args.dendrogram, "hierarchy": args.hierarchy, "distances": args.distances,
              "constraints": args.constraints}
    RunManifest("eval", args.argv, inputs, outputs).write(out.with_suffix(".manifest.json"))
    return 0


def cmd_run(args) -> int:
    """cluster + cut + eval in one go, all outputs under one prefix."""
    points, D = load_distance_csv(args.distances)
    cp = load_constraints(args.constraints)
    cfg, result, t1 = _cluster(args, points, D, cp)
    t0 = time.perf_counter()
    fh, cut_results = extract_flat_hierarchy(result.dendrogram, cp, points)
    t2 = time.perf_counter() - t0
    report = evaluate(result.dendrogram, fh, D, cp, warnings=result.warnings)
    out = _outputs(args.output, dendrogram=".dendrogram.json", newick=".nwk", step1=".step1.json",
                   hierarchy=".hierarchy.json", tree=".tree.txt", report=".report.json", timing=".timing.json")
    _write_json(out["dendrogram"], _dendrogram_json(result.dendrogram, points.labels))
    _write_text(out["newick"], result.dendrogram.to_newick(points.labels) + "\n")
    _write_json(out["step1"], result.report())
    _write_json(out["hierarchy"], _hierarchy_json(fh, cut_results))
    _write_text(out["tree"], fh.render_text())
    _write_text(out["report"], report.to_json())
    _write_json(out["timing"], {"step": "run", "seconds": t1 + t2, "step1_seconds": t1, "step2_seconds": t2})
    RunManifest("run", args.argv, {"distances": args.distances, "constraints": args.constraints},
                {k: str(v) for k, v in out.items()}, cfg.to_dict(), seed=args.seed
                ).write(Path(args.output + ".run.manifest.json"))
    if not args.quiet_summary:
        print(f"dasgupta_cost={report.dasgupta_cost:.6g} violation_rate={report.violation_rate:.4f} "
              f"wall_time={t1 + t2:.3f}s")
    return 0


def _dataset_files(root: Path) -> list[Path]:
    files = [p for p in sorted(root.iterdir())
             if p.is_file() and p.suffix in (".csv", ".txt") and not p.name.endswith(".vocab.txt")]
    return files


def _compare_one(task) -> tuple[str, list[dict] | None, str | None]:
    """Worker: all four configurations on one dataset. Returns (name, rows, error)."""
    path, cp_path, cfg_dicts, corpus_dict = task
    name = Path(path).stem
    try:
        if path.endswith(".txt"):
            ccfg = CorpusConfig.from_dict(corpus_dict)
            corpus = load_corpus(path)
            points = build_vocabulary(corpus, ccfg)
            D = cooccurrence_distance(corpus, points, ccfg)
        else:
            points, D = load_distance_csv(path)
        own = Path(path).with_suffix(".constraints.json")
        cp = load_constraints(own if own.exists() else cp_path) if (own.exists() or cp_path) else ConstraintProgram()
        cp = cp.restricted_to(points.labels)
        rows = []
        for cfg_d in cfg_dicts:
            cfg = CoarseningConfig.from_dict(cfg_d)
            for constrained in (True, False):
                t0 = time.perf_counter()
                res = run_step1(D, cp if constrained else _empty_like(cp), cfg, points)
                fh, _ = extract_flat_hierarchy(res.dendrogram, cp, points)
                wall = time.perf_counter() - t0
                rep = evaluate(res.dendrogram, fh, D, cp, wall_time=wall)
                rows.append(report_csv_row(rep, name, cfg.method, constrained, points.n))
        return name, rows, None
    except CluesError as e:
        return name, None, str(e)


def cmd_compare(args) -> int:
    root = Path(args.dataset_dir)
    if not root.is_dir():
        raise ParseError(f"{root} is not a directory")
    if args.constraints:
        load_constraints(args.constraints)  # fail fast on a bad shared file
    files = _dataset_files(root)
    if not files:
        raise ValidationError(f"no .csv or .txt datasets in {root}")
    cfgs = []
    for m in METHODS:
        args.method = m
        cfgs.append(_coarsening_config(args).to_dict())
    corpus = _corpus_config(args).to_dict()
    tasks = [(str(p), args.constraints, cfgs, corpus) for p in files]
    threads = args.threads or int(os.environ.get("CLUES_THREADS", "1") or 1)
    if threads > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=min(threads, len(tasks))) as ex:
            results = list(ex.map(_compare_one, tasks))
    else:
        results = [_compare_one(t) for t in tasks]
    rows, failed = [], []
    for name, r, err in results:
        if err is not None:
            log.error("dataset %s failed: %s", name, err)
            failed.append(name)
        else:
            rows.extend(r)
    normalize_times(rows)
    if args.no_timing:
        for r in rows:
            r["wall_time"] = r["normalized_time"] = None
    out = Path(args.output)
    _write_text(out, rows_to_csv(rows))
    RunManifest("compare", args.argv, {"dataset_dir": str(root), "constraints": args.constraints or ""},
                {"csv": str(out)}, {"methods": cfgs}, corpus, args.seed).write(out.with_suffix(".manifest.json"))
    if failed:
        log.warning("%d of %d datasets failed: %s", len(failed), len(files), ", ".join(failed))
    return 0


def cmd_synth(args) -> int:
    from .synthetic import planted_hierarchy
    root = Path(args.output_dir)
    root.mkdir(parents=True, exist_ok=True)
    written = {}
    for k in range(args.count):
        inst = planted_hierarchy(n=args.n, noise=args.noise, constraint_fraction=args.fraction, seed=args.seed + k)
        stem = root / f"planted_{k:03d}"
        save_distance_csv(stem.with_suffix(".csv"), inst.points, inst.distances)
        save_constraints(inst.constraints, stem.with_suffix(".constraints.json"))
        written[stem.name] = str(stem.with_suffix(".csv"))
    RunManifest("synth", args.argv, {}, written, seed=args.seed).write(root / "synth.manifest.json")
    return 0


def cmd_replay(args) -> int:
    m = RunManifest.from_dict(_read_json(args.manifest, "manifest"))
    if m.version != __version__:
        log.warning("manifest written by clues %s, replaying with %s", m.version, __version__)
    if m.command == "replay":
        raise ValidationError("refusing to replay a replay")
    return main(m.argv)


# ---------------------------------------------------------------- parser

def _add_cluster_flags(p: argparse.ArgumentParser, with_method: bool = True) -> None:
    if with_method:
        p.add_argument("--method", choices=METHODS, default=BOTTOM_UP, help="coarsening engine (default: %(default)s)")
    p.add_argument("--linkage", choices=[m.value for m in LinkageMethod], default="average",
                   help="linkage used to recompute supernode distances (default: %(default)s)")
    p.add_argument("--lambda1", type=float, default=1.0, help="must-link penalty weight (default: %(default)s)")
    p.add_argument("--lambda2", type=float, default=1.0, help="cannot-link penalty weight (default: %(default)s)")
    p.add_argument("--imax", type=int, default=1_000_000, help="iteration cap per layer (default: %(default)s)")
    p.add_argument("--threshold", type=float, default=0.75,
                   help="satisfied fraction that ends a layer (default: %(default)s)")
    p.add_argument("--relaxation", choices=(LAPLACIAN, BOX), default=LAPLACIAN,
                   help="QP variant for local-variation (default: %(default)s)")
    p.add_argument("--qp-tol", type=float, default=1e-8, help="QP relative-decrease tolerance (default: %(default)s)")
    p.add_argument("--qp-max-iter", type=int, default=None, help="QP iteration cap (default: max(10 m^2, 100))")
    p.add_argument("--strict", action="store_true", help="exit with code 4 if any QP solve hits its iteration cap")


def _add_corpus_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--stopwords", help="stopword file, one token per line")
    p.add_argument("--min-count", type=int, default=1, help="drop tokens seen fewer times (default: %(default)s)")
    p.add_argument("--window", type=int, default=5, help="co-occurrence window in tokens (default: %(default)s)")
    p.add_argument("--max-vocab", type=int, default=1000, help="keep this many most frequent tokens (default: %(default)s)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="clues", description="Hierarchical flat clustering with layer-based "
                                     "must-link / cannot-link constraints.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    parser.add_argument("--seed", type=int, default=0,
                        help="random seed recorded in the manifest (clustering itself is deterministic)")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("ingest", help="corpus (one document per line) -> vocabulary + distance CSV")
    p.add_argument("corpus")
    p.add_argument("-o", "--output", required=True, help="distance CSV to write")
    _add_corpus_flags(p)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("cluster", help="Step I: constrained dendrogram (JSON + Newick)")
    p.add_argument("distances", help="distance CSV")
    p.add_argument("constraints", help="layered constraints JSON (may be empty)")
    p.add_argument("-o", "--output", required=True, help="output prefix")
    _add_cluster_flags(p)
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("cut", help="Step II: optimal layer cuts -> flat hierarchy JSON + text tree")
    p.add_argument("dendrogram", help="dendrogram JSON from `cluster`")
    p.add_argument("constraints")
    p.add_argument("-o", "--output", required=True, help="output prefix")
    p.set_defaults(func=cmd_cut)

    p = sub.add_parser("eval", help="Dasgupta cost and violation rate -> report JSON (and CSV)")
    p.add_argument("dendrogram")
    p.add_argument("hierarchy")
    p.add_argument("distances")
    p.add_argument("constraints")
    p.add_argument("-o", "--output", required=True, help="report JSON to write")
    p.add_argument("--csv", help="also write a one-row CSV")
    p.add_argument("--timing", action="append", default=[],
                   help="timing sidecar(s) whose seconds are summed into wall_time")
    p.add_argument("--dataset", help="dataset name for the CSV row (default: distance file stem)")
    p.add_argument("--method-name", default="", help="method name for the CSV row")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("run", help="cluster + cut + eval under one output prefix")
    p.add_argument("distances")
    p.add_argument("constraints")
    p.add_argument("-o", "--output", required=True, help="output prefix")
    p.add_argument("--quiet-summary", action="store_true", help="do not print the one-line summary")
    _add_cluster_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("compare", help="every dataset x {bottom-up, local-variation} x {constrained, unconstrained}")
    p.add_argument("dataset_dir", help="directory of distance CSVs and/or corpora (.txt)")
    p.add_argument("-c", "--constraints", help="constraints shared by all datasets "
                   "(a sibling <name>.constraints.json takes precedence)")
    p.add_argument("-o", "--output", required=True, help="comparison CSV to write")
    p.add_argument("--threads", type=int, default=0, help="parallel datasets (default: $CLUES_THREADS or 1)")
    p.add_argument("--no-timing", action="store_true", help="leave time columns empty (byte-stable output)")
    _add_cluster_flags(p, with_method=False)
    _add_corpus_flags(p)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("synth", help="write planted two-level datasets with constraints")
    p.add_argument("output_dir")
    p.add_argument("--count", type=int, default=5)
    p.add_argument("--n", type=int, default=128)
    p.add_argument("--noise", type=float, default=1.5)
    p.add_argument("--fraction", type=float, default=0.1, help="fraction of point pairs constrained")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("replay", help="re-run the command recorded in a manifest")
    p.add_argument("manifest")
    p.set_defaults(func=cmd_replay)
    return parser


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    args.argv = argv
    level = logging.WARNING - 10 * args.verbose
    logging.basicConfig(level=max(level, logging.DEBUG), format="clues: %(levelname)s: %(message)s")
    try:
        return args.func(args)
    except CluesError as e:
        print(f"clues: error: {e}", file=sys.stderr)
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
