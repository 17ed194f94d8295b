"""Corpus to vocabulary and word distance matrix, plus the distance CSV format.

Distances come from windowed co-occurrence counts turned into positive PMI
context vectors and compared by cosine distance.
"""

from __future__ import annotations

import csv
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DegenerateInputError, ParseError, ValidationError
from .model import DataPointSet, DistanceMatrix, normalize_distances

SYMMETRY_TOL = 1e-9
_PUNCT = re.compile(r"[^\w\s]+")


@dataclass(frozen=True)
class CorpusConfig:
    min_token_count: int = 1
    stopwords: frozenset[str] = field(default_factory=frozenset)
    window: int = 5
    max_vocab: int = 1000

    def __post_init__(self):
        object.__setattr__(self, "stopwords", frozenset(w.lower() for w in self.stopwords))
        if self.window < 1:
            raise ValidationError("window must be >= 1")
        if self.max_vocab < 2:
            raise ValidationError("max_vocab must be >= 2")
        if self.min_token_count < 1:
            raise ValidationError("min_token_count must be >= 1")

    def to_dict(self) -> dict:
        return {
            "min_token_count": self.min_token_count,
            "stopwords": sorted(self.stopwords),
            "window": self.window,
            "max_vocab": self.max_vocab,
        }

    @classmethod
    def from_dict(cls, d: dict) -> CorpusConfig:
        return cls(int(d.get("min_token_count", 1)), frozenset(d.get("stopwords", ())),
                   int(d.get("window", 5)), int(d.get("max_vocab", 1000)))


def tokenize(doc: str) -> list[str]:
    """Lowercase, drop punctuation characters, split on whitespace. No stemming."""
    return _PUNCT.sub("", doc.lower()).split()


def build_vocabulary(corpus: Sequence[str], cfg: CorpusConfig) -> DataPointSet:
    """Frequent non-stopword tokens, in alphabetical order.

    Tokens seen fewer than ``cfg.min_token_count`` times are dropped, then the
    ``cfg.max_vocab`` most frequent survive (frequency ties broken
    alphabetically).
    """
    if not corpus:
        raise DegenerateInputError("empty corpus")
    counts = Counter(t for doc in corpus for t in tokenize(doc) if t not in cfg.stopwords)
    kept = [(-c, t) for t, c in counts.items() if c >= cfg.min_token_count]
    kept.sort()
    vocab = sorted(t for _, t in kept[:cfg.max_vocab])
    if len(vocab) < 2:
        raise DegenerateInputError(f"vocabulary has {len(vocab)} token(s) after filtering; need at least 2")
    return DataPointSet(tuple(vocab))


def cooccurrence_counts(corpus: Iterable[str], vocab: DataPointSet, window: int) -> np.ndarray:
    """Symmetric counts of vocabulary tokens within ``window`` positions of each other.

    Out-of-vocabulary tokens are removed before windowing; windows never
    cross document boundaries.
    """
    index = vocab.index()
    C = np.zeros((vocab.n, vocab.n))
    for doc in corpus:
        ids = [index[t] for t in tokenize(doc) if t in index]
        for k, a in enumerate(ids):
            for b in ids[k + 1:k + 1 + window]:
                C[a, b] += 1.0
                C[b, a] += 1.0
    return C


def ppmi(C: np.ndarray) -> np.ndarray:
    """Positive pointwise mutual information of a symmetric count matrix."""
    total = C.sum()
    if total == 0:
        return np.zeros_like(C)
    row = C.sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        pmi = np.log(C * total / np.outer(row, row))
    pmi[~np.isfinite(pmi)] = 0.0
    return np.maximum(pmi, 0.0)


def cosine_distances(X: np.ndarray) -> np.ndarray:
    """Pairwise ``1 - cos`` between rows, exactly symmetric; zero rows sit at distance 1."""
    norms = np.linalg.norm(X, axis=1)
    nz = norms > 0
    U = np.zeros_like(X)
    U[nz] = X[nz] / norms[nz, None]
    D = np.clip(1.0 - U @ U.T, 0.0, 1.0)
    D[~nz, :] = 1.0
    D[:, ~nz] = 1.0
    D = np.triu(D, 1)
    D = D + D.T
    return D


def cooccurrence_distance(corpus: Sequence[str], vocab: DataPointSet, cfg: CorpusConfig) -> DistanceMatrix:
    C = cooccurrence_counts(corpus, vocab, cfg.window)
    return normalize_distances(cosine_distances(ppmi(C)))


def load_stopwords(path: str | Path) -> frozenset[str]:
    text = Path(path).read_text(encoding="utf-8")
    return frozenset(w.strip().lower() for w in text.splitlines() if w.strip())


def load_corpus(path: str | Path) -> list[str]:
    """One document per line; blank lines are skipped."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as e:
        raise ParseError(f"{path}: {e}") from e
    return [line for line in text.splitlines() if line.strip()]


def save_distance_csv(path: str | Path, points: DataPointSet, D: DistanceMatrix) -> None:
    """Header of labels, then one row of ``repr`` floats per point (exact round trip)."""
    if points.n != D.n:
        raise ValidationError(f"{points.n} labels for a {D.n}x{D.n} matrix")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(points.labels)
        for row in D.values:
            w.writerow([repr(float(x)) for x in row])


def load_distance_csv(path: str | Path) -> tuple[DataPointSet, DistanceMatrix]:
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as e:
        raise ParseError(f"{path}: {e}") from e
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        except csv.Error as e:
            raise ParseError(f"{path}:1: {e}") from e
        labels = [h.strip() for h in header]
        seen: dict[str, int] = {}
        for k, lab in enumerate(labels):
            if lab in seen:
                raise ParseError(f"{path}:1: duplicate label {lab!r} (columns {seen[lab] + 1} and {k + 1})")
            seen[lab] = k
        n = len(labels)
        rows, lines = [], []
        try:
            for row in reader:
                if not row or all(not c.strip() for c in row):
                    continue
                if len(row) != n:
                    raise ParseError(f"{path}:{reader.line_num}: expected {n} values, found {len(row)}")
                try:
                    rows.append([float(c) for c in row])
                except ValueError as e:
                    raise ParseError(f"{path}:{reader.line_num}: {e}") from None
                lines.append(reader.line_num)
        except csv.Error as e:
            raise ParseError(f"{path}:{reader.line_num}: {e}") from e
    if len(rows) != n:
        raise ParseError(f"{path}: header has {n} labels but {len(rows)} data rows")
    M = np.array(rows, dtype=np.float64)
    gap = np.abs(M - M.T)
    if gap.max(initial=0.0) > SYMMETRY_TOL:
        i, j = np.unravel_index(int(np.argmax(gap)), gap.shape)
        raise ParseError(f"{path}:{lines[i]}: asymmetric cell ({labels[i]}, {labels[j]}): "
                         f"{float(M[i, j])!r} vs {float(M[j, i])!r}")
    M = np.triu(M, 1)
    try:
        return DataPointSet(tuple(labels)), DistanceMatrix(M + M.T)
    except ValidationError as e:
        raise ValidationError(f"{path}: {e}") from e
