"""Gene rankings per embedding dimension, uniqueness of top genes, signatures.

Rankings sort genes by Pearson correlation with one embedding dimension,
descending; equal correlations are ordered by gene id. A dimension's gene
set is its ``top_n`` highest plus ``top_n`` lowest ranked genes.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from twinpurify import kernels
from twinpurify.data import ExpressionMatrix
from twinpurify.errors import ValidationError


@dataclass(frozen=True)
class PrerankedList:
    """Genes of one dimension in descending order of correlation."""

    dimension: int
    genes: tuple[str, ...]
    scores: np.ndarray
    constant: frozenset = frozenset()

    def __post_init__(self):
        scores = np.asarray(self.scores, dtype=np.float64)
        if scores.shape != (len(self.genes),):
            raise ValidationError("one score per gene expected")
        if len(set(self.genes)) != len(self.genes):
            raise ValidationError("duplicate gene id in ranked list")
        if np.any(np.diff(scores) > 0):
            raise ValidationError("scores must be in descending order")
        scores.setflags(write=False)
        object.__setattr__(self, "scores", scores)

    def __len__(self) -> int:
        return len(self.genes)

    def top(self, n: int) -> tuple[str, ...]:
        return self.genes[:n]

    def bottom(self, n: int) -> tuple[str, ...]:
        """The ``n`` lowest-ranked genes, most negative first."""
        return tuple(reversed(self.genes[len(self.genes) - n:])) if n else ()


def _ranked(dimension, genes, r, constant) -> PrerankedList:
    order = np.lexsort((np.asarray(genes), -r))
    return PrerankedList(dimension, tuple(genes[i] for i in order), r[order], frozenset(constant))


def dim_gene_correlation(E, m: ExpressionMatrix, genes=None) -> list[PrerankedList]:
    """Pearson correlation of every gene with every embedding dimension.

    Parameters
    ----------
    E : ndarray, shape (n, d)
        Embedding, rows aligned with the samples of ``m``.
    m : ExpressionMatrix or ndarray, shape (n, g)
        Expression; with a bare array pass ``genes`` too.

    Returns
    -------
    list of PrerankedList
        One per dimension. Constant genes get r = 0 and are listed in
        ``constant``.
    """
    if isinstance(m, ExpressionMatrix):
        X, genes = m.values, list(m.genes)
    else:
        X = np.asarray(m, dtype=np.float64)
        if genes is None:
            raise ValidationError("gene ids are required with a bare array")
        genes = list(genes)
    E = np.asarray(E, dtype=np.float64)
    if E.ndim == 1:
        E = E[:, None]
    if X.ndim != 2 or X.shape[1] != len(genes):
        raise ValidationError("expression columns do not match the gene ids")
    if E.shape[0] != X.shape[0]:
        raise ValidationError(f"embedding has {E.shape[0]} rows but expression has {X.shape[0]} samples")
    if E.shape[0] < 3:
        raise ValidationError("need at least 3 samples for correlations")
    Ec = E - E.mean(axis=0)
    Xc = X - X.mean(axis=0)
    en = np.sqrt((Ec**2).sum(axis=0))
    xn = np.sqrt((Xc**2).sum(axis=0))
    const_gene = xn <= 1e-12 * np.maximum(1.0, np.abs(X).max(axis=0))
    const_dim = en <= 1e-12 * np.maximum(1.0, np.abs(E).max(axis=0))
    if const_dim.any():
        warnings.warn(f"embedding dimension(s) {np.flatnonzero(const_dim).tolist()} are constant", RuntimeWarning, stacklevel=2)
    denom = np.outer(np.where(const_dim, 1.0, en), np.where(const_gene, 1.0, xn))
    R = (Ec.T @ Xc) / denom
    R[:, const_gene] = 0.0
    R[const_dim, :] = 0.0
    np.clip(R, -1.0, 1.0, out=R)
    constant = [g for g, c in zip(genes, const_gene) if c]
    return [_ranked(k, genes, R[k], constant) for k in range(E.shape[1])]


# ---------------------------------------------------------------------------
# .rnk files
# ---------------------------------------------------------------------------


def _check_id(gene: str) -> None:
    if any(c in gene for c in "\t\n\r"):
        raise ValidationError(f"illegal character in gene id {gene!r}")
    if not gene:
        raise ValidationError("empty gene id")


def export_rnk(lst: PrerankedList, path) -> Path:
    """Write ``gene<TAB>score`` lines, descending, no header."""
    for g in lst.genes:
        _check_id(g)
    path = Path(path)
    with path.open("w", newline="") as fh:
        for g, s in zip(lst.genes, lst.scores):
            fh.write(f"{g}\t{float(s)!r}\n")
    return path


def read_rnk(path, dimension: int = 0) -> PrerankedList:
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"missing file: {path}")
    genes, scores = [], []
    with path.open() as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ValidationError(f"{path}:{lineno}: expected 2 tab-separated fields")
            try:
                scores.append(float(parts[1]))
            except ValueError:
                raise ValidationError(f"{path}:{lineno}: non-numeric score {parts[1]!r}") from None
            genes.append(parts[0])
    return PrerankedList(dimension, tuple(genes), np.array(scores))


# ---------------------------------------------------------------------------
# Uniqueness
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class UniquenessResult:
    dimension: int
    unique: float
    p_value: float
    n_permutations: int
    top_n: int
    seed: int


def _check_lists(lists, top_n: int) -> tuple[str, ...]:
    lists = list(lists)
    if len(lists) < 2:
        raise ValidationError("uniqueness needs at least 2 dimensions")
    universe = lists[0].genes
    ref = set(universe)
    for lst in lists[1:]:
        if len(lst.genes) != len(universe) or set(lst.genes) != ref:
            raise ValidationError("all ranked lists must cover the same genes")
    if top_n < 1:
        raise ValidationError("top_n must be positive")
    if 2 * top_n > len(universe):
        raise ValidationError(f"top_n {top_n} too large: 2 * top_n exceeds {len(universe)} genes")
    return tuple(sorted(universe))


def gene_sets(lists, top_n: int) -> list[frozenset]:
    """Top ``top_n`` plus bottom ``top_n`` genes of each list."""
    _check_lists(lists, top_n)
    return [frozenset(l.top(top_n)) | frozenset(l.bottom(top_n)) for l in lists]


def _members(sets, index) -> tuple[np.ndarray, np.ndarray]:
    members = np.concatenate([np.fromiter((index[g] for g in sorted(s)), np.int64, len(s)) for s in sets])
    offsets = np.concatenate([[0], np.cumsum([len(s) for s in sets])])
    return members, offsets


def uniqueness_score(lists, top_n: int = 1000) -> np.ndarray:
    """Fraction of each dimension's gene set found in no other dimension's set."""
    universe = _check_lists(lists, top_n)
    index = {g: i for i, g in enumerate(universe)}
    members, offsets = _members(gene_sets(lists, top_n), index)
    return kernels.unique_fractions(members, offsets, len(universe))


def uniqueness_permutation_test(lists, top_n: int = 1000, n_perm: int = 1000, seed: int = 0) -> list[UniquenessResult]:
    """Empirical p-values for the uniqueness scores.

    Each permutation replaces every dimension's set by a uniformly drawn
    gene subset of the same size; permutation ``i`` uses the generator
    ``default_rng([seed, i])``. ``p = (1 + #{u_perm >= u_obs}) / (n_perm + 1)``.
    """
    if n_perm < 1:
        raise ValidationError("n_perm must be at least 1")
    universe = _check_lists(lists, top_n)
    G = len(universe)
    sets = gene_sets(lists, top_n)
    index = {g: i for i, g in enumerate(universe)}
    members, offsets = _members(sets, index)
    observed = kernels.unique_fractions(members, offsets, G)
    sizes = [len(s) for s in sets]
    hits = np.zeros(len(sets), dtype=np.int64)
    for i in range(n_perm):
        rng = np.random.default_rng([seed, i])
        draw = np.concatenate([rng.choice(G, size=k, replace=False) for k in sizes])
        hits += kernels.unique_fractions(draw, offsets, G) >= observed
    p = (1.0 + hits) / (n_perm + 1.0)
    return [UniquenessResult(k, float(observed[k]), float(p[k]), n_perm, top_n, seed) for k in range(len(sets))]


def write_uniqueness_csv(results: dict, path) -> Path:
    """Model x dimension table: model, dimension, unique, p_value, n_permutations, top_n, seed."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model", "dimension", "unique", "p_value", "n_permutations", "top_n", "seed"])
        for model, rows in results.items():
            for r in rows:
                w.writerow([model, r.dimension, repr(r.unique), repr(r.p_value), r.n_permutations, r.top_n, r.seed])
    return path


# ---------------------------------------------------------------------------
# Signatures
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Signature:
    dimension: int
    top: tuple[str, ...]
    bottom: tuple[str, ...]

    @property
    def genes(self) -> tuple[str, ...]:
        return self.top + self.bottom


def signature_genes(lst: PrerankedList, n_top: int = 20, n_bottom: int = 20) -> Signature:
    """Extremes of one ranking: ``n_top`` first and ``n_bottom`` last genes."""
    if n_top < 0 or n_bottom < 0:
        raise ValidationError("signature sizes must be non-negative")
    if len(lst) < n_top + n_bottom:
        raise ValidationError(f"ranked list has {len(lst)} genes, fewer than {n_top + n_bottom}")
    return Signature(lst.dimension, lst.top(n_top), lst.bottom(n_bottom))


def signature_union(signatures) -> tuple[str, ...]:
    """Genes of several signatures, each once, in first-seen order."""
    return tuple(dict.fromkeys(g for s in signatures for g in s.genes))
