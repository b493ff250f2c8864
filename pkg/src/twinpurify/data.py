"""Expression matrices, sample metadata, file I/O and cohort splitting.

File layout
-----------
Expression file: the first header cell is the literal ``sample_id``; the
remaining header cells are gene identifiers. One row per sample, values
written with a decimal point.

Metadata sidecar (tab-separated) with the columns
``sample_id, kind, subtype, grade, surv_time, surv_event``. An empty cell
means the field is absent. By default the sidecar for ``expr.tsv`` is
``expr.meta.tsv``.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from twinpurify.errors import ValidationError

TUMOR = "Tumor"
NORMAL = "AdjacentNormal"
KINDS = (TUMOR, NORMAL)

META_COLUMNS = ("sample_id", "kind", "subtype", "grade", "surv_time", "surv_event")

# Labels that are never placed in a training split.
TEST_ONLY_LABELS = ("Normal-like",)

_DELIMITERS = {"TSV": "\t", "CSV": ","}
_WHITESPACE = re.compile(r"\s")


@dataclass(frozen=True)
class SampleMeta:
    sample_id: str
    kind: str = TUMOR
    subtype: str | None = None
    grade: int | None = None
    surv_time: float | None = None
    surv_event: bool | None = None

    def __post_init__(self):
        if not self.sample_id:
            raise ValidationError("empty sample_id")
        if self.kind not in KINDS:
            raise ValidationError(f"sample {self.sample_id}: unknown kind {self.kind!r}")
        if (self.surv_time is None) != (self.surv_event is None):
            raise ValidationError(
                f"sample {self.sample_id}: surv_time and surv_event must be given together"
            )
        if self.surv_time is not None and not (self.surv_time >= 0 and math.isfinite(self.surv_time)):
            raise ValidationError(f"sample {self.sample_id}: negative survival time")
        if self.grade is not None:
            if not 0 <= self.grade <= 3:
                raise ValidationError(f"sample {self.sample_id}: grade must be in 0..3")
            if self.grade == 0 and self.kind != NORMAL:
                raise ValidationError(
                    f"sample {self.sample_id}: grade 0 is reserved for adjacent-normal samples"
                )

    def label(self, field_name: str):
        if field_name not in ("kind", "subtype", "grade"):
            raise ValidationError(f"unknown label field {field_name!r}")
        return getattr(self, field_name)


@dataclass(frozen=True, eq=False)
class ExpressionMatrix:
    """Samples x genes matrix of float64 values with identifiers.

    Values are expected to be log2(x + 1) transformed exactly once, either
    upstream or via :func:`log2_transform`.
    """

    genes: tuple[str, ...]
    samples: tuple[SampleMeta, ...]
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        genes = tuple(self.genes)
        samples = tuple(self.samples)
        values = np.ascontiguousarray(self.values, dtype=np.float64)
        object.__setattr__(self, "genes", genes)
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "values", values)
        if values.ndim != 2 or values.shape != (len(samples), len(genes)):
            raise ValidationError(
                f"values shape {values.shape} does not match "
                f"{len(samples)} samples x {len(genes)} genes"
            )
        _check_unique(genes, "gene")
        _check_unique([s.sample_id for s in samples], "sample")
        for g in genes:
            if not g or _WHITESPACE.search(g):
                raise ValidationError(f"illegal gene id {g!r}")
        if not np.isfinite(values).all():
            raise ValidationError("expression values must be finite")
        values.setflags(write=False)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @property
    def sample_ids(self) -> list[str]:
        return [s.sample_id for s in self.samples]

    def labels(self, field_name: str) -> list:
        return [s.label(field_name) for s in self.samples]

    def kinds(self) -> np.ndarray:
        return np.array([s.kind for s in self.samples])

    def take(self, indices: Sequence[int] | np.ndarray) -> "ExpressionMatrix":
        idx = np.asarray(indices, dtype=np.intp)
        return ExpressionMatrix(self.genes, [self.samples[i] for i in idx], self.values[idx])

    def select_kind(self, kind: str) -> "ExpressionMatrix":
        return self.take(np.flatnonzero(self.kinds() == kind))

    def select_genes(self, genes: Sequence[str]) -> "ExpressionMatrix":
        pos = {g: j for j, g in enumerate(self.genes)}
        missing = [g for g in genes if g not in pos]
        if missing:
            raise ValidationError(f"genes not in matrix: {missing[:5]}")
        cols = [pos[g] for g in genes]
        return ExpressionMatrix(tuple(genes), self.samples, self.values[:, cols])

    def with_values(self, values: np.ndarray) -> "ExpressionMatrix":
        return ExpressionMatrix(self.genes, self.samples, values)

    def with_samples(self, samples: Sequence[SampleMeta]) -> "ExpressionMatrix":
        return ExpressionMatrix(self.genes, samples, self.values)


@dataclass(frozen=True)
class CohortSplit:
    train_indices: np.ndarray
    test_indices: np.ndarray
    seed: int

    def __post_init__(self):
        if np.intersect1d(self.train_indices, self.test_indices).size:
            raise ValidationError("train and test indices overlap")


def _check_unique(items: Iterable[str], what: str) -> None:
    seen = set()
    for item in items:
        if item in seen:
            raise ValidationError(f"duplicate {what} id {item!r}")
        seen.add(item)


def default_metadata_path(path: str | Path) -> Path:
    path = Path(path)
    stem = path.name
    for ext in (".tsv", ".csv", ".txt"):
        if stem.endswith(ext):
            stem = stem[: -len(ext)]
            break
    return path.with_name(stem + ".meta.tsv")


# ---------------------------------------------------------------------------
# I/O
# ---------------------------------------------------------------------------


def load_matrix(
    path: str | Path,
    format: str = "TSV",
    metadata: str | Path | None = None,
) -> ExpressionMatrix:
    """Read an expression file and join its metadata sidecar.

    If ``metadata`` is None the default sidecar path is used when it
    exists; otherwise every sample is treated as an unlabelled tumor.
    """
    fmt = format.upper()
    if fmt not in _DELIMITERS:
        raise ValidationError(f"unknown format {format!r}")
    delim = _DELIMITERS[fmt]
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"missing file: {path}")

    with path.open() as fh:
        lines = [ln.rstrip("\r\n") for ln in fh if ln.strip()]
    if not lines:
        raise ValidationError(f"{path}: empty file")
    header = lines[0].split(delim)
    if header[0] != "sample_id":
        raise ValidationError(f"{path}: first header cell must be 'sample_id'")
    genes = header[1:]
    _check_unique(genes, "gene")

    sample_ids = []
    values = np.empty((len(lines) - 1, len(genes)))
    for r, line in enumerate(lines[1:]):
        cells = line.split(delim)
        if len(cells) != len(header):
            raise ValidationError(
                f"{path}: ragged row {r + 1}: expected {len(header)} cells, got {len(cells)}"
            )
        sample_ids.append(cells[0])
        for c, cell in enumerate(cells[1:]):
            try:
                v = float(cell)
            except ValueError:
                v = math.nan
            if not math.isfinite(v):
                raise ValidationError(f"{path}: non-numeric cell at ({r}, {c}): {cell!r}")
            values[r, c] = v
    _check_unique(sample_ids, "sample")

    if metadata is None:
        candidate = default_metadata_path(path)
        metadata = candidate if candidate.is_file() else None
    if metadata is None:
        samples = [SampleMeta(s) for s in sample_ids]
    else:
        meta = load_metadata(metadata)
        unknown = sorted(set(meta) - set(sample_ids))
        if unknown:
            raise ValidationError(f"metadata sample missing from matrix: {unknown[0]}")
        samples = [meta.get(s, SampleMeta(s)) for s in sample_ids]
    return ExpressionMatrix(tuple(genes), tuple(samples), values)


def load_metadata(path: str | Path) -> dict[str, SampleMeta]:
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"missing file: {path}")
    with path.open() as fh:
        lines = [ln.rstrip("\r\n") for ln in fh if ln.strip()]
    header = lines[0].split("\t") if lines else []
    if tuple(header) != META_COLUMNS:
        raise ValidationError(f"{path}: metadata columns must be {', '.join(META_COLUMNS)}")
    out = {}
    for r, line in enumerate(lines[1:], start=1):
        cells = line.split("\t")
        if len(cells) != len(META_COLUMNS):
            raise ValidationError(f"{path}: ragged metadata row {r}")
        sid, kind, subtype, grade, t, ev = cells
        if sid in out:
            raise ValidationError(f"duplicate sample id {sid!r} in metadata")
        try:
            out[sid] = SampleMeta(
                sample_id=sid,
                kind=kind or TUMOR,
                subtype=subtype or None,
                grade=int(grade) if grade else None,
                surv_time=float(t) if t else None,
                surv_event=_parse_bool(ev) if ev else None,
            )
        except ValueError as exc:
            raise ValidationError(f"{path}: row {r}: {exc}") from exc
    return out


def _parse_bool(cell: str) -> bool:
    low = cell.strip().lower()
    if low in ("1", "true", "yes"):
        return True
    if low in ("0", "false", "no"):
        return False
    raise ValidationError(f"cannot parse boolean {cell!r}")


def _fmt(v: float) -> str:
    # repr gives the shortest string that round-trips exactly
    return repr(float(v))


def save_matrix(
    m: ExpressionMatrix,
    path: str | Path,
    format: str = "TSV",
    metadata: str | Path | None = None,
) -> tuple[Path, Path]:
    delim = _DELIMITERS[format.upper()]
    path = Path(path)
    meta_path = Path(metadata) if metadata is not None else default_metadata_path(path)
    with path.open("w") as fh:
        fh.write(delim.join(("sample_id",) + m.genes) + "\n")
        for s, row in zip(m.samples, m.values):
            fh.write(s.sample_id + delim + delim.join(_fmt(v) for v in row) + "\n")
    save_metadata(m.samples, meta_path)
    return path, meta_path


def save_metadata(samples: Sequence[SampleMeta], path: str | Path) -> Path:
    path = Path(path)

    def cell(v):
        if v is None:
            return ""
        if isinstance(v, bool):
            return "1" if v else "0"
        if isinstance(v, float):
            return _fmt(v)
        return str(v)

    with path.open("w") as fh:
        fh.write("\t".join(META_COLUMNS) + "\n")
        for s in samples:
            fh.write(
                "\t".join(
                    cell(v)
                    for v in (s.sample_id, s.kind, s.subtype, s.grade, s.surv_time, s.surv_event)
                )
                + "\n"
            )
    return path


# ---------------------------------------------------------------------------
# Preprocessing
# ---------------------------------------------------------------------------


def log2_transform(m: ExpressionMatrix) -> ExpressionMatrix:
    """Return log2(v + 1) of every value.

    The transform is not idempotent; apply it exactly once to raw
    non-negative expression.
    """
    if (m.values < 0).any():
        r, c = np.argwhere(m.values < 0)[0]
        raise ValidationError(f"negative input value at ({r}, {c})")
    return m.with_values(np.log2(m.values + 1.0))


def intersect_genes(ms: Sequence[ExpressionMatrix]) -> list[ExpressionMatrix]:
    """Restrict every matrix to the shared genes, sorted lexicographically."""
    if len(ms) < 2:
        raise ValidationError("need at least two matrices to intersect")
    common = set(ms[0].genes)
    for m in ms[1:]:
        common &= set(m.genes)
    if not common:
        raise ValidationError("empty intersection")
    order = sorted(common)
    return [m.select_genes(order) for m in ms]


def split_cohort(
    m: ExpressionMatrix,
    fraction: float,
    stratify_on: str | None = None,
    seed: int = 0,
    test_only_labels: Sequence[str] = TEST_ONLY_LABELS,
) -> CohortSplit:
    """Random train/test split with ``fraction`` of samples in train.

    Samples whose subtype is listed in ``test_only_labels`` always go to the
    test side and do not count towards the stratum sizes.
    """
    if not 0.0 < fraction < 1.0:
        raise ValidationError(f"fraction must lie in (0, 1), got {fraction}")
    rng = np.random.default_rng(seed)
    n = len(m.samples)
    forced = np.array([s.subtype in test_only_labels for s in m.samples], dtype=bool)
    eligible = np.flatnonzero(~forced)

    if stratify_on is None:
        perm = rng.permutation(eligible)
        n_train = int(round(fraction * len(perm)))
        train = perm[:n_train]
    else:
        labels = m.labels(stratify_on)
        strata: dict[str, list[int]] = {}
        for i in eligible:
            strata.setdefault(str(labels[i]), []).append(int(i))
        train_parts = []
        for key in sorted(strata):
            members = np.array(strata[key])
            if len(members) < 2:
                raise ValidationError(f"stratum {key!r} has fewer than 2 samples")
            k = int(round(fraction * len(members)))
            k = min(max(k, 1), len(members) - 1)
            train_parts.append(rng.permutation(members)[:k])
        train = np.concatenate(train_parts)

    train = np.sort(train.astype(np.intp))
    test = np.setdiff1d(np.arange(n), train).astype(np.intp)
    return CohortSplit(train, test, int(seed))


def relabel(m: ExpressionMatrix, **updates) -> ExpressionMatrix:
    """Copy of ``m`` with the given SampleMeta fields overwritten on every sample."""
    return m.with_samples([replace(s, **updates) for s in m.samples])
