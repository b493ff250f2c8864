"""Seeded random search over the mixing coefficient and lambda."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from twinpurify.classify import DEFAULT_L2, fit_multinomial_lr, macro_f1
from twinpurify.data import NORMAL, TUMOR, ExpressionMatrix, split_cohort
from twinpurify.errors import ValidationError
from twinpurify.models import TrainConfig, encode, train_twinpurify

ALPHA_RANGE = (0.05, 0.95)
LAMBDA_RANGE = (10.0, 100.0)


@dataclass(frozen=True)
class Trial:
    trial: int
    alpha: float
    lam: float
    val_macro_f1: float


def sample_trials(n_trials: int, seed: int, alpha_range=ALPHA_RANGE, lam_range=LAMBDA_RANGE) -> list[tuple[float, float]]:
    """Trial ``i`` draws ``(alpha, lam)`` uniformly from the stream ``(seed, i)``."""
    if n_trials < 1:
        raise ValidationError("n_trials must be at least 1")
    out = []
    for i in range(n_trials):
        rng = np.random.default_rng([seed, i])
        out.append((float(rng.uniform(*alpha_range)), float(rng.uniform(*lam_range))))
    return out


def validation_f1(model, inner: ExpressionMatrix, val: ExpressionMatrix, label_field: str = "subtype") -> float:
    """Macro-F1 on validation tumors of an l2-regularized LR fitted on inner embeddings."""
    y_in = inner.labels(label_field)
    y_val = val.labels(label_field)
    voc = tuple(sorted(set(y_in), key=str))
    clf = fit_multinomial_lr(encode(model, inner), y_in, DEFAULT_L2, vocabulary=voc)
    return macro_f1(y_val, clf.predict(encode(model, val)), voc)


def tune(
    train: ExpressionMatrix,
    config: TrainConfig = TrainConfig(),
    n_trials: int = 20,
    seed: int = 0,
    val_fraction: float = 0.2,
    label_field: str = "subtype",
    alpha_range=ALPHA_RANGE,
    lam_range=LAMBDA_RANGE,
) -> tuple[list[Trial], Trial]:
    """Random search on an internal split of ``train``.

    Tumors are split stratified by ``label_field``; every trial trains on
    the inner tumors with all training normals as the view pool and is
    scored on the held-out tumors. The best trial has the highest
    validation macro-F1, ties going to the earlier trial.
    """
    tumors = train.select_kind(TUMOR)
    normals = train.select_kind(NORMAL)
    split = split_cohort(tumors, 1.0 - val_fraction, label_field, seed)
    inner, val = tumors.take(split.train_indices), tumors.take(split.test_indices)
    labelled = ExpressionMatrix(inner.genes, inner.samples + normals.samples, np.vstack([inner.values, normals.values]))
    trials = []
    for i, (alpha, lam) in enumerate(sample_trials(n_trials, seed, alpha_range, lam_range)):
        model = train_twinpurify(inner, normals, config.replace(alpha=alpha, lam=lam))
        trials.append(Trial(i, alpha, lam, validation_f1(model, labelled, val, label_field)))
    best = max(trials, key=lambda t: (t.val_macro_f1, -t.trial))
    return trials, best


def write_trials_csv(trials, path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["trial", "alpha", "lambda", "val_macro_f1"])
        for t in trials:
            w.writerow([t.trial, repr(t.alpha), repr(t.lam), repr(t.val_macro_f1)])
    return path
