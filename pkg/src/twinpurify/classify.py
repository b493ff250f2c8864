"""Downstream subtype/grade classification and the dilution benchmark."""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from twinpurify.augment import DilutionSpec, dilute_matrix
from twinpurify.data import ExpressionMatrix
from twinpurify.errors import ValidationError

DEFAULT_L2 = 1e-3
L2_GRID = (1e-4, 1e-3, 1e-2)


# ---------------------------------------------------------------------------
# Multinomial logistic regression
# ---------------------------------------------------------------------------


@dataclass
class MultinomialLRModel:
    weights: np.ndarray  # n_features x n_categories
    bias: np.ndarray
    l2: float
    vocabulary: tuple
    loss: float = float("nan")
    grad_norm: float = float("nan")
    n_iter: int = 0
    converged: bool = False

    def decision_function(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.weights.shape[0]:
            raise ValidationError(f"expected {self.weights.shape[0]} features, got shape {X.shape}")
        return X @ self.weights + self.bias

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        return _softmax(self.decision_function(X))

    def predict(self, X: np.ndarray) -> np.ndarray:
        voc = np.array(self.vocabulary, dtype=object)
        return voc[self.decision_function(X).argmax(axis=1)]


def _softmax(S: np.ndarray) -> np.ndarray:
    S = S - S.max(axis=1, keepdims=True)
    E = np.exp(S)
    return E / E.sum(axis=1, keepdims=True)


def _objective(W, b, X, Y, l2):
    S = X @ W + b
    S = S - S.max(axis=1, keepdims=True)
    logZ = np.log(np.exp(S).sum(axis=1))
    n = X.shape[0]
    loss = float((logZ - (S * Y).sum(axis=1)).mean() + 0.5 * l2 * (W**2).sum())
    R = (np.exp(S - logZ[:, None]) - Y) / n
    return loss, X.T @ R + l2 * W, R.sum(axis=0)


def fit_multinomial_lr(
    X: np.ndarray,
    y,
    l2: float = DEFAULT_L2,
    max_iter: int = 5000,
    tol: float = 1e-6,
    init: tuple[np.ndarray, np.ndarray] | None = None,
    vocabulary=None,
) -> MultinomialLRModel:
    """Minimize mean softmax cross-entropy + (l2 / 2) ||W||^2 (bias unpenalized).

    Full-batch gradient descent. The trial step uses the Barzilai-Borwein
    length and is shrunk by Armijo backtracking, so every accepted step
    decreases the objective. Stops when the gradient norm drops below
    ``tol``; after ``max_iter`` iterations warns and returns the best
    iterate.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=object)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise ValidationError("X and y must have matching rows")
    voc = tuple(sorted(set(y.tolist()))) if vocabulary is None else tuple(vocabulary)
    if len(set(y.tolist())) < 2:
        raise ValidationError("need at least two categories")
    pos = {c: k for k, c in enumerate(voc)}
    try:
        yi = np.array([pos[v] for v in y])
    except KeyError as exc:
        raise ValidationError(f"label {exc.args[0]!r} not in vocabulary") from exc
    n, p = X.shape
    K = len(voc)
    Y = np.zeros((n, K))
    Y[np.arange(n), yi] = 1.0
    if init is None:
        W, b = np.zeros((p, K)), np.zeros(K)
    else:
        W, b = np.array(init[0], dtype=np.float64), np.array(init[1], dtype=np.float64)

    loss, gW, gb = _objective(W, b, X, Y, l2)
    step = 1.0
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        gnorm = np.sqrt((gW**2).sum() + (gb**2).sum())
        if gnorm < tol:
            converged = True
            it -= 1
            break
        g2 = gnorm**2
        while True:
            Wn, bn = W - step * gW, b - step * gb
            ln, gWn, gbn = _objective(Wn, bn, X, Y, l2)
            if ln <= loss - 1e-4 * step * g2 or step < 1e-14:
                break
            step *= 0.5
        sW, sb = Wn - W, bn - b
        dW, db = gWn - gW, gbn - gb
        sy = (sW * dW).sum() + (sb * db).sum()
        W, b, loss, gW, gb = Wn, bn, ln, gWn, gbn
        if step < 1e-14:
            break
        step = ((sW**2).sum() + (sb**2).sum()) / sy if sy > 0 else step * 2.0
    gnorm = float(np.sqrt((gW**2).sum() + (gb**2).sum()))
    converged = converged or gnorm < tol
    if not converged:
        warnings.warn(
            f"multinomial LR stopped after {it} iterations with gradient norm {gnorm:.2e}",
            RuntimeWarning,
            stacklevel=2,
        )
    return MultinomialLRModel(W, b, l2, voc, loss, gnorm, it, converged)


# ---------------------------------------------------------------------------
# Cross-validation, voting, metrics
# ---------------------------------------------------------------------------


def stratified_kfold(y, k: int = 5, seed: int = 0) -> np.ndarray:
    """Fold index (0..k-1) per sample; per-category fold counts differ by <= 1."""
    y = np.asarray(y, dtype=object)
    rng = np.random.default_rng(seed)
    folds = np.empty(len(y), dtype=int)
    offset = 0
    for cat in sorted(set(y.tolist()), key=str):
        members = np.flatnonzero(y == cat)
        if len(members) < k:
            raise ValidationError(f"category {cat!r} has {len(members)} samples, fewer than k={k}")
        members = rng.permutation(members)
        folds[members] = (np.arange(len(members)) + offset) % k
        offset = (offset + len(members)) % k
    return folds


def majority_vote(predictions, probabilities=None, vocabulary=None) -> np.ndarray:
    """Per-sample modal label across models.

    Ties go to the tied label with the highest mean predicted probability
    (``probabilities``: models x samples x categories, columns ordered by
    ``vocabulary``), then to the lexicographically smallest label.
    """
    P = np.asarray(predictions, dtype=object)
    if P.ndim != 2:
        raise ValidationError("predictions must be a models x samples array")
    mean_prob = None
    if probabilities is not None:
        probs = np.asarray(probabilities, dtype=np.float64)
        if probs.shape[:2] != P.shape:
            raise ValidationError("probabilities do not match predictions")
        mean_prob = probs.mean(axis=0)
        col = {c: j for j, c in enumerate(vocabulary)}
    out = np.empty(P.shape[1], dtype=object)
    for i in range(P.shape[1]):
        labels, counts = np.unique(P[:, i].astype(str), return_counts=True)
        raw = {str(v): v for v in P[:, i]}
        tied = [raw[lab] for lab in labels[counts == counts.max()]]
        if len(tied) > 1 and mean_prob is not None:
            scores = [mean_prob[i, col[t]] for t in tied]
            best = max(scores)
            tied = [t for t, s in zip(tied, scores) if s == best]
        out[i] = min(tied, key=str)
    return out


def per_category_f1(y_true, y_pred, vocabulary) -> dict:
    """F1 per category; categories absent from both truth and prediction map to None."""
    yt = np.asarray(y_true, dtype=object)
    yp = np.asarray(y_pred, dtype=object)
    if yt.shape != yp.shape:
        raise ValidationError("y_true and y_pred differ in length")
    voc = set(vocabulary)
    for lab in set(yt.tolist()) | set(yp.tolist()):
        if lab not in voc:
            raise ValidationError(f"unknown label {lab!r}")
    out = {}
    for c in vocabulary:
        tp = int(np.sum((yt == c) & (yp == c)))
        n_true = int(np.sum(yt == c))
        n_pred = int(np.sum(yp == c))
        if n_true == 0 and n_pred == 0:
            out[c] = None
        else:
            out[c] = 2.0 * tp / (n_true + n_pred)
    return out


def macro_f1(y_true, y_pred, vocabulary) -> float:
    scores = [v for v in per_category_f1(y_true, y_pred, vocabulary).values() if v is not None]
    return float(np.mean(scores)) if scores else 0.0


# ---------------------------------------------------------------------------
# Cross-validated ensemble
# ---------------------------------------------------------------------------


@dataclass
class CVEnsemble:
    models: list
    folds: np.ndarray
    seed: int
    vocabulary: tuple
    selected_l2: list = field(default_factory=list)

    def fold_predictions(self, X) -> tuple[np.ndarray, np.ndarray]:
        preds = np.stack([m.predict(X) for m in self.models])
        probs = np.stack([m.predict_proba(X) for m in self.models])
        return preds, probs

    def predict(self, X) -> np.ndarray:
        preds, probs = self.fold_predictions(X)
        return majority_vote(preds, probs, self.vocabulary)


def fit_cv_ensemble(
    X: np.ndarray,
    y,
    k: int = 5,
    seed: int = 0,
    l2_grid=L2_GRID,
    val_fraction: float = 0.2,
) -> CVEnsemble:
    """One classifier per stratified fold.

    Inside every fold's training part a stratified ``val_fraction`` is held
    out; the l2 strength with the best validation macro-F1 (ties: lower
    validation log-loss, then the grid order) gives the fold model, fitted
    on the remaining rows.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=object)
    voc = tuple(sorted(set(y.tolist()), key=str))
    folds = stratified_kfold(y, k, seed)
    models, chosen = [], []
    for f in range(k):
        tr = np.flatnonzero(folds != f)
        inner, val = _inner_split(y[tr], val_fraction, np.random.default_rng([seed, f]))
        tr_in, tr_val = tr[inner], tr[val]
        best = None
        for l2 in l2_grid:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                m = fit_multinomial_lr(X[tr_in], y[tr_in], l2, vocabulary=voc)
            f1 = macro_f1(y[tr_val], m.predict(X[tr_val]), voc)
            P = m.predict_proba(X[tr_val])
            cols = np.array([voc.index(v) for v in y[tr_val]])
            ll = float(-np.log(np.maximum(P[np.arange(len(cols)), cols], 1e-300)).mean())
            key = (-f1, ll)
            if best is None or key < best[0]:
                best = (key, m, l2)
        models.append(best[1])
        chosen.append(best[2])
    return CVEnsemble(models, folds, seed, voc, chosen)


def _inner_split(y, val_fraction, rng):
    val = []
    for cat in sorted(set(y.tolist()), key=str):
        members = rng.permutation(np.flatnonzero(y == cat))
        n_val = int(round(val_fraction * len(members)))
        n_val = min(max(n_val, 1), len(members) - 1) if len(members) > 1 else 0
        val.extend(members[:n_val].tolist())
    val = np.array(sorted(val), dtype=int)
    inner = np.setdiff1d(np.arange(len(y)), val)
    return inner, val


# ---------------------------------------------------------------------------
# Dilution benchmark
# ---------------------------------------------------------------------------


@dataclass
class DilutionReport:
    model: str
    rates: tuple
    vocabulary: tuple
    macro_f1: list  # ensemble macro-F1 per rate
    fold_macro_f1: np.ndarray  # rates x folds
    category_f1: list  # per rate: {category: F1 or None}
    sample_ids: list
    truth: list
    trajectories: np.ndarray  # samples x rates, predicted labels

    @property
    def fold_sd(self) -> np.ndarray:
        return self.fold_macro_f1.std(axis=1)

    def rows(self) -> list[dict]:
        out = []
        for r, rate in enumerate(self.rates):
            row = {
                "model": self.model,
                "rate": rate,
                "macro_f1": self.macro_f1[r],
                "fold_mean": float(self.fold_macro_f1[r].mean()),
                "fold_sd": float(self.fold_sd[r]),
            }
            for c in self.vocabulary:
                row[f"f1_{c}"] = self.category_f1[r][c]
            out.append(row)
        return out


def _as_embed_fn(model):
    if callable(model) and not hasattr(model, "encode"):
        return model
    return model.encode


def dilution_eval(
    model,
    train: ExpressionMatrix,
    test: ExpressionMatrix,
    normal_pool: ExpressionMatrix | np.ndarray,
    spec: DilutionSpec = DilutionSpec(),
    label_field: str = "subtype",
    name: str | None = None,
    k: int = 5,
    l2_grid=L2_GRID,
) -> DilutionReport:
    """Fit the fold ensemble on clean training embeddings, then track test
    predictions as every test sample is diluted with synthetic normals.

    ``model`` is a fitted embedder (anything with ``encode(matrix)``) or a
    callable mapping an ExpressionMatrix to embeddings. Error bars come from
    the spread of the individual fold models.
    """
    embed = _as_embed_fn(model)
    y_train = np.asarray(train.labels(label_field), dtype=object)
    y_test = np.asarray(test.labels(label_field), dtype=object)
    if any(v is None for v in y_train) or any(v is None for v in y_test):
        raise ValidationError(f"every sample needs a {label_field!r} label")
    ens = fit_cv_ensemble(embed(train), y_train, k, spec.seed, l2_grid)
    voc = ens.vocabulary
    unknown = set(y_test.tolist()) - set(voc)
    if unknown:
        raise ValidationError(f"test labels missing from training vocabulary: {sorted(unknown, key=str)}")

    pool = normal_pool.values if isinstance(normal_pool, ExpressionMatrix) else np.asarray(normal_pool, float)
    diluted = dilute_matrix(test.values, pool, spec)
    macro, fold_scores, cat_f1, traj = [], [], [], []
    for rate in spec.rates:
        E = embed(test.with_values(diluted[rate]))
        preds, probs = ens.fold_predictions(E)
        vote = majority_vote(preds, probs, voc)
        macro.append(macro_f1(y_test, vote, voc))
        fold_scores.append([macro_f1(y_test, p, voc) for p in preds])
        cat_f1.append(per_category_f1(y_test, vote, voc))
        traj.append(vote)
    return DilutionReport(
        name or getattr(model, "kind", "model"),
        spec.rates,
        voc,
        macro,
        np.array(fold_scores),
        cat_f1,
        test.sample_ids,
        list(y_test),
        np.stack(traj, axis=1),
    )


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_dilution_csv(reports, path) -> Path:
    """One row per rate per model; per-category F1 columns cover the union of vocabularies."""
    path = Path(path)
    reports = list(reports)
    cats = sorted({c for r in reports for c in r.vocabulary}, key=str)
    header = ["model", "rate", "macro_f1", "fold_mean", "fold_sd"] + [f"f1_{c}" for c in cats]
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for rep in reports:
            for row in rep.rows():
                w.writerow([_cell(row.get(h)) for h in header])
    return path


def write_trajectories_csv(report: DilutionReport, path) -> Path:
    """One row per test sample: id, true label, predicted label at every rate."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample_id", "truth"] + [f"rate_{r!r}" for r in report.rates])
        for sid, t, traj in zip(report.sample_ids, report.truth, report.trajectories):
            w.writerow([sid, t] + [str(p) for p in traj])
    return path
