"""Cox regression, risk groups, Kaplan-Meier curves, log-rank and Harrell's C.

Time is any positive unit; events are booleans (True = event observed,
False = censored). Higher risk scores mean shorter expected survival.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import chi2

from twinpurify import kernels
from twinpurify.data import ExpressionMatrix
from twinpurify.errors import ConvergenceError, MonotoneLikelihoodError, NumericalError, ValidationError

HIGH, LOW = "High", "Low"
MAX_ABS_COEF = 50.0
NEWTON_STEP_TOL = 1e-4


def _records(time, event) -> tuple[np.ndarray, np.ndarray]:
    time = np.asarray(time, dtype=np.float64).ravel()
    event = np.asarray(event).ravel()
    if time.shape != event.shape:
        raise ValidationError(f"{time.size} times but {event.size} event flags")
    if time.size == 0:
        raise ValidationError("no survival records")
    if not np.isfinite(time).all() or (time <= 0).any():
        raise ValidationError("survival times must be positive and finite")
    if event.dtype != bool:
        if not np.isin(event, (0, 1)).all():
            raise ValidationError("event flags must be boolean or 0/1")
        event = event.astype(bool)
    return time, event


def survival_records(m: ExpressionMatrix) -> tuple[np.ndarray, np.ndarray]:
    """``(time, event)`` arrays from sample metadata; every sample needs both."""
    missing = [s.sample_id for s in m.samples if s.surv_time is None]
    if missing:
        raise ValidationError(f"{len(missing)} samples lack survival data, e.g. {missing[0]}")
    return _records([s.surv_time for s in m.samples], [s.surv_event for s in m.samples])


# ---------------------------------------------------------------------------
# Cox proportional hazards
# ---------------------------------------------------------------------------


def cox_partial_loglik(X, time, event, beta, hessian: bool = True):
    """Breslow partial log-likelihood with its gradient and Hessian in ``beta``."""
    time, event = _records(time, event)
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] != time.size:
        raise ValidationError(f"feature matrix shape {X.shape} does not match {time.size} records")
    return kernels.cox_breslow(X, time, event, np.asarray(beta, dtype=np.float64), hessian)


@dataclass
class CoxModel:
    """Fitted Cox model. ``coef`` is on the original feature scale.

    Features that were constant in the training data are listed in
    ``excluded`` and carry a zero coefficient.
    """

    coef: np.ndarray
    center: np.ndarray
    scale: np.ndarray
    features: tuple[str, ...]
    n_iter: int
    grad_norm: float
    converged: bool
    loglik: float
    excluded: tuple[str, ...] = ()
    tie_method: str = field(default="breslow", init=False)

    @property
    def coef_standardized(self) -> np.ndarray:
        return self.coef * self.scale


def fit_cox(X, time, event, features=None, max_iter: int = 100, tol: float = 1e-6) -> CoxModel:
    """Newton-Raphson on the Breslow partial likelihood.

    Features are standardized internally (population sd); steps are halved
    until the likelihood does not decrease. Iteration stops when the
    gradient norm on the standardized scale drops below ``tol`` and the
    Newton step is below ``NEWTON_STEP_TOL``, or after
    ``max_iter`` iterations, in which case a warning is issued and
    ``converged`` is False.

    Raises
    ------
    ValidationError
        Fewer than two events or malformed input.
    MonotoneLikelihoodError
        A standardized coefficient exceeds 50 in absolute value.
    """
    time, event = _records(time, event)
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2 or X.shape[0] != time.size:
        raise ValidationError(f"feature matrix shape {X.shape} does not match {time.size} records")
    if not np.isfinite(X).all():
        raise ValidationError("features contain non-finite values")
    n_events = int(event.sum())
    if n_events == 0:
        raise ValidationError("no events: the partial likelihood is flat")
    if n_events < 2:
        raise ValidationError("need at least 2 events to fit a Cox model")
    p = X.shape[1]
    features = tuple(features) if features is not None else tuple(f"x{j}" for j in range(p))
    if len(features) != p:
        raise ValidationError("one feature name per column expected")

    center = X.mean(axis=0)
    sd = X.std(axis=0)
    keep = sd > 1e-12 * np.maximum(1.0, np.abs(center))
    excluded = tuple(f for f, k in zip(features, keep) if not k)
    if excluded:
        warnings.warn(f"excluding {len(excluded)} constant feature(s): {', '.join(excluded[:5])}", RuntimeWarning, stacklevel=2)
    if not keep.any():
        raise ValidationError("every feature is constant")
    Z = (X[:, keep] - center[keep]) / sd[keep]

    beta = np.zeros(Z.shape[1])
    ll, g, H = kernels.cox_breslow(Z, time, event, beta, True)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        try:
            step = np.linalg.solve(-H, g)
        except np.linalg.LinAlgError as exc:
            raise NumericalError("singular information matrix; features are collinear") from exc
        # under separation the gradient vanishes but Newton steps stay large
        if np.linalg.norm(g) < tol and np.abs(step).max() < NEWTON_STEP_TOL:
            converged = True
            it -= 1
            break
        t = 1.0
        for _ in range(60):
            cand = beta + t * step
            if np.abs(cand).max() > MAX_ABS_COEF:
                raise MonotoneLikelihoodError(
                    "monotone likelihood: coefficients diverge (|beta| > 50 on the standardized scale)"
                )
            ll_new, g_new, H_new = kernels.cox_breslow(Z, time, event, cand, True)
            if np.isfinite(ll_new) and ll_new >= ll - 1e-12 * abs(ll):
                break
            t *= 0.5
        else:
            raise ConvergenceError("step halving failed to increase the partial likelihood")
        beta, ll, g, H = cand, ll_new, g_new, H_new
    if not converged:
        warnings.warn(
            f"Cox fit did not converge in {max_iter} iterations (gradient norm {np.linalg.norm(g):.3g})",
            RuntimeWarning,
            stacklevel=2,
        )
    coef = np.zeros(p)
    coef[keep] = beta / sd[keep]
    scale = np.where(keep, sd, 1.0)
    return CoxModel(coef, center, scale, features, it, float(np.linalg.norm(g)), bool(converged), float(ll), excluded)


def risk_scores(model: CoxModel, X) -> np.ndarray:
    """Linear predictor ``X @ coef`` (log relative hazard)."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2 or X.shape[1] != model.coef.size:
        raise ValidationError(f"expected {model.coef.size} feature columns, got shape {X.shape}")
    return X @ model.coef


def median_split(scores) -> np.ndarray:
    """``High`` above the median, ``Low`` otherwise (ties at the median go Low)."""
    s = np.asarray(scores, dtype=np.float64).ravel()
    if s.size < 2:
        raise ValidationError("need at least 2 scores to split")
    if np.all(s == s[0]):
        warnings.warn("all risk scores are identical; every sample is Low", RuntimeWarning, stacklevel=2)
    return np.where(s > np.median(s), HIGH, LOW)


# ---------------------------------------------------------------------------
# Kaplan-Meier and log-rank
# ---------------------------------------------------------------------------


@dataclass
class KMCurve:
    """Product-limit estimate at every distinct observed time.

    ``survival[k]`` is S just after ``times[k]``; S is 1 before the first time.
    """

    times: np.ndarray
    survival: np.ndarray
    at_risk: np.ndarray
    events: np.ndarray

    def __call__(self, t) -> np.ndarray:
        """Step-function value S(t), right-continuous."""
        idx = np.searchsorted(self.times, np.asarray(t, dtype=np.float64), side="right")
        return np.concatenate([[1.0], self.survival])[idx]

    def median_time(self) -> float:
        """First time with S <= 0.5, inf if never reached."""
        hit = np.flatnonzero(self.survival <= 0.5)
        return float(self.times[hit[0]]) if hit.size else float("inf")


def km_curve(time, event) -> KMCurve:
    time, event = _records(time, event)
    grid = np.unique(time)
    at_risk, d = kernels.risk_table(time, event, grid)
    # between censorings the product telescopes to (n_i - d_i) / n_start, so
    # each run of uncensored steps costs one division instead of a chain
    n = at_risk.astype(np.float64)
    starts = np.r_[True, at_risk[1:] != at_risk[:-1] - d[:-1]]
    seg = np.cumsum(starts) - 1
    within = (n - d) / n[starts][seg]
    ends = np.r_[starts[1:], True]
    base = np.r_[1.0, np.cumprod(within[ends])[:-1]]
    surv = base[seg] * within
    return KMCurve(grid, surv, at_risk, d)


@dataclass(frozen=True)
class LogRankResult:
    statistic: float
    p_value: float
    df: int
    observed_a: float
    expected_a: float


def log_rank_test(time_a, event_a, time_b, event_b) -> LogRankResult:
    """Two-group log-rank test (1 degree of freedom, chi-square p-value).

    The p-value is floored at the smallest positive double so it stays in
    (0, 1] when the chi-square tail underflows.
    """
    ta, ea = _records(time_a, event_a)
    tb, eb = _records(time_b, event_b)
    grid = np.unique(np.concatenate([ta[ea], tb[eb]]))
    if grid.size == 0:
        raise ValidationError("log-rank test needs at least one event")
    na, da = kernels.risk_table(ta, ea, grid)
    nb, db = kernels.risk_table(tb, eb, grid)
    n = (na + nb).astype(np.float64)
    d = (da + db).astype(np.float64)
    expected = float(np.sum(d * na / n))
    observed = float(da.sum())
    multi = n > 1
    var = float(np.sum(na[multi] * nb[multi] * d[multi] * (n[multi] - d[multi]) / (n[multi] ** 2 * (n[multi] - 1))))
    diff = observed - expected
    if var <= 0.0:
        if abs(diff) > 1e-12:
            raise NumericalError("log-rank variance is zero but observed and expected differ")
        stat = 0.0
    else:
        stat = diff * diff / var
    p = float(chi2.sf(stat, 1))
    return LogRankResult(float(stat), max(p, np.finfo(float).tiny), 1, observed, expected)


# ---------------------------------------------------------------------------
# Concordance
# ---------------------------------------------------------------------------


def c_index(scores, time, event) -> float:
    """Harrell's C for risk scores.

    A pair is admissible when the shorter time ended in an event; pairs
    with equal times are not admissible. Equal scores count one half.
    """
    time, event = _records(time, event)
    s = np.asarray(scores, dtype=np.float64).ravel()
    if s.size != time.size:
        raise ValidationError(f"{s.size} scores but {time.size} records")
    conc, tied, adm = kernels.concordance_counts(time, event, s)
    if adm == 0:
        raise ValidationError("no admissible pairs for the concordance index")
    return (conc + 0.5 * tied) / adm


# ---------------------------------------------------------------------------
# Signature pipeline
# ---------------------------------------------------------------------------


@dataclass
class SurvivalResult:
    model: str
    genes: tuple[str, ...]
    missing: tuple[str, ...]
    cox: CoxModel
    scores: np.ndarray
    groups: np.ndarray
    curves: dict
    logrank: LogRankResult
    c_index: float


def _signature_genes(sig) -> list[str]:
    if hasattr(sig, "top") and hasattr(sig, "bottom"):
        return list(sig.top) + list(sig.bottom)
    if isinstance(sig, str):
        return [sig]
    out = []
    for item in sig:
        out.extend(_signature_genes(item) if not isinstance(item, str) else [item])
    return out


def survival_pipeline(signatures: dict, m: ExpressionMatrix, time=None, event=None) -> dict:
    """Cox risk stratification for each model's signature genes.

    Parameters
    ----------
    signatures : dict
        Model name -> gene ids, or signatures with ``top``/``bottom``
        lists, or a list of those. Duplicates count once; genes absent from
        ``m`` are dropped with a warning.
    m : ExpressionMatrix
        Bulk expression, one row per patient.
    time, event : array_like, optional
        Survival records aligned with ``m``; read from metadata when omitted.

    Returns
    -------
    dict
        Model name -> :class:`SurvivalResult`.
    """
    if time is None or event is None:
        time, event = survival_records(m)
    else:
        time, event = _records(time, event)
        if time.size != m.values.shape[0]:
            raise ValidationError("survival records do not match the matrix rows")
    present = set(m.genes)
    out = {}
    for name, sig in signatures.items():
        genes = list(dict.fromkeys(_signature_genes(sig)))
        missing = tuple(g for g in genes if g not in present)
        if missing:
            warnings.warn(f"{name}: {len(missing)} signature genes not in the matrix", RuntimeWarning, stacklevel=2)
        genes = [g for g in genes if g in present]
        if not genes:
            raise ValidationError(f"{name}: no signature genes found in the matrix")
        X = m.select_genes(genes).values
        cox = fit_cox(X, time, event, genes)
        scores = risk_scores(cox, X)
        groups = median_split(scores)
        hi, lo = groups == HIGH, groups == LOW
        if not hi.any() or not lo.any():
            raise ValidationError(f"{name}: median split produced a single risk group")
        curves = {HIGH: km_curve(time[hi], event[hi]), LOW: km_curve(time[lo], event[lo])}
        lr = log_rank_test(time[hi], event[hi], time[lo], event[lo])
        out[name] = SurvivalResult(name, tuple(genes), missing, cox, scores, groups, curves, lr, c_index(scores, time, event))
    return out


def write_survival_summary(results: dict, path) -> Path:
    """CSV with columns model, c_index, logrank_chi2, logrank_p, n_genes."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model", "c_index", "logrank_chi2", "logrank_p", "n_genes"])
        for name, r in results.items():
            w.writerow([name, repr(r.c_index), repr(r.logrank.statistic), repr(r.logrank.p_value), len(r.genes)])
    return path


def write_km_csv(results: dict, path) -> Path:
    """Long-format KM curves: model, group, time, survival, at_risk, events.

    Each curve starts with a row at time 0 and survival 1.
    """
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model", "group", "time", "survival", "at_risk", "events"])
        for name, r in results.items():
            for group, c in r.curves.items():
                w.writerow([name, group, repr(0.0), repr(1.0), int(c.at_risk[0]) if c.at_risk.size else 0, 0])
                for t, s, n, d in zip(c.times, c.survival, c.at_risk, c.events):
                    w.writerow([name, group, repr(float(t)), repr(float(s)), int(n), int(d)])
    return path
