"""Batch-normalized cross-correlation and the redundancy-reduction loss.

Conventions: batch normalization divides by the population standard
deviation (divide by B). The cross-correlation then re-normalizes each
column by its Euclidean norm, so ``cross_correlation(Z, Z)`` has an exact
unit diagonal whatever variance convention was used upstream.
"""

from __future__ import annotations

import numpy as np

from twinpurify.errors import DegenerateBatchError, ValidationError

DEFAULT_LAMBDA = 54.9
DEFAULT_EPS = 1e-8


def batch_normalize_columns(Z: np.ndarray, eps: float = DEFAULT_EPS) -> tuple[np.ndarray, np.ndarray]:
    """Center and scale each column to mean 0, population variance 1.

    Columns whose standard deviation is below ``eps`` are set to zero and
    reported in the returned boolean ``degenerate`` mask.
    """
    Z = np.asarray(Z, dtype=np.float64)
    if Z.ndim != 2 or Z.shape[0] < 2:
        raise ValidationError("batch normalization needs a 2-D batch with B >= 2")
    centered = Z - Z.mean(axis=0)
    sd = np.sqrt((centered**2).mean(axis=0))
    degenerate = sd < eps
    out = np.zeros_like(centered)
    ok = ~degenerate
    out[:, ok] = centered[:, ok] / sd[ok]
    return out, degenerate


def batch_normalize_backward(Zn: np.ndarray, Z: np.ndarray, grad: np.ndarray) -> np.ndarray:
    sd = np.sqrt(((Z - Z.mean(axis=0)) ** 2).mean(axis=0))
    return (grad - grad.mean(axis=0) - Zn * (grad * Zn).mean(axis=0)) / sd


def _column_norms(Z: np.ndarray) -> np.ndarray:
    norms = np.sqrt((Z**2).sum(axis=0))
    if (norms == 0).any():
        raise DegenerateBatchError(f"zero-norm column(s) {np.flatnonzero(norms == 0).tolist()}")
    return norms


def cross_correlation(Z1: np.ndarray, Z2: np.ndarray) -> np.ndarray:
    """C[i, j] = <Z1[:, i], Z2[:, j]> / (|Z1[:, i]| |Z2[:, j]|)."""
    Z1 = np.asarray(Z1, dtype=np.float64)
    Z2 = np.asarray(Z2, dtype=np.float64)
    if Z1.shape != Z2.shape or Z1.ndim != 2:
        raise ValidationError(f"view shapes differ: {Z1.shape} vs {Z2.shape}")
    if Z1.shape[0] < 2:
        raise ValidationError("cross-correlation needs B >= 2")
    U1 = Z1 / _column_norms(Z1)
    U2 = Z2 / _column_norms(Z2)
    return U1.T @ U2


def cross_correlation_backward(Z1, Z2, grad_C):
    """Gradients of ``sum(grad_C * C)`` w.r.t. both inputs."""
    n1, n2 = _column_norms(Z1), _column_norms(Z2)
    U1, U2 = Z1 / n1, Z2 / n2
    gU1 = U2 @ grad_C.T
    gU2 = U1 @ grad_C
    g1 = (gU1 - U1 * (U1 * gU1).sum(axis=0)) / n1
    g2 = (gU2 - U2 * (U2 * gU2).sum(axis=0)) / n2
    return g1, g2


def tp_loss(C: np.ndarray, lam: float = DEFAULT_LAMBDA) -> tuple[float, np.ndarray]:
    """sum_i (1 - C_ii)^2 + lam * sum_{i != j} C_ij^2, and its gradient in C."""
    C = np.asarray(C, dtype=np.float64)
    if C.ndim != 2 or C.shape[0] != C.shape[1]:
        raise ValidationError(f"cross-correlation matrix must be square, got {C.shape}")
    if not lam > 0:
        raise ValidationError("lambda must be positive")
    diag = np.diagonal(C)
    off = C - np.diag(diag)
    loss = float(((1.0 - diag) ** 2).sum() + lam * (off**2).sum())
    grad = 2.0 * lam * off
    grad[np.diag_indices_from(grad)] = -2.0 * (1.0 - diag)
    return loss, grad


def redundancy_loss(P1: np.ndarray, P2: np.ndarray, lam: float, eps: float = DEFAULT_EPS):
    """Full objective from raw projector outputs of the two views.

    Returns ``(loss, C, grad_P1, grad_P2)``. Raises
    :class:`DegenerateBatchError` if any projected column is constant.
    """
    Z1, deg1 = batch_normalize_columns(P1, eps)
    Z2, deg2 = batch_normalize_columns(P2, eps)
    if deg1.any() or deg2.any():
        cols = sorted(set(np.flatnonzero(deg1 | deg2).tolist()))
        raise DegenerateBatchError(f"constant projector column(s) {cols}")
    C = cross_correlation(Z1, Z2)
    loss, gC = tp_loss(C, lam)
    gZ1, gZ2 = cross_correlation_backward(Z1, Z2, gC)
    return (
        loss,
        C,
        batch_normalize_backward(Z1, P1, gZ1),
        batch_normalize_backward(Z2, P2, gZ2),
    )
