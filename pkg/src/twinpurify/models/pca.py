"""PCA baseline fitted on training data and applied to held-out data."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from twinpurify.data import ExpressionMatrix
from twinpurify.errors import ValidationError
from twinpurify.models.base import Embedder


@dataclass
class PCAModel(Embedder):
    genes: tuple[str, ...]
    mean: np.ndarray
    components: np.ndarray  # d x n_genes, orthonormal rows
    explained_variance: np.ndarray
    kind: str = "PCA"

    def transform(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.mean.size:
            raise ValidationError(f"expected {self.mean.size} genes, got shape {X.shape}")
        return (X - self.mean) @ self.components.T

    def inverse_transform(self, E: np.ndarray) -> np.ndarray:
        return E @ self.components + self.mean


def pca_fit(train: ExpressionMatrix | np.ndarray, d: int) -> PCAModel:
    """Top-``d`` principal axes of the mean-centered training matrix.

    Signs are fixed so that the largest-magnitude loading of each component
    is positive.
    """
    if isinstance(train, ExpressionMatrix):
        genes, X = train.genes, train.values
    else:
        X = np.asarray(train, dtype=np.float64)
        genes = tuple(f"g{j}" for j in range(X.shape[1]))
    n, g = X.shape
    if not 1 <= d <= min(n - 1, g):
        raise ValidationError(f"d={d} must lie in [1, min(n_samples - 1, n_genes)] = [1, {min(n - 1, g)}]")
    mean = X.mean(axis=0)
    _, s, Vt = np.linalg.svd(X - mean, full_matrices=False)
    comps = Vt[:d].copy()
    pivots = np.abs(comps).argmax(axis=1)
    comps *= np.sign(comps[np.arange(d), pivots])[:, None]
    return PCAModel(tuple(genes), mean, comps, s[:d] ** 2 / (n - 1))


def pca_transform(model: PCAModel, m: ExpressionMatrix | np.ndarray) -> np.ndarray:
    if isinstance(m, ExpressionMatrix):
        return model.encode(m)
    return model.transform(m)
