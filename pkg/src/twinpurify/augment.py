"""Adjacent-normal augmentation: synthetic normals, mixing, views, dilutions.

All operations act on expression vectors in whatever space the caller
holds them (log2 space by default). Pass ``linear_space=True`` to
:func:`mix` and friends to undo the log2(x + 1) transform before mixing
and re-apply it afterwards.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from twinpurify.errors import ValidationError

DEFAULT_ALPHA = 0.27
DEFAULT_M_NORMALS = 5


@dataclass(frozen=True)
class MixtureSpec:
    alpha: float = DEFAULT_ALPHA
    m_normals: int = DEFAULT_M_NORMALS
    seed: int = 0
    linear_space: bool = False

    def __post_init__(self):
        if not 0.0 < self.alpha <= 1.0:
            raise ValidationError(f"alpha must lie in (0, 1], got {self.alpha}")
        if self.m_normals < 1:
            raise ValidationError("m_normals must be at least 1")


@dataclass(frozen=True)
class DilutionSpec:
    rates: tuple[float, ...] = tuple(np.round(np.linspace(0.0, 1.0, 11), 10))
    seed: int = 0
    m_normals: int = DEFAULT_M_NORMALS
    linear_space: bool = False

    def __post_init__(self):
        rates = tuple(float(r) for r in self.rates)
        object.__setattr__(self, "rates", rates)
        if not rates:
            raise ValidationError("dilution rates must not be empty")
        if any(not 0.0 <= r <= 1.0 for r in rates):
            raise ValidationError("dilution rates must lie in [0, 1]")
        if any(b <= a for a, b in zip(rates, rates[1:])):
            raise ValidationError("dilution rates must be strictly increasing")


def simplex_weights(m: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform draw from the (m-1)-simplex via normalized exponentials."""
    w = rng.standard_exponential(m)
    return w / w.sum()


def synth_normal(pool: np.ndarray, m: int, rng: np.random.Generator) -> np.ndarray:
    """Convex combination of ``m`` distinct rows of ``pool``."""
    pool = np.asarray(pool, dtype=np.float64)
    if pool.ndim != 2:
        raise ValidationError("normal pool must be a 2-D array")
    if m < 1 or pool.shape[0] < m:
        raise ValidationError(f"normal pool has {pool.shape[0]} rows, need {m}")
    idx = rng.choice(pool.shape[0], size=m, replace=False)
    w = simplex_weights(m, rng)
    return w @ pool[idx]


def _to_linear(x):
    return np.exp2(x) - 1.0


def _to_log(x):
    return np.log2(np.maximum(x, 0.0) + 1.0)


def mix(tumor: np.ndarray, normal: np.ndarray, alpha: float, linear_space: bool = False) -> np.ndarray:
    """alpha * tumor + (1 - alpha) * normal, componentwise."""
    tumor = np.asarray(tumor, dtype=np.float64)
    normal = np.asarray(normal, dtype=np.float64)
    if tumor.shape != normal.shape:
        raise ValidationError(f"length mismatch: {tumor.shape} vs {normal.shape}")
    if not 0.0 <= alpha <= 1.0:
        raise ValidationError(f"alpha must lie in [0, 1], got {alpha}")
    if alpha == 1.0:
        return tumor.copy()
    if alpha == 0.0:
        return normal.copy()
    if linear_space:
        return _to_log(alpha * _to_linear(tumor) + (1.0 - alpha) * _to_linear(normal))
    return alpha * tumor + (1.0 - alpha) * normal


def _synth_normal_in_space(pool, m, rng, linear_space):
    if not linear_space:
        return synth_normal(pool, m, rng)
    return _to_log(synth_normal(_to_linear(np.asarray(pool, dtype=np.float64)), m, rng))


def make_views(
    x_tumor: np.ndarray,
    pool: np.ndarray,
    spec: MixtureSpec,
    rng: np.random.Generator | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Two views of one tumor profile with independent synthetic normals."""
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    n1 = _synth_normal_in_space(pool, spec.m_normals, rng, spec.linear_space)
    n2 = _synth_normal_in_space(pool, spec.m_normals, rng, spec.linear_space)
    return (
        mix(x_tumor, n1, spec.alpha, spec.linear_space),
        mix(x_tumor, n2, spec.alpha, spec.linear_space),
    )


def make_view_batch(
    X: np.ndarray,
    pool: np.ndarray,
    spec: MixtureSpec,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise :func:`make_views`, drawing fresh normals for every row."""
    v1 = np.empty_like(X, dtype=np.float64)
    v2 = np.empty_like(X, dtype=np.float64)
    for i, x in enumerate(X):
        v1[i], v2[i] = make_views(x, pool, spec, rng)
    return v1, v2


def dilution_series(
    x_tumor: np.ndarray,
    pool: np.ndarray,
    spec: DilutionSpec,
    rng: np.random.Generator | None = None,
) -> list[tuple[float, np.ndarray]]:
    """Mix a tumor profile with fresh synthetic normals at every dilution rate.

    Rate 0 is the untouched tumor, rate 1 a pure normal mixture.
    """
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    x_tumor = np.asarray(x_tumor, dtype=np.float64)
    out = []
    for r in spec.rates:
        normal = _synth_normal_in_space(pool, spec.m_normals, rng, spec.linear_space)
        out.append((r, mix(x_tumor, normal, 1.0 - r, spec.linear_space)))
    return out


def dilute_matrix(
    X: np.ndarray,
    pool: np.ndarray,
    spec: DilutionSpec,
) -> dict[float, np.ndarray]:
    """Dilution series for every row; row i uses the stream ``(spec.seed, i)``."""
    X = np.asarray(X, dtype=np.float64)
    out = {r: np.empty_like(X) for r in spec.rates}
    for i, x in enumerate(X):
        rng = np.random.default_rng([spec.seed, i])
        for r, v in dilution_series(x, pool, spec, rng):
            out[r][i] = v
    return out
