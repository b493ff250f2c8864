"""Shared pieces of the embedding models: config, input scaling, encode()."""

from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass, fields

import numpy as np

from twinpurify.data import ExpressionMatrix
from twinpurify.errors import DegenerateBatchError, ValidationError
from twinpurify.models.objective import DEFAULT_EPS, DEFAULT_LAMBDA
from twinpurify.augment import DEFAULT_ALPHA, DEFAULT_M_NORMALS

MODEL_KINDS = ("TP", "BTNoise", "AE", "VAE", "PCA")


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters for every trainable model; unused fields are ignored."""

    hidden: tuple[int, ...] = (512, 128)
    embed_dim: int = 4
    projector: tuple[int, ...] = (64, 4)
    projector_batch_norm: bool = True
    epochs: int = 100
    batch_size: int = 64
    learning_rate: float = 1e-3
    seed: int = 0
    alpha: float = DEFAULT_ALPHA
    lam: float = DEFAULT_LAMBDA
    m_normals: int = DEFAULT_M_NORMALS
    eps: float = DEFAULT_EPS
    linear_space: bool = False
    standardize: bool = True
    max_skip_fraction: float = 0.1
    beta: float = 1.0
    noise_scale: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        object.__setattr__(self, "projector", tuple(int(h) for h in self.projector))
        if self.embed_dim < 1:
            raise ValidationError("embed_dim must be positive")
        if self.epochs < 1 or self.batch_size < 2:
            raise ValidationError("need epochs >= 1 and batch_size >= 2")
        if not self.lam > 0:
            raise ValidationError("lambda must be positive")
        if not 0 < self.eps <= 1e-6:
            raise ValidationError("eps must lie in (0, 1e-6]")
        if not self.learning_rate > 0:
            raise ValidationError("learning_rate must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        d["projector"] = list(self.projector)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValidationError(f"unknown training options: {sorted(unknown)}")
        return cls(**d)

    def replace(self, **kw) -> "TrainConfig":
        return TrainConfig.from_dict({**self.to_dict(), **kw})


@dataclass
class InputScaler:
    center: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, X: np.ndarray, standardize: bool = True) -> "InputScaler":
        if not standardize:
            return cls(np.zeros(X.shape[1]), np.ones(X.shape[1]))
        sd = X.std(axis=0)
        return cls(X.mean(axis=0), np.where(sd > 1e-8, sd, 1.0))

    def __call__(self, X: np.ndarray) -> np.ndarray:
        return (X - self.center) / self.scale


class Embedder:
    """Anything that maps an expression matrix to a samples x d embedding."""

    kind: str
    genes: tuple[str, ...]

    def transform(self, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def encode(self, m: ExpressionMatrix) -> np.ndarray:
        if tuple(m.genes) != tuple(self.genes):
            raise ValidationError(
                "gene order does not match the training genes; reorder with select_genes()"
            )
        return self.transform(m.values)


def encode(model: Embedder, m: ExpressionMatrix) -> np.ndarray:
    """Embed ``m`` with a frozen model (encoder output, never the projector)."""
    return model.encode(m)


def minibatches(n: int, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Shuffled, nearly equal-sized batches covering all ``n`` rows."""
    if batch_size > n:
        raise ValidationError(f"batch size {batch_size} exceeds the {n} training samples")
    perm = rng.permutation(n)
    n_batches = max(n // batch_size, 1)
    return np.array_split(perm, n_batches)


class SkipCounter:
    """Tracks degenerate batches skipped during training."""

    def __init__(self, max_fraction: float):
        self.max_fraction = max_fraction
        self.skipped = 0
        self.total = 0

    def skip(self, exc: Exception, epoch: int) -> None:
        self.skipped += 1
        warnings.warn(f"epoch {epoch}: skipping degenerate batch ({exc})", RuntimeWarning, stacklevel=3)

    def finish(self) -> None:
        if self.total and self.skipped / self.total > self.max_fraction:
            raise DegenerateBatchError(
                f"{self.skipped} of {self.total} batches were degenerate"
            )
