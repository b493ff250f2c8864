"""Synthetic cohorts with planted tumor programs, purity and survival.

Generative model, in linear expression units:

* every gene has a baseline level ``b_g`` (log-uniform between 2^3 and 2^9);
* each subtype owns a disjoint block of genes with sparse +-1 loadings
  ``L_s``; ``n_normal_programs`` further blocks carry the normal programs
  ``L_Nq`` (think stroma, immune, adipose);
* subtype profile ``P_s = b * 2^(strength * L_s)`` and normal profile
  ``N_j = b * 2^(strength * sum_q a_jq * L_Nq)``, where the activities
  ``a_jq`` vary per sample with sd ``normal_activity_sd`` around 1;
* tumor ``i = p_i * P_s + (1 - p_i) * N_i + noise``; normal ``j = N_j + noise``
  with noise ``N(0, (noise_sd * b_g)^2)``;
* the whole cohort is shifted to be non-negative, then log2(x + 1).

Tumor grade is the tertile (1..3) of effective program strength
``p_i * strength``; adjacent normals get grade 0 and subtype ``PN``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace

import numpy as np

from twinpurify.data import NORMAL, TUMOR, ExpressionMatrix, SampleMeta
from twinpurify.errors import ValidationError

PN = "PN"
_NAMES = ("Basal", "Her2", "LumA", "LumB")


@dataclass(frozen=True)
class SynthConfig:
    """Generator settings.

    Subtype programs load on disjoint gene blocks of ``block_fraction *
    n_genes`` genes each; ``n_normal_programs`` further blocks carry the
    normal background. Every normal profile (adjacent normals and the
    normal part of each tumor) draws its program activities from
    ``N(1, normal_activity_sd^2)``, so the background varies between
    samples unless that sd is 0.
    """

    n_genes: int = 2000
    n_tumor: int = 300
    n_normal: int = 80
    n_subtypes: int = 3
    program_strength: float = 2.5
    purity_range: tuple[float, float] = (0.3, 0.9)
    noise_sd: float = 0.15
    hazard_weights: tuple[float, ...] | None = None
    seed: int = 0
    block_fraction: float = 0.12
    loading_density: float = 1.0
    normal_activity_sd: float = 0.5
    n_normal_programs: int = 3
    base_hazard: float = 1.0 / 60.0
    censor_max_time: float | None = 240.0

    def __post_init__(self):
        object.__setattr__(self, "purity_range", tuple(float(p) for p in self.purity_range))
        if self.hazard_weights is not None:
            object.__setattr__(self, "hazard_weights", tuple(float(w) for w in self.hazard_weights))
        lo, hi = self.purity_range
        if self.n_subtypes < 2:
            raise ValidationError("n_subtypes must be at least 2")
        if not 0.0 <= lo <= hi <= 1.0:
            raise ValidationError("purity_range must satisfy 0 <= low <= high <= 1")
        if self.noise_sd < 0 or self.normal_activity_sd < 0:
            raise ValidationError("noise levels must be non-negative")
        if self.n_genes < self.n_subtypes:
            raise ValidationError("n_genes < n_subtypes: programs cannot be made distinguishable")
        if self.n_tumor < 1 or self.n_normal < 0:
            raise ValidationError("need at least one tumor sample")
        if self.hazard_weights is not None and len(self.hazard_weights) != self.n_subtypes:
            raise ValidationError("hazard_weights needs one entry per subtype")
        if self.n_normal_programs < 1:
            raise ValidationError("need at least one normal program")
        if not 0.0 < self.block_fraction <= 1.0 / (self.n_subtypes + self.n_normal_programs):
            raise ValidationError("block_fraction too large for disjoint blocks")

    @property
    def subtype_names(self) -> tuple[str, ...]:
        if self.n_subtypes <= len(_NAMES):
            return _NAMES[: self.n_subtypes]
        return tuple(f"S{k + 1}" for k in range(self.n_subtypes))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["purity_range"] = list(self.purity_range)
        if self.hazard_weights is not None:
            d["hazard_weights"] = list(self.hazard_weights)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValidationError(f"unknown synth options: {sorted(unknown)}")
        return cls(**d)


@dataclass
class SynthTruth:
    """Planted ground truth returned next to the cohort."""

    baseline: np.ndarray
    loadings: np.ndarray  # n_subtypes x n_genes
    normal_loading: np.ndarray  # n_normal_programs x n_genes
    blocks: list  # gene index arrays, one per subtype
    normal_blocks: list
    purity: np.ndarray  # per sample; 0 for adjacent normals
    subtype_index: np.ndarray  # -1 for adjacent normals

    def block_genes(self, genes, k: int) -> list[str]:
        return [genes[j] for j in self.blocks[k]]


def _blocks(cfg: SynthConfig, rng):
    size = max(int(round(cfg.block_fraction * cfg.n_genes)), 1)
    perm = rng.permutation(cfg.n_genes)
    K = cfg.n_subtypes
    blocks = [np.sort(perm[k * size:(k + 1) * size]) for k in range(K + cfg.n_normal_programs)]
    return blocks[:K], blocks[K:]


def _loading(n_genes, block, density, rng):
    L = np.zeros(n_genes)
    signs = rng.choice([-1.0, 1.0], size=block.size)
    keep = rng.random(block.size) < density
    if not keep.any():
        keep[0] = True
    L[block[keep]] = signs[keep]
    return L


def generate_cohort(cfg: SynthConfig = SynthConfig()) -> tuple[ExpressionMatrix, SynthTruth]:
    """Draw a cohort; metadata carries subtype, grade and (if configured) survival."""
    rng = np.random.default_rng([cfg.seed, 11])
    G, K = cfg.n_genes, cfg.n_subtypes
    baseline = np.exp2(rng.uniform(3.0, 9.0, size=G))
    blocks, normal_blocks = _blocks(cfg, rng)
    L = np.stack([_loading(G, b, cfg.loading_density, rng) for b in blocks])
    LN = np.stack([_loading(G, b, cfg.loading_density, rng) for b in normal_blocks])

    sub = np.arange(cfg.n_tumor) % K
    sub = rng.permutation(sub)
    lo, hi = cfg.purity_range
    purity = rng.uniform(lo, hi, size=cfg.n_tumor) if hi > lo else np.full(cfg.n_tumor, lo)

    def normal_profiles(n):
        Q = cfg.n_normal_programs
        act = 1.0 + cfg.normal_activity_sd * rng.standard_normal((n, Q)) if cfg.normal_activity_sd else np.ones((n, Q))
        return baseline * np.exp2(cfg.program_strength * (act @ LN))

    programs = baseline * np.exp2(cfg.program_strength * L)
    tumor = purity[:, None] * programs[sub] + (1.0 - purity[:, None]) * normal_profiles(cfg.n_tumor)
    normal = normal_profiles(cfg.n_normal)
    raw = np.vstack([tumor, normal])
    if cfg.noise_sd > 0:
        raw = raw + rng.standard_normal(raw.shape) * (cfg.noise_sd * baseline)
    raw = raw + max(0.0, -raw.min())
    values = np.log2(raw + 1.0)

    names = cfg.subtype_names
    strength = purity * cfg.program_strength
    grade = _tertiles(strength)
    samples = [
        SampleMeta(f"T{i:04d}", TUMOR, names[sub[i]], int(grade[i])) for i in range(cfg.n_tumor)
    ] + [SampleMeta(f"N{j:04d}", NORMAL, PN, 0) for j in range(cfg.n_normal)]
    genes = tuple(f"G{j:05d}" for j in range(G))
    m = ExpressionMatrix(genes, samples, values)

    truth = SynthTruth(
        baseline,
        L,
        LN,
        blocks,
        normal_blocks,
        np.concatenate([purity, np.zeros(cfg.n_normal)]),
        np.concatenate([sub, -np.ones(cfg.n_normal, dtype=int)]),
    )
    if cfg.hazard_weights is not None:
        m = generate_survival(m, cfg.hazard_weights, cfg.seed, cfg.base_hazard, cfg.censor_max_time, names)
    return m, truth


def _tertiles(x: np.ndarray) -> np.ndarray:
    if x.size == 0:
        return x.astype(int)
    q1, q2 = np.quantile(x, [1 / 3, 2 / 3])
    return np.where(x <= q1, 1, np.where(x <= q2, 2, 3))


def generate_survival(
    m: ExpressionMatrix,
    hazard_weights,
    seed: int,
    base_hazard: float = 1.0 / 60.0,
    censor_max_time: float | None = 240.0,
    subtype_names=None,
) -> ExpressionMatrix:
    """Attach exponential survival times with subtype-dependent hazard.

    Hazard for subtype k is ``base_hazard * exp(hazard_weights[k])``;
    censoring times are uniform on ``[0, censor_max_time]`` (no censoring
    when it is None). Adjacent normals are left without survival data.
    """
    tumors = [i for i, s in enumerate(m.samples) if s.kind == TUMOR]
    if subtype_names is None:
        subtype_names = sorted({m.samples[i].subtype for i in tumors if m.samples[i].subtype is not None})
    index = {name: k for k, name in enumerate(subtype_names)}
    if len(hazard_weights) != len(index):
        raise ValidationError("hazard_weights needs one entry per subtype")
    rng = np.random.default_rng([seed, 23])
    samples = list(m.samples)
    for i in tumors:
        s = samples[i]
        if s.subtype not in index:
            raise ValidationError(f"sample {s.sample_id} has no subtype")
        rate = base_hazard * np.exp(hazard_weights[index[s.subtype]])
        t_event = rng.exponential(1.0 / rate)
        if censor_max_time is None:
            t, ev = t_event, True
        else:
            t_cens = rng.uniform(0.0, censor_max_time)
            t, ev = min(t_event, t_cens), bool(t_event <= t_cens)
        samples[i] = replace(s, surv_time=float(t), surv_event=ev)
    return m.with_samples(samples)
