"""Synthetic dilution benchmark: train every family on one cohort, dilute, classify.

The per-family settings in :data:`FAMILY_OVERRIDES` are part of the
protocol. The redundancy-reduction models see only four optimizer steps
per epoch on a 300-tumor cohort and need more epochs to settle; the
reconstruction baselines do better with smaller batches.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from twinpurify.augment import DilutionSpec
from twinpurify.classify import DilutionReport, dilution_eval
from twinpurify.data import NORMAL, TUMOR, split_cohort
from twinpurify.errors import ValidationError
from twinpurify.models import TrainConfig, pca_fit, train_autoencoder, train_bt_noise, train_twinpurify
from twinpurify.synth import PN, SynthConfig, generate_cohort

DILUTION_FAMILIES = ("TP", "PCA", "AE", "VAE")
FAMILY_OVERRIDES = {
    "TP": {"epochs": 400},
    "BTNoise": {"epochs": 400},
    "AE": {"batch_size": 32},
    "VAE": {"batch_size": 32},
    "PCA": {},
}
BENCHMARK_RATES = (0.0, 0.2, 0.4, 0.6, 0.8, 1.0)


def family_config(family: str, base: TrainConfig = TrainConfig()) -> TrainConfig:
    if family not in FAMILY_OVERRIDES:
        raise ValidationError(f"unknown model family {family!r}")
    return base.replace(**FAMILY_OVERRIDES[family])


def fit_family(family: str, train, config: TrainConfig):
    """Fit one family on the training split (tumors; TP also uses its normals)."""
    tumors = train.select_kind(TUMOR)
    if family == "TP":
        return train_twinpurify(tumors, train.select_kind(NORMAL), config)
    if family == "BTNoise":
        return train_bt_noise(tumors, config)
    if family in ("AE", "VAE"):
        return train_autoencoder(tumors, config, family)
    if family == "PCA":
        return pca_fit(tumors, config.embed_dim)
    raise ValidationError(f"unknown model family {family!r}")


@dataclass
class BenchmarkRun:
    seed: int
    reports: dict  # family -> DilutionReport

    def macro_f1(self, family: str, rate: float) -> float:
        rep: DilutionReport = self.reports[family]
        return rep.macro_f1[rep.rates.index(rate)]

    def pn_fraction(self, family: str, rate: float = 1.0) -> float:
        rep = self.reports[family]
        return float(np.mean(rep.trajectories[:, rep.rates.index(rate)] == PN))


def dilution_benchmark(
    seed: int,
    synth: SynthConfig = SynthConfig(),
    families=DILUTION_FAMILIES,
    base: TrainConfig = TrainConfig(),
    rates=BENCHMARK_RATES,
    train_fraction: float = 0.8,
) -> BenchmarkRun:
    """One seed of the benchmark.

    The cohort, the stratified split, model training and the dilution
    streams all derive from ``seed``. Classifiers are trained on clean
    training embeddings of tumors and adjacent normals (label PN). The test
    split keeps its adjacent normals as the PN reference and also serves as
    the dilution pool.
    """
    cohort, _ = generate_cohort(SynthConfig.from_dict({**synth.to_dict(), "seed": seed}))
    split = split_cohort(cohort, train_fraction, "subtype", seed)
    train, test = cohort.take(split.train_indices), cohort.take(split.test_indices)
    pool = test.select_kind(NORMAL)
    spec = DilutionSpec(rates=tuple(rates), seed=seed, m_normals=base.m_normals, linear_space=base.linear_space)
    reports = {}
    for fam in families:
        model = fit_family(fam, train, family_config(fam, base.replace(seed=seed)))
        reports[fam] = dilution_eval(model, train, test, pool, spec, name=fam)
    return BenchmarkRun(seed, reports)
