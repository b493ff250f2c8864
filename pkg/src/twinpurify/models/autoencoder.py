"""Reconstruction baselines: plain autoencoder and VAE."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from twinpurify.data import ExpressionMatrix
from twinpurify.errors import NonFiniteError, ValidationError
from twinpurify.models.base import Embedder, InputScaler, TrainConfig, minibatches
from twinpurify.nn import MLP, AdamState, MLPSpec, adam_step

LOGVAR_CLIP = (-30.0, 20.0)


def gaussian_kl(mu: np.ndarray, logvar: np.ndarray) -> np.ndarray:
    """Per-row KL(N(mu, exp(logvar)) || N(0, I))."""
    return -0.5 * (1.0 + logvar - mu**2 - np.exp(logvar)).sum(axis=1)


@dataclass
class AutoencoderModel(Embedder):
    """AE (``kind="AE"``) or VAE (``kind="VAE"``).

    The VAE encoder emits ``2 * embed_dim`` values: posterior means then
    log-variances. :meth:`transform` returns the posterior mean.
    """

    genes: tuple[str, ...]
    scaler: InputScaler
    encoder: MLP
    decoder: MLP
    config: TrainConfig
    kind: str = "AE"
    loss_trace: list = field(default_factory=list)

    def transform(self, X: np.ndarray) -> np.ndarray:
        h = self.encoder(self.scaler(np.asarray(X, dtype=np.float64)))
        return h[:, : self.config.embed_dim]

    def parameters(self) -> dict:
        out = {f"enc.{k}": v for k, v in self.encoder.params.items()}
        out.update({f"dec.{k}": v for k, v in self.decoder.params.items()})
        return out

    def loss_and_grads(self, X: np.ndarray, eps_noise: np.ndarray | None = None):
        """Loss and parameter gradients on a batch of raw inputs.

        AE: mean squared error over all entries. VAE: per-sample
        ``0.5 * sum_g (x - x_hat)^2 + beta * KL``, averaged over the batch,
        with ``z = mu + exp(logvar / 2) * eps_noise``.
        """
        d = self.config.embed_dim
        Xs = self.scaler(X)
        B = Xs.shape[0]
        H, ce = self.encoder.forward(Xs, train=True)
        if self.kind == "VAE":
            mu = H[:, :d]
            raw_lv = H[:, d:]
            logvar = np.clip(raw_lv, *LOGVAR_CLIP)
            std = np.exp(0.5 * logvar)
            if eps_noise is None:
                eps_noise = np.zeros_like(mu)
            Z = mu + std * eps_noise
        else:
            Z = H
        R, cd = self.decoder.forward(Z, train=True)
        diff = R - Xs
        if self.kind == "VAE":
            kl = gaussian_kl(mu, logvar)
            loss = float((0.5 * (diff**2).sum(axis=1)).mean() + self.config.beta * kl.mean())
            gR = diff / B
        else:
            loss = float((diff**2).mean())
            gR = 2.0 * diff / diff.size
        if not np.isfinite(loss):
            raise NonFiniteError("non-finite reconstruction loss")
        gdec, gZ = self.decoder.backward(cd, gR)
        if self.kind == "VAE":
            beta = self.config.beta
            gmu = gZ + beta * mu / B
            glv = gZ * eps_noise * 0.5 * std + beta * 0.5 * (np.exp(logvar) - 1.0) / B
            glv = glv * ((raw_lv >= LOGVAR_CLIP[0]) & (raw_lv <= LOGVAR_CLIP[1]))
            gH = np.concatenate([gmu, glv], axis=1)
        else:
            gH = gZ
        genc, _ = self.encoder.backward(ce, gH, False)
        grads = {f"enc.{k}": v for k, v in genc.items()}
        grads.update({f"dec.{k}": v for k, v in gdec.items()})
        return loss, grads


def train_autoencoder(
    data: ExpressionMatrix | np.ndarray,
    config: TrainConfig = TrainConfig(),
    variant: str = "AE",
) -> AutoencoderModel:
    """Train an AE or VAE with a ``config.embed_dim``-wide bottleneck."""
    if variant not in ("AE", "VAE"):
        raise ValidationError(f"unknown autoencoder variant {variant!r}")
    if isinstance(data, ExpressionMatrix):
        genes, X = data.genes, data.values
    else:
        X = np.asarray(data, dtype=np.float64)
        genes = tuple(f"g{j}" for j in range(X.shape[1]))
    if config.batch_size > X.shape[0]:
        raise ValidationError(f"batch size {config.batch_size} exceeds {X.shape[0]} samples")
    G = X.shape[1]
    code = config.embed_dim * (2 if variant == "VAE" else 1)
    init_rng = np.random.default_rng([config.seed, 0])
    encoder = MLP(MLPSpec((G, *config.hidden, code)), rng=init_rng)
    decoder = MLP(MLPSpec((config.embed_dim, *reversed(config.hidden), G)), rng=init_rng)
    model = AutoencoderModel(
        tuple(genes), InputScaler.fit(X, config.standardize), encoder, decoder, config, variant
    )
    opt_enc = AdamState(config.learning_rate)
    opt_dec = AdamState(config.learning_rate)
    trace = []
    for epoch in range(config.epochs):
        shuffle_rng = np.random.default_rng([config.seed, 1, epoch])
        noise_rng = np.random.default_rng([config.seed, 2, epoch])
        losses = []
        for idx in minibatches(len(X), config.batch_size, shuffle_rng):
            noise = noise_rng.standard_normal((len(idx), config.embed_dim)) if variant == "VAE" else None
            loss, grads = model.loss_and_grads(X[idx], noise)
            adam_step(opt_enc, encoder.params, {k[4:]: v for k, v in grads.items() if k.startswith("enc.")})
            adam_step(opt_dec, decoder.params, {k[4:]: v for k, v in grads.items() if k.startswith("dec.")})
            losses.append(loss)
        trace.append(float(np.mean(losses)))
    model.loss_trace = trace
    return model
