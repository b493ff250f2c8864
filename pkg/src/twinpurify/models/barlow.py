"""Twin-view encoders: TwinPurify (adjacent-normal views) and BT-noise."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from twinpurify.augment import MixtureSpec, make_view_batch
from twinpurify.data import ExpressionMatrix
from twinpurify.errors import DegenerateBatchError, ValidationError
from twinpurify.models.base import (
    Embedder,
    InputScaler,
    SkipCounter,
    TrainConfig,
    minibatches,
)
from twinpurify.models.objective import redundancy_loss
from twinpurify.nn import MLP, AdamState, MLPSpec, adam_step, forward


def encoder_spec(n_genes: int, cfg: TrainConfig) -> MLPSpec:
    return MLPSpec((n_genes, *cfg.hidden, cfg.embed_dim), "relu", "identity")


def projector_spec(cfg: TrainConfig) -> MLPSpec:
    n = len(cfg.projector)
    bn = (cfg.projector_batch_norm,) * (n - 1) + (False,)
    return MLPSpec((cfg.embed_dim, *cfg.projector), "relu", "identity", bn)


@dataclass
class TwinPurifyModel(Embedder):
    """Encoder + projector trained with the redundancy-reduction objective.

    ``kind`` is ``"TP"`` for adjacent-normal views and ``"BTNoise"`` for
    Gaussian-noise views (``noise_sd`` then holds the per-gene noise level
    in input units).
    """

    genes: tuple[str, ...]
    scaler: InputScaler
    encoder: MLP
    projector: MLP
    config: TrainConfig
    kind: str = "TP"
    noise_sd: np.ndarray | None = None
    loss_trace: list = field(default_factory=list)

    def __post_init__(self):
        if self.encoder.spec.out_width != self.projector.spec.in_width:
            raise ValidationError("encoder output width must equal projector input width")

    @property
    def mixture(self) -> MixtureSpec:
        c = self.config
        return MixtureSpec(c.alpha, c.m_normals, c.seed, c.linear_space)

    def transform(self, X: np.ndarray) -> np.ndarray:
        return self.encoder(self.scaler(np.asarray(X, dtype=np.float64)))

    def parameters(self) -> dict:
        """Flat view (shared arrays) of encoder and projector parameters."""
        out = {f"enc.{k}": v for k, v in self.encoder.params.items()}
        out.update({f"proj.{k}": v for k, v in self.projector.params.items()})
        return out

    def loss_and_grads(self, V1: np.ndarray, V2: np.ndarray, train: bool = True, input_grads: bool = True):
        """Objective and gradients for a batch of raw (unscaled) views.

        Returns ``(loss, grads, grad_V1, grad_V2)``; ``grads`` uses the keys
        of :meth:`parameters`. The view gradients are None when
        ``input_grads`` is False.
        """
        enc, proj = self.encoder, self.projector
        lam, eps = self.config.lam, self.config.eps
        B = V1.shape[0]
        if V2.shape != V1.shape:
            raise ValidationError("the two views must have the same shape")
        # the encoder has no batch statistics, so both views share one pass
        V = self.scaler(np.vstack([V1, V2]))
        H, ce = forward(enc.spec, enc.params, V, enc.buffers, train)
        P1, d1 = forward(proj.spec, proj.params, H[:B], proj.buffers, train)
        P2, d2 = forward(proj.spec, proj.params, H[B:], proj.buffers, train)
        loss, _, gP1, gP2 = redundancy_loss(P1, P2, lam, eps)
        g1, gH1 = proj.backward(d1, gP1)
        g2, gH2 = proj.backward(d2, gP2)
        ge, gV = enc.backward(ce, np.vstack([gH1, gH2]), input_grads)
        grads = {f"proj.{k}": g1[k] + g2[k] for k in g1}
        grads.update({f"enc.{k}": v for k, v in ge.items()})
        if not input_grads:
            return loss, grads, None, None
        gV = gV / self.scaler.scale
        return loss, grads, gV[:B], gV[B:]


def _init_model(genes, X, cfg: TrainConfig, kind: str) -> TwinPurifyModel:
    init_rng = np.random.default_rng([cfg.seed, 0])
    scaler = InputScaler.fit(X, cfg.standardize)
    encoder = MLP(encoder_spec(len(genes), cfg), rng=init_rng)
    projector = MLP(projector_spec(cfg), rng=init_rng)
    return TwinPurifyModel(tuple(genes), scaler, encoder, projector, cfg, kind)


def _fit(model: TwinPurifyModel, X: np.ndarray, make_batch_views) -> TwinPurifyModel:
    cfg = model.config
    opt_enc = AdamState(cfg.learning_rate)
    opt_proj = AdamState(cfg.learning_rate)
    enc_keys = {f"enc.{k}": k for k in model.encoder.params}
    proj_keys = {f"proj.{k}": k for k in model.projector.params}
    skips = SkipCounter(cfg.max_skip_fraction)
    trace = []
    for epoch in range(cfg.epochs):
        shuffle_rng = np.random.default_rng([cfg.seed, 1, epoch])
        view_rng = np.random.default_rng([cfg.seed, 2, epoch])
        losses = []
        for idx in minibatches(len(X), cfg.batch_size, shuffle_rng):
            skips.total += 1
            V1, V2 = make_batch_views(X[idx], view_rng)
            try:
                loss, grads, _, _ = model.loss_and_grads(V1, V2, input_grads=False)
            except DegenerateBatchError as exc:
                skips.skip(exc, epoch)
                continue
            adam_step(opt_enc, model.encoder.params, {enc_keys[k]: v for k, v in grads.items() if k in enc_keys})
            adam_step(opt_proj, model.projector.params, {proj_keys[k]: v for k, v in grads.items() if k in proj_keys})
            losses.append(loss)
        trace.append(float(np.mean(losses)) if losses else float("nan"))
    skips.finish()
    model.loss_trace = trace
    return model


def _tumor_values(data: ExpressionMatrix | np.ndarray) -> tuple[tuple, np.ndarray]:
    if isinstance(data, ExpressionMatrix):
        return data.genes, data.values
    X = np.asarray(data, dtype=np.float64)
    return tuple(f"g{j}" for j in range(X.shape[1])), X


def train_twinpurify(
    data: ExpressionMatrix | np.ndarray,
    normal_pool: ExpressionMatrix | np.ndarray,
    config: TrainConfig = TrainConfig(),
) -> TwinPurifyModel:
    """Train on tumor rows of ``data`` with views built from ``normal_pool``.

    Each occurrence of a sample in a batch gets two fresh synthetic normals
    (``m_normals`` pool rows with flat-Dirichlet weights) mixed in at tumor
    fraction ``alpha``. The per-epoch mean loss is stored on the returned
    model as ``loss_trace``.
    """
    genes, X = _tumor_values(data)
    pool = normal_pool.values if isinstance(normal_pool, ExpressionMatrix) else np.asarray(normal_pool, float)
    if isinstance(normal_pool, ExpressionMatrix) and tuple(normal_pool.genes) != tuple(genes):
        raise ValidationError("normal pool genes differ from training genes")
    if pool.shape[0] < config.m_normals:
        raise ValidationError(f"normal pool has {pool.shape[0]} rows, need {config.m_normals}")
    if config.batch_size > X.shape[0]:
        raise ValidationError(f"batch size {config.batch_size} exceeds {X.shape[0]} tumor samples")
    model = _init_model(genes, X, config, "TP")
    spec = model.mixture
    return _fit(model, X, lambda Xb, rng: make_view_batch(Xb, pool, spec, rng))


def train_bt_noise(
    data: ExpressionMatrix | np.ndarray,
    config: TrainConfig = TrainConfig(),
    noise_sd: float | np.ndarray | None = None,
) -> TwinPurifyModel:
    """Same network and objective, views are ``x + N(0, noise_sd^2)`` per gene.

    By default ``noise_sd`` is ``config.noise_scale`` times the per-gene
    training standard deviation.
    """
    genes, X = _tumor_values(data)
    if config.batch_size > X.shape[0]:
        raise ValidationError(f"batch size {config.batch_size} exceeds {X.shape[0]} tumor samples")
    if noise_sd is None:
        noise_sd = config.noise_scale * X.std(axis=0)
        if not (noise_sd > 0).any():
            raise ValidationError("noise_sd must be positive")
    noise_sd = np.broadcast_to(np.asarray(noise_sd, dtype=np.float64), (X.shape[1],)).copy()
    if (noise_sd < 0).any() or not (noise_sd > 0).any():
        raise ValidationError("noise_sd must be positive")
    model = _init_model(genes, X, config, "BTNoise")
    model.noise_sd = noise_sd

    def views(Xb, rng):
        return (
            Xb + rng.normal(size=Xb.shape) * noise_sd,
            Xb + rng.normal(size=Xb.shape) * noise_sd,
        )

    return _fit(model, X, views)


def tp_gradient_check(
    config: TrainConfig = TrainConfig(),
    n_samples: int = 4,
    n_genes: int = 8,
    seed: int = 0,
    h: float = 1e-6,
    max_coords: int | None = 50,
):
    """Finite-difference check of the full twin-view objective.

    Builds a random model and a random pair of views, then compares the
    analytic gradients of every parameter block and of both views with
    central differences. Biases are drawn at random so that no ReLU sits
    exactly on its kink.

    Returns
    -------
    GradCheckResult
        Blocks are named ``enc.*``, ``proj.*``, ``view1`` and ``view2``.
    """
    from twinpurify.nn import finite_diff_check

    rng = np.random.default_rng([seed, 99])
    genes = tuple(f"g{j}" for j in range(n_genes))
    X = rng.normal(size=(max(n_samples, 2), n_genes))
    model = _init_model(genes, X, config, "TP")
    for net in (model.encoder, model.projector):
        for k, v in net.params.items():
            if k.startswith("b") or k.startswith("beta"):
                v[...] = rng.normal(scale=0.1, size=v.shape)
            elif k.startswith("gamma"):
                v[...] = 1.0 + rng.normal(scale=0.1, size=v.shape)
    V1 = rng.normal(size=(n_samples, n_genes))
    V2 = rng.normal(size=(n_samples, n_genes))
    params = dict(model.parameters())
    params["view1"], params["view2"] = V1, V2

    def lossfn(p):
        loss, grads, g1, g2 = model.loss_and_grads(p["view1"], p["view2"])
        grads = dict(grads)
        grads["view1"], grads["view2"] = g1, g2
        return loss, grads

    return finite_diff_check(lossfn, params, h=h, max_coords=max_coords, rng=np.random.default_rng([seed, 98]))
