"""Checkpoint round-trips for every model kind.

Training draws from counter-based streams ``default_rng([seed, stream,
epoch])``, so the generator state after training is fully described by
the seed and the number of completed epochs; both are stored under
``meta["rng"]``.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from twinpurify.errors import ValidationError
from twinpurify.models.autoencoder import AutoencoderModel
from twinpurify.models.barlow import TwinPurifyModel
from twinpurify.models.base import InputScaler, TrainConfig
from twinpurify.models.pca import PCAModel
from twinpurify.nn import MLP, MLPSpec, load_checkpoint, save_checkpoint


def save_model(model, path: str | Path) -> Path:
    meta = {"kind": model.kind, "genes": list(model.genes)}
    arrays = {}
    if isinstance(model, PCAModel):
        arrays.update(mean=model.mean, components=model.components, explained_variance=model.explained_variance)
    elif isinstance(model, (TwinPurifyModel, AutoencoderModel)):
        meta["config"] = model.config.to_dict()
        meta["loss_trace"] = list(model.loss_trace)
        meta["rng"] = {
            "bit_generator": "PCG64",
            "streams": "default_rng([seed, stream, epoch])",
            "seed": model.config.seed,
            "epochs_completed": len(model.loss_trace),
        }
        arrays["scaler.center"] = model.scaler.center
        arrays["scaler.scale"] = model.scaler.scale
        second = "projector" if isinstance(model, TwinPurifyModel) else "decoder"
        for name in ("encoder", second):
            net = getattr(model, name)
            meta[f"{name}_spec"] = net.spec.to_dict()
            arrays.update(net.state_arrays(name))
        if getattr(model, "noise_sd", None) is not None:
            arrays["noise_sd"] = model.noise_sd
    else:
        raise ValidationError(f"cannot save object of type {type(model).__name__}")
    return save_checkpoint(path, meta, arrays)


def load_model(path: str | Path):
    meta, arrays = load_checkpoint(path)
    kind = meta.get("kind")
    genes = tuple(meta["genes"])
    if kind == "PCA":
        return PCAModel(genes, arrays["mean"], arrays["components"], arrays["explained_variance"])
    if kind not in ("TP", "BTNoise", "AE", "VAE"):
        raise ValidationError(f"unknown model kind {kind!r} in {path}")
    cfg = TrainConfig.from_dict(meta["config"])
    scaler = InputScaler(arrays["scaler.center"], arrays["scaler.scale"])
    second = "projector" if kind in ("TP", "BTNoise") else "decoder"
    enc = MLP.from_arrays(MLPSpec.from_dict(meta["encoder_spec"]), arrays, "encoder")
    other = MLP.from_arrays(MLPSpec.from_dict(meta[f"{second}_spec"]), arrays, second)
    if kind in ("TP", "BTNoise"):
        model = TwinPurifyModel(genes, scaler, enc, other, cfg, kind, arrays.get("noise_sd"))
    else:
        model = AutoencoderModel(genes, scaler, enc, other, cfg, kind)
    model.loss_trace = list(meta.get("loss_trace", []))
    return model
