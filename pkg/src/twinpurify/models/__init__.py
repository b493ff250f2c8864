"""Embedding models: TwinPurify, BT-noise, AE, VAE and PCA."""

from twinpurify.models.autoencoder import AutoencoderModel, train_autoencoder
from twinpurify.models.barlow import TwinPurifyModel, train_bt_noise, train_twinpurify
from twinpurify.models.base import Embedder, TrainConfig, encode
from twinpurify.models.io import load_model, save_model
from twinpurify.models.objective import (
    batch_normalize_columns,
    cross_correlation,
    redundancy_loss,
    tp_loss,
)
from twinpurify.models.pca import PCAModel, pca_fit, pca_transform

__all__ = [
    "AutoencoderModel",
    "Embedder",
    "PCAModel",
    "TrainConfig",
    "TwinPurifyModel",
    "batch_normalize_columns",
    "cross_correlation",
    "encode",
    "load_model",
    "pca_fit",
    "pca_transform",
    "redundancy_loss",
    "save_model",
    "tp_loss",
    "train_autoencoder",
    "train_bt_noise",
    "train_twinpurify",
]
