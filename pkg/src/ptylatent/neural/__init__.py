"""From-scratch convolutional autoencoder stack."""

from .autoencoder import (Autoencoder, AutoencoderConfig, TrainConfig, TrainResult,
                          effective_rank, latent_mean, matrix_rank, train_autoencoder)
from .mnist import filter_class, idx_load, load_split
from .optim import AdamState, adam_step, bce_grad, bce_loss
from .store import load_weights, save_weights

__all__ = [
    "AdamState", "Autoencoder", "AutoencoderConfig", "TrainConfig", "TrainResult",
    "adam_step", "bce_grad", "bce_loss", "effective_rank", "filter_class", "idx_load",
    "latent_mean", "load_split", "load_weights", "matrix_rank", "save_weights",
    "train_autoencoder",
]
