from lidm.compression.config import CompressionConfig
from lidm.compression.losses import adversarial_losses, coordinates, perceptual_loss, reconstruction_loss
from lidm.compression.model import Autoencoder, CurveGAN, Decoder, Encoder, Quantizer
from lidm.compression.train import (
    AETrainer,
    images_to_tensor,
    reconstruct,
    reconstruction_error,
    train_autoencoder,
)

__all__ = [
    "AETrainer", "Autoencoder", "CompressionConfig", "CurveGAN", "Decoder", "Encoder", "Quantizer",
    "adversarial_losses", "coordinates", "images_to_tensor", "perceptual_loss", "reconstruct",
    "reconstruction_error", "reconstruction_loss", "train_autoencoder",
]
