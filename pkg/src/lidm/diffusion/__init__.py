from lidm.diffusion.conditioning import embed_views, encode_condition_map, identity_provider
from lidm.diffusion.sampling import ddim_timesteps, sample_ddim, sample_ddpm
from lidm.diffusion.schedule import DiffusionConfig, Schedule, make_schedule, q_sample
from lidm.diffusion.train import DMTrainer, train_diffusion, training_loss
from lidm.diffusion.unet import UNet

__all__ = [
    "DMTrainer", "DiffusionConfig", "Schedule", "UNet", "ddim_timesteps", "embed_views",
    "encode_condition_map", "identity_provider", "make_schedule", "q_sample", "sample_ddim",
    "sample_ddpm", "train_diffusion", "training_loss",
]
