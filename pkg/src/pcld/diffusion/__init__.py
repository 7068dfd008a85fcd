from .denoiser import ConditionalDenoiser, load_denoiser, save_denoiser
from .purify import PurifyParams, forward_noise, purify, purify_batch, reverse_sde
from .schedule import NoiseSchedule, make_schedule
from .training import DenoiserTrainConfig, train_denoiser

__all__ = [
    "ConditionalDenoiser",
    "DenoiserTrainConfig",
    "NoiseSchedule",
    "PurifyParams",
    "forward_noise",
    "load_denoiser",
    "make_schedule",
    "purify",
    "purify_batch",
    "reverse_sde",
    "save_denoiser",
    "train_denoiser",
]
