"""Toy controllable video diffusion: EDM math, networks, training and sampling."""

from .checkpoint import load_checkpoint, save_checkpoint
from .edm import (
    SIGMA_MAX,
    SIGMA_MIN,
    EDMSchedule,
    add_noise,
    denoise_step,
    input_scale,
    log_uniform_sigmas,
    loss_weighted,
    noise_embedding,
    precondition,
    sample,
)
from .estimator import ToyRelighter
from .model import ControlBranch, ControlledDenoiser, ToyDenoiser, coord_planes
from .training import (
    REFERENCE_OPTIMIZER,
    Batch,
    TrainState,
    batch_loss,
    evaluation_loss,
    init_state,
    log_uniform_sampler,
    make_optimizer,
    training_step,
)

__all__ = [
    "REFERENCE_OPTIMIZER", "SIGMA_MAX", "SIGMA_MIN", "Batch", "ControlBranch", "ControlledDenoiser", "EDMSchedule",
    "ToyDenoiser", "ToyRelighter", "TrainState", "add_noise", "batch_loss", "coord_planes", "denoise_step",
    "evaluation_loss", "init_state", "input_scale", "load_checkpoint", "log_uniform_sampler", "log_uniform_sigmas",
    "loss_weighted", "make_optimizer", "noise_embedding", "precondition", "sample", "save_checkpoint",
    "training_step",
]
