"""Optimizer state and the single weighted-denoising training step."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import torch

from .edm import SIGMA_MAX, SIGMA_MIN, add_noise, denoise_step, log_uniform_sigmas, loss_weighted
from .model import ControlledDenoiser

# Reference fine-tuning optimiser of the original large model; kept as a preset.
REFERENCE_OPTIMIZER = {"optimizer": "adamw", "learning_rate": 5e-5}

SigmaSampler = Callable[[torch.Generator, int], torch.Tensor]


def log_uniform_sampler(lo: float = SIGMA_MIN, hi: float = SIGMA_MAX) -> SigmaSampler:
    def draw(gen: torch.Generator, n: int) -> torch.Tensor:
        return log_uniform_sigmas(gen, n, lo, hi, dtype=torch.float64)
    return draw


@dataclass
class Batch:
    clean: torch.Tensor  # (B, N, H, W, 3)
    control: torch.Tensor  # (B, N, H, W, 5)
    cond: torch.Tensor  # (B, H, W, 3)
    ids: Sequence[int] = ()

    def __post_init__(self):
        if self.clean.ndim != 5 or len(self.clean) == 0:
            raise ValueError("batch must hold at least one (N, H, W, 3) clip")


@dataclass
class TrainState:
    model: ControlledDenoiser
    optimizer: torch.optim.Optimizer
    seed: int = 0
    frozen_base: bool = False
    grad_clip: float | None = None
    step: int = 0
    generator: torch.Generator = field(default=None)

    def __post_init__(self):
        if self.generator is None:
            self.generator = torch.Generator().manual_seed(int(self.seed))


def make_optimizer(params, optimizer: str = "sgd", learning_rate: float = 1e-3,
                   momentum: float = 0.9) -> torch.optim.Optimizer:
    params = list(params)
    if optimizer == "sgd":
        return torch.optim.SGD(params, lr=learning_rate, momentum=momentum)
    if optimizer == "adamw":
        return torch.optim.AdamW(params, lr=learning_rate)
    raise ValueError(f"unknown optimizer {optimizer!r}")


def init_state(channels: int = 32, seed: int = 0, *, frozen_base: bool = False, optimizer: str = "sgd",
               learning_rate: float = 1e-3, momentum: float = 0.9, grad_clip: float | None = None,
               dtype=torch.float32) -> TrainState:
    model = ControlledDenoiser(channels, seed=seed).to(dtype)
    model.set_frozen_base(frozen_base)
    opt = make_optimizer(model.trainable_parameters(), optimizer, learning_rate, momentum)
    return TrainState(model, opt, seed=seed, frozen_base=frozen_base, grad_clip=grad_clip)


def batch_loss(model, batch: Batch, sigma: torch.Tensor, noise_gen: torch.Generator) -> torch.Tensor:
    sigma = sigma.to(batch.clean.dtype)
    noisy = add_noise(batch.clean, sigma, generator=noise_gen)
    d = denoise_step(noisy, sigma, batch.cond, batch.control, model)
    return loss_weighted(d, batch.clean, sigma)


def training_step(state: TrainState, batch: Batch,
                  sigma_sampler: SigmaSampler | None = None) -> tuple[TrainState, float]:
    """One optimiser update on ``batch``; returns the state and the pre-update loss."""
    sigma_sampler = sigma_sampler or log_uniform_sampler()
    sigma = sigma_sampler(state.generator, len(batch.clean))
    state.model.train()
    loss = batch_loss(state.model, batch, sigma, state.generator)
    value = float(loss.detach())
    if not math.isfinite(value):
        raise FloatingPointError(
            f"non-finite loss {value} at step {state.step}: sigma={sigma.tolist()}, batch ids={list(batch.ids)}")
    state.optimizer.zero_grad(set_to_none=True)
    loss.backward()
    if state.grad_clip is not None:
        torch.nn.utils.clip_grad_norm_(state.model.trainable_parameters(), state.grad_clip)
    state.optimizer.step()
    state.step += 1
    return state, value


@torch.no_grad()
def evaluation_loss(model, batch: Batch, sigma: torch.Tensor, seed: int) -> float:
    """Loss at fixed noise levels and noise draw, for comparing checkpoints."""
    model.eval()
    return float(batch_loss(model, batch, sigma, torch.Generator().manual_seed(seed)))
