"""EDM preconditioning, noise schedules and the deterministic sampler.

Signal scale is fixed at sigma_data = 1. Noisy samples are ``x = x0 + sigma * eps``
and the denoiser is ``D(x) = c_skip * x + c_out * F(x)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
import torch

SIGMA_DATA = 1.0
SIGMA_MIN = 0.02
SIGMA_MAX = 80.0


def _check_positive(sigma) -> None:
    if isinstance(sigma, torch.Tensor):
        ok = bool(torch.all(sigma > 0))
    else:
        ok = bool(np.all(np.asarray(sigma) > 0))
    if not ok:
        raise ValueError(f"sigma must be > 0, got {sigma}")


def precondition(sigma):
    """(c_skip, c_out, w) for scalar, array or tensor ``sigma``."""
    _check_positive(sigma)
    s2 = sigma * sigma
    c_skip = 1.0 / (1.0 + s2)
    c_out = sigma / (1.0 + s2) ** 0.5
    w = (1.0 + s2) / s2
    return c_skip, c_out, w


def input_scale(sigma):
    """c_in, which keeps the network input at unit variance."""
    return 1.0 / (SIGMA_DATA**2 + sigma * sigma) ** 0.5


def noise_embedding(sigma):
    if isinstance(sigma, torch.Tensor):
        return torch.log(sigma) / 4
    return np.log(sigma) / 4


def add_noise(clean, sigma, seed: int | None = None, *, generator: torch.Generator | None = None):
    """``clean + sigma * eps`` with standard Gaussian ``eps``.

    numpy input draws from ``default_rng(seed)``; tensor input from a torch
    generator (``generator`` wins over ``seed``). ``sigma`` may be a scalar or
    broadcast against the leading axis.
    """
    _check_positive(sigma)
    if isinstance(clean, torch.Tensor):
        if generator is None:
            generator = torch.Generator().manual_seed(0 if seed is None else int(seed))
        eps = torch.randn(clean.shape, generator=generator, dtype=clean.dtype)
        return clean + _expand(sigma, clean) * eps
    clean = np.asarray(clean, dtype=np.float64)
    eps = np.random.default_rng(seed).standard_normal(clean.shape)
    return clean + _expand(sigma, clean) * eps


def _expand(sigma, like):
    if isinstance(sigma, torch.Tensor) and sigma.ndim:
        return sigma.reshape(-1, *([1] * (like.ndim - 1)))
    if isinstance(sigma, np.ndarray) and sigma.ndim:
        return sigma.reshape(-1, *([1] * (like.ndim - 1)))
    return sigma


def log_uniform_sigmas(generator: torch.Generator, n: int, lo: float = SIGMA_MIN, hi: float = SIGMA_MAX,
                       dtype=torch.float32) -> torch.Tensor:
    u = torch.rand(n, generator=generator, dtype=torch.float64)
    return torch.exp(math.log(lo) + u * (math.log(hi) - math.log(lo))).to(dtype)


@dataclass(frozen=True)
class EDMSchedule:
    """Descending noise levels for sampling. The sampler always ends at sigma = 0."""

    sigmas: tuple[float, ...]
    sigma_data: float = SIGMA_DATA

    def __post_init__(self):
        s = tuple(float(v) for v in self.sigmas)
        if not s:
            raise ValueError("schedule needs at least one sigma")
        if any(not math.isfinite(v) or v <= 0 for v in s):
            raise ValueError("sigmas must be finite and > 0")
        if any(b >= a for a, b in zip(s, s[1:])):
            raise ValueError("sigmas must be strictly decreasing")
        if self.sigma_data != SIGMA_DATA:
            raise ValueError("only sigma_data = 1 is supported")
        object.__setattr__(self, "sigmas", s)

    def __len__(self):
        return len(self.sigmas)

    @classmethod
    def karras(cls, steps: int, sigma_min: float = SIGMA_MIN, sigma_max: float = SIGMA_MAX,
               rho: float = 7.0) -> "EDMSchedule":
        """Power-law spacing from the EDM reference sampler."""
        if steps < 1:
            raise ValueError("steps must be >= 1")
        if steps == 1:
            return cls((sigma_max,))
        i = np.arange(steps) / (steps - 1)
        lo, hi = sigma_min ** (1 / rho), sigma_max ** (1 / rho)
        return cls(tuple((hi + i * (lo - hi)) ** rho))


Denoiser = Callable[..., torch.Tensor]


def _check_shapes(x: torch.Tensor, cond: torch.Tensor, control) -> None:
    if x.ndim != 5 or x.shape[-1] != 3:
        raise ValueError(f"expected x of shape (B, N, H, W, 3), got {tuple(x.shape)}")
    b, n, h, w, _ = x.shape
    if tuple(cond.shape) != (b, h, w, 3):
        raise ValueError(f"cond shape {tuple(cond.shape)} does not match x {tuple(x.shape)}")
    if control is not None and tuple(control.shape[:4]) != (b, n, h, w):
        raise ValueError(f"control shape {tuple(control.shape)} does not match x {tuple(x.shape)}")


def denoise_step(x_prev: torch.Tensor, sigma, cond: torch.Tensor, control, model: Denoiser) -> torch.Tensor:
    """``c_skip * x_prev + c_out * model(x_prev, sigma, cond, control)``.

    Accepts a single clip (N, H, W, 3) or a batch (B, N, H, W, 3). ``model``
    is any callable with that signature, so analytic stubs work too.
    """
    single = x_prev.ndim == 4
    if single:
        x_prev, cond = x_prev[None], cond[None]
        control = None if control is None else control[None]
    _check_shapes(x_prev, cond, control)
    sigma = torch.as_tensor(sigma, dtype=x_prev.dtype)
    if sigma.ndim == 0:
        sigma = sigma.expand(x_prev.shape[0])
    c_skip, c_out, _ = precondition(sigma)
    out = _expand(c_skip, x_prev) * x_prev + _expand(c_out, x_prev) * model(x_prev, sigma, cond, control)
    return out[0] if single else out


@torch.no_grad()
def sample(model: Denoiser, first_frame, control, schedule: EDMSchedule, seed: int = 0,
           n_frames: int | None = None) -> torch.Tensor:
    """Deterministic first-order sampler from sigma_max noise down to sigma = 0.

    ``control`` fixes the clip shape (N, H, W, ·); batched inputs carry a
    leading B axis. Each step moves along ``(x - D) / sigma``; the last one
    lands on ``D`` itself.
    """
    first_frame = torch.as_tensor(first_frame)
    dtype = first_frame.dtype if first_frame.is_floating_point() else torch.float32
    first_frame = first_frame.to(dtype)
    single = first_frame.ndim == 3
    if control is not None:
        control = torch.as_tensor(control, dtype=dtype)
        if single:
            control = control[None]
        shape = (*control.shape[:4], 3)
    else:
        if n_frames is None:
            raise ValueError("need a control volume or n_frames")
        ff = first_frame[None] if single else first_frame
        shape = (ff.shape[0], n_frames, *ff.shape[1:])
    cond = first_frame[None] if single else first_frame
    gen = torch.Generator().manual_seed(int(seed))
    sigmas = list(schedule.sigmas) + [0.0]
    x = sigmas[0] * torch.randn(shape, generator=gen, dtype=torch.float64).to(dtype)
    for s, s_next in zip(sigmas, sigmas[1:]):
        d = denoise_step(x, s, cond, control, model)
        x = d + (s_next / s) * (x - d)
    return x[0] if single else x


def loss_weighted(d: torch.Tensor, clean: torch.Tensor, sigma: torch.Tensor) -> torch.Tensor:
    """Mean over batch and elements of ``w(sigma) * (D - x0)^2``."""
    _, _, w = precondition(sigma)
    return (_expand(w, d) * (d - clean) ** 2).mean()

