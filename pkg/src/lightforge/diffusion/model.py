"""Toy video denoiser and its control branch.

Clips are channels-last, (B, N, H, W, C), at the API boundary. Internally the
frames are folded into the batch axis and run through 2-D convolutions; the
only cross-frame path is a mean-over-frames mixing layer in the middle block.
"""

from __future__ import annotations

import copy

import torch
from torch import nn
from torch.nn import functional as F

from .edm import input_scale, noise_embedding

IMAGE_CHANNELS = 3
CONTROL_CHANNELS = 5


def coord_planes(h: int, w: int, dtype=torch.float32) -> torch.Tensor:
    """(H, W, 2) pixel-centre coordinates in [-1, 1]: x to the right, y up."""
    ys = (1 - (torch.arange(h, dtype=torch.float64) + 0.5) * 2 / h).to(dtype)
    xs = ((torch.arange(w, dtype=torch.float64) + 0.5) * 2 / w - 1).to(dtype)
    gy, gx = torch.meshgrid(ys, xs, indexing="ij")
    return torch.stack([gx, gy], dim=-1)


def _fold(t: torch.Tensor) -> torch.Tensor:
    b, n, h, w, c = t.shape
    return t.reshape(b * n, h, w, c).permute(0, 3, 1, 2)


def _zero_conv(channels: int) -> nn.Conv2d:
    conv = nn.Conv2d(channels, channels, 1)
    nn.init.zeros_(conv.weight)
    nn.init.zeros_(conv.bias)
    return conv


class ToyDenoiser(nn.Module):
    """Per-frame conv encoder, bottleneck with temporal mixing, decoder with one skip.

    Input channels: ``c_in * x`` (3), clean first frame (3), coordinates (2) and
    a constant ``c_noise`` plane (1). ``forward`` returns the raw network
    output F; the EDM skip/output scaling is applied by ``denoise_step``.
    """

    def __init__(self, channels: int = 32):
        super().__init__()
        c = channels
        self.channels = c
        self.enc1 = nn.Conv2d(2 * IMAGE_CHANNELS + 3, c, 3, padding=1)
        self.down = nn.Conv2d(c, 2 * c, 3, stride=2, padding=1)
        self.mid = nn.Conv2d(2 * c, 2 * c, 3, padding=1)
        self.temporal = nn.Conv2d(2 * c, 2 * c, 1)
        self.mid2 = nn.Conv2d(2 * c, 2 * c, 3, padding=1)
        self.up = nn.Conv2d(2 * c, c, 3, padding=1)
        self.dec = nn.Conv2d(2 * c, c, 3, padding=1)
        self.out = nn.Conv2d(c, IMAGE_CHANNELS, 3, padding=1)

    def forward(self, x: torch.Tensor, sigma: torch.Tensor, cond: torch.Tensor,
                residuals: list[torch.Tensor] | None = None) -> torch.Tensor:
        b, n, h, w, _ = x.shape
        if h % 2 or w % 2:
            raise ValueError(f"frame size must be even, got {h}x{w}")
        sigma = sigma.reshape(b, 1, 1, 1, 1).to(x.dtype)
        planes = [
            input_scale(sigma) * x,
            cond[:, None].expand(b, n, h, w, IMAGE_CHANNELS),
            coord_planes(h, w, x.dtype).expand(b, n, h, w, 2),
            noise_embedding(sigma).expand(b, n, h, w, 1),
        ]
        inp = _fold(torch.cat(planes, dim=-1))

        h1 = F.silu(self.enc1(inp))
        if residuals is not None:
            h1 = h1 + residuals[0]
        h2 = F.silu(self.down(h1))
        if residuals is not None:
            h2 = h2 + residuals[1]
        m = F.silu(self.mid(h2))
        per_clip = m.reshape(b, n, *m.shape[1:]).mean(dim=1)
        m = m + self.temporal(per_clip).repeat_interleave(n, dim=0)
        m = F.silu(self.mid2(m))
        if residuals is not None:
            m = m + residuals[2]

        u = F.silu(self.up(F.interpolate(m, scale_factor=2, mode="nearest")))
        u = F.silu(self.dec(torch.cat([u, h1], dim=1)))
        out = self.out(u)
        return out.permute(0, 2, 3, 1).reshape(b, n, h, w, IMAGE_CHANNELS)


def lift_control(control: torch.Tensor) -> torch.Tensor:
    """Replace the wrapped azimuth channel (theta / 360) by its cosine and sine."""
    angle = 2 * torch.pi * control[..., :1]
    return torch.cat([torch.cos(angle), torch.sin(angle), control[..., 1:]], dim=-1)


class ControlBranch(nn.Module):
    """Trainable copy of the denoiser encoder fed only the control volume.

    Each scale ends in a zero-initialised 1x1 projection, so a fresh branch
    contributes exactly nothing.
    """

    def __init__(self, channels: int = 32):
        super().__init__()
        c = channels
        self.enc1 = nn.Conv2d(CONTROL_CHANNELS + 1 + 2, c, 3, padding=1)
        self.down = nn.Conv2d(c, 2 * c, 3, stride=2, padding=1)
        self.mid = nn.Conv2d(2 * c, 2 * c, 3, padding=1)
        self.proj = nn.ModuleList([_zero_conv(c), _zero_conv(2 * c), _zero_conv(2 * c)])

    @classmethod
    def from_denoiser(cls, base: ToyDenoiser) -> "ControlBranch":
        """Branch whose shared-shape layers start as copies of ``base``."""
        branch = cls(base.channels)
        branch.down.load_state_dict(copy.deepcopy(base.down.state_dict()))
        branch.mid.load_state_dict(copy.deepcopy(base.mid.state_dict()))
        return branch

    def forward(self, control: torch.Tensor) -> list[torch.Tensor]:
        b, n, h, w, _ = control.shape
        coords = coord_planes(h, w, control.dtype).expand(b, n, h, w, 2)
        inp = _fold(torch.cat([lift_control(control), coords], dim=-1))
        h1 = F.silu(self.enc1(inp))
        h2 = F.silu(self.down(h1))
        m = F.silu(self.mid(h2))
        return [p(f) for p, f in zip(self.proj, (h1, h2, m))]


class ControlledDenoiser(nn.Module):
    """Base denoiser plus control branch, callable as ``model(x, sigma, cond, control)``."""

    def __init__(self, channels: int = 32, seed: int = 0):
        super().__init__()
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed)
            self.base = ToyDenoiser(channels)
            self.branch = ControlBranch.from_denoiser(self.base)

    def forward(self, x, sigma, cond, control=None):
        residuals = None if control is None else self.branch(control.to(x.dtype))
        return self.base(x, sigma, cond, residuals)

    def set_frozen_base(self, frozen: bool) -> None:
        self.base.requires_grad_(not frozen)

    def trainable_parameters(self) -> list[nn.Parameter]:
        return [p for p in self.parameters() if p.requires_grad]

    def parameter_families(self) -> dict[str, list[tuple[str, nn.Parameter]]]:
        """Parameters grouped by layer, e.g. ``base.mid`` or ``branch.proj.1``."""
        groups: dict[str, list[tuple[str, nn.Parameter]]] = {}
        for name, p in self.named_parameters():
            groups.setdefault(name.rsplit(".", 1)[0], []).append((name, p))
        return groups
