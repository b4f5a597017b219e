"""Post-processing: additive bloom around the light marker and 8-bit tone mapping."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

GLOW_TRUNCATE = 3.0


@dataclass(frozen=True)
class GlowSettings:
    threshold: float = 0.5
    radius_px: float = 1.5
    gain: float = 2.0
    color: tuple[float, float, float] = (1.0, 0.9, 0.7)


def glow_kernel_radius(glow: GlowSettings) -> int:
    return int(GLOW_TRUNCATE * glow.radius_px + 0.5)


def composite_glow(image: np.ndarray, light_mask: np.ndarray, glow: GlowSettings) -> np.ndarray:
    """Add a Gaussian bloom of the thresholded light mask to ``image``.

    The kernel is truncated at ``GLOW_TRUNCATE`` standard deviations, so pixels
    farther than that from any mask pixel are returned unchanged.
    """
    mask = np.asarray(light_mask, dtype=np.float64)
    if mask.shape != image.shape[:2]:
        raise ValueError(f"mask shape {mask.shape} does not match image {image.shape[:2]}")
    m = np.where(mask >= glow.threshold, mask, 0.0)
    if not m.any():
        return image.copy()
    bloom = gaussian_filter(m, sigma=glow.radius_px, mode="constant", cval=0.0, truncate=GLOW_TRUNCATE)
    return image + glow.gain * bloom[..., None] * np.asarray(glow.color)


def tonemap(image: np.ndarray, gamma: float = 2.2, exposure: float = 1.0) -> np.ndarray:
    """Linear RGB to 8-bit: clamp to [0, 1], apply 1/gamma, round half up."""
    v = np.clip(np.asarray(image, dtype=np.float64) * exposure, 0.0, 1.0) ** (1.0 / gamma)
    return np.floor(v * 255.0 + 0.5).astype(np.uint8)
