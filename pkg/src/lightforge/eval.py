"""Full-reference image metrics, clip reports and the MIT Multi-Illumination trajectory table.

Images are float arrays in [0, 1], shaped (H, W) or (H, W, C). Masks are
boolean (H, W); masked metrics reduce only over mask-true pixels (SSIM: over
windows whose centre pixel is in the mask).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .renderer.io import read_image

SSIM_K1 = 0.01
SSIM_K2 = 0.03
SSIM_WINDOW = 8


class EmptyMaskError(ValueError):
    pass


def _pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def _check_mask(mask, shape) -> np.ndarray:
    mask = np.asarray(mask)
    if mask.shape != tuple(shape[:2]):
        raise ValueError(f"mask shape {mask.shape} does not match image {shape[:2]}")
    mask = mask.astype(bool)
    if not mask.any():
        raise EmptyMaskError("mask selects no pixels")
    return mask


def mask_foreground(image, mask) -> np.ma.MaskedArray:
    """Masked view of ``image`` that hides background pixels (all channels)."""
    image = np.asarray(image)
    mask = _check_mask(mask, image.shape)
    hide = ~mask if image.ndim == 2 else np.broadcast_to(~mask[..., None], image.shape)
    return np.ma.masked_array(image, mask=hide)


def _unmask(a, b, mask):
    """Pull a foreground mask out of masked-array inputs."""
    for img in (a, b):
        if isinstance(img, np.ma.MaskedArray) and mask is None:
            m = np.ma.getmaskarray(img)
            mask = ~(m if m.ndim == 2 else m.any(axis=-1))
    a = np.ma.getdata(a)
    b = np.ma.getdata(b)
    return a, b, mask


def mse(a, b, mask=None) -> float:
    a, b, mask = _unmask(a, b, mask)
    a, b = _pair(a, b)
    sq = (a - b) ** 2
    if mask is not None:
        sq = sq[_check_mask(mask, a.shape)]
    return float(np.mean(sq))


def rmse(a, b, mask=None) -> float:
    return math.sqrt(mse(a, b, mask))


def psnr(a, b, max_val: float = 1.0, mask=None) -> float:
    """Peak signal-to-noise ratio in dB; ``math.inf`` for identical images."""
    err = mse(a, b, mask)
    if err == 0:
        return math.inf
    # log of the ratio split in two: one rounding fewer than log10(max^2 / mse)
    return 20.0 * math.log10(max_val) - 10.0 * math.log10(err)


def _gray(img: np.ndarray) -> np.ndarray:
    return img.mean(axis=-1) if img.ndim == 3 else img


def _window_means(x: np.ndarray, k: int) -> np.ndarray:
    """Mean of every k x k window fully inside ``x`` (summed-area table)."""
    s = np.zeros((x.shape[0] + 1, x.shape[1] + 1))
    s[1:, 1:] = x.cumsum(0).cumsum(1)
    total = s[k:, k:] - s[:-k, k:] - s[k:, :-k] + s[:-k, :-k]
    return total / (k * k)


def ssim_map(a, b, window: int = SSIM_WINDOW, data_range: float = 1.0,
             k1: float = SSIM_K1, k2: float = SSIM_K2) -> np.ndarray:
    """Local SSIM for every window position (stride 1, uniform window, population variance)."""
    a, b = _pair(a, b)
    a, b = _gray(a), _gray(b)
    if min(a.shape) < window:
        raise ValueError(f"image {a.shape} smaller than SSIM window {window}")
    c1, c2 = (k1 * data_range) ** 2, (k2 * data_range) ** 2
    mu_a, mu_b = _window_means(a, window), _window_means(b, window)
    var_a = _window_means(a * a, window) - mu_a * mu_a
    var_b = _window_means(b * b, window) - mu_b * mu_b
    cov = _window_means(a * b, window) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return num / den


def ssim(a, b, window: int = SSIM_WINDOW, C1: float | None = None, C2: float | None = None,
         mask=None, data_range: float = 1.0) -> float:
    """Mean local SSIM on channel-mean grayscale.

    ``C1``/``C2`` default to (0.01 * range)^2 and (0.03 * range)^2. With a mask,
    only windows whose centre pixel (offset ``window // 2``) is in the mask count.
    """
    a, b, mask = _unmask(a, b, mask)
    k1 = SSIM_K1 if C1 is None else math.sqrt(C1) / data_range
    k2 = SSIM_K2 if C2 is None else math.sqrt(C2) / data_range
    smap = ssim_map(a, b, window, data_range, k1, k2)
    if mask is None:
        return float(smap.mean())
    mask = _check_mask(mask, np.shape(a))
    c = window // 2
    centres = mask[c:c + smap.shape[0], c:c + smap.shape[1]]
    if not centres.any():
        raise EmptyMaskError("no SSIM window is centred on a mask pixel")
    return float(smap[centres].mean())


def center_crop(image, size=(512, 512)) -> np.ndarray:
    """Central ``size`` crop; when the margin is odd the extra pixel goes to the bottom/right."""
    image = np.asarray(image)
    ch, cw = size
    h, w = image.shape[:2]
    if h < ch or w < cw:
        raise ValueError(f"image {h}x{w} smaller than crop {ch}x{cw}")
    top, left = (h - ch) // 2, (w - cw) // 2
    return image[top:top + ch, left:left + cw]


# -- clip reports --------------------------------------------------------------

@dataclass
class FrameMetrics:
    rmse: float
    psnr: float
    ssim: float


@dataclass
class MetricsReport:
    clip_id: str
    per_frame: list[FrameMetrics]
    mask_mode: str = "none"
    crop: tuple[int, int] | None = None
    means: dict = field(init=False)

    def __post_init__(self):
        self.means = aggregate(self.per_frame)

    def to_json(self) -> dict:
        frames = [{"rmse": f.rmse, "psnr": None if math.isinf(f.psnr) else f.psnr, "ssim": f.ssim}
                  for f in self.per_frame]
        return {"clip_id": self.clip_id, "per_frame": frames, "means": self.means,
                "mask_mode": self.mask_mode, "crop": list(self.crop) if self.crop else None}


def aggregate(frames: Sequence[FrameMetrics]) -> dict:
    """Arithmetic means per metric. Infinite PSNR frames are left out and counted."""
    if not frames:
        raise ValueError("no frames to aggregate")
    finite = [f.psnr for f in frames if not math.isinf(f.psnr)]
    return {
        "rmse": float(np.mean([f.rmse for f in frames])),
        "ssim": float(np.mean([f.ssim for f in frames])),
        "psnr": float(np.mean(finite)) if finite else None,
        "psnr_identical_frames": len(frames) - len(finite),
    }


def evaluate_clip(pred: Sequence[np.ndarray], gt: Sequence[np.ndarray], mask=None, crop=None,
                  clip_id: str = "clip", window: int = SSIM_WINDOW) -> MetricsReport:
    if len(pred) != len(gt):
        raise ValueError(f"frame counts differ: {len(pred)} vs {len(gt)}")
    if crop is not None:
        pred = [center_crop(p, crop) for p in pred]
        gt = [center_crop(g, crop) for g in gt]
        mask = None if mask is None else center_crop(mask, crop)
    frames = [FrameMetrics(rmse(p, g, mask), psnr(p, g, mask=mask), ssim(p, g, window, mask=mask))
              for p, g in zip(pred, gt)]
    return MetricsReport(clip_id, frames, "none" if mask is None else "foreground",
                         None if crop is None else tuple(crop))


def _frames(directory: Path) -> list[Path]:
    files = sorted(directory.glob("frame_*.png"))
    if not files:
        raise FileNotFoundError(f"no frame_*.png files in {directory}")
    return files


def evaluate_dirs(pred_dir, gt_dir, mask_dir=None, crop=None, window: int = SSIM_WINDOW) -> MetricsReport:
    """Compare matching ``frame_*.png`` files; the mask is ``mask.png`` in ``mask_dir``."""
    pred_dir, gt_dir = Path(pred_dir), Path(gt_dir)
    gt_files = _frames(gt_dir)
    pred_files = _frames(pred_dir)
    if [p.name for p in pred_files] != [g.name for g in gt_files]:
        raise ValueError("prediction and ground-truth frame names differ")
    mask = None
    if mask_dir is not None:
        mask = read_image(Path(mask_dir) / "mask.png")
        mask = (mask.mean(axis=-1) if mask.ndim == 3 else mask) > 0.5
    pred = [read_image(p) for p in pred_files]
    gt = [read_image(g) for g in gt_files]
    return evaluate_clip(pred, gt, mask, crop, clip_id=gt_dir.name, window=window)


# -- light-direction readout -----------------------------------------------------

def image_azimuths(h: int, w: int) -> np.ndarray:
    """Azimuth in degrees of each pixel centre about the image centre; x right, y up."""
    r, c = np.mgrid[0:h, 0:w]
    return np.degrees(np.arctan2(-(r + 0.5 - h / 2), c + 0.5 - w / 2)) % 360.0


def brightest_octant_azimuth(image) -> float:
    """Centre azimuth of the 45-degree image sector with the highest mean luminance."""
    lum = _gray(np.asarray(image, dtype=np.float64))
    octant = (image_azimuths(*lum.shape) // 45).astype(int)
    means = [lum[octant == k].mean() for k in range(8)]
    return 45.0 * int(np.argmax(means)) + 22.5


def angular_distance(a: float, b: float) -> float:
    return abs((a - b + 180.0) % 360.0 - 180.0)


def azimuth_hits(frames: Sequence[np.ndarray], thetas: Sequence[float], tolerance: float = 45.0) -> list[bool]:
    """Per frame: does the brightest octant lie within ``tolerance`` of the light azimuth?"""
    return [angular_distance(brightest_octant_azimuth(f), t) <= tolerance for f, t in zip(frames, thetas)]


# -- MIT Multi-Illumination trajectories ------------------------------------------

MIT_DIRECTIONS = 25
MIT_TRAJECTORY_LENGTH = 14

# 25 continuous walks over the 25 light directions, reproduced as published
# (rows do not jointly cover every direction as a starting index).
_MIT_TABLE = (
    (23, 11, 0, 10, 1, 17, 6, 15, 5, 13, 12, 4, 16, 14),
    (14, 12, 4, 16, 15, 5, 13, 7, 11, 0, 10, 1, 17, 18),
    (0, 11, 23, 24, 2, 22, 3, 19, 18, 17, 9, 8, 12, 13),
    (11, 23, 24, 2, 22, 3, 19, 18, 17, 9, 8, 12, 13, 5),
    (23, 24, 2, 22, 3, 19, 18, 17, 9, 8, 12, 13, 5, 15),
    (24, 2, 22, 3, 19, 18, 17, 9, 8, 12, 13, 5, 15, 16),
    (2, 22, 3, 19, 18, 17, 9, 8, 12, 13, 5, 15, 16, 4),
    (12, 4, 16, 15, 5, 13, 7, 11, 0, 10, 1, 17, 18, 19),
    (4, 16, 15, 5, 13, 7, 11, 0, 10, 1, 17, 18, 19, 3),
    (16, 15, 5, 13, 7, 11, 0, 10, 1, 17, 18, 19, 3, 22),
    (5, 13, 7, 11, 0, 10, 1, 17, 18, 19, 3, 22, 2, 24),
    (1, 10, 0, 11, 23, 24, 2, 22, 3, 19, 18, 17, 9, 8),
    (3, 19, 18, 17, 9, 8, 11, 7, 13, 5, 15, 16, 4, 14),
    (6, 17, 1, 10, 0, 11, 23, 24, 2, 22, 20, 15, 16, 4),
    (7, 11, 0, 10, 1, 17, 18, 19, 3, 22, 21, 13, 12, 4),
    (8, 9, 17, 18, 19, 3, 22, 2, 24, 23, 11, 0, 10, 1),
    (9, 8, 11, 23, 24, 2, 22, 3, 19, 18, 17, 9, 8, 12),
    (10, 0, 11, 23, 24, 2, 22, 20, 15, 16, 4, 12, 13, 5),
    (13, 5, 15, 16, 4, 12, 7, 24, 2, 22, 3, 19, 18, 17),
    (17, 1, 10, 0, 11, 23, 24, 2, 22, 20, 15, 16, 4, 12),
    (19, 20, 21, 24, 23, 11, 0, 10, 9, 16, 15, 5, 13, 12),
    (20, 21, 24, 23, 11, 0, 10, 9, 16, 15, 5, 13, 12, 4),
    (21, 24, 23, 11, 0, 10, 9, 16, 15, 5, 13, 12, 4, 14),
    (22, 2, 24, 23, 11, 0, 10, 1, 18, 6, 15, 5, 13, 12),
    (18, 19, 20, 21, 24, 23, 11, 0, 10, 9, 16, 15, 5, 13),
)


@dataclass(frozen=True)
class MitTrajectorySet:
    sequences: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        if len(self.sequences) != MIT_DIRECTIONS:
            raise ValueError(f"expected {MIT_DIRECTIONS} sequences, got {len(self.sequences)}")
        for i, seq in enumerate(self.sequences, 1):
            if len(seq) != MIT_TRAJECTORY_LENGTH:
                raise ValueError(f"sequence {i} has length {len(seq)}")
            if any(not 0 <= v < MIT_DIRECTIONS for v in seq):
                raise ValueError(f"sequence {i} has an index outside [0, {MIT_DIRECTIONS - 1}]")

    def to_json(self) -> dict:
        return {"trajectories": [list(s) for s in self.sequences]}

    def dumps(self) -> str:
        """Compact, deterministic JSON with a trailing newline."""
        return json.dumps(self.to_json(), separators=(",", ":")) + "\n"

    def uncovered_start_indices(self) -> list[int]:
        starts = {s[0] for s in self.sequences}
        return [i for i in range(MIT_DIRECTIONS) if i not in starts]


def mit_trajectories() -> MitTrajectorySet:
    return MitTrajectorySet(_MIT_TABLE)
