"""PNG and PFM frame I/O."""
from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image


def write_png(path, image8: np.ndarray) -> None:
    Image.fromarray(np.ascontiguousarray(image8, dtype=np.uint8)).save(path, optimize=False)


def read_png(path) -> np.ndarray:
    """8-bit image as uint8 array (H, W, C); grayscale stays 2D."""
    with Image.open(path) as im:
        return np.asarray(im).copy()


def read_image(path) -> np.ndarray:
    """Any Pillow-readable or PFM image as float RGB in [0, 1] (PFM is returned unscaled)."""
    path = Path(path)
    if path.suffix.lower() == ".pfm":
        return read_pfm(path)
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0


def write_pfm(path, image: np.ndarray) -> None:
    """Little-endian colour PFM, rows stored bottom to top."""
    image = np.asarray(image, dtype="<f4")
    h, w = image.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"PF\n{w} {h}\n-1.0\n".encode("ascii"))
        fh.write(np.ascontiguousarray(image[::-1]).tobytes())


def read_pfm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        header = fh.readline().strip()
        if header not in (b"PF", b"Pf"):
            raise ValueError(f"{path}: not a PFM file")
        w, h = (int(x) for x in fh.readline().split())
        scale = float(fh.readline())
        dtype = "<f4" if scale < 0 else ">f4"
        channels = 3 if header == b"PF" else 1
        data = np.frombuffer(fh.read(), dtype=dtype, count=w * h * channels)
    shape = (h, w, 3) if channels == 3 else (h, w)
    return data.reshape(shape)[::-1].astype(np.float64)
