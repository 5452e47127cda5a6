"""Grayscale image loading, saving and validation.

Images are plain 2D float64 arrays with intensities in [0, 255], pixel
centers at integer coordinates, origin top-left, x rightward, y downward.
"""

from __future__ import annotations

import numpy as np
from PIL import Image

from .errors import InvalidImage

MIN_SIDE = 8


def validate_image(img: np.ndarray) -> np.ndarray:
    """Check shape and finiteness, return the image as float64."""
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 2:
        raise InvalidImage(f"expected a 2D array, got shape {arr.shape}")
    h, w = arr.shape
    if h < MIN_SIDE or w < MIN_SIDE:
        raise InvalidImage(f"image must be at least {MIN_SIDE}x{MIN_SIDE}, got {w}x{h}")
    if not np.all(np.isfinite(arr)):
        raise InvalidImage("image contains non-finite values")
    return arr


def load_gray(path) -> np.ndarray:
    """Load an 8-bit grayscale PGM (P5) or PNG file as float64 in [0, 255]."""
    with Image.open(path) as im:
        if im.mode not in ("L", "I", "I;16"):
            im = im.convert("L")
        arr = np.asarray(im, dtype=np.float64)
    if arr.max() > 255:
        arr = arr * (255.0 / arr.max())
    return validate_image(arr)


def save_pgm(path, img: np.ndarray) -> None:
    """Write a float image as binary 8-bit PGM (P5), clipping to [0, 255]."""
    arr = np.clip(np.asarray(img), 0, 255).astype(np.uint8)
    h, w = arr.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(arr.tobytes())


def save_png(path, img: np.ndarray) -> None:
    """Write a float image as 8-bit grayscale PNG, clipping to [0, 255]."""
    arr = np.clip(np.asarray(img), 0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="L").save(path)
