"""PNG reading/writing for images and binary forgery masks.

Masks are 8-bit grayscale: 255 marks forged pixels, 0 pristine; readers treat
any value above 127 as forged.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import StorageError


def save_image(path, rgb: np.ndarray) -> None:
    rgb = np.asarray(rgb)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise StorageError(f"expected (H,W,3) RGB array, got shape {rgb.shape}")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(rgb.astype(np.uint8), mode="RGB").save(path, format="PNG")


def load_image(path) -> np.ndarray:
    try:
        with Image.open(path) as img:
            return np.asarray(img.convert("RGB"), dtype=np.uint8)
    except (OSError, UnidentifiedImageError, SyntaxError) as exc:
        raise StorageError(f"cannot decode image {path}: {exc}") from exc


def save_mask(path, mask: np.ndarray) -> None:
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise StorageError(f"expected (H,W) mask array, got shape {mask.shape}")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    data = np.where(mask > 0, 255, 0).astype(np.uint8)
    Image.fromarray(data, mode="L").save(path, format="PNG")


def load_mask(path) -> np.ndarray:
    try:
        with Image.open(path) as img:
            gray = np.asarray(img.convert("L"))
    except (OSError, UnidentifiedImageError, SyntaxError) as exc:
        raise StorageError(f"cannot decode mask {path}: {exc}") from exc
    return (gray > 127).astype(np.float64)
