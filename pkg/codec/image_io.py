"""
image_io.py - 8-bit RGB images in and out, padding and tensor conversion
"""
import os

import numpy as np
import torch
from PIL import Image, UnidentifiedImageError

from utils.errors import ConfigurationError


def read_image(path: str) -> np.ndarray:
    """(H, W, 3) uint8. Any Pillow-readable format; PNG and PPM at minimum."""
    try:
        with Image.open(path) as handle:
            return np.asarray(handle.convert("RGB"), dtype=np.uint8).copy()
    except (UnidentifiedImageError, OSError) as e:
        raise ConfigurationError(f"cannot decode image {path}: {e}") from e


def write_image(path: str, pixels: np.ndarray) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    Image.fromarray(np.ascontiguousarray(pixels, dtype=np.uint8), mode="RGB").save(path)


def write_grayscale(path: str, plane: np.ndarray) -> None:
    """Min-max normalized 8-bit grayscale rendering of a 2-D array."""
    plane = np.asarray(plane, dtype=np.float64)
    span = plane.max() - plane.min()
    scaled = np.zeros_like(plane) if span <= 0 else (plane - plane.min()) / span
    Image.fromarray(np.round(scaled * 255).astype(np.uint8), mode="L").save(path)


def as_uint8(pixels: np.ndarray) -> np.ndarray:
    """Accepts uint8 or [0, 1] floats (as produced by the corpus loader)."""
    pixels = np.asarray(pixels)
    if pixels.dtype == np.uint8:
        return pixels
    return np.round(np.clip(pixels, 0.0, 1.0) * 255).astype(np.uint8)


def pad_image(pixels: np.ndarray, multiple: int) -> np.ndarray:
    """Reflection-pad bottom and right edges up to the next multiple."""
    height, width = pixels.shape[:2]
    pad_h = (-height) % multiple
    pad_w = (-width) % multiple
    if not pad_h and not pad_w:
        return pixels
    widths = [(0, pad_h), (0, pad_w)] + [(0, 0)] * (pixels.ndim - 2)
    mode = "reflect" if min(height, width) > 1 else "edge"
    return np.pad(pixels, widths, mode=mode)


def crop(pixels: np.ndarray, height: int, width: int) -> np.ndarray:
    return pixels[:height, :width]


def to_tensor(pixels: np.ndarray) -> torch.Tensor:
    """uint8 (H, W, 3) -> float32 (1, 3, H, W) in [0, 1]."""
    array = np.asarray(pixels, dtype=np.float32) / 255.0
    return torch.from_numpy(np.ascontiguousarray(array.transpose(2, 0, 1)))[None]


def to_uint8(tensor: torch.Tensor) -> np.ndarray:
    """(1, 3, H, W) reals -> uint8 (H, W, 3), clamped to [0, 1] first."""
    array = tensor.detach()[0].clamp(0.0, 1.0).permute(1, 2, 0).cpu().numpy()
    return np.round(array * 255).astype(np.uint8)
