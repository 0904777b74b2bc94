"""8-bit sRGB image buffers and PNG plumbing.

The engine works in [-1, 1]; files are 8-bit RGB PNG. The linear map between
the two keeps the round trip within half a quantization step (1/255 in
engine units).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from PIL import Image

from .errors import FormatError, ValidationError


@dataclass
class ImageBuffer:
    pixels: np.ndarray  # (H, W, 3) uint8

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 3 or px.shape[2] != 3 or px.dtype != np.uint8:
            raise ValidationError(
                f"ImageBuffer wants (H, W, 3) uint8, got {px.shape} {px.dtype}")
        self.pixels = px

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @classmethod
    def from_engine(cls, x: np.ndarray) -> "ImageBuffer":
        """(1, 3, H, W) or (3, H, W) float in [-1, 1] -> 8-bit buffer."""
        arr = np.asarray(x, dtype=np.float64)
        if arr.ndim == 4:
            if arr.shape[0] != 1:
                raise ValidationError(f"expected batch of 1, got {arr.shape}")
            arr = arr[0]
        if arr.ndim != 3 or arr.shape[0] != 3:
            raise ValidationError(f"expected (3, H, W), got {arr.shape}")
        arr = np.clip(arr, -1.0, 1.0)
        px = np.rint((arr + 1.0) * (255.0 / 2.0)).astype(np.uint8)
        return cls(px.transpose(1, 2, 0).copy())

    def to_engine(self) -> np.ndarray:
        """8-bit buffer -> (1, 3, H, W) float32 in [-1, 1]."""
        x = self.pixels.astype(np.float32).transpose(2, 0, 1)
        return (x * np.float32(2.0 / 255.0) - np.float32(1.0))[None]


def save_image(buffer: ImageBuffer, path) -> None:
    Image.fromarray(buffer.pixels, mode="RGB").save(path, format="PNG")


def load_image(path) -> ImageBuffer:
    with Image.open(path) as img:
        if img.mode in ("I", "I;16", "I;16B", "I;16L", "F"):
            raise FormatError(
                f"unsupported bit depth '{img.mode}' in {path}; 8-bit images only")
        if img.mode in ("RGBA", "LA", "PA"):
            warnings.warn(f"dropping alpha channel of {path}")
        if img.mode == "L":
            img = img.convert("RGB")  # grayscale expands to 3 equal channels
        elif img.mode != "RGB":
            img = img.convert("RGB")
        px = np.asarray(img, dtype=np.uint8)
    return ImageBuffer(px)
