"""Network input preparation and composition-preserving augmentation."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from ..autodiff import Tensor
from ..autodiff.ops import resize_matrix
from ..geometry import CropRect, ImageDims, round_half_up
from .ppm import RawImage

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)

# RGB <-> YIQ, used for hue rotation
_RGB2YIQ = np.array([[0.299, 0.587, 0.114],
                     [0.596, -0.274, -0.322],
                     [0.211, -0.523, 0.312]])
_YIQ2RGB = np.linalg.inv(_RGB2YIQ)
_LUMA = _RGB2YIQ[0]


def resized_dims(dims: ImageDims, short_side: int = 256) -> ImageDims:
    """Extent after scaling the short side to ``short_side``, aspect preserved."""
    H, W = dims
    if H <= W:
        return ImageDims(short_side, max(1, round_half_up(W * short_side / H)))
    return ImageDims(max(1, round_half_up(H * short_side / W)), short_side)


def resize_pixels(pixels: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize of an (H, W, C) float array with half-pixel centers."""
    H, W = pixels.shape[:2]
    if (H, W) == (out_h, out_w):
        return pixels
    ry = resize_matrix(H, out_h)
    rx = resize_matrix(W, out_w)
    return np.einsum("ih,hwc,jw->ijc", ry, pixels, rx, optimize=True)


def preprocess(img: RawImage, short_side: int = 256, mean: Sequence[float] = IMAGENET_MEAN,
               std: Sequence[float] = IMAGENET_STD, dtype=np.float32) -> Tensor:
    """Resize so the short side is ``short_side``, scale to [0, 1], normalize per channel.

    Returns a (1, 3, H', W') tensor.  Map crops onto it with
    :func:`gridcrop.geometry.scale_crop` and :func:`resized_dims`.
    """
    if min(img.H, img.W) < 2:
        raise ValueError(f"image {img.H}x{img.W} is too small to preprocess")
    out = resized_dims(img.dims, short_side)
    x = img.pixels.astype(np.float64) / 255.0
    x = resize_pixels(x, out.H, out.W)
    x = (x - np.asarray(mean)) / np.asarray(std)
    return Tensor(np.ascontiguousarray(x.transpose(2, 0, 1)[None], dtype=dtype))


@dataclass(frozen=True)
class AugmentConfig:
    brightness: Tuple[float, float] = (0.8, 1.2)
    contrast: Tuple[float, float] = (0.8, 1.2)
    saturation: Tuple[float, float] = (0.8, 1.2)
    hue: Tuple[float, float] = (-0.05, 0.05)
    flip_prob: float = 0.5

    @classmethod
    def identity(cls) -> "AugmentConfig":
        return cls((1.0, 1.0), (1.0, 1.0), (1.0, 1.0), (0.0, 0.0), 0.0)


def _uniform(rng: np.random.Generator, lo_hi: Tuple[float, float]) -> float:
    lo, hi = lo_hi
    return lo if lo == hi else float(rng.uniform(lo, hi))


def adjust_colors(pixels: np.ndarray, brightness: float = 1.0, contrast: float = 1.0,
                  saturation: float = 1.0, hue: float = 0.0) -> np.ndarray:
    """Photometric jitter on a uint8 (H, W, 3) array; neutral factors are skipped."""
    if brightness == 1.0 and contrast == 1.0 and saturation == 1.0 and hue == 0.0:
        return pixels
    x = pixels.astype(np.float64)
    if brightness != 1.0:
        x = x * brightness
    if contrast != 1.0:
        gray_mean = float((x @ _LUMA).mean())
        x = gray_mean + contrast * (x - gray_mean)
    if saturation != 1.0:
        gray = (x @ _LUMA)[..., None]
        x = gray + saturation * (x - gray)
    if hue != 0.0:
        theta = 2.0 * np.pi * hue
        c, s = np.cos(theta), np.sin(theta)
        rot = np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])
        x = x @ (_YIQ2RGB @ rot @ _RGB2YIQ).T
    return np.clip(np.rint(x), 0, 255).astype(np.uint8)


def flip_crop(c: CropRect, W: int) -> CropRect:
    return CropRect(c.x1, W - c.y2, c.x2, W - c.y1)


def hflip(img: RawImage, crops_with_mos: Sequence[Tuple[CropRect, float]]):
    flipped = RawImage(img.pixels[:, ::-1].copy())
    return flipped, [(flip_crop(c, img.W), mos) for c, mos in crops_with_mos]


def augment(img: RawImage, crops_with_mos: Sequence[Tuple[CropRect, float]], rng: np.random.Generator,
            config: AugmentConfig = AugmentConfig()) -> Tuple[RawImage, List[Tuple[CropRect, float]]]:
    """Random brightness/contrast/saturation/hue jitter and horizontal flip.

    Crops are mirrored with the image when flipped; MOS values never change.
    """
    b = _uniform(rng, config.brightness)
    c = _uniform(rng, config.contrast)
    s = _uniform(rng, config.saturation)
    h = _uniform(rng, config.hue)
    flip = config.flip_prob > 0 and rng.random() < config.flip_prob
    out = RawImage(adjust_colors(img.pixels, b, c, s, h))
    pairs = [(CropRect(*cr), float(m)) for cr, m in crops_with_mos]
    if flip:
        return hflip(out, pairs)
    return out, pairs
