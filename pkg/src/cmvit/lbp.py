"""Local binary pattern texture codes and histograms.

Conventions (frozen so results are bit-exact): radius 1, 8 neighbors, bit i
set iff neighbor i >= center, bit 0 is the top-left neighbor and later bits
proceed clockwise, borders are replicate-padded.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractError, ShapeError

# (dy, dx) for bits 0..7: clockwise from the top-left neighbor
NEIGHBOR_OFFSETS = ((-1, -1), (-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1))


@dataclass(frozen=True)
class LBPConfig:
    radius: int = 1
    neighbors: int = 8

    def __post_init__(self):
        if (self.radius, self.neighbors) != (1, 8):
            raise ConfigError("only radius 1 with 8 neighbors is supported")


def to_gray(rgb: np.ndarray) -> np.ndarray:
    """Luminance round(0.299 R + 0.587 G + 0.114 B) of an HxWx3 8-bit image."""
    rgb = np.asarray(rgb)
    if rgb.ndim != 3 or rgb.shape[-1] != 3:
        raise ShapeError(f"expected HxWx3 image, got {list(rgb.shape)}")
    f = rgb.astype(np.float64)
    lum = 0.299 * f[..., 0] + 0.587 * f[..., 1] + 0.114 * f[..., 2]
    return np.clip(np.floor(lum + 0.5), 0, 255).astype(np.uint8)


def _check_gray(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img)
    if img.ndim != 2 or img.shape[0] < 1 or img.shape[1] < 1:
        raise ShapeError(f"expected a non-empty HxW image, got {list(img.shape)}")
    return img


def lbp_code_at(img: np.ndarray, x: int, y: int, cfg: LBPConfig = LBPConfig()) -> int:
    img = _check_gray(img)
    h, w = img.shape
    if not (0 <= x < w and 0 <= y < h):
        raise ContractError(f"pixel ({x}, {y}) outside {w}x{h} image")
    center = img[y, x]
    code = 0
    for bit, (dy, dx) in enumerate(NEIGHBOR_OFFSETS):
        ny = min(max(y + dy, 0), h - 1)
        nx = min(max(x + dx, 0), w - 1)
        if img[ny, nx] >= center:
            code |= 1 << bit
    return code


def lbp_map(img: np.ndarray, cfg: LBPConfig = LBPConfig()) -> np.ndarray:
    """Code plane (uint8, HxW); also accepts a stack [..., H, W]."""
    img = np.asarray(img)
    if img.ndim < 2 or img.shape[-1] < 1 or img.shape[-2] < 1:
        raise ShapeError(f"expected [..., H, W] image, got {list(img.shape)}")
    h, w = img.shape[-2:]
    widths = [(0, 0)] * (img.ndim - 2) + [(1, 1), (1, 1)]
    padded = np.pad(img, widths, mode="edge")
    center = padded[..., 1 : h + 1, 1 : w + 1]
    codes = np.zeros(img.shape, dtype=np.uint8)
    for bit, (dy, dx) in enumerate(NEIGHBOR_OFFSETS):
        neighbor = padded[..., 1 + dy : 1 + dy + h, 1 + dx : 1 + dx + w]
        codes |= (neighbor >= center).astype(np.uint8) << bit
    return codes


def lbp_histogram(codes: np.ndarray, normalize: bool = True) -> np.ndarray:
    """256-bin code histogram over the last two axes; normalized bins sum to 1."""
    codes = np.asarray(codes)
    lead = codes.shape[:-2]
    flat = codes.reshape(-1, codes.shape[-2] * codes.shape[-1]).astype(np.int64)
    if flat.size and (flat.min() < 0 or flat.max() > 255):
        raise ContractError("LBP codes must lie in [0, 255]")
    hist = np.zeros((flat.shape[0], 256), dtype=np.float64)
    for row, c in zip(hist, flat):
        row[:] = np.bincount(c, minlength=256)
    if normalize:
        hist /= flat.shape[1]
    return hist.reshape(*lead, 256)
