"""Masked-inference interventions: zero or blur the gaze (or non-gaze) region."""
from __future__ import annotations

import numpy as np

from .gaze import separable_blur

DEFAULT_THRESHOLD = 0.5
DEFAULT_KERNEL = 15
DEFAULT_SIGMA = 5.0
MODES = ("mask", "blur")


def gaze_mask(g, threshold: float = DEFAULT_THRESHOLD) -> np.ndarray:
    """Boolean mask of pixels whose (min-max normalized) gaze value >= threshold."""
    if not 0 < threshold < 1:
        raise ValueError("threshold must be in (0, 1)")
    return np.asarray(g, dtype=np.float64) >= threshold


def _selected(img, mask, invert):
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != img.shape[:2]:
        raise ValueError(f"mask {mask.shape} does not match image {img.shape[:2]}")
    sel = ~mask if invert else mask
    return sel[..., None] if img.ndim == 3 else sel


def apply_mask(img, mask, invert: bool = False) -> np.ndarray:
    """Zero the selected pixels (the mask, or its complement with ``invert``)."""
    img = np.asarray(img, dtype=np.float64)
    return np.where(_selected(img, mask, invert), 0.0, img)


def _blur_planes(img, kernel_size, sigma):
    radius = (kernel_size - 1) // 2
    if img.ndim == 2:
        return separable_blur(img, sigma, radius)
    return np.stack([separable_blur(img[..., c], sigma, radius)
                     for c in range(img.shape[2])], axis=2)


def apply_region_blur(img, mask, kernel_size: int = DEFAULT_KERNEL,
                      sigma: float = DEFAULT_SIGMA, invert: bool = False) -> np.ndarray:
    """Blur the whole image with a fixed-size Gaussian, then keep the blurred
    values only on the selected pixels."""
    if kernel_size < 1 or kernel_size % 2 == 0:
        raise ValueError("kernel_size must be a positive odd integer")
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    img = np.asarray(img, dtype=np.float64)
    sel = _selected(img, mask, invert)
    return np.where(sel, _blur_planes(img, kernel_size, sigma), img)


def perturb(img, gaze, mode, invert=False, threshold=DEFAULT_THRESHOLD,
            kernel_size=DEFAULT_KERNEL, sigma=DEFAULT_SIGMA) -> np.ndarray:
    """One of the four conditions {mask, blur} x {gaze region, non-gaze region}."""
    mask = gaze_mask(gaze, threshold)
    if mode == "mask":
        return apply_mask(img, mask, invert)
    if mode == "blur":
        return apply_region_blur(img, mask, kernel_size, sigma, invert)
    raise ValueError(f"mode must be one of {MODES}")
