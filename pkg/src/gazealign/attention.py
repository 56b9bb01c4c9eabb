"""Collapse (layer, head, token, patch) attention into an image-aligned map."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grids import bilinear_resize, minmax_normalize

# first-M-layer choices reported per model family; the library treats M as data
LAYER_PRESETS = {"tinyllava": 10, "internvl2": 12, "chartgemma": 6}

AXES = ("layer", "head", "token")


@dataclass(frozen=True)
class PatchGrid:
    rows: int
    cols: int

    @classmethod
    def parse(cls, text):
        try:
            r, c = text.lower().split("x")
            return cls(int(r), int(c))
        except ValueError:
            raise ValueError(f"bad grid {text!r}, expected <rows>x<cols>") from None

    @property
    def size(self):
        return self.rows * self.cols


def aggregate_attention(t, m_layers: int, keep_axis: str | None = None) -> np.ndarray:
    """Mean over the first ``m_layers`` layers, all heads and all text tokens.

    Returns a length-I vector, or with ``keep_axis`` (debug) one vector per
    index of that axis, shape ``(k, I)``.
    """
    t = np.asarray(t, dtype=np.float64)
    if t.ndim != 4:
        raise ValueError(f"attention tensor must be 4-D, got shape {t.shape}")
    if not 1 <= m_layers <= t.shape[0]:
        raise ValueError(f"m_layers={m_layers} outside [1, {t.shape[0]}]")
    head = t[:m_layers]
    if keep_axis is None:
        return head.mean(axis=(0, 1, 2))
    if keep_axis not in AXES:
        raise ValueError(f"keep_axis must be one of {AXES}")
    k = AXES.index(keep_axis)
    rest = tuple(a for a in range(3) if a != k)
    return head.mean(axis=rest)


def to_patch_map(v, grid: PatchGrid) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1 or v.size != grid.size:
        raise ValueError(f"vector of length {v.size} does not fit a {grid.rows}x{grid.cols} grid")
    return v.reshape(grid.rows, grid.cols).copy()


def to_image_map(pm, img_h: int, img_w: int) -> np.ndarray:
    pm = np.asarray(pm, dtype=np.float64)
    if img_h < pm.shape[0] or img_w < pm.shape[1]:
        raise ValueError("image size must be at least the patch grid size")
    return minmax_normalize(bilinear_resize(pm, img_h, img_w))


def attention_map(t, m_layers, grid, img_h, img_w) -> np.ndarray:
    """Tensor -> normalized saliency map at image resolution."""
    return to_image_map(to_patch_map(aggregate_attention(t, m_layers), grid), img_h, img_w)
