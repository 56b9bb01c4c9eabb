"""Raw eye-tracker samples -> fixations -> smoothed, normalized gaze maps."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .grids import minmax_normalize

DEFAULT_SIGMA_PX = 40.0
ABLATION_SIGMAS_PX = (20.0, 40.0, 80.0)
# ~1 degree at ~40 px/deg; 100 ms minimum dwell
DEFAULT_DISPERSION_PX = 40.0
DEFAULT_MIN_DUR_MS = 100.0


@dataclass(frozen=True)
class GazeSample:
    t_us: float
    x_px: float
    y_px: float
    valid: bool = True


@dataclass(frozen=True)
class Fixation:
    x_px: float
    y_px: float
    start_us: float
    duration_ms: float


@dataclass
class Session:
    id: str
    height: int
    width: int
    fixations: list = field(default_factory=list)
    samples: list = field(default_factory=list)
    # used only when no fixations are attached
    view_ms: float | None = None

    @property
    def total_view_ms(self) -> float:
        if self.fixations:
            return float(sum(f.duration_ms for f in self.fixations))
        if self.view_ms is not None:
            return float(self.view_ms)
        valid = [s for s in self.samples if s.valid]
        if len(valid) < 2:
            return 0.0
        return (valid[-1].t_us - valid[0].t_us) / 1000.0


def filter_samples(samples, height=None, width=None):
    """Keep valid samples with finite coordinates (inside the screen when its
    size is given), preserving order."""
    kept = []
    for s in samples:
        if not s.valid or not (math.isfinite(s.x_px) and math.isfinite(s.y_px)):
            continue
        if width is not None and not 0 <= s.x_px <= width - 1:
            continue
        if height is not None and not 0 <= s.y_px <= height - 1:
            continue
        kept.append(s)
    return kept


def _spread(xs, ys, i, j):
    return max(xs[i:j]) - min(xs[i:j]), max(ys[i:j]) - min(ys[i:j])


def detect_fixations_idt(samples, dispersion_px=DEFAULT_DISPERSION_PX,
                         min_dur_ms=DEFAULT_MIN_DUR_MS):
    """Dispersion-threshold (I-DT) fixation detection.

    A window qualifies while both the x and y extents stay within
    ``dispersion_px``; it must span at least ``min_dur_ms`` from its first to
    its last sample. Qualifying windows are grown greedily, emitted as one
    fixation at the sample centroid, and consumed.
    """
    if dispersion_px <= 0 or min_dur_ms <= 0:
        raise ValueError("dispersion_px and min_dur_ms must be positive")
    ts = [s.t_us for s in samples]
    xs = [s.x_px for s in samples]
    ys = [s.y_px for s in samples]
    n = len(samples)
    min_span_us = min_dur_ms * 1000.0
    fixations = []
    i = 0
    while i < n:
        # smallest window starting at i that covers the minimum duration
        j = i
        while j < n and ts[j] - ts[i] < min_span_us:
            j += 1
        if j >= n:
            break
        dx, dy = _spread(xs, ys, i, j + 1)
        if dx > dispersion_px or dy > dispersion_px:
            i += 1
            continue
        while j + 1 < n:
            dx, dy = _spread(xs, ys, i, j + 2)
            if dx > dispersion_px or dy > dispersion_px:
                break
            j += 1
        fixations.append(Fixation(
            x_px=float(np.mean(xs[i:j + 1])),
            y_px=float(np.mean(ys[i:j + 1])),
            start_us=ts[i],
            duration_ms=(ts[j] - ts[i]) / 1000.0,
        ))
        i = j + 1
    return fixations


def _pixel(v, n):
    # round half up, then clamp to the grid
    return min(max(int(math.floor(v + 0.5)), 0), n - 1)


def accumulate_fixations(fixations, h: int, w: int) -> np.ndarray:
    """Total fixation duration (ms) per pixel at each rounded centroid."""
    if h < 1 or w < 1:
        raise ValueError("map size must be positive")
    m = np.zeros((h, w))
    for f in fixations:
        m[_pixel(f.y_px, h), _pixel(f.x_px, w)] += f.duration_ms
    return m


def log_transform(m) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    if np.any(m < 0):
        raise ValueError("log_transform needs non-negative input")
    return np.log1p(m)


@lru_cache(maxsize=64)
def conv_matrix(n, sigma, radius) -> np.ndarray:
    """n x n truncated-Gaussian operator, symmetrically rescaled so every row and
    every column sums to 1.

    Rows summing to 1 keep constant maps fixed; columns summing to 1 keep the
    total mass of any map, including mass near the borders. Away from the
    borders the operator is the plain normalized Gaussian.
    """
    d = np.arange(n)[:, None] - np.arange(n)[None, :]
    k = np.where(np.abs(d) <= radius, np.exp(-0.5 * (d / sigma) ** 2), 0.0)
    x = 1.0 / np.sqrt(k.sum(axis=1))
    for _ in range(10_000):
        y = x * (k @ x)
        if np.abs(y - 1.0).max() < 1e-14:
            break
        x = x / np.sqrt(y)
    op = x[:, None] * k * x[None, :]
    op.flags.writeable = False
    return op


def separable_blur(m, sigma, radius) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    rows = conv_matrix(m.shape[0], float(sigma), int(radius))
    cols = conv_matrix(m.shape[1], float(sigma), int(radius))
    return rows @ m @ cols.T


def gaussian_blur(m, sigma_px: float = DEFAULT_SIGMA_PX) -> np.ndarray:
    """Separable Gaussian filter, radius ceil(3 sigma), renormalized at borders
    (see :func:`conv_matrix`)."""
    if not sigma_px > 0:
        raise ValueError("sigma_px must be positive")
    return separable_blur(m, sigma_px, math.ceil(3 * sigma_px))


def build_gaze_map(fixations, h: int, w: int, sigma_px: float = DEFAULT_SIGMA_PX) -> np.ndarray:
    acc = accumulate_fixations(fixations, h, w)
    return minmax_normalize(gaussian_blur(log_transform(acc), sigma_px))


def filter_sessions(sessions, drop_pct: float = 3.0):
    """Drop the floor(n * drop_pct / 100) sessions with the least viewing time.

    Ties go by ascending id (smallest id dropped first). Survivors keep their
    input order.
    """
    if not 0 <= drop_pct < 100:
        raise ValueError("drop_pct must be in [0, 100)")
    n_drop = math.floor(len(sessions) * drop_pct / 100)
    ranked = sorted(range(len(sessions)),
                    key=lambda k: (sessions[k].total_view_ms, sessions[k].id))
    dropped = set(ranked[:n_drop])
    return [s for k, s in enumerate(sessions) if k not in dropped]


# -- CSV I/O ----------------------------------------------------------------

def read_samples_csv(path):
    with open(path, newline="") as fh:
        rows = csv.DictReader(fh)
        _require_columns(rows.fieldnames, ("t_us", "x_px", "y_px", "valid"), path)
        return [GazeSample(float(r["t_us"]), float(r["x_px"]), float(r["y_px"]),
                           r["valid"].strip() == "1") for r in rows]


def read_fixations_csv(path):
    with open(path, newline="") as fh:
        rows = csv.DictReader(fh)
        _require_columns(rows.fieldnames, ("x_px", "y_px", "start_us", "duration_ms"), path)
        return [Fixation(float(r["x_px"]), float(r["y_px"]), float(r["start_us"]),
                         float(r["duration_ms"])) for r in rows]


def write_fixations_csv(path, fixations):
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["x_px", "y_px", "start_us", "duration_ms"])
        for f in fixations:
            out.writerow([repr(f.x_px), repr(f.y_px), repr(f.start_us), repr(f.duration_ms)])


def _require_columns(found, needed, path):
    missing = [c for c in needed if c not in (found or [])]
    if missing:
        raise ValueError(f"{path}: missing CSV columns {missing}")
