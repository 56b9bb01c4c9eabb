"""Agreement between a gaze map and an attention map: CC, KL, SIM.

The gaze map is always the reference (first argument). KL and SIM compare the
maps as distributions (``dist_normalize`` with a 1e-7 floor), so raw maps can be
passed directly. All three reduce over the last two axes and broadcast over
any leading batch axes.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .grids import EPS_FLOOR, dist_normalize

_AX = (-2, -1)


@dataclass
class MetricReport:
    cc: float
    kl: float
    sim: float

    def line(self):
        return f"cc={self.cc:.6f} kl={self.kl:.6f} sim={self.sim:.6f}"

    def json(self):
        # key order cc, kl, sim is part of the output contract
        return json.dumps(asdict(self))


def _pair(g, a):
    g = np.asarray(g, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    if g.shape != a.shape:
        raise ValueError(f"shape mismatch: {g.shape} vs {a.shape}")
    if g.ndim == 1:
        g, a = g[None, :], a[None, :]
    return g, a


def _scalar(x):
    return float(x) if np.ndim(x) == 0 else x


def cc(g, a):
    """Pearson correlation of the flattened maps. Undefined for flat maps."""
    g, a = _pair(g, a)
    gc = g - g.mean(axis=_AX, keepdims=True)
    ac = a - a.mean(axis=_AX, keepdims=True)
    sg = np.sqrt((gc * gc).sum(axis=_AX))
    sa = np.sqrt((ac * ac).sum(axis=_AX))
    if np.any(sg == 0) or np.any(sa == 0):
        raise ValueError("CC is undefined for a constant map")
    r = (gc * ac).sum(axis=_AX) / (sg * sa)
    return _scalar(np.clip(r, -1.0, 1.0))


def kl_div(g, a, eps=EPS_FLOOR):
    """KL(P_gaze || P_attention)."""
    g, a = _pair(g, a)
    pg, pa = dist_normalize(g, eps), dist_normalize(a, eps)
    return _scalar((pg * np.log(pg / pa)).sum(axis=_AX))


def sim(g, a, eps=EPS_FLOOR):
    """Histogram intersection of the two distributions."""
    g, a = _pair(g, a)
    pg, pa = dist_normalize(g, eps), dist_normalize(a, eps)
    return _scalar(np.minimum(pg, pa).sum(axis=_AX))


def report(g, a) -> MetricReport:
    return MetricReport(cc=float(cc(g, a)), kl=float(kl_div(g, a)), sim=float(sim(g, a)))
