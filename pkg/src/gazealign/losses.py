"""Gaze-alignment losses with exact gradients with respect to the predicted map.

Every loss takes the gaze map ``g`` (target) and the predicted attention map
``a`` and returns a :class:`LossResult`. The private ``_<kind>`` kernels skip
input validation and reduce over the last two axes, so they also accept a
leading batch axis (one loss per map).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

KINDS = ("wmse", "kld", "focal", "dicebce")


@dataclass(frozen=True)
class LossConfig:
    alpha: float = 1.1
    gamma: float = 2.0
    lambda_dice: float = 100.0
    lambda_bce: float = 1.0
    eps: float = 1e-8
    clamp_eps: float = 1e-7
    scale: float = 1.0

    def __post_init__(self):
        if not self.alpha > 1:
            raise ValueError("alpha must exceed 1")
        if self.gamma < 0:
            raise ValueError("gamma must be non-negative")
        if not (self.eps > 0 and self.clamp_eps > 0):
            raise ValueError("eps and clamp_eps must be positive")


@dataclass
class LossResult:
    loss: float
    grad: np.ndarray


_AX = (-2, -1)


def _wmse(g, a, cfg):
    n = g.shape[-1] * g.shape[-2]
    w = 1.0 / (cfg.alpha - g)
    r = g - a
    return (w * r * r).sum(axis=_AX) / n, -2.0 / n * w * r


def _kld(g, a, cfg):
    q = a + cfg.eps
    # 0 ln 0 := 0
    safe_g = np.where(g > 0, g, 1.0)
    terms = np.where(g > 0, g * np.log(safe_g / q), 0.0)
    return terms.sum(axis=_AX), -g / q


def _clamp(a, cfg):
    lo, hi = cfg.clamp_eps, 1.0 - cfg.clamp_eps
    inside = (a >= lo) & (a <= hi)
    return np.clip(a, lo, hi), inside


def _focal(g, a, cfg):
    q, inside = _clamp(a, cfg)
    gam = cfg.gamma
    lq, l1q = np.log(q), np.log1p(-q)
    pos = (1 - q) ** gam
    neg = q ** gam
    loss = -(g * pos * lq + (1 - g) * neg * l1q).sum(axis=_AX)
    d_pos = -gam * (1 - q) ** (gam - 1) * lq + pos / q if gam else 1.0 / q
    d_neg = gam * q ** (gam - 1) * l1q - neg / (1 - q) if gam else -1.0 / (1 - q)
    grad = -(g * d_pos + (1 - g) * d_neg)
    return loss, np.where(inside, grad, 0.0)


def _dice(g, a, cfg):
    num = 2 * (g * a).sum(axis=_AX, keepdims=True) + cfg.eps
    den = g.sum(axis=_AX, keepdims=True) + a.sum(axis=_AX, keepdims=True) + cfg.eps
    loss = 1 - num / den
    grad = -(2 * g * den - num) / den ** 2
    return loss[..., 0, 0], grad


def _bce(g, a, cfg):
    q, inside = _clamp(a, cfg)
    loss = -(g * np.log(q) + (1 - g) * np.log1p(-q)).sum(axis=_AX)
    grad = -g / q + (1 - g) / (1 - q)
    return loss, np.where(inside, grad, 0.0)


def _dicebce(g, a, cfg):
    ld, gd = _dice(g, a, cfg)
    lb, gb = _bce(g, a, cfg)
    return cfg.lambda_dice * ld + cfg.lambda_bce * lb, cfg.lambda_dice * gd + cfg.lambda_bce * gb


KERNELS = {"wmse": _wmse, "kld": _kld, "focal": _focal, "dicebce": _dicebce}


def _pair(g, a):
    g = np.asarray(g, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    if g.shape != a.shape:
        raise ValueError(f"shape mismatch: {g.shape} vs {a.shape}")
    if g.ndim == 1:
        g, a = g[None, :], a[None, :]
    if g.ndim != 2:
        raise ValueError("losses take single 2-D maps (or flat vectors)")
    return g, a


def _in_unit(m, name):
    if np.any(m < -1e-9) or np.any(m > 1 + 1e-9):
        raise ValueError(f"{name} must lie in [0, 1]")


def _result(shape, loss, grad):
    return LossResult(float(loss), grad.reshape(shape))


def wmse(g, a, cfg=LossConfig()) -> LossResult:
    """Mean of (G - A)^2 weighted by 1 / (alpha - G)."""
    shape = np.shape(g)
    g, a = _pair(g, a)
    _in_unit(g, "gaze map")
    _in_unit(a, "attention map")
    return _result(shape, *_wmse(g, a, cfg))


def _check_dist(m, name):
    if np.any(m < 0) or abs(m.sum() - 1.0) > 1e-6:
        raise ValueError(f"{name} must be a probability distribution")


def kld_loss(g, a, cfg=LossConfig()) -> LossResult:
    """sum G ln(G / (A + eps)) over two probability maps."""
    shape = np.shape(g)
    g, a = _pair(g, a)
    _check_dist(g, "gaze distribution")
    _check_dist(a, "attention distribution")
    return _result(shape, *_kld(g, a, cfg))


def focal(g, a, cfg=LossConfig()) -> LossResult:
    shape = np.shape(g)
    g, a = _pair(g, a)
    return _result(shape, *_focal(g, a, cfg))


def dice_bce(g, a, cfg=LossConfig()) -> LossResult:
    shape = np.shape(g)
    g, a = _pair(g, a)
    return _result(shape, *_dicebce(g, a, cfg))


def dice_term(g, a, eps=1e-8) -> float:
    """Unweighted Dice loss, for reporting."""
    g, a = _pair(g, a)
    return float(_dice(g, a, LossConfig(eps=eps))[0])


LOSSES = {"wmse": wmse, "kld": kld_loss, "focal": focal, "dicebce": dice_bce}


def compute(kind, g, a, cfg=LossConfig()) -> LossResult:
    try:
        fn = LOSSES[kind]
    except KeyError:
        raise ValueError(f"unknown loss kind {kind!r}; choose from {KINDS}") from None
    return fn(g, a, cfg)


def combined(l_lm, attn, lambda1=1.0, lambda2=1.0, scale=1.0) -> float:
    """Joint objective lambda1 * L_lm + lambda2 * scale * L_attn."""
    attn_loss = attn.loss if isinstance(attn, LossResult) else float(attn)
    return lambda1 * l_lm + lambda2 * attn_loss * scale


def finite_diff_check(kind, g, a, cfg=LossConfig(), h=1e-5) -> float:
    """Max over pixels of |central difference - analytic| / (|analytic| + 1e-8)."""
    g, a = _pair(g, a)
    kernel = KERNELS[kind]
    _, grad = kernel(g, a, cfg)
    num = np.empty_like(a)
    flat = a.reshape(-1)
    for i in range(flat.size):
        up = flat.copy()
        dn = flat.copy()
        up[i] += h
        dn[i] -= h
        lu = kernel(g, up.reshape(a.shape), cfg)[0]
        ld = kernel(g, dn.reshape(a.shape), cfg)[0]
        num.reshape(-1)[i] = (lu - ld) / (2 * h)
    return float(np.max(np.abs(num - grad) / (np.abs(grad) + 1e-8)))


def random_instance(kind, seed, shape=(8, 8)):
    """A random (g, a) pair inside ``kind``'s valid domain, away from clamps."""
    rng = np.random.default_rng(seed)
    g = rng.uniform(0.0, 1.0, shape)
    a = rng.uniform(0.05, 0.95, shape)
    if kind == "kld":
        g = rng.uniform(0.1, 1.0, shape)
        g, a = g / g.sum(), a / a.sum()
    return g, a
